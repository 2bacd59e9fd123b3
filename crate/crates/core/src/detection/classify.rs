//! Linear probe over record summaries for supervised tasks.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::model_core::adam::{Adam, AdamConfig};
use crate::model_core::kernels;
use crate::model_core::tape::Tape;
use crate::model_core::Tensor;
use crate::training::SplitIndices;

#[derive(Debug, Clone)]
pub struct ClassifyConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            epochs: 200,
            adam: AdamConfig {
                lr: 0.05,
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ClassifyReport {
    pub classes: Vec<String>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_records: usize,
    pub test_records: usize,
}

/// Train a softmax head on the train split and report test accuracy.
/// Handles binary and multi-class labels.
pub fn classify_supervised(
    embeddings: &Array2<f64>,
    labels: &[String],
    split: &SplitIndices,
    config: &ClassifyConfig,
) -> Result<ClassifyReport> {
    assert_eq!(embeddings.nrows(), labels.len(), "one label per embedding");
    let mut class_ids: BTreeMap<&str, usize> = BTreeMap::new();
    for idx in &split.train {
        let next = class_ids.len();
        class_ids.entry(labels[*idx].as_str()).or_insert(next);
    }
    if class_ids.len() < 2 {
        return Err(Error::SingleClassSplit);
    }
    let classes: Vec<String> = {
        let mut by_id: Vec<(&str, usize)> = class_ids.iter().map(|(k, &v)| (*k, v)).collect();
        by_id.sort_by_key(|&(_, id)| id);
        by_id.into_iter().map(|(k, _)| k.to_string()).collect()
    };
    let n_classes = class_ids.len();
    let d = embeddings.ncols();

    let gather = |subset: &[usize]| -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((subset.len(), d));
        let mut y = Vec::with_capacity(subset.len());
        for (r, &idx) in subset.iter().enumerate() {
            x.row_mut(r).assign(&embeddings.row(idx));
            y.push(class_ids.get(labels[idx].as_str()).copied());
        }
        (x, y.into_iter().map(|c| c.unwrap_or(usize::MAX)).collect())
    };
    let (train_x, train_y) = gather(&split.train);

    let mut head = vec![
        Tensor {
            name: "head.weight".into(),
            value: Array2::zeros((d, n_classes)),
        },
        Tensor {
            name: "head.bias".into(),
            value: Array2::zeros((1, n_classes)),
        },
    ];
    let mut adam = Adam::new(config.adam, &head);
    for _ in 0..config.epochs {
        let mut tape = Tape::new();
        let w = tape.param(0, head[0].value.clone());
        let b = tape.param(1, head[1].value.clone());
        let x = tape.constant(train_x.clone());
        let scores = tape.matmul(x, w);
        let logits = tape.add_row(scores, b);
        let ce = tape.cross_entropy_sum(logits, &train_y);
        let objective = tape.scale(ce, 1.0 / train_y.len() as f64);
        let sparse = tape.backward(objective, 2);
        let grads: Vec<Array2<f64>> = sparse
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Array2::zeros(head[i].value.raw_dim())))
            .collect();
        adam.step(&mut head, &grads)?;
    }

    let accuracy = |subset: &[usize]| -> f64 {
        if subset.is_empty() {
            return 0.0;
        }
        let mut correct = 0usize;
        let mut counted = 0usize;
        for &idx in subset {
            // Test labels outside the training classes count as errors.
            let truth = class_ids.get(labels[idx].as_str());
            let x = embeddings.row(idx).insert_axis(Axis(0)).to_owned();
            let logits = x.dot(&head[0].value) + &head[1].value.row(0);
            let probs = kernels::softmax_rows(&logits);
            let predicted = probs
                .row(0)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            counted += 1;
            if truth == Some(&predicted) {
                correct += 1;
            }
        }
        correct as f64 / counted as f64
    };

    Ok(ClassifyReport {
        classes,
        train_accuracy: accuracy(&split.train),
        test_accuracy: accuracy(&split.test),
        train_records: split.train.len(),
        test_records: split.test.len(),
    })
}
