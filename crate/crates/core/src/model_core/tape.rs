//! Eager reverse-mode autodiff over 2-D f64 tensors.
//!
//! A `Tape` records every operation as it executes; `backward` walks the
//! record in reverse and accumulates gradients for parameter nodes. Row
//! vectors are 1 x d matrices and scalars are 1 x 1, so a single node type
//! covers everything the encoder needs.
//!
//! Attention-specific ops (`scores`, `masked_softmax_rows`, `attn_context`)
//! iterate key positions in ascending index order restricted to the allowed
//! set, so excluded positions cannot perturb the arithmetic at real ones.

use ndarray::{Array2, Axis};

use super::kernels;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(usize),
    /// a @ b
    MatMul(Var, Var),
    /// a @ b^T
    MatMulNT(Var, Var),
    Add(Var, Var),
    /// matrix + row vector broadcast over rows
    AddRow(Var, Var),
    Scale(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    /// out[r] = a[idx[r]]; duplicate indices accumulate on backward
    SelectRows(Var, Vec<usize>),
    LayerNormRows {
        x: Var,
        scale: Var,
        shift: Var,
        eps: f64,
    },
    Gelu(Var),
    /// out[i][j] = scale * dot(q_i, k_j) for j in allowed, else 0
    Scores {
        q: Var,
        k: Var,
        scale: f64,
        allowed: Vec<usize>,
    },
    /// row-wise softmax over the allowed column set; 0 elsewhere
    MaskedSoftmaxRows {
        x: Var,
        allowed: Vec<usize>,
    },
    /// out[i] = sum over allowed j of p[i][j] * v[j]
    AttnContext {
        p: Var,
        v: Var,
        allowed: Vec<usize>,
    },
    MeanRows(Var),
    SumAll(Var),
    /// sum over rows of -log softmax(logits)[target]
    CrossEntropySum {
        logits: Var,
        targets: Vec<usize>,
    },
    /// Frobenius norm of (x - center), center treated as a constant
    NormDiff {
        x: Var,
        center: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(nodes),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.len(), 1, "scalar() on a non 1x1 node");
        value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// A leaf whose gradient is reported under `param_index`.
    pub fn param(&mut self, param_index: usize, value: Array2<f64>) -> Var {
        self.push(value, Op::Param(param_index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let value = self.value(a) + &self.value(row).row(0);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("compatible row blocks");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("compatible column blocks");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, from: usize, to: usize) -> Var {
        let value = self
            .value(a)
            .slice(ndarray::s![from..to, ..])
            .to_owned();
        self.push(value, Op::SliceRows(a, from, to))
    }

    pub fn slice_cols(&mut self, a: Var, from: usize, to: usize) -> Var {
        let value = self
            .value(a)
            .slice(ndarray::s![.., from..to])
            .to_owned();
        self.push(value, Op::SliceCols(a, from, to))
    }

    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((indices.len(), src.ncols()));
        for (r, &idx) in indices.iter().enumerate() {
            value.row_mut(r).assign(&src.row(idx));
        }
        self.push(value, Op::SelectRows(a, indices.to_vec()))
    }

    pub fn layer_norm_rows(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Var {
        let src = self.value(x);
        let scale_row = self.value(scale).row(0).to_owned();
        let shift_row = self.value(shift).row(0).to_owned();
        let mut value = Array2::zeros(src.raw_dim());
        for (i, row) in src.rows().into_iter().enumerate() {
            value
                .row_mut(i)
                .assign(&kernels::layer_norm(row, scale_row.view(), shift_row.view(), eps));
        }
        self.push(value, Op::LayerNormRows { x, scale, shift, eps })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|&v| kernels::gelu(v));
        self.push(value, Op::Gelu(a))
    }

    pub fn scores(&mut self, q: Var, k: Var, scale: f64, allowed: &[usize]) -> Var {
        let qv = self.value(q);
        let kv = self.value(k);
        let n = qv.nrows();
        let mut value = Array2::zeros((n, kv.nrows()));
        for i in 0..n {
            let qi = qv.row(i);
            for &j in allowed {
                value[[i, j]] = scale * qi.dot(&kv.row(j));
            }
        }
        self.push(
            value,
            Op::Scores {
                q,
                k,
                scale,
                allowed: allowed.to_vec(),
            },
        )
    }

    pub fn masked_softmax_rows(&mut self, x: Var, allowed: &[usize]) -> Var {
        let src = self.value(x);
        let mut value = Array2::zeros(src.raw_dim());
        for i in 0..src.nrows() {
            let mut max = f64::NEG_INFINITY;
            for &j in allowed {
                max = max.max(src[[i, j]]);
            }
            let mut sum = 0.0;
            for &j in allowed {
                let e = (src[[i, j]] - max).exp();
                value[[i, j]] = e;
                sum += e;
            }
            for &j in allowed {
                value[[i, j]] /= sum;
            }
        }
        self.push(
            value,
            Op::MaskedSoftmaxRows {
                x,
                allowed: allowed.to_vec(),
            },
        )
    }

    pub fn attn_context(&mut self, p: Var, v: Var, allowed: &[usize]) -> Var {
        let pv = self.value(p);
        let vv = self.value(v);
        let mut value = Array2::zeros((pv.nrows(), vv.ncols()));
        for i in 0..pv.nrows() {
            for &j in allowed {
                let w = pv[[i, j]];
                for c in 0..vv.ncols() {
                    value[[i, c]] += w * vv[[j, c]];
                }
            }
        }
        self.push(
            value,
            Op::AttnContext {
                p,
                v,
                allowed: allowed.to_vec(),
            },
        )
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let n = src.nrows() as f64;
        let value = src.sum_axis(Axis(0)).insert_axis(Axis(0)) / n;
        self.push(value, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        debug_assert_eq!(lv.nrows(), targets.len());
        let mut total = 0.0;
        for (row, &t) in lv.rows().into_iter().zip(targets) {
            total -= kernels::log_softmax_row(row)[t];
        }
        self.push(
            Array2::from_elem((1, 1), total),
            Op::CrossEntropySum {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    pub fn norm_diff(&mut self, x: Var, center: Array2<f64>) -> Var {
        let diff = self.value(x) - &center;
        let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(Array2::from_elem((1, 1), norm), Op::NormDiff { x, center })
    }

    /// Run reverse accumulation from `output` (a 1 x 1 scalar) and return
    /// per-parameter gradients, indexed as registered via `param`.
    pub fn backward(&self, output: Var, param_count: usize) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        let mut param_grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(param_count);
        param_grads.resize_with(param_count, || None);
        grads[output.0] = Some(Array2::ones((1, 1)));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(p) => accum(&mut param_grads[*p], &g),
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[b.0].value.t());
                    let db = self.nodes[a.0].value.t().dot(&g);
                    accum(&mut grads[a.0], &da);
                    accum(&mut grads[b.0], &db);
                }
                Op::MatMulNT(a, b) => {
                    let da = g.dot(&self.nodes[b.0].value);
                    let db = g.t().dot(&self.nodes[a.0].value);
                    accum(&mut grads[a.0], &da);
                    accum(&mut grads[b.0], &db);
                }
                Op::Add(a, b) => {
                    accum(&mut grads[a.0], &g);
                    accum(&mut grads[b.0], &g);
                }
                Op::AddRow(a, row) => {
                    accum(&mut grads[a.0], &g);
                    let row_grad = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accum(&mut grads[row.0], &row_grad);
                }
                Op::Scale(a, factor) => {
                    accum(&mut grads[a.0], &(&g * *factor));
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.nodes[p.0].value.nrows();
                        let piece = g.slice(ndarray::s![offset..offset + rows, ..]).to_owned();
                        accum(&mut grads[p.0], &piece);
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.nodes[p.0].value.ncols();
                        let piece = g.slice(ndarray::s![.., offset..offset + cols]).to_owned();
                        accum(&mut grads[p.0], &piece);
                        offset += cols;
                    }
                }
                Op::SliceRows(a, from, _to) => {
                    let src = &self.nodes[a.0].value;
                    let mut da = Array2::zeros(src.raw_dim());
                    da.slice_mut(ndarray::s![*from..*from + g.nrows(), ..])
                        .assign(&g);
                    accum(&mut grads[a.0], &da);
                }
                Op::SliceCols(a, from, _to) => {
                    let src = &self.nodes[a.0].value;
                    let mut da = Array2::zeros(src.raw_dim());
                    da.slice_mut(ndarray::s![.., *from..*from + g.ncols()])
                        .assign(&g);
                    accum(&mut grads[a.0], &da);
                }
                Op::SelectRows(a, indices) => {
                    let src = &self.nodes[a.0].value;
                    let mut da = Array2::zeros(src.raw_dim());
                    for (r, &idx) in indices.iter().enumerate() {
                        let mut row = da.row_mut(idx);
                        row += &g.row(r);
                    }
                    accum(&mut grads[a.0], &da);
                }
                Op::LayerNormRows { x, scale, shift, eps } => {
                    let xv = &self.nodes[x.0].value;
                    let scale_row = self.nodes[scale.0].value.row(0).to_owned();
                    let d = xv.ncols() as f64;
                    let mut dx = Array2::zeros(xv.raw_dim());
                    let mut dscale = Array2::zeros((1, xv.ncols()));
                    let mut dshift = Array2::zeros((1, xv.ncols()));
                    for (r, row) in xv.rows().into_iter().enumerate() {
                        let mean = row.sum() / d;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let grow = g.row(r);
                        // dy/dscale and dy/dshift accumulate over rows.
                        for c in 0..xv.ncols() {
                            dscale[[0, c]] += grow[c] * xhat[c];
                            dshift[[0, c]] += grow[c];
                        }
                        // dx = inv * (h - mean(h) - xhat * mean(h .* xhat))
                        // where h = scale .* g.
                        let h: Vec<f64> =
                            (0..xv.ncols()).map(|c| scale_row[c] * grow[c]).collect();
                        let h_mean = h.iter().sum::<f64>() / d;
                        let hx_mean = h
                            .iter()
                            .zip(&xhat)
                            .map(|(hv, xv)| hv * xv)
                            .sum::<f64>()
                            / d;
                        for c in 0..xv.ncols() {
                            dx[[r, c]] = inv * (h[c] - h_mean - xhat[c] * hx_mean);
                        }
                    }
                    accum(&mut grads[x.0], &dx);
                    accum(&mut grads[scale.0], &dscale);
                    accum(&mut grads[shift.0], &dshift);
                }
                Op::Gelu(a) => {
                    let da = self.nodes[a.0].value.map(|&v| kernels::gelu_grad(v)) * &g;
                    accum(&mut grads[a.0], &da);
                }
                Op::Scores { q, k, scale, allowed } => {
                    let qv = &self.nodes[q.0].value;
                    let kv = &self.nodes[k.0].value;
                    let mut dq = Array2::zeros(qv.raw_dim());
                    let mut dk = Array2::zeros(kv.raw_dim());
                    for i in 0..qv.nrows() {
                        for &j in allowed {
                            let gij = *scale * g[[i, j]];
                            if gij != 0.0 {
                                for c in 0..qv.ncols() {
                                    dq[[i, c]] += gij * kv[[j, c]];
                                    dk[[j, c]] += gij * qv[[i, c]];
                                }
                            }
                        }
                    }
                    accum(&mut grads[q.0], &dq);
                    accum(&mut grads[k.0], &dk);
                }
                Op::MaskedSoftmaxRows { x, allowed } => {
                    let pv = &self.nodes[i].value;
                    let mut dx = Array2::zeros(pv.raw_dim());
                    for r in 0..pv.nrows() {
                        let mut dot = 0.0;
                        for &j in allowed {
                            dot += g[[r, j]] * pv[[r, j]];
                        }
                        for &j in allowed {
                            dx[[r, j]] = pv[[r, j]] * (g[[r, j]] - dot);
                        }
                    }
                    accum(&mut grads[x.0], &dx);
                }
                Op::AttnContext { p, v, allowed } => {
                    let pv = &self.nodes[p.0].value;
                    let vv = &self.nodes[v.0].value;
                    let mut dp = Array2::zeros(pv.raw_dim());
                    let mut dv = Array2::zeros(vv.raw_dim());
                    for i in 0..pv.nrows() {
                        for &j in allowed {
                            let mut dot = 0.0;
                            for c in 0..vv.ncols() {
                                dot += g[[i, c]] * vv[[j, c]];
                                dv[[j, c]] += pv[[i, j]] * g[[i, c]];
                            }
                            dp[[i, j]] = dot;
                        }
                    }
                    accum(&mut grads[p.0], &dp);
                    accum(&mut grads[v.0], &dv);
                }
                Op::MeanRows(a) => {
                    let rows = self.nodes[a.0].value.nrows();
                    let per_row = &g / rows as f64;
                    let mut da = Array2::zeros(self.nodes[a.0].value.raw_dim());
                    for mut row in da.rows_mut() {
                        row.assign(&per_row.row(0));
                    }
                    accum(&mut grads[a.0], &da);
                }
                Op::SumAll(a) => {
                    let da = Array2::from_elem(self.nodes[a.0].value.raw_dim(), g[[0, 0]]);
                    accum(&mut grads[a.0], &da);
                }
                Op::CrossEntropySum { logits, targets } => {
                    let lv = &self.nodes[logits.0].value;
                    let gscalar = g[[0, 0]];
                    let mut dl = kernels::softmax_rows(lv);
                    for (r, &t) in targets.iter().enumerate() {
                        dl[[r, t]] -= 1.0;
                    }
                    dl *= gscalar;
                    accum(&mut grads[logits.0], &dl);
                }
                Op::NormDiff { x, center } => {
                    let norm = self.nodes[i].value[[0, 0]];
                    if norm > 0.0 {
                        let diff = &self.nodes[x.0].value - center;
                        let dx = diff * (g[[0, 0]] / norm);
                        accum(&mut grads[x.0], &dx);
                    }
                    // At the exact center the subgradient 0 is used.
                }
            }
        }
        param_grads
    }
}

fn accum(slot: &mut Option<Array2<f64>>, delta: &Array2<f64>) {
    match slot {
        Some(existing) => *existing += delta,
        None => *slot = Some(delta.clone()),
    }
}
