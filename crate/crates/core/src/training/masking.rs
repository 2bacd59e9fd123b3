//! Deterministic token masking over a segment schedule.
//!
//! Maskable sites are the key and value tokens of segments (never the `:`
//! separators, never special ids), identified by their provenance. The same
//! provenance coordinates locate each masked token in the flat layout, so a
//! mask plan drawn once applies to both the hierarchical and the flat run.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hlogformer::PreparedRecord;
use crate::log_tree::segment::{SegmentPlan, TokenKind, TokenProvenance};
use crate::tokenizer::NUM_SPECIALS;

/// Masked sites in segment coordinates with their original ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    /// (step, offset) pairs in ascending order.
    pub positions: Vec<(usize, usize)>,
    pub targets: Vec<usize>,
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Apply this plan to the segment layout.
    pub fn hier_record(&self, plan: &SegmentPlan) -> PreparedRecord {
        PreparedRecord::hierarchical(plan, &self.positions, self.targets.clone())
    }

    /// Apply this plan to the flat layout by matching provenance.
    pub fn flat_record(
        &self,
        plan: &SegmentPlan,
        flat_ids: &[usize],
        flat_prov: &[TokenProvenance],
    ) -> Result<PreparedRecord> {
        let lookup: HashMap<TokenProvenance, usize> = flat_prov
            .iter()
            .enumerate()
            .map(|(pos, &p)| (p, pos))
            .collect();
        let mut flat_positions = Vec::with_capacity(self.positions.len());
        for &(step, offset) in &self.positions {
            let prov = plan.steps[step].provenance[offset];
            let pos = lookup.get(&prov).ok_or_else(|| Error::ShapeMismatch {
                context: "mask transfer to flat layout".into(),
                expected: "every maskable segment token present in the flat form".into(),
                actual: format!("missing provenance {prov:?}"),
            })?;
            flat_positions.push(*pos);
        }
        Ok(PreparedRecord::flat(
            flat_ids.to_vec(),
            &flat_positions,
            self.targets.clone(),
        ))
    }
}

/// All maskable sites of a plan in (step, offset) order.
pub fn maskable_positions(plan: &SegmentPlan) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (step, segment) in plan.steps.iter().enumerate() {
        for (offset, prov) in segment.provenance.iter().enumerate() {
            let kind_ok = matches!(prov.kind, TokenKind::Key | TokenKind::Value);
            if kind_ok && segment.token_ids[offset] >= NUM_SPECIALS {
                out.push((step, offset));
            }
        }
    }
    out
}

/// `apply_masking` with a self-contained seeded generator.
pub fn seeded_mask(plan: &SegmentPlan, rate: f64, seed: u64) -> Result<MaskPlan> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    apply_masking(plan, rate, &mut rng)
}

/// Draw `max(1, round(rate * maskable))` sites uniformly without
/// replacement.
pub fn apply_masking(plan: &SegmentPlan, rate: f64, rng: &mut impl Rng) -> Result<MaskPlan> {
    let candidates = maskable_positions(plan);
    if candidates.is_empty() {
        return Err(Error::NoMaskablePositions);
    }
    let count = ((rate * candidates.len() as f64).round() as usize)
        .max(1)
        .min(candidates.len());
    let mut chosen: Vec<usize> = rand::seq::index::sample(rng, candidates.len(), count).into_vec();
    chosen.sort_unstable();
    let positions: Vec<(usize, usize)> = chosen.iter().map(|&i| candidates[i]).collect();
    let targets = positions
        .iter()
        .map(|&(s, o)| plan.steps[s].token_ids[o])
        .collect();
    Ok(MaskPlan { positions, targets })
}
