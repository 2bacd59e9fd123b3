//! Segment schedules and flat linearization.
//!
//! Each internal node owns one segment: the concatenated text of its direct
//! children, where a leaf child contributes `key : value` and an internal
//! child contributes only its header `key :` (the subtree's content travels
//! through the summary chain instead). Segments are processed children
//! before parents, realized as the reverse of the pre-order node list.
//! Segments longer than `max_segment_len` are split into consecutive chunks.

use crate::error::{Error, Result};
use crate::tokenizer::{split_tokens, Vocab};

use super::{LogTree, NodeId};

/// Role of a token within its originating node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    /// A token of the node's key text.
    Key,
    /// The `:` separating key from value (or ending an internal header).
    Sep,
    /// A token of a leaf's value text.
    Value,
    /// `{` opening an internal node in the flat form.
    Open,
    /// `}` closing an internal node in the flat form.
    Close,
}

/// Where a token came from: the node that owns its text, its role, and its
/// position within that role's token list. The same coordinates identify
/// the token in both the segmented and the flat layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenProvenance {
    pub node: NodeId,
    pub kind: TokenKind,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub owner_node: NodeId,
    /// Ordinal among this owner's chunks (0 when the segment fit whole).
    pub chunk_index: usize,
    pub token_ids: Vec<usize>,
    pub provenance: Vec<TokenProvenance>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPlan {
    /// Processing steps in forward (children-before-parent) order.
    pub steps: Vec<Segment>,
    /// Count of tokens contributed by leaves (key, separator, and value).
    pub total_leaf_tokens: usize,
    /// Segment count before chunking: one per internal node.
    pub num_segments: usize,
}

impl SegmentPlan {
    pub fn total_tokens(&self) -> usize {
        self.steps.iter().map(Segment::len).sum()
    }

    pub fn max_segment_len(&self) -> usize {
        self.steps.iter().map(Segment::len).max().unwrap_or(0)
    }
}

fn key_tokens(tree: &LogTree, id: NodeId) -> Vec<String> {
    split_tokens(&tree.node(id).key_text)
}

fn value_tokens(tree: &LogTree, id: NodeId) -> Vec<String> {
    split_tokens(tree.node(id).value_text.as_deref().unwrap_or_default())
}

fn push_keyed(
    tree: &LogTree,
    child: NodeId,
    with_value: bool,
    tokens: &mut Vec<String>,
    prov: &mut Vec<TokenProvenance>,
) {
    for (i, tok) in key_tokens(tree, child).into_iter().enumerate() {
        tokens.push(tok);
        prov.push(TokenProvenance {
            node: child,
            kind: TokenKind::Key,
            index: i,
        });
    }
    tokens.push(":".to_string());
    prov.push(TokenProvenance {
        node: child,
        kind: TokenKind::Sep,
        index: 0,
    });
    if with_value {
        for (i, tok) in value_tokens(tree, child).into_iter().enumerate() {
            tokens.push(tok);
            prov.push(TokenProvenance {
                node: child,
                kind: TokenKind::Value,
                index: i,
            });
        }
    }
}

/// Build the processing schedule for one record.
pub fn build_segments(tree: &LogTree, vocab: &Vocab, max_segment_len: usize) -> Result<SegmentPlan> {
    if max_segment_len < 4 {
        return Err(Error::InvalidConfig(format!(
            "max_segment_len must be at least 4, got {max_segment_len}"
        )));
    }
    if tree.leaf_count() == 0 {
        return Err(Error::EmptyTree);
    }

    let mut order = tree.internal_nodes();
    order.reverse();

    let mut steps = Vec::new();
    let mut total_leaf_tokens = 0usize;
    for owner in &order {
        let mut tokens: Vec<String> = Vec::new();
        let mut prov: Vec<TokenProvenance> = Vec::new();
        for &child in &tree.node(*owner).children {
            let is_leaf = tree.node(child).is_leaf();
            push_keyed(tree, child, is_leaf, &mut tokens, &mut prov);
        }
        total_leaf_tokens += prov
            .iter()
            .filter(|p| tree.node(p.node).is_leaf())
            .count();
        let ids: Vec<usize> = tokens.iter().map(|t| vocab.lookup(t)).collect();
        for (chunk_index, (id_chunk, prov_chunk)) in ids
            .chunks(max_segment_len)
            .zip(prov.chunks(max_segment_len))
            .enumerate()
        {
            steps.push(Segment {
                owner_node: *owner,
                chunk_index,
                token_ids: id_chunk.to_vec(),
                provenance: prov_chunk.to_vec(),
            });
        }
    }
    Ok(SegmentPlan {
        steps,
        total_leaf_tokens,
        num_segments: order.len(),
    })
}

/// Flat serialization of the record in document order: `key : value` for
/// leaves, `key { ... }` for internal nodes, root children unwrapped.
pub fn linearize(tree: &LogTree, vocab: &Vocab) -> Result<Vec<usize>> {
    linearize_with_provenance(tree, vocab).map(|(ids, _)| ids)
}

pub fn linearize_with_provenance(
    tree: &LogTree,
    vocab: &Vocab,
) -> Result<(Vec<usize>, Vec<TokenProvenance>)> {
    let tokens = flat_tokens(tree)?;
    let ids = tokens.iter().map(|(t, _)| vocab.lookup(t)).collect();
    let prov = tokens.into_iter().map(|(_, p)| p).collect();
    Ok((ids, prov))
}

/// The flat token strings of a record, used both for vocabulary building
/// and as the baseline input sequence.
pub fn flat_text(tree: &LogTree) -> Result<String> {
    let tokens = flat_tokens(tree)?;
    Ok(tokens
        .iter()
        .map(|(t, _)| t.as_str())
        .collect::<Vec<_>>()
        .join(" "))
}

fn flat_tokens(tree: &LogTree) -> Result<Vec<(String, TokenProvenance)>> {
    if tree.leaf_count() == 0 {
        return Err(Error::EmptyTree);
    }
    let mut out = Vec::new();
    for &child in &tree.root().children {
        flatten_into(tree, child, &mut out);
    }
    Ok(out)
}

fn flatten_into(tree: &LogTree, id: NodeId, out: &mut Vec<(String, TokenProvenance)>) {
    let node = tree.node(id);
    for (i, tok) in key_tokens(tree, id).into_iter().enumerate() {
        out.push((
            tok,
            TokenProvenance {
                node: id,
                kind: TokenKind::Key,
                index: i,
            },
        ));
    }
    if node.is_leaf() {
        out.push((
            ":".to_string(),
            TokenProvenance {
                node: id,
                kind: TokenKind::Sep,
                index: 0,
            },
        ));
        for (i, tok) in value_tokens(tree, id).into_iter().enumerate() {
            out.push((
                tok,
                TokenProvenance {
                    node: id,
                    kind: TokenKind::Value,
                    index: i,
                },
            ));
        }
    } else {
        out.push((
            "{".to_string(),
            TokenProvenance {
                node: id,
                kind: TokenKind::Open,
                index: 0,
            },
        ));
        for &child in &node.children {
            flatten_into(tree, child, out);
        }
        out.push((
            "}".to_string(),
            TokenProvenance {
                node: id,
                kind: TokenKind::Close,
                index: 0,
            },
        ));
    }
}

/// Total attention cost of a segment schedule: each step attends over a
/// window of `summary_slots + segment + summary_slots` positions, costing
/// the square of the window length.
pub fn plan_attention_cost(plan: &SegmentPlan, summary_slots: usize) -> u64 {
    plan.steps
        .iter()
        .map(|s| {
            let w = (2 * summary_slots + s.len()) as u64;
            w * w
        })
        .sum()
}

/// Largest attention window any step materializes.
pub fn plan_max_window(plan: &SegmentPlan, summary_slots: usize) -> usize {
    plan.steps
        .iter()
        .map(|s| 2 * summary_slots + s.len())
        .max()
        .unwrap_or(0)
}

/// Attention cost of full attention over a sequence processed in windows
/// of at most `max_window` tokens: the sum of squared window lengths.
pub fn flat_attention_cost(seq_len: usize, max_window: usize) -> u64 {
    assert!(max_window > 0, "max_window must be positive");
    let full = (seq_len / max_window) as u64;
    let w = max_window as u64;
    let rem = (seq_len % max_window) as u64;
    full * w * w + rem * rem
}
