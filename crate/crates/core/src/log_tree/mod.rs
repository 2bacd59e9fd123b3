//! Hierarchy trees for dictionary-like log records.
//!
//! One record is one tree: mapping keys and array slots become nodes,
//! scalars become leaves. Keys inside a single mapping may repeat; repeats
//! are kept as distinct siblings in document order.

mod parse;
pub mod segment;

use std::path::Path;

use crate::error::{Error, Result};

pub use parse::{parse_record, parse_record_with_options, ParseOptions};

/// Index of a node within its tree's arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Object,
    Array,
    Leaf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogNode {
    pub id: NodeId,
    /// Mapping key or decimal array index; empty for the root.
    pub key_text: String,
    /// Present iff this node is a leaf.
    pub value_text: Option<String>,
    pub kind: NodeKind,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
}

impl LogNode {
    pub fn is_leaf(&self) -> bool {
        self.kind == NodeKind::Leaf
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogTree {
    pub nodes: Vec<LogNode>,
    pub root_id: NodeId,
    pub record_id: String,
}

impl LogTree {
    pub fn node(&self, id: NodeId) -> &LogNode {
        &self.nodes[id.0]
    }

    pub fn root(&self) -> &LogNode {
        self.node(self.root_id)
    }

    pub fn with_record_id(mut self, record_id: impl Into<String>) -> Self {
        self.record_id = record_id.into();
        self
    }

    /// Pre-order traversal: each node before its children, children in
    /// document order.
    pub fn dfs_order(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root_id];
        while let Some(id) = stack.pop() {
            order.push(id);
            for &child in self.node(id).children.iter().rev() {
                stack.push(child);
            }
        }
        order
    }

    /// Internal nodes (nodes with children) in pre-order.
    pub fn internal_nodes(&self) -> Vec<NodeId> {
        self.dfs_order()
            .into_iter()
            .filter(|&id| !self.node(id).children.is_empty())
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Leaves in document (pre-order) order.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.dfs_order()
            .into_iter()
            .filter(|&id| self.node(id).is_leaf())
            .collect()
    }

    /// Check the arena invariants: single root, consistent parent links,
    /// every node reachable exactly once, leaves carry values and internal
    /// nodes don't.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Error::ShapeMismatch {
            context: "tree validation".into(),
            expected: "well-formed tree".into(),
            actual: msg,
        };
        if self.root().parent.is_some() {
            return Err(fail("root has a parent".into()));
        }
        let order = self.dfs_order();
        if order.len() != self.nodes.len() {
            return Err(fail(format!(
                "{} nodes reachable from root, arena has {}",
                order.len(),
                self.nodes.len()
            )));
        }
        let mut seen = vec![false; self.nodes.len()];
        for id in order {
            if seen[id.0] {
                return Err(fail(format!("node {} visited twice", id.0)));
            }
            seen[id.0] = true;
            let node = self.node(id);
            if node.id != id {
                return Err(fail(format!("node {} has mismatched id", id.0)));
            }
            for &child in &node.children {
                if self.node(child).parent != Some(id) {
                    return Err(fail(format!("child {} has wrong parent", child.0)));
                }
            }
            match node.kind {
                NodeKind::Leaf => {
                    if node.value_text.is_none() || !node.children.is_empty() {
                        return Err(fail(format!("leaf {} malformed", id.0)));
                    }
                }
                NodeKind::Object | NodeKind::Array => {
                    if node.value_text.is_some() {
                        return Err(fail(format!("internal node {} has a value", id.0)));
                    }
                    if node.children.is_empty() && id != self.root_id {
                        return Err(fail(format!("internal node {} has no children", id.0)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Compact JSON rendering. Leaf values are emitted as JSON strings, so
    /// re-parsing reproduces the same tree (keys, values, sibling order).
    pub fn to_json_string(&self) -> String {
        let mut out = String::new();
        self.write_json(self.root_id, &mut out);
        out
    }

    fn write_json(&self, id: NodeId, out: &mut String) {
        let node = self.node(id);
        match node.kind {
            NodeKind::Leaf => {
                let quoted =
                    serde_json::to_string(node.value_text.as_deref().unwrap_or_default())
                        .expect("string serialization");
                out.push_str(&quoted);
            }
            NodeKind::Object => {
                out.push('{');
                for (i, &child) in node.children.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let key = serde_json::to_string(&self.node(child).key_text)
                        .expect("string serialization");
                    out.push_str(&key);
                    out.push(':');
                    self.write_json(child, out);
                }
                out.push('}');
            }
            NodeKind::Array => {
                out.push('[');
                for (i, &child) in node.children.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    self.write_json(child, out);
                }
                out.push(']');
            }
        }
    }
}

/// Read a newline-delimited corpus: one JSON value per line, UTF-8.
/// Lines starting with `#` and blank lines are skipped. Record ids are
/// derived from 1-based physical line numbers.
pub fn load_corpus(path: &Path) -> Result<Vec<LogTree>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading corpus from {}", path.display()), e))?;
    parse_corpus(&text)
}

/// Parse corpus text already in memory; same line rules as `load_corpus`.
pub fn parse_corpus(text: &str) -> Result<Vec<LogTree>> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tree = parse_record(trimmed)
            .map_err(|e| match e {
                Error::MalformedRecord { column, reason, .. } => Error::MalformedRecord {
                    line: lineno,
                    column,
                    reason,
                },
                other => other,
            })?
            .with_record_id(format!("L{lineno:06}"));
        records.push(tree);
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys_of(tree: &LogTree, id: NodeId) -> Vec<&str> {
        tree.node(id)
            .children
            .iter()
            .map(|&c| tree.node(c).key_text.as_str())
            .collect()
    }

    #[test]
    fn nested_mapping_builds_expected_tree() {
        let tree = parse_record(r#"{"a": 1, "b": {"c": 2, "d": 3}}"#).unwrap();
        tree.validate().unwrap();
        assert_eq!(keys_of(&tree, tree.root_id), vec!["a", "b"]);
        let a = tree.node(tree.root().children[0]);
        assert_eq!(a.value_text.as_deref(), Some("1"));
        let b = tree.node(tree.root().children[1]);
        assert_eq!(keys_of(&tree, b.id), vec!["c", "d"]);
        let d = tree.node(b.children[1]);
        assert_eq!(d.value_text.as_deref(), Some("3"));
    }

    #[test]
    fn top_level_scalar_is_wrapped() {
        let tree = parse_record("7").unwrap();
        tree.validate().unwrap();
        assert_eq!(tree.root().children.len(), 1);
        let leaf = tree.node(tree.root().children[0]);
        assert_eq!(leaf.key_text, "value");
        assert_eq!(leaf.value_text.as_deref(), Some("7"));
    }

    // Array elements become children keyed by their decimal index.
    // Expected structure hand-traced and cross-checked against the
    // recursive reference walker in tests/segmentation_oracle.rs.
    #[test]
    fn array_elements_use_decimal_index_keys() {
        let tree = parse_record(r#"{"a": [10, 20]}"#).unwrap();
        tree.validate().unwrap();
        let a = tree.node(tree.root().children[0]);
        assert_eq!(a.kind, NodeKind::Array);
        assert_eq!(keys_of(&tree, a.id), vec!["0", "1"]);
        let values: Vec<_> = a
            .children
            .iter()
            .map(|&c| tree.node(c).value_text.clone().unwrap())
            .collect();
        assert_eq!(values, vec!["10", "20"]);
    }

    #[test]
    fn duplicate_keys_become_sibling_nodes() {
        let tree = parse_record(r#"{"k": 1, "k": 2}"#).unwrap();
        tree.validate().unwrap();
        assert_eq!(keys_of(&tree, tree.root_id), vec!["k", "k"]);
        let values: Vec<_> = tree
            .root()
            .children
            .iter()
            .map(|&c| tree.node(c).value_text.clone().unwrap())
            .collect();
        assert_eq!(values, vec!["1", "2"]);
    }

    #[test]
    fn malformed_record_reports_position() {
        let err = parse_record(r#"{"a": }"#).unwrap_err();
        match err {
            Error::MalformedRecord { line, column, .. } => {
                assert_eq!(line, 1);
                assert!(column > 0);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn depth_limit_is_enforced() {
        let mut doc = String::new();
        for _ in 0..40 {
            doc.push_str(r#"{"x":"#);
        }
        doc.push('1');
        for _ in 0..40 {
            doc.push('}');
        }
        let err = parse_record(&doc).unwrap_err();
        assert!(matches!(err, Error::DepthExceeded { max: 32, .. }));
        // A relaxed limit accepts the same document.
        let opts = ParseOptions { max_depth: 64 };
        parse_record_with_options(&doc, &opts).unwrap();
    }

    #[test]
    fn dfs_order_is_preorder() {
        let tree = parse_record(r#"{"a": 1, "b": {"c": 2}}"#).unwrap();
        let order = tree.dfs_order();
        let keys: Vec<_> = order
            .iter()
            .map(|&id| tree.node(id).key_text.as_str())
            .collect();
        assert_eq!(keys, vec!["", "a", "b", "c"]);
    }

    #[test]
    fn dfs_order_single_leaf() {
        let tree = parse_record(r#"{"a": 1}"#).unwrap();
        assert_eq!(tree.dfs_order().len(), 2);
    }

    #[test]
    fn dfs_order_deep_chain() {
        let tree = parse_record(r#"{"x": {"y": {"z": 1}}}"#).unwrap();
        let keys: Vec<_> = tree
            .dfs_order()
            .iter()
            .map(|&id| tree.node(id).key_text.as_str())
            .collect();
        assert_eq!(keys, vec!["", "x", "y", "z"]);
    }

    #[test]
    fn serialization_round_trips_structure() {
        let inputs = [
            r#"{"a": 1, "b": {"c": 2, "d": 3}}"#,
            r#"{"a": [10, 20], "a": "dup"}"#,
            r#"{"weird key": "with \"quotes\"", "n": null, "t": true}"#,
            "7",
            r#"{"empty": {}, "earr": []}"#,
        ];
        for input in inputs {
            let tree = parse_record(input).unwrap();
            let json = tree.to_json_string();
            let reparsed = parse_record(&json).unwrap();
            assert_eq!(tree.nodes, reparsed.nodes, "round trip of {input}");
        }
    }

    #[test]
    fn empty_container_values_become_marker_leaves() {
        let tree = parse_record(r#"{"empty": {}, "earr": []}"#).unwrap();
        tree.validate().unwrap();
        let empty = tree.node(tree.root().children[0]);
        assert_eq!(empty.value_text.as_deref(), Some("{}"));
        let earr = tree.node(tree.root().children[1]);
        assert_eq!(earr.value_text.as_deref(), Some("[]"));
    }

    #[test]
    fn top_level_empty_mapping_has_no_leaves() {
        let tree = parse_record("{}").unwrap();
        assert_eq!(tree.leaf_count(), 0);
        assert!(tree.root().children.is_empty());
    }

    #[test]
    fn corpus_skips_comments_and_blank_lines() {
        let text = "# header\n{\"a\": 1}\n\n{\"b\": 2}\n";
        let records = parse_corpus(text).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].record_id, "L000002");
        assert_eq!(records[1].record_id, "L000004");
    }

    #[test]
    fn corpus_error_reports_file_line() {
        let text = "{\"a\": 1}\nnot json\n";
        match parse_corpus(text).unwrap_err() {
            Error::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }
}
