//! JSON record parsing with document order and duplicate keys preserved.
//!
//! `serde_json`'s value type folds duplicate mapping keys, so deserialization
//! goes through a custom visitor that keeps every entry as it appears.

use std::fmt;

use serde::de::{self, Deserializer, MapAccess, SeqAccess, Visitor};
use serde::Deserialize;

use crate::error::{Error, Result};

use super::{LogNode, LogTree, NodeId, NodeKind};

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Maximum node depth, root at 0. Must stay below the JSON
    /// deserializer's own recursion limit of 128.
    pub max_depth: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { max_depth: 32 }
    }
}

/// Raw parse shape: scalars carry their canonical text.
enum RawValue {
    Scalar(String),
    Object(Vec<(String, RawValue)>),
    Array(Vec<RawValue>),
}

impl<'de> Deserialize<'de> for RawValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct RawVisitor;

        impl<'de> Visitor<'de> for RawVisitor {
            type Value = RawValue;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("any JSON value")
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> std::result::Result<RawValue, E> {
                Ok(RawValue::Scalar(v.to_string()))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<RawValue, E> {
                Ok(RawValue::Scalar(v.to_string()))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<RawValue, E> {
                Ok(RawValue::Scalar(v.to_string()))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<RawValue, E> {
                Ok(RawValue::Scalar(v.to_string()))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<RawValue, E> {
                Ok(RawValue::Scalar(v.to_string()))
            }

            fn visit_string<E: de::Error>(self, v: String) -> std::result::Result<RawValue, E> {
                Ok(RawValue::Scalar(v))
            }

            fn visit_unit<E: de::Error>(self) -> std::result::Result<RawValue, E> {
                Ok(RawValue::Scalar("null".to_string()))
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<RawValue, A::Error> {
                let mut entries = Vec::new();
                while let Some((key, value)) = map.next_entry::<String, RawValue>()? {
                    entries.push((key, value));
                }
                Ok(RawValue::Object(entries))
            }

            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<RawValue, A::Error> {
                let mut items = Vec::new();
                while let Some(item) = seq.next_element::<RawValue>()? {
                    items.push(item);
                }
                Ok(RawValue::Array(items))
            }
        }

        deserializer.deserialize_any(RawVisitor)
    }
}

/// Parse one JSON value into a hierarchy tree with the default options.
pub fn parse_record(line: &str) -> Result<LogTree> {
    parse_record_with_options(line, &ParseOptions::default())
}

pub fn parse_record_with_options(line: &str, opts: &ParseOptions) -> Result<LogTree> {
    if opts.max_depth > 100 {
        return Err(Error::InvalidConfig(
            "max_depth must be at most 100".to_string(),
        ));
    }
    let raw: RawValue = serde_json::from_str(line).map_err(|e| {
        if e.to_string().contains("recursion limit") {
            // The deserializer bails out at 128 nested levels, which is
            // already past any permitted max_depth.
            Error::DepthExceeded {
                depth: 129,
                max: opts.max_depth,
            }
        } else {
            Error::MalformedRecord {
                line: e.line(),
                column: e.column(),
                reason: e.to_string(),
            }
        }
    })?;

    let mut builder = TreeBuilder {
        nodes: Vec::new(),
        max_depth: opts.max_depth,
    };
    let root_id = builder.push(String::new(), None)?;
    match raw {
        RawValue::Object(entries) => {
            builder.nodes[root_id.0].kind = NodeKind::Object;
            builder.attach_entries(root_id, entries, 1)?;
        }
        RawValue::Array(items) => {
            builder.nodes[root_id.0].kind = NodeKind::Array;
            builder.attach_items(root_id, items, 1)?;
        }
        RawValue::Scalar(text) => {
            // A bare scalar gets a synthetic "value" key under the root.
            builder.nodes[root_id.0].kind = NodeKind::Object;
            builder.attach(root_id, "value".to_string(), RawValue::Scalar(text), 1)?;
        }
    }
    Ok(LogTree {
        nodes: builder.nodes,
        root_id,
        record_id: String::new(),
    })
}

struct TreeBuilder {
    nodes: Vec<LogNode>,
    max_depth: usize,
}

impl TreeBuilder {
    fn push(&mut self, key_text: String, parent: Option<NodeId>) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        self.nodes.push(LogNode {
            id,
            key_text,
            value_text: None,
            kind: NodeKind::Leaf,
            children: Vec::new(),
            parent,
        });
        if let Some(p) = parent {
            self.nodes[p.0].children.push(id);
        }
        Ok(id)
    }

    fn attach(&mut self, parent: NodeId, key: String, value: RawValue, depth: usize) -> Result<()> {
        if depth > self.max_depth {
            return Err(Error::DepthExceeded {
                depth,
                max: self.max_depth,
            });
        }
        let id = self.push(key, Some(parent))?;
        match value {
            RawValue::Scalar(text) => {
                self.nodes[id.0].value_text = Some(text);
            }
            RawValue::Object(entries) if entries.is_empty() => {
                self.nodes[id.0].value_text = Some("{}".to_string());
            }
            RawValue::Array(items) if items.is_empty() => {
                self.nodes[id.0].value_text = Some("[]".to_string());
            }
            RawValue::Object(entries) => {
                self.nodes[id.0].kind = NodeKind::Object;
                self.attach_entries(id, entries, depth + 1)?;
            }
            RawValue::Array(items) => {
                self.nodes[id.0].kind = NodeKind::Array;
                self.attach_items(id, items, depth + 1)?;
            }
        }
        Ok(())
    }

    fn attach_entries(
        &mut self,
        parent: NodeId,
        entries: Vec<(String, RawValue)>,
        depth: usize,
    ) -> Result<()> {
        for (key, value) in entries {
            self.attach(parent, key, value, depth)?;
        }
        Ok(())
    }

    fn attach_items(&mut self, parent: NodeId, items: Vec<RawValue>, depth: usize) -> Result<()> {
        for (idx, item) in items.into_iter().enumerate() {
            self.attach(parent, idx.to_string(), item, depth)?;
        }
        Ok(())
    }
}
