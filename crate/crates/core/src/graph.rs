//! Scene graphs, vocabularies and the dummy-node augmentation.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::Relation;

pub const DUMMY_CLASS: &str = "__image__";
pub const DUMMY_RELATION: &str = "__in_image__";

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph is already dummy-augmented")]
    AlreadyAugmented,
    #[error("graph is not dummy-augmented")]
    NotAugmented,
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
    #[error("parse error at {position}: {message}")]
    Parse { position: String, message: String },
}

/// Object classes and relation names. The dummy class and dummy relation are
/// always the last entry of their list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocab {
    pub classes: Vec<String>,
    pub relations: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from real class names; the relation list is the six
    /// geometric relations followed by the dummy relation.
    pub fn new<S: AsRef<str>>(classes: &[S]) -> Result<Self, GraphError> {
        let mut class_names: Vec<String> = classes.iter().map(|c| c.as_ref().to_string()).collect();
        class_names.push(DUMMY_CLASS.to_string());
        let mut relations: Vec<String> = Relation::ALL.iter().map(|r| r.name().to_string()).collect();
        relations.push(DUMMY_RELATION.to_string());
        let vocab = Vocab { classes: class_names, relations };
        vocab.check()?;
        Ok(vocab)
    }

    pub fn check(&self) -> Result<(), GraphError> {
        for (kind, list, dummy) in [
            ("class", &self.classes, DUMMY_CLASS),
            ("relation", &self.relations, DUMMY_RELATION),
        ] {
            let mut seen = std::collections::HashSet::new();
            for name in list {
                if !seen.insert(name.as_str()) {
                    return Err(GraphError::Vocab(format!("duplicate {kind} name {name:?}")));
                }
            }
            if list.last().map(String::as_str) != Some(dummy) {
                return Err(GraphError::Vocab(format!("{kind} list must end with {dummy:?}")));
            }
        }
        if self.classes.len() < 2 {
            return Err(GraphError::Vocab("need at least one real class".into()));
        }
        for rel in Relation::ALL {
            if !self.relations.iter().any(|r| r == rel.name()) {
                return Err(GraphError::Vocab(format!("missing relation {:?}", rel.name())));
            }
        }
        if self.relations.len() != Relation::ALL.len() + 1 {
            return Err(GraphError::Vocab("only the six geometric relations are supported".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Number of real (non-dummy) classes.
    pub fn num_real_classes(&self) -> usize {
        self.classes.len() - 1
    }

    pub fn dummy_class(&self) -> usize {
        self.classes.len() - 1
    }

    pub fn dummy_relation(&self) -> usize {
        self.relations.len() - 1
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn relation_index(&self, rel: Relation) -> usize {
        self.relations
            .iter()
            .position(|r| r == rel.name())
            .expect("checked vocab contains every geometric relation")
    }

    /// Maps a relation index back to its geometric relation; `None` for the
    /// dummy relation or out-of-range indices.
    pub fn relation_of(&self, index: usize) -> Option<Relation> {
        self.relations.get(index).and_then(|name| Relation::from_name(name))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let vocab: Vocab = serde_json::from_str(text).map_err(|e| GraphError::Parse {
            position: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        vocab.check()?;
        Ok(vocab)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub rel: usize,
    pub dst: usize,
}

impl Edge {
    pub fn new(src: usize, rel: usize, dst: usize) -> Self {
        Edge { src, rel, dst }
    }
}

/// A directed graph of object nodes with typed edges. Node ids are dense
/// `0..n`; `classes[id]` is the class of node `id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    pub classes: Vec<usize>,
    pub edges: Vec<Edge>,
    pub dummy: bool,
}

impl SceneGraph {
    pub fn new(classes: Vec<usize>, edges: Vec<Edge>) -> Self {
        SceneGraph { classes, edges, dummy: false }
    }

    pub fn num_nodes(&self) -> usize {
        self.classes.len()
    }

    /// Number of real (non-dummy) nodes.
    pub fn num_objects(&self) -> usize {
        if self.dummy {
            self.classes.len() - 1
        } else {
            self.classes.len()
        }
    }

    /// Edges between real nodes.
    pub fn real_edges(&self, vocab: &Vocab) -> impl Iterator<Item = &Edge> {
        let dummy_rel = vocab.dummy_relation();
        self.edges.iter().filter(move |e| e.rel != dummy_rel)
    }

    /// Adds the dummy node (id `n`) with one dummy-relation edge to every real node.
    pub fn augment_with_dummy(&self, vocab: &Vocab) -> Result<SceneGraph, GraphError> {
        if self.dummy {
            return Err(GraphError::AlreadyAugmented);
        }
        let n = self.classes.len();
        let mut out = self.clone();
        out.classes.push(vocab.dummy_class());
        out.edges
            .extend((0..n).map(|i| Edge::new(n, vocab.dummy_relation(), i)));
        out.dummy = true;
        Ok(out)
    }

    /// Lists every violated invariant; empty iff the graph is well formed.
    pub fn validate(&self, vocab: &Vocab) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.classes.len();
        let dummy_class = vocab.dummy_class();
        let dummy_rel = vocab.dummy_relation();
        for (id, &class) in self.classes.iter().enumerate() {
            if class >= vocab.num_classes() {
                out.push(format!("node {id}: class index {class} out of range"));
            }
            let is_dummy_slot = self.dummy && id + 1 == n;
            if class == dummy_class && !is_dummy_slot {
                out.push(format!("node {id}: dummy class on a real node"));
            }
            if is_dummy_slot && class != dummy_class {
                out.push(format!("node {id}: dummy node has class {class}"));
            }
        }
        let real = self.num_objects();
        if real == 0 {
            out.push("graph has no real nodes".into());
        }
        let mut dummy_targets = vec![0usize; n];
        for (k, e) in self.edges.iter().enumerate() {
            if e.src >= n {
                out.push(format!("edge {k}: unknown src"));
            }
            if e.dst >= n {
                out.push(format!("edge {k}: unknown dst"));
            }
            if e.rel >= vocab.num_relations() {
                out.push(format!("edge {k}: relation index {} out of range", e.rel));
            }
            if e.src == e.dst {
                out.push(format!("edge {k}: self edge on node {}", e.src));
            }
            let touches_dummy = self.dummy && (e.src == n - 1 || e.dst == n - 1);
            if e.rel == dummy_rel || touches_dummy {
                let proper = self.dummy && e.rel == dummy_rel && e.src == n - 1 && e.dst < n - 1;
                if proper {
                    dummy_targets[e.dst] += 1;
                } else {
                    out.push(format!("edge {k}: misplaced dummy edge"));
                }
            }
        }
        if self.dummy {
            for (id, &count) in dummy_targets.iter().enumerate().take(real) {
                if count != 1 {
                    out.push(format!("node {id}: expected one dummy edge, found {count}"));
                }
            }
        }
        out
    }

    /// Canonical text record: `{"nodes":[[id,class],...],"edges":[[s,r,o],...],"dummy":b}`.
    pub fn to_record(&self) -> String {
        let nodes: Vec<[usize; 2]> = self.classes.iter().enumerate().map(|(i, &c)| [i, c]).collect();
        let edges: Vec<[usize; 3]> = self.edges.iter().map(|e| [e.src, e.rel, e.dst]).collect();
        let record = Record { nodes, edges, dummy: self.dummy };
        serde_json::to_string(&record).expect("record serializes")
    }

    pub fn from_record(text: &str) -> Result<Self, GraphError> {
        let value: Value = serde_json::from_str(text).map_err(|e| GraphError::Parse {
            position: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        Self::from_value(&value)
    }

    pub(crate) fn from_value(value: &Value) -> Result<Self, GraphError> {
        let record: Record = serde_json::from_value(value.clone()).map_err(|e| GraphError::Parse {
            position: "record".into(),
            message: e.to_string(),
        })?;
        let mut classes = vec![usize::MAX; record.nodes.len()];
        for (k, [id, class]) in record.nodes.iter().copied().enumerate() {
            if id >= classes.len() || classes[id] != usize::MAX {
                return Err(GraphError::Parse {
                    position: format!("nodes[{k}]"),
                    message: format!("node ids must be dense and unique, got {id}"),
                });
            }
            classes[id] = class;
        }
        let edges = record.edges.iter().map(|&[s, r, o]| Edge::new(s, r, o)).collect();
        Ok(SceneGraph { classes, edges, dummy: record.dummy })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    nodes: Vec<[usize; 2]>,
    edges: Vec<[usize; 3]>,
    dummy: bool,
}
