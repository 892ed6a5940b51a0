//! Tree-structured label space.
//!
//! An [`OntologyTree`] is built from `(child, parent)` declaration records.
//! Every label is declared exactly once; labels with an empty parent become
//! children of a synthetic root, which always has id 0. Multiple top-level
//! trees are therefore joined into a single rooted tree.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Label of the synthetic root node.
pub const ROOT_LABEL: &str = "<ROOT>";

/// Dense node index; `NodeId(0)` is always the synthetic root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn is_root(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A set of labels. Always ordered so that iteration (and serialization) is
/// deterministic.
pub type LabelSet = BTreeSet<NodeId>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OntologyError {
    #[error("cycle detected involving label `{0}`")]
    Cycle(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("label `{label}` listed with two distinct parents (`{first}` and `{second}`)")]
    TwoParents {
        label: String,
        first: String,
        second: String,
    },
    #[error("label `{child}` references undeclared parent `{parent}`")]
    UnknownParent { child: String, parent: String },
    #[error("label `{0}` is reserved")]
    ReservedLabel(String),
    #[error("empty label on line {0}")]
    EmptyLabel(usize),
    #[error("malformed ontology record on line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("invalid node id {0}")]
    InvalidNode(NodeId),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("i/o error reading {path}: {message}")]
    Io { path: String, message: String },
}

/// One declaration record: a label and its parent (`None` for top-level).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub child: String,
    pub parent: Option<String>,
}

impl EdgeRecord {
    pub fn new(child: impl Into<String>, parent: Option<&str>) -> Self {
        EdgeRecord {
            child: child.into(),
            parent: parent.map(str::to_owned),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub label: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: u32,
}

/// Rooted label tree. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OntologyTree {
    nodes: Vec<Node>,
    index: HashMap<String, NodeId>,
}

impl OntologyTree {
    /// Builds and validates a tree from declaration records.
    ///
    /// Top-level labels are attached to the synthetic root in input order and
    /// children keep their input order. Node ids follow record order, so
    /// writing [`OntologyTree::records`] back out reproduces the same ids.
    pub fn from_records<I>(records: I) -> Result<Self, OntologyError>
    where
        I: IntoIterator<Item = EdgeRecord>,
    {
        let records: Vec<EdgeRecord> = records.into_iter().collect();
        let mut index: HashMap<String, NodeId> = HashMap::with_capacity(records.len() + 1);
        let mut declared_parent: Vec<Option<String>> = Vec::with_capacity(records.len());
        index.insert(ROOT_LABEL.to_owned(), NodeId::ROOT);

        for (i, rec) in records.iter().enumerate() {
            if rec.child.is_empty() {
                return Err(OntologyError::EmptyLabel(i + 1));
            }
            if rec.child == ROOT_LABEL {
                return Err(OntologyError::ReservedLabel(rec.child.clone()));
            }
            let parent = rec.parent.clone().filter(|p| !p.is_empty());
            if let Some(&existing) = index.get(&rec.child) {
                let prev = &declared_parent[existing.index() - 1];
                if prev != &parent {
                    return Err(OntologyError::TwoParents {
                        label: rec.child.clone(),
                        first: prev.clone().unwrap_or_default(),
                        second: parent.unwrap_or_default(),
                    });
                }
                return Err(OntologyError::DuplicateLabel(rec.child.clone()));
            }
            index.insert(rec.child.clone(), NodeId(i as u32 + 1));
            declared_parent.push(parent);
        }

        let mut nodes = Vec::with_capacity(records.len() + 1);
        nodes.push(Node {
            id: NodeId::ROOT,
            label: ROOT_LABEL.to_owned(),
            parent: None,
            children: Vec::new(),
            depth: 0,
        });
        for (i, rec) in records.iter().enumerate() {
            let id = NodeId(i as u32 + 1);
            let parent = match &declared_parent[i] {
                None => NodeId::ROOT,
                Some(p) => match index.get(p) {
                    Some(&pid) => pid,
                    None => {
                        return Err(OntologyError::UnknownParent {
                            child: rec.child.clone(),
                            parent: p.clone(),
                        })
                    }
                },
            };
            nodes.push(Node {
                id,
                label: rec.child.clone(),
                parent: Some(parent),
                children: Vec::new(),
                depth: 0,
            });
        }
        for i in 1..nodes.len() {
            let parent = nodes[i].parent.expect("non-root has parent");
            let id = nodes[i].id;
            nodes[parent.index()].children.push(id);
        }

        // Depths by traversal from the root; anything unreached hangs off a cycle.
        let mut reached = vec![false; nodes.len()];
        reached[0] = true;
        let mut stack = vec![NodeId::ROOT];
        while let Some(n) = stack.pop() {
            let depth = nodes[n.index()].depth;
            let children = nodes[n.index()].children.clone();
            for c in children {
                if reached[c.index()] {
                    return Err(OntologyError::Cycle(nodes[c.index()].label.clone()));
                }
                reached[c.index()] = true;
                nodes[c.index()].depth = depth + 1;
                stack.push(c);
            }
        }
        if let Some(i) = reached.iter().position(|r| !r) {
            return Err(OntologyError::Cycle(nodes[i].label.clone()));
        }

        Ok(OntologyTree { nodes, index })
    }

    /// Parses the tab-separated `child<TAB>parent` format. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, OntologyError> {
        Self::from_reader(text.as_bytes())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, OntologyError> {
        let mut records = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| OntologyError::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let child = fields.next().unwrap_or_default();
            let parent = fields.next();
            if fields.next().is_some() {
                return Err(OntologyError::Malformed {
                    line: i + 1,
                    reason: "expected at most two tab-separated fields".into(),
                });
            }
            if child.is_empty() {
                return Err(OntologyError::EmptyLabel(i + 1));
            }
            records.push(EdgeRecord::new(child, parent.filter(|p| !p.is_empty())));
        }
        Self::from_records(records)
    }

    pub fn read(path: &Path) -> Result<Self, OntologyError> {
        let file = std::fs::File::open(path).map_err(|e| OntologyError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_reader(file)
    }

    /// Records in id order; feeding them back to [`from_records`] rebuilds an
    /// identical tree.
    ///
    /// [`from_records`]: OntologyTree::from_records
    pub fn records(&self) -> Vec<EdgeRecord> {
        self.nodes[1..]
            .iter()
            .map(|n| {
                let parent = n.parent.filter(|p| !p.is_root());
                EdgeRecord {
                    child: n.label.clone(),
                    parent: parent.map(|p| self.nodes[p.index()].label.clone()),
                }
            })
            .collect()
    }

    /// Serializes to the tab-separated file format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for rec in self.records() {
            out.push_str(&rec.child);
            out.push('\t');
            if let Some(p) = &rec.parent {
                out.push_str(p);
            }
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 over the canonical TSV form.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }

    /// Number of nodes including the root.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.index() < self.nodes.len()
    }

    fn node(&self, v: NodeId) -> Result<&Node, OntologyError> {
        self.nodes.get(v.index()).ok_or(OntologyError::InvalidNode(v))
    }

    pub fn label(&self, v: NodeId) -> Result<&str, OntologyError> {
        self.node(v).map(|n| n.label.as_str())
    }

    pub fn id_of(&self, label: &str) -> Result<NodeId, OntologyError> {
        self.index
            .get(label)
            .copied()
            .filter(|id| !id.is_root())
            .ok_or_else(|| OntologyError::UnknownLabel(label.to_owned()))
    }

    pub fn parent(&self, v: NodeId) -> Result<Option<NodeId>, OntologyError> {
        self.node(v).map(|n| n.parent)
    }

    pub fn children(&self, v: NodeId) -> Result<&[NodeId], OntologyError> {
        self.node(v).map(|n| n.children.as_slice())
    }

    pub fn depth(&self, v: NodeId) -> Result<u32, OntologyError> {
        self.node(v).map(|n| n.depth)
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Path from `v`'s parent up to the root, inclusive. Empty for the root.
    pub fn ancestors(&self, v: NodeId) -> Result<Vec<NodeId>, OntologyError> {
        let mut out = Vec::with_capacity(self.node(v)?.depth as usize);
        let mut cur = self.nodes[v.index()].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p.index()].parent;
        }
        Ok(out)
    }

    /// Ancestor closure of a label set. The root is never included.
    pub fn closure<'a, I>(&self, labels: I) -> Result<LabelSet, OntologyError>
    where
        I: IntoIterator<Item = &'a NodeId>,
    {
        let mut out = LabelSet::new();
        for &v in labels {
            self.node(v)?;
            let mut cur = Some(v);
            while let Some(n) = cur {
                if n.is_root() || !out.insert(n) {
                    break;
                }
                cur = self.nodes[n.index()].parent;
            }
        }
        Ok(out)
    }

    /// Lowest common ancestor, found by walking the deeper node up.
    pub fn lca(&self, u: NodeId, v: NodeId) -> Result<NodeId, OntologyError> {
        let (mut a, mut b) = (u, v);
        let mut da = self.node(a)?.depth;
        let mut db = self.node(b)?.depth;
        while da > db {
            a = self.nodes[a.index()].parent.expect("depth > 0 implies parent");
            da -= 1;
        }
        while db > da {
            b = self.nodes[b.index()].parent.expect("depth > 0 implies parent");
            db -= 1;
        }
        while a != b {
            a = self.nodes[a.index()].parent.expect("distinct nodes below root");
            b = self.nodes[b.index()].parent.expect("distinct nodes below root");
        }
        Ok(a)
    }

    /// Number of edges on the unique path between `u` and `v`.
    pub fn distance(&self, u: NodeId, v: NodeId) -> Result<u32, OntologyError> {
        let l = self.lca(u, v)?;
        let d = |n: NodeId| self.nodes[n.index()].depth;
        Ok(d(u) + d(v) - 2 * d(l))
    }

    /// True when `labels ∪ {root}` forms a connected subtree containing the root.
    pub fn is_root_connected(&self, labels: &LabelSet) -> bool {
        labels.iter().all(|&v| match self.nodes.get(v.index()).and_then(|n| n.parent) {
            Some(p) => p.is_root() || labels.contains(&p),
            None => false,
        })
    }
}

/// Per-node training counts and the loss-inclusion probabilities derived
/// from them: `p_v = min(1, 0.5 + m / f_v)` where `m` is the smallest
/// positive count. Nodes never observed get `p_v = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: Vec<u64>,
    min_count: u64,
    probs: Vec<f64>,
}

impl FrequencyTable {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        // With nothing observed `m` is never used; 1 keeps it positive.
        let min_count = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(1);
        let probs = counts
            .iter()
            .map(|&f| inclusion_probability(min_count, f))
            .collect();
        FrequencyTable {
            counts,
            min_count,
            probs,
        }
    }

    pub fn count(&self, v: NodeId) -> u64 {
        self.counts.get(v.index()).copied().unwrap_or(0)
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn probability(&self, v: NodeId) -> f64 {
        self.probs.get(v.index()).copied().unwrap_or(1.0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// `min(1, 0.5 + m/f)`, or 1 for an unseen node.
pub fn inclusion_probability(min_count: u64, count: u64) -> f64 {
    if count == 0 {
        1.0
    } else {
        (0.5 + min_count as f64 / count as f64).min(1.0)
    }
}

/// Counts, for every node, how many of the (ancestor-closed) gold sets contain it.
pub fn node_frequencies(
    tree: &OntologyTree,
    gold_sets: &[&LabelSet],
) -> Result<FrequencyTable, OntologyError> {
    if gold_sets.is_empty() {
        return Err(OntologyError::EmptyCorpus);
    }
    let mut counts = vec![0u64; tree.len()];
    for set in gold_sets {
        for &v in set.iter() {
            if !tree.contains(v) {
                return Err(OntologyError::InvalidNode(v));
            }
            counts[v.index()] += 1;
        }
    }
    Ok(FrequencyTable::from_counts(counts))
}
