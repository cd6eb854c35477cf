use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{DecisionTree, LeafNode, Node, SplitNode};
use crate::error::{Error, Result};

/// Serialized tree: a nested node structure plus shape metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeJson {
    pub n_classes: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub depth: usize,
    pub root: NodeJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeJson {
    pub feature: Option<usize>,
    pub threshold: Option<f64>,
    pub left: Option<Box<NodeJson>>,
    pub right: Option<Box<NodeJson>>,
    pub counts: Vec<u64>,
    /// Per-class outcome averages keyed by class id; classes without
    /// outcome data are omitted.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outcome_avg: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outcome_sum: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outcome_count: Vec<u64>,
}

impl DecisionTree {
    fn node_json(&self, at: usize) -> NodeJson {
        match &self.nodes[at] {
            Node::Split(s) => NodeJson {
                feature: Some(s.feature),
                threshold: Some(s.threshold),
                left: Some(Box::new(self.node_json(s.left))),
                right: Some(Box::new(self.node_json(s.right))),
                counts: s.counts.clone(),
                outcome_avg: BTreeMap::new(),
                outcome_sum: vec![],
                outcome_count: vec![],
            },
            Node::Leaf(l) => NodeJson {
                feature: None,
                threshold: None,
                left: None,
                right: None,
                counts: l.counts.clone(),
                outcome_avg: (0..l.counts.len())
                    .filter_map(|c| l.outcome_avg(c).map(|v| (c.to_string(), v)))
                    .collect(),
                outcome_sum: l.outcome_sum.clone(),
                outcome_count: l.outcome_count.clone(),
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Graphviz rendering. Internal nodes show their test, sample count and
    /// majority-class probability; leaves add per-class outcome averages.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph tree {\n");
        out.push_str("  node [shape=box, style=rounded, fontname=helvetica];\n");
        out.push_str("  edge [fontname=helvetica];\n");
        for (i, node) in self.nodes.iter().enumerate() {
            let counts = node.counts();
            let n: u64 = counts.iter().sum();
            let (top, &top_n) = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).unwrap_or((0, &0));
            let p = if n > 0 { top_n as f64 / n as f64 } else { 0.0 };
            let mut label = String::new();
            match node {
                Node::Split(s) => {
                    let _ = write!(label, "{} ≤ {}\\n", escape(&self.feature_names[s.feature]), s.threshold);
                }
                Node::Leaf(l) => {
                    let _ = write!(label, "leaf {}\\n", l.id);
                }
            }
            let _ = write!(label, "n = {n}\\np({top}) = {p:.3}");
            if let Node::Leaf(l) = node {
                let avgs: Vec<String> = (0..l.counts.len())
                    .map(|c| match l.outcome_avg(c) {
                        Some(v) => format!("{c}: {v:.2}"),
                        None => format!("{c}: n/a"),
                    })
                    .collect();
                let _ = write!(label, "\\noutcome {}", avgs.join(", "));
            }
            let _ = writeln!(out, "  n{i} [label=\"{label}\"];");
            if let Node::Split(s) = node {
                let _ = writeln!(out, "  n{i} -> n{} [label=\"yes\"];", s.left);
                let _ = writeln!(out, "  n{i} -> n{} [label=\"no\"];", s.right);
            }
        }
        out.push_str("}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

impl From<DecisionTree> for TreeJson {
    fn from(tree: DecisionTree) -> Self {
        TreeJson {
            n_classes: tree.n_classes,
            n_features: tree.n_features,
            feature_names: tree.feature_names.clone(),
            depth: tree.depth,
            root: tree.node_json(0),
        }
    }
}

struct Rebuild {
    n_classes: usize,
    n_features: usize,
    nodes: Vec<Node>,
    n_leaves: usize,
    depth: usize,
}

impl Rebuild {
    fn visit(&mut self, node: NodeJson, depth: usize) -> Result<usize> {
        if node.counts.len() != self.n_classes {
            return Err(Error::Schema(format!("node counts have {} entries, expected {}", node.counts.len(), self.n_classes)));
        }
        match (node.feature, node.threshold, node.left, node.right) {
            (Some(feature), Some(threshold), Some(left), Some(right)) => {
                if feature >= self.n_features {
                    return Err(Error::Schema(format!("split feature {feature} out of range")));
                }
                let at = self.nodes.len();
                self.nodes.push(Node::Leaf(LeafNode { id: usize::MAX, counts: vec![], outcome_sum: vec![], outcome_count: vec![] }));
                let left = self.visit(*left, depth + 1)?;
                let right = self.visit(*right, depth + 1)?;
                self.nodes[at] = Node::Split(SplitNode { feature, threshold, left, right, counts: node.counts });
                Ok(at)
            }
            (None, None, None, None) => {
                let outcome_sum = if node.outcome_sum.is_empty() { vec![0.0; self.n_classes] } else { node.outcome_sum };
                let outcome_count = if node.outcome_count.is_empty() { vec![0; self.n_classes] } else { node.outcome_count };
                if outcome_sum.len() != self.n_classes || outcome_count.len() != self.n_classes {
                    return Err(Error::Schema("leaf outcome vectors do not match n_classes".into()));
                }
                if node.counts.iter().sum::<u64>() == 0 {
                    return Err(Error::Schema("leaf with no samples".into()));
                }
                self.depth = self.depth.max(depth);
                self.nodes.push(Node::Leaf(LeafNode { id: self.n_leaves, counts: node.counts, outcome_sum, outcome_count }));
                self.n_leaves += 1;
                Ok(self.nodes.len() - 1)
            }
            _ => Err(Error::Schema("node must be either a complete split or a leaf".into())),
        }
    }
}

impl TryFrom<TreeJson> for DecisionTree {
    type Error = Error;

    fn try_from(json: TreeJson) -> Result<Self> {
        if json.feature_names.len() != json.n_features {
            return Err(Error::Schema("feature_names length differs from n_features".into()));
        }
        let mut r = Rebuild { n_classes: json.n_classes, n_features: json.n_features, nodes: vec![], n_leaves: 0, depth: 0 };
        r.visit(json.root, 0)?;
        if r.depth != json.depth {
            return Err(Error::Schema(format!("declared depth {} but tree has depth {}", json.depth, r.depth)));
        }
        Ok(DecisionTree {
            nodes: r.nodes,
            n_classes: json.n_classes,
            n_features: json.n_features,
            depth: r.depth,
            feature_names: json.feature_names,
        })
    }
}
