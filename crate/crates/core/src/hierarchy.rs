//! Label trees and LCA-height distance matrices.
//!
//! A hierarchy file holds one `child<TAB>parent` record per line. The root
//! appears only as a parent; leaves are nodes with no children. Leaves are
//! indexed in lexicographic name order so that the same tree always yields
//! the same class indices regardless of line order in the file.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: expected `child<TAB>parent`, got {content:?}")]
    MalformedLine { line: usize, content: String },
    #[error("node {name:?} is declared as a child more than once (lines {first_line} and {line})")]
    DuplicateNode {
        name: String,
        first_line: usize,
        line: usize,
    },
    #[error("hierarchy has multiple roots: {roots:?}")]
    MultipleRoots { roots: Vec<String> },
    #[error("hierarchy contains a cycle through {node:?}")]
    Cycle { node: String },
    #[error("hierarchy needs at least 2 leaves, found {found}")]
    TooFewLeaves { found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Node {
    pub name: String,
    pub parent: Option<usize>,
}

/// Rooted label tree whose leaves are the flat classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTree {
    nodes: Vec<Node>,
    children: Vec<Vec<usize>>,
    root: usize,
    /// Node indices of the leaves, sorted by name.
    leaf_order: Vec<usize>,
    depth: Vec<usize>,
    height: Vec<usize>,
}

impl LabelTree {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut nodes: Vec<Node> = Vec::new();
        let mut child_line: HashMap<usize, usize> = HashMap::new();

        let mut intern = |name: &str, nodes: &mut Vec<Node>| -> usize {
            *index.entry(name.to_string()).or_insert_with(|| {
                nodes.push(Node {
                    name: name.to_string(),
                    parent: None,
                });
                nodes.len() - 1
            })
        };

        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = raw.trim_end_matches('\r').split('\t');
            let (child, parent) = match (fields.next(), fields.next(), fields.next()) {
                (Some(c), Some(p), None) if !c.trim().is_empty() && !p.trim().is_empty() => {
                    (c.trim(), p.trim())
                }
                _ => {
                    return Err(ParseError::MalformedLine {
                        line,
                        content: raw.to_string(),
                    })
                }
            };
            if child == parent {
                return Err(ParseError::Cycle {
                    node: child.to_string(),
                });
            }
            let c = intern(child, &mut nodes);
            let p = intern(parent, &mut nodes);
            if let Some(&first_line) = child_line.get(&c) {
                return Err(ParseError::DuplicateNode {
                    name: child.to_string(),
                    first_line,
                    line,
                });
            }
            child_line.insert(c, line);
            nodes[c].parent = Some(p);
        }
        Self::from_nodes(nodes)
    }

    /// Builds a tree from `(child, parent)` name pairs.
    pub fn from_edges<'a>(
        edges: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ParseError> {
        let text: String = edges
            .into_iter()
            .map(|(c, p)| format!("{c}\t{p}\n"))
            .collect();
        Self::parse(&text)
    }

    fn from_nodes(nodes: Vec<Node>) -> Result<Self, ParseError> {
        let n = nodes.len();
        // Cycles first: with a cycle there may be no root at all.
        let mut state = vec![0u8; n]; // 0 unvisited, 1 on current path, 2 done
        for start in 0..n {
            let mut path = Vec::new();
            let mut cur = Some(start);
            while let Some(v) = cur {
                match state[v] {
                    2 => break,
                    1 => {
                        return Err(ParseError::Cycle {
                            node: nodes[v].name.clone(),
                        })
                    }
                    _ => {
                        state[v] = 1;
                        path.push(v);
                        cur = nodes[v].parent;
                    }
                }
            }
            for v in path {
                state[v] = 2;
            }
        }

        let mut roots: Vec<usize> = (0..n).filter(|&i| nodes[i].parent.is_none()).collect();
        if roots.len() != 1 {
            let mut names: Vec<String> = roots.drain(..).map(|i| nodes[i].name.clone()).collect();
            names.sort();
            if names.is_empty() {
                return Err(ParseError::TooFewLeaves { found: 0 });
            }
            return Err(ParseError::MultipleRoots { roots: names });
        }
        let root = roots[0];

        let mut children = vec![Vec::new(); n];
        for (i, node) in nodes.iter().enumerate() {
            if let Some(p) = node.parent {
                children[p].push(i);
            }
        }
        for list in &mut children {
            list.sort_by(|&a, &b| nodes[a].name.cmp(&nodes[b].name));
        }

        let mut leaf_order: Vec<usize> = (0..n).filter(|&i| children[i].is_empty()).collect();
        if leaf_order.len() < 2 {
            return Err(ParseError::TooFewLeaves {
                found: leaf_order.len(),
            });
        }
        leaf_order.sort_by(|&a, &b| nodes[a].name.cmp(&nodes[b].name));

        // Preorder from the root; without cycles and with one root every
        // node is reached.
        let mut depth = vec![0usize; n];
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            order.push(v);
            for &c in children[v].iter().rev() {
                depth[c] = depth[v] + 1;
                stack.push(c);
            }
        }
        debug_assert_eq!(order.len(), n);
        let mut height = vec![0usize; n];
        for &v in order.iter().rev() {
            height[v] = children[v]
                .iter()
                .map(|&c| height[c] + 1)
                .max()
                .unwrap_or(0);
        }

        Ok(Self {
            nodes,
            children,
            root,
            leaf_order,
            depth,
            height,
        })
    }

    /// Number of leaf classes K.
    pub fn num_classes(&self) -> usize {
        self.leaf_order.len()
    }

    /// Tree height: the maximum number of edges from root to a leaf.
    pub fn max_depth(&self) -> usize {
        self.height[self.root]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    /// Edge count from `node` down to its deepest descendant leaf.
    pub fn height(&self, node: usize) -> usize {
        self.height[node]
    }

    /// Leaf node indices in class order.
    pub fn leaf_nodes(&self) -> &[usize] {
        &self.leaf_order
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.leaf_order
            .iter()
            .map(|&i| self.nodes[i].name.as_str())
            .collect()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.leaf_order
            .iter()
            .position(|&i| self.nodes[i].name == name)
    }

    /// Node indices from the root down to `node`, inclusive.
    pub fn path_from_root(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn lca(&self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (a, b);
        while self.depth[a] > self.depth[b] {
            a = self.nodes[a].parent.expect("non-root has a parent");
        }
        while self.depth[b] > self.depth[a] {
            b = self.nodes[b].parent.expect("non-root has a parent");
        }
        while a != b {
            a = self.nodes[a].parent.expect("distinct nodes at equal depth are below the root");
            b = self.nodes[b].parent.expect("distinct nodes at equal depth are below the root");
        }
        a
    }

    /// Pairwise LCA heights between the leaf classes.
    pub fn distance_matrix(&self) -> DistanceMatrix {
        let k = self.num_classes();
        let mut values = vec![0u32; k * k];
        for i in 0..k {
            for j in (i + 1)..k {
                let lca = self.lca(self.leaf_order[i], self.leaf_order[j]);
                let h = self.height[lca] as u32;
                values[i * k + j] = h;
                values[j * k + i] = h;
            }
        }
        DistanceMatrix {
            k,
            max_depth: self.max_depth() as u32,
            values,
        }
    }

    /// Serializes back to the `child<TAB>parent` format, sorted by child.
    pub fn to_text(&self) -> String {
        let mut lines: BTreeMap<&str, &str> = BTreeMap::new();
        for node in &self.nodes {
            if let Some(p) = node.parent {
                lines.insert(&node.name, &self.nodes[p].name);
            }
        }
        lines
            .into_iter()
            .map(|(c, p)| format!("{c}\t{p}\n"))
            .collect()
    }
}

/// K×K matrix of LCA heights between leaf classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DistanceMatrix {
    k: usize,
    max_depth: u32,
    values: Vec<u32>,
}

impl DistanceMatrix {
    /// Builds a distance matrix directly. Intended for tests and tools that
    /// already hold LCA heights.
    pub fn from_rows(rows: &[Vec<u32>], max_depth: u32) -> Self {
        let k = rows.len();
        assert!(rows.iter().all(|r| r.len() == k), "distance matrix must be square");
        Self {
            k,
            max_depth,
            values: rows.concat(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.values[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// Largest off-diagonal entry.
    pub fn max_entry(&self) -> u32 {
        self.values.iter().copied().max().unwrap_or(0)
    }
}
