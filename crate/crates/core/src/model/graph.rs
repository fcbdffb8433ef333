use std::collections::{BTreeSet, VecDeque};

use crate::error::{Error, Result};

/// Directed neighbor graph on `m` agents.
///
/// `neighbors[i]` holds agent `i`'s neighbors including `i` itself; an arc
/// `j -> i` exists iff `j` is in `neighbors[i]`. Indices are 0-based here and
/// 1-based in every file format and CLI flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    neighbors: Vec<BTreeSet<usize>>,
}

impl NeighborGraph {
    pub fn new(neighbors: Vec<BTreeSet<usize>>) -> Result<Self> {
        let m = neighbors.len();
        if m == 0 {
            return Err(Error::invalid("neighbor graph has no vertices"));
        }
        for (i, set) in neighbors.iter().enumerate() {
            if let Some(&bad) = set.iter().find(|&&j| j >= m) {
                return Err(Error::invalid(format!(
                    "vertex {} lists neighbor {} outside 1..={m}",
                    i + 1,
                    bad + 1
                )));
            }
            if !set.contains(&i) {
                return Err(Error::invalid(format!(
                    "vertex {} is missing its self-loop (every agent is its own neighbor)",
                    i + 1
                )));
            }
        }
        Ok(Self { neighbors })
    }

    /// Builds a graph from 1-based neighbor labels.
    pub fn from_labels(labels: &[Vec<usize>]) -> Result<Self> {
        let mut sets = Vec::with_capacity(labels.len());
        for (i, row) in labels.iter().enumerate() {
            let mut set = BTreeSet::new();
            for &l in row {
                if l == 0 {
                    return Err(Error::invalid(format!(
                        "vertex {} lists neighbor 0; labels are 1-based",
                        i + 1
                    )));
                }
                set.insert(l - 1);
            }
            sets.push(set);
        }
        Self::new(sets)
    }

    /// 1-based neighbor labels, ascending.
    pub fn to_labels(&self) -> Vec<Vec<usize>> {
        self.neighbors
            .iter()
            .map(|s| s.iter().map(|j| j + 1).collect())
            .collect()
    }

    pub fn m(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.neighbors[i]
    }

    /// Neighbors of `i` other than `i`, ascending.
    pub fn others(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[i].iter().copied().filter(move |&j| j != i)
    }

    pub fn num_others(&self, i: usize) -> usize {
        self.neighbors[i].len() - 1
    }

    pub fn has_arc(&self, from: usize, to: usize) -> bool {
        from != to && self.neighbors[to].contains(&from)
    }

    /// Vertices `i != j` receiving from `j`, ascending.
    pub fn out_neighbors(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.m()).filter(move |&i| self.has_arc(j, i))
    }

    fn reaches_all(&self, start: usize, forward: bool) -> bool {
        let m = self.m();
        let mut seen = vec![false; m];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for w in 0..m {
                let arc = if forward {
                    self.has_arc(v, w)
                } else {
                    self.has_arc(w, v)
                };
                if arc && !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.reaches_all(0, true) && self.reaches_all(0, false)
    }
}

/// Directed spanning tree with all arcs oriented away from `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanningTree {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    pub depth: Vec<usize>,
}

impl SpanningTree {
    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }
}

/// Breadth-first spanning tree rooted at `root`, exploring out-arcs in
/// ascending vertex order.
pub fn spanning_tree(g: &NeighborGraph, root: usize) -> Result<SpanningTree> {
    let m = g.m();
    if root >= m {
        return Err(Error::invalid(format!("root {} outside 1..={m}", root + 1)));
    }
    let mut parent = vec![None; m];
    let mut children = vec![Vec::new(); m];
    let mut depth = vec![0; m];
    let mut seen = vec![false; m];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        for w in g.out_neighbors(v) {
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some(v);
                children[v].push(w);
                depth[w] = depth[v] + 1;
                queue.push_back(w);
            }
        }
    }
    if let Some(u) = seen.iter().position(|s| !s) {
        return Err(Error::Internal(format!(
            "vertex {} unreachable from root {}; graph is not strongly connected",
            u + 1,
            root + 1
        )));
    }
    Ok(SpanningTree {
        root,
        parent,
        children,
        depth,
    })
}
