//! Undirected simple graphs in compressed sparse row form.

use crate::error::{Error, Result};

/// Undirected simple graph with sorted per-node neighbor lists.
///
/// Self-loops are never stored; encoders add them implicitly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

/// Result of building a graph from a raw edge list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeListReport {
    /// Unordered pairs seen more than once (in either orientation).
    pub duplicates: usize,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Self {
            offsets: vec![0; n + 1],
            neighbors: Vec::new(),
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for u in 0..n {
            for v in u + 1..n {
                edges.push((u, v));
            }
        }
        Self::from_sorted_unique_pairs(n, &edges)
    }

    /// Builds a graph from unordered pairs. Duplicates are dropped and
    /// counted; self-loops and out-of-range ids are errors.
    pub fn from_edges_report<I>(n: usize, edges: I) -> Result<(Self, EdgeListReport)>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut pairs = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Spec(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::Spec(format!("self-loop on node {u}")));
            }
            pairs.push((u.min(v), u.max(v)));
        }
        pairs.sort_unstable();
        let before = pairs.len();
        pairs.dedup();
        let report = EdgeListReport {
            duplicates: before - pairs.len(),
        };
        Ok((Self::from_sorted_unique_pairs(n, &pairs), report))
    }

    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        Self::from_edges_report(n, edges).map(|(g, _)| g)
    }

    /// `pairs` must hold distinct `(u, v)` with `u < v < n`.
    pub(crate) fn from_sorted_unique_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut deg = vec![0usize; n];
        for &(u, v) in pairs {
            deg[u] += 1;
            deg[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &deg {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut neighbors = vec![0usize; offsets[n]];
        for &(u, v) in pairs {
            neighbors[fill[u]] = v;
            fill[u] += 1;
            neighbors[fill[v]] = u;
            fill[v] += 1;
        }
        for v in 0..n {
            neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Self { offsets, neighbors }
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count()).map(|v| self.degree(v)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.node_count() && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Copy of this graph with the pair `{u, v}` present or absent.
    pub fn with_edge(&self, u: usize, v: usize, present: bool) -> Result<Self> {
        let n = self.node_count();
        if u >= n || v >= n || u == v {
            return Err(Error::Spec(format!("invalid pair ({u}, {v}) for {n} nodes")));
        }
        let (a, b) = (u.min(v), u.max(v));
        let mut pairs: Vec<_> = self.edges().filter(|&e| e != (a, b)).collect();
        if present {
            let at = pairs.partition_point(|&e| e < (a, b));
            pairs.insert(at, (a, b));
        }
        Ok(Self::from_sorted_unique_pairs(n, &pairs))
    }

    /// Subgraph induced by `subset`, relabelled `0..subset.len()` in subset order.
    ///
    /// Returns the subgraph and a map from old ids to new ids (`None` for
    /// nodes outside the subset).
    pub fn induced_subgraph(&self, subset: &NodeSubset) -> Result<(Graph, Vec<Option<usize>>)> {
        let n = self.node_count();
        if let Some(&bad) = subset.ids().iter().find(|&&id| id >= n) {
            return Err(Error::InvalidSubset(format!(
                "node {bad} out of range for {n} nodes"
            )));
        }
        let mut map = vec![None; n];
        for (new, &old) in subset.ids().iter().enumerate() {
            map[old] = Some(new);
        }
        let mut pairs = Vec::new();
        for (new_u, &old_u) in subset.ids().iter().enumerate() {
            for &old_v in self.neighbors(old_u) {
                if let Some(new_v) = map[old_v] {
                    if new_u < new_v {
                        pairs.push((new_u, new_v));
                    }
                }
            }
        }
        pairs.sort_unstable();
        Ok((Self::from_sorted_unique_pairs(subset.len(), &pairs), map))
    }
}

pub fn degrees(g: &Graph) -> Vec<usize> {
    g.degrees()
}

/// Strictly increasing list of node ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSubset {
    ids: Vec<usize>,
}

impl NodeSubset {
    /// Sorts and validates `ids` against a graph of `n` nodes; duplicates are errors.
    pub fn new(mut ids: Vec<usize>, n: usize) -> Result<Self> {
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSubset("duplicate node id".into()));
        }
        if let Some(&last) = ids.last() {
            if last >= n {
                return Err(Error::InvalidSubset(format!(
                    "node {last} out of range for {n} nodes"
                )));
            }
        }
        Ok(Self { ids })
    }

    /// Trusts the caller; validity is checked where the subset is used.
    pub fn from_sorted_unchecked(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn all(n: usize) -> Self {
        Self {
            ids: (0..n).collect(),
        }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn is_disjoint(&self, other: &NodeSubset) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.ids.len() && j < other.ids.len() {
            match self.ids[i].cmp(&other.ids[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return false,
            }
        }
        true
    }
}
