//! Label-interaction graphs (and known input-feature graphs).

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::NeighborhoodMask;
use crate::error::{LampError, Result};

/// Which Label-to-Label neighbourhood a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphMode {
    /// No edges at all; the Label-to-Label stage is skipped.
    Edgeless,
    /// Every label attends to every label, itself included.
    FullyConnected,
    /// A known or co-occurrence graph, symmetric with self-loops.
    Prior,
}

impl GraphMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphMode::Edgeless => "el",
            GraphMode::FullyConnected => "fc",
            GraphMode::Prior => "pr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "el" | "edgeless" => Some(GraphMode::Edgeless),
            "fc" | "fully_connected" => Some(GraphMode::FullyConnected),
            "pr" | "prior" => Some(GraphMode::Prior),
            _ => None,
        }
    }
}

/// Dense `L×L` adjacency over label nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGraph {
    num_labels: usize,
    mode: GraphMode,
    adjacency: Vec<bool>,
}

impl LabelGraph {
    pub fn edgeless(num_labels: usize) -> Result<Self> {
        check_labels(num_labels)?;
        Ok(LabelGraph { num_labels, mode: GraphMode::Edgeless, adjacency: vec![false; num_labels * num_labels] })
    }

    pub fn fully_connected(num_labels: usize) -> Result<Self> {
        check_labels(num_labels)?;
        Ok(LabelGraph { num_labels, mode: GraphMode::FullyConnected, adjacency: vec![true; num_labels * num_labels] })
    }

    /// Edge `(i, j)` for every pair of distinct labels that appear together in
    /// at least one of `label_sets`, plus all self-loops. Pass only training
    /// label sets.
    pub fn cooccurrence<S: AsRef<[u32]>>(label_sets: &[S], num_labels: usize) -> Result<Self> {
        check_labels(num_labels)?;
        let mut g = Self::identity_prior(num_labels);
        for set in label_sets {
            let set = set.as_ref();
            for &i in set {
                if i as usize >= num_labels {
                    return Err(LampError::Data(format!("label id {} out of range for {} labels", i, num_labels)));
                }
            }
            for &i in set {
                for &j in set {
                    g.adjacency[i as usize * num_labels + j as usize] = true;
                }
            }
        }
        Ok(g)
    }

    /// Prior graph from an undirected edge list; symmetrised, self-loops forced.
    pub fn from_edges(num_labels: usize, edges: &[(usize, usize)]) -> Result<Self> {
        check_labels(num_labels)?;
        let mut g = Self::identity_prior(num_labels);
        for &(i, j) in edges {
            if i >= num_labels || j >= num_labels {
                return Err(LampError::Data(format!(
                    "edge ({}, {}) references a node outside 0..{}",
                    i, j, num_labels
                )));
            }
            g.adjacency[i * num_labels + j] = true;
            g.adjacency[j * num_labels + i] = true;
        }
        Ok(g)
    }

    /// Prior-mode graph from an arbitrary adjacency; validates the prior invariants.
    pub fn from_adjacency(num_labels: usize, mode: GraphMode, adjacency: Vec<bool>) -> Result<Self> {
        check_labels(num_labels)?;
        if adjacency.len() != num_labels * num_labels {
            return Err(LampError::dim("label_graph", format!("{} entries for {} labels", adjacency.len(), num_labels)));
        }
        let g = LabelGraph { num_labels, mode, adjacency };
        let ok = match mode {
            GraphMode::Edgeless => g.adjacency.iter().all(|&a| !a),
            GraphMode::FullyConnected => g.adjacency.iter().all(|&a| a),
            GraphMode::Prior => (0..num_labels)
                .all(|i| g.has_edge(i, i) && (0..num_labels).all(|j| g.has_edge(i, j) == g.has_edge(j, i))),
        };
        if !ok {
            return Err(LampError::Data(format!("adjacency violates the {} graph invariants", mode.as_str())));
        }
        Ok(g)
    }

    fn identity_prior(num_labels: usize) -> Self {
        let mut adjacency = vec![false; num_labels * num_labels];
        for i in 0..num_labels {
            adjacency[i * num_labels + i] = true;
        }
        LabelGraph { num_labels, mode: GraphMode::Prior, adjacency }
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn adjacency(&self) -> &[bool] {
        &self.adjacency
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.num_labels + j]
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.num_labels).filter(|&j| self.has_edge(i, j)).collect()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a).count()
    }

    /// The adjacency repeated for `batch` items, or `None` in edgeless mode
    /// (no Label-to-Label stage runs).
    pub fn mask(&self, batch: usize) -> Option<NeighborhoodMask> {
        if self.mode == GraphMode::Edgeless {
            return None;
        }
        let l = self.num_labels;
        Some(NeighborhoodMask::from_fn(batch, l, l, |_, r, c| self.adjacency[r * l + c]))
    }
}

fn check_labels(num_labels: usize) -> Result<()> {
    if num_labels == 0 {
        return Err(LampError::param("num_labels", "a label graph needs at least one label"));
    }
    Ok(())
}

/// Known graph over input feature ids (sparse). Used by feature message
/// passing in place of the fully connected default; every node keeps its
/// self-loop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputGraph {
    num_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl InputGraph {
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(LampError::Data(format!(
                    "edge ({}, {}) references a node outside 0..{}",
                    i, j, num_nodes
                )));
            }
            set.insert((i, j));
            set.insert((j, i));
        }
        Ok(InputGraph { num_nodes, edges: set })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn connected(&self, i: usize, j: usize) -> bool {
        i == j || self.edges.contains(&(i, j))
    }

    /// Undirected edges with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied().filter(|(i, j)| i < j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edgeless_has_no_neighbors() {
        let g = LabelGraph::edgeless(3).unwrap();
        assert_eq!(g.num_edges(), 0);
        for i in 0..3 {
            assert!(g.neighbors(i).is_empty());
        }
        assert!(g.mask(2).is_none());
    }

    #[test]
    fn fully_connected_includes_self() {
        let g = LabelGraph::fully_connected(2).unwrap();
        assert_eq!(g.adjacency(), &[true, true, true, true]);
        assert_eq!(LabelGraph::fully_connected(4).unwrap().neighbors(0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn zero_labels_rejected() {
        assert!(matches!(LabelGraph::edgeless(0), Err(LampError::Parameter { .. })));
        assert!(LabelGraph::fully_connected(0).is_err());
        assert!(LabelGraph::cooccurrence::<Vec<u32>>(&[], 0).is_err());
    }

    #[test]
    fn cooccurrence_example() {
        let g = LabelGraph::cooccurrence(&[vec![0u32, 1], vec![1, 2]], 3).unwrap();
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0) && g.has_edge(1, 2) && g.has_edge(2, 1));
        assert!(!g.has_edge(0, 2) && !g.has_edge(2, 0));
        assert!((0..3).all(|i| g.has_edge(i, i)));
        assert_eq!(g, LabelGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap());
    }

    #[test]
    fn empty_training_set_is_identity() {
        let g = LabelGraph::cooccurrence::<Vec<u32>>(&[], 4).unwrap();
        assert_eq!(g.num_edges(), 4);
        assert_eq!(g.mode(), GraphMode::Prior);
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        assert!(matches!(LabelGraph::cooccurrence(&[vec![0u32, 5]], 3), Err(LampError::Data(_))));
        assert!(matches!(LabelGraph::from_edges(3, &[(0, 3)]), Err(LampError::Data(_))));
    }

    #[test]
    fn adjacency_invariants_checked() {
        assert!(LabelGraph::from_adjacency(2, GraphMode::Prior, vec![true, true, false, true]).is_err());
        assert!(LabelGraph::from_adjacency(2, GraphMode::Prior, vec![true, false, false, true]).is_ok());
    }

    #[test]
    fn input_graph_self_loops() {
        let g = InputGraph::from_edges(5, &[(1, 3)]).unwrap();
        assert!(g.connected(3, 1) && g.connected(2, 2) && !g.connected(1, 2));
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(1, 3)]);
    }
}
