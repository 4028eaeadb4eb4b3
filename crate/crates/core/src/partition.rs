//! Variable blocks with the running intersection property.
//!
//! Constraints are grouped per vertex: constraint group `v` holds every
//! constraint on `q_v`, so a block's constraint set is a set of vertices just
//! like its variable set.
//!
//! [`junction_tree_partition`] eliminates vertices in index order. Eliminating
//! `v` joins its higher-indexed neighbors into a clique, which both merges the
//! edge covering sets sharing the smallest element `v` and adds the fill that
//! makes the graph chordal. The maximal cliques, linked by a maximum-weight
//! spanning tree on intersection sizes, form a junction tree; listing them in
//! the order the tree grows from the clique of vertex 0 gives the running
//! intersection order.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::problem::MeasurementGraph;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariablePartition {
    /// Sorted vertex sets `I_l`.
    pub blocks: Vec<Vec<usize>>,
    /// Sorted constraint groups `J_l` (vertex indices).
    pub constraints: Vec<Vec<usize>>,
}

impl VariablePartition {
    /// Builds a partition whose constraint groups equal its blocks.
    pub fn from_blocks(blocks: Vec<Vec<usize>>) -> Self {
        let blocks: Vec<Vec<usize>> = blocks
            .into_iter()
            .map(|b| b.into_iter().collect::<BTreeSet<_>>().into_iter().collect())
            .collect();
        Self { constraints: blocks.clone(), blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// True if no block is contained in another.
    pub fn is_proper(&self) -> bool {
        let sets: Vec<BTreeSet<usize>> = self.blocks.iter().map(|b| b.iter().copied().collect()).collect();
        (0..sets.len()).all(|a| (0..sets.len()).all(|b| a == b || !sets[a].is_subset(&sets[b])))
    }

    /// Largest block size.
    pub fn width(&self) -> usize {
        self.blocks.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// JSON form with 1-based vertex numbers.
impl Serialize for VariablePartition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            blocks: Vec<Vec<usize>>,
            constraints: Vec<Vec<usize>>,
        }
        let one_based = |v: &Vec<Vec<usize>>| v.iter().map(|b| b.iter().map(|i| i + 1).collect()).collect();
        Repr { blocks: one_based(&self.blocks), constraints: one_based(&self.constraints) }.serialize(s)
    }
}

/// The trivial partition with one block holding every vertex.
pub fn single_block_partition(n: usize) -> VariablePartition {
    VariablePartition::from_blocks(vec![(0..n).collect()])
}

pub fn junction_tree_partition(g: &MeasurementGraph) -> VariablePartition {
    let n = g.n();
    let mut higher: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for e in g.edges() {
        higher[e.i].insert(e.j);
    }
    let mut cliques: Vec<BTreeSet<usize>> = Vec::with_capacity(n);
    for v in 0..n {
        let h: Vec<usize> = higher[v].iter().copied().collect();
        for (a, &x) in h.iter().enumerate() {
            for &y in &h[a + 1..] {
                higher[x].insert(y);
            }
        }
        let mut c: BTreeSet<usize> = higher[v].clone();
        c.insert(v);
        cliques.push(c);
    }

    // keep maximal cliques; an earlier clique wins among equal ones
    let mut keep = Vec::new();
    for (a, ca) in cliques.iter().enumerate() {
        let subsumed = cliques
            .iter()
            .enumerate()
            .any(|(b, cb)| b != a && ca.is_subset(cb) && (ca.len() < cb.len() || b < a));
        if !subsumed {
            keep.push(ca.clone());
        }
    }

    // Prim's algorithm on intersection sizes, rooted at the clique of vertex 0
    let p = keep.len();
    let weight = |a: usize, b: usize| keep[a].intersection(&keep[b]).count();
    let root = keep.iter().position(|c| c.contains(&0)).unwrap_or(0);
    let mut placed = vec![false; p];
    let mut best: Vec<(usize, usize)> = (0..p).map(|b| (weight(root, b), root)).collect();
    placed[root] = true;
    let mut order = vec![root];
    while order.len() < p {
        let next = (0..p)
            .filter(|&b| !placed[b])
            .max_by(|&a, &b| best[a].0.cmp(&best[b].0).then(b.cmp(&a)))
            .expect("unplaced clique");
        placed[next] = true;
        order.push(next);
        for b in 0..p {
            if !placed[b] {
                let w = weight(next, b);
                if w > best[b].0 {
                    best[b] = (w, next);
                }
            }
        }
    }
    VariablePartition::from_blocks(order.into_iter().map(|k| keep[k].iter().copied().collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RipViolation {
    /// Edge `(i, j)` lies in no block, so the cost does not decompose.
    EdgeNotCovered { i: usize, j: usize },
    /// Block `block` lists the constraints of a vertex outside it.
    ConstraintOutsideBlock { block: usize, vertex: usize },
    VertexNotCovered { vertex: usize },
    ConstraintNotCovered { vertex: usize },
    /// The overlap of block `block` with all earlier blocks is not contained
    /// in any single earlier block.
    RunningIntersection { block: usize, overlap: Vec<usize> },
    SizeMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RipReport {
    pub violations: Vec<RipViolation>,
}

impl RipReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn verify_rip(g: &MeasurementGraph, part: &VariablePartition) -> RipReport {
    let mut violations = Vec::new();
    if part.blocks.len() != part.constraints.len() || part.blocks.is_empty() {
        violations.push(RipViolation::SizeMismatch);
        return RipReport { violations };
    }
    let sets: Vec<BTreeSet<usize>> = part.blocks.iter().map(|b| b.iter().copied().collect()).collect();
    for e in g.edges() {
        if !sets.iter().any(|s| s.contains(&e.i) && s.contains(&e.j)) {
            violations.push(RipViolation::EdgeNotCovered { i: e.i, j: e.j });
        }
    }
    for (l, (set, cons)) in sets.iter().zip(&part.constraints).enumerate() {
        for &v in cons {
            if !set.contains(&v) {
                violations.push(RipViolation::ConstraintOutsideBlock { block: l, vertex: v });
            }
        }
    }
    for v in 0..g.n() {
        if !sets.iter().any(|s| s.contains(&v)) {
            violations.push(RipViolation::VertexNotCovered { vertex: v });
        }
        if !part.constraints.iter().any(|c| c.contains(&v)) {
            violations.push(RipViolation::ConstraintNotCovered { vertex: v });
        }
    }
    let mut seen: BTreeSet<usize> = sets[0].clone();
    for l in 1..sets.len() {
        let overlap: BTreeSet<usize> = sets[l].intersection(&seen).copied().collect();
        if !sets[..l].iter().any(|s| overlap.is_subset(s)) {
            violations.push(RipViolation::RunningIntersection { block: l, overlap: overlap.iter().copied().collect() });
        }
        seen.extend(sets[l].iter().copied());
    }
    RipReport { violations }
}
