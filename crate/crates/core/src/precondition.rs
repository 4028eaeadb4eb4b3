//! Quaternion sign selection.
//!
//! A measurement `m` and its negation describe the same relative rotation but
//! give different quadratic costs. Signs are chosen along a spanning tree:
//! tree edges keep their stored sign and propagate estimates
//! `q_j = q_i * m_ij` from `q_0 = 1`; every other edge takes the sign that
//! best agrees with those estimates.

use crate::baselines::{multi_start, LocalOptions};
use crate::polycost::assemble_cost;
use crate::problem::{spanning_tree, MeasurementGraph, SpanningTree};
use crate::quat::{multiply, UnitQuaternion};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SignSelection {
    /// One sign per edge, aligned with `MeasurementGraph::edges`.
    pub signs: Vec<i8>,
    /// Estimates chained along the tree, with `chained[0]` the identity.
    pub chained: Vec<UnitQuaternion>,
    pub tree: SpanningTree,
}

/// Chains measurements along `tree` starting from the identity at vertex 0.
pub fn chain_estimates(g: &MeasurementGraph, tree: &SpanningTree, signs: &[i8]) -> Vec<UnitQuaternion> {
    let mut q = vec![UnitQuaternion::IDENTITY; g.n()];
    for &v in &tree.order[1..] {
        let (p, k) = tree.parent[v].expect("non-root vertex has a parent");
        let e = &g.edges()[k];
        let m = e.measurement.signed(signs[k]);
        q[v] = if e.i == p {
            multiply(&q[p], &m)
        } else {
            // q_p = q_v * m  =>  q_v = q_p * conj(m)
            multiply(&q[p], &m.conjugate())
        };
    }
    q
}

pub fn quaternion_signs(g: &MeasurementGraph) -> Result<SignSelection> {
    let tree = spanning_tree(g)?;
    let mut signs = vec![1i8; g.num_edges()];
    let chained = chain_estimates(g, &tree, &signs);
    let mut in_tree = vec![false; g.num_edges()];
    for &k in &tree.edges {
        in_tree[k] = true;
    }
    for (k, e) in g.edges().iter().enumerate() {
        if in_tree[k] {
            continue;
        }
        let qj = chained[e.j].as_vector();
        let pred = multiply(&chained[e.i], &e.measurement).as_vector();
        let plus = (pred - qj).norm();
        let minus = (-pred - qj).norm();
        if minus < plus {
            signs[k] = -1;
        }
    }
    Ok(SignSelection { signs, chained, tree })
}

/// Exhaustive sign search: every one of the `2^M` sign vectors is solved
/// with `multi_start(count, seed)` and the lowest optimum is returned with
/// its signs (the first in enumeration order on ties). Limited to `M <= 12`.
pub fn brute_force_signs(g: &MeasurementGraph, count: usize, seed: u64) -> Result<(Vec<i8>, f64)> {
    let m = g.num_edges();
    if m > 12 {
        return Err(Error::InvalidArgument(format!("exhaustive sign search needs M <= 12, got {m}")));
    }
    let tree = spanning_tree(g)?;
    let opts = LocalOptions::default();
    let mut best: Option<(Vec<i8>, f64)> = None;
    for mask in 0u32..(1 << m) {
        let signs: Vec<i8> = (0..m).map(|k| if mask >> k & 1 == 1 { -1 } else { 1 }).collect();
        let cost = assemble_cost(g, &signs)?;
        let init = chain_estimates(g, &tree, &signs);
        let r = multi_start(&cost, &init, count, seed, &opts)?;
        if best.as_ref().is_none_or(|(_, c)| r.cost < *c) {
            best = Some((signs, r.cost));
        }
    }
    Ok(best.expect("at least one sign vector"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polycost::assemble_cost;
    use crate::problem::{generate_synthetic, InstanceConfig};

    fn id() -> UnitQuaternion {
        UnitQuaternion::IDENTITY
    }

    #[test]
    fn identity_measurements_keep_positive_signs() {
        let g = MeasurementGraph::new(4, vec![(0, 1, id()), (1, 2, id()), (2, 3, id()), (0, 3, id()), (0, 2, id())], None)
            .unwrap();
        let s = quaternion_signs(&g).unwrap();
        assert!(s.signs.iter().all(|&e| e == 1));
        assert!(s.chained.iter().all(|q| *q == id()));
    }

    #[test]
    fn negated_loop_closure_is_recovered() {
        let a = UnitQuaternion::new(0.6, 0.8, 0.0, 0.0).unwrap();
        let b = UnitQuaternion::new(0.0, 0.0, 0.6, 0.8).unwrap();
        // exact triangle: q0 = 1, q1 = a, q2 = a b; the closure (0, 2) is a b
        let closure = -multiply(&a, &b);
        let g = MeasurementGraph::new(3, vec![(0, 1, a), (1, 2, b), (0, 2, closure)], None).unwrap();
        let s = quaternion_signs(&g).unwrap();
        let k = g.edges().iter().position(|e| (e.i, e.j) == (0, 2)).unwrap();
        assert_eq!(s.signs[k], -1);
        let cost = assemble_cost(&g, &s.signs).unwrap();
        assert!(cost.evaluate_quaternions(&s.chained).unwrap() < 1e-24);
    }

    #[test]
    fn zero_noise_cost_vanishes_at_truth() {
        for seed in 0..20 {
            let g = generate_synthetic(&InstanceConfig { n: 9, n_loops: 6, theta_max: 0.0, seed }).unwrap();
            let s = quaternion_signs(&g).unwrap();
            let cost = assemble_cost(&g, &s.signs).unwrap();
            // the truth up to the per-vertex sign of the chained estimates
            let truth: Vec<_> = g
                .truth()
                .unwrap()
                .iter()
                .zip(&s.chained)
                .map(|(t, c)| if t.dot(c) < 0.0 { -*t } else { *t })
                .collect();
            assert!(cost.evaluate_quaternions(&truth).unwrap() < 1e-24);
            for (k, e) in g.edges().iter().enumerate() {
                let pred = multiply(&s.chained[e.i], &e.measurement.signed(s.signs[k]));
                assert!((pred.as_vector() - s.chained[e.j].as_vector()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn complete_four_vertex_graph_matches_exhaustive_search() {
        let g = generate_synthetic(&InstanceConfig { n: 4, n_loops: 3, theta_max: 0.9 * std::f64::consts::PI, seed: 0 }).unwrap();
        assert_eq!(g.num_edges(), 6);
        let sel = quaternion_signs(&g).unwrap();
        let cost = assemble_cost(&g, &sel.signs).unwrap();
        let chosen = multi_start(&cost, &sel.chained, 20, 0, &LocalOptions::default()).unwrap().cost;
        let (_, best) = brute_force_signs(&g, 20, 0).unwrap();
        assert!(chosen <= best + 1e-6 * best.max(1.0), "{chosen} vs {best}");
    }

    #[test]
    fn assembled_cost_ignores_stored_signs() {
        let g = generate_synthetic(&InstanceConfig { n: 7, n_loops: 5, theta_max: 1.2, seed: 4 }).unwrap();
        let base = assemble_cost(&g, &quaternion_signs(&g).unwrap().signs).unwrap();
        for k in 0..g.num_edges() {
            let edges: Vec<_> = g
                .edges()
                .iter()
                .enumerate()
                .map(|(l, e)| (e.i, e.j, if l == k { -e.measurement } else { e.measurement }))
                .collect();
            let flipped = MeasurementGraph::new(g.n(), edges, None).unwrap();
            let sel = quaternion_signs(&flipped).unwrap();
            let cost = assemble_cost(&flipped, &sel.signs).unwrap();
            let tree_edge = sel.tree.edges.contains(&k);
            if tree_edge {
                // the chained estimates absorb the flip: same optimum, the
                // polynomial differs by a sign change of one block
                continue;
            }
            assert_eq!(cost.quadratic(), base.quadratic(), "edge {k}");
            assert_eq!(cost.linear(), base.linear());
            assert_eq!(cost.constant(), base.constant());
        }
    }
}
