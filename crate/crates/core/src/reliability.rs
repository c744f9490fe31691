//! All-terminal reliability of a series-parallel network: the linear-time
//! evaluator over the composition sequence, and two exhaustive oracles that
//! recompute the same quantities by brute force for cross-checking.

use crate::envelopes::{f2, f3};
use crate::spgraph::{CompKind, Instance, UnionFind};
use crate::Error;

/// Per-node values produced by evaluating a selection mask.
///
/// All vectors are indexed by `node id - 1` and have length `2m - 1`.
/// `y[i]` is the reliability of the reduced block at node `i + 1`,
/// `omega[i]` is the correction factor a series step leaves behind
/// (1 everywhere else), and `omega_bar[i]` is the running product of
/// `omega` over ids `1..=i+1`. The network reliability is
/// `r = y[root] * omega_bar[root]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrace {
    pub y: Vec<f64>,
    pub omega: Vec<f64>,
    pub omega_bar: Vec<f64>,
    pub r: f64,
}

/// Evaluates the reliability of the subnetwork selected by `mask`.
///
/// Leaves start at `y = p_e` when selected and 0 otherwise. A parallel step
/// combines `y = f2(y_l, y_r)`; a series step combines `y = f3(y_l, y_r)`
/// and records `omega = f2(y_l, y_r)`. Every arithmetic step is a
/// composition of correctly-rounded monotone operations, so each trace
/// entry is nondecreasing (as floats, not just in exact arithmetic) when
/// any mask bit flips from 0 to 1.
pub fn evaluate(instance: &Instance, mask: &[bool]) -> Result<EvalTrace, Error> {
    let m = instance.m();
    if mask.len() != m {
        return Err(Error::InvalidArgument(format!(
            "mask has {} entries, instance has m = {m}",
            mask.len()
        )));
    }
    let nodes = instance.seq().node_count();
    let mut y = vec![0.0; nodes];
    let mut omega = vec![1.0; nodes];
    for e in 0..m {
        y[e] = if mask[e] { instance.edge_p(e + 1) } else { 0.0 };
    }
    for s in instance.seq().steps() {
        let (a, b) = (y[s.left - 1], y[s.right - 1]);
        let i = s.result - 1;
        match s.kind {
            CompKind::Parallel => {
                y[i] = f2(a, b);
            }
            CompKind::Series => {
                y[i] = f3(a, b);
                omega[i] = f2(a, b);
            }
        }
    }
    let mut omega_bar = vec![1.0; nodes];
    let mut running = 1.0;
    for i in 0..nodes {
        running *= omega[i];
        omega_bar[i] = running;
    }
    let r = y[nodes - 1] * omega_bar[nodes - 1];
    Ok(EvalTrace {
        y,
        omega,
        omega_bar,
        r,
    })
}

/// Largest `m` the exhaustive reliability oracle accepts.
pub const ORACLE_RELIABILITY_MAX_M: usize = 25;

/// Largest `m` the exhaustive optimization oracle accepts.
pub const ORACLE_OPTIMIZE_MAX_M: usize = 20;

/// Reliability of the selected subnetwork by enumerating all edge states.
///
/// The network is materialized as a concrete multigraph; each subset of the
/// selected edges contributes its probability when the up-edges connect all
/// vertices. A vertex left isolated counts as a disconnection. Terms are
/// accumulated with Kahan compensation in a fixed enumeration order.
pub fn oracle_reliability(instance: &Instance, mask: &[bool]) -> Result<f64, Error> {
    let m = instance.m();
    if m > ORACLE_RELIABILITY_MAX_M {
        return Err(Error::TooLarge {
            what: "oracle_reliability",
            limit: ORACLE_RELIABILITY_MAX_M,
            got: m,
        });
    }
    if mask.len() != m {
        return Err(Error::InvalidArgument(format!(
            "mask has {} entries, instance has m = {m}",
            mask.len()
        )));
    }
    let graph = instance.seq().materialize();
    let selected: Vec<usize> = (0..m).filter(|&e| mask[e]).collect();
    let k = selected.len();
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut uf = UnionFind::new(graph.n);
    for state in 0u64..(1u64 << k) {
        let mut weight = 1.0;
        for (bit, &e) in selected.iter().enumerate() {
            let p = instance.edge_p(e + 1);
            weight *= if state >> bit & 1 == 1 { p } else { 1.0 - p };
        }
        if weight == 0.0 {
            continue;
        }
        uf.reset();
        let mut parts = graph.n;
        for (bit, &e) in selected.iter().enumerate() {
            if state >> bit & 1 == 1 {
                let (_, u, v) = graph.edges[e];
                if uf.union(u, v) {
                    parts -= 1;
                }
            }
        }
        if parts == 1 {
            // Kahan step
            let t = weight - comp;
            let s = sum + t;
            comp = (s - sum) - t;
            sum = s;
        }
    }
    Ok(sum)
}

/// Exact argmax of [`evaluate`] over all masks satisfying the cardinality
/// budget and the extra rows, by full enumeration.
///
/// Ties go to the lexicographically smallest mask (edge 1 most significant).
/// Returns `None` when no mask satisfies the budget and the extra rows.
pub fn oracle_optimize(instance: &Instance) -> Result<Option<(Vec<bool>, f64)>, Error> {
    let m = instance.m();
    if m > ORACLE_OPTIMIZE_MAX_M {
        return Err(Error::TooLarge {
            what: "oracle_optimize",
            limit: ORACLE_OPTIMIZE_MAX_M,
            got: m,
        });
    }
    let budget = instance.budget() as u32;
    let mut best_mask = vec![false; m];
    let mut best_r = f64::NEG_INFINITY;
    let mut mask = vec![false; m];
    for v in 0u64..(1u64 << m) {
        if v.count_ones() > budget {
            continue;
        }
        // bit m-1 is edge 1 so that increasing v enumerates masks in
        // lexicographic order and strict improvement keeps the smallest
        for e in 0..m {
            mask[e] = v >> (m - 1 - e) & 1 == 1;
        }
        if !selection_feasible(instance, &mask) {
            continue;
        }
        let r = evaluate(instance, &mask)?.r;
        if r > best_r {
            best_r = r;
            best_mask.copy_from_slice(&mask);
        }
    }
    if best_r.is_finite() {
        Ok(Some((best_mask, best_r)))
    } else {
        Ok(None)
    }
}

/// Whether a mask satisfies the budget and every extra row. The 1e-9 slack
/// keeps row feasibility decisions consistent across the exact and LP-based
/// code paths.
pub fn selection_feasible(instance: &Instance, mask: &[bool]) -> bool {
    let count = mask.iter().filter(|&&b| b).count();
    if count > instance.budget() {
        return false;
    }
    for row in instance.extra_rows() {
        let lhs: f64 = row
            .coeffs
            .iter()
            .map(|&(e, c)| if mask[e - 1] { c } else { 0.0 })
            .sum();
        if lhs > row.rhs + 1e-9 {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spgraph::{self, generate, CompKind, Composition, CompositionSequence, EdgeDef};

    fn pair(kind: CompKind, p: f64) -> Instance {
        let edges = (1..=2).map(|id| EdgeDef { id, p }).collect();
        let steps = vec![Composition {
            result: 3,
            kind,
            left: 1,
            right: 2,
        }];
        let seq = CompositionSequence::new(2, steps).unwrap();
        Instance::new(edges, seq, 1.0, Vec::new()).unwrap()
    }

    fn triangle(p: f64) -> Instance {
        let edges = (1..=3).map(|id| EdgeDef { id, p }).collect();
        let steps = vec![
            Composition {
                result: 4,
                kind: CompKind::Series,
                left: 1,
                right: 2,
            },
            Composition {
                result: 5,
                kind: CompKind::Parallel,
                left: 4,
                right: 3,
            },
        ];
        let seq = CompositionSequence::new(3, steps).unwrap();
        Instance::new(edges, seq, 1.0, Vec::new()).unwrap()
    }

    fn random_mask(m: usize, bits: u64) -> Vec<bool> {
        (0..m).map(|e| bits >> e & 1 == 1).collect()
    }

    #[test]
    fn series_pair_anchor() {
        let t = evaluate(&pair(CompKind::Series, 0.9), &[true, true]).unwrap();
        assert!((t.r - 0.81).abs() <= 1e-12, "r = {}", t.r);
        assert!((t.y[2] - 0.81 / 0.99).abs() <= 1e-12, "y3 = {}", t.y[2]);
        assert!((t.omega[2] - 0.99).abs() <= 1e-15);
        assert!((t.omega_bar[2] - 0.99).abs() <= 1e-15);
    }

    #[test]
    fn parallel_pair_anchor() {
        let t = evaluate(&pair(CompKind::Parallel, 0.9), &[true, true]).unwrap();
        assert!((t.r - 0.99).abs() <= 1e-12, "r = {}", t.r);
        assert_eq!(t.omega[2], 1.0);
    }

    #[test]
    fn triangle_anchor() {
        let p: f64 = 0.9;
        let t = evaluate(&triangle(p), &[true, true, true]).unwrap();
        assert!((t.r - 0.972).abs() <= 1e-12, "r = {}", t.r);
        // independent closed form: all three up, or exactly one down
        let closed = p.powi(3) + 3.0 * p.powi(2) * (1.0 - p);
        assert!((t.r - closed).abs() <= 1e-12);
    }

    #[test]
    fn trace_shape_and_running_product() {
        let inst = generate(8, 5).unwrap();
        let t = evaluate(&inst, &vec![true; 8]).unwrap();
        assert_eq!(t.y.len(), 15);
        assert_eq!(t.omega.len(), 15);
        assert_eq!(t.omega_bar.len(), 15);
        let mut running = 1.0;
        for i in 0..15 {
            running *= t.omega[i];
            assert_eq!(t.omega_bar[i], running);
        }
        assert_eq!(t.r, t.y[14] * t.omega_bar[14]);
    }

    #[test]
    fn empty_mask_has_zero_reliability() {
        let inst = triangle(0.9);
        let t = evaluate(&inst, &[false, false, false]).unwrap();
        assert_eq!(t.r, 0.0);
        assert_eq!(
            oracle_reliability(&inst, &[false, false, false]).unwrap(),
            0.0
        );
    }

    #[test]
    fn single_edge_leaves_vertices_isolated() {
        // edge 3 alone spans only two of the three vertices
        let inst = triangle(0.9);
        let t = evaluate(&inst, &[false, false, true]).unwrap();
        assert_eq!(t.r, 0.0);
        assert_eq!(oracle_reliability(&inst, &[false, false, true]).unwrap(), 0.0);
    }

    #[test]
    fn mask_length_is_checked() {
        let inst = triangle(0.9);
        assert!(evaluate(&inst, &[true, true]).is_err());
        assert!(oracle_reliability(&inst, &[true]).is_err());
    }

    #[test]
    fn evaluate_matches_oracle_on_random_instances() {
        let mut worst = 0.0f64;
        for seed in 0..30u64 {
            let m = 2 + (seed % 9) as usize;
            let inst = generate(m, seed).unwrap();
            for j in 0..4u64 {
                let mask = random_mask(m, seed.wrapping_mul(0x9E37) + j * 0x79B9);
                let fast = evaluate(&inst, &mask).unwrap().r;
                let slow = oracle_reliability(&inst, &mask).unwrap();
                worst = worst.max((fast - slow).abs());
            }
        }
        assert!(worst <= 1e-10, "worst deviation {worst}");
    }

    #[test]
    fn triangle_oracle_matches_closed_form() {
        let r = oracle_reliability(&triangle(0.9), &[true, true, true]).unwrap();
        assert!((r - 0.972).abs() <= 1e-12, "r = {r}");
    }

    #[test]
    fn flips_never_decrease_any_trace_entry() {
        for seed in 0..40u64 {
            let m = 2 + (seed % 10) as usize;
            let inst = generate(m, seed).unwrap();
            let mut mask = random_mask(m, seed.wrapping_mul(0xA5A5) + 1);
            if let Some(off) = (0..m).find(|&e| !mask[e]) {
                let before = evaluate(&inst, &mask).unwrap();
                mask[off] = true;
                let after = evaluate(&inst, &mask).unwrap();
                for i in 0..inst.seq().node_count() {
                    assert!(after.y[i] >= before.y[i], "y[{i}] decreased");
                    assert!(after.omega[i] >= before.omega[i], "omega[{i}] decreased");
                    assert!(
                        after.omega_bar[i] >= before.omega_bar[i],
                        "omega_bar[{i}] decreased"
                    );
                }
                assert!(after.r >= before.r, "r decreased");
            }
        }
    }

    #[test]
    fn oracle_reliability_size_guard() {
        let inst = generate(26, 0).unwrap();
        let err = oracle_reliability(&inst, &vec![true; 26]).unwrap_err();
        assert!(matches!(err, Error::TooLarge { limit: 25, .. }), "{err}");
    }

    #[test]
    fn oracle_optimize_size_guard() {
        let inst = generate(21, 0).unwrap();
        let err = oracle_optimize(&inst).unwrap_err();
        assert!(matches!(err, Error::TooLarge { limit: 20, .. }), "{err}");
    }

    #[test]
    fn oracle_optimize_triangle_unrestricted() {
        let (mask, r) = oracle_optimize(&triangle(0.9)).unwrap().expect("feasible");
        assert_eq!(spgraph::mask_to_string(&mask), "111");
        assert!((r - 0.972).abs() <= 1e-12);
    }

    #[test]
    fn oracle_optimize_budget_two_on_triangle() {
        // any two edges give mathematical reliability 0.81; the float values
        // differ in the last ulp, and {1,3} avoids the series rounding
        let inst = triangle(0.9).with_alpha(2.0 / 3.0).unwrap();
        assert_eq!(inst.budget(), 2);
        let (mask, r) = oracle_optimize(&inst).unwrap().expect("feasible");
        assert!((r - 0.81).abs() <= 1e-12, "r = {r}");
        let direct = evaluate(&inst, &mask).unwrap().r;
        assert_eq!(r, direct);
        // lexicographically smallest among the float-maximal masks
        let all: Vec<(Vec<bool>, f64)> = (0..8u64)
            .map(|v| {
                let mask: Vec<bool> = (0..3).map(|e| v >> (2 - e) & 1 == 1).collect();
                let r = evaluate(&inst, &mask).unwrap().r;
                (mask, r)
            })
            .filter(|(mask, _)| selection_feasible(&inst, mask))
            .collect();
        let best = all.iter().map(|&(_, r)| r).fold(f64::NEG_INFINITY, f64::max);
        let first = all.iter().find(|&&(_, r)| r == best).unwrap();
        assert_eq!(mask, first.0);
        assert_eq!(r, best);
    }

    #[test]
    fn oracle_optimize_honors_extra_rows() {
        let inst = triangle(0.9)
            .with_extra_rows(vec![crate::spgraph::ExtraRow {
                coeffs: vec![(1, 1.0), (2, 1.0)],
                rhs: 1.0,
            }])
            .unwrap();
        let (mask, r) = oracle_optimize(&inst).unwrap().expect("feasible");
        assert!(!(mask[0] && mask[1]), "row violated: {mask:?}");
        assert!((r - 0.81).abs() <= 1e-12, "r = {r}");
    }
}
