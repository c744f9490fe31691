//! Bivariate composition functions, their concave overestimators, cut
//! generators used by the LP relaxation, and interval propagation of node
//! bounds under partial edge fixings.
//!
//! Three functions drive everything. `f1(x, y) = xy` and
//! `f2(x, y) = x + y - xy` are the textbook bilinear cases with McCormick
//! overestimators. `f3(x, y) = xy / (x + y - xy)`, the series composition,
//! is linear along rays through the origin and concave on each of two
//! pieces split by the ray `x / ux = y / uy`; its concave envelope over
//! `[0, ux] x [0, uy]` is the pointwise minimum of the two pieces, and every
//! tangent plane of a piece passes through the origin.

use crate::spgraph::{CompKind, Instance};
use crate::Error;

/// Product composition `xy` (both blocks must operate).
pub fn f1(x: f64, y: f64) -> f64 {
    debug_assert!(unit(x) && unit(y), "f1 domain is the unit square");
    x * y
}

/// Parallel composition `1 - (1-x)(1-y)`.
pub fn f2(x: f64, y: f64) -> f64 {
    debug_assert!(unit(x) && unit(y), "f2 domain is the unit square");
    1.0 - (1.0 - x) * (1.0 - y)
}

/// Series composition `xy / (x + y - xy)`, defined as 0 when either block
/// is certainly down.
///
/// Computed as `1 / (1/x + 1/y - 1)`: every operation is correctly rounded
/// and monotone, so the float result is nondecreasing in each argument.
/// Exact-comparison monotonicity checks downstream rely on this form.
pub fn f3(x: f64, y: f64) -> f64 {
    debug_assert!(unit(x) && unit(y), "f3 domain is the unit square");
    if x <= 0.0 || y <= 0.0 {
        return 0.0;
    }
    1.0 / (1.0 / x + 1.0 / y - 1.0)
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// `xy / (x + y - xy)` in direct form; used for cut constants where the
/// derivation is written against this expression.
fn f3_direct(x: f64, y: f64) -> f64 {
    if x <= 0.0 || y <= 0.0 {
        return 0.0;
    }
    x * y / (x + y * (1.0 - x))
}

/// Variable bounds for one bivariate term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundBox {
    pub lx: f64,
    pub ux: f64,
    pub ly: f64,
    pub uy: f64,
}

impl BoundBox {
    pub fn new(lx: f64, ux: f64, ly: f64, uy: f64) -> Self {
        let b = BoundBox { lx, ux, ly, uy };
        debug_assert!(b.is_valid(), "degenerate box {b:?}");
        b
    }

    pub fn is_valid(&self) -> bool {
        0.0 <= self.lx && self.lx <= self.ux && self.ux <= 1.0
            && 0.0 <= self.ly && self.ly <= self.uy && self.uy <= 1.0
    }
}

/// Where a cut is valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutScope {
    /// Valid for the whole problem.
    Global,
    /// Valid only inside the branch tree node it was derived at (and its
    /// descendants); the payload is that node's id.
    LocalToSubtree(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutSense {
    Le,
    Eq,
}

/// A linear row `sum(c_j * v_j) <= rhs` (or `=` for local equality rows)
/// over LP columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCut {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: CutSense,
    pub rhs: f64,
    pub scope: CutScope,
}

impl LinearCut {
    fn le(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        LinearCut {
            coeffs,
            sense: CutSense::Le,
            rhs,
            scope: CutScope::Global,
        }
    }

    pub fn with_scope(mut self, scope: CutScope) -> Self {
        self.scope = scope;
        self
    }

    /// Left-hand side at a point (columns outside the point count as 0).
    pub fn lhs_at(&self, point: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .map(|&(j, c)| c * point.get(j).copied().unwrap_or(0.0))
            .sum()
    }

    /// Violation of the row at a point (positive means violated).
    pub fn violation_at(&self, point: &[f64]) -> f64 {
        match self.sense {
            CutSense::Le => self.lhs_at(point) - self.rhs,
            CutSense::Eq => (self.lhs_at(point) - self.rhs).abs(),
        }
    }

    /// Rejects rows whose coefficients would poison the LP numerically.
    pub fn is_numerically_safe(&self) -> bool {
        self.rhs.is_finite()
            && self
                .coeffs
                .iter()
                .all(|&(_, c)| c.is_finite() && c.abs() <= 1e8)
    }
}

/// The two McCormick overestimators of `z = xy` over a box, written on the
/// LP columns `(x, y, z)`:
/// `z <= ux*y + ly*x - ux*ly` and `z <= uy*x + lx*y - lx*uy`.
pub fn mccormick_f1_cuts(bx: BoundBox, x: usize, y: usize, z: usize) -> [LinearCut; 2] {
    debug_assert!(bx.is_valid());
    [
        LinearCut::le(vec![(z, 1.0), (x, -bx.ly), (y, -bx.ux)], -bx.ux * bx.ly),
        LinearCut::le(vec![(z, 1.0), (x, -bx.uy), (y, -bx.lx)], -bx.lx * bx.uy),
    ]
}

/// The two overestimators of `z = f2(x, y)` over a box:
/// `z <= x(1-ly) + y(1-lx) + lx*ly` and `z <= x(1-uy) + y(1-ux) + ux*uy`.
/// (f2 is bilinear with a negative mixed term, so these are its McCormick
/// upper pieces; each is tight on two opposite box corners.)
pub fn f2_overestimator_cuts(bx: BoundBox, x: usize, y: usize, z: usize) -> [LinearCut; 2] {
    debug_assert!(bx.is_valid());
    [
        LinearCut::le(
            vec![(z, 1.0), (x, -(1.0 - bx.ly)), (y, -(1.0 - bx.lx))],
            bx.lx * bx.ly,
        ),
        LinearCut::le(
            vec![(z, 1.0), (x, -(1.0 - bx.uy)), (y, -(1.0 - bx.ux))],
            bx.ux * bx.uy,
        ),
    ]
}

/// Concave envelope of `f3` over `[0, ux] x [0, uy]`, the pointwise minimum
/// of two concave pieces that agree along the ray `x/ux = y/uy`:
/// `xy / (x + y - ux*y)` above the ray and `xy / (x + y - x*uy)` below it.
///
/// Inputs are clamped into the box so LP points that stray by a rounding
/// tolerance are still accepted. On the unit box the envelope is exactly
/// `min(x, y)` and the code returns that without rounding.
pub fn f3_envelope(x: f64, y: f64, ux: f64, uy: f64) -> f64 {
    debug_assert!(unit(ux) && unit(uy));
    if ux <= 0.0 || uy <= 0.0 {
        return 0.0;
    }
    let x = x.clamp(0.0, ux);
    let y = y.clamp(0.0, uy);
    if x == 0.0 && y == 0.0 {
        return 0.0;
    }
    // piece selection by cross-multiplication; ties take the first piece
    if x * uy >= y * ux {
        if ux == 1.0 {
            y
        } else {
            x * y / (x + (1.0 - ux) * y)
        }
    } else if uy == 1.0 {
        x
    } else {
        x * y / ((1.0 - uy) * x + y)
    }
}

/// Gradient of the active envelope piece at `(x, y)`, which must not be the
/// origin (the envelope has a kink there).
pub fn f3_envelope_gradient(x: f64, y: f64, ux: f64, uy: f64) -> (f64, f64) {
    debug_assert!(unit(ux) && unit(uy) && ux > 0.0 && uy > 0.0);
    let x = x.clamp(0.0, ux);
    let y = y.clamp(0.0, uy);
    debug_assert!(x > 0.0 || y > 0.0, "gradient undefined at the origin");
    if x * uy >= y * ux {
        if ux == 1.0 {
            return (0.0, 1.0);
        }
        let d = x + (1.0 - ux) * y;
        ((1.0 - ux) * (y / d) * (y / d), (x / d) * (x / d))
    } else {
        if uy == 1.0 {
            return (1.0, 0.0);
        }
        let d = (1.0 - uy) * x + y;
        ((y / d) * (y / d), (1.0 - uy) * (x / d) * (x / d))
    }
}

/// The two cuts `z <= x` and `z <= y`: tangents of the envelope at
/// `(ux, 0)` and `(0, uy)`, valid on any box and always part of the static
/// relaxation of a series step.
pub fn f3_default_cuts(x: usize, y: usize, z: usize) -> [LinearCut; 2] {
    [
        LinearCut::le(vec![(z, 1.0), (x, -1.0)], 0.0),
        LinearCut::le(vec![(z, 1.0), (y, -1.0)], 0.0),
    ]
}

/// Tangent cut of the concave envelope of `f3` at `(xs, ys)`, written on
/// the LP columns `(x, y, z)`.
///
/// Each envelope piece is homogeneous of degree 1, so by Euler's relation
/// the tangent plane passes through the origin: the cut is
/// `z <= gx*x + gy*y` with gradient `(gx, gy)` of the active piece, has
/// constant term exactly 0, and is tight at `(xs, ys)`.
pub fn f3_tangent_cut(
    xs: f64,
    ys: f64,
    ux: f64,
    uy: f64,
    x: usize,
    y: usize,
    z: usize,
) -> Result<LinearCut, Error> {
    debug_assert!(unit(ux) && unit(uy));
    if ux <= 0.0 || uy <= 0.0 {
        // one factor is fixed absent: the step value collapses to 0
        return Ok(LinearCut::le(vec![(z, 1.0)], 0.0));
    }
    let xs = xs.clamp(0.0, ux);
    let ys = ys.clamp(0.0, uy);
    if xs == 0.0 && ys == 0.0 {
        return Err(Error::InvalidArgument(
            "tangent point must not be the origin".into(),
        ));
    }
    let (gx, gy) = f3_envelope_gradient(xs, ys, ux, uy);
    Ok(LinearCut::le(vec![(z, 1.0), (x, -gx), (y, -gy)], 0.0))
}

/// Tangent of the univariate slice `f3(p, .)` at `ys`, for a series step
/// whose other operand is an edge fixed present with probability `p`:
/// `z <= (p/(ys + p - ys*p))^2 * (y - ys) + f3(p, ys)`.
///
/// Concavity of the slice makes this valid for all `y` in [0, 1]; it is
/// tight at `ys`. `p = 0` is rejected (an absent edge pins the step to 0
/// through its upper bound instead).
pub fn f3_fixed_edge_cut(p: f64, ys: f64, y: usize, z: usize) -> Result<LinearCut, Error> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fixed-edge cut needs p in (0, 1], got {p}"
        )));
    }
    if !unit(ys) {
        return Err(Error::InvalidArgument(format!(
            "tangent ordinate {ys} outside [0, 1]"
        )));
    }
    let d = p + ys * (1.0 - p);
    let s = (p / d) * (p / d);
    let v = f3_direct(p, ys);
    Ok(LinearCut::le(vec![(z, 1.0), (y, -s)], v - s * ys))
}

/// Two overestimators of `f3` valid on `[lj, uj] x [lk, uk]` and tight at
/// the corner `(lj, lk)`, built from partial derivatives at adjacent
/// corners (each partial of `f3` grows in the other coordinate, so
/// evaluating it at the far corner keeps the plane above the surface):
///
/// `z <= dx(lj, lk)*(x - lj) + dy(uj, lk)*(y - lk) + f3(lj, lk)` and the
/// mirrored `z <= dx(lj, uk)*(x - lj) + dy(lj, lk)*(y - lk) + f3(lj, lk)`,
/// where `dx(a, b) = (b/(a + b - ab))^2` and `dy(a, b) = (a/(a + b - ab))^2`.
///
/// Returns `None` at the degenerate corner `(0, 0)` where `f3` has no
/// tangent. These are only useful once branching has raised lower bounds,
/// so callers scope them to the subtree they were derived in.
pub fn f3_corner_cuts(
    lj: f64,
    uj: f64,
    lk: f64,
    uk: f64,
    x: usize,
    y: usize,
    z: usize,
) -> Option<[LinearCut; 2]> {
    debug_assert!(0.0 <= lj && lj <= uj && uj <= 1.0);
    debug_assert!(0.0 <= lk && lk <= uk && uk <= 1.0);
    if lj <= 0.0 && lk <= 0.0 {
        return None;
    }
    let base = f3_direct(lj, lk);
    let d00 = lj + lk * (1.0 - lj);
    let dx_low = (lk / d00) * (lk / d00);
    let dy_low = (lj / d00) * (lj / d00);
    let d10 = uj + lk * (1.0 - uj);
    let dy_far = (uj / d10) * (uj / d10);
    let d01 = lj + uk * (1.0 - lj);
    let dx_far = (uk / d01) * (uk / d01);
    let cut_a = LinearCut::le(
        vec![(z, 1.0), (x, -dx_low), (y, -dy_far)],
        base - dx_low * lj - dy_far * lk,
    );
    let cut_b = LinearCut::le(
        vec![(z, 1.0), (x, -dx_far), (y, -dy_low)],
        base - dx_far * lj - dy_low * lk,
    );
    Some([cut_a, cut_b])
}

/// Status of one edge inside a branch tree node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeFix {
    Free,
    Zero,
    One,
}

/// Interval bounds for every node value of the composition sequence,
/// indexed by `node id - 1` like an evaluation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSet {
    pub l: Vec<f64>,
    pub u: Vec<f64>,
    pub l_omega: Vec<f64>,
    pub u_omega: Vec<f64>,
    pub l_omega_bar: Vec<f64>,
    pub u_omega_bar: Vec<f64>,
}

impl BoundSet {
    /// Number of nodes covered.
    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty()
    }
}

/// Propagates edge fixings to interval bounds on every trace entry.
///
/// Leaves get `[0 or p, p or 0]` from their fix; parallel and series steps
/// apply `f2`/`f3` to the endpoint bounds (both are monotone, so endpoints
/// map to endpoints); the `omega_bar` chain multiplies up the per-step
/// correction bounds in sequence order. Because the very same float
/// combinators evaluate masks, any trace consistent with the fixing lies
/// inside these bounds under exact float comparison, and fixing everything
/// collapses the intervals onto the trace itself.
pub fn propagate_bounds(instance: &Instance, fixed: &[EdgeFix]) -> BoundSet {
    let m = instance.m();
    assert_eq!(fixed.len(), m, "one fix entry per edge");
    let nodes = instance.seq().node_count();
    let mut l = vec![0.0; nodes];
    let mut u = vec![0.0; nodes];
    let mut l_omega = vec![1.0; nodes];
    let mut u_omega = vec![1.0; nodes];
    for e in 0..m {
        let p = instance.edge_p(e + 1);
        l[e] = if fixed[e] == EdgeFix::One { p } else { 0.0 };
        u[e] = if fixed[e] == EdgeFix::Zero { 0.0 } else { p };
    }
    for s in instance.seq().steps() {
        let i = s.result - 1;
        let (lj, lk) = (l[s.left - 1], l[s.right - 1]);
        let (uj, uk) = (u[s.left - 1], u[s.right - 1]);
        match s.kind {
            CompKind::Parallel => {
                l[i] = f2(lj, lk);
                u[i] = f2(uj, uk);
            }
            CompKind::Series => {
                l[i] = f3(lj, lk);
                u[i] = f3(uj, uk);
                l_omega[i] = f2(lj, lk);
                u_omega[i] = f2(uj, uk);
            }
        }
    }
    let mut l_omega_bar = vec![1.0; nodes];
    let mut u_omega_bar = vec![1.0; nodes];
    let (mut rl, mut ru) = (1.0, 1.0);
    for i in 0..nodes {
        rl *= l_omega[i];
        ru *= u_omega[i];
        l_omega_bar[i] = rl;
        u_omega_bar[i] = ru;
    }
    BoundSet {
        l,
        u,
        l_omega,
        u_omega,
        l_omega_bar,
        u_omega_bar,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reliability::evaluate;
    use crate::spgraph::{generate, SplitMix64};
    use proptest::prelude::*;

    #[test]
    fn composition_function_values() {
        assert_eq!(f1(0.5, 0.5), 0.25);
        assert_eq!(f2(0.9, 0.9), 0.99);
        assert!((f3(0.5, 0.5) - 1.0 / 3.0).abs() == 0.0);
        assert_eq!(f3(0.0, 0.0), 0.0);
        assert_eq!(f3(0.0, 0.7), 0.0);
        assert_eq!(f3(1.0, 1.0), 1.0);
    }

    #[test]
    fn mccormick_f1_on_unit_box_is_z_le_x_and_y() {
        let cuts = mccormick_f1_cuts(BoundBox::new(0.0, 1.0, 0.0, 1.0), 0, 1, 2);
        assert_eq!(cuts[0].coeffs, vec![(2, 1.0), (0, -0.0), (1, -1.0)]);
        assert_eq!(cuts[0].rhs, 0.0);
        assert_eq!(cuts[1].coeffs, vec![(2, 1.0), (0, -1.0), (1, -0.0)]);
    }

    #[test]
    fn mccormick_f1_dominates_product_on_grid() {
        let bx = BoundBox::new(0.2, 0.8, 0.1, 0.9);
        let cuts = mccormick_f1_cuts(bx, 0, 1, 2);
        for i in 0..=20 {
            for j in 0..=20 {
                let x = bx.lx + (bx.ux - bx.lx) * i as f64 / 20.0;
                let y = bx.ly + (bx.uy - bx.ly) * j as f64 / 20.0;
                for cut in &cuts {
                    // cut is z - ax*x - ay*y <= rhs; at z = f1 it must hold
                    let v = cut.violation_at(&[x, y, f1(x, y)]);
                    assert!(v <= 1e-12, "violated by {v} at ({x}, {y})");
                }
            }
        }
        // first cut tight where x = ux
        let y = 0.4;
        let v = cuts[0].violation_at(&[bx.ux, y, f1(bx.ux, y)]);
        assert!(v.abs() <= 1e-15);
    }

    #[test]
    fn f2_cuts_on_zero_lower_bounds_reduce_to_sum() {
        let bx = BoundBox::new(0.0, 1.0, 0.0, 1.0);
        let cuts = f2_overestimator_cuts(bx, 0, 1, 2);
        // z <= x + y
        assert_eq!(cuts[0].coeffs, vec![(2, 1.0), (0, -1.0), (1, -1.0)]);
        assert_eq!(cuts[0].rhs, 0.0);
        // z <= 1
        assert_eq!(cuts[1].coeffs, vec![(2, 1.0), (0, -0.0), (1, -0.0)]);
        assert_eq!(cuts[1].rhs, 1.0);
    }

    #[test]
    fn f2_cuts_dominate_and_touch_corners() {
        let bx = BoundBox::new(0.3, 0.8, 0.2, 0.95);
        let cuts = f2_overestimator_cuts(bx, 0, 1, 2);
        for i in 0..=20 {
            for j in 0..=20 {
                let x = bx.lx + (bx.ux - bx.lx) * i as f64 / 20.0;
                let y = bx.ly + (bx.uy - bx.ly) * j as f64 / 20.0;
                for cut in &cuts {
                    let v = cut.violation_at(&[x, y, f2(x, y)]);
                    assert!(v <= 1e-12, "violated by {v} at ({x}, {y})");
                }
            }
        }
        let at_low = cuts[0].violation_at(&[bx.lx, bx.ly, f2(bx.lx, bx.ly)]);
        let at_high = cuts[1].violation_at(&[bx.ux, bx.uy, f2(bx.ux, bx.uy)]);
        assert!(at_low.abs() <= 1e-15 && at_high.abs() <= 1e-15);
    }

    #[test]
    fn envelope_piece_example() {
        let v = f3_envelope(0.4, 0.2, 0.8, 0.9);
        // above the split ray: 0.4*0.9 >= 0.2*0.8, so piece 1 applies
        assert!((v - 0.08 / 0.44).abs() <= 1e-15, "v = {v}");
    }

    #[test]
    fn envelope_on_unit_box_is_exactly_min() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..200 {
            let x = rng.unit();
            let y = rng.unit();
            assert_eq!(f3_envelope(x, y, 1.0, 1.0), x.min(y));
        }
    }

    #[test]
    fn envelope_is_exact_on_upper_boundaries() {
        let (ux, uy) = (0.8, 0.9);
        for i in 0..=50 {
            let y = uy * i as f64 / 50.0;
            let diff = (f3_envelope(ux, y, ux, uy) - f3(ux, y)).abs();
            assert!(diff <= 1e-12, "x edge, y = {y}, diff = {diff}");
            let x = ux * i as f64 / 50.0;
            let diff = (f3_envelope(x, uy, ux, uy) - f3(x, uy)).abs();
            assert!(diff <= 1e-12, "y edge, x = {x}, diff = {diff}");
        }
    }

    #[test]
    fn envelope_is_homogeneous_along_rays() {
        let (ux, uy) = (0.7, 0.95);
        let mut rng = SplitMix64::new(11);
        for _ in 0..200 {
            let x = ux * rng.unit();
            let y = uy * rng.unit();
            if x == 0.0 && y == 0.0 {
                continue;
            }
            let v = f3_envelope(x, y, ux, uy);
            for t in [0.25, 0.5, 0.75] {
                let vt = f3_envelope(t * x, t * y, ux, uy);
                assert!((vt - t * v).abs() <= 1e-12, "t = {t}");
            }
        }
    }

    #[test]
    fn envelope_collapses_when_a_factor_is_absent() {
        assert_eq!(f3_envelope(0.0, 0.5, 0.0, 0.9), 0.0);
        assert_eq!(f3_envelope(0.5, 0.0, 0.8, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn envelope_dominates_f3_and_is_min_of_pieces(
            ux in 0.05f64..1.0,
            uy in 0.05f64..1.0,
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let x = a * ux;
            let y = b * uy;
            let env = f3_envelope(x, y, ux, uy);
            prop_assert!(env >= f3(x, y) - 1e-12);
            if x > 0.0 || y > 0.0 {
                let piece1 = x * y / (x + (1.0 - ux) * y);
                let piece2 = x * y / ((1.0 - uy) * x + y);
                let lo = piece1.min(piece2);
                prop_assert!((env - lo).abs() <= 1e-12 * (1.0 + lo.abs()));
            }
        }

        #[test]
        fn envelope_midpoint_concavity(
            ux in 0.05f64..1.0,
            uy in 0.05f64..1.0,
            a1 in 0.0f64..1.0,
            b1 in 0.0f64..1.0,
            a2 in 0.0f64..1.0,
            b2 in 0.0f64..1.0,
        ) {
            let (x1, y1) = (a1 * ux, b1 * uy);
            let (x2, y2) = (a2 * ux, b2 * uy);
            let mid = f3_envelope(0.5 * (x1 + x2), 0.5 * (y1 + y2), ux, uy);
            let avg = 0.5 * f3_envelope(x1, y1, ux, uy) + 0.5 * f3_envelope(x2, y2, ux, uy);
            prop_assert!(mid >= avg - 1e-9, "mid {mid} < avg {avg}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences_off_the_ray() {
        let (ux, uy) = (0.8, 0.9);
        let h = 1e-6;
        let mut rng = SplitMix64::new(23);
        let mut checked = 0;
        while checked < 100 {
            let x = ux * (0.05 + 0.9 * rng.unit());
            let y = uy * (0.05 + 0.9 * rng.unit());
            // skip points whose finite-difference stencil straddles the
            // piece boundary or the box edge
            if (x / ux - y / uy).abs() < 1e-3 || x + h >= ux || y + h >= uy {
                continue;
            }
            let (gx, gy) = f3_envelope_gradient(x, y, ux, uy);
            let nx = (f3_envelope(x + h, y, ux, uy) - f3_envelope(x - h, y, ux, uy)) / (2.0 * h);
            let ny = (f3_envelope(x, y + h, ux, uy) - f3_envelope(x, y - h, ux, uy)) / (2.0 * h);
            assert!((gx - nx).abs() <= 1e-6, "dx: {gx} vs {nx} at ({x}, {y})");
            assert!((gy - ny).abs() <= 1e-6, "dy: {gy} vs {ny} at ({x}, {y})");
            assert!(nx >= 0.0 && ny >= 0.0, "envelope must be nondecreasing");
            checked += 1;
        }
    }

    #[test]
    fn tangent_cut_at_axis_corners_gives_default_cuts() {
        let (ux, uy) = (0.8, 0.9);
        let at_x_corner = f3_tangent_cut(ux, 0.0, ux, uy, 0, 1, 2).unwrap();
        assert_eq!(at_x_corner.coeffs, vec![(2, 1.0), (0, -0.0), (1, -1.0)]);
        assert_eq!(at_x_corner.rhs, 0.0);
        let at_y_corner = f3_tangent_cut(0.0, uy, ux, uy, 0, 1, 2).unwrap();
        assert_eq!(at_y_corner.coeffs, vec![(2, 1.0), (0, -1.0), (1, -0.0)]);
    }

    #[test]
    fn tangent_cut_is_tight_has_zero_constant_and_dominates() {
        let mut rng = SplitMix64::new(31);
        for _ in 0..200 {
            let ux = 0.05 + 0.95 * rng.unit();
            let uy = 0.05 + 0.95 * rng.unit();
            let xs = ux * rng.unit();
            let ys = uy * rng.unit();
            if xs == 0.0 && ys == 0.0 {
                continue;
            }
            let cut = f3_tangent_cut(xs, ys, ux, uy, 0, 1, 2).unwrap();
            assert_eq!(cut.rhs, 0.0, "tangent cuts pass through the origin");
            let at_point = cut.violation_at(&[xs, ys, f3_envelope(xs, ys, ux, uy)]);
            assert!(at_point.abs() <= 1e-12, "not tight: {at_point}");
            for i in 0..=20 {
                for j in 0..=20 {
                    let x = ux * i as f64 / 20.0;
                    let y = uy * j as f64 / 20.0;
                    let v = cut.violation_at(&[x, y, f3(x, y)]);
                    assert!(v <= 1e-9, "cut under f3 by {v}");
                }
            }
        }
    }

    #[test]
    fn tangent_cut_rejects_the_origin() {
        assert!(f3_tangent_cut(0.0, 0.0, 0.8, 0.9, 0, 1, 2).is_err());
    }

    #[test]
    fn tangent_cut_collapses_when_a_factor_is_absent() {
        let cut = f3_tangent_cut(0.0, 0.5, 0.0, 0.9, 0, 1, 2).unwrap();
        assert_eq!(cut.coeffs, vec![(2, 1.0)]);
        assert_eq!(cut.rhs, 0.0);
    }

    #[test]
    fn fixed_edge_cut_with_certain_edge_is_z_le_y() {
        let cut = f3_fixed_edge_cut(1.0, 0.4, 1, 2).unwrap();
        assert_eq!(cut.coeffs, vec![(2, 1.0), (1, -1.0)]);
        assert_eq!(cut.rhs, 0.0);
    }

    #[test]
    fn fixed_edge_cut_at_zero_has_unit_slope() {
        // slice tangent at ys = 0: slope (p/p)^2 = 1, so z <= y
        let cut = f3_fixed_edge_cut(0.95, 0.0, 1, 2).unwrap();
        assert_eq!(cut.coeffs, vec![(2, 1.0), (1, -1.0)]);
        assert_eq!(cut.rhs, 0.0);
    }

    #[test]
    fn fixed_edge_cut_dominates_slice_and_is_tight() {
        let mut rng = SplitMix64::new(41);
        for _ in 0..200 {
            let p = 0.05 + 0.95 * rng.unit();
            let ys = rng.unit();
            let cut = f3_fixed_edge_cut(p, ys, 1, 2).unwrap();
            let at_point = cut.violation_at(&[0.0, ys, f3(p, ys)]);
            assert!(at_point.abs() <= 1e-9, "not tight: {at_point}");
            for j in 0..=50 {
                let y = j as f64 / 50.0;
                let v = cut.violation_at(&[0.0, y, f3(p, y)]);
                assert!(v <= 1e-9, "under the slice by {v} at y = {y}");
            }
        }
    }

    #[test]
    fn fixed_edge_cut_rejects_absent_edge() {
        assert!(f3_fixed_edge_cut(0.0, 0.5, 1, 2).is_err());
    }

    #[test]
    fn corner_cut_coefficients_on_a_known_box() {
        let [a, b] = f3_corner_cuts(0.3, 0.8, 0.4, 0.9, 0, 1, 2).unwrap();
        // dx at (0.3, 0.4) = 0.16/0.3364, dy at (0.8, 0.4) = 0.64/0.7744,
        // dx at (0.3, 0.9) = 0.81/0.8649, dy at (0.3, 0.4) = 0.09/0.3364,
        // constant base f3(0.3, 0.4) = 0.12/0.58
        let base = 0.12 / 0.58;
        assert!((a.coeffs[1].1 + 0.16 / 0.3364).abs() <= 1e-15);
        assert!((a.coeffs[2].1 + 0.64 / 0.7744).abs() <= 1e-15);
        assert!((a.rhs - (base - (0.16 / 0.3364) * 0.3 - (0.64 / 0.7744) * 0.4)).abs() <= 1e-15);
        assert!((b.coeffs[1].1 + 0.81 / 0.8649).abs() <= 1e-15);
        assert!((b.coeffs[2].1 + 0.09 / 0.3364).abs() <= 1e-15);
    }

    #[test]
    fn corner_cuts_dominate_f3_locally_and_touch_the_corner() {
        let mut rng = SplitMix64::new(53);
        for _ in 0..200 {
            let lj = 0.3 * rng.unit();
            let lk = 0.3 * rng.unit();
            if lj == 0.0 && lk == 0.0 {
                continue;
            }
            let uj = lj + (1.0 - lj) * rng.unit();
            let uk = lk + (1.0 - lk) * rng.unit();
            let cuts = f3_corner_cuts(lj, uj, lk, uk, 0, 1, 2).unwrap();
            for cut in &cuts {
                let at_corner = cut.violation_at(&[lj, lk, f3_direct(lj, lk)]);
                assert!(at_corner.abs() <= 1e-12, "not tight: {at_corner}");
                for i in 0..=15 {
                    for j in 0..=15 {
                        let x = lj + (uj - lj) * i as f64 / 15.0;
                        let y = lk + (uk - lk) * j as f64 / 15.0;
                        let v = cut.violation_at(&[x, y, f3(x, y)]);
                        assert!(v <= 1e-9, "under f3 by {v} at ({x}, {y})");
                    }
                }
            }
        }
    }

    #[test]
    fn corner_cuts_refuse_the_degenerate_corner() {
        assert!(f3_corner_cuts(0.0, 0.8, 0.0, 0.9, 0, 1, 2).is_none());
    }

    #[test]
    fn free_bounds_match_the_all_on_and_all_off_traces() {
        let inst = generate(9, 3).unwrap();
        let bounds = propagate_bounds(&inst, &vec![EdgeFix::Free; 9]);
        let up = evaluate(&inst, &vec![true; 9]).unwrap();
        let down = evaluate(&inst, &vec![false; 9]).unwrap();
        assert_eq!(bounds.u, up.y);
        assert_eq!(bounds.u_omega, up.omega);
        assert_eq!(bounds.u_omega_bar, up.omega_bar);
        assert_eq!(bounds.l, down.y);
    }

    #[test]
    fn fully_fixed_bounds_collapse_onto_the_trace() {
        let inst = generate(8, 9).unwrap();
        let mask: Vec<bool> = (0..8).map(|e| e % 3 != 0).collect();
        let fixed: Vec<EdgeFix> = mask
            .iter()
            .map(|&b| if b { EdgeFix::One } else { EdgeFix::Zero })
            .collect();
        let bounds = propagate_bounds(&inst, &fixed);
        let trace = evaluate(&inst, &mask).unwrap();
        assert_eq!(bounds.l, trace.y);
        assert_eq!(bounds.u, trace.y);
        assert_eq!(bounds.l_omega_bar, trace.omega_bar);
        assert_eq!(bounds.u_omega_bar, trace.omega_bar);
    }

    proptest! {
        #[test]
        fn bounds_bracket_every_consistent_trace(
            seed in 0u64..500,
            fix_bits in 0u64..(1 << 10),
            one_bits in 0u64..(1 << 10),
            mask_bits in 0u64..(1 << 10),
        ) {
            let m = 2 + (seed % 9) as usize;
            let inst = generate(m, seed).unwrap();
            let fixed: Vec<EdgeFix> = (0..m)
                .map(|e| {
                    if fix_bits >> e & 1 == 0 {
                        EdgeFix::Free
                    } else if one_bits >> e & 1 == 1 {
                        EdgeFix::One
                    } else {
                        EdgeFix::Zero
                    }
                })
                .collect();
            let mask: Vec<bool> = (0..m)
                .map(|e| match fixed[e] {
                    EdgeFix::One => true,
                    EdgeFix::Zero => false,
                    EdgeFix::Free => mask_bits >> e & 1 == 1,
                })
                .collect();
            let bounds = propagate_bounds(&inst, &fixed);
            let trace = evaluate(&inst, &mask).unwrap();
            for i in 0..inst.seq().node_count() {
                prop_assert!(bounds.l[i] <= trace.y[i] && trace.y[i] <= bounds.u[i]);
                prop_assert!(
                    bounds.l_omega[i] <= trace.omega[i] && trace.omega[i] <= bounds.u_omega[i]
                );
                prop_assert!(
                    bounds.l_omega_bar[i] <= trace.omega_bar[i]
                        && trace.omega_bar[i] <= bounds.u_omega_bar[i]
                );
            }
        }
    }

    #[test]
    fn absent_edge_zeroes_series_bounds() {
        // series pair: fixing either edge off pins the root to 0
        let inst = {
            use crate::spgraph::{CompKind, Composition, CompositionSequence, EdgeDef, Instance};
            let edges = (1..=2).map(|id| EdgeDef { id, p: 0.9 }).collect();
            let seq = CompositionSequence::new(
                2,
                vec![Composition {
                    result: 3,
                    kind: CompKind::Series,
                    left: 1,
                    right: 2,
                }],
            )
            .unwrap();
            Instance::new(edges, seq, 1.0, Vec::new()).unwrap()
        };
        let bounds = propagate_bounds(&inst, &[EdgeFix::Zero, EdgeFix::Free]);
        assert_eq!(bounds.u[2], 0.0);
        assert_eq!(bounds.l[2], 0.0);
    }
}
