//! LP relaxation of the reliability maximization.
//!
//! Columns: one selector `x_e` per edge, one `y_i` per composition node,
//! one `w_i` per series step (its correction factor), extra `v_i` columns
//! for the running correction product where it cannot be aliased, and a
//! single objective column `R`. Every composition is replaced by rows that
//! overestimate it (the concave-envelope cuts from [`crate::envelopes`]),
//! so the LP optimum is an upper bound on the reliability of every feasible
//! selection — the property the branch-and-bound search prunes with.
//!
//! Correction-product columns are saved by aliasing: the running product up
//! to the first series step equals that step's correction exactly, and
//! parallel steps never change it, so only later series steps allocate a
//! fresh column and a product row pair.

use crate::envelopes::{
    f2_overestimator_cuts, f3_corner_cuts, f3_default_cuts, f3_envelope, f3_fixed_edge_cut,
    f3_tangent_cut, mccormick_f1_cuts, propagate_bounds, BoundBox, BoundSet, CutSense, EdgeFix,
    LinearCut,
};
use crate::lp::Simplex;
use crate::spgraph::{CompKind, EdgeId, Instance, NodeId};
use std::io::Write;

/// A model variable: either an LP column or the constant 1 (used for
/// correction factors of non-series nodes, which are identically 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRef {
    Col(usize),
    One,
}

/// Column layout of the relaxation for one instance.
#[derive(Debug, Clone)]
pub struct VarMap {
    m: usize,
    x: Vec<usize>,
    y: Vec<usize>,
    omega: Vec<VarRef>,
    omega_bar: Vec<VarRef>,
    r: usize,
    ncols: usize,
}

impl VarMap {
    fn new(instance: &Instance) -> VarMap {
        let m = instance.m();
        let nodes = instance.seq().node_count();
        let mut next = 0;
        let x: Vec<usize> = (0..m)
            .map(|_| {
                let c = next;
                next += 1;
                c
            })
            .collect();
        let y: Vec<usize> = (0..nodes)
            .map(|_| {
                let c = next;
                next += 1;
                c
            })
            .collect();
        let mut omega = vec![VarRef::One; nodes];
        for s in instance.seq().steps() {
            if s.kind == CompKind::Series {
                omega[s.result - 1] = VarRef::Col(next);
                next += 1;
            }
        }
        let mut omega_bar = vec![VarRef::One; nodes];
        let mut chain = VarRef::One;
        for i in 0..nodes {
            match omega[i] {
                VarRef::One => omega_bar[i] = chain,
                VarRef::Col(w) => {
                    omega_bar[i] = if chain == VarRef::One {
                        VarRef::Col(w)
                    } else {
                        let c = next;
                        next += 1;
                        VarRef::Col(c)
                    };
                    chain = omega_bar[i];
                }
            }
        }
        let r = next;
        next += 1;
        VarMap {
            m,
            x,
            y,
            omega,
            omega_bar,
            r,
            ncols: next,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn x_col(&self, e: EdgeId) -> usize {
        self.x[e - 1]
    }

    pub fn y_col(&self, id: NodeId) -> usize {
        self.y[id - 1]
    }

    pub fn omega_ref(&self, id: NodeId) -> VarRef {
        self.omega[id - 1]
    }

    pub fn omega_bar_ref(&self, id: NodeId) -> VarRef {
        self.omega_bar[id - 1]
    }

    pub fn r_col(&self) -> usize {
        self.r
    }

    /// The correction-product column a series step owns, when it is not an
    /// alias of the step's own correction column.
    fn own_omega_bar_col(&self, id: NodeId) -> Option<usize> {
        match (self.omega[id - 1], self.omega_bar[id - 1]) {
            (VarRef::Col(w), VarRef::Col(v)) if v != w => Some(v),
            _ => None,
        }
    }

    /// Stable human-readable column name for exports.
    pub fn col_name(&self, col: usize) -> String {
        if col == self.r {
            return "R".into();
        }
        if let Some(e) = self.x.iter().position(|&c| c == col) {
            return format!("x{}", e + 1);
        }
        if let Some(i) = self.y.iter().position(|&c| c == col) {
            return format!("y{}", i + 1);
        }
        for (i, v) in self.omega.iter().enumerate() {
            if *v == VarRef::Col(col) {
                return format!("w{}", i + 1);
            }
        }
        for (i, v) in self.omega_bar.iter().enumerate() {
            if *v == VarRef::Col(col) {
                return format!("v{}", i + 1);
            }
        }
        format!("c{col}")
    }
}

/// Which cuts the search layer generates on top of the static relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutMode {
    /// Static rows plus rejection/incumbent rows only.
    WithoutCuts,
    /// Adds envelope tangent separation at node LP points.
    EnvelopeCuts,
    /// Envelope tangents plus per-node bound tightening and re-tightened
    /// local rows.
    ImprovedEnvelopeCuts,
}

impl CutMode {
    pub fn label(&self) -> &'static str {
        match self {
            CutMode::WithoutCuts => "none",
            CutMode::EnvelopeCuts => "envelope",
            CutMode::ImprovedEnvelopeCuts => "improved",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelaxationConfig {
    pub cut_mode: CutMode,
    pub max_cuts_per_node: usize,
    pub separation_rounds: usize,
    pub violation_tol: f64,
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        RelaxationConfig {
            cut_mode: CutMode::ImprovedEnvelopeCuts,
            max_cuts_per_node: 20,
            separation_rounds: 5,
            violation_tol: 1e-6,
        }
    }
}

/// Builds the static relaxation: leaf equalities, envelope rows for every
/// step under instance-wide bounds, correction-product rows, the objective
/// rows, the cardinality budget and any extra selection rows.
pub fn build_relaxation(instance: &Instance) -> (Simplex, VarMap) {
    let m = instance.m();
    let nodes = instance.seq().node_count();
    let root = instance.seq().root();
    let vars = VarMap::new(instance);
    let free = propagate_bounds(instance, &vec![EdgeFix::Free; m]);
    let mut lp = Simplex::new(vars.ncols());
    for e in 1..=m {
        lp.set_bounds(vars.x_col(e), 0.0, 1.0);
        lp.add_row(
            &[(vars.y_col(e), 1.0), (vars.x_col(e), -instance.edge_p(e))],
            CutSense::Eq,
            0.0,
        );
    }
    for id in 1..=nodes {
        lp.set_bounds(vars.y_col(id), 0.0, free.u[id - 1]);
        if let VarRef::Col(w) = vars.omega_ref(id) {
            lp.set_bounds(w, 0.0, free.u_omega[id - 1]);
        }
        if let Some(v) = vars.own_omega_bar_col(id) {
            lp.set_bounds(v, 0.0, free.u_omega_bar[id - 1]);
        }
    }
    let r_upper = (free.u[root - 1] * free.u_omega_bar[root - 1]).min(1.0);
    lp.set_bounds(vars.r_col(), 0.0, r_upper);
    lp.set_objective(vars.r_col(), 1.0);

    let mut prev_series: Option<NodeId> = None;
    for s in instance.seq().steps() {
        let (yj, yk, yi) = (vars.y_col(s.left), vars.y_col(s.right), vars.y_col(s.result));
        let bx = BoundBox::new(0.0, free.u[s.left - 1], 0.0, free.u[s.right - 1]);
        match s.kind {
            CompKind::Parallel => {
                for cut in f2_overestimator_cuts(bx, yj, yk, yi) {
                    lp.add_cut(&cut);
                }
            }
            CompKind::Series => {
                for cut in f3_default_cuts(yj, yk, yi) {
                    lp.add_cut(&cut);
                }
                let VarRef::Col(w) = vars.omega_ref(s.result) else {
                    unreachable!("series step without a correction column");
                };
                for cut in f2_overestimator_cuts(bx, yj, yk, w) {
                    lp.add_cut(&cut);
                }
                if let Some(v) = vars.own_omega_bar_col(s.result) {
                    let prev = prev_series.expect("own product column implies a prior series");
                    let VarRef::Col(pc) = vars.omega_bar_ref(prev) else {
                        unreachable!("prior series has a product reference");
                    };
                    let pbx = BoundBox::new(
                        0.0,
                        free.u_omega_bar[prev - 1],
                        0.0,
                        free.u_omega[s.result - 1],
                    );
                    for cut in mccormick_f1_cuts(pbx, pc, w, v) {
                        lp.add_cut(&cut);
                    }
                }
                prev_series = Some(s.result);
            }
        }
    }
    match vars.omega_bar_ref(root) {
        VarRef::One => {
            lp.add_row(
                &[(vars.r_col(), 1.0), (vars.y_col(root), -1.0)],
                CutSense::Le,
                0.0,
            );
        }
        VarRef::Col(c) => {
            let bx = BoundBox::new(0.0, free.u[root - 1], 0.0, free.u_omega_bar[root - 1]);
            for cut in mccormick_f1_cuts(bx, vars.y_col(root), c, vars.r_col()) {
                lp.add_cut(&cut);
            }
        }
    }
    let budget = instance.budget();
    if budget < m {
        let coeffs: Vec<(usize, f64)> = (1..=m).map(|e| (vars.x_col(e), 1.0)).collect();
        lp.add_row(&coeffs, CutSense::Le, budget as f64);
    }
    for row in instance.extra_rows() {
        let coeffs: Vec<(usize, f64)> = row
            .coeffs
            .iter()
            .map(|&(e, c)| (vars.x_col(e), c))
            .collect();
        lp.add_row(&coeffs, CutSense::Le, row.rhs);
    }
    (lp, vars)
}

/// Applies a node's edge fixings as selector bounds; with `improved` also
/// installs the propagated interval of every trace column, which is what
/// makes fully fixed nodes collapse onto the exact evaluation.
pub fn apply_node_bounds(
    lp: &mut Simplex,
    vars: &VarMap,
    fixed: &[EdgeFix],
    bounds: &BoundSet,
    improved: bool,
) {
    for (e0, fix) in fixed.iter().enumerate() {
        let (l, u) = match fix {
            EdgeFix::Free => (0.0, 1.0),
            EdgeFix::Zero => (0.0, 0.0),
            EdgeFix::One => (1.0, 1.0),
        };
        lp.set_bounds(vars.x[e0], l, u);
    }
    if !improved {
        return;
    }
    let nodes = bounds.len();
    for id in 1..=nodes {
        lp.set_bounds(vars.y_col(id), bounds.l[id - 1], bounds.u[id - 1]);
        if let VarRef::Col(w) = vars.omega_ref(id) {
            lp.set_bounds(w, bounds.l_omega[id - 1], bounds.u_omega[id - 1]);
        }
        if let Some(v) = vars.own_omega_bar_col(id) {
            lp.set_bounds(v, bounds.l_omega_bar[id - 1], bounds.u_omega_bar[id - 1]);
        }
    }
    let root = nodes;
    let rl = bounds.l[root - 1] * bounds.l_omega_bar[root - 1];
    let ru = (bounds.u[root - 1] * bounds.u_omega_bar[root - 1]).min(1.0);
    lp.set_bounds(vars.r_col(), rl, ru);
}

/// Rows that re-tighten the static relaxation under a node's propagated
/// bounds: envelope rows rebuilt on the shrunken boxes, corner cuts once a
/// series operand has a positive lower bound, and slice tangents where an
/// operand's interval has collapsed to a point. Only valid inside the
/// subtree the bounds came from.
pub fn refresh_local_rows(instance: &Instance, vars: &VarMap, bounds: &BoundSet) -> Vec<LinearCut> {
    let mut out = Vec::new();
    let mut prev_series: Option<NodeId> = None;
    for s in instance.seq().steps() {
        let (yj, yk, yi) = (vars.y_col(s.left), vars.y_col(s.right), vars.y_col(s.result));
        let (lj, uj) = (bounds.l[s.left - 1], bounds.u[s.left - 1]);
        let (lk, uk) = (bounds.l[s.right - 1], bounds.u[s.right - 1]);
        let bx = BoundBox::new(lj, uj, lk, uk);
        match s.kind {
            CompKind::Parallel => out.extend(f2_overestimator_cuts(bx, yj, yk, yi)),
            CompKind::Series => {
                if let Some(cuts) = f3_corner_cuts(lj, uj, lk, uk, yj, yk, yi) {
                    out.extend(cuts);
                }
                if lj == uj && lj > 0.0 {
                    if let Ok(cut) = f3_fixed_edge_cut(lj, uk, yk, yi) {
                        out.push(cut);
                    }
                }
                if lk == uk && lk > 0.0 {
                    if let Ok(cut) = f3_fixed_edge_cut(lk, uj, yj, yi) {
                        out.push(cut);
                    }
                }
                let VarRef::Col(w) = vars.omega_ref(s.result) else {
                    unreachable!();
                };
                out.extend(f2_overestimator_cuts(bx, yj, yk, w));
                if let Some(v) = vars.own_omega_bar_col(s.result) {
                    let prev = prev_series.expect("own product column implies a prior series");
                    let VarRef::Col(pc) = vars.omega_bar_ref(prev) else {
                        unreachable!();
                    };
                    let pbx = BoundBox::new(
                        bounds.l_omega_bar[prev - 1],
                        bounds.u_omega_bar[prev - 1],
                        bounds.l_omega[s.result - 1],
                        bounds.u_omega[s.result - 1],
                    );
                    out.extend(mccormick_f1_cuts(pbx, pc, w, v));
                }
                prev_series = Some(s.result);
            }
        }
    }
    let root = instance.seq().root();
    if let VarRef::Col(c) = vars.omega_bar_ref(root) {
        let bx = BoundBox::new(
            bounds.l[root - 1],
            bounds.u[root - 1],
            bounds.l_omega_bar[root - 1],
            bounds.u_omega_bar[root - 1],
        );
        out.extend(mccormick_f1_cuts(bx, vars.y_col(root), c, vars.r_col()));
    }
    out.retain(|c| c.is_numerically_safe());
    out
}

/// Separates violated cuts at an LP point: envelope tangents for every
/// series step (under the node's bounds), and — in the improved mode —
/// slice tangents at the point for series steps with a collapsed operand.
/// Returns `(violation, cut)` pairs for the caller to rank.
pub fn separate(
    instance: &Instance,
    vars: &VarMap,
    bounds: &BoundSet,
    point: &[f64],
    config: &RelaxationConfig,
) -> Vec<(f64, LinearCut)> {
    let mut out = Vec::new();
    if config.cut_mode == CutMode::WithoutCuts {
        return out;
    }
    let improved = config.cut_mode == CutMode::ImprovedEnvelopeCuts;
    for s in instance.seq().steps() {
        if s.kind != CompKind::Series {
            continue;
        }
        let (yj, yk, yi) = (vars.y_col(s.left), vars.y_col(s.right), vars.y_col(s.result));
        let (xs, ys, zs) = (point[yj], point[yk], point[yi]);
        let (ux, uy) = (bounds.u[s.left - 1], bounds.u[s.right - 1]);
        let env = f3_envelope(xs, ys, ux, uy);
        let viol = zs - env;
        if viol > config.violation_tol {
            if let Ok(cut) = f3_tangent_cut(xs, ys, ux, uy, yj, yk, yi) {
                if cut.is_numerically_safe() {
                    out.push((viol, cut));
                }
            }
        }
        if improved {
            let (lj, uj) = (bounds.l[s.left - 1], bounds.u[s.left - 1]);
            let (lk, uk) = (bounds.l[s.right - 1], bounds.u[s.right - 1]);
            if lj == uj && lj > 0.0 {
                if let Ok(cut) = f3_fixed_edge_cut(lj, ys.clamp(0.0, uk), yk, yi) {
                    let v = cut.violation_at(point);
                    if v > config.violation_tol && cut.is_numerically_safe() {
                        out.push((v, cut));
                    }
                }
            }
            if lk == uk && lk > 0.0 {
                if let Ok(cut) = f3_fixed_edge_cut(lk, xs.clamp(0.0, uj), yj, yi) {
                    let v = cut.violation_at(point);
                    if v > config.violation_tol && cut.is_numerically_safe() {
                        out.push((v, cut));
                    }
                }
            }
        }
    }
    out
}

/// Writes the current LP in CPLEX LP text format.
pub fn write_lp(lp: &Simplex, vars: &VarMap, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "\\ reliability relaxation export")?;
    writeln!(out, "Maximize")?;
    let mut obj_terms = String::new();
    for j in 0..lp.ncols() {
        let c = lp.objective_coeff(j);
        if c != 0.0 {
            obj_terms.push_str(&format!(" + {} {}", c, vars.col_name(j)));
        }
    }
    writeln!(out, " obj:{obj_terms}")?;
    writeln!(out, "Subject To")?;
    for r in 0..lp.nrows() {
        let (coeffs, sense, rhs) = lp.row_data(r);
        let mut line = format!(" c{}:", r + 1);
        for &(j, c) in coeffs {
            if c >= 0.0 {
                line.push_str(&format!(" + {} {}", c, vars.col_name(j)));
            } else {
                line.push_str(&format!(" - {} {}", -c, vars.col_name(j)));
            }
        }
        let op = match sense {
            CutSense::Le => "<=",
            CutSense::Eq => "=",
        };
        writeln!(out, "{line} {op} {rhs}")?;
    }
    writeln!(out, "Bounds")?;
    for j in 0..lp.ncols() {
        let (l, u) = lp.bounds(j);
        writeln!(out, " {} <= {} <= {}", l, vars.col_name(j), u)?;
    }
    writeln!(out, "End")?;
    Ok(())
}
