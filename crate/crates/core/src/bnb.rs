//! Exact branch-and-bound search for the most reliable edge selection.
//!
//! Nodes fix a subset of edges in or out; the LP relaxation from
//! [`crate::model`] bounds the best completion of each node from above.
//! The search is best-bound-first, branches on the most fractional free
//! selector, and closes a node only when its bound cannot beat the
//! incumbent by more than `1e-9` — incumbents themselves always come from
//! exact evaluation, so the returned objective matches a brute-force scan
//! to that tolerance.
//!
//! Integral LP points are handled lazily: the point's mask is evaluated
//! exactly, and when the LP value overshoots the exact reliability the node
//! receives combinatorial rows (reliability can rise above the evaluated
//! value only if a deselected edge is brought in, and per-trace-variable
//! analogues over each subnetwork's support). Fractional points are cut by
//! concave-envelope tangents; the improved mode additionally tightens every
//! trace column to its propagated interval and rebuilds the envelope rows
//! on the node's boxes.

use crate::envelopes::{propagate_bounds, CutScope, CutSense, EdgeFix, LinearCut};
use crate::lp::LpStatus;
use crate::model::{
    apply_node_bounds, build_relaxation, refresh_local_rows, separate, CutMode, RelaxationConfig,
    VarMap, VarRef,
};
use crate::reliability::{evaluate, selection_feasible, EvalTrace};
use crate::spgraph::{CompKind, Instance};
use crate::Error;
use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::collections::{BinaryHeap, HashSet};
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::time::{Duration, Instant};

/// A node closes only when its bound is within this of the incumbent.
const PRUNE_TOL: f64 = 1e-9;
/// An integral LP point is accepted once the LP value is this close to the
/// point's exact reliability; the node still only closes via `PRUNE_TOL`.
const LAZY_TOL: f64 = 1e-6;
const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
pub struct Limits {
    pub time: Option<Duration>,
    pub nodes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Optimal,
    TimeLimit,
    NodeLimit,
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Optimal => "optimal",
            Termination::TimeLimit => "time_limit",
            Termination::NodeLimit => "node_limit",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CutCounts {
    /// Combinatorial rows (incumbent, rejection and exclusion rows).
    pub benders: usize,
    /// Envelope tangents and slice tangents added during separation.
    pub tangents: usize,
    /// Re-tightened rows installed per node in the improved mode.
    pub local_rows: usize,
}

impl CutCounts {
    pub fn total(&self) -> usize {
        self.benders + self.tangents + self.local_rows
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Best selection found, `None` when no feasible selection exists (or
    /// none was found before a limit stopped the search).
    pub incumbent_mask: Option<Vec<bool>>,
    /// Exact reliability of the incumbent (0 when there is none); always
    /// the value `evaluate` returns for `incumbent_mask`, bit for bit.
    pub incumbent_reliability: f64,
    /// Upper bound on the best feasible reliability at termination; equals
    /// the incumbent when the search finished.
    pub best_bound: f64,
    /// `best_bound - incumbent_reliability`; exactly 0 on finished runs.
    pub gap: f64,
    /// Bound of the root node after its cut loop.
    pub root_bound: f64,
    pub nodes: usize,
    pub cuts: CutCounts,
    pub wall_time: Duration,
    pub termination: Termination,
}

struct OpenNode {
    bound: f64,
    depth: usize,
    id: u64,
    fixed: Vec<EdgeFix>,
}

impl Ord for OpenNode {
    fn cmp(&self, o: &Self) -> Ordering {
        self.bound
            .total_cmp(&o.bound)
            .then(self.depth.cmp(&o.depth))
            .then(o.id.cmp(&self.id))
    }
}

impl PartialOrd for OpenNode {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl PartialEq for OpenNode {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for OpenNode {}

fn cut_key(cut: &LinearCut) -> u64 {
    let mut coeffs = cut.coeffs.clone();
    coeffs.sort_by_key(|&(j, _)| j);
    let mut h = DefaultHasher::new();
    for (j, c) in coeffs {
        j.hash(&mut h);
        c.to_bits().hash(&mut h);
    }
    cut.rhs.to_bits().hash(&mut h);
    (cut.sense == CutSense::Eq).hash(&mut h);
    h.finish()
}

/// `value(X) >= value - sum_{e in support, mask_e = 1} (1 - x_e)` written
/// as a `<=` row. Valid for every 0/1 selection because dropping any
/// supporting edge lowers the right side below 0 while the left side is a
/// probability, and dropping none leaves a superset, where monotonicity
/// applies.
fn lower_support_cut(col: usize, value: f64, support: &[usize], mask: &[bool], vars: &VarMap) -> LinearCut {
    let mut coeffs = vec![(col, -1.0)];
    let mut ones = 0.0;
    for &e0 in support {
        if mask[e0] {
            coeffs.push((vars.x_col(e0 + 1), 1.0));
            ones += 1.0;
        }
    }
    LinearCut {
        coeffs,
        sense: CutSense::Le,
        rhs: ones - value,
        scope: CutScope::Global,
    }
}

/// `value(X) <= value + sum_{e in support, mask_e = 0} x_e`: the value can
/// only exceed its evaluation at `mask` if a supporting edge is added.
fn upper_support_cut(col: usize, value: f64, support: &[usize], mask: &[bool], vars: &VarMap) -> LinearCut {
    let mut coeffs = vec![(col, 1.0)];
    for &e0 in support {
        if !mask[e0] {
            coeffs.push((vars.x_col(e0 + 1), -1.0));
        }
    }
    LinearCut {
        coeffs,
        sense: CutSense::Le,
        rhs: value,
        scope: CutScope::Global,
    }
}

/// Excludes exactly one (infeasible) 0/1 point from every relaxation.
fn exclusion_cut(mask: &[bool], vars: &VarMap) -> LinearCut {
    let mut coeffs = Vec::with_capacity(mask.len());
    let mut ones = 0.0;
    for (e0, &on) in mask.iter().enumerate() {
        if on {
            coeffs.push((vars.x_col(e0 + 1), 1.0));
            ones += 1.0;
        } else {
            coeffs.push((vars.x_col(e0 + 1), -1.0));
        }
    }
    LinearCut {
        coeffs,
        sense: CutSense::Le,
        rhs: ones - 1.0,
        scope: CutScope::Global,
    }
}

struct Search<'a> {
    instance: &'a Instance,
    config: &'a RelaxationConfig,
    /// Edge support (0-based) of every composition node.
    supports: Vec<Vec<usize>>,
    /// Union of series supports up to each id: the support of the running
    /// correction product.
    cum_supports: Vec<Vec<usize>>,
    pool: Vec<LinearCut>,
    pool_keys: HashSet<u64>,
    /// Support rows of the current incumbent, replaced on every
    /// improvement: older incumbents' rows only slow the node relaxations
    /// down once a better floor exists.
    incumbent_rows: Vec<LinearCut>,
    incumbent_keys: HashSet<u64>,
    counts: CutCounts,
    incumbent: Option<Vec<bool>>,
    inc_r: f64,
}

impl<'a> Search<'a> {
    fn new(instance: &'a Instance, config: &'a RelaxationConfig) -> Self {
        let m = instance.m();
        let nodes = instance.seq().node_count();
        let supports: Vec<Vec<usize>> = (1..=nodes)
            .map(|id| instance.seq().support(id).iter().map(|e| e - 1).collect())
            .collect();
        let mut cum_supports = Vec::with_capacity(nodes);
        let mut acc = vec![false; m];
        for id in 1..=nodes {
            let is_series = instance
                .seq()
                .step_of(id)
                .map_or(false, |s| s.kind == CompKind::Series);
            if is_series {
                for &e0 in &supports[id - 1] {
                    acc[e0] = true;
                }
            }
            cum_supports.push((0..m).filter(|&e0| acc[e0]).collect());
        }
        Search {
            instance,
            config,
            supports,
            cum_supports,
            pool: Vec::new(),
            pool_keys: HashSet::new(),
            incumbent_rows: Vec::new(),
            incumbent_keys: HashSet::new(),
            counts: CutCounts::default(),
            incumbent: None,
            inc_r: f64::NEG_INFINITY,
        }
    }

    fn pool_insert(&mut self, cut: LinearCut) -> bool {
        if self.pool_keys.insert(cut_key(&cut)) {
            self.pool.push(cut);
            self.counts.benders += 1;
            true
        } else {
            false
        }
    }

    /// Installs a strictly better incumbent and derives its support rows
    /// for all future node relaxations.
    fn try_incumbent(&mut self, vars: &VarMap, mask: &[bool], trace: &EvalTrace) -> bool {
        if trace.r <= self.inc_r {
            return false;
        }
        self.inc_r = trace.r;
        self.incumbent = Some(mask.to_vec());
        let m = self.instance.m();
        let all: Vec<usize> = (0..m).collect();
        let mut cuts = vec![
            lower_support_cut(vars.r_col(), trace.r, &all, mask, vars),
            upper_support_cut(vars.r_col(), trace.r, &all, mask, vars),
        ];
        for id in 1..=self.instance.seq().node_count() {
            let sup = &self.supports[id - 1];
            cuts.push(lower_support_cut(vars.y_col(id), trace.y[id - 1], sup, mask, vars));
            if let VarRef::Col(w) = vars.omega_ref(id) {
                cuts.push(lower_support_cut(w, trace.omega[id - 1], sup, mask, vars));
                if vars.omega_bar_ref(id) == VarRef::Col(w) {
                    continue; // aliased product column: same column, keep one row
                }
            }
            if let VarRef::Col(v) = vars.omega_bar_ref(id) {
                if self
                    .instance
                    .seq()
                    .step_of(id)
                    .map_or(false, |s| s.kind == CompKind::Series)
                {
                    cuts.push(lower_support_cut(
                        v,
                        trace.omega_bar[id - 1],
                        &self.cum_supports[id - 1],
                        mask,
                        vars,
                    ));
                }
            }
        }
        cuts.retain(|c| c.is_numerically_safe());
        self.counts.benders += cuts.len();
        self.incumbent_keys = cuts.iter().map(cut_key).collect();
        self.incumbent_rows = cuts;
        true
    }

    /// Rounds an LP point to a feasible selection and offers it as an
    /// incumbent. A cheapest-completion pass over the composition tree
    /// first makes the fixed-in edges connected (ties broken toward the
    /// edges the point values most), then the remaining budget is spent on
    /// the highest-valued free edges; the result is evaluated exactly.
    fn round_and_repair(
        &mut self,
        vars: &VarMap,
        fixed: &[EdgeFix],
        point: &[f64],
    ) -> Result<(), Error> {
        let instance = self.instance;
        let m = instance.m();
        let budget = instance.budget();
        let mut sel: Vec<bool> = fixed.iter().map(|&f| f == EdgeFix::One).collect();
        let mut used = sel.iter().filter(|&&b| b).count();
        if used > budget {
            return Ok(());
        }
        // Fewest extra edges that connect each subnetwork, preferring the
        // point's mass on ties; `None` marks subnetworks that stay
        // disconnected under every completion of this node.
        let nodes = instance.seq().node_count();
        let xv = |e0: usize| point[vars.x_col(e0 + 1)];
        let better = |a: (usize, f64), b: (usize, f64)| a.0 < b.0 || (a.0 == b.0 && a.1 > b.1);
        let mut need: Vec<Option<(usize, f64)>> = vec![None; nodes + 1];
        for id in 1..=nodes {
            need[id] = if id <= m {
                match (sel[id - 1], fixed[id - 1]) {
                    (true, _) => Some((0, 0.0)),
                    (false, EdgeFix::Zero) => None,
                    (false, _) => Some((1, xv(id - 1))),
                }
            } else {
                let step = instance.seq().step_of(id).expect("composite id has a step");
                let (a, b) = (need[step.left], need[step.right]);
                match step.kind {
                    CompKind::Series => a.zip(b).map(|(u, v)| (u.0 + v.0, u.1 + v.1)),
                    CompKind::Parallel => match (a, b) {
                        (Some(u), Some(v)) => Some(if better(v, u) { v } else { u }),
                        (u, v) => u.or(v),
                    },
                }
            };
        }
        let Some((extra, _)) = need[nodes] else {
            return Ok(());
        };
        if used + extra > budget {
            return Ok(());
        }
        let mut stack = vec![nodes];
        while let Some(id) = stack.pop() {
            if need[id].is_none_or(|(count, _)| count == 0) {
                continue;
            }
            if id <= m {
                sel[id - 1] = true;
                continue;
            }
            let step = instance.seq().step_of(id).expect("composite id has a step");
            match step.kind {
                CompKind::Series => {
                    stack.push(step.left);
                    stack.push(step.right);
                }
                CompKind::Parallel => {
                    stack.push(match (need[step.left], need[step.right]) {
                        (Some(u), Some(v)) => {
                            if better(v, u) {
                                step.right
                            } else {
                                step.left
                            }
                        }
                        (Some(_), None) => step.left,
                        _ => step.right,
                    });
                }
            }
        }
        used += extra;
        let mut order: Vec<usize> = (0..m)
            .filter(|&e0| fixed[e0] == EdgeFix::Free && !sel[e0])
            .collect();
        order.sort_by(|&a, &b| xv(b).total_cmp(&xv(a)).then(a.cmp(&b)));
        for &e0 in &order {
            if used >= budget {
                break;
            }
            sel[e0] = true;
            used += 1;
        }
        if !selection_feasible(instance, &sel) {
            return Ok(());
        }
        let trace = evaluate(instance, &sel)?;
        self.try_incumbent(vars, &sel, &trace);
        Ok(())
    }

    /// Rows that cut an integral point whose LP value overshoots its exact
    /// evaluation, filtered to the ones the point actually violates.
    fn rejection_cuts(
        &self,
        vars: &VarMap,
        mask: &[bool],
        trace: &EvalTrace,
        point: &[f64],
    ) -> Vec<LinearCut> {
        let m = self.instance.m();
        let all: Vec<usize> = (0..m).collect();
        let mut cand = vec![upper_support_cut(vars.r_col(), trace.r, &all, mask, vars)];
        for id in 1..=self.instance.seq().node_count() {
            let sup = &self.supports[id - 1];
            cand.push(upper_support_cut(vars.y_col(id), trace.y[id - 1], sup, mask, vars));
            if let VarRef::Col(w) = vars.omega_ref(id) {
                cand.push(upper_support_cut(w, trace.omega[id - 1], sup, mask, vars));
            }
            if let Some(v) = match (vars.omega_ref(id), vars.omega_bar_ref(id)) {
                (VarRef::Col(w), VarRef::Col(v)) if v != w => Some(v),
                _ => None,
            } {
                cand.push(upper_support_cut(
                    v,
                    trace.omega_bar[id - 1],
                    &self.cum_supports[id - 1],
                    mask,
                    vars,
                ));
            }
        }
        cand.retain(|c| c.is_numerically_safe() && c.violation_at(point) > self.config.violation_tol);
        cand
    }
}

struct Outcome {
    bound: f64,
    status: &'static str,
    branch: Option<usize>,
    cuts_added: usize,
}

fn process_node(
    search: &mut Search,
    node: &OpenNode,
    deadline: Option<Instant>,
) -> Result<Outcome, Error> {
    let instance = search.instance;
    let config = search.config;
    let m = instance.m();
    if node.fixed.iter().all(|&f| f != EdgeFix::Free) {
        let mask: Vec<bool> = node.fixed.iter().map(|&f| f == EdgeFix::One).collect();
        if !selection_feasible(instance, &mask) {
            return Ok(Outcome {
                bound: f64::NEG_INFINITY,
                status: "infeasible",
                branch: None,
                cuts_added: 0,
            });
        }
        let trace = evaluate(instance, &mask)?;
        let bound = trace.r;
        let vars = build_relaxation(instance).1;
        search.try_incumbent(&vars, &mask, &trace);
        return Ok(Outcome {
            bound,
            status: "leaf",
            branch: None,
            cuts_added: 0,
        });
    }

    let improved = config.cut_mode == CutMode::ImprovedEnvelopeCuts;
    let bounds = propagate_bounds(instance, &node.fixed);
    let (mut lp, vars) = build_relaxation(instance);
    for cut in search.pool.iter().chain(&search.incumbent_rows) {
        lp.add_cut(cut);
    }
    apply_node_bounds(&mut lp, &vars, &node.fixed, &bounds, improved);
    let mut keys = search.pool_keys.clone();
    keys.extend(&search.incumbent_keys);
    let mut cuts_added = 0;
    if improved {
        for cut in refresh_local_rows(instance, &vars, &bounds) {
            if keys.insert(cut_key(&cut)) {
                lp.add_cut(&cut);
                search.counts.local_rows += 1;
                cuts_added += 1;
            }
        }
    }

    let mut bound = f64::INFINITY;
    let mut last_point: Option<Vec<f64>>;
    let mut envelope_budget = config.max_cuts_per_node;
    let mut rounds = 0;
    loop {
        let sol = lp.solve()?;
        match sol.status {
            LpStatus::Infeasible => {
                return Ok(Outcome {
                    bound: f64::NEG_INFINITY,
                    status: "infeasible",
                    branch: None,
                    cuts_added,
                });
            }
            LpStatus::Unbounded => {
                return Err(Error::Model("bounded relaxation reported unbounded".into()));
            }
            LpStatus::IterationLimit => {
                // the objective column's own upper bound is still valid
                bound = bound.min(lp.bounds(vars.r_col()).1);
                last_point = Some(sol.x);
                break;
            }
            LpStatus::Optimal => {}
        }
        bound = bound.min(sol.objective);
        let out_of_time = deadline.is_some_and(|d| Instant::now() >= d);

        let mut fractional = false;
        for e in 1..=m {
            if node.fixed[e - 1] != EdgeFix::Free {
                continue;
            }
            let xv = sol.x[vars.x_col(e)];
            if (xv - xv.round()).abs() > INTEGRALITY_TOL {
                fractional = true;
                break;
            }
        }
        if !fractional {
            let mask: Vec<bool> = (1..=m)
                .map(|e| match node.fixed[e - 1] {
                    EdgeFix::One => true,
                    EdgeFix::Zero => false,
                    EdgeFix::Free => sol.x[vars.x_col(e)] > 0.5,
                })
                .collect();
            if !selection_feasible(instance, &mask) {
                let cut = exclusion_cut(&mask, &vars);
                let fresh = keys.insert(cut_key(&cut));
                if fresh {
                    lp.add_cut(&cut);
                    search.pool_insert(cut);
                    cuts_added += 1;
                }
                rounds += 1;
                last_point = Some(sol.x);
                if !fresh || rounds > config.separation_rounds || out_of_time {
                    break;
                }
                continue;
            }
            let trace = evaluate(instance, &mask)?;
            search.try_incumbent(&vars, &mask, &trace);
            if sol.objective - trace.r <= LAZY_TOL {
                last_point = Some(sol.x);
                break;
            }
            let rejections = search.rejection_cuts(&vars, &mask, &trace, &sol.x);
            let mut added = 0;
            for cut in rejections {
                if keys.insert(cut_key(&cut)) {
                    lp.add_cut(&cut);
                    search.pool_insert(cut);
                    cuts_added += 1;
                    added += 1;
                }
            }
            rounds += 1;
            last_point = Some(sol.x);
            if added == 0 || rounds > config.separation_rounds || out_of_time {
                break;
            }
            continue;
        }

        last_point = Some(sol.x.clone());
        if rounds >= config.separation_rounds || envelope_budget == 0 || out_of_time {
            break;
        }
        let mut cand = separate(instance, &vars, &bounds, &sol.x, config);
        cand.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut added = 0;
        for (_, cut) in cand {
            if envelope_budget == 0 {
                break;
            }
            if keys.insert(cut_key(&cut)) {
                lp.add_cut(&cut);
                envelope_budget -= 1;
                search.counts.tangents += 1;
                cuts_added += 1;
                added += 1;
            }
        }
        if added == 0 {
            break;
        }
        rounds += 1;
    }

    let point = last_point.expect("cut loop always records a point");
    search.round_and_repair(&vars, &node.fixed, &point)?;
    if (bound - search.inc_r).abs() <= PRUNE_TOL {
        bound = search.inc_r;
    }
    if bound <= search.inc_r + PRUNE_TOL {
        return Ok(Outcome {
            bound,
            status: "closed",
            branch: None,
            cuts_added,
        });
    }
    let mut pick: Option<(usize, f64)> = None;
    for e in 1..=m {
        if node.fixed[e - 1] != EdgeFix::Free {
            continue;
        }
        let score = (point[vars.x_col(e)] - 0.5).abs();
        if pick.is_none_or(|(_, s)| score < s) {
            pick = Some((e, score));
        }
    }
    let branch = pick.expect("open node has a free edge").0;
    Ok(Outcome {
        bound,
        status: "branched",
        branch: Some(branch),
        cuts_added,
    })
}

pub fn solve(
    instance: &Instance,
    config: &RelaxationConfig,
    limits: &Limits,
) -> Result<SolveResult, Error> {
    solve_with_log(instance, config, limits, None)
}

/// Like [`solve`], also writing one `key=value` line per processed node.
pub fn solve_with_log(
    instance: &Instance,
    config: &RelaxationConfig,
    limits: &Limits,
    mut log: Option<&mut dyn Write>,
) -> Result<SolveResult, Error> {
    let t0 = Instant::now();
    let deadline = limits.time.map(|d| t0 + d);
    let m = instance.m();
    let mut search = Search::new(instance, config);
    let mut heap = BinaryHeap::new();
    heap.push(OpenNode {
        bound: 1.0,
        depth: 0,
        id: 0,
        fixed: vec![EdgeFix::Free; m],
    });
    let mut next_id = 1u64;
    let mut nodes = 0usize;
    let mut root_bound = 1.0;
    let mut termination = Termination::Optimal;
    let mut open_best = f64::NEG_INFINITY;

    while let Some(node) = heap.pop() {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            termination = Termination::TimeLimit;
            open_best = node.bound;
            break;
        }
        if limits.nodes.is_some_and(|n| nodes >= n) {
            termination = Termination::NodeLimit;
            open_best = node.bound;
            break;
        }
        nodes += 1;
        if node.bound <= search.inc_r + PRUNE_TOL {
            if let Some(log) = log.as_deref_mut() {
                let _ = writeln!(
                    log,
                    "node={} depth={} open={} status=pruned bound={:.12} incumbent={:.12} cuts=0",
                    node.id,
                    node.depth,
                    heap.len(),
                    node.bound,
                    search.inc_r.max(0.0),
                );
            }
            continue;
        }
        let out = process_node(&mut search, &node, deadline)?;
        if node.id == 0 {
            root_bound = out.bound;
        }
        if let Some(e) = out.branch {
            for fix in [EdgeFix::One, EdgeFix::Zero] {
                let mut fixed = node.fixed.clone();
                fixed[e - 1] = fix;
                heap.push(OpenNode {
                    bound: out.bound,
                    depth: node.depth + 1,
                    id: next_id,
                    fixed,
                });
                next_id += 1;
            }
        }
        if let Some(log) = log.as_deref_mut() {
            let _ = writeln!(
                log,
                "node={} depth={} open={} status={} bound={:.12} incumbent={:.12} cuts={}",
                node.id,
                node.depth,
                heap.len(),
                out.status,
                out.bound,
                search.inc_r.max(0.0),
                out.cuts_added,
            );
        }
    }

    let incumbent_reliability = if search.incumbent.is_some() {
        search.inc_r
    } else {
        0.0
    };
    let best_bound = match termination {
        Termination::Optimal => incumbent_reliability,
        _ => open_best.max(incumbent_reliability),
    };
    let gap = match termination {
        Termination::Optimal => 0.0,
        _ => (best_bound - incumbent_reliability).max(0.0),
    };
    Ok(SolveResult {
        incumbent_mask: search.incumbent,
        incumbent_reliability,
        best_bound,
        gap,
        root_bound,
        nodes,
        cuts: search.counts,
        wall_time: t0.elapsed(),
        termination,
    })
}
