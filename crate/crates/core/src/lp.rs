//! A small bounded-variable revised simplex solver.
//!
//! The branch-and-bound search solves thousands of closely related LPs of a
//! few hundred rows and columns, so a compact implementation that supports
//! warm restarts after adding rows or tightening column bounds beats calling
//! out to a general solver. Design:
//!
//! * every row carries a logical slack (`<=` rows get `s in [0, inf)`,
//!   `=` rows get `s in [0, 0]`), so the all-slack basis always exists;
//! * the basis inverse is kept explicitly and updated per pivot, with a
//!   periodic full refactorization to cap drift;
//! * infeasibility is removed by a composite phase that prices the sum of
//!   basic bound violations — no artificial variables;
//! * entering columns are chosen by the largest reduced cost (ties to the
//!   smallest index), falling back to first-eligible after a long run of
//!   degenerate pivots;
//! * optimality is declared only on a freshly refactorized basis, so the
//!   returned point is certified against the original row data rather than
//!   against accumulated updates.
//!
//! The solver maximizes its objective. After a first pass at a relaxed
//! pricing tolerance it polishes at a tighter one, which the search layer
//! relies on when comparing node bounds against incumbents.

use crate::envelopes::{CutSense, LinearCut};
use crate::Error;

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL_MAIN: f64 = 1e-7;
const DUAL_TOL_POLISH: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;
const RATIO_TIE: f64 = 1e-12;
const REFACTOR_EVERY: usize = 100;
const BLAND_AFTER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective value at `x` (recomputed from the column costs).
    pub objective: f64,
    /// Structural column values.
    pub x: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VStat {
    Basic,
    AtLower,
    AtUpper,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    sense: CutSense,
    rhs: f64,
}

/// Maximizing simplex over columns with finite lower or upper bounds.
#[derive(Debug, Clone)]
pub struct Simplex {
    ncols: usize,
    obj: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cols: Vec<Vec<(usize, f64)>>,
    rows: Vec<Row>,
    iter_limit: usize,
    // factorized state (valid when `factored`)
    factored: bool,
    dirty: bool,
    basis: Vec<usize>,
    vstat: Vec<VStat>,
    binv: Vec<f64>,
    xb: Vec<f64>,
}

impl Simplex {
    /// A problem with `ncols` structural columns, all with bounds
    /// `[0, +inf)` and zero objective until configured.
    pub fn new(ncols: usize) -> Self {
        Simplex {
            ncols,
            obj: vec![0.0; ncols],
            lower: vec![0.0; ncols],
            upper: vec![f64::INFINITY; ncols],
            cols: vec![Vec::new(); ncols],
            rows: Vec::new(),
            iter_limit: 100_000,
            factored: false,
            dirty: false,
            basis: Vec::new(),
            vstat: Vec::new(),
            binv: Vec::new(),
            xb: Vec::new(),
        }
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn set_iteration_limit(&mut self, limit: usize) {
        self.iter_limit = limit;
    }

    /// Column bounds; at least one side must be finite.
    pub fn set_bounds(&mut self, j: usize, l: f64, u: f64) {
        assert!(j < self.ncols, "column {j} out of range");
        assert!(l <= u, "empty bound range [{l}, {u}] on column {j}");
        assert!(
            l.is_finite() || u.is_finite(),
            "free columns are not supported"
        );
        self.lower[j] = l;
        self.upper[j] = u;
        self.dirty = true;
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    /// Objective coefficient (the solver maximizes).
    pub fn set_objective(&mut self, j: usize, c: f64) {
        assert!(j < self.ncols && c.is_finite());
        self.obj[j] = c;
        self.dirty = true;
    }

    /// Adds a row and returns its index. Duplicate column mentions are
    /// summed. If the problem is already factorized, the basis is extended
    /// in place with the new slack basic, so the next `solve` warm-starts.
    pub fn add_row(&mut self, coeffs: &[(usize, f64)], sense: CutSense, rhs: f64) -> usize {
        let mut merged: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for &(j, c) in coeffs {
            assert!(j < self.ncols, "row references column {j} out of range");
            assert!(c.is_finite() && rhs.is_finite(), "non-finite row data");
            *merged.entry(j).or_insert(0.0) += c;
        }
        let coeffs: Vec<(usize, f64)> = merged.into_iter().filter(|&(_, c)| c != 0.0).collect();
        let r = self.rows.len();
        for &(j, c) in &coeffs {
            self.cols[j].push((r, c));
        }
        self.rows.push(Row { coeffs, sense, rhs });
        if self.factored {
            self.extend_basis_with_row(r);
        }
        self.dirty = true;
        r
    }

    pub fn add_cut(&mut self, cut: &LinearCut) -> usize {
        self.add_row(&cut.coeffs, cut.sense, cut.rhs)
    }

    /// Row view for exports and tests: `(coefficients, sense, rhs)`.
    pub fn row_data(&self, r: usize) -> (&[(usize, f64)], CutSense, f64) {
        let row = &self.rows[r];
        (&row.coeffs, row.sense, row.rhs)
    }

    pub fn objective_coeff(&self, j: usize) -> f64 {
        self.obj[j]
    }

    fn nvars(&self) -> usize {
        self.ncols + self.rows.len()
    }

    fn cost(&self, j: usize) -> f64 {
        if j < self.ncols {
            self.obj[j]
        } else {
            0.0
        }
    }

    fn var_bounds(&self, j: usize) -> (f64, f64) {
        if j < self.ncols {
            (self.lower[j], self.upper[j])
        } else {
            match self.rows[j - self.ncols].sense {
                CutSense::Le => (0.0, f64::INFINITY),
                CutSense::Eq => (0.0, 0.0),
            }
        }
    }

    fn col_entries(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.ncols {
            for &(r, v) in &self.cols[j] {
                f(r, v);
            }
        } else {
            f(j - self.ncols, 1.0);
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        let (l, u) = self.var_bounds(j);
        match self.vstat[j] {
            VStat::AtLower => l,
            VStat::AtUpper => u,
            VStat::Basic => unreachable!("basic variable has no bound value"),
        }
    }

    /// `y = w * B^{-1}` for a weight per basis position.
    fn btran(&self, w: &[f64]) -> Vec<f64> {
        let m = self.rows.len();
        let mut y = vec![0.0; m];
        for (i, &wi) in w.iter().enumerate() {
            if wi != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (k, yk) in y.iter_mut().enumerate() {
                    *yk += wi * row[k];
                }
            }
        }
        y
    }

    /// `alpha = B^{-1} A_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.rows.len();
        let mut alpha = vec![0.0; m];
        self.col_entries(j, |r, v| {
            for i in 0..m {
                alpha[i] += self.binv[i * m + r] * v;
            }
        });
        alpha
    }

    fn price(&self, y: &[f64], j: usize) -> f64 {
        let mut s = 0.0;
        self.col_entries(j, |r, v| s += y[r] * v);
        s
    }

    fn cold_start(&mut self) {
        let m = self.rows.len();
        self.basis = (0..m).map(|r| self.ncols + r).collect();
        self.vstat = vec![VStat::AtLower; self.nvars()];
        for j in 0..self.ncols {
            self.vstat[j] = if self.lower[j].is_finite() {
                VStat::AtLower
            } else {
                VStat::AtUpper
            };
        }
        for r in 0..m {
            self.vstat[self.ncols + r] = VStat::Basic;
        }
        self.binv = vec![0.0; m * m];
        for i in 0..m {
            self.binv[i * m + i] = 1.0;
        }
        self.xb = vec![0.0; m];
        self.factored = true;
        self.recompute_xb();
    }

    /// Re-snaps nonbasic statuses onto finite bounds and recomputes basic
    /// values from the stored rows through the current inverse.
    fn recompute_xb(&mut self) {
        let m = self.rows.len();
        for j in 0..self.nvars() {
            if self.vstat[j] == VStat::Basic {
                continue;
            }
            let (l, u) = self.var_bounds(j);
            if self.vstat[j] == VStat::AtLower && !l.is_finite() {
                self.vstat[j] = VStat::AtUpper;
            } else if self.vstat[j] == VStat::AtUpper && !u.is_finite() {
                self.vstat[j] = VStat::AtLower;
            }
        }
        let mut t: Vec<f64> = self.rows.iter().map(|r| r.rhs).collect();
        for j in 0..self.nvars() {
            if self.vstat[j] == VStat::Basic {
                continue;
            }
            let v = self.nonbasic_value(j);
            if v != 0.0 {
                self.col_entries(j, |r, c| t[r] -= c * v);
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.xb[i] = row.iter().zip(&t).map(|(b, tv)| b * tv).sum();
        }
    }

    /// Rebuilds the inverse from the basis columns. Numerically dependent
    /// columns are repaired in place: the offending variable is evicted to
    /// a bound and the logical slack of a still-unpivoted row takes its
    /// basis slot, so near-parallel cut rows cannot kill the factorization.
    /// Returns false only when even repair finds no pivot, in which case
    /// the caller restarts from the all-slack basis.
    fn refactor(&mut self) -> bool {
        let m = self.rows.len();
        if m == 0 {
            self.binv.clear();
            self.xb.clear();
            return true;
        }
        // tableau of basis columns by slot and the accumulated row operations
        let mut a = vec![0.0; m * m];
        for (slot, &bj) in self.basis.iter().enumerate() {
            self.col_entries(bj, |r, v| a[r * m + slot] += v);
        }
        let mut e = vec![0.0; m * m];
        for i in 0..m {
            e[i * m + i] = 1.0;
        }
        let mut row_used = vec![false; m];
        let mut row_of_slot = vec![usize::MAX; m];
        let mut failed = Vec::new();
        let pivot = |a: &mut Vec<f64>, e: &mut Vec<f64>, p: usize, slot: usize| {
            let piv = a[p * m + slot];
            for k in 0..m {
                a[p * m + k] /= piv;
                e[p * m + k] /= piv;
            }
            for r in 0..m {
                if r == p {
                    continue;
                }
                let f = a[r * m + slot];
                if f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    a[r * m + k] -= f * a[p * m + k];
                    e[r * m + k] -= f * e[p * m + k];
                }
            }
        };
        for slot in 0..m {
            let mut p = usize::MAX;
            let mut best = 1e-11;
            for r in 0..m {
                if !row_used[r] && a[r * m + slot].abs() > best {
                    best = a[r * m + slot].abs();
                    p = r;
                }
            }
            if p == usize::MAX {
                failed.push(slot);
                continue;
            }
            pivot(&mut a, &mut e, p, slot);
            row_used[p] = true;
            row_of_slot[slot] = p;
        }
        for &slot in &failed {
            let old = self.basis[slot];
            let (l, _) = self.var_bounds(old);
            let mut done = false;
            for r in 0..m {
                if row_used[r] || self.vstat[self.ncols + r] == VStat::Basic {
                    continue;
                }
                // tableau column of this slack is column r of the operator
                let mut p = usize::MAX;
                let mut best = 1e-11;
                for q in 0..m {
                    if !row_used[q] && e[q * m + r].abs() > best {
                        best = e[q * m + r].abs();
                        p = q;
                    }
                }
                if p == usize::MAX {
                    continue;
                }
                self.vstat[old] = if l.is_finite() {
                    VStat::AtLower
                } else {
                    VStat::AtUpper
                };
                self.basis[slot] = self.ncols + r;
                self.vstat[self.ncols + r] = VStat::Basic;
                for q in 0..m {
                    a[q * m + slot] = e[q * m + r];
                }
                pivot(&mut a, &mut e, p, slot);
                row_used[p] = true;
                row_of_slot[slot] = p;
                done = true;
                break;
            }
            if !done {
                return false;
            }
        }
        // undo the row permutation: the inverse row for a slot is the
        // operator row that ended up with that slot's pivot
        let mut binv = vec![0.0; m * m];
        for slot in 0..m {
            let r = row_of_slot[slot];
            binv[slot * m..slot * m + m].copy_from_slice(&e[r * m..r * m + m]);
        }
        self.binv = binv;
        self.recompute_xb();
        true
    }

    /// Extends the factorized state for one appended row: the new slack is
    /// basic in the new position, and since the new basis matrix is block
    /// triangular its inverse is the old one bordered by `-c B^{-1}` where
    /// `c` holds the new row's coefficients on the old basic columns.
    fn extend_basis_with_row(&mut self, r: usize) {
        let m = self.rows.len() - 1;
        let row = &self.rows[r];
        let mut c = vec![0.0; m];
        for (pos, &bj) in self.basis.iter().enumerate() {
            if bj < self.ncols {
                if let Some(&(_, v)) = row.coeffs.iter().find(|&&(j, _)| j == bj) {
                    c[pos] = v;
                }
            }
        }
        let n = m + 1;
        let mut binv = vec![0.0; n * n];
        for i in 0..m {
            binv[i * n..i * n + m].copy_from_slice(&self.binv[i * m..(i + 1) * m]);
        }
        for k in 0..m {
            let mut s = 0.0;
            for i in 0..m {
                s += c[i] * self.binv[i * m + k];
            }
            binv[m * n + k] = -s;
        }
        binv[m * n + m] = 1.0;
        self.binv = binv;
        self.basis.push(self.ncols + r);
        // vstat for the new slack was appended by the caller's bookkeeping:
        // variable indices of older slacks did not move because slack j maps
        // to ncols + row, and the new row got the next index.
        self.vstat.push(VStat::Basic);
        self.xb.push(0.0); // recomputed before the next pivot via `dirty`
    }

    fn full_point(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.nvars()];
        for (j, xv) in x.iter_mut().enumerate() {
            if self.vstat[j] != VStat::Basic {
                *xv = self.nonbasic_value(j);
            }
        }
        for (i, &bj) in self.basis.iter().enumerate() {
            x[bj] = self.xb[i];
        }
        x
    }

    fn objective_at(&self, x: &[f64]) -> f64 {
        self.obj.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    fn finish(&self, status: LpStatus, iterations: usize) -> LpSolution {
        let mut x = self.full_point();
        x.truncate(self.ncols);
        let objective = self.objective_at(&x);
        LpSolution {
            status,
            objective,
            x,
            iterations,
        }
    }

    /// Runs the simplex to completion on the current problem, warm-starting
    /// from earlier factorized state when available.
    pub fn solve(&mut self) -> Result<LpSolution, Error> {
        if !self.factored || self.basis.len() != self.rows.len() {
            self.cold_start();
        } else if self.dirty {
            self.recompute_xb();
        }
        self.dirty = false;
        let m = self.rows.len();
        let mut iters = 0usize;
        let mut degen_streak = 0usize;
        let mut since_refactor = 0usize;
        let mut fresh = true; // no pivots since the last full refactorization
        let mut resets = 0usize;
        let mut dual_tol = DUAL_TOL_MAIN;
        loop {
            if iters >= self.iter_limit {
                return Ok(self.finish(LpStatus::IterationLimit, iters));
            }
            if since_refactor >= REFACTOR_EVERY {
                if !self.refactor() {
                    resets += 1;
                    if resets > 1 {
                        return Err(Error::Model(
                            "simplex basis went singular twice; giving up".into(),
                        ));
                    }
                    self.cold_start();
                }
                since_refactor = 0;
                fresh = true;
            }
            // phase detection: any basic variable outside its bounds puts
            // the solver in the feasibility phase, priced by violation signs
            let mut w = vec![0.0; m];
            let mut phase1 = false;
            for i in 0..m {
                let (l, u) = self.var_bounds(self.basis[i]);
                if self.xb[i] < l - PRIMAL_TOL {
                    w[i] = 1.0;
                    phase1 = true;
                } else if self.xb[i] > u + PRIMAL_TOL {
                    w[i] = -1.0;
                    phase1 = true;
                }
            }
            if !phase1 {
                for i in 0..m {
                    w[i] = self.cost(self.basis[i]);
                }
            }
            let y = self.btran(&w);
            // after a singularity reset, first-eligible pricing breaks the
            // deterministic pivot path that led to the bad basis
            let bland = degen_streak > BLAND_AFTER || resets > 0;
            let mut entering: Option<(usize, f64, f64)> = None; // (j, dir, score)
            for j in 0..self.nvars() {
                if self.vstat[j] == VStat::Basic {
                    continue;
                }
                let (l, u) = self.var_bounds(j);
                if l == u {
                    continue;
                }
                let d = if phase1 { 0.0 } else { self.cost(j) } - self.price(&y, j);
                let (dir, score) = match self.vstat[j] {
                    VStat::AtLower if d > dual_tol => (1.0, d),
                    VStat::AtUpper if d < -dual_tol => (-1.0, -d),
                    _ => continue,
                };
                if bland {
                    entering = Some((j, dir, score));
                    break;
                }
                if entering.map_or(true, |(_, _, s)| score > s) {
                    entering = Some((j, dir, score));
                }
            }
            let Some((j, dir, _)) = entering else {
                // conclusions are only drawn on a freshly rebuilt inverse
                if !fresh {
                    if !self.refactor() {
                        resets += 1;
                        if resets > 1 {
                            return Err(Error::Model(
                                "simplex basis went singular twice; giving up".into(),
                            ));
                        }
                        self.cold_start();
                    }
                    since_refactor = 0;
                    fresh = true;
                    continue;
                }
                if phase1 {
                    return Ok(self.finish(LpStatus::Infeasible, iters));
                }
                if dual_tol > DUAL_TOL_POLISH {
                    dual_tol = DUAL_TOL_POLISH;
                    continue;
                }
                return Ok(self.finish(LpStatus::Optimal, iters));
            };
            // two-pass ratio test: the first pass finds the smallest
            // breakpoint with bounds relaxed by the primal tolerance, the
            // second picks the largest pivot among breakpoints under that
            // limit — trading a tolerance-sized bound overshoot for pivots
            // that keep the basis well conditioned. The entering column's
            // own bound range competes as a flip.
            let alpha = self.ftran(j);
            let (lj, uj) = self.var_bounds(j);
            // (strict ratio, pivot magnitude, row, leaves at upper)
            let mut breaks: Vec<(f64, f64, usize, bool)> = Vec::new();
            for (i, &a) in alpha.iter().enumerate() {
                if a.abs() < PIVOT_TOL {
                    continue;
                }
                let delta = -dir * a;
                let (l, u) = self.var_bounds(self.basis[i]);
                let v = self.xb[i];
                let (t_i, at_upper) = if v < l - PRIMAL_TOL {
                    // infeasible low: blocks only while rising, at the bound
                    // it currently violates
                    if delta > 0.0 {
                        ((l - v) / delta, false)
                    } else {
                        continue;
                    }
                } else if v > u + PRIMAL_TOL {
                    if delta < 0.0 {
                        ((u - v) / delta, true)
                    } else {
                        continue;
                    }
                } else if delta > 0.0 {
                    if u.is_finite() {
                        ((u - v) / delta, true)
                    } else {
                        continue;
                    }
                } else if l.is_finite() {
                    ((l - v) / delta, false)
                } else {
                    continue;
                };
                breaks.push((t_i.max(0.0), a.abs(), i, at_upper));
            }
            let t_flip = uj - lj;
            let mut t_limit = t_flip;
            for &(t_i, piv, _, _) in &breaks {
                t_limit = t_limit.min(t_i + PRIMAL_TOL / piv);
            }
            if t_limit.is_infinite() {
                if phase1 {
                    return Err(Error::Model(
                        "feasibility phase found an unbounded direction".into(),
                    ));
                }
                return Ok(self.finish(LpStatus::Unbounded, iters));
            }
            let mut t_best = t_flip;
            let mut best_piv = 0.0;
            let mut leave: Option<(usize, bool)> = None;
            for &(t_i, piv, i, at_upper) in &breaks {
                if t_i <= t_limit && piv > best_piv {
                    t_best = t_i;
                    best_piv = piv;
                    leave = Some((i, at_upper));
                }
            }
            if t_flip < t_best {
                t_best = t_flip;
                leave = None;
            }
            if t_best < RATIO_TIE {
                degen_streak += 1;
            } else {
                degen_streak = 0;
            }
            match leave {
                None => {
                    // bound flip: the entering variable crosses its range
                    for (i, &a) in alpha.iter().enumerate() {
                        self.xb[i] -= dir * t_best * a;
                    }
                    self.vstat[j] = if self.vstat[j] == VStat::AtLower {
                        VStat::AtUpper
                    } else {
                        VStat::AtLower
                    };
                }
                Some((r, at_upper)) => {
                    let entering_value = self.nonbasic_value(j) + dir * t_best;
                    for (i, &a) in alpha.iter().enumerate() {
                        if i != r {
                            self.xb[i] -= dir * t_best * a;
                        }
                    }
                    let leaving = self.basis[r];
                    self.vstat[leaving] = if at_upper {
                        VStat::AtUpper
                    } else {
                        VStat::AtLower
                    };
                    self.vstat[j] = VStat::Basic;
                    self.basis[r] = j;
                    self.xb[r] = entering_value;
                    let piv = alpha[r];
                    for k in 0..m {
                        self.binv[r * m + k] /= piv;
                    }
                    for i in 0..m {
                        if i == r {
                            continue;
                        }
                        let f = alpha[i];
                        if f == 0.0 {
                            continue;
                        }
                        for k in 0..m {
                            self.binv[i * m + k] -= f * self.binv[r * m + k];
                        }
                    }
                }
            }
            iters += 1;
            since_refactor += 1;
            fresh = false;
        }
    }
}
