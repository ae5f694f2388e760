//! Dense bounded-variable simplex.
//!
//! Rows `a_i x {<=,>=,=} b_i` are rewritten as `a_i x - s_i = 0` with the
//! logical variable `s_i` carrying the row bounds, so every column (structural
//! or logical) has a `[lo, hi]` interval and nonbasic columns sit at one of
//! their bounds. The tableau `B^-1 [A | -I]` is stored densely and updated by
//! explicit pivots; it is rebuilt from the basis every `REFACTOR_EVERY` pivots
//! to keep drift in check.
//!
//! Cold solves start from the logical basis, adding an artificial column for
//! each row whose initial activity violates its bounds (phase 1). Branch and
//! bound re-optimizes after bound changes with the dual simplex, which keeps
//! the parent's dual-feasible basis.

use crate::mip::{Integrality, MipModel, ObjSense, RowSense};

const PIV_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
/// Final solution check against the original rows.
const VERIFY_TOL: f64 = 1e-7;
const DEGENERACY_STREAK: usize = 50;
const REFACTOR_EVERY: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    /// The solver lost accuracy and could not certify its answer.
    NumericalFailure,
}

/// Problem data shared by every LP solved for one model.
#[derive(Clone, Debug)]
pub struct LpData {
    pub(crate) n: usize,
    pub(crate) m: usize,
    /// Dense `m x n` row-major constraint matrix.
    a: Vec<f64>,
    row_lo: Vec<f64>,
    row_hi: Vec<f64>,
    pub(crate) col_lo: Vec<f64>,
    pub(crate) col_hi: Vec<f64>,
    /// Costs in minimization form.
    cost: Vec<f64>,
    /// `+1` for minimization, `-1` for maximization.
    pub(crate) obj_sign: f64,
    pub(crate) binaries: Vec<usize>,
}

impl LpData {
    pub fn from_model(model: &MipModel) -> Self {
        let n = model.num_vars();
        let m = model.num_constraints();
        let mut a = vec![0.0; m * n];
        let mut row_lo = Vec::with_capacity(m);
        let mut row_hi = Vec::with_capacity(m);
        for (i, con) in model.constraints().iter().enumerate() {
            for &(v, c) in &con.coeffs {
                a[i * n + v.0] += c;
            }
            let (lo, hi) = match con.sense {
                RowSense::Le => (f64::NEG_INFINITY, con.rhs),
                RowSense::Ge => (con.rhs, f64::INFINITY),
                RowSense::Eq => (con.rhs, con.rhs),
            };
            row_lo.push(lo);
            row_hi.push(hi);
        }
        let obj_sign = match model.objective().sense {
            ObjSense::Minimize => 1.0,
            ObjSense::Maximize => -1.0,
        };
        let mut cost = vec![0.0; n];
        for &(v, c) in &model.objective().coeffs {
            cost[v.0] += obj_sign * c;
        }
        LpData {
            n,
            m,
            a,
            row_lo,
            row_hi,
            col_lo: model.vars().iter().map(|v| v.lo).collect(),
            col_hi: model.vars().iter().map(|v| v.hi).collect(),
            cost,
            obj_sign,
            binaries: model
                .vars()
                .iter()
                .enumerate()
                .filter(|(_, v)| v.integrality == Integrality::Binary)
                .map(|(j, _)| j)
                .collect(),
        }
    }

    /// Entry of the full column `j` of `[A | -I]` in row `i`.
    fn full(&self, i: usize, j: usize) -> f64 {
        if j < self.n {
            self.a[i * self.n + j]
        } else if j - self.n == i {
            -1.0
        } else {
            0.0
        }
    }

    /// Minimization-form objective of structural values.
    pub(crate) fn min_objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest bound or row violation of structural values `x` under column
    /// bounds `lo`/`hi`, scaled by the magnitude of the bound involved.
    fn max_violation(&self, x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.n {
            worst = worst.max((lo[j] - x[j]) / (1.0 + lo[j].abs().min(1e12)));
            worst = worst.max((x[j] - hi[j]) / (1.0 + hi[j].abs().min(1e12)));
        }
        for i in 0..self.m {
            let act: f64 = (0..self.n).map(|j| self.a[i * self.n + j] * x[j]).sum();
            if self.row_lo[i].is_finite() {
                worst = worst.max((self.row_lo[i] - act) / (1.0 + self.row_lo[i].abs()));
            }
            if self.row_hi[i].is_finite() {
                worst = worst.max((act - self.row_hi[i]) / (1.0 + self.row_hi[i].abs()));
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pos {
    Basic(usize),
    Lower,
    Upper,
    /// Nonbasic free column held at zero.
    Free,
}

/// Basis snapshot used to warm-start a later solve of the same model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Basis {
    basic: Vec<usize>,
    at_upper: Vec<bool>,
}

/// Result of one LP solve.
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective in the model's own sense.
    pub objective: f64,
    /// Structural values (meaningful when `status == Optimal`).
    pub x: Vec<f64>,
    pub iterations: usize,
}

/// A simplex tableau over `[A | -I]` plus transient artificial columns.
#[derive(Clone)]
pub struct Simplex<'a> {
    data: &'a LpData,
    m: usize,
    ncols: usize,
    tab: Vec<f64>,
    basis: Vec<usize>,
    pos: Vec<Pos>,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    d: Vec<f64>,
    /// `(row, sign)` of each artificial column, in column order after `n + m`.
    artificials: Vec<(usize, f64)>,
    since_refactor: usize,
    pub iterations: usize,
    max_iterations: usize,
}

impl<'a> Simplex<'a> {
    fn base_bounds(data: &LpData, col_lo: &[f64], col_hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut lo = col_lo.to_vec();
        let mut hi = col_hi.to_vec();
        lo.extend_from_slice(&data.row_lo);
        hi.extend_from_slice(&data.row_hi);
        (lo, hi)
    }

    fn nonbasic_start(lo: f64, hi: f64) -> (Pos, f64) {
        if lo.is_finite() {
            (Pos::Lower, lo)
        } else if hi.is_finite() {
            (Pos::Upper, hi)
        } else {
            (Pos::Free, 0.0)
        }
    }

    /// Solve from scratch under the given structural bounds.
    pub fn cold(data: &'a LpData, col_lo: &[f64], col_hi: &[f64]) -> (Self, LpStatus) {
        let (n, m) = (data.n, data.m);
        let (mut lo, mut hi) = Self::base_bounds(data, col_lo, col_hi);
        for j in 0..n {
            if lo[j] > hi[j] {
                let s = Self::empty(data, lo, hi);
                return (s, LpStatus::Infeasible);
            }
        }
        let mut pos = Vec::with_capacity(n + m);
        let mut x = Vec::with_capacity(n + m);
        for j in 0..n {
            let (p, v) = Self::nonbasic_start(lo[j], hi[j]);
            pos.push(p);
            x.push(v);
        }
        let mut artificials = Vec::new();
        let mut row_basic_art = vec![None; m];
        let mut basic_values = vec![0.0; m];
        for i in 0..m {
            let act: f64 = (0..n).map(|j| data.a[i * n + j] * x[j]).sum();
            let (slo, shi) = (data.row_lo[i], data.row_hi[i]);
            if act >= slo - FEAS_TOL && act <= shi + FEAS_TOL {
                pos.push(Pos::Basic(i));
                x.push(act);
                basic_values[i] = act;
            } else {
                let (p, bound) = if act < slo { (Pos::Lower, slo) } else { (Pos::Upper, shi) };
                pos.push(p);
                x.push(bound);
                let r = act - bound;
                let sign = -r.signum();
                row_basic_art[i] = Some(artificials.len());
                artificials.push((i, sign));
                basic_values[i] = r.abs();
            }
        }
        let nart = artificials.len();
        let ncols = n + m + nart;
        for _ in 0..nart {
            lo.push(0.0);
            hi.push(f64::INFINITY);
        }
        let mut tab = vec![0.0; m * ncols];
        let mut basis = vec![0; m];
        for i in 0..m {
            let row = &mut tab[i * ncols..(i + 1) * ncols];
            let (diag, basic_col) = match row_basic_art[i] {
                Some(k) => (artificials[k].1, n + m + k),
                None => (-1.0, n + i),
            };
            for j in 0..n {
                row[j] = data.a[i * n + j] / diag;
            }
            row[n + i] = -1.0 / diag;
            if let Some(k) = row_basic_art[i] {
                row[n + m + k] = 1.0;
            }
            basis[i] = basic_col;
        }
        for k in 0..nart {
            pos.push(Pos::Basic(artificials[k].0));
            x.push(basic_values[artificials[k].0]);
        }
        let mut s = Simplex {
            data,
            m,
            ncols,
            tab,
            basis,
            pos,
            x,
            lo,
            hi,
            cost: vec![0.0; ncols],
            d: vec![0.0; ncols],
            artificials,
            since_refactor: 0,
            iterations: 0,
            max_iterations: 50 * (n + 2 * m) + 1000,
        };

        if nart > 0 {
            for k in 0..nart {
                s.cost[n + m + k] = 1.0;
            }
            s.compute_duals();
            match s.primal_loop() {
                LpStatus::Optimal => {}
                LpStatus::Unbounded => return (s, LpStatus::NumericalFailure),
                other => return (s, other),
            }
            let infeas: f64 = (0..nart).map(|k| s.x[n + m + k]).sum();
            let scale = 1.0 + data.row_lo.iter().chain(&data.row_hi).filter(|v| v.is_finite()).fold(0.0f64, |a, v| a.max(v.abs()));
            if infeas > 1e-8 * scale {
                return (s, LpStatus::Infeasible);
            }
            if !s.drop_artificials() {
                return (s, LpStatus::NumericalFailure);
            }
        }
        let status = s.phase_two();
        (s, status)
    }

    fn empty(data: &'a LpData, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Simplex {
            data,
            m: data.m,
            ncols: data.n + data.m,
            tab: Vec::new(),
            basis: Vec::new(),
            pos: Vec::new(),
            x: vec![0.0; data.n + data.m],
            lo,
            hi,
            cost: Vec::new(),
            d: Vec::new(),
            artificials: Vec::new(),
            since_refactor: 0,
            iterations: 0,
            max_iterations: 0,
        }
    }

    /// Rebuild a tableau from a stored basis under new bounds and re-optimize
    /// with the dual simplex. Returns `None` when the basis cannot be used.
    pub fn warm(data: &'a LpData, basis: &Basis, col_lo: &[f64], col_hi: &[f64]) -> Option<(Self, LpStatus)> {
        let (n, m) = (data.n, data.m);
        if basis.basic.len() != m || basis.at_upper.len() != n + m {
            return None;
        }
        let (lo, hi) = Self::base_bounds(data, col_lo, col_hi);
        if (0..n).any(|j| lo[j] > hi[j]) {
            return Some((Self::empty(data, lo, hi), LpStatus::Infeasible));
        }
        let mut pos = vec![Pos::Lower; n + m];
        for (r, &j) in basis.basic.iter().enumerate() {
            pos[j] = Pos::Basic(r);
        }
        let mut s = Simplex {
            data,
            m,
            ncols: n + m,
            tab: vec![0.0; m * (n + m)],
            basis: basis.basic.clone(),
            pos,
            x: vec![0.0; n + m],
            lo,
            hi,
            cost: vec![0.0; n + m],
            d: vec![0.0; n + m],
            artificials: Vec::new(),
            since_refactor: 0,
            iterations: 0,
            max_iterations: 50 * (n + 2 * m) + 1000,
        };
        for j in 0..n + m {
            if !matches!(s.pos[j], Pos::Basic(_)) {
                s.pos[j] = if basis.at_upper[j] { Pos::Upper } else { Pos::Lower };
            }
        }
        s.cost[..n].copy_from_slice(&data.cost);
        if !s.refactor() {
            return None;
        }
        let status = s.reoptimize();
        Some((s, status))
    }

    /// Change bounds of a structural column in place; call [`Simplex::reoptimize`] afterwards.
    pub fn set_col_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lo[j] = lo;
        self.hi[j] = hi;
    }

    /// Dual simplex from the current (dual feasible) basis, followed by a
    /// primal clean-up pass. Falls back to a cold solve if the basis is not
    /// dual feasible.
    pub fn reoptimize(&mut self) -> LpStatus {
        let n = self.data.n;
        if (0..n).any(|j| self.lo[j] > self.hi[j]) {
            return LpStatus::Infeasible;
        }
        self.place_nonbasics();
        self.compute_basics();
        if !self.is_dual_feasible(1e-7) {
            return self.restart_cold();
        }
        match self.dual_loop() {
            LpStatus::Optimal => self.phase_two(),
            LpStatus::NumericalFailure | LpStatus::IterationLimit => self.restart_cold(),
            other => other,
        }
    }

    fn restart_cold(&mut self) -> LpStatus {
        let n = self.data.n;
        let lo = self.lo[..n].to_vec();
        let hi = self.hi[..n].to_vec();
        let iters = self.iterations;
        let (mut s, status) = Simplex::cold(self.data, &lo, &hi);
        s.iterations += iters;
        *self = s;
        status
    }

    fn phase_two(&mut self) -> LpStatus {
        let n = self.data.n;
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        self.cost[..n].copy_from_slice(&self.data.cost);
        self.compute_duals();
        let mut status = self.primal_loop();
        if status == LpStatus::Optimal && !self.verified() {
            if self.refactor() {
                status = match self.dual_loop() {
                    LpStatus::Optimal => self.primal_loop(),
                    other => other,
                };
            }
            if status == LpStatus::Optimal && !self.verified() {
                status = LpStatus::NumericalFailure;
            }
        }
        status
    }

    fn verified(&self) -> bool {
        let n = self.data.n;
        self.data.max_violation(&self.x[..n], &self.lo[..n], &self.hi[..n]) <= VERIFY_TOL
    }

    fn place_nonbasics(&mut self) {
        for j in 0..self.ncols {
            let (lo, hi) = (self.lo[j], self.hi[j]);
            match self.pos[j] {
                Pos::Basic(_) => {}
                Pos::Lower | Pos::Upper | Pos::Free => {
                    let prefer_upper = self.pos[j] == Pos::Upper;
                    let (p, v) = if prefer_upper && hi.is_finite() {
                        (Pos::Upper, hi)
                    } else if lo.is_finite() {
                        (Pos::Lower, lo)
                    } else if hi.is_finite() {
                        (Pos::Upper, hi)
                    } else {
                        (Pos::Free, 0.0)
                    };
                    self.pos[j] = p;
                    self.x[j] = v;
                }
            }
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.tab[i * self.ncols..(i + 1) * self.ncols]
    }

    fn compute_basics(&mut self) {
        for i in 0..self.m {
            let row = self.row(i);
            let mut v = 0.0;
            for j in 0..self.ncols {
                if !matches!(self.pos[j], Pos::Basic(_)) && row[j] != 0.0 {
                    v -= row[j] * self.x[j];
                }
            }
            let b = self.basis[i];
            self.x[b] = v;
        }
    }

    fn compute_duals(&mut self) {
        let mut d = self.cost.clone();
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.tab[i * self.ncols..(i + 1) * self.ncols];
                for j in 0..self.ncols {
                    d[j] -= cb * row[j];
                }
            }
        }
        for &b in &self.basis {
            d[b] = 0.0;
        }
        self.d = d;
    }

    fn is_dual_feasible(&self, tol: f64) -> bool {
        (0..self.ncols).all(|j| {
            if self.lo[j] == self.hi[j] {
                return true;
            }
            match self.pos[j] {
                Pos::Basic(_) => true,
                Pos::Lower => self.d[j] >= -tol,
                Pos::Upper => self.d[j] <= tol,
                Pos::Free => self.d[j].abs() <= tol,
            }
        })
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let nc = self.ncols;
        let piv = self.tab[r * nc + q];
        {
            let row = &mut self.tab[r * nc..(r + 1) * nc];
            for v in row.iter_mut() {
                *v /= piv;
            }
            row[q] = 1.0;
        }
        let (before, rest) = self.tab.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        for chunk in before.chunks_mut(nc).chain(after.chunks_mut(nc)) {
            let f = chunk[q];
            if f != 0.0 {
                for (c, p) in chunk.iter_mut().zip(prow.iter()) {
                    *c -= f * p;
                }
                chunk[q] = 0.0;
            }
        }
        let f = self.d[q];
        if f != 0.0 {
            for (dj, p) in self.d.iter_mut().zip(prow.iter()) {
                *dj -= f * p;
            }
            self.d[q] = 0.0;
        }
        let leaving = self.basis[r];
        self.basis[r] = q;
        self.pos[q] = Pos::Basic(r);
        // Caller sets the leaving column's nonbasic position.
        self.pos[leaving] = Pos::Lower;
        self.since_refactor += 1;
        self.iterations += 1;
    }

    /// Leaving column takes the bound it reached.
    fn settle_leaving(&mut self, col: usize, to_upper: bool) {
        if to_upper {
            self.pos[col] = Pos::Upper;
            self.x[col] = self.hi[col];
        } else if self.lo[col].is_finite() {
            self.pos[col] = Pos::Lower;
            self.x[col] = self.lo[col];
        } else {
            self.pos[col] = Pos::Upper;
            self.x[col] = self.hi[col];
        }
    }

    fn maybe_refactor(&mut self) -> bool {
        if self.since_refactor >= REFACTOR_EVERY && self.artificials.is_empty() {
            return self.refactor();
        }
        true
    }

    fn primal_loop(&mut self) -> LpStatus {
        let mut streak = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return LpStatus::IterationLimit;
            }
            if !self.maybe_refactor() {
                return LpStatus::NumericalFailure;
            }
            let bland = streak >= DEGENERACY_STREAK;
            // Pricing.
            let mut enter: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..self.ncols {
                let dir = match self.pos[j] {
                    Pos::Basic(_) => continue,
                    _ if self.lo[j] == self.hi[j] => continue,
                    Pos::Lower if self.d[j] < -DUAL_TOL => 1.0,
                    Pos::Upper if self.d[j] > DUAL_TOL => -1.0,
                    Pos::Free if self.d[j].abs() > DUAL_TOL => -self.d[j].signum(),
                    _ => continue,
                };
                if bland {
                    enter = Some((j, dir));
                    break;
                }
                if self.d[j].abs() > best {
                    best = self.d[j].abs();
                    enter = Some((j, dir));
                }
            }
            let Some((q, dir)) = enter else {
                return LpStatus::Optimal;
            };

            // Ratio test.
            let mut theta = self.hi[q] - self.lo[q];
            let mut leave: Option<(usize, bool)> = None;
            let mut leave_alpha = 0.0;
            for i in 0..self.m {
                let alpha = self.tab[i * self.ncols + q] * dir;
                if alpha.abs() <= PIV_TOL {
                    continue;
                }
                let b = self.basis[i];
                let (limit, to_upper) = if alpha > 0.0 {
                    if !self.lo[b].is_finite() {
                        continue;
                    }
                    (((self.x[b] - self.lo[b]) / alpha).max(0.0), false)
                } else {
                    if !self.hi[b].is_finite() {
                        continue;
                    }
                    (((self.hi[b] - self.x[b]) / -alpha).max(0.0), true)
                };
                let better = match leave {
                    None => limit < theta || (!theta.is_finite()),
                    Some((r, _)) => {
                        if bland {
                            limit < theta - 1e-12 || (limit <= theta + 1e-12 && b < self.basis[r])
                        } else {
                            limit < theta - 1e-12 || (limit <= theta + 1e-12 && alpha.abs() > leave_alpha)
                        }
                    }
                };
                if better {
                    theta = limit;
                    leave = Some((i, to_upper));
                    leave_alpha = alpha.abs();
                }
            }
            if !theta.is_finite() {
                return LpStatus::Unbounded;
            }
            if theta <= 1e-12 {
                streak += 1;
            } else {
                streak = 0;
            }

            // Step.
            let step = dir * theta;
            if step != 0.0 {
                self.x[q] += step;
                for i in 0..self.m {
                    let a = self.tab[i * self.ncols + q];
                    if a != 0.0 {
                        let b = self.basis[i];
                        self.x[b] -= a * step;
                    }
                }
            }
            match leave {
                None => {
                    // Bound flip.
                    if dir > 0.0 {
                        self.pos[q] = Pos::Upper;
                        self.x[q] = self.hi[q];
                    } else {
                        self.pos[q] = Pos::Lower;
                        self.x[q] = self.lo[q];
                    }
                    self.iterations += 1;
                }
                Some((r, to_upper)) => {
                    let col = self.basis[r];
                    self.pivot(r, q);
                    self.settle_leaving(col, to_upper);
                }
            }
        }
    }

    fn dual_loop(&mut self) -> LpStatus {
        loop {
            if self.iterations >= self.max_iterations {
                return LpStatus::IterationLimit;
            }
            if !self.maybe_refactor() {
                return LpStatus::NumericalFailure;
            }
            // Leaving row: largest bound violation.
            let mut leave: Option<(usize, bool)> = None;
            let mut worst = 0.0;
            for i in 0..self.m {
                let b = self.basis[i];
                let tol = FEAS_TOL * (1.0 + self.x[b].abs());
                let below = self.lo[b] - self.x[b];
                let above = self.x[b] - self.hi[b];
                if below > tol && below > worst {
                    worst = below;
                    leave = Some((i, false));
                } else if above > tol && above > worst {
                    worst = above;
                    leave = Some((i, true));
                }
            }
            let Some((r, above)) = leave else {
                return LpStatus::Optimal;
            };
            let b = self.basis[r];
            let target = if above { self.hi[b] } else { self.lo[b] };

            // Entering column: keep reduced costs sign-feasible.
            let mut enter: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            let mut best_alpha = 0.0;
            for j in 0..self.ncols {
                if matches!(self.pos[j], Pos::Basic(_)) || self.lo[j] == self.hi[j] {
                    continue;
                }
                let t = self.tab[r * self.ncols + j];
                if t.abs() <= PIV_TOL {
                    continue;
                }
                // x_b changes by -t * dx_j; we need the sign of dx_b given by `above`.
                let want_increase_j = if above { t > 0.0 } else { t < 0.0 };
                let ok = match self.pos[j] {
                    Pos::Lower => want_increase_j,
                    Pos::Upper => !want_increase_j,
                    Pos::Free => true,
                    Pos::Basic(_) => false,
                };
                if !ok {
                    continue;
                }
                let ratio = self.d[j].abs() / t.abs();
                if ratio < best_ratio - 1e-12 || (ratio <= best_ratio + 1e-12 && t.abs() > best_alpha) {
                    best_ratio = ratio;
                    best_alpha = t.abs();
                    enter = Some(j);
                }
            }
            let Some(q) = enter else {
                return LpStatus::Infeasible;
            };
            let t = self.tab[r * self.ncols + q];
            let step = (target - self.x[b]) / -t;
            self.x[q] += step;
            for i in 0..self.m {
                let a = self.tab[i * self.ncols + q];
                if a != 0.0 {
                    let bi = self.basis[i];
                    self.x[bi] -= a * step;
                }
            }
            self.pivot(r, q);
            self.settle_leaving(b, above);
        }
    }

    /// Pivot basic artificials out, then drop the artificial columns.
    fn drop_artificials(&mut self) -> bool {
        let base = self.data.n + self.data.m;
        for r in 0..self.m {
            if self.basis[r] < base {
                continue;
            }
            let mut best = None;
            let mut best_abs = PIV_TOL;
            for j in 0..base {
                if matches!(self.pos[j], Pos::Basic(_)) {
                    continue;
                }
                let t = self.tab[r * self.ncols + j].abs();
                if t > best_abs {
                    best_abs = t;
                    best = Some(j);
                }
            }
            let Some(q) = best else {
                return false;
            };
            let art = self.basis[r];
            self.pivot(r, q);
            self.pos[art] = Pos::Lower;
            self.x[art] = 0.0;
        }
        let old = self.ncols;
        let mut tab = vec![0.0; self.m * base];
        for i in 0..self.m {
            tab[i * base..(i + 1) * base].copy_from_slice(&self.tab[i * old..i * old + base]);
        }
        self.tab = tab;
        self.ncols = base;
        self.pos.truncate(base);
        self.x.truncate(base);
        self.lo.truncate(base);
        self.hi.truncate(base);
        self.cost.truncate(base);
        self.d.truncate(base);
        self.artificials.clear();
        self.compute_basics();
        true
    }

    /// Rebuild `B^-1 [A | -I]`, basic values and reduced costs from the basis.
    fn refactor(&mut self) -> bool {
        debug_assert!(self.artificials.is_empty());
        let (m, nc) = (self.m, self.ncols);
        let width = m + nc;
        let mut aug = vec![0.0; m * width];
        for i in 0..m {
            for (k, &col) in self.basis.iter().enumerate() {
                aug[i * width + k] = self.data.full(i, col);
            }
            for j in 0..nc {
                aug[i * width + m + j] = self.data.full(i, j);
            }
        }
        // Gauss-Jordan with partial pivoting on the basis block.
        let mut perm: Vec<usize> = (0..m).collect();
        for k in 0..m {
            let mut p = k;
            let mut best = aug[perm[k] * width + k].abs();
            for (idx, &rr) in perm.iter().enumerate().skip(k + 1) {
                let v = aug[rr * width + k].abs();
                if v > best {
                    best = v;
                    p = idx;
                }
            }
            if best < 1e-11 {
                return false;
            }
            perm.swap(k, p);
            let pr = perm[k];
            let piv = aug[pr * width + k];
            for v in &mut aug[pr * width..(pr + 1) * width] {
                *v /= piv;
            }
            let pivot_row: Vec<f64> = aug[pr * width..(pr + 1) * width].to_vec();
            for &rr in perm.iter() {
                if rr == pr {
                    continue;
                }
                let f = aug[rr * width + k];
                if f != 0.0 {
                    for (c, p) in aug[rr * width..(rr + 1) * width].iter_mut().zip(&pivot_row) {
                        *c -= f * p;
                    }
                }
            }
        }
        // Row k of the result corresponds to basis position k.
        for k in 0..m {
            let src = perm[k];
            self.tab[k * nc..(k + 1) * nc].copy_from_slice(&aug[src * width + m..(src + 1) * width]);
        }
        for (k, &col) in self.basis.iter().enumerate() {
            self.pos[col] = Pos::Basic(k);
        }
        self.place_nonbasics();
        self.compute_basics();
        self.compute_duals();
        self.since_refactor = 0;
        true
    }

    pub fn basis(&self) -> Basis {
        Basis {
            basic: self.basis.clone(),
            at_upper: self.pos.iter().map(|p| *p == Pos::Upper).collect(),
        }
    }

    pub fn structural(&self) -> &[f64] {
        &self.x[..self.data.n]
    }

    pub fn solution(&self, status: LpStatus) -> LpSolution {
        let x = self.x[..self.data.n].to_vec();
        let objective = self.data.obj_sign * self.data.min_objective(&x);
        LpSolution {
            status,
            objective,
            x,
            iterations: self.iterations,
        }
    }
}

/// Solve the LP relaxation of `model` (binaries relaxed to `[0, 1]`).
pub fn solve_lp(model: &MipModel) -> LpSolution {
    let data = LpData::from_model(model);
    let (s, status) = Simplex::cold(&data, &data.col_lo, &data.col_hi);
    s.solution(status)
}
