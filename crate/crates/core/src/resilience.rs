//! Query drivers: maximum perturbation bounds per class and for the whole
//! network, local robustness verdicts and the largest achievable confidence
//! ratio.

use log::{debug, info};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataflow::{propagate_intervals, tighten_lookback, IntervalBounds, LookbackConfig};
use crate::encoder::{encode_query, EncodeOptions, Encoding, QuerySpec};
use crate::error::{Error, Result};
use crate::mip::RowSense;
use crate::network::{score_margin, Network};
use crate::serialize_real;
use crate::solver::{self, SolveConfig, SolveResult, SolveStatus};

/// Tolerance used when re-checking witnesses by exact forward evaluation.
pub const WITNESS_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ResilienceConfig {
    pub solve: SolveConfig,
    pub encode: EncodeOptions,
    /// Tighten big-M bounds with lookback windows before encoding.
    pub lookback: Option<LookbackConfig>,
    /// Run the feasibility and fixed-input steps first and warm-start the
    /// full model from them.
    pub warm_start: bool,
}

impl Default for ResilienceConfig {
    fn default() -> Self {
        ResilienceConfig {
            solve: SolveConfig::default(),
            encode: EncodeOptions::default(),
            lookback: None,
            warm_start: true,
        }
    }
}

impl ResilienceConfig {
    pub fn with_solve(mut self, solve: SolveConfig) -> Self {
        self.solve = solve;
        self
    }
}

/// Interval bounds for `net`, tightened when the configuration asks for it.
pub fn bounds_for(net: &Network, cfg: &ResilienceConfig) -> IntervalBounds {
    let plain = propagate_intervals(net);
    match &cfg.lookback {
        Some(lb) => tighten_lookback(net, &plain, lb),
        None => plain,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiStatus {
    /// `phi` is the optimum of the encoded problem.
    Optimal,
    /// No input is strongly classified to the class, or no in-domain
    /// perturbation of such an input reaches the required dominance;
    /// `phi` is `+inf`.
    Infeasible,
    /// A solver limit stopped the search; `[phi_lower, phi]` brackets the optimum.
    Limit,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResilienceResult {
    pub m: usize,
    pub alpha: f64,
    pub k: usize,
    pub status: PhiStatus,
    /// Best value found (`+inf` when infeasible or when nothing was found).
    #[serde(serialize_with = "serialize_real")]
    pub phi: f64,
    /// Proven lower bound on the optimum.
    #[serde(serialize_with = "serialize_real")]
    pub phi_lower: f64,
    /// Bound obtained from the fixed-input step, when it ran and succeeded.
    pub phi_ini: Option<f64>,
    pub witness_a: Option<Vec<f64>>,
    pub witness_eps: Option<Vec<f64>>,
    /// Whether the witness re-checks under exact forward evaluation.
    pub witness_valid: bool,
    /// False when atan envelopes make `phi` an under-approximation.
    pub exact: bool,
    pub solver: Option<SolveResult>,
}

impl ResilienceResult {
    fn infeasible(q: &QuerySpec, exact: bool, solver: Option<SolveResult>) -> Self {
        ResilienceResult {
            m: q.m,
            alpha: q.alpha,
            k: q.k,
            status: PhiStatus::Infeasible,
            phi: f64::INFINITY,
            phi_lower: f64::INFINITY,
            phi_ini: None,
            witness_a: None,
            witness_eps: None,
            witness_valid: false,
            exact,
            solver,
        }
    }

    pub fn is_resolved(&self) -> bool {
        self.status != PhiStatus::Limit
    }
}

/// Check `(a, eps)` against the network itself: `a` strongly classifies to
/// `m` at `alpha`, `a + eps` stays in the domain, and at least `k`
/// competitors score at or above class `m` there.
pub fn validate_witness(net: &Network, m: usize, alpha: f64, k: usize, a: &[f64], eps: &[f64], tol: f64) -> Result<bool> {
    let sa = net.scores(a)?;
    if score_margin(&sa, m) < alpha.ln() - tol || !net.contains_input(a, tol) {
        return Ok(false);
    }
    let p: Vec<f64> = a.iter().zip(eps).map(|(x, e)| x + e).collect();
    if !net.contains_input(&p, tol) {
        return Ok(false);
    }
    Ok(net.competitors_at_or_above(&p, m, tol)? >= k)
}

fn solve_encoding(enc: &Encoding, cfg: &SolveConfig) -> SolveResult {
    solver::solve(&enc.model, cfg)
}

/// Largest 1-norm perturbation bound for class `m` (1-based): the least
/// perturbation of any input strongly classified to `m` at `alpha` that puts
/// at least `k` other classes at or above `m`. Perturbations strictly below
/// the returned value are safe.
pub fn compute_phi(net: &Network, m: usize, alpha: f64, k: usize, cfg: &ResilienceConfig) -> Result<ResilienceResult> {
    let query = QuerySpec::max_perturbation(m, alpha, k);
    query.validate(net)?;
    let bounds = bounds_for(net, cfg);
    compute_phi_with_bounds(net, &bounds, &query, cfg)
}

fn compute_phi_with_bounds(
    net: &Network,
    bounds: &IntervalBounds,
    query: &QuerySpec,
    cfg: &ResilienceConfig,
) -> Result<ResilienceResult> {
    let (m, alpha, k) = (query.m, query.alpha, query.k);
    let exact = !net.has_atan();

    // Step 1: any strongly classified input.
    let strong = encode_query(net, bounds, &QuerySpec::strong_input(m, alpha), &cfg.encode)?;
    let s1 = solve_encoding(&strong, &cfg.solve);
    debug!("phi m={m}: step 1 {:?}", s1.status);
    let a_ini = match s1.status {
        SolveStatus::Infeasible => return Ok(ResilienceResult::infeasible(query, exact, Some(s1))),
        SolveStatus::Optimal | SolveStatus::FeasibleBound => {
            let asg = s1.assignment.as_ref().expect("solution present");
            Some(strong.witness(asg).0)
        }
        _ => None,
    };

    // Step 2: smallest violation around that input.
    let mut phi_ini = None;
    let mut warm = None;
    if let (true, Some(a0)) = (cfg.warm_start, &a_ini) {
        let a0 = clamp_to_domain(net, a0);
        let fixed = encode_query(net, bounds, &QuerySpec::fixed_input(a0.clone(), m, k), &cfg.encode)?;
        let s2 = solve_encoding(&fixed, &cfg.solve);
        debug!("phi m={m}: step 2 {:?} {}", s2.status, s2.objective);
        if s2.status.has_solution() {
            let (_, eps) = fixed.witness(s2.assignment.as_ref().expect("solution present"));
            phi_ini = Some(s2.objective);
            warm = Some((a0, eps));
        }
    }

    // Step 3: the full problem.
    let mut full = encode_query(net, bounds, query, &cfg.encode)?;
    if let Some(bound) = phi_ini {
        let limit = bound * (1.0 + 1e-9) + 1e-9;
        let eps: Vec<_> = full.eps_vars().iter().map(|&v| (v, 1.0)).collect();
        let abs: Vec<_> = full.eps_abs_vars().iter().map(|&v| (v, 1.0)).collect();
        full.model.add_constraint("restrict_hi", &eps, RowSense::Le, limit)?;
        full.model.add_constraint("restrict_lo", &eps, RowSense::Ge, -limit)?;
        full.model.add_constraint("restrict_abs", &abs, RowSense::Le, limit)?;
    }
    if let Some((a0, eps)) = &warm {
        match full.complete(net, Some(a0), Some(eps)) {
            Ok(asg) if full.model.check_feasible(&asg, cfg.solve.int_tol) => {
                full.model.set_warm_start(asg)?;
            }
            Ok(asg) => debug!(
                "phi m={m}: warm start rejected ({} violations)",
                full.model.violations(&asg, cfg.solve.int_tol).len()
            ),
            Err(e) => debug!("phi m={m}: warm start not built: {e}"),
        }
    }
    let s3 = solve_encoding(&full, &cfg.solve);
    info!("phi m={m} alpha={alpha} k={k}: {:?} {}", s3.status, s3.objective);

    let mut result = ResilienceResult {
        m,
        alpha,
        k,
        status: PhiStatus::Optimal,
        phi: f64::INFINITY,
        phi_lower: 0.0,
        phi_ini,
        witness_a: None,
        witness_eps: None,
        witness_valid: false,
        exact,
        solver: None,
    };
    match s3.status {
        SolveStatus::Infeasible => return Ok(ResilienceResult::infeasible(query, exact, Some(s3))),
        SolveStatus::Unbounded => {
            return Err(Error::Encoding("perturbation model reported unbounded".into()));
        }
        SolveStatus::Optimal => {
            result.phi = s3.objective;
            result.phi_lower = s3.dual_bound.max(0.0);
        }
        SolveStatus::FeasibleBound | SolveStatus::Limit => {
            result.status = PhiStatus::Limit;
            result.phi = s3.objective;
            result.phi_lower = s3.dual_bound.max(0.0);
        }
    }
    if let Some(asg) = &s3.assignment {
        let (a, eps) = full.witness(asg);
        result.witness_valid = validate_witness(net, m, alpha, k, &a, &eps, WITNESS_TOL)?;
        result.witness_a = Some(a);
        result.witness_eps = Some(eps);
    }
    result.solver = Some(s3);
    Ok(result)
}

fn clamp_to_domain(net: &Network, a: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(net.input_bounds())
        .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct XiResult {
    pub alpha: f64,
    pub k: usize,
    pub classes: Vec<ResilienceResult>,
    /// Minimum of the finite per-class values, when every class is resolved
    /// and at least one is finite.
    pub xi: Option<f64>,
    /// Bracket on the minimum; equal ends when every class is resolved.
    #[serde(serialize_with = "serialize_real")]
    pub xi_lower: f64,
    #[serde(serialize_with = "serialize_real")]
    pub xi_upper: f64,
    /// False when every class is infeasible, so no class is ever strongly
    /// classified (or never perturbable) and the minimum is taken over nothing.
    pub defined: bool,
}

/// Per-class bounds for every class, computed concurrently, and their minimum.
pub fn compute_xi(net: &Network, alpha: f64, k: usize, cfg: &ResilienceConfig) -> Result<XiResult> {
    let bounds = bounds_for(net, cfg);
    let classes: Vec<usize> = (1..=net.num_classes()).collect();
    for &m in &classes {
        QuerySpec::max_perturbation(m, alpha, k).validate(net)?;
    }
    let results: Vec<ResilienceResult> = classes
        .par_iter()
        .map(|&m| compute_phi_with_bounds(net, &bounds, &QuerySpec::max_perturbation(m, alpha, k), cfg))
        .collect::<Result<_>>()?;
    Ok(summarize_xi(alpha, k, results))
}

fn summarize_xi(alpha: f64, k: usize, classes: Vec<ResilienceResult>) -> XiResult {
    let all_resolved = classes.iter().all(ResilienceResult::is_resolved);
    let xi_upper = classes.iter().map(|r| r.phi).fold(f64::INFINITY, f64::min);
    let xi_lower = classes
        .iter()
        .map(|r| if r.is_resolved() { r.phi } else { r.phi_lower })
        .fold(f64::INFINITY, f64::min);
    let defined = !(all_resolved && xi_upper.is_infinite());
    XiResult {
        alpha,
        k,
        xi: (all_resolved && xi_upper.is_finite()).then_some(xi_upper),
        xi_lower,
        xi_upper,
        defined,
        classes,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum Verdict {
    /// No perturbation within the budget reaches the dominance condition.
    Robust,
    /// A perturbation within the budget does; it re-checks exactly.
    Violated { eps: Vec<f64> },
    /// The solver stopped early, or a relaxed model produced a candidate
    /// that does not re-check exactly.
    Unknown,
}

#[derive(Clone, Debug, Serialize)]
pub struct RobustnessResult {
    pub m: usize,
    pub k: usize,
    pub delta: f64,
    pub input: Vec<f64>,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub solver: SolveResult,
}

/// Decide whether any perturbation of `a` with 1-norm at most `delta` puts
/// at least `k` classes at or above class `m`. The input must be classified
/// to `m` with ratio at least `alpha` (pass 1 for plain top-1).
#[allow(clippy::too_many_arguments)]
pub fn check_local_robustness(
    net: &Network,
    a: &[f64],
    m: usize,
    delta: f64,
    k: usize,
    alpha: f64,
    cfg: &ResilienceConfig,
) -> Result<RobustnessResult> {
    let query = QuerySpec::local_robustness(a.to_vec(), delta, m, k);
    query.validate(net)?;
    let scores = net.scores(a)?;
    if score_margin(&scores, m) < alpha.ln() {
        return Err(Error::Query(format!(
            "input is not classified to class {m} with ratio {alpha}"
        )));
    }
    // Only the budget ball matters, so bound over it for tighter constants.
    let ball: Vec<(f64, f64)> = a
        .iter()
        .zip(net.input_bounds())
        .map(|(&v, &(lo, hi))| ((v - delta).max(lo), (v + delta).min(hi)))
        .collect();
    let local = net.with_input_bounds(ball)?;
    let bounds = bounds_for(&local, cfg);
    let enc = encode_query(&local, &bounds, &query, &cfg.encode)?;
    let res = solve_encoding(&enc, &cfg.solve);
    let verdict = match res.status {
        SolveStatus::Infeasible => Verdict::Robust,
        SolveStatus::Optimal | SolveStatus::FeasibleBound => {
            let (_, eps) = enc.witness(res.assignment.as_ref().expect("solution present"));
            let norm: f64 = eps.iter().map(|e| e.abs()).sum();
            let valid = norm <= delta + WITNESS_TOL
                && validate_witness(net, m, 1.0, k, a, &eps, WITNESS_TOL)?;
            if valid {
                Verdict::Violated { eps }
            } else {
                debug!("robustness candidate failed exact re-check");
                Verdict::Unknown
            }
        }
        SolveStatus::Limit => Verdict::Unknown,
        SolveStatus::Unbounded => return Err(Error::Encoding("robustness model reported unbounded".into())),
    };
    Ok(RobustnessResult {
        m,
        k,
        delta,
        input: a.to_vec(),
        verdict,
        solver: res,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaStatus {
    Optimal,
    /// Class `m` never has the top score.
    NeverTop,
    /// Limit reached; `alpha_max` is a lower bound and `alpha_upper` an upper bound.
    Limit,
}

#[derive(Clone, Debug, Serialize)]
pub struct MaxAlphaResult {
    pub m: usize,
    pub status: AlphaStatus,
    /// `e^t` for the best margin `t` found.
    #[serde(serialize_with = "serialize_real")]
    pub alpha_max: f64,
    #[serde(serialize_with = "serialize_real")]
    pub alpha_upper: f64,
    pub input: Option<Vec<f64>>,
    pub exact: bool,
    pub solver: SolveResult,
}

/// Largest ratio `alpha` at which some input is strongly classified to `m`.
pub fn compute_max_alpha(net: &Network, m: usize, cfg: &ResilienceConfig) -> Result<MaxAlphaResult> {
    let query = QuerySpec::max_alpha(m);
    query.validate(net)?;
    let bounds = bounds_for(net, cfg);
    let enc = encode_query(net, &bounds, &query, &cfg.encode)?;
    let res = solve_encoding(&enc, &cfg.solve);
    let input = res.assignment.as_ref().map(|asg| enc.witness(asg).0);
    let (status, alpha_max, alpha_upper) = match res.status {
        SolveStatus::Optimal => (AlphaStatus::Optimal, res.objective.exp(), res.dual_bound.exp()),
        SolveStatus::Infeasible => (AlphaStatus::NeverTop, f64::NAN, f64::NAN),
        SolveStatus::FeasibleBound => (AlphaStatus::Limit, res.objective.exp(), res.dual_bound.exp()),
        SolveStatus::Limit => (AlphaStatus::Limit, f64::NAN, res.dual_bound.exp()),
        SolveStatus::Unbounded => return Err(Error::Encoding("max-alpha model reported unbounded".into())),
    };
    Ok(MaxAlphaResult {
        m,
        status,
        alpha_max,
        alpha_upper,
        input,
        exact: !net.has_atan(),
        solver: res,
    })
}
