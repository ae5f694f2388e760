//! MILP encodings of network layers and of the perturbation queries.
//!
//! Dense layers become one affine equality per node. ReLU nodes with an
//! undecided phase use the six-row big-M gadget with one binary; max-pool
//! groups are built from pairwise max gadgets; atan nodes get a piecewise
//! linear envelope around the quadratic approximation
//! `q(t) = (pi/4) t + 0.273 t (1 - |t|)`, which is within [`ATAN_APPROX_ERROR`]
//! of `atan` on `[-1, 1]`, and use `atan(t) = +-pi/2 - atan(1/t)` outside.
//!
//! The softmax layer is never encoded: strong classification at ratio `alpha`
//! is equivalent to `s_m - s_j >= ln(alpha)` on the scores feeding it.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use crate::dataflow::{big_m, IntervalBounds, Phase};
use crate::error::{Error, Result};
use crate::mip::{Assignment, ConId, Integrality, MipModel, ObjSense, RowSense, VarId};
use crate::network::{ForwardTrace, LayerKind, Network, Weights};

/// Maximum deviation of the quadratic approximation from `atan` on `[-1, 1]`.
pub const ATAN_APPROX_ERROR: f64 = 0.0038;
const ATAN_QUAD: f64 = 0.273;

/// Quadratic approximation of `atan` on `[-1, 1]`.
pub fn atan_quadratic(t: f64) -> f64 {
    FRAC_PI_4 * t + ATAN_QUAD * t * (1.0 - t.abs())
}

/// Largest gap between `q` and its chord (or endpoint tangents) on one
/// segment when `[0, 1]` is split into `segments` equal pieces.
pub fn atan_secant_gap(segments: usize) -> f64 {
    let h = 1.0 / segments as f64;
    ATAN_QUAD * h * h / 4.0
}

#[derive(Clone, Debug)]
pub struct EncodeOptions {
    /// Envelope pieces per unit interval of `[0, 1]`, on each side of zero.
    pub atan_segments: usize,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions { atan_segments: 8 }
    }
}

/// What to ask of the network.
#[derive(Clone, Debug, PartialEq)]
pub enum QueryKind {
    /// Smallest 1-norm perturbation of any strongly classified input that
    /// puts at least `k` competitors at or above class `m`.
    MaxPerturbation,
    /// Is there a perturbation of the fixed `input` with 1-norm at most
    /// `delta` that puts `k` competitors at or above class `m`?
    LocalRobustness { input: Vec<f64>, delta: f64 },
    /// Largest `t` such that some input has `s_m - s_j >= t` for all `j != m`.
    MaxAlpha,
    /// Any input strongly classified to `m` at `alpha`; zero objective.
    StrongInput,
    /// Smallest violating perturbation of the fixed `input`.
    FixedInput { input: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuerySpec {
    pub kind: QueryKind,
    /// Target class, 1-based.
    pub m: usize,
    pub alpha: f64,
    pub k: usize,
}

impl QuerySpec {
    pub fn max_perturbation(m: usize, alpha: f64, k: usize) -> Self {
        QuerySpec {
            kind: QueryKind::MaxPerturbation,
            m,
            alpha,
            k,
        }
    }

    pub fn local_robustness(input: Vec<f64>, delta: f64, m: usize, k: usize) -> Self {
        QuerySpec {
            kind: QueryKind::LocalRobustness { input, delta },
            m,
            alpha: 1.0,
            k,
        }
    }

    pub fn max_alpha(m: usize) -> Self {
        QuerySpec {
            kind: QueryKind::MaxAlpha,
            m,
            alpha: 1.0,
            k: 1,
        }
    }

    pub fn strong_input(m: usize, alpha: f64) -> Self {
        QuerySpec {
            kind: QueryKind::StrongInput,
            m,
            alpha,
            k: 1,
        }
    }

    pub fn fixed_input(input: Vec<f64>, m: usize, k: usize) -> Self {
        QuerySpec {
            kind: QueryKind::FixedInput { input },
            m,
            alpha: 1.0,
            k,
        }
    }

    fn uses_k(&self) -> bool {
        matches!(
            self.kind,
            QueryKind::MaxPerturbation | QueryKind::LocalRobustness { .. } | QueryKind::FixedInput { .. }
        )
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        let classes = net.num_classes();
        if self.m == 0 || self.m > classes {
            return Err(Error::Query(format!("class {} outside 1..={classes}", self.m)));
        }
        if !(self.alpha >= 1.0) || !self.alpha.is_finite() {
            return Err(Error::Query(format!("alpha must be a finite value >= 1, got {}", self.alpha)));
        }
        if self.uses_k() && (self.k == 0 || self.k >= classes) {
            return Err(Error::Query(format!("k must lie in 1..={}, got {}", classes - 1, self.k)));
        }
        match &self.kind {
            QueryKind::MaxPerturbation | QueryKind::MaxAlpha | QueryKind::StrongInput => {
                if !net.ends_in_softmax() {
                    return Err(Error::Query("query requires a network ending in softmax".into()));
                }
            }
            QueryKind::LocalRobustness { input, delta } => {
                if !(*delta >= 0.0) || !delta.is_finite() {
                    return Err(Error::Query(format!("delta must be finite and >= 0, got {delta}")));
                }
                check_input(net, input)?;
            }
            QueryKind::FixedInput { input } => check_input(net, input)?,
        }
        Ok(())
    }
}

fn check_input(net: &Network, input: &[f64]) -> Result<()> {
    if input.len() != net.input_dim() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            got: input.len(),
        });
    }
    for (index, (&value, &(lo, hi))) in input.iter().zip(net.input_bounds()).enumerate() {
        if !(value >= lo && value <= hi) {
            return Err(Error::OutOfDomain { index, value, lo, hi });
        }
    }
    Ok(())
}

fn continuous(model: &mut MipModel, name: String, lo: f64, hi: f64) -> Result<VarId> {
    model.add_variable(name, lo, hi, Integrality::Continuous)
}

/// Inflated difference bound used for pairwise big-M rows.
fn pair_m(d: f64) -> f64 {
    d.max(0.0) * (1.0 + 1e-7) + 1e-9
}

/// `im - sum_j w_ji x_j = w_0i`.
pub fn encode_affine(
    model: &mut MipModel,
    name: String,
    weights: &Weights,
    node: usize,
    prev: &[VarId],
    im: VarId,
) -> Result<ConId> {
    let mut coeffs = vec![(im, 1.0)];
    for (j, &v) in prev.iter().enumerate() {
        let w = weights.weight(j, node);
        if w != 0.0 {
            coeffs.push((v, -w));
        }
    }
    model.add_constraint(name, &coeffs, RowSense::Eq, weights.bias(node))
}

/// `x = max(0, im)` for `im` in `im_bounds`. Returns the indicator binary
/// when the phase is undecided (`b = 1` exactly when `im >= 0` on a trace).
pub fn encode_relu(
    model: &mut MipModel,
    name: &str,
    im: VarId,
    x: VarId,
    im_bounds: (f64, f64),
) -> Result<Option<VarId>> {
    let (lo, hi) = im_bounds;
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Encoding(format!("{name}: unbounded pre-activation")));
    }
    match Phase::from_interval(lo, hi) {
        Phase::AlwaysActive => {
            model.add_constraint(format!("{name}_act"), &[(x, 1.0), (im, -1.0)], RowSense::Eq, 0.0)?;
            Ok(None)
        }
        Phase::AlwaysInactive => {
            model.add_constraint(format!("{name}_off"), &[(x, 1.0)], RowSense::Eq, 0.0)?;
            Ok(None)
        }
        Phase::Undecided => {
            let m = big_m(lo, hi);
            let b = model.add_binary(format!("{name}_b"))?;
            relu_gadget_rows(model, name, im, x, b, m)?;
            Ok(Some(b))
        }
    }
}

/// The six big-M rows tying `x`, `im` and `b` with constant `m`.
pub fn relu_gadget_rows(model: &mut MipModel, name: &str, im: VarId, x: VarId, b: VarId, m: f64) -> Result<()> {
    model.add_constraint(format!("{name}_2a"), &[(x, 1.0)], RowSense::Ge, 0.0)?;
    model.add_constraint(format!("{name}_2b"), &[(x, 1.0), (im, -1.0)], RowSense::Ge, 0.0)?;
    model.add_constraint(format!("{name}_3a"), &[(im, 1.0), (b, -m)], RowSense::Le, 0.0)?;
    model.add_constraint(format!("{name}_3b"), &[(im, 1.0), (b, -m)], RowSense::Ge, -m)?;
    model.add_constraint(format!("{name}_4a"), &[(x, 1.0), (im, -1.0), (b, m)], RowSense::Le, m)?;
    model.add_constraint(format!("{name}_4b"), &[(x, 1.0), (b, -m)], RowSense::Le, 0.0)?;
    Ok(())
}

/// A variable together with its known interval.
#[derive(Clone, Copy, Debug)]
pub struct Bounded {
    pub var: VarId,
    pub lo: f64,
    pub hi: f64,
}

/// `y = max(u, v)`. Returns the selector binary (`b = 1` when `u >= v`)
/// unless one operand dominates the other over its whole interval.
pub fn encode_max_pair(model: &mut MipModel, name: &str, u: Bounded, v: Bounded, y: VarId) -> Result<Option<VarId>> {
    if u.lo >= v.hi {
        model.add_constraint(format!("{name}_eq"), &[(y, 1.0), (u.var, -1.0)], RowSense::Eq, 0.0)?;
        return Ok(None);
    }
    if v.lo >= u.hi {
        model.add_constraint(format!("{name}_eq"), &[(y, 1.0), (v.var, -1.0)], RowSense::Eq, 0.0)?;
        return Ok(None);
    }
    let m1 = pair_m(v.hi - u.lo);
    let m2 = pair_m(u.hi - v.lo);
    let b = model.add_binary(format!("{name}_b"))?;
    model.add_constraint(format!("{name}_gu"), &[(y, 1.0), (u.var, -1.0)], RowSense::Ge, 0.0)?;
    model.add_constraint(format!("{name}_gv"), &[(y, 1.0), (v.var, -1.0)], RowSense::Ge, 0.0)?;
    model.add_constraint(format!("{name}_lu"), &[(y, 1.0), (u.var, -1.0), (b, m1)], RowSense::Le, m1)?;
    model.add_constraint(format!("{name}_lv"), &[(y, 1.0), (v.var, -1.0), (b, -m2)], RowSense::Le, 0.0)?;
    Ok(Some(b))
}

/// Pairwise max gadget, kept for completing assignments from traces.
#[derive(Clone, Debug)]
struct PairGadget {
    u: VarId,
    v: VarId,
    y: VarId,
    b: Option<VarId>,
}

/// `y = max(group)` for groups of two or four operands; four-operand groups
/// reduce as `max(max(g1, g2), max(g3, g4))` and need at most three binaries.
fn encode_pool_group(
    model: &mut MipModel,
    name: &str,
    group: &[Bounded],
    y: VarId,
    gadgets: &mut Vec<PairGadget>,
) -> Result<Vec<VarId>> {
    let mut binaries = Vec::new();
    let mut pair = |model: &mut MipModel, tag: String, u: Bounded, v: Bounded, y: VarId| -> Result<()> {
        let b = encode_max_pair(model, &tag, u, v, y)?;
        binaries.extend(b);
        gadgets.push(PairGadget {
            u: u.var,
            v: v.var,
            y,
            b,
        });
        Ok(())
    };
    match group {
        [u, v] => pair(model, name.to_string(), *u, *v, y)?,
        [a, b, c, d] => {
            let mid = |model: &mut MipModel, tag: &str, u: &Bounded, v: &Bounded| -> Result<Bounded> {
                let lo = u.lo.max(v.lo);
                let hi = u.hi.max(v.hi);
                let var = continuous(model, format!("{name}_{tag}"), lo, hi)?;
                Ok(Bounded { var, lo, hi })
            };
            let left = mid(model, "l", a, b)?;
            let right = mid(model, "r", c, d)?;
            pair(model, format!("{name}_pl"), *a, *b, left.var)?;
            pair(model, format!("{name}_pr"), *c, *d, right.var)?;
            pair(model, format!("{name}_pt"), left, right, y)?;
        }
        _ => {
            return Err(Error::Encoding(format!(
                "{name}: pool group of size {} (expected 2 or 4)",
                group.len()
            )))
        }
    }
    Ok(binaries)
}

/// Softmax-free strong classification rows `s_m - s_i >= ln(alpha)`, `i != m`
/// (`m` is 1-based).
pub fn encode_strong_classification(
    model: &mut MipModel,
    prefix: &str,
    scores: &[VarId],
    m: usize,
    alpha: f64,
) -> Result<Vec<ConId>> {
    if !(alpha >= 1.0) {
        return Err(Error::Query(format!("alpha must be >= 1, got {alpha}")));
    }
    if m == 0 || m > scores.len() {
        return Err(Error::Query(format!("class {m} outside 1..={}", scores.len())));
    }
    let ln_alpha = alpha.ln();
    let sm = scores[m - 1];
    scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != m - 1)
        .map(|(i, &si)| {
            model.add_constraint(
                format!("{prefix}_strong_{}", i + 1),
                &[(sm, 1.0), (si, -1.0)],
                RowSense::Ge,
                ln_alpha,
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// atan envelope

/// One piece of the atan envelope, over `im` in `[p, q]`.
#[derive(Clone, Debug)]
struct AtanSegment {
    p: f64,
    q: f64,
    /// `+1` for pieces right of zero, `-1` left of it; `w = sign * im >= 0`.
    sign: f64,
    /// Pieces with `|im| >= 1` also carry the reciprocal `r = 1 / w`.
    outer: bool,
    z: Option<VarId>,
    im: VarId,
    x: VarId,
    r: Option<VarId>,
}

#[derive(Clone, Debug)]
pub struct AtanGadget {
    im: VarId,
    x: VarId,
    segments: Vec<AtanSegment>,
}

impl AtanGadget {
    pub fn binaries(&self) -> Vec<VarId> {
        self.segments.iter().filter_map(|s| s.z).collect()
    }

    fn complete(&self, a: &mut Assignment) {
        let im = a.get(self.im);
        let x = a.get(self.x);
        let chosen = self
            .segments
            .iter()
            .position(|s| im >= s.p && im <= s.q)
            .unwrap_or_else(|| {
                // Clamp rounding noise at the ends of the range.
                if im < self.segments[0].p {
                    0
                } else {
                    self.segments.len() - 1
                }
            });
        for (k, s) in self.segments.iter().enumerate() {
            let on = k == chosen;
            if let Some(z) = s.z {
                a.set(z, if on { 1.0 } else { 0.0 });
                a.set(s.im, if on { im } else { 0.0 });
                a.set(s.x, if on { x } else { 0.0 });
            }
            if let Some(r) = s.r {
                a.set(r, if on { 1.0 / (s.sign * im) } else { 0.0 });
            }
        }
    }
}

/// Breakpoints of the envelope restricted to `[lo, hi]`, each piece lying in
/// one of `[-inf, -1]`, `[-1, 0]`, `[0, 1]`, `[1, inf]`.
fn atan_breakpoints(lo: f64, hi: f64, segments: usize) -> Vec<(f64, f64)> {
    let n = segments as f64;
    let mut pts: Vec<f64> = Vec::new();
    // Core pieces uniform in im; outer pieces uniform in the reciprocal.
    for k in 0..=segments {
        let t = k as f64 / n;
        pts.push(t);
        pts.push(-t);
        if k > 0 {
            let w = 1.0 / t;
            pts.push(w);
            pts.push(-w);
        }
    }
    pts.retain(|&p| p > lo && p < hi);
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    if pts.len() == 1 {
        return vec![(lo, hi)];
    }
    pts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Chord of `f` through `(a, f(a))`, `(b, f(b))` as `(slope, intercept)`.
fn chord(f: impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    if (b - a).abs() < 1e-15 {
        return (0.0, f(a));
    }
    let slope = (f(b) - f(a)) / (b - a);
    (slope, f(a) - slope * a)
}

fn quad_derivative(t: f64) -> f64 {
    // For t >= 0: q(t) = (pi/4 + c) t - c t^2.
    FRAC_PI_4 + ATAN_QUAD - 2.0 * ATAN_QUAD * t
}

/// Tangent of `q` (restricted to `t >= 0`) at `t` as `(slope, intercept)`.
fn quad_tangent(t: f64) -> (f64, f64) {
    let s = quad_derivative(t);
    (s, atan_quadratic(t) - s * t)
}

/// `x ~ atan(im)` for `im` in `im_bounds`, via a multiple-choice envelope
/// with one binary per piece (none when the range fits in one piece).
/// The envelope contains `atan` everywhere on the range.
pub fn encode_atan(
    model: &mut MipModel,
    name: &str,
    im: VarId,
    x: VarId,
    im_bounds: (f64, f64),
    segments: usize,
) -> Result<AtanGadget> {
    let (lo, hi) = im_bounds;
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Encoding(format!("{name}: unbounded pre-activation")));
    }
    if segments < 2 {
        return Err(Error::Encoding(format!("{name}: need at least 2 envelope segments")));
    }
    let pieces = atan_breakpoints(lo, hi, segments);
    let single = pieces.len() == 1;
    let mut out = Vec::with_capacity(pieces.len());
    for (k, &(p, q)) in pieces.iter().enumerate() {
        let sign = if p + q >= 0.0 { 1.0 } else { -1.0 };
        let outer = p >= 1.0 - 1e-12 || q <= -1.0 + 1e-12;
        let tag = format!("{name}_s{}", k + 1);
        let (z, im_s, x_s) = if single {
            (None, im, x)
        } else {
            let z = model.add_binary(format!("{tag}_z"))?;
            let im_s = continuous(model, format!("{tag}_im"), p.min(0.0), q.max(0.0))?;
            let x_s = continuous(model, format!("{tag}_x"), -2.0, 2.0)?;
            model.add_constraint(format!("{tag}_lo"), &[(im_s, 1.0), (z, -p)], RowSense::Ge, 0.0)?;
            model.add_constraint(format!("{tag}_hi"), &[(im_s, 1.0), (z, -q)], RowSense::Le, 0.0)?;
            (Some(z), im_s, x_s)
        };
        let r = if outer {
            let wp = if sign > 0.0 { p } else { -q };
            Some(continuous(model, format!("{tag}_r"), 0.0, 1.0 / wp.max(1.0))?)
        } else {
            None
        };
        let seg = AtanSegment {
            p,
            q,
            sign,
            outer,
            z,
            im: im_s,
            x: x_s,
            r,
        };
        atan_segment_rows(model, &tag, &seg)?;
        out.push(seg);
    }
    if !single {
        let zs: Vec<(VarId, f64)> = out.iter().map(|s| (s.z.unwrap(), 1.0)).collect();
        model.add_constraint(format!("{name}_one"), &zs, RowSense::Eq, 1.0)?;
        let members: Vec<VarId> = zs.iter().map(|&(z, _)| z).collect();
        model.add_choice_group(&members)?;
        let mut ims = vec![(im, 1.0)];
        ims.extend(out.iter().map(|s| (s.im, -1.0)));
        model.add_constraint(format!("{name}_im"), &ims, RowSense::Eq, 0.0)?;
        let mut xs = vec![(x, 1.0)];
        xs.extend(out.iter().map(|s| (s.x, -1.0)));
        model.add_constraint(format!("{name}_x"), &xs, RowSense::Eq, 0.0)?;
    }
    Ok(AtanGadget {
        im,
        x,
        segments: out,
    })
}

/// Add `sum coeffs + c * z (sense) 0`, folding `c` into the right-hand side
/// when the piece has no indicator.
fn homogeneous_row(
    model: &mut MipModel,
    name: String,
    mut coeffs: Vec<(VarId, f64)>,
    c: f64,
    z: Option<VarId>,
    sense: RowSense,
) -> Result<()> {
    match z {
        Some(z) => {
            coeffs.push((z, c));
            model.add_constraint(name, &coeffs, sense, 0.0)?;
        }
        None => {
            model.add_constraint(name, &coeffs, sense, -c)?;
        }
    }
    Ok(())
}

fn atan_segment_rows(model: &mut MipModel, tag: &str, s: &AtanSegment) -> Result<()> {
    let sg = s.sign;
    let e = ATAN_APPROX_ERROR;
    // w = sg * im, y = sg * x, both measured on the non-negative side.
    let (wp, wq) = if sg > 0.0 { (s.p, s.q) } else { (-s.q, -s.p) };
    let wmid = 0.5 * (wp + wq);
    if !s.outer {
        // q is concave on [0, 1]: chord below, tangents above.
        let (a, b) = chord(atan_quadratic, wp, wq);
        // y >= a w + b - e
        homogeneous_row(model, format!("{tag}_qlo"), vec![(s.x, sg), (s.im, -a * sg)], -(b - e), s.z, RowSense::Ge)?;
        for (j, t) in [wp, wmid, wq].into_iter().enumerate() {
            let (a, b) = quad_tangent(t);
            // y <= a w + b + e
            homogeneous_row(
                model,
                format!("{tag}_qhi{j}"),
                vec![(s.x, sg), (s.im, -a * sg)],
                -(b + e),
                s.z,
                RowSense::Le,
            )?;
        }
        return Ok(());
    }
    let r = s.r.expect("outer pieces carry a reciprocal");
    let recip = |w: f64| 1.0 / w;
    // 1/w is convex: tangents below, chord above.
    for (j, t) in [wp, wmid, wq].into_iter().enumerate() {
        let slope = -1.0 / (t * t);
        let icpt = 2.0 / t;
        // r >= slope * w + icpt
        homogeneous_row(model, format!("{tag}_rlo{j}"), vec![(r, 1.0), (s.im, -slope * sg)], -icpt, s.z, RowSense::Ge)?;
    }
    let (a, b) = chord(recip, wp, wq);
    homogeneous_row(model, format!("{tag}_rhi"), vec![(r, 1.0), (s.im, -a * sg)], -b, s.z, RowSense::Le)?;
    // y = pi/2 - atan(r) with r in [1/wq, 1/wp]; q concave on that range.
    let (rp, rq) = (1.0 / wq, 1.0 / wp);
    let rmid = 0.5 * (rp + rq);
    for (j, t) in [rp, rmid, rq].into_iter().enumerate() {
        let (a, b) = quad_tangent(t);
        // y >= pi/2 - (a r + b) - e
        homogeneous_row(
            model,
            format!("{tag}_ylo{j}"),
            vec![(s.x, sg), (r, a)],
            -(FRAC_PI_2 - b - e),
            s.z,
            RowSense::Ge,
        )?;
    }
    let (a, b) = chord(atan_quadratic, rp, rq);
    // y <= pi/2 - (a r + b) + e
    homogeneous_row(model, format!("{tag}_yhi"), vec![(s.x, sg), (r, a)], -(FRAC_PI_2 - b + e), s.z, RowSense::Le)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// network copies

#[derive(Clone, Debug)]
enum Gadget {
    Relu { layer: usize, im: VarId, b: VarId },
    Pair { layer: usize, pair: PairGadget },
    Atan { layer: usize, gadget: AtanGadget },
}

impl Gadget {
    fn layer(&self) -> usize {
        match self {
            Gadget::Relu { layer, .. } | Gadget::Pair { layer, .. } | Gadget::Atan { layer, .. } => *layer,
        }
    }

    fn binaries(&self) -> Vec<VarId> {
        match self {
            Gadget::Relu { b, .. } => vec![*b],
            Gadget::Pair { pair, .. } => pair.b.into_iter().collect(),
            Gadget::Atan { gadget, .. } => gadget.binaries(),
        }
    }
}

/// Variables of one encoded copy of layers `start..=end` of a network.
#[derive(Clone, Debug)]
pub struct NetCopy {
    start: usize,
    /// `x[l - start][i]`.
    x: Vec<Vec<VarId>>,
    /// Pre-activation variables of dense layers.
    im: Vec<Vec<Option<VarId>>>,
    gadgets: Vec<Gadget>,
}

impl NetCopy {
    /// Output variables of layer `l`.
    pub fn outputs(&self, l: usize) -> &[VarId] {
        &self.x[l - self.start]
    }

    pub fn inputs(&self) -> &[VarId] {
        &self.x[0]
    }

    pub fn end(&self) -> usize {
        self.start + self.x.len() - 1
    }

    /// Binaries introduced for layer `l`.
    pub fn layer_binaries(&self, l: usize) -> Vec<VarId> {
        self.gadgets
            .iter()
            .filter(|g| g.layer() == l)
            .flat_map(Gadget::binaries)
            .collect()
    }

    pub fn binaries_by_layer(&self) -> Vec<(usize, VarId)> {
        self.gadgets
            .iter()
            .flat_map(|g| g.binaries().into_iter().map(move |b| (g.layer(), b)))
            .collect()
    }

    /// Fill every variable of the copy from a forward trace of the full network.
    pub(crate) fn complete(&self, trace: &ForwardTrace, a: &mut Assignment) {
        for (off, vars) in self.x.iter().enumerate() {
            let l = self.start + off;
            for (i, &v) in vars.iter().enumerate() {
                a.set(v, trace.x(l, i));
            }
            for (i, v) in self.im[off].iter().enumerate() {
                if let (Some(v), Some(val)) = (v, trace.im(l, i)) {
                    a.set(*v, val);
                }
            }
        }
        for g in &self.gadgets {
            match g {
                Gadget::Relu { im, b, .. } => {
                    let v = if a.get(*im) >= 0.0 { 1.0 } else { 0.0 };
                    a.set(*b, v);
                }
                Gadget::Pair { pair, .. } => {
                    let (u, v) = (a.get(pair.u), a.get(pair.v));
                    a.set(pair.y, u.max(v));
                    if let Some(b) = pair.b {
                        a.set(b, if u >= v { 1.0 } else { 0.0 });
                    }
                }
                Gadget::Atan { gadget, .. } => gadget.complete(a),
            }
        }
    }
}

/// Encode layers `start+1 ..= end` of `net` on top of the given variables
/// for the outputs of layer `start`. Names are prefixed with `prefix`.
#[allow(clippy::too_many_arguments)]
pub fn encode_layers(
    model: &mut MipModel,
    net: &Network,
    bounds: &IntervalBounds,
    opts: &EncodeOptions,
    prefix: &str,
    start: usize,
    inputs: Vec<VarId>,
    end: usize,
) -> Result<NetCopy> {
    if inputs.len() != net.dim(start) {
        return Err(Error::Dimension {
            expected: net.dim(start),
            got: inputs.len(),
        });
    }
    let mut copy = NetCopy {
        start,
        x: vec![inputs],
        im: vec![vec![None; net.dim(start)]],
        gadgets: Vec::new(),
    };
    for l in start + 1..=end {
        let layer = net.layer(l);
        let prev = copy.x.last().expect("previous layer").clone();
        let mut xs = Vec::with_capacity(net.dim(l));
        let mut ims = vec![None; net.dim(l)];
        match layer.kind() {
            LayerKind::Softmax => {
                return Err(Error::Encoding("the softmax layer is never encoded".into()));
            }
            LayerKind::MaxPool => {
                let mut pairs = Vec::new();
                for (g, group) in layer.pool_groups().iter().enumerate() {
                    let tag = format!("{prefix}_pool{l}_{}", g + 1);
                    let (lo, hi) = bounds.x(l, g);
                    let y = continuous(model, format!("{prefix}_x{l}_{}", g + 1), lo, hi)?;
                    let operands: Vec<Bounded> = group
                        .iter()
                        .map(|&j| {
                            let (lo, hi) = bounds.x(l - 1, j);
                            Bounded { var: prev[j], lo, hi }
                        })
                        .collect();
                    encode_pool_group(model, &tag, &operands, y, &mut pairs)?;
                    xs.push(y);
                }
                copy.gadgets
                    .extend(pairs.into_iter().map(|pair| Gadget::Pair { layer: l, pair }));
            }
            kind => {
                let w = layer.weights().expect("dense layer");
                for i in 0..net.dim(l) {
                    let node = format!("{l}_{}", i + 1);
                    let (im_lo, im_hi) = bounds.im(l, i).expect("dense bounds");
                    let im = continuous(model, format!("{prefix}_im{node}"), im_lo, im_hi)?;
                    encode_affine(model, format!("{prefix}_aff{node}"), w, i, &prev, im)?;
                    ims[i] = Some(im);
                    let x = match kind {
                        LayerKind::LinearOutput => im,
                        LayerKind::ReluDense => {
                            let (lo, hi) = bounds.x(l, i);
                            let x = continuous(model, format!("{prefix}_x{node}"), lo, hi)?;
                            let name = format!("{prefix}_relu{node}");
                            if let Some(b) = encode_relu(model, &name, im, x, (im_lo, im_hi))? {
                                copy.gadgets.push(Gadget::Relu { layer: l, im, b });
                            }
                            x
                        }
                        LayerKind::AtanDense => {
                            let (lo, hi) = bounds.x(l, i);
                            let x = continuous(model, format!("{prefix}_x{node}"), lo, hi)?;
                            let name = format!("{prefix}_atan{node}");
                            let gadget = encode_atan(model, &name, im, x, (im_lo, im_hi), opts.atan_segments)?;
                            copy.gadgets.push(Gadget::Atan { layer: l, gadget });
                            x
                        }
                        LayerKind::MaxPool | LayerKind::Softmax => unreachable!(),
                    };
                    xs.push(x);
                }
            }
        }
        copy.x.push(xs);
        copy.im.push(ims);
    }
    Ok(copy)
}

// ---------------------------------------------------------------------------
// queries

/// A query encoded as a MIP, with handles to its variables.
#[derive(Clone, Debug)]
pub struct Encoding {
    pub model: MipModel,
    pub query: QuerySpec,
    /// False when atan envelopes relax the network semantics.
    pub exact: bool,
    score_layer: usize,
    /// Copy evaluated at the free input `a`.
    clean: Option<NetCopy>,
    /// Copy evaluated at `a + eps`.
    perturbed: Option<NetCopy>,
    eps: Vec<VarId>,
    eps_abs: Vec<VarId>,
    /// `(class index 0-based, c_i)` for every competitor.
    selectors: Vec<(usize, VarId)>,
    t: Option<VarId>,
}

impl Encoding {
    /// Variables of the free input `a` (empty for fixed-input queries).
    pub fn input_vars(&self) -> &[VarId] {
        self.clean.as_ref().map_or(&[], |c| c.inputs())
    }

    /// Variables of the perturbed input `a + eps`.
    pub fn perturbed_vars(&self) -> &[VarId] {
        self.perturbed.as_ref().map_or(&[], |c| c.inputs())
    }

    pub fn eps_vars(&self) -> &[VarId] {
        &self.eps
    }

    pub fn eps_abs_vars(&self) -> &[VarId] {
        &self.eps_abs
    }

    pub fn selector_vars(&self) -> Vec<VarId> {
        self.selectors.iter().map(|&(_, v)| v).collect()
    }

    pub fn t_var(&self) -> Option<VarId> {
        self.t
    }

    /// Score variables of the clean and perturbed copies, when present.
    pub fn score_vars(&self) -> (Option<&[VarId]>, Option<&[VarId]>) {
        let l = self.score_layer;
        (
            self.clean.as_ref().map(|c| c.outputs(l)),
            self.perturbed.as_ref().map(|c| c.outputs(l)),
        )
    }

    /// `(layer, binary)` for every activation or pooling binary.
    pub fn layer_binaries(&self) -> Vec<(usize, VarId)> {
        let mut out = Vec::new();
        for c in [&self.clean, &self.perturbed].into_iter().flatten() {
            out.extend(c.binaries_by_layer());
        }
        out
    }

    fn base_input(&self) -> Option<&[f64]> {
        match &self.query.kind {
            QueryKind::LocalRobustness { input, .. } | QueryKind::FixedInput { input } => Some(input),
            _ => None,
        }
    }

    /// Build a full assignment from exact forward evaluation at input `a`
    /// (ignored for fixed-input queries) perturbed by `eps`. Binaries follow
    /// the realized phases; the `k` competitors closest to (or above) class
    /// `m` at the perturbed input are selected. The result satisfies the
    /// model whenever the pair `(a, eps)` is a solution of the query.
    pub fn complete(&self, net: &Network, a: Option<&[f64]>, eps: Option<&[f64]>) -> Result<Assignment> {
        let mut asg = Assignment(vec![0.0; self.model.num_vars()]);
        let base: Vec<f64> = match (self.base_input(), a) {
            (Some(fixed), _) => fixed.to_vec(),
            (None, Some(a)) => a.to_vec(),
            (None, None) => return Err(Error::Query("an input is required to complete this query".into())),
        };
        if let Some(c) = &self.clean {
            c.complete(&net.forward(&base)?, &mut asg);
            if let Some(t) = self.t {
                let margin = net.class_margin(&base, self.query.m)?;
                let (lo, hi) = (self.model.var(t).lo, self.model.var(t).hi);
                asg.set(t, margin.clamp(lo, hi));
            }
        }
        if let Some(p) = &self.perturbed {
            let zero = vec![0.0; base.len()];
            let eps = eps.unwrap_or(&zero);
            if eps.len() != base.len() {
                return Err(Error::Dimension {
                    expected: base.len(),
                    got: eps.len(),
                });
            }
            let point: Vec<f64> = base.iter().zip(eps).map(|(a, e)| a + e).collect();
            let trace = net.forward(&point)?;
            p.complete(&trace, &mut asg);
            for (i, &e) in eps.iter().enumerate() {
                asg.set(self.eps[i], e);
                asg.set(self.eps_abs[i], e.abs());
            }
            let scores = &trace.outputs[self.score_layer];
            let sm = scores[self.query.m - 1];
            let mut order: Vec<(usize, VarId)> = self.selectors.clone();
            order.sort_by(|x, y| (scores[y.0] - sm).total_cmp(&(scores[x.0] - sm)).then(x.0.cmp(&y.0)));
            for (rank, &(_, c)) in order.iter().enumerate() {
                asg.set(c, if rank < self.query.k { 1.0 } else { 0.0 });
            }
        }
        Ok(asg)
    }

    /// Read `(a, eps)` back from a solution.
    pub fn witness(&self, asg: &Assignment) -> (Vec<f64>, Vec<f64>) {
        let eps: Vec<f64> = self.eps.iter().map(|&v| asg.get(v)).collect();
        let a = match self.base_input() {
            Some(fixed) => fixed.to_vec(),
            None => self.input_vars().iter().map(|&v| asg.get(v)).collect(),
        };
        (a, eps)
    }
}

/// Translate a query into a MIP over the bounds in `bounds`.
pub fn encode_query(net: &Network, bounds: &IntervalBounds, q: &QuerySpec, opts: &EncodeOptions) -> Result<Encoding> {
    q.validate(net)?;
    let score_layer = net.score_layer();
    let m0 = q.m - 1;
    let mut model = MipModel::new(match &q.kind {
        QueryKind::MaxPerturbation => "max_perturbation",
        QueryKind::LocalRobustness { .. } => "local_robustness",
        QueryKind::MaxAlpha => "max_alpha",
        QueryKind::StrongInput => "strong_input",
        QueryKind::FixedInput { .. } => "fixed_input",
    });
    let d = net.input_dim();
    let domain = net.input_bounds().to_vec();

    let needs_clean = matches!(
        q.kind,
        QueryKind::MaxPerturbation | QueryKind::MaxAlpha | QueryKind::StrongInput
    );
    let needs_perturbed = matches!(
        q.kind,
        QueryKind::MaxPerturbation | QueryKind::LocalRobustness { .. } | QueryKind::FixedInput { .. }
    );

    let clean = if needs_clean {
        let a: Vec<VarId> = (0..d)
            .map(|i| continuous(&mut model, format!("a{}", i + 1), domain[i].0, domain[i].1))
            .collect::<Result<_>>()?;
        Some(encode_layers(&mut model, net, bounds, opts, "a", 0, a, score_layer)?)
    } else {
        None
    };

    let mut t = None;
    if let Some(c) = &clean {
        let scores = c.outputs(score_layer).to_vec();
        match q.kind {
            QueryKind::MaxAlpha => {
                let (_, mhi) = bounds.x(score_layer, m0);
                let top = (0..scores.len())
                    .filter(|&i| i != m0)
                    .map(|i| mhi - bounds.x(score_layer, i).0)
                    .fold(f64::NEG_INFINITY, f64::max);
                let tv = continuous(&mut model, "t".into(), 0.0, top.max(0.0))?;
                for (i, &s) in scores.iter().enumerate() {
                    if i != m0 {
                        model.add_constraint(
                            format!("margin_{}", i + 1),
                            &[(scores[m0], 1.0), (s, -1.0), (tv, -1.0)],
                            RowSense::Ge,
                            0.0,
                        )?;
                    }
                }
                model.set_objective(ObjSense::Maximize, &[(tv, 1.0)])?;
                t = Some(tv);
            }
            _ => {
                encode_strong_classification(&mut model, "a", &scores, q.m, q.alpha)?;
            }
        }
    }

    let mut eps = Vec::new();
    let mut eps_abs = Vec::new();
    let mut selectors = Vec::new();
    let perturbed = if needs_perturbed {
        let base = match &q.kind {
            QueryKind::LocalRobustness { input, .. } | QueryKind::FixedInput { input } => Some(input.clone()),
            _ => None,
        };
        let mut p = Vec::with_capacity(d);
        for i in 0..d {
            let (lo, hi) = domain[i];
            let (elo, ehi) = match &base {
                Some(b) => (lo - b[i], hi - b[i]),
                None => (lo - hi, hi - lo),
            };
            let e = continuous(&mut model, format!("eps{}", i + 1), elo, ehi)?;
            let ea = continuous(&mut model, format!("eps_abs{}", i + 1), 0.0, elo.abs().max(ehi.abs()))?;
            model.add_constraint(format!("abs_pos{}", i + 1), &[(ea, 1.0), (e, -1.0)], RowSense::Ge, 0.0)?;
            model.add_constraint(format!("abs_neg{}", i + 1), &[(ea, 1.0), (e, 1.0)], RowSense::Ge, 0.0)?;
            let pv = continuous(&mut model, format!("p{}", i + 1), lo, hi)?;
            match (&base, &clean) {
                (Some(b), _) => {
                    model.add_constraint(format!("shift{}", i + 1), &[(pv, 1.0), (e, -1.0)], RowSense::Eq, b[i])?;
                }
                (None, Some(c)) => {
                    let a = c.inputs()[i];
                    model.add_constraint(
                        format!("shift{}", i + 1),
                        &[(pv, 1.0), (a, -1.0), (e, -1.0)],
                        RowSense::Eq,
                        0.0,
                    )?;
                }
                (None, None) => unreachable!("perturbation needs a base input"),
            }
            eps.push(e);
            eps_abs.push(ea);
            p.push(pv);
        }
        let copy = encode_layers(&mut model, net, bounds, opts, "p", 0, p, score_layer)?;
        let scores = copy.outputs(score_layer).to_vec();
        let (_, m_hi) = bounds.x(score_layer, m0);
        let mut count = Vec::new();
        for (i, &s) in scores.iter().enumerate() {
            if i == m0 {
                continue;
            }
            let c = model.add_binary(format!("c{}", i + 1))?;
            let big = pair_m(m_hi - bounds.x(score_layer, i).0);
            // s_i - s_m >= -M (1 - c_i)
            model.add_constraint(
                format!("dominate{}", i + 1),
                &[(s, 1.0), (scores[m0], -1.0), (c, -big)],
                RowSense::Ge,
                -big,
            )?;
            selectors.push((i, c));
            count.push((c, 1.0));
        }
        model.add_constraint("at_least_k", &count, RowSense::Ge, q.k as f64)?;
        let abs_sum: Vec<(VarId, f64)> = eps_abs.iter().map(|&v| (v, 1.0)).collect();
        match &q.kind {
            QueryKind::LocalRobustness { delta, .. } => {
                model.add_constraint("budget", &abs_sum, RowSense::Le, *delta)?;
            }
            _ => model.set_objective(ObjSense::Minimize, &abs_sum)?,
        }
        Some(copy)
    } else {
        None
    };

    let mut enc = Encoding {
        model,
        query: q.clone(),
        exact: !net.has_atan(),
        score_layer,
        clean,
        perturbed,
        eps,
        eps_abs,
        selectors,
        t,
    };
    assign_branch_priorities(&mut enc, net);
    Ok(enc)
}

/// Binaries of shallower layers branch first: layer `l` gets priority
/// `max(L - l, 1)` and the class selectors get priority 1.
pub fn assign_branch_priorities(enc: &mut Encoding, net: &Network) {
    let layers = net.num_layers();
    for (l, b) in enc.layer_binaries() {
        let p = (layers as i32 - l as i32).max(1);
        enc.model.set_branch_priority(b, p);
    }
    for &(_, c) in &enc.selectors {
        enc.model.set_branch_priority(c, 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::propagate_intervals;
    use crate::network::Layer;

    fn dense(kind: LayerKind, rows: &[&[f64]]) -> Layer {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Layer::dense(kind, Weights::from_rows(&rows).unwrap())
    }

    #[test]
    fn affine_row_transcribes_weights() {
        let mut m = MipModel::new("t");
        let x1 = m.add_variable("x1", 0.0, 1.0, Integrality::Continuous).unwrap();
        let x2 = m.add_variable("x2", 0.0, 1.0, Integrality::Continuous).unwrap();
        let im = m.add_variable("im", -5.0, 5.0, Integrality::Continuous).unwrap();
        let w = Weights::from_rows(&[vec![1.0], vec![2.0], vec![-3.0]]).unwrap();
        let c = encode_affine(&mut m, "aff".into(), &w, 0, &[x1, x2], im).unwrap();
        let row = &m.constraints()[c.0];
        assert_eq!(row.coeffs, vec![(x1, -2.0), (x2, 3.0), (im, 1.0)]);
        assert_eq!(row.sense, RowSense::Eq);
        assert_eq!(row.rhs, 1.0);
    }

    #[test]
    fn relu_structure_by_phase() {
        for (bounds, rows, bins) in [((-3.0, 2.0), 6, 1), ((1.0, 4.0), 1, 0), ((-4.0, -1.0), 1, 0)] {
            let mut m = MipModel::new("t");
            let im = m.add_variable("im", bounds.0, bounds.1, Integrality::Continuous).unwrap();
            let x = m.add_variable("x", 0.0, 4.0, Integrality::Continuous).unwrap();
            encode_relu(&mut m, "r", im, x, bounds).unwrap();
            assert_eq!(m.num_constraints(), rows, "{bounds:?}");
            assert_eq!(m.num_binaries(), bins);
        }
    }

    #[test]
    fn max_pair_dominance_and_overlap() {
        let mut m = MipModel::new("t");
        let u = m.add_variable("u", 2.0, 3.0, Integrality::Continuous).unwrap();
        let v = m.add_variable("v", 0.0, 1.0, Integrality::Continuous).unwrap();
        let y = m.add_variable("y", 2.0, 3.0, Integrality::Continuous).unwrap();
        let b = encode_max_pair(
            &mut m,
            "p",
            Bounded { var: u, lo: 2.0, hi: 3.0 },
            Bounded { var: v, lo: 0.0, hi: 1.0 },
            y,
        )
        .unwrap();
        assert!(b.is_none());
        assert_eq!(m.constraints()[0].coeffs, vec![(u, -1.0), (y, 1.0)]);

        let mut m = MipModel::new("t");
        let u = m.add_variable("u", 0.0, 1.0, Integrality::Continuous).unwrap();
        let v = m.add_variable("v", 0.0, 1.0, Integrality::Continuous).unwrap();
        let y = m.add_variable("y", 0.0, 1.0, Integrality::Continuous).unwrap();
        let ub = Bounded { var: u, lo: 0.0, hi: 1.0 };
        let vb = Bounded { var: v, lo: 0.0, hi: 1.0 };
        assert!(encode_max_pair(&mut m, "p", ub, vb, y).unwrap().is_some());
        assert_eq!(m.num_constraints(), 4);
    }

    #[test]
    fn four_way_pool_uses_three_binaries() {
        let net = Network::new(
            vec![(0.0, 1.0); 4],
            vec![Layer::max_pool(vec![vec![0, 1, 2, 3]])],
        )
        .unwrap();
        let b = propagate_intervals(&net);
        let mut m = MipModel::new("t");
        let inputs: Vec<VarId> = (0..4)
            .map(|i| m.add_variable(format!("i{i}"), 0.0, 1.0, Integrality::Continuous).unwrap())
            .collect();
        encode_layers(&mut m, &net, &b, &EncodeOptions::default(), "n", 0, inputs, 1).unwrap();
        assert_eq!(m.num_binaries(), 3);
    }

    #[test]
    fn strong_classification_rows() {
        let mut m = MipModel::new("t");
        let s: Vec<VarId> = (0..3)
            .map(|i| m.add_variable(format!("s{i}"), -9.0, 9.0, Integrality::Continuous).unwrap())
            .collect();
        let rows = encode_strong_classification(&mut m, "q", &s, 2, std::f64::consts::E).unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert_eq!(m.constraints()[r.0].rhs, 1.0);
        }
        assert!(encode_strong_classification(&mut m, "z", &s, 1, 0.5).is_err());
        let mut m2 = MipModel::new("t");
        let s2: Vec<VarId> = (0..2)
            .map(|i| m2.add_variable(format!("s{i}"), -9.0, 9.0, Integrality::Continuous).unwrap())
            .collect();
        let rows = encode_strong_classification(&mut m2, "q", &s2, 1, 1.0).unwrap();
        assert_eq!(m2.constraints()[rows[0].0].rhs, 0.0);
    }

    #[test]
    fn atan_breakpoints_cover_range() {
        let pieces = atan_breakpoints(-3.0, 0.5, 8);
        assert_eq!(pieces.first().unwrap().0, -3.0);
        assert_eq!(pieces.last().unwrap().1, 0.5);
        for w in pieces.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        for &(p, q) in &pieces {
            assert!(p < q);
            assert!(!(p < -1.0 && q > -1.0) && !(p < 0.0 && q > 0.0) && !(p < 1.0 && q > 1.0));
        }
        assert_eq!(atan_breakpoints(0.2, 0.21, 8), vec![(0.2, 0.21)]);
    }

    #[test]
    fn quadratic_error_claim_holds() {
        let worst = (0..=200_000)
            .map(|k| {
                let t = -1.0 + k as f64 * 1e-5;
                (t.atan() - atan_quadratic(t)).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < ATAN_APPROX_ERROR, "{worst}");
        assert_eq!(atan_quadratic(1.0), FRAC_PI_4);
        assert_eq!(atan_quadratic(0.0), 0.0);
    }

    #[test]
    fn branch_priorities_follow_layers() {
        let net = Network::new(
            vec![(-1.0, 1.0)],
            vec![
                dense(LayerKind::ReluDense, &[&[0.0], &[1.0]]),
                dense(LayerKind::ReluDense, &[&[0.1], &[1.0]]),
                dense(LayerKind::LinearOutput, &[&[0.0, 0.0], &[1.0, -1.0]]),
                Layer::softmax(),
            ],
        )
        .unwrap();
        let b = propagate_intervals(&net);
        let enc = encode_query(&net, &b, &QuerySpec::max_perturbation(1, 1.0, 1), &EncodeOptions::default()).unwrap();
        for (l, v) in enc.layer_binaries() {
            assert_eq!(enc.model.branch_priority(v), 4 - l as i32);
        }
        for c in enc.selector_vars() {
            assert_eq!(enc.model.branch_priority(c), 1);
        }
    }
}
