//! Interval bounds for every node of a network.
//!
//! [`propagate_intervals`] pushes the input box through the layers with plain
//! interval arithmetic. [`tighten_lookback`] then improves the pre-activation
//! bounds of each dense node by maximizing and minimizing it over a small MIP
//! that encodes the preceding `depth - 1` layers exactly.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::encoder::{encode_layers, EncodeOptions};
use crate::mip::{MipModel, ObjSense, VarId};
use crate::network::{LayerKind, Network};
use crate::solver::{self, SolveConfig, SolveStatus};

/// ReLU phase implied by the pre-activation interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AlwaysActive,
    AlwaysInactive,
    Undecided,
}

impl Phase {
    pub fn from_interval(im_lo: f64, im_hi: f64) -> Self {
        if im_lo >= 0.0 {
            Phase::AlwaysActive
        } else if im_hi <= 0.0 {
            Phase::AlwaysInactive
        } else {
            Phase::Undecided
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::AlwaysActive => "active",
            Phase::AlwaysInactive => "inactive",
            Phase::Undecided => "undecided",
        }
    }
}

/// `max(|lo|, |hi|)` with a small inflation against rounding at the boundary.
pub fn big_m(im_lo: f64, im_hi: f64) -> f64 {
    im_lo.abs().max(im_hi.abs()) * (1.0 + 1e-7) + 1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeBounds {
    pub lo: f64,
    pub hi: f64,
    /// Pre-activation interval, present for dense layers.
    pub im: Option<(f64, f64)>,
}

/// Per-node intervals; index 0 holds the input box.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalBounds {
    kinds: Vec<Option<LayerKind>>,
    layers: Vec<Vec<NodeBounds>>,
}

impl IntervalBounds {
    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer(&self, l: usize) -> &[NodeBounds] {
        &self.layers[l]
    }

    pub fn node(&self, l: usize, i: usize) -> &NodeBounds {
        &self.layers[l][i]
    }

    /// Output interval of node `i` in layer `l`.
    pub fn x(&self, l: usize, i: usize) -> (f64, f64) {
        let n = &self.layers[l][i];
        (n.lo, n.hi)
    }

    pub fn im(&self, l: usize, i: usize) -> Option<(f64, f64)> {
        self.layers[l][i].im
    }

    /// Phase of a ReLU node; `None` for every other node.
    pub fn phase(&self, l: usize, i: usize) -> Option<Phase> {
        if self.kinds[l] != Some(LayerKind::ReluDense) {
            return None;
        }
        self.im(l, i).map(|(lo, hi)| Phase::from_interval(lo, hi))
    }

    /// Big-M constant of a dense node, derived from its pre-activation interval.
    pub fn big_m(&self, l: usize, i: usize) -> Option<f64> {
        self.im(l, i).map(|(lo, hi)| big_m(lo, hi))
    }

    pub fn num_undecided(&self) -> usize {
        (1..self.layers.len())
            .flat_map(|l| (0..self.layers[l].len()).map(move |i| (l, i)))
            .filter(|&(l, i)| self.phase(l, i) == Some(Phase::Undecided))
            .count()
    }

    /// Overwrite the pre-activation interval of a dense node and rederive its
    /// output interval from the activation.
    pub fn set_im(&mut self, l: usize, i: usize, lo: f64, hi: f64) {
        let kind = self.kinds[l].expect("set_im on a dense layer");
        let node = &mut self.layers[l][i];
        node.im = Some((lo, hi));
        let (xlo, xhi) = activation_interval(kind, lo, hi);
        node.lo = xlo;
        node.hi = xhi;
    }

    /// True when every interval of `self` lies inside the matching interval of `other`.
    pub fn within(&self, other: &IntervalBounds, tol: f64) -> bool {
        self.layers.iter().zip(&other.layers).all(|(a, b)| {
            a.iter().zip(b).all(|(n, o)| {
                let x_ok = n.lo >= o.lo - tol && n.hi <= o.hi + tol;
                let im_ok = match (n.im, o.im) {
                    (Some((lo, hi)), Some((olo, ohi))) => lo >= olo - tol && hi <= ohi + tol,
                    (None, None) => true,
                    _ => false,
                };
                x_ok && im_ok
            })
        })
    }

    /// Whether a forward trace stays inside the intervals (within `tol`).
    /// Returns the first offending `(layer, node)` otherwise.
    pub fn check_trace(&self, trace: &crate::network::ForwardTrace, tol: f64) -> Result<(), (usize, usize)> {
        for (l, nodes) in self.layers.iter().enumerate() {
            for (i, n) in nodes.iter().enumerate() {
                let x = trace.x(l, i);
                if x < n.lo - tol || x > n.hi + tol {
                    return Err((l, i));
                }
                if let (Some((lo, hi)), Some(im)) = (n.im, trace.im(l, i)) {
                    if im < lo - tol || im > hi + tol {
                        return Err((l, i));
                    }
                }
            }
        }
        Ok(())
    }

    /// Text dump, one line per node:
    /// `layer node im_lo im_hi lo hi phase big_m` (`-` where not applicable).
    pub fn dump(&self) -> String {
        let mut out = String::from("# layer node im_lo im_hi lo hi phase big_m\n");
        for (l, nodes) in self.layers.iter().enumerate() {
            for (i, n) in nodes.iter().enumerate() {
                let (im_lo, im_hi, m) = match n.im {
                    Some((lo, hi)) => (fmt6(lo), fmt6(hi), fmt6(big_m(lo, hi))),
                    None => ("-".into(), "-".into(), "-".into()),
                };
                let phase = self.phase(l, i).map_or("-", Phase::as_str);
                let _ = writeln!(
                    out,
                    "{l} {} {im_lo} {im_hi} {} {} {phase} {m}",
                    i + 1,
                    fmt6(n.lo),
                    fmt6(n.hi)
                );
            }
        }
        out
    }
}

fn fmt6(v: f64) -> String {
    crate::format_sig(v, 6)
}

fn activation_interval(kind: LayerKind, lo: f64, hi: f64) -> (f64, f64) {
    match kind {
        LayerKind::ReluDense => (lo.max(0.0), hi.max(0.0)),
        LayerKind::AtanDense => (lo.atan(), hi.atan()),
        _ => (lo, hi),
    }
}

/// Interval of `bias + sum_j w_j x_j` given intervals for `x`.
fn affine_interval(net: &Network, l: usize, i: usize, prev: &[NodeBounds]) -> (f64, f64) {
    let w = net.layer(l).weights().expect("dense layer");
    let mut lo = w.bias(i);
    let mut hi = lo;
    for (j, p) in prev.iter().enumerate() {
        let c = w.weight(j, i);
        let (a, b) = (c * p.lo, c * p.hi);
        lo += a.min(b);
        hi += a.max(b);
    }
    (lo, hi)
}

/// Plain interval bounds of layer `l` from the bounds of layer `l - 1`.
fn layer_intervals(net: &Network, l: usize, prev: &[NodeBounds]) -> Vec<NodeBounds> {
    let layer = net.layer(l);
    match layer.kind() {
        LayerKind::MaxPool => layer
            .pool_groups()
            .iter()
            .map(|g| NodeBounds {
                lo: g.iter().map(|&j| prev[j].lo).fold(f64::NEG_INFINITY, f64::max),
                hi: g.iter().map(|&j| prev[j].hi).fold(f64::NEG_INFINITY, f64::max),
                im: None,
            })
            .collect(),
        LayerKind::Softmax => (0..prev.len())
            .map(|i| {
                // p_i is increasing in z_i and decreasing in every other z_j.
                let lo_den: f64 = prev
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, p)| (p.hi - prev[i].lo).exp())
                    .sum();
                let hi_den: f64 = prev
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, p)| (p.lo - prev[i].hi).exp())
                    .sum();
                NodeBounds {
                    lo: 1.0 / (1.0 + lo_den),
                    hi: 1.0 / (1.0 + hi_den),
                    im: None,
                }
            })
            .collect(),
        kind => (0..net.dim(l))
            .map(|i| {
                let (lo, hi) = affine_interval(net, l, i, prev);
                let (xlo, xhi) = activation_interval(kind, lo, hi);
                NodeBounds {
                    lo: xlo,
                    hi: xhi,
                    im: Some((lo, hi)),
                }
            })
            .collect(),
    }
}

/// Interval propagation of the input box through every layer.
pub fn propagate_intervals(net: &Network) -> IntervalBounds {
    let mut kinds = vec![None];
    let mut layers = vec![net
        .input_bounds()
        .iter()
        .map(|&(lo, hi)| NodeBounds { lo, hi, im: None })
        .collect::<Vec<_>>()];
    for l in 1..=net.num_layers() {
        let next = layer_intervals(net, l, &layers[l - 1]);
        layers.push(next);
        kinds.push(Some(net.layer(l).kind()).filter(|k| k.is_dense()));
    }
    IntervalBounds { kinds, layers }
}

fn intersect(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    // Rounding can cross the bounds by a hair; keep the interval non-empty.
    if lo > hi {
        let mid = 0.5 * (lo + hi);
        (mid, mid)
    } else {
        (lo, hi)
    }
}

/// Slack added to an optimal sub-MIP bound to absorb LP tolerances.
fn bound_slack(v: f64) -> f64 {
    1e-7 * (1.0 + v.abs())
}

/// Options for [`tighten_lookback`].
#[derive(Clone, Debug)]
pub struct LookbackConfig {
    /// Number of layers in each window; 1 reproduces plain intervals.
    pub depth: usize,
    /// Limits for each per-bound sub-MIP.
    pub solve: SolveConfig,
    pub encode: EncodeOptions,
}

impl Default for LookbackConfig {
    fn default() -> Self {
        LookbackConfig {
            depth: 2,
            solve: SolveConfig::default().with_node_limit(10_000),
            encode: EncodeOptions::default(),
        }
    }
}

/// Improve pre-activation bounds by solving max/min sub-MIPs over windows of
/// `cfg.depth` layers. Windows are processed layer by layer from the input
/// towards the output, so deeper windows see the already tightened bounds.
/// A bound changes only when its sub-MIP is solved to optimality, and the
/// result is always contained in `bounds`.
pub fn tighten_lookback(net: &Network, bounds: &IntervalBounds, cfg: &LookbackConfig) -> IntervalBounds {
    let mut b = bounds.clone();
    let mut solve_cfg = cfg.solve.clone();
    solve_cfg.workers = 1;
    for l in 1..=net.num_layers() {
        // Plain re-propagation from the (possibly tightened) previous layer.
        let fresh = layer_intervals(net, l, &b.layers[l - 1]);
        for (i, f) in fresh.into_iter().enumerate() {
            match (f.im, b.layers[l][i].im) {
                (Some(new), Some(old)) => {
                    let (lo, hi) = intersect(new, old);
                    b.set_im(l, i, lo, hi);
                }
                _ => {
                    let node = &mut b.layers[l][i];
                    let (lo, hi) = intersect((f.lo, f.hi), (node.lo, node.hi));
                    node.lo = lo;
                    node.hi = hi;
                }
            }
        }

        if cfg.depth < 2 || l < 2 || !net.layer(l).kind().is_dense() {
            continue;
        }
        let start = l.saturating_sub(cfg.depth);
        let current = &b;
        let results: Vec<(Option<f64>, Option<f64>)> = (0..net.dim(l))
            .into_par_iter()
            .map(|i| {
                let (lo, hi) = current.im(l, i).expect("dense node");
                if lo == hi {
                    return (None, None);
                }
                window_extrema(net, current, start, l, i, &cfg.encode, &solve_cfg)
            })
            .collect();
        for (i, (new_lo, new_hi)) in results.into_iter().enumerate() {
            let (lo, hi) = b.im(l, i).expect("dense node");
            let cand = (
                new_lo.map_or(lo, |v| v - bound_slack(v)),
                new_hi.map_or(hi, |v| v + bound_slack(v)),
            );
            let (lo, hi) = intersect(cand, (lo, hi));
            b.set_im(l, i, lo, hi);
        }
    }
    b
}

/// Build the window model for node `(l, i)`: free outputs of layer `start`,
/// exact encodings of layers `start+1 .. l-1`, and the affine form of `im`.
fn window_model(
    net: &Network,
    bounds: &IntervalBounds,
    start: usize,
    l: usize,
    i: usize,
    opts: &EncodeOptions,
) -> Option<(MipModel, Vec<(VarId, f64)>, f64)> {
    let mut model = MipModel::new(format!("window_{l}_{}", i + 1));
    let inputs: Vec<VarId> = (0..net.dim(start))
        .map(|j| {
            let (lo, hi) = bounds.x(start, j);
            model
                .add_variable(format!("w{start}_{}", j + 1), lo, hi, crate::mip::Integrality::Continuous)
                .expect("fresh names")
        })
        .collect();
    let copy = encode_layers(&mut model, net, bounds, opts, "w", start, inputs, l - 1).ok()?;
    let w = net.layer(l).weights()?;
    let prev = copy.outputs(l - 1);
    let coeffs: Vec<(VarId, f64)> = prev
        .iter()
        .enumerate()
        .map(|(j, &v)| (v, w.weight(j, i)))
        .filter(|&(_, c)| c != 0.0)
        .collect();
    Some((model, coeffs, w.bias(i)))
}

fn window_extrema(
    net: &Network,
    bounds: &IntervalBounds,
    start: usize,
    l: usize,
    i: usize,
    opts: &EncodeOptions,
    cfg: &SolveConfig,
) -> (Option<f64>, Option<f64>) {
    let Some((mut model, coeffs, bias)) = window_model(net, bounds, start, l, i, opts) else {
        return (None, None);
    };
    let mut run = |sense: ObjSense| -> Option<f64> {
        model.set_objective(sense, &coeffs).ok()?;
        let r = solver::solve(&model, cfg);
        (r.status == SolveStatus::Optimal).then_some(r.dual_bound + bias)
    };
    let hi = run(ObjSense::Maximize);
    let lo = run(ObjSense::Minimize);
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Layer, Weights};

    fn dense(kind: LayerKind, rows: &[&[f64]]) -> Layer {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Layer::dense(kind, Weights::from_rows(&rows).unwrap())
    }

    #[test]
    fn affine_corners() {
        let net = Network::new(
            vec![(0.0, 1.0), (0.0, 1.0)],
            vec![dense(LayerKind::ReluDense, &[&[0.0], &[2.0], &[-3.0]])],
        )
        .unwrap();
        let b = propagate_intervals(&net);
        assert_eq!(b.im(1, 0), Some((-3.0, 2.0)));
        assert_eq!(b.x(1, 0), (0.0, 2.0));
        assert_eq!(b.phase(1, 0), Some(Phase::Undecided));
        let m = b.big_m(1, 0).unwrap();
        assert!(m >= 3.0 && m < 3.0 + 1e-5);
    }

    #[test]
    fn active_phase() {
        let net = Network::new(vec![(0.0, 1.0)], vec![dense(LayerKind::ReluDense, &[&[1.0], &[3.0]])]).unwrap();
        let b = propagate_intervals(&net);
        assert_eq!(b.x(1, 0), (1.0, 4.0));
        assert_eq!(b.phase(1, 0), Some(Phase::AlwaysActive));
    }

    fn lookback_fixture() -> Network {
        Network::new(
            vec![(-1.0, 1.0)],
            vec![
                dense(LayerKind::ReluDense, &[&[1.0, 0.0], &[1.0, 1.0]]),
                dense(LayerKind::LinearOutput, &[&[-1.0], &[1.0], &[-1.0]]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn lookback_tightens_fixture() {
        let net = lookback_fixture();
        let plain = propagate_intervals(&net);
        assert_eq!(plain.im(2, 0), Some((-2.0, 1.0)));
        let tight = tighten_lookback(&net, &plain, &LookbackConfig::default());
        let (lo, hi) = tight.im(2, 0).unwrap();
        assert!((lo + 1.0).abs() < 1e-6 && hi.abs() < 1e-6, "{lo} {hi}");
        assert!(tight.within(&plain, 0.0));
    }

    #[test]
    fn depth_one_is_plain_propagation() {
        let net = lookback_fixture();
        let plain = propagate_intervals(&net);
        let cfg = LookbackConfig {
            depth: 1,
            ..LookbackConfig::default()
        };
        assert_eq!(tighten_lookback(&net, &plain, &cfg), plain);
    }

    #[test]
    fn inactive_node_stays_zero() {
        let net = Network::new(
            vec![(0.0, 1.0)],
            vec![
                dense(LayerKind::ReluDense, &[&[0.0, 0.5], &[1.0, 1.0]]),
                dense(LayerKind::ReluDense, &[&[-5.0], &[1.0], &[1.0]]),
            ],
        )
        .unwrap();
        let plain = propagate_intervals(&net);
        assert_eq!(plain.phase(2, 0), Some(Phase::AlwaysInactive));
        let tight = tighten_lookback(&net, &plain, &LookbackConfig::default());
        assert_eq!(tight.x(2, 0), (0.0, 0.0));
    }

    #[test]
    fn dump_lists_every_node() {
        let net = lookback_fixture();
        let dump = propagate_intervals(&net).dump();
        assert_eq!(dump.lines().count(), 1 + 1 + 2 + 1);
        assert!(dump.contains("2 1 -2 1 -2 1 - "));
    }
}
