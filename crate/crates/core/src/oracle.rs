//! Brute-force reference computations used to check the MILP pipeline.
//!
//! [`grid_phi`] only evaluates the network forward; it shares no code with
//! the encoder or the solver. [`enumerate_mip`] fixes every binary and solves
//! the remaining LPs. [`encoding_consistency`] plugs exact forward traces
//! into the encoded constraints.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::dataflow::IntervalBounds;
use crate::encoder::{encode_layers, EncodeOptions};
use crate::error::{Error, Result};
use crate::mip::{Assignment, Integrality, MipModel, ObjSense};
use crate::network::{score_margin, LayerKind, Network};
use crate::solver::{solve_lp, LpStatus, SolveStatus};

pub const GRID_MAX_INPUTS: usize = 3;
pub const GRID_MAX_NEURONS: usize = 12;
pub const ENUM_MAX_BINARIES: usize = 12;

/// Slack for ties and strong classification on grid points, which are
/// not exactly representable.
const GRID_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GridPhi {
    /// Smallest 1-norm perturbation found on the grid; `None` when no grid
    /// point is strongly classified or no grid point meets the dominance
    /// condition.
    pub estimate: Option<f64>,
    pub a: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
    /// Slack to allow when comparing against the exact optimum.
    pub resolution: f64,
    pub strong_points: usize,
    pub violating_points: usize,
}

fn grid_axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let n = ((hi - lo) / step - 1e-9).ceil() as usize;
    (0..=n).map(|j| (lo + j as f64 * step).min(hi)).collect()
}

/// Scan the input box at pitch `step` and return the least 1-norm distance
/// between a grid point strongly classified to `m` at `alpha` and a grid
/// point where at least `k` other classes score at or above `m`.
pub fn grid_phi(net: &Network, m: usize, alpha: f64, k: usize, step: f64) -> Result<GridPhi> {
    let d = net.input_dim();
    if d > GRID_MAX_INPUTS {
        return Err(Error::Guard(format!("grid oracle needs at most {GRID_MAX_INPUTS} inputs, got {d}")));
    }
    let neurons: usize = (1..=net.num_layers())
        .filter(|&l| net.layer(l).kind() != LayerKind::Softmax)
        .map(|l| net.dim(l))
        .sum();
    if neurons > GRID_MAX_NEURONS {
        return Err(Error::Guard(format!(
            "grid oracle needs at most {GRID_MAX_NEURONS} neurons, got {neurons}"
        )));
    }
    if !(step > 0.0) {
        return Err(Error::Guard(format!("grid step must be positive, got {step}")));
    }
    if m == 0 || m > net.num_classes() {
        return Err(Error::Query(format!("class {m} out of range")));
    }

    let axes: Vec<Vec<f64>> = net
        .input_bounds()
        .iter()
        .map(|&(lo, hi)| grid_axis(lo, hi, step))
        .collect();
    let dims: Vec<usize> = axes.iter().map(Vec::len).collect();
    let total: usize = dims.iter().product();
    let point = |mut idx: usize| -> Vec<f64> {
        let mut p = vec![0.0; d];
        for j in (0..d).rev() {
            p[j] = axes[j][idx % dims[j]];
            idx /= dims[j];
        }
        p
    };

    let ln_alpha = alpha.ln();
    let flags: Vec<(bool, bool)> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let scores = net.scores(&point(idx)).expect("grid point has the input dimension");
            let sm = scores[m - 1];
            let strong = score_margin(&scores, m) >= ln_alpha - GRID_TOL;
            let above = scores
                .iter()
                .enumerate()
                .filter(|&(i, &s)| i != m - 1 && s >= sm - GRID_TOL)
                .count();
            (strong, above >= k)
        })
        .collect();
    let strong_points = flags.iter().filter(|f| f.0).count();
    let violating_points = flags.iter().filter(|f| f.1).count();
    let resolution = 2.0 * d as f64 * step;
    if strong_points == 0 || violating_points == 0 {
        return Ok(GridPhi {
            estimate: None,
            a: None,
            eps: None,
            resolution,
            strong_points,
            violating_points,
        });
    }

    // L1 distance transform from the violating set, one axis at a time.
    let mut dist: Vec<f64> = flags.iter().map(|f| if f.1 { 0.0 } else { f64::INFINITY }).collect();
    let mut src: Vec<usize> = (0..total).collect();
    let mut stride = 1;
    for j in (0..d).rev() {
        let n = dims[j];
        let ax = &axes[j];
        for base in 0..total {
            if (base / stride) % n != 0 {
                continue;
            }
            let at = |t: usize| base + t * stride;
            for t in 1..n {
                let cand = dist[at(t - 1)] + (ax[t] - ax[t - 1]);
                if cand < dist[at(t)] {
                    dist[at(t)] = cand;
                    src[at(t)] = src[at(t - 1)];
                }
            }
            for t in (0..n - 1).rev() {
                let cand = dist[at(t + 1)] + (ax[t + 1] - ax[t]);
                if cand < dist[at(t)] {
                    dist[at(t)] = cand;
                    src[at(t)] = src[at(t + 1)];
                }
            }
        }
        stride *= n;
    }

    let best = (0..total)
        .filter(|&i| flags[i].0)
        .min_by(|&x, &y| dist[x].total_cmp(&dist[y]))
        .expect("strong set is not empty");
    let a = point(best);
    let p = point(src[best]);
    let eps: Vec<f64> = p.iter().zip(&a).map(|(p, a)| p - a).collect();
    Ok(GridPhi {
        estimate: Some(eps.iter().map(|e| e.abs()).sum()),
        a: Some(a),
        eps: Some(eps),
        resolution,
        strong_points,
        violating_points,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Enumeration {
    /// `Optimal`, `Infeasible` or `Unbounded`.
    pub status: SolveStatus,
    pub objective: f64,
    pub assignment: Option<Assignment>,
    pub lps_solved: usize,
}

/// Solve `model` by trying every assignment of its binaries.
pub fn enumerate_mip(model: &MipModel) -> Result<Enumeration> {
    let bins: Vec<_> = model.binaries().collect();
    if bins.len() > ENUM_MAX_BINARIES {
        return Err(Error::Guard(format!(
            "enumeration needs at most {ENUM_MAX_BINARIES} binaries, got {}",
            bins.len()
        )));
    }
    let maximize = model.objective().sense == ObjSense::Maximize;
    let better = |a: f64, b: f64| if maximize { a > b } else { a < b };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut unbounded = false;
    let combos = 1usize << bins.len();
    for mask in 0..combos {
        let mut fixed = model.clone();
        fixed.clear_warm_start();
        let mut skip = false;
        for (j, &b) in bins.iter().enumerate() {
            let v = ((mask >> j) & 1) as f64;
            let var = model.var(b);
            if v < var.lo || v > var.hi {
                skip = true;
                break;
            }
            fixed.set_var_bounds(b, v, v)?;
        }
        if skip {
            continue;
        }
        let sol = solve_lp(&fixed);
        match sol.status {
            LpStatus::Optimal => {
                if best.as_ref().map_or(true, |(o, _)| better(sol.objective, *o)) {
                    best = Some((sol.objective, sol.x));
                }
            }
            LpStatus::Unbounded => unbounded = true,
            LpStatus::Infeasible => {}
            other => return Err(Error::Model(format!("LP failed during enumeration: {other:?}"))),
        }
    }
    let lps_solved = combos;
    Ok(if unbounded {
        Enumeration {
            status: SolveStatus::Unbounded,
            objective: if maximize { f64::INFINITY } else { f64::NEG_INFINITY },
            assignment: None,
            lps_solved,
        }
    } else if let Some((objective, mut x)) = best {
        for &b in &bins {
            x[b.0] = x[b.0].round();
        }
        Enumeration {
            status: SolveStatus::Optimal,
            objective,
            assignment: Some(Assignment(x)),
            lps_solved,
        }
    } else {
        Enumeration {
            status: SolveStatus::Infeasible,
            objective: if maximize { f64::NEG_INFINITY } else { f64::INFINITY },
            assignment: None,
            lps_solved,
        }
    })
}

#[derive(Clone, Debug, Default)]
pub struct ConsistencyReport {
    pub samples: usize,
    pub failing_samples: usize,
    /// Violation descriptions, at most a few per failing sample.
    pub violations: Vec<String>,
    pub rows: usize,
    pub binaries: usize,
}

impl ConsistencyReport {
    pub fn is_clean(&self) -> bool {
        self.failing_samples == 0
    }
}

/// Encode the network body against `bounds` and check that the exact forward
/// trace of `samples` random in-domain inputs, with activation binaries set
/// by the sign of each pre-activation, satisfies every row.
pub fn encoding_consistency(
    net: &Network,
    bounds: &IntervalBounds,
    samples: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    let mut model = MipModel::new("consistency");
    let inputs = net
        .input_bounds()
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| model.add_variable(format!("in{}", i + 1), lo, hi, Integrality::Continuous))
        .collect::<Result<Vec<_>>>()?;
    let copy = encode_layers(
        &mut model,
        net,
        bounds,
        &EncodeOptions::default(),
        "n",
        0,
        inputs.clone(),
        net.score_layer(),
    )?;
    let mut report = ConsistencyReport {
        samples,
        rows: model.num_constraints(),
        binaries: model.num_binaries(),
        ..Default::default()
    };
    let mut rng = StdRng::seed_from_u64(seed);
    for s in 0..samples {
        let x: Vec<f64> = net
            .input_bounds()
            .iter()
            .map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
            .collect();
        let trace = net.forward(&x)?;
        let mut asg = Assignment(vec![0.0; model.num_vars()]);
        for (&v, &val) in inputs.iter().zip(&x) {
            asg.set(v, val);
        }
        copy.complete(&trace, &mut asg);
        let bad = model.violations(&asg, 1e-7);
        if !bad.is_empty() {
            report.failing_samples += 1;
            report
                .violations
                .extend(bad.iter().take(3).map(|v| format!("sample {s}: {v}")));
        }
    }
    Ok(report)
}
