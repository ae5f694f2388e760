//! The twelve acceptance criteria, one PASS/FAIL line each.
//!
//! Criterion 2 is expected to fail; see `KNOWN_FAILURES`.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::E;
use std::time::Instant;

use maxres::dataflow::{propagate_intervals, tighten_lookback, LookbackConfig};
use maxres::encoder::{atan_secant_gap, encode_atan, relu_gadget_rows, ATAN_APPROX_ERROR};
use maxres::mip::{Integrality, MipModel, ObjSense, RowSense};
use maxres::network::{scores_strongly_classify, softmax, Network};
use maxres::oracle::{enumerate_mip, grid_phi};
use maxres::resilience::{
    check_local_robustness, compute_phi, PhiStatus, ResilienceConfig, ResilienceResult, Verdict,
};
use maxres::solver::{solve, solve_lp, LpStatus, SolveConfig, SolveStatus};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use common::*;

/// Criteria whose failure is understood and recorded.
///
/// 2: at `im = 0` both values of `b` admit `x = 0`. The set of points allowed
/// with `b = 0` is `{im <= 0, x = 0}`, a closed set, so it contains the point
/// `im = 0` that the activation rule assigns to `b = 1`. No choice of big-M
/// constant changes that, so "infeasible for the wrong b" cannot hold at the
/// grid point `im = 0`. Everywhere else the criterion holds, and at `im = 0`
/// both branches give the correct output, which this suite still asserts.
const KNOWN_FAILURES: &[u32] = &[2];

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1() -> Outcome {
    let p = softmax(&[-1.0, 2.0, 3.0]);
    let want = [0.0132, 0.2654, 0.7214];
    for (i, (&got, &w)) in p.iter().zip(&want).enumerate() {
        check((got - w).abs() <= 5e-4, || format!("output {} is {got}, expected {w}", i + 1))?;
    }
    Ok(format!("softmax(-1, 2, 3) = ({:.4}, {:.4}, {:.4})", p[0], p[1], p[2]))
}

/// Feasible range of `x` in the ReLU gadget with `im` and `b` fixed.
fn gadget_x_range(m: f64, im: f64, b: f64) -> Option<(f64, f64)> {
    let mut model = MipModel::new("gadget");
    let imv = model.add_variable("im", im, im, Integrality::Continuous).unwrap();
    let x = model.add_variable("x", f64::NEG_INFINITY, f64::INFINITY, Integrality::Continuous).unwrap();
    let bv = model.add_variable("b", b, b, Integrality::Continuous).unwrap();
    relu_gadget_rows(&mut model, "g", imv, x, bv, m).unwrap();
    model.set_objective(ObjSense::Minimize, &[(x, 1.0)]).unwrap();
    let lo = solve_lp(&model);
    if lo.status == LpStatus::Infeasible {
        return None;
    }
    assert_eq!(lo.status, LpStatus::Optimal, "gadget LP at M={m} im={im} b={b}");
    model.set_objective(ObjSense::Maximize, &[(x, 1.0)]).unwrap();
    let hi = solve_lp(&model);
    assert_eq!(hi.status, LpStatus::Optimal);
    Some((lo.objective, hi.objective))
}

fn criterion_2() -> Outcome {
    let tol = 1e-9;
    let mut wrong_feasible = Vec::new();
    for &m in &[1.0, 3.0, 10.0] {
        for j in 0..=200 {
            let im = -m + m * j as f64 / 100.0;
            let right = if im >= 0.0 { 1.0 } else { 0.0 };
            // The correct branch is feasible and pins x to max(0, im).
            let (lo, hi) = gadget_x_range(m, im, right)
                .ok_or_else(|| format!("M={m} im={im}: correct b={right} is infeasible"))?;
            let want = im.max(0.0);
            if (lo - want).abs() > tol || (hi - want).abs() > tol {
                return Err(format!("M={m} im={im}: x ranges over [{lo}, {hi}], expected {want}"));
            }
            if let Some((lo, hi)) = gadget_x_range(m, im, 1.0 - right) {
                if im != 0.0 {
                    return Err(format!("M={m} im={im}: wrong b admits x in [{lo}, {hi}]"));
                }
                // Even then the output stays exact.
                if lo.abs() > tol || hi.abs() > tol {
                    return Err(format!("M={m} im=0: wrong b admits x in [{lo}, {hi}]"));
                }
                wrong_feasible.push(m);
            }
        }
    }
    if wrong_feasible.is_empty() {
        Ok("603 points: correct b gives x = max(0, im), wrong b infeasible".into())
    } else {
        Err(format!(
            "wrong b stays feasible at im = 0 for M in {wrong_feasible:?} (x = 0 there); \
             all other 600 points pass and x = max(0, im) under the correct b everywhere"
        ))
    }
}

fn criterion_3() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let (mut yes, mut no, mut skipped) = (0, 0, 0);
    for _ in 0..10_000 {
        let n = rng.gen_range(2..=10);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let alpha: f64 = rng.gen_range(1.0..=50.0);
        let m = rng.gen_range(1..=n);
        let ln_a = alpha.ln();
        let margin = s
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != m - 1)
            .map(|(_, &v)| s[m - 1] - v)
            .fold(f64::INFINITY, f64::min);
        if (margin - ln_a).abs() <= 1e-9 {
            skipped += 1;
            continue;
        }
        let p = softmax(&s);
        let ratio = (0..n).filter(|&j| j != m - 1).all(|j| p[m - 1] >= alpha * p[j]);
        let log = scores_strongly_classify(&s, m, alpha);
        check(ratio == log, || format!("scores {s:?}, m={m}, alpha={alpha}: ratio {ratio}, log {log}"))?;
        if log {
            yes += 1;
        } else {
            no += 1;
        }
    }
    check(yes > 100 && no > 100, || format!("unbalanced sample: {yes} strong, {no} not"))?;
    Ok(format!("10000 samples agree ({yes} strong, {no} not, {skipped} on the boundary)"))
}

fn criterion_4() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let mut undecided_before = 0;
    let mut undecided_after = 0;
    for n in 0..20 {
        let net = random_network(&mut rng);
        let plain = propagate_intervals(&net);
        let tight = tighten_lookback(&net, &plain, &LookbackConfig::default());
        check(tight.within(&plain, 0.0), || format!("net {n}: tightened bounds are looser"))?;
        undecided_before += plain.num_undecided();
        undecided_after += tight.num_undecided();
        for s in 0..10_000 {
            let x = random_input(&mut rng, &net);
            let trace = net.forward(&x).unwrap();
            if let Err((l, i)) = plain.check_trace(&trace, 1e-9) {
                return Err(format!("net {n} sample {s}: node ({l}, {}) escapes plain bounds", i + 1));
            }
            if let Err((l, i)) = tight.check_trace(&trace, 1e-9) {
                return Err(format!("net {n} sample {s}: node ({l}, {}) escapes tightened bounds", i + 1));
            }
        }
    }
    Ok(format!(
        "20 nets x 10000 traces inside bounds; undecided relu nodes {undecided_before} -> {undecided_after}"
    ))
}

fn criterion_5() -> Outcome {
    let net = lookback_fixture();
    let plain = propagate_intervals(&net);
    let (plo, phi) = plain.im(2, 0).unwrap();
    check((plo + 2.0).abs() <= 1e-6 && (phi - 1.0).abs() <= 1e-6, || {
        format!("plain interval is [{plo}, {phi}], expected [-2, 1]")
    })?;
    let tight = tighten_lookback(&net, &plain, &LookbackConfig::default());
    let (lo, hi) = tight.im(2, 0).unwrap();
    check((lo + 1.0).abs() <= 1e-6 && hi.abs() <= 1e-6, || {
        format!("tightened interval is [{lo}, {hi}], expected [-1, 0]")
    })?;
    Ok(format!("[{plo}, {phi}] -> [{lo:.6}, {hi:.6}]"))
}

fn random_mip(rng: &mut StdRng) -> MipModel {
    let mut model = MipModel::new("random");
    let nb = rng.gen_range(1..=12);
    let nc = rng.gen_range(0..=4);
    let mut vars = Vec::new();
    for i in 0..nb {
        vars.push(model.add_binary(format!("b{i}")).unwrap());
    }
    for i in 0..nc {
        let lo = rng.gen_range(-5.0..0.0);
        vars.push(model.add_variable(format!("c{i}"), lo, lo + rng.gen_range(1.0..8.0), Integrality::Continuous).unwrap());
    }
    // Rows are built around a random point so that most models are feasible;
    // a shifted right-hand side makes some of them infeasible.
    let mut point: Vec<f64> = (0..nb).map(|_| rng.gen_range(0..=1u8) as f64).collect();
    for j in 0..nc {
        let v = model.var(vars[nb + j]);
        point.push(rng.gen_range(v.lo..=v.hi));
    }
    let rows = rng.gen_range(2..=8);
    for r in 0..rows {
        let mut coeffs = Vec::new();
        for &v in &vars {
            if rng.gen_bool(0.6) {
                coeffs.push((v, rng.gen_range(-4..=4) as f64 + rng.gen_range(-0.5..0.5)));
            }
        }
        if coeffs.is_empty() {
            continue;
        }
        let act: f64 = coeffs.iter().map(|&(v, c)| c * point[v.0]).sum();
        let shift = if rng.gen_bool(0.1) { -rng.gen_range(5.0..20.0) } else { rng.gen_range(0.0..2.0) };
        match rng.gen_range(0..3) {
            0 => model.add_constraint(format!("r{r}"), &coeffs, RowSense::Le, act + shift),
            1 => model.add_constraint(format!("r{r}"), &coeffs, RowSense::Ge, act - shift),
            _ => model.add_constraint(format!("r{r}"), &coeffs, RowSense::Eq, act),
        }
        .unwrap();
    }
    let obj: Vec<_> = vars.iter().map(|&v| (v, rng.gen_range(-5.0..5.0))).collect();
    let sense = if rng.gen_bool(0.5) { ObjSense::Minimize } else { ObjSense::Maximize };
    model.set_objective(sense, &obj).unwrap();
    model
}

fn criterion_6() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let cfg = SolveConfig::default();
    let (mut optimal, mut infeasible, mut max_binaries) = (0, 0, 0);
    for n in 0..50 {
        let model = random_mip(&mut rng);
        max_binaries = max_binaries.max(model.num_binaries());
        let reference = enumerate_mip(&model).map_err(|e| e.to_string())?;
        let got = solve(&model, &cfg);
        check(got.status == reference.status, || {
            format!("instance {n}: solve says {:?}, enumeration says {:?}", got.status, reference.status)
        })?;
        if got.status == SolveStatus::Optimal {
            let tol = 1e-6 * reference.objective.abs().max(1.0);
            check((got.objective - reference.objective).abs() <= tol, || {
                format!("instance {n}: solve {} vs enumeration {}", got.objective, reference.objective)
            })?;
            let asg = got.assignment.as_ref().unwrap();
            check(model.check_feasible(asg, 1e-6), || format!("instance {n}: incumbent infeasible"))?;
            optimal += 1;
        } else {
            infeasible += 1;
        }
    }
    Ok(format!(
        "50 instances (up to {max_binaries} binaries): {optimal} optimal, {infeasible} infeasible, all agree"
    ))
}

/// Results kept for the later criteria.
struct Shared {
    phi: Vec<(usize, ResilienceResult)>,
}

fn criterion_7(shared: &mut Shared) -> Outcome {
    let fixtures = phi_fixtures();
    let cfg = ResilienceConfig::default();
    let mut lines = Vec::new();
    for (n, f) in fixtures.iter().enumerate() {
        let r = compute_phi(&f.net, f.m, f.alpha, f.k, &cfg).map_err(|e| e.to_string())?;
        let g = grid_phi(&f.net, f.m, f.alpha, f.k, 0.01).map_err(|e| e.to_string())?;
        check(r.status == PhiStatus::Optimal, || format!("{}: status {:?}", f.name, r.status))?;
        let est = g.estimate.ok_or_else(|| format!("{}: grid found no violation", f.name))?;
        check(r.phi <= est + 1e-6 && est - r.phi <= g.resolution, || {
            format!("{}: phi {} vs grid {est} (resolution {})", f.name, r.phi, g.resolution)
        })?;
        if f.name == "linear" {
            check((r.phi - 1.0).abs() <= 1e-6, || format!("linear: phi {} != 1", r.phi))?;
        }
        lines.push(format!("{} {:.4}/{:.2}", f.name, r.phi, est));
        shared.phi.push((n, r));
    }
    Ok(format!("phi/grid: {}", lines.join(", ")))
}

fn criterion_8(shared: &mut Shared) -> Outcome {
    let alphas = [1.0, 1.1, 1.5, E, 5.0];
    let cfg = ResilienceConfig::default();
    let mut checked = 0;
    for (n, f) in phi_fixtures().iter().enumerate() {
        for k in 1..=2.min(f.net.num_classes() - 1) {
            let mut prev: Option<f64> = None;
            for &alpha in &alphas {
                let r = compute_phi(&f.net, f.m, alpha, k, &cfg).map_err(|e| e.to_string())?;
                check(r.is_resolved(), || format!("{}: unresolved at alpha={alpha}", f.name))?;
                if r.status == PhiStatus::Infeasible {
                    break;
                }
                if let Some(p) = prev {
                    check(r.phi >= p - 1e-6, || {
                        format!("{} k={k}: phi drops from {p} to {} at alpha={alpha}", f.name, r.phi)
                    })?;
                }
                prev = Some(r.phi);
                checked += 1;
                shared.phi.push((n, r));
            }
        }
        if f.net.num_classes() >= 3 {
            for &alpha in &alphas {
                let r1 = compute_phi(&f.net, f.m, alpha, 1, &cfg).map_err(|e| e.to_string())?;
                let r2 = compute_phi(&f.net, f.m, alpha, 2, &cfg).map_err(|e| e.to_string())?;
                check(r2.phi >= r1.phi - 1e-6, || {
                    format!("{} alpha={alpha}: phi(k=2) {} < phi(k=1) {}", f.name, r2.phi, r1.phi)
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} comparisons non-decreasing in alpha and k"))
}

fn criterion_9(shared: &Shared) -> Outcome {
    let fixtures = phi_fixtures();
    let mut count = 0;
    for (n, r) in &shared.phi {
        if r.status != PhiStatus::Optimal {
            continue;
        }
        let f = &fixtures[*n];
        let ini = r.phi_ini.ok_or_else(|| format!("{}: no initial bound", f.name))?;
        check(ini >= r.phi - 1e-9, || format!("{}: phi_ini {ini} < phi {}", f.name, r.phi))?;
        let cold_cfg = ResilienceConfig {
            warm_start: false,
            ..Default::default()
        };
        let cold = compute_phi(&f.net, r.m, r.alpha, r.k, &cold_cfg).map_err(|e| e.to_string())?;
        let gap = cold_cfg.solve.mip_gap * r.phi.abs().max(1.0);
        check((cold.phi - r.phi).abs() <= gap, || {
            format!("{} alpha={} k={}: warm {} vs cold {}", f.name, r.alpha, r.k, r.phi, cold.phi)
        })?;
        count += 1;
    }
    Ok(format!("{count} solves: phi_ini >= phi and warm = cold"))
}

fn criterion_10() -> Outcome {
    let mut model = MipModel::new("atan");
    let im = model.add_variable("im", -1.0, 1.0, Integrality::Continuous).unwrap();
    let x = model.add_variable("x", -2.0, 2.0, Integrality::Continuous).unwrap();
    encode_atan(&mut model, "t", im, x, (-1.0, 1.0), 8).map_err(|e| e.to_string())?;
    let limit = ATAN_APPROX_ERROR + atan_secant_gap(8);
    let cfg = SolveConfig::default();
    let mut widest: f64 = 0.0;
    for j in 0..=100 {
        let v = -1.0 + j as f64 / 50.0;
        let mut at = model.clone();
        at.set_var_bounds(im, v, v).unwrap();
        at.set_objective(ObjSense::Minimize, &[(x, 1.0)]).unwrap();
        let lo = solve(&at, &cfg);
        at.set_objective(ObjSense::Maximize, &[(x, 1.0)]).unwrap();
        let hi = solve(&at, &cfg);
        check(lo.status == SolveStatus::Optimal && hi.status == SolveStatus::Optimal, || {
            format!("im={v}: envelope solve {:?}/{:?}", lo.status, hi.status)
        })?;
        let truth = v.atan();
        check(lo.objective <= truth + 1e-9 && truth <= hi.objective + 1e-9, || {
            format!("im={v}: atan {truth} outside [{}, {}]", lo.objective, hi.objective)
        })?;
        let half = (hi.objective - lo.objective) / 2.0;
        check(half <= limit, || format!("im={v}: half-width {half} exceeds {limit}"))?;
        widest = widest.max(half);
    }
    Ok(format!("101 points contain atan; widest half-width {widest:.5} <= {limit:.5}"))
}

fn criterion_11() -> Outcome {
    let mut report = Vec::new();
    for f in phi_fixtures() {
        let mut answers = Vec::new();
        for workers in [1, 2, 4] {
            let cfg = ResilienceConfig::default().with_solve(SolveConfig::default().with_workers(workers));
            let t = Instant::now();
            let r = compute_phi(&f.net, f.m, f.alpha, f.k, &cfg).map_err(|e| e.to_string())?;
            report.push(format!("{}/{workers}w {:.1}ms", f.name, t.elapsed().as_secs_f64() * 1e3));
            answers.push(r.phi);
        }
        let base = answers[0];
        let tol = SolveConfig::default().mip_gap * base.abs().max(1.0);
        check(answers.iter().all(|a| (a - base).abs() <= tol), || {
            format!("{}: answers differ across workers: {answers:?}", f.name)
        })?;
    }
    println!("    wall time: {}", report.join(", "));
    Ok("identical optima for 1, 2 and 4 workers on all fixtures".into())
}

/// Re-check a witness with forward evaluation only.
fn witness_ok(net: &Network, m: usize, alpha: f64, k: usize, a: &[f64], eps: &[f64], tol: f64) -> Result<(), String> {
    let sa = net.forward(a).unwrap();
    let sa = &sa.outputs[net.score_layer()];
    for (j, &s) in sa.iter().enumerate() {
        if j != m - 1 && sa[m - 1] - s < alpha.ln() - tol {
            return Err(format!("a={a:?} is not strongly classified"));
        }
    }
    let p: Vec<f64> = a.iter().zip(eps).map(|(x, e)| x + e).collect();
    if !net.contains_input(a, tol) || !net.contains_input(&p, tol) {
        return Err("witness leaves the input domain".into());
    }
    let sp = net.forward(&p).unwrap();
    let sp = &sp.outputs[net.score_layer()];
    let above = (0..sp.len()).filter(|&j| j != m - 1 && sp[j] >= sp[m - 1] - tol).count();
    if above < k {
        return Err(format!("only {above} competitors at a+eps"));
    }
    Ok(())
}

fn criterion_12(shared: &Shared) -> Outcome {
    let fixtures = phi_fixtures();
    let tol = 1e-6;
    let cfg = ResilienceConfig::default();
    let (mut phi_witnesses, mut robust_witnesses) = (0, 0);
    for (n, r) in &shared.phi {
        let f = &fixtures[*n];
        let (a, eps) = match (&r.witness_a, &r.witness_eps) {
            (Some(a), Some(e)) => (a, e),
            _ => return Err(format!("{}: optimal result without witness", f.name)),
        };
        witness_ok(&f.net, r.m, r.alpha, r.k, a, eps, tol).map_err(|e| format!("{}: {e}", f.name))?;
        let norm: f64 = eps.iter().map(|e| e.abs()).sum();
        check((norm - r.phi).abs() <= tol, || format!("{}: |eps| {norm} != phi {}", f.name, r.phi))?;
        phi_witnesses += 1;

        // Budgets just above and below phi around the witness input, which
        // is a strict winner only when alpha > 1.
        if r.alpha <= 1.0 {
            continue;
        }
        let above = check_local_robustness(&f.net, a, r.m, r.phi + 0.05, r.k, 1.0, &cfg).map_err(|e| e.to_string())?;
        match &above.verdict {
            Verdict::Violated { eps } => {
                witness_ok(&f.net, r.m, 1.0, r.k, a, eps, tol).map_err(|e| format!("{}: {e}", f.name))?;
                let norm: f64 = eps.iter().map(|e| e.abs()).sum();
                check(norm <= r.phi + 0.05 + tol, || format!("{}: witness exceeds budget", f.name))?;
                robust_witnesses += 1;
            }
            other => return Err(format!("{}: delta = phi + 0.05 gives {other:?}", f.name)),
        }
        if r.phi >= 0.05 {
            let below = check_local_robustness(&f.net, a, r.m, r.phi - 0.05, r.k, 1.0, &cfg)
                .map_err(|e| e.to_string())?;
            check(below.verdict == Verdict::Robust, || {
                format!("{}: delta = phi - 0.05 gives {:?}", f.name, below.verdict)
            })?;
        }
    }
    Ok(format!("{phi_witnesses} phi witnesses and {robust_witnesses} robustness witnesses re-validate"))
}

/// Runs without the test harness so the report is printed on success too.
fn main() {
    let mut shared = Shared { phi: Vec::new() };
    let mut failed = BTreeSet::new();
    let mut report = |n: u32, name: &str, t: Instant, outcome: Outcome| {
        let ms = t.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} ({ms:.0} ms)"),
            Err(detail) => {
                let note = if KNOWN_FAILURES.contains(&n) { " [known]" } else { "" };
                println!("criterion {n:>2} FAIL{note}  {name}: {detail} ({ms:.0} ms)");
                failed.insert(n);
            }
        }
    };
    let t = Instant::now();
    report(1, "softmax point check", t, criterion_1());
    let t = Instant::now();
    report(2, "relu gadget suite", t, criterion_2());
    let t = Instant::now();
    report(3, "ratio and log-domain classification agree", t, criterion_3());
    let t = Instant::now();
    report(4, "interval soundness", t, criterion_4());
    let t = Instant::now();
    report(5, "lookback tightening", t, criterion_5());
    let t = Instant::now();
    report(6, "solver matches enumeration", t, criterion_6());
    let t = Instant::now();
    report(7, "phi matches grid oracle", t, criterion_7(&mut shared));
    let t = Instant::now();
    report(8, "monotonicity in alpha and k", t, criterion_8(&mut shared));
    let t = Instant::now();
    report(9, "initial bound and warm start", t, criterion_9(&shared));
    let t = Instant::now();
    report(10, "atan envelope", t, criterion_10());
    let t = Instant::now();
    report(11, "worker count invariance", t, criterion_11());
    let t = Instant::now();
    report(12, "witnesses re-validate", t, criterion_12(&shared));

    let known: BTreeSet<u32> = KNOWN_FAILURES.iter().copied().collect();
    let unexpected: Vec<_> = failed.difference(&known).collect();
    let fixed: Vec<_> = known.difference(&failed).collect();
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
    assert!(fixed.is_empty(), "criteria listed as known failures now pass: {fixed:?}");
}
