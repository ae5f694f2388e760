use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use log::{debug, info};

use super::lp::{Basis, LpData, LpStatus, Simplex};
use super::{relative_gap, Progress, SolveConfig, SolveResult, SolveStatus};
use crate::mip::{Assignment, MipModel};

/// A subproblem: root bounds plus a list of binary fixings.
struct Node {
    /// Lower bound on the (minimization-form) objective inherited from the parent LP.
    bound: f64,
    depth: u32,
    seq: u64,
    fixes: Vec<(usize, f64)>,
    basis: Option<Basis>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap pops the greatest: lowest bound first, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Pool {
    heap: BinaryHeap<Node>,
    /// Nodes currently held by workers.
    ongoing: usize,
    /// Bounds of nodes currently held by workers, indexed by worker.
    active: Vec<f64>,
    nodes: u64,
    seq: u64,
    stop: bool,
    lp_iterations: u64,
}

struct Incumbent {
    value: f64,
    x: Option<Vec<f64>>,
}

struct Search<'a> {
    model: &'a MipModel,
    data: &'a LpData,
    cfg: &'a SolveConfig,
    start: Instant,
    priority: Vec<i32>,
    /// Choice groups as column indices, and the group of each column.
    groups: Vec<Vec<usize>>,
    group_of: Vec<Option<usize>>,
    pool: Mutex<Pool>,
    cv: Condvar,
    incumbent: Mutex<Incumbent>,
    /// Smallest bound among nodes discarded because of the incumbent.
    pruned_min: Mutex<f64>,
    progress: Mutex<(Vec<Progress>, f64)>,
    unbounded: Mutex<bool>,
    /// Set when a node could not be resolved reliably, which forbids claiming optimality.
    lossy: Mutex<bool>,
}

/// Solve `model` by LP-based branch and bound.
pub fn solve(model: &MipModel, cfg: &SolveConfig) -> SolveResult {
    let start = Instant::now();
    let data = LpData::from_model(model);
    let workers = cfg.workers.max(1);
    let mut priority = vec![0; data.n];
    for (v, p) in model.priorities() {
        priority[v.0] = *p;
    }
    let groups: Vec<Vec<usize>> = model
        .choice_groups()
        .iter()
        .map(|g| g.iter().map(|v| v.0).collect())
        .collect();
    let mut group_of = vec![None; data.n];
    for (gi, g) in groups.iter().enumerate() {
        for &j in g {
            group_of[j] = Some(gi);
        }
    }

    let search = Search {
        model,
        data: &data,
        cfg,
        start,
        priority,
        groups,
        group_of,
        pool: Mutex::new(Pool {
            heap: BinaryHeap::new(),
            ongoing: 0,
            active: vec![f64::INFINITY; workers],
            nodes: 0,
            seq: 1,
            stop: false,
            lp_iterations: 0,
        }),
        cv: Condvar::new(),
        incumbent: Mutex::new(Incumbent {
            value: f64::INFINITY,
            x: None,
        }),
        pruned_min: Mutex::new(f64::INFINITY),
        progress: Mutex::new((Vec::new(), 0.0)),
        unbounded: Mutex::new(false),
        lossy: Mutex::new(false),
    };

    if let Some(ws) = model.warm_start() {
        if model.check_feasible(ws, cfg.int_tol) {
            let value = data.min_objective(ws.values());
            search.offer(value, ws.values().to_vec(), "warm start");
        } else {
            debug!("warm start rejected: {} violations", model.violations(ws, cfg.int_tol).len());
        }
    }

    search.pool.lock().unwrap().heap.push(Node {
        bound: f64::NEG_INFINITY,
        depth: 0,
        seq: 0,
        fixes: Vec::new(),
        basis: None,
    });

    if workers == 1 {
        search.worker(0);
    } else {
        std::thread::scope(|s| {
            for w in 0..workers {
                let search = &search;
                s.spawn(move || search.worker(w));
            }
        });
    }

    search.finish()
}

impl<'a> Search<'a> {
    fn cutoff(&self) -> f64 {
        let inc = self.incumbent.lock().unwrap().value;
        if inc.is_finite() {
            inc - self.cfg.abs_gap(inc)
        } else {
            f64::INFINITY
        }
    }

    fn prune(&self, bound: f64) {
        let mut p = self.pruned_min.lock().unwrap();
        if bound < *p {
            *p = bound;
        }
    }

    fn limits_hit(&self, pool: &Pool) -> bool {
        if let Some(n) = self.cfg.node_limit {
            if pool.nodes >= n {
                return true;
            }
        }
        if let Some(t) = self.cfg.time_limit {
            if self.start.elapsed().as_secs_f64() >= t {
                return true;
            }
        }
        false
    }

    /// Best bound over open and in-flight nodes.
    fn global_bound(&self, pool: &Pool) -> f64 {
        let open = pool.heap.peek().map_or(f64::INFINITY, |n| n.bound);
        let active = pool.active.iter().copied().fold(f64::INFINITY, f64::min);
        open.min(active)
    }

    fn record(&self, nodes: u64, bound: f64, reason: &str) {
        let inc = self.incumbent.lock().unwrap().value;
        let sign = self.data.obj_sign;
        let bound = bound.min(inc);
        let point = Progress {
            nodes,
            incumbent: sign * inc,
            bound: sign * bound,
            gap: relative_gap(inc, bound),
            time: self.start.elapsed().as_secs_f64(),
        };
        info!(
            "nodes={} incumbent={} bound={} gap={:.3e} time={:.3} ({reason})",
            point.nodes, point.incumbent, point.bound, point.gap, point.time
        );
        self.progress.lock().unwrap().0.push(point);
    }

    fn offer(&self, value: f64, x: Vec<f64>, reason: &str) -> bool {
        {
            let mut inc = self.incumbent.lock().unwrap();
            if value >= inc.value {
                return false;
            }
            inc.value = value;
            inc.x = Some(x);
        }
        let (nodes, bound) = {
            let pool = self.pool.lock().unwrap();
            (pool.nodes, self.global_bound(&pool))
        };
        self.record(nodes, bound, reason);
        true
    }

    fn maybe_log(&self, nodes: u64, bound: f64) {
        let Some(interval) = self.cfg.log_interval else {
            return;
        };
        let now = self.start.elapsed().as_secs_f64();
        {
            let mut p = self.progress.lock().unwrap();
            if now - p.1 < interval {
                return;
            }
            p.1 = now;
        }
        self.record(nodes, bound, "tick");
    }

    fn take(&self, w: usize) -> Option<Node> {
        let mut pool = self.pool.lock().unwrap();
        loop {
            if pool.stop {
                return None;
            }
            if let Some(node) = pool.heap.pop() {
                pool.ongoing += 1;
                pool.active[w] = node.bound;
                return Some(node);
            }
            if pool.ongoing == 0 {
                return None;
            }
            pool = self.cv.wait(pool).unwrap();
        }
    }

    fn release(&self, w: usize, iterations: usize) {
        let mut pool = self.pool.lock().unwrap();
        pool.ongoing -= 1;
        pool.active[w] = f64::INFINITY;
        pool.lp_iterations += iterations as u64;
        self.cv.notify_all();
    }

    fn push(&self, mut node: Node) {
        let mut pool = self.pool.lock().unwrap();
        node.seq = pool.seq;
        pool.seq += 1;
        pool.heap.push(node);
        self.cv.notify_one();
    }

    fn worker(&self, w: usize) {
        while let Some(node) = self.take(w) {
            let iters = self.plunge(w, node);
            self.release(w, iters);
        }
        self.cv.notify_all();
    }

    /// Bounds of the root model with `fixes` applied.
    fn bounds_for(&self, fixes: &[(usize, f64)]) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.data.col_lo.clone();
        let mut hi = self.data.col_hi.clone();
        for &(j, v) in fixes {
            lo[j] = v;
            hi[j] = v;
        }
        (lo, hi)
    }

    /// Process `node` and keep diving into one child until the dive ends.
    /// Returns the number of simplex iterations spent.
    fn plunge(&self, w: usize, mut node: Node) -> usize {
        let mut simplex: Option<Simplex<'_>> = None;
        // Number of `node.fixes` already applied to `simplex`.
        let mut applied = 0;
        let mut iterations = 0usize;
        loop {
            {
                let mut pool = self.pool.lock().unwrap();
                if pool.stop || self.limits_hit(&pool) {
                    pool.stop = true;
                    pool.heap.push(node);
                    self.cv.notify_all();
                    break;
                }
                pool.nodes += 1;
                pool.active[w] = node.bound;
                let nodes = pool.nodes;
                let bound = self.global_bound(&pool);
                drop(pool);
                self.maybe_log(nodes, bound);
            }
            if node.bound >= self.cutoff() {
                self.prune(node.bound);
                break;
            }

            let before = simplex.as_ref().map_or(0, |s| s.iterations);
            let status = match simplex.as_mut() {
                Some(s) => {
                    for &(j, v) in &node.fixes[applied..] {
                        s.set_col_bounds(j, v, v);
                    }
                    s.reoptimize()
                }
                None => {
                    let (lo, hi) = self.bounds_for(&node.fixes);
                    let warm = node
                        .basis
                        .as_ref()
                        .and_then(|b| Simplex::warm(self.data, b, &lo, &hi));
                    let (s, st) = match warm {
                        Some(pair) => pair,
                        None => Simplex::cold(self.data, &lo, &hi),
                    };
                    simplex = Some(s);
                    st
                }
            };
            let s = simplex.as_mut().unwrap();
            applied = node.fixes.len();
            iterations += s.iterations.saturating_sub(before);

            let status = if status == LpStatus::NumericalFailure || status == LpStatus::IterationLimit {
                let (lo, hi) = self.bounds_for(&node.fixes);
                let (fresh, st) = Simplex::cold(self.data, &lo, &hi);
                iterations += fresh.iterations;
                *s = fresh;
                st
            } else {
                status
            };

            match status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => break,
                LpStatus::Unbounded => {
                    *self.unbounded.lock().unwrap() = true;
                    break;
                }
                LpStatus::NumericalFailure | LpStatus::IterationLimit => {
                    debug!("node at depth {} lost to {:?}", node.depth, status);
                    *self.lossy.lock().unwrap() = true;
                    break;
                }
            }

            let x = s.structural().to_vec();
            let obj = self.data.min_objective(&x).max(node.bound);
            if obj >= self.cutoff() {
                self.prune(obj);
                break;
            }

            let Some(j) = self.branching_variable(&x) else {
                self.accept_integral(&node.fixes, x);
                break;
            };

            let (dive, other) = self.split(j, &x);
            let mut other_fixes = node.fixes.clone();
            other_fixes.extend(other);
            self.push(Node {
                bound: obj,
                depth: node.depth + 1,
                seq: 0,
                fixes: other_fixes,
                basis: Some(s.basis()),
            });
            node.fixes.extend(dive);
            node.bound = obj;
            node.depth += 1;
            node.basis = None;
        }
        iterations
    }

    /// Highest priority, then most fractional, then lowest index.
    fn branching_variable(&self, x: &[f64]) -> Option<usize> {
        let tol = self.cfg.int_tol;
        let mut best: Option<(usize, i32, f64)> = None;
        for &j in &self.data.binaries {
            let frac = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
            if frac <= tol {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, p, f)) => {
                    let pj = self.priority[j];
                    pj > p || (pj == p && frac > f + 1e-12)
                }
            };
            if better {
                best = Some((j, self.priority[j], frac));
            }
        }
        best.map(|(j, _, _)| j)
    }

    /// Fixings for the two children when branching on column `j`: the dive
    /// child first. A member of a choice group splits the group into two
    /// halves at the median of its LP weights, and each child turns off one
    /// half; any other binary is fixed to 0 and 1.
    fn split(&self, j: usize, x: &[f64]) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
        let tol = self.cfg.int_tol;
        if let Some(g) = self.group_of[j] {
            let members = &self.groups[g];
            let positive: Vec<usize> = (0..members.len()).filter(|&i| x[members[i]] > tol).collect();
            if positive.len() >= 2 {
                let (first, last) = (positive[0], positive[positive.len() - 1]);
                let mut acc = 0.0;
                let mut cut = members.len();
                for (i, &c) in members.iter().enumerate() {
                    acc += x[c];
                    if acc >= 0.5 {
                        cut = i + 1;
                        break;
                    }
                }
                // Both halves must carry some weight.
                let cut = cut.clamp(first + 1, last);
                let left_mass: f64 = members[..cut].iter().map(|&c| x[c]).sum();
                let off = |range: &[usize]| range.iter().map(|&c| (c, 0.0)).collect::<Vec<_>>();
                let keep_left = off(&members[cut..]);
                let keep_right = off(&members[..cut]);
                return if left_mass >= 0.5 {
                    (keep_left, keep_right)
                } else {
                    (keep_right, keep_left)
                };
            }
        }
        if x[j] >= 0.5 {
            (vec![(j, 1.0)], vec![(j, 0.0)])
        } else {
            (vec![(j, 0.0)], vec![(j, 1.0)])
        }
    }

    /// Round the binaries of an integral LP point, re-solve the continuous
    /// part with them fixed, and offer the result as an incumbent.
    fn accept_integral(&self, fixes: &[(usize, f64)], x: Vec<f64>) {
        let mut rounded = fixes.to_vec();
        for &j in &self.data.binaries {
            rounded.push((j, x[j].round()));
        }
        let (lo, hi) = self.bounds_for(&rounded);
        let (s, st) = Simplex::cold(self.data, &lo, &hi);
        let candidates = if st == LpStatus::Optimal {
            vec![s.structural().to_vec(), x]
        } else {
            vec![x]
        };
        for cand in candidates {
            let a = Assignment(cand);
            if self.model.check_feasible(&a, self.cfg.int_tol) {
                let value = self.data.min_objective(a.values());
                self.offer(value, a.0, "integral node");
                return;
            }
        }
        debug!("integral LP point failed feasibility check");
        *self.lossy.lock().unwrap() = true;
    }

    fn finish(self) -> SolveResult {
        let pool = self.pool.into_inner().unwrap();
        let inc = self.incumbent.into_inner().unwrap();
        let pruned = self.pruned_min.into_inner().unwrap();
        let lossy = self.lossy.into_inner().unwrap();
        let unbounded = self.unbounded.into_inner().unwrap();
        let sign = self.data.obj_sign;
        let has_inc = inc.x.is_some();

        let (status, bound) = if pool.stop {
            let open = pool.heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
            let bound = open.min(pruned).min(inc.value);
            (
                if has_inc {
                    SolveStatus::FeasibleBound
                } else {
                    SolveStatus::Limit
                },
                bound,
            )
        } else if unbounded && !has_inc {
            (SolveStatus::Unbounded, f64::NEG_INFINITY)
        } else if lossy {
            let status = if has_inc {
                SolveStatus::FeasibleBound
            } else {
                SolveStatus::Limit
            };
            (status, f64::NEG_INFINITY)
        } else if has_inc {
            (SolveStatus::Optimal, pruned.min(inc.value))
        } else {
            (SolveStatus::Infeasible, f64::INFINITY)
        };

        let mut progress = self.progress.into_inner().unwrap().0;
        let wall_time = self.start.elapsed().as_secs_f64();
        let result = SolveResult {
            status,
            objective: sign * inc.value,
            dual_bound: sign * bound,
            assignment: inc.x.map(Assignment),
            nodes_explored: pool.nodes,
            lp_iterations: pool.lp_iterations,
            wall_time,
            progress: Vec::new(),
        };
        progress.push(Progress {
            nodes: result.nodes_explored,
            incumbent: result.objective,
            bound: result.dual_bound,
            gap: result.gap(),
            time: wall_time,
        });
        info!(
            "nodes={} incumbent={} bound={} gap={:.3e} time={:.3} (final: {:?})",
            result.nodes_explored,
            result.objective,
            result.dual_bound,
            result.gap(),
            wall_time,
            status
        );
        SolveResult { progress, ..result }
    }
}
