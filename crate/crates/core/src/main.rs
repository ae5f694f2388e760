use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use maxres::dataflow::{propagate_intervals, tighten_lookback, LookbackConfig};
use maxres::encoder::{encode_query, EncodeOptions, QuerySpec};
use maxres::mip::export_mps;
use maxres::network::{softmax, Network};
use maxres::resilience::{
    self, AlphaStatus, PhiStatus, ResilienceConfig, ResilienceResult, Verdict,
};
use maxres::solver::SolveConfig;
use maxres::{format_sig, Error};

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_VIOLATED: u8 = 10;
const EXIT_LIMIT: u8 = 20;

#[derive(Parser)]
#[command(name = "maxres", version, about = "Perturbation bounds for feed-forward classifiers")]
struct Cli {
    /// Increase log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SolveArgs {
    /// Branch-and-bound worker threads.
    #[arg(long, env = "MAXRES_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Wall-clock limit per solve, in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Node limit per solve.
    #[arg(long)]
    node_limit: Option<u64>,
    /// Tighten bounds with lookback windows of this depth before encoding.
    #[arg(long)]
    lookback: Option<usize>,
    /// Skip the preliminary solves used to warm-start the main model.
    #[arg(long)]
    no_warm_start: bool,
    /// Write a machine-readable copy of the result to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

impl SolveArgs {
    fn config(&self) -> ResilienceConfig {
        let mut solve = SolveConfig::default().with_workers(self.workers);
        solve.time_limit = self.time_limit;
        solve.node_limit = self.node_limit;
        ResilienceConfig {
            solve,
            encode: EncodeOptions::default(),
            lookback: self.lookback.map(|depth| LookbackConfig {
                depth,
                ..Default::default()
            }),
            warm_start: !self.no_warm_start,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the network on one input.
    Eval {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Propagate interval bounds and print or write the per-node table.
    Bounds {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        lookback: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check local robustness of one input within an L1 budget.
    Verify {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Class of the input, 1-based.
        #[arg(long = "class")]
        class: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Write the perturbation found to this file.
        #[arg(long)]
        witness: Option<PathBuf>,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Maximum perturbation bound for one class.
    Phi {
        #[arg(long)]
        net: PathBuf,
        #[arg(long = "class")]
        class: usize,
        #[arg(long, default_value_t = 1.1)]
        alpha: f64,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Write the witness input and perturbation to this file.
        #[arg(long)]
        witness: Option<PathBuf>,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Maximum perturbation bound for every class and their minimum.
    Xi {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, default_value_t = 1.1)]
        alpha: f64,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Largest confidence ratio at which a class is ever predicted.
    MaxAlpha {
        #[arg(long)]
        net: PathBuf,
        #[arg(long = "class")]
        class: usize,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Write the MILP for a query in MPS format.
    Export {
        #[arg(long)]
        net: PathBuf,
        /// `phi:m=1,alpha=1.1,k=2`, `verify:m=1,delta=0.5,k=2` (needs
        /// --input) or `max-alpha:m=1`.
        #[arg(long)]
        query: String,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        lookback: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors that map to the usage exit code.
#[derive(Debug)]
struct Usage(String);

enum Failure {
    Usage(String),
    Other(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Query(msg) => Failure::Usage(msg),
            other => Failure::Other(other),
        }
    }
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u.0)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn g(v: f64) -> String {
    format_sig(v, 6)
}

fn vec_str(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| g(x)).collect();
    format!("[{}]", parts.join(", "))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|source| {
        Failure::Other(Error::Io {
            path: path.display().to_string(),
            source,
        })
    })
}

fn write_json<T: Serialize>(path: Option<&PathBuf>, value: &T) -> Result<(), Failure> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(value).expect("result serializes");
        write_file(p, &(text + "\n"))?;
    }
    Ok(())
}

/// Read an input vector: a JSON array or numbers separated by whitespace or commas.
fn read_input(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| Failure::Other(Error::Parse(format!("{}: {e}", path.display()))));
    }
    trimmed
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Failure::Other(Error::Parse(format!("{}: bad number {t:?}", path.display()))))
        })
        .collect()
}

fn run(cmd: Command) -> Result<u8, Failure> {
    match cmd {
        Command::Eval { net, input, json } => {
            let net = Network::load(net)?;
            let x = read_input(&input)?;
            let trace = net.forward_in_domain(&x)?;
            for l in 1..trace.outputs.len() {
                let kind = net.layer(l).kind().as_str();
                if let Some(im) = &trace.intermediates[l] {
                    println!("layer {l} {kind} im {}", vec_str(im));
                }
                println!("layer {l} {kind} x  {}", vec_str(&trace.outputs[l]));
            }
            let scores = &trace.outputs[net.score_layer()];
            let probs = if net.ends_in_softmax() {
                trace.output().to_vec()
            } else {
                softmax(scores)
            };
            let best = argmax(scores);
            println!("probabilities {}", vec_str(&probs));
            println!("class {}", best + 1);
            write_json(
                json.as_ref(),
                &json!({
                    "outputs": trace.outputs,
                    "intermediates": trace.intermediates,
                    "probabilities": probs,
                    "class": best + 1,
                }),
            )?;
            Ok(EXIT_OK)
        }
        Command::Bounds { net, lookback, out } => {
            let net = Network::load(net)?;
            let mut bounds = propagate_intervals(&net);
            if let Some(depth) = lookback {
                let cfg = LookbackConfig {
                    depth,
                    ..Default::default()
                };
                bounds = tighten_lookback(&net, &bounds, &cfg);
            }
            let dump = bounds.dump();
            match out {
                Some(p) => {
                    write_file(&p, &dump)?;
                    println!("undecided relu nodes {}", bounds.num_undecided());
                }
                None => print!("{dump}"),
            }
            Ok(EXIT_OK)
        }
        Command::Verify {
            net,
            input,
            class,
            delta,
            k,
            witness,
            solve,
        } => {
            let net = Network::load(net)?;
            let a = read_input(&input)?;
            let cfg = solve.config();
            let r = resilience::check_local_robustness(&net, &a, class, delta, k, 1.0, &cfg)?;
            write_json(solve.json.as_ref(), &r)?;
            let code = match &r.verdict {
                Verdict::Robust => {
                    println!("ROBUST");
                    EXIT_OK
                }
                Verdict::Violated { eps } => {
                    println!("VIOLATED");
                    println!("eps {}", vec_str(eps));
                    println!("norm {}", g(eps.iter().map(|e| e.abs()).sum()));
                    if let Some(p) = &witness {
                        let text = serde_json::to_string_pretty(&json!({ "input": a, "eps": eps }))
                            .expect("witness serializes");
                        write_file(p, &(text + "\n"))?;
                        println!("witness {}", p.display());
                    }
                    EXIT_VIOLATED
                }
                Verdict::Unknown => {
                    println!("UNKNOWN");
                    EXIT_LIMIT
                }
            };
            Ok(code)
        }
        Command::Phi {
            net,
            class,
            alpha,
            k,
            witness,
            solve,
        } => {
            let net = Network::load(net)?;
            let cfg = solve.config();
            let r = resilience::compute_phi(&net, class, alpha, k, &cfg)?;
            write_json(solve.json.as_ref(), &r)?;
            print_phi(&r);
            if let (Some(p), Some(a), Some(eps)) = (&witness, &r.witness_a, &r.witness_eps) {
                let text = serde_json::to_string_pretty(&json!({ "input": a, "eps": eps }))
                    .expect("witness serializes");
                write_file(p, &(text + "\n"))?;
                println!("witness {}", p.display());
            }
            Ok(if r.is_resolved() { EXIT_OK } else { EXIT_LIMIT })
        }
        Command::Xi { net, alpha, k, solve } => {
            let net = Network::load(net)?;
            let cfg = solve.config();
            let x = resilience::compute_xi(&net, alpha, k, &cfg)?;
            write_json(solve.json.as_ref(), &x)?;
            println!("{:>5}  {:>12}  {:>12}  {:>10}", "class", "phi", "lower", "status");
            for r in &x.classes {
                println!(
                    "{:>5}  {:>12}  {:>12}  {:>10}",
                    r.m,
                    g(r.phi),
                    g(r.phi_lower),
                    phi_status(r.status)
                );
            }
            match (x.xi, x.defined) {
                (Some(v), _) => println!("xi {}", g(v)),
                (None, false) => println!("xi undefined (no class is strongly classified at alpha)"),
                (None, true) => println!("xi in [{}, {}]", g(x.xi_lower), g(x.xi_upper)),
            }
            if !x.classes.iter().all(|r| r.exact) {
                println!("exact false (atan envelope, value is an under-approximation)");
            }
            let resolved = x.classes.iter().all(ResilienceResult::is_resolved);
            Ok(if resolved { EXIT_OK } else { EXIT_LIMIT })
        }
        Command::MaxAlpha { net, class, solve } => {
            let net = Network::load(net)?;
            let cfg = solve.config();
            let r = resilience::compute_max_alpha(&net, class, &cfg)?;
            write_json(solve.json.as_ref(), &r)?;
            match r.status {
                AlphaStatus::Optimal => {
                    println!("alpha_max {}", g(r.alpha_max));
                }
                AlphaStatus::NeverTop => {
                    println!("infeasible: class {class} never has the top score");
                }
                AlphaStatus::Limit => {
                    println!("alpha_max >= {}", g(r.alpha_max));
                    println!("alpha_max <= {}", g(r.alpha_upper));
                }
            }
            if let Some(a) = &r.input {
                println!("input {}", vec_str(a));
            }
            println!("exact {}", r.exact);
            Ok(if r.status == AlphaStatus::Limit { EXIT_LIMIT } else { EXIT_OK })
        }
        Command::Export {
            net,
            query,
            input,
            lookback,
            out,
        } => {
            let net = Network::load(net)?;
            let input = input.as_deref().map(read_input).transpose()?;
            let q = parse_query(&query, input)?;
            let mut bounds = propagate_intervals(&net);
            if let Some(depth) = lookback {
                let cfg = LookbackConfig {
                    depth,
                    ..Default::default()
                };
                bounds = tighten_lookback(&net, &bounds, &cfg);
            }
            let enc = encode_query(&net, &bounds, &q, &EncodeOptions::default())?;
            write_file(&out, &export_mps(&enc.model))?;
            println!(
                "wrote {} ({} variables, {} rows, {} binaries)",
                out.display(),
                enc.model.num_vars(),
                enc.model.num_constraints(),
                enc.model.num_binaries()
            );
            Ok(EXIT_OK)
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn phi_status(s: PhiStatus) -> &'static str {
    match s {
        PhiStatus::Optimal => "optimal",
        PhiStatus::Infeasible => "infeasible",
        PhiStatus::Limit => "limit",
    }
}

fn print_phi(r: &ResilienceResult) {
    match r.status {
        PhiStatus::Optimal => println!("phi {}", g(r.phi)),
        PhiStatus::Infeasible => {
            println!("infeasible at alpha {}", g(r.alpha));
            println!("phi +inf");
        }
        PhiStatus::Limit => {
            println!("phi <= {}", g(r.phi));
            println!("phi >= {}", g(r.phi_lower));
        }
    }
    if let Some(v) = r.phi_ini {
        println!("phi_ini {}", g(v));
    }
    if let (Some(a), Some(eps)) = (&r.witness_a, &r.witness_eps) {
        println!("witness_a {}", vec_str(a));
        println!("witness_eps {}", vec_str(eps));
        println!("witness_valid {}", r.witness_valid);
    }
    println!("exact {}", r.exact);
}

/// Parse `kind:key=value,...`.
fn parse_query(text: &str, input: Option<Vec<f64>>) -> Result<QuerySpec, Usage> {
    let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
    let mut m = None;
    let mut alpha = 1.1;
    let mut k = 2;
    let mut delta = None;
    for item in rest.split(',').filter(|s| !s.is_empty()) {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Usage(format!("query item {item:?} is not key=value")))?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| Usage(format!("bad value for {key}: {v:?}")));
        match key.trim() {
            "m" | "class" => m = Some(num(value)? as usize),
            "alpha" => alpha = num(value)?,
            "k" => k = num(value)? as usize,
            "delta" => delta = Some(num(value)?),
            other => return Err(Usage(format!("unknown query key {other:?}"))),
        }
    }
    let m = m.ok_or_else(|| Usage("query needs m=<class>".into()))?;
    match kind.trim() {
        "phi" => Ok(QuerySpec::max_perturbation(m, alpha, k)),
        "max-alpha" => Ok(QuerySpec::max_alpha(m)),
        "verify" => {
            let delta = delta.ok_or_else(|| Usage("verify query needs delta=<budget>".into()))?;
            let input = input.ok_or_else(|| Usage("verify query needs --input".into()))?;
            Ok(QuerySpec::local_robustness(input, delta, m, k))
        }
        other => Err(Usage(format!("unknown query kind {other:?}"))),
    }
}
