//! `zdq`: solve, compare, and verify zero-delay quantization problems.
//!
//! Exit codes: 0 success, 2 model validation failure, 3 search budget
//! exceeded, 64 usage error, 1 anything else. All numeric output is printed
//! to 12 significant digits and identical invocations on identical files
//! produce byte-identical outputs; wall times go to stderr only.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use zdq_core::beliefdp::{dp_solve, DpOptions};
use zdq_core::error::Error;
use zdq_core::filter::{build_belief_tree, xi_init, xi_predict, BeliefTable, MetaBelief};
use zdq_core::instances::{
    derive_seeds, random_iid_team_model, random_single_model, SingleSpec, TeamSpec,
};
use zdq_core::lqg::{
    design_quantizer, pilot_mean_samples, simulate_separation, QuantizerMethod, ScalarQuantizer,
};
use zdq_core::model::{load_model, Model};
use zdq_core::multiterminal::{enumerate_team, run_counterexample, TeamClass};
use zdq_core::oracle::{
    compare_classes, enumerate_full, enumerate_witsenhausen, enumerate_wv, SearchOptions,
    SearchReport,
};

#[derive(Parser)]
#[command(
    name = "zdq",
    version,
    about = "Zero-delay quantization laboratory",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SearchArgs {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Maximum number of policy evaluations. Full enumeration is
    /// double-exponential; keep |X| <= 3, |Y| <= 2, |M_t| <= 2, T <= 3.
    #[arg(long, default_value_t = 100_000_000)]
    budget: u64,
    /// Belief canonicalization tolerance (L-infinity).
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Write the JSON report here.
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Append a CSV summary row here (with header if new).
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SolveClass {
    Full,
    Wits,
    Wv,
    Dp,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum TeamClassArg {
    Nsm,
    Separated,
    Full,
}

impl From<TeamClassArg> for TeamClass {
    fn from(c: TeamClassArg) -> TeamClass {
        match c {
            TeamClassArg::Nsm => TeamClass::Memoryless,
            TeamClassArg::Separated => TeamClass::Separated,
            TeamClassArg::Full => TeamClass::Full,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Uniform,
    Lloyd,
    /// Identity pipeline: no quantization, decoder sees the filtered mean.
    None,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    Single,
    Team,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file against the schema invariants.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Exhaustively solve one policy class (or the meta-belief DP).
    Solve {
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, value_enum)]
        class: SolveClass,
    },
    /// Run full, Witsenhausen, and WV enumerations and report the gaps.
    Compare {
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Exhaustively solve one two-encoder team class.
    Team {
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, value_enum)]
        class: TeamClassArg,
    },
    /// Reproduce the decentralized signaling counterexample.
    Counterexample {
        #[arg(long)]
        out_json: Option<PathBuf>,
    },
    /// Kalman-filter-then-quantize pipeline with the distortion split.
    Lqg {
        #[arg(long)]
        model: PathBuf,
        /// Override the per-stage quantizer levels from the model file.
        #[arg(long)]
        rate: Option<usize>,
        #[arg(long, default_value_t = 1_000_000)]
        paths: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = MethodArg::Lloyd)]
        method: MethodArg,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Generate seeded random instances and verify the structural
    /// equivalences on each.
    VerifySuite {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        horizon: usize,
        #[arg(long, default_value_t = 100_000_000)]
        budget: u64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Export the belief tree and meta-belief trace as JSON.
    Tree {
        #[arg(long)]
        model: PathBuf,
        /// Depth of the tree; defaults to the model horizon.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long)]
        out_json: Option<PathBuf>,
    },
}

/// 12 significant digits, deterministic across platforms.
fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

/// 12 decimals; used where gaps are compared against absolute tolerances.
fn dec12(x: f64) -> String {
    format!("{x:.12}")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(64)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation(_) => ExitCode::from(2),
                Error::BudgetExceeded { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn load_finite(path: &Path) -> Result<zdq_core::FiniteModel, Error> {
    match load_model(path)? {
        Model::Finite(m) => Ok(m),
        Model::LinearGauss(_) => Err(Error::Unsupported(
            "this subcommand takes a finite model; `lqg` takes linear-Gaussian files".into(),
        )),
    }
}

fn load_lqg(path: &Path) -> Result<zdq_core::LinearGaussModel, Error> {
    match load_model(path)? {
        Model::LinearGauss(m) => Ok(m),
        Model::Finite(_) => Err(Error::Unsupported(
            "`lqg` takes a linear-Gaussian model file (top-level `lqg` object)".into(),
        )),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), Error> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("csv record");
    for row in rows {
        writer.write_record(row).expect("csv record");
    }
    let data = writer.into_inner().expect("csv flush");
    std::fs::write(path, data).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn report_outputs(
    report: &SearchReport,
    out_json: &Option<PathBuf>,
    out_csv: &Option<PathBuf>,
) -> Result<(), Error> {
    println!(
        "class={} policies={} optimal_cost={}",
        report.class_name,
        report.num_policies_evaluated,
        sig12(report.optimal_cost)
    );
    eprintln!("wall_time_secs={:.3}", report.wall_time_secs);
    if let Some(path) = out_json {
        write_json(
            path,
            &serde_json::to_value(report).expect("report serializes"),
        )?;
    }
    if let Some(path) = out_csv {
        write_csv(
            path,
            &["class", "num_policies_evaluated", "optimal_cost"],
            &[vec![
                report.class_name.clone(),
                report.num_policies_evaluated.to_string(),
                sig12(report.optimal_cost),
            ]],
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Validate { model } => {
            // Parse errors and invariant violations both surface here;
            // validation failures list every violated field.
            load_model(&model)?;
            println!("ok");
            Ok(())
        }
        Command::Solve { search, class } => {
            let model = load_finite(&search.model)?;
            let opts = SearchOptions {
                budget: search.budget,
                tol: search.tol,
            };
            let report = match class {
                SolveClass::Full => enumerate_full(&model, &opts)?,
                SolveClass::Wits => enumerate_witsenhausen(&model, &opts)?,
                SolveClass::Wv => enumerate_wv(&model, &opts)?,
                SolveClass::Dp => {
                    let sol = dp_solve(
                        &model,
                        &DpOptions {
                            max_evaluations: search.budget,
                            tol: search.tol,
                        },
                    )?;
                    println!("class=dp optimal_cost={}", sig12(sol.optimal_cost));
                    if let Some(path) = &search.out_json {
                        write_json(path, &serde_json::to_value(&sol).expect("dp serializes"))?;
                    }
                    if let Some(path) = &search.out_csv {
                        write_csv(
                            path,
                            &["class", "num_policies_evaluated", "optimal_cost"],
                            &[vec![
                                "dp".into(),
                                sol.num_evaluations.to_string(),
                                sig12(sol.optimal_cost),
                            ]],
                        )?;
                    }
                    return Ok(());
                }
            };
            report_outputs(&report, &search.out_json, &search.out_csv)
        }
        Command::Compare { search } => {
            let model = load_finite(&search.model)?;
            let opts = SearchOptions {
                budget: search.budget,
                tol: search.tol,
            };
            let rows = compare_classes(&model, &opts)?;
            for row in &rows {
                println!(
                    "class={} optimal_cost={} gap_to_full={}",
                    row.class,
                    sig12(row.optimal_cost),
                    dec12(row.gap_to_full)
                );
            }
            if let Some(path) = &search.out_json {
                write_json(path, &serde_json::to_value(&rows).expect("rows serialize"))?;
            }
            if let Some(path) = &search.out_csv {
                write_csv(
                    path,
                    &["class", "optimal_cost", "gap_to_full"],
                    &rows
                        .iter()
                        .map(|r| vec![r.class.clone(), sig12(r.optimal_cost), dec12(r.gap_to_full)])
                        .collect::<Vec<_>>(),
                )?;
            }
            Ok(())
        }
        Command::Team { search, class } => {
            let model = load_finite(&search.model)?;
            let opts = SearchOptions {
                budget: search.budget,
                tol: search.tol,
            };
            let report = enumerate_team(&model, class.into(), &opts)?;
            report_outputs(&report, &search.out_json, &search.out_csv)
        }
        Command::Counterexample { out_json } => {
            let report = run_counterexample(&SearchOptions::default())?;
            println!(
                "full_cost={} separated_cost={}",
                dec12(report.full_cost),
                dec12(report.separated_cost)
            );
            println!("witness_cost={}", dec12(report.witness_cost));
            println!(
                "witness_policy={}",
                serde_json::to_string(&report.witness_policy).expect("policy serializes")
            );
            if let Some(path) = &out_json {
                write_json(
                    path,
                    &serde_json::to_value(&report).expect("report serializes"),
                )?;
            }
            Ok(())
        }
        Command::Lqg {
            model,
            rate,
            paths,
            seed,
            method,
            out_csv,
        } => {
            let model = load_lqg(&model)?;
            let (quantizers, levels): (Option<Vec<ScalarQuantizer>>, String) = match method {
                MethodArg::None => (None, "inf".into()),
                MethodArg::Uniform | MethodArg::Lloyd => {
                    let kind = if method == MethodArg::Uniform {
                        QuantizerMethod::Uniform
                    } else {
                        QuantizerMethod::Lloyd
                    };
                    // Pilot pass sized against the evaluation run; streams
                    // are disjoint from the scoring passes.
                    let pilot = paths.clamp(10_000, 100_000);
                    let samples = pilot_mean_samples(&model, pilot, seed)?;
                    let qs = samples
                        .iter()
                        .enumerate()
                        .map(|(t, s)| {
                            let m = rate.unwrap_or(model.rate_schedule[t]);
                            design_quantizer(s, m, kind)
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    let levels = qs
                        .iter()
                        .map(|q| q.levels().to_string())
                        .collect::<Vec<_>>()
                        .join("/");
                    (Some(qs), levels)
                }
            };
            let report = simulate_separation(&model, quantizers.as_deref(), paths, seed)?;
            println!(
                "seed={} paths={} levels={} total={} filter_term={} quantize_term={} residual={}",
                report.seed,
                report.n_paths,
                levels,
                sig12(report.total_distortion),
                sig12(report.filter_term),
                sig12(report.quantize_term),
                sig12(report.residual)
            );
            if let Some(path) = &out_csv {
                write_csv(
                    path,
                    &[
                        "seed",
                        "paths",
                        "levels",
                        "total",
                        "filter_term",
                        "quantize_term",
                        "residual",
                    ],
                    &[vec![
                        report.seed.to_string(),
                        report.n_paths.to_string(),
                        levels,
                        sig12(report.total_distortion),
                        sig12(report.filter_term),
                        sig12(report.quantize_term),
                        sig12(report.residual),
                    ]],
                )?;
            }
            Ok(())
        }
        Command::VerifySuite {
            suite,
            count,
            seed,
            horizon,
            budget,
            tol,
            out_csv,
        } => run_suite(suite, count, seed, horizon, budget, tol, &out_csv),
        Command::Tree {
            model,
            horizon,
            tol,
            out_json,
        } => {
            let model = load_finite(&model)?;
            let depth = horizon.unwrap_or(model.horizon);
            let tree = build_belief_tree(&model, depth, tol)?;
            // Meta-belief trace under no conditioning: the per-stage law of
            // the belief process.
            let mut table = BeliefTable::new(tol);
            let mut xi = xi_init(&model, &mut table)?;
            let mut trace: Vec<MetaBelief> = vec![xi.clone()];
            for _ in 1..depth {
                xi = xi_predict(&model, &xi, &mut table);
                trace.push(xi.clone());
            }
            let value = serde_json::json!({
                "tree": tree,
                "meta_trace": trace,
                "meta_beliefs": table.beliefs(),
            });
            match &out_json {
                Some(path) => write_json(path, &value)?,
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&value).expect("tree json")
                ),
            }
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_suite(
    suite: SuiteArg,
    count: usize,
    seed: u64,
    horizon: usize,
    budget: u64,
    tol: f64,
    out_csv: &Option<PathBuf>,
) -> Result<(), Error> {
    let opts = SearchOptions { budget, tol };
    let seeds = derive_seeds(seed, count);
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut skipped = 0usize;
    let mut max_gap = 0.0f64;
    match suite {
        SuiteArg::Single => {
            for (idx, &inst_seed) in seeds.iter().enumerate() {
                let model = random_single_model(
                    inst_seed,
                    SingleSpec {
                        num_states: 2,
                        num_obs: 2,
                        num_messages: 2,
                        num_decisions: 2,
                        horizon,
                    },
                );
                let full = enumerate_full(&model, &opts);
                let wits = enumerate_witsenhausen(&model, &opts);
                let wv = enumerate_wv(&model, &opts);
                let dp = dp_solve(
                    &model,
                    &DpOptions {
                        max_evaluations: budget,
                        tol,
                    },
                );
                match (full, wits, wv, dp) {
                    (Ok(full), Ok(wits), Ok(wv), Ok(dp)) => {
                        let gaps = [
                            wits.optimal_cost - full.optimal_cost,
                            wv.optimal_cost - full.optimal_cost,
                            dp.optimal_cost - full.optimal_cost,
                        ];
                        for g in gaps {
                            max_gap = max_gap.max(g.abs());
                        }
                        rows.push(vec![
                            idx.to_string(),
                            inst_seed.to_string(),
                            sig12(full.optimal_cost),
                            sig12(wits.optimal_cost),
                            sig12(wv.optimal_cost),
                            sig12(dp.optimal_cost),
                            dec12(gaps[0]),
                            dec12(gaps[1]),
                            dec12(gaps[2]),
                            "ok".into(),
                        ]);
                    }
                    _ => {
                        skipped += 1;
                        rows.push(vec![
                            idx.to_string(),
                            inst_seed.to_string(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            "skipped".into(),
                        ]);
                    }
                }
            }
            if let Some(path) = out_csv {
                write_csv(
                    path,
                    &[
                        "instance",
                        "seed",
                        "cost_full",
                        "cost_wits",
                        "cost_wv",
                        "cost_dp",
                        "gap_wits",
                        "gap_wv",
                        "gap_dp",
                        "status",
                    ],
                    &rows,
                )?;
            }
        }
        SuiteArg::Team => {
            for (idx, &inst_seed) in seeds.iter().enumerate() {
                // Encoder 2 stays silent at t = 0, which keeps the
                // one-step-delayed-sharing class within budget.
                let mut rate2 = vec![2; horizon];
                rate2[0] = 1;
                let spec = TeamSpec {
                    num_states: 2,
                    num_obs: 2,
                    num_decisions: 2,
                    rate_schedule: vec![vec![2; horizon], rate2],
                };
                let model = random_iid_team_model(inst_seed, &spec);
                let nsm = enumerate_team(&model, TeamClass::Memoryless, &opts);
                let full = enumerate_team(&model, TeamClass::Full, &opts);
                match (nsm, full) {
                    (Ok(nsm), Ok(full)) => {
                        let gap = nsm.optimal_cost - full.optimal_cost;
                        max_gap = max_gap.max(gap.abs());
                        rows.push(vec![
                            idx.to_string(),
                            inst_seed.to_string(),
                            sig12(nsm.optimal_cost),
                            sig12(full.optimal_cost),
                            dec12(gap),
                            "ok".into(),
                        ]);
                    }
                    _ => {
                        skipped += 1;
                        rows.push(vec![
                            idx.to_string(),
                            inst_seed.to_string(),
                            String::new(),
                            String::new(),
                            String::new(),
                            "skipped".into(),
                        ]);
                    }
                }
            }
            if let Some(path) = out_csv {
                write_csv(
                    path,
                    &["instance", "seed", "cost_nsm", "cost_full", "gap", "status"],
                    &rows,
                )?;
            }
        }
    }
    println!(
        "instances={} skipped={} max_gap={}",
        rows.len(),
        skipped,
        dec12(max_gap)
    );
    std::io::stdout().flush().ok();
    Ok(())
}
