//! `privest`: privacy-aware estimation experiments from a TOML configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use privest::config::Config;
use privest::experiment::{self, Setup};
use privest::finite::{dp_solve, DpConfig, FiniteSystem};
use privest::loss::Distortion;
use privest::model::{rollout, TrajectoryBatch};
use privest::policy::PolicyParams;
use privest::trainer::{evaluate_empirical, evaluate_exact, train};
use privest::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "privest", version, about = "Privacy-aware state estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Privacy weight; overrides `train.lambda`.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Noise std for a single additive-noise point.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Number of rollouts.
    #[arg(long, global = true)]
    rollouts: Option<usize>,
    /// Policy checkpoint (JSON).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample closed-loop trajectories (open loop without a checkpoint).
    Simulate,
    /// Write the finite surrogate of the configured system.
    Discretize,
    /// Solve the dynamic program on a finite system.
    DpSolve {
        /// Finite system JSON; defaults to the discretized configuration.
        #[arg(long)]
        finite: Option<PathBuf>,
        /// Final time index; defaults to the configured horizon.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Train a policy with the information-loss approximator.
    Train,
    /// Evaluate a policy checkpoint.
    Evaluate {
        #[arg(long, value_enum, default_value_t = Mode::Empirical)]
        mode: Mode,
        /// Finite system JSON for exact mode.
        #[arg(long)]
        finite: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Decode the private path from a policy's outputs (raw measurements without a checkpoint).
    Adversary,
    /// Additive-noise baseline over the configured noise grid.
    Baseline,
    /// Privacy-aware policies against the additive-noise baseline.
    Tradeoff,
    /// Adversary accuracy on raw quantized measurements.
    Motivating,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Empirical,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report(&json!({ "error": { "kind": "usage", "message": e.to_string().trim() } }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            report(&json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}

fn report(v: &serde_json::Value) {
    eprintln!("{v}");
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Ctx {
    common: Common,
    written: Vec<String>,
}

impl Ctx {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.common.out.join(name);
        write_atomic(&path, contents)?;
        self.written.push(path.display().to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, v: &serde_json::Value) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(v)? + "\n"))
    }

    fn config(&self) -> Result<Config> {
        let path = self.common.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
        let mut cfg = Config::load(path)?;
        if let Some(s) = self.common.seed {
            cfg.seed = s;
        }
        if let Some(l) = self.common.lambda {
            cfg.train.lambda = l;
            cfg.validate()?;
        }
        Ok(cfg)
    }

    fn setup(&self) -> Result<Setup> {
        Setup::new(self.config()?)
    }

    fn policy(&self) -> Result<Option<PolicyParams>> {
        self.common
            .checkpoint
            .as_ref()
            .map(|p| PolicyParams::from_json_str(&read(p)?))
            .transpose()
    }

    fn rollouts(&self, default: usize) -> Result<usize> {
        match self.common.rollouts.unwrap_or(default) {
            0 => Err(Error::Config("--rollouts must be >= 1".into())),
            n => Ok(n),
        }
    }
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))
}

fn lambda_tag(l: f64) -> String {
    format!("{l}").replace('.', "p")
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let mut ctx = Ctx { common: cli.common, written: vec![] };
    let summary = match cli.command {
        Command::Simulate => simulate(&mut ctx)?,
        Command::Discretize => {
            let setup = ctx.setup()?;
            let disc = setup.cfg.discretize()?;
            ctx.write("finite_system.json", &(disc.system.to_json() + "\n"))?;
            json!({ "nx": disc.system.nx, "ny": disc.system.ny, "nz": disc.system.nz, "boundary_leaks": disc.boundary_leaks.len() })
        }
        Command::DpSolve { finite, horizon } => dp(&mut ctx, finite, horizon)?,
        Command::Train => train_cmd(&mut ctx)?,
        Command::Evaluate { mode, finite, horizon } => evaluate(&mut ctx, mode, finite, horizon)?,
        Command::Adversary => adversary(&mut ctx)?,
        Command::Baseline => baseline(&mut ctx)?,
        Command::Tradeoff => tradeoff(&mut ctx)?,
        Command::Motivating => {
            let setup = ctx.setup()?;
            let n = ctx.rollouts(setup.cfg.tradeoff.eval_rollouts)?;
            let (acc, traces) = experiment::motivating(&setup, n, setup.cfg.seed)?;
            let doc = json!({ "observations": "quantized measurements", "accuracy": acc });
            ctx.write_json("motivating.json", &doc)?;
            ctx.write("motivating_trajectory.csv", &traces[0].to_csv(setup.labels()))?;
            doc
        }
    };
    Ok(json!({ "result": summary, "written": ctx.written }))
}

fn simulate(ctx: &mut Ctx) -> Result<serde_json::Value> {
    let setup = ctx.setup()?;
    let n = ctx.rollouts(10)?;
    let seed = privest::rng::domain_seed(setup.cfg.seed, "simulate", 0);
    let batch: TrajectoryBatch = match ctx.policy()? {
        Some(p) => rollout(&setup.model, &p, setup.horizon(), seed, n)?,
        None => privest::baseline::open_loop_rollouts(&setup.model, setup.horizon(), n, seed)?,
    };
    ctx.write("trajectories.csv", &batch.to_csv(setup.labels(), &setup.model.tessellation))?;
    Ok(json!({ "rollouts": n, "T": setup.horizon() }))
}

/// Finite system, loss table and horizon for the exact oracles.
fn finite_problem(
    ctx: &Ctx,
    finite: Option<PathBuf>,
    horizon: Option<usize>,
) -> Result<(FiniteSystem, Vec<Vec<f64>>, usize, f64)> {
    let lambda_flag = ctx.common.lambda;
    match finite {
        Some(p) => {
            let fs = FiniteSystem::from_json_str(&read(&p)?)?;
            let cfg = ctx.common.config.as_ref().map(|_| ctx.config()).transpose()?;
            let kind = cfg.as_ref().map(|c| c.train.loss).unwrap_or_default();
            let table = Distortion::from_centers(kind, fs.centers.clone()).table(&fs.centers);
            let h = horizon.or(cfg.as_ref().map(|c| c.horizon.t)).ok_or_else(|| Error::Config("--horizon is required".into()))?;
            let lambda = lambda_flag.or(cfg.as_ref().map(|c| c.train.lambda)).unwrap_or(0.0);
            Ok((fs, table, h, lambda))
        }
        None => {
            let setup = ctx.setup()?;
            let table = setup.distortion.table(&setup.fs.centers);
            let h = horizon.unwrap_or(setup.horizon());
            Ok((setup.fs, table, h, setup.cfg.train.lambda))
        }
    }
}

fn dp(ctx: &mut Ctx, finite: Option<PathBuf>, horizon: Option<usize>) -> Result<serde_json::Value> {
    let (fs, table, h, lambda) = finite_problem(ctx, finite, horizon)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let cfg = DpConfig { seed: ctx.common.seed.unwrap_or(0), ..DpConfig::default() };
    let res = dp_solve(&fs, lambda, h, &table, &cfg)?;
    let doc = serde_json::to_value(&res)?;
    ctx.write_json("dp_result.json", &doc)?;
    Ok(json!({ "value": res.value, "distortion": res.distortion, "mi": res.mi, "converged": res.converged }))
}

fn train_cmd(ctx: &mut Ctx) -> Result<serde_json::Value> {
    let setup = ctx.setup()?;
    let tc = setup.cfg.train_config();
    let policy = match ctx.policy()? {
        Some(p) => p,
        None => setup.starting_policy(setup.cfg.seed)?,
    };
    let report = train(&setup.model, &setup.distortion, setup.horizon(), policy, setup.initial_critics()?, &tc)?;
    ctx.write("policy.json", &(report.policy.to_json() + "\n"))?;
    ctx.write("critics.json", &(report.critics.to_json() + "\n"))?;
    ctx.write("train_report.json", &(report.to_json() + "\n"))?;
    ctx.write("train.csv", &report.to_csv())?;
    let last = report.records.last();
    Ok(json!({
        "iterations": report.records.len(),
        "converged": report.converged,
        "diverged": report.diverged,
        "final": last,
    }))
}

fn evaluate(ctx: &mut Ctx, mode: Mode, finite: Option<PathBuf>, horizon: Option<usize>) -> Result<serde_json::Value> {
    let policy = ctx.policy()?.ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
    let doc = match mode {
        Mode::Exact => {
            let (fs, table, h, lambda) = finite_problem(ctx, finite, horizon)?;
            let e = evaluate_exact(&fs, &policy, h, &table, lambda)?;
            json!({ "mode": "exact", "lambda": lambda, "distortion": e.distortion, "mi": e.mi, "objective": e.value })
        }
        Mode::Empirical => {
            let setup = ctx.setup()?;
            let n = ctx.rollouts(setup.cfg.tradeoff.eval_rollouts)?;
            let tc = setup.cfg.train_config();
            let e = evaluate_empirical(
                &setup.model,
                &policy,
                &setup.distortion,
                setup.horizon(),
                n,
                setup.initial_critics()?,
                &tc.fit_config(),
                tc.lambda,
                setup.cfg.seed,
            )?;
            let (pe, _) = experiment::evaluate_policy(&setup, &policy, n, setup.cfg.seed)?;
            json!({
                "mode": "empirical",
                "lambda": tc.lambda,
                "rollouts": n,
                "distortion": e.distortion,
                "distortion_se": e.distortion_se,
                "f1": e.f1,
                "f2": e.f2,
                "mi": e.mi,
                "objective": e.objective,
                "accuracy": pe.accuracy,
            })
        }
    };
    ctx.write_json("evaluation.json", &doc)?;
    Ok(doc)
}

fn adversary(ctx: &mut Ctx) -> Result<serde_json::Value> {
    let setup = ctx.setup()?;
    let n = ctx.rollouts(setup.cfg.tradeoff.eval_rollouts)?;
    let (acc, trace, observations) = match ctx.policy()? {
        Some(p) => {
            let (e, traces) = experiment::evaluate_policy(&setup, &p, n, setup.cfg.seed)?;
            (e.accuracy, traces.into_iter().next(), "policy outputs")
        }
        None => {
            let (acc, traces) = experiment::motivating(&setup, n, setup.cfg.seed)?;
            (acc, traces.into_iter().next(), "quantized measurements")
        }
    };
    let trace = trace.expect("at least one rollout");
    ctx.write("adversary_trajectory.csv", &privest::adversary::trajectory_csv(setup.labels(), &trace.y, &trace.yhat)?)?;
    let doc = json!({
        "observations": observations,
        "accuracy_definition": "per time step, averaged over rollouts",
        "accuracy_mean": acc.accuracy_mean,
        "accuracy_std": acc.accuracy_std,
        "rollouts": acc.rollouts,
        "misdetections_mean": acc.misdetections_mean,
    });
    ctx.write_json("adversary.json", &doc)?;
    Ok(doc)
}

fn baseline(ctx: &mut Ctx) -> Result<serde_json::Value> {
    let setup = ctx.setup()?;
    let n = ctx.rollouts(setup.cfg.tradeoff.eval_rollouts)?;
    let sigmas = match ctx.common.sigma {
        Some(s) => vec![s],
        None => setup.cfg.tradeoff.sigmas.clone(),
    };
    let (_, pts) = experiment::baseline(&setup, &sigmas, n, setup.cfg.seed)?;
    let mut csv = String::from("method,param,distortion,accuracy\n");
    for p in &pts {
        csv += &format!("additive,{},{},{}\n", p.sigma, p.distortion, p.accuracy.accuracy_mean);
    }
    ctx.write("baseline.csv", &csv)?;
    let doc = json!({ "points": pts });
    ctx.write_json("baseline.json", &doc)?;
    Ok(json!({ "points": pts.len() }))
}

fn tradeoff(ctx: &mut Ctx) -> Result<serde_json::Value> {
    let setup = ctx.setup()?;
    let seed = setup.cfg.seed;
    let res = experiment::tradeoff(&setup, seed, |m| log::info!("{m}"))?;
    ctx.write("tradeoff.csv", &experiment::tradeoff_csv(&res.rows))?;
    let labels = setup.labels().to_vec();
    for p in &res.policies {
        let tag = lambda_tag(p.lambda);
        ctx.write(&format!("policy_lambda_{tag}.json"), &(p.report.policy.to_json() + "\n"))?;
        ctx.write(&format!("train_lambda_{tag}.csv"), &p.report.to_csv())?;
        for (k, t) in p.traces.iter().enumerate() {
            ctx.write(&format!("trace_privacy_lambda_{tag}_{k}.csv"), &t.to_csv(&labels))?;
        }
    }
    for (k, t) in res.raw_traces.iter().enumerate() {
        ctx.write(&format!("trace_raw_{k}.csv"), &t.to_csv(&labels))?;
    }
    for (k, t) in res.mmse_traces.iter().enumerate() {
        ctx.write(&format!("trace_mmse_{k}.csv"), &t.to_csv(&labels))?;
    }
    let pairs = experiment::matched_pairs(&res.rows, 0.03);
    let doc = json!({
        "accuracy_definition": "per time step, averaged over rollouts",
        "raw_measurements": res.raw,
        "rows": res.rows,
        "policies": res.policies.iter().map(|p| json!({
            "lambda": p.lambda,
            "iterations": p.report.records.len(),
            "converged": p.report.converged,
            "diverged": p.report.diverged,
            "evaluation": p.eval,
        })).collect::<Vec<_>>(),
        "matched": pairs.iter().map(|(p, a)| json!({
            "lambda": p.param,
            "sigma": a.param,
            "privacy_distortion": p.distortion,
            "additive_distortion": a.distortion,
            "privacy_accuracy": p.accuracy,
            "additive_accuracy": a.accuracy,
        })).collect::<Vec<_>>(),
    });
    ctx.write_json("tradeoff.json", &doc)?;
    Ok(json!({ "rows": res.rows.len(), "matched": pairs.len() }))
}
