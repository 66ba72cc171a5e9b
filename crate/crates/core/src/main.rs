//! Command-line front end: policy training, the two experiment drivers, the
//! projection sweep, and dump-based detector fit/score workflows.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use statewatch::error::{Error, Result};
use statewatch::harness::{
    fit_from_trajectories, run_eval_experiment, run_train_experiment, score_trajectories,
    sensitivity_sweep, write_csv, ExperimentConfig,
};
use statewatch::outliers::OutlierSpec;
use statewatch::toyrl::{
    dump_trajectories, rollout, train_policy, EnvKind, EnvSlot, SoftmaxPolicy, TrainerConfig,
};

#[derive(Parser)]
#[command(
    name = "statewatch",
    version,
    about = "Distance-based screening of RL state observations: detectors, \
             outlier generators, a toy PPO stack, and experiment drivers"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy and write a checkpoint plus a return curve.
    TrainPolicy(TrainPolicyArgs),
    /// Detection-accuracy grid over methods, outliers, alphas, lambdas.
    EvalExp(ExpArgs),
    /// Training curves with online screening per method and seed.
    TrainExp(ExpArgs),
    /// Evaluation grid repeated over projection dimensions.
    SweepK(ExpArgs),
    /// Fit a detector from a trajectory dump under a policy's features.
    Fit(FitArgs),
    /// Score a trajectory dump with a saved detector.
    Score(ScoreArgs),
}

#[derive(Args)]
struct TrainPolicyArgs {
    /// Environment: grid or chain.
    #[arg(long, default_value = "grid")]
    env: String,
    #[arg(long, default_value_t = 60)]
    iterations: usize,
    #[arg(long, default_value_t = 8)]
    n_envs: usize,
    #[arg(long, default_value_t = 128)]
    horizon: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 0.08)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Also dump one rollout set to this CSV (relative to --out-dir).
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Contaminate the first N dump slots (requires --dump-outlier).
    #[arg(long, default_value_t = 0)]
    dump_contaminated: usize,
    /// Outlier spec for the dump, e.g. random:0.1, adversarial:0.25,
    /// ood:chain.
    #[arg(long)]
    dump_outlier: Option<String>,
}

/// Flags mirroring the experiment config keys; every value is parsed by the
/// same rules as the config file, and an explicit flag beats the file.
#[derive(Args)]
struct ExpArgs {
    /// Flat key=value config file supplying any of these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<String>,
    /// Single seed (shorthand overriding --seeds).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    ood_source: Option<String>,
    /// Comma-separated detector methods (e1,e2,tmd,md,rmd).
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated screening modes (md,rmd,...,auto,random).
    #[arg(long)]
    train_methods: Option<String>,
    /// Comma-separated outlier specs (random:0.1,adversarial:0.25,ood:chain).
    #[arg(long)]
    outliers: Option<String>,
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    lambdas: Option<String>,
    /// Projection dimension or "none".
    #[arg(long)]
    k: Option<String>,
    /// Comma-separated projection dimensions, "none" allowed.
    #[arg(long)]
    k_list: Option<String>,
    #[arg(long)]
    n_fit: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    policy_path: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    n_envs: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_c: Option<usize>,
    #[arg(long)]
    window_m: Option<usize>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    #[arg(long)]
    pca_refit_period: Option<usize>,
    #[arg(long)]
    flag_threshold: Option<f64>,
    #[arg(long)]
    contaminated_envs: Option<usize>,
    #[arg(long)]
    train_outlier: Option<String>,
    #[arg(long)]
    emit_svg: Option<bool>,
}

impl ExpArgs {
    fn build_config(&self) -> Result<ExperimentConfig> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                pairs.insert(key.to_string(), v);
            }
        };
        put("out_dir", self.out_dir.clone());
        put("seeds", self.seeds.clone());
        // --seed wins over --seeds.
        put("seeds", self.seed.map(|s| s.to_string()));
        put("env", self.env.clone());
        put("ood_source", self.ood_source.clone());
        put("methods", self.methods.clone());
        put("train_methods", self.train_methods.clone());
        put("outliers", self.outliers.clone());
        put("alphas", self.alphas.clone());
        put("lambdas", self.lambdas.clone());
        put("k", self.k.clone());
        put("k_list", self.k_list.clone());
        put("n_fit", self.n_fit.map(|v| v.to_string()));
        put("n_test", self.n_test.map(|v| v.to_string()));
        put("policy_path", self.policy_path.clone());
        put("iterations", self.iterations.map(|v| v.to_string()));
        put("n_envs", self.n_envs.map(|v| v.to_string()));
        put("horizon", self.horizon.map(|v| v.to_string()));
        put("hidden", self.hidden.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("alpha", self.alpha.map(|v| v.to_string()));
        put("n_c", self.n_c.map(|v| v.to_string()));
        put("window_m", self.window_m.map(|v| v.to_string()));
        put("warmup_fraction", self.warmup_fraction.map(|v| v.to_string()));
        put("pca_refit_period", self.pca_refit_period.map(|v| v.to_string()));
        put("flag_threshold", self.flag_threshold.map(|v| v.to_string()));
        put("contaminated_envs", self.contaminated_envs.map(|v| v.to_string()));
        put("train_outlier", self.train_outlier.clone());
        put("emit_svg", self.emit_svg.map(|v| v.to_string()));
        ExperimentConfig::load(self.config.as_deref(), &pairs)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Trajectory dump CSV (from train-policy --dump).
    #[arg(long)]
    trajectories: PathBuf,
    /// Policy checkpoint supplying the feature map.
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value = "md")]
    method: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Projection dimension or "none".
    #[arg(long, default_value = "8")]
    k: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Saved detector model.
    #[arg(long)]
    model: PathBuf,
    /// Policy checkpoint supplying the feature map.
    #[arg(long)]
    policy: PathBuf,
    /// Trajectory dump CSV to score.
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    flag_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn parse_dim(value: &str) -> Result<Option<usize>> {
    if value == "none" {
        Ok(None)
    } else {
        value
            .parse()
            .map(Some)
            .map_err(|e| Error::Config(format!("bad projection dimension '{value}': {e}")))
    }
}

fn cmd_train_policy(args: &TrainPolicyArgs) -> Result<()> {
    let kind: EnvKind = args.env.parse()?;
    let cfg = TrainerConfig {
        iterations: args.iterations,
        n_envs: args.n_envs,
        horizon: args.horizon,
        hidden: args.hidden,
        lr: args.lr,
        seed: args.seed,
        ..TrainerConfig::default()
    };
    cfg.validate()?;
    let outcome = train_policy(kind, &cfg)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let policy_path = args.out_dir.join("policy.json");
    outcome.policy.save(&policy_path)?;
    let rows: Vec<Vec<String>> = outcome
        .mean_returns
        .iter()
        .enumerate()
        .map(|(i, r)| vec![i.to_string(), r.to_string()])
        .collect();
    write_csv(&args.out_dir.join("returns.csv"), &["iteration", "mean_return"], &rows)?;
    let final_return = outcome.mean_returns.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {kind} for {} iterations: final mean return {final_return:.4} \
         (optimal {:.4})",
        args.iterations,
        kind.optimal_return()
    );
    println!("wrote {}", policy_path.display());

    if let Some(dump_rel) = &args.dump {
        let spec: Option<OutlierSpec> = match &args.dump_outlier {
            Some(s) => Some(s.parse()?),
            None => None,
        };
        if args.dump_contaminated > 0 && spec.is_none() {
            return Err(Error::Config(
                "--dump-contaminated requires --dump-outlier".into(),
            ));
        }
        if args.dump_contaminated > args.n_envs {
            return Err(Error::Config(format!(
                "--dump-contaminated {} exceeds --n-envs {}",
                args.dump_contaminated, args.n_envs
            )));
        }
        let mut slots: Vec<EnvSlot> = (0..args.n_envs)
            .map(|i| EnvSlot::new(kind, args.seed.wrapping_add(1), i))
            .collect();
        let plan: Vec<Option<OutlierSpec>> = (0..args.n_envs)
            .map(|i| if i < args.dump_contaminated { spec } else { None })
            .collect();
        let trajs = rollout(&mut slots, &outcome.policy, args.horizon, &plan)?;
        let dump_path = args.out_dir.join(dump_rel);
        dump_trajectories(&dump_path, &trajs)?;
        println!("wrote {}", dump_path.display());
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let policy = SoftmaxPolicy::load(&args.policy)?;
    let method = args.method.parse()?;
    let k = parse_dim(&args.k)?;
    let model = fit_from_trajectories(
        &args.trajectories,
        &policy,
        method,
        k,
        args.alpha,
        args.seed,
    )?;
    std::fs::create_dir_all(&args.out_dir)?;
    let path = args.out_dir.join("model.json");
    model.save(&path)?;
    println!(
        "fit {method} detector (k = {}, alpha = {}, threshold = {:.4}) on {}",
        args.k,
        args.alpha,
        model.threshold(),
        args.trajectories.display()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let policy = SoftmaxPolicy::load(&args.policy)?;
    let model = statewatch::detectors::DetectorModel::load(&args.model)?;
    let (steps, verdicts) =
        score_trajectories(&args.trajectories, &policy, &model, args.flag_threshold)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let rows: Vec<Vec<String>> = steps
        .iter()
        .map(|s| {
            vec![
                s.env_index.to_string(),
                s.t.to_string(),
                s.action.to_string(),
                s.distance.to_string(),
                match s.label {
                    statewatch::detectors::Label::Outlier => "outlier".to_string(),
                    statewatch::detectors::Label::Inlier => "inlier".to_string(),
                },
            ]
        })
        .collect();
    let path = args.out_dir.join("scores.csv");
    write_csv(&path, &["env", "t", "action", "distance", "label"], &rows)?;
    for v in &verdicts {
        println!(
            "trajectory {}: {} (outlier fraction {:.3})",
            v.env_index,
            if v.flagged { "FLAGGED" } else { "clean" },
            v.outlier_fraction
        );
    }
    let flagged = verdicts.iter().filter(|v| v.flagged).count();
    println!("{flagged} of {} trajectories flagged", verdicts.len());
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::TrainPolicy(args) => cmd_train_policy(&args),
        Cmd::EvalExp(args) => {
            let cfg = args.build_config()?;
            let csv = run_eval_experiment(&cfg, &cfg.out_dir)?;
            println!("wrote {}", csv.display());
            Ok(())
        }
        Cmd::TrainExp(args) => {
            let cfg = args.build_config()?;
            let csv = run_train_experiment(&cfg, &cfg.out_dir)?;
            println!("wrote {}", csv.display());
            Ok(())
        }
        Cmd::SweepK(args) => {
            let cfg = args.build_config()?;
            let csv = sensitivity_sweep(&cfg, &cfg.out_dir)?;
            println!("wrote {}", csv.display());
            Ok(())
        }
        Cmd::Fit(args) => cmd_fit(&args),
        Cmd::Score(args) => cmd_score(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are success; usage mistakes are config
            // errors (exit 1).
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
