//! Command-line entry points: training, evaluation, the estimator bias
//! bench, coverage-time sweeps, and the ablation suite.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cordex::config::{build_id, AblationMode, RunConfig};
use cordex::coverage::{coverage_sweep, write_coverage_csv};
use cordex::envs::EnvName;
use cordex::influence::{bias_bench, final_bias_ordering, BiasBenchConfig, EstimatorKind};
use cordex::harness::{evaluate, run_ablation_suite, train};

#[derive(Parser)]
#[command(name = "cordex", version, about = "Influence-regularized multi-agent RL benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics.csv plus checkpoint.json.
    Train(TrainArgs),
    /// Evaluate a checkpoint with deterministic rollouts.
    Eval {
        /// Path to a checkpoint.json produced by train.
        #[arg(long)]
        ckpt: PathBuf,
        /// Evaluation episodes.
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Log both influence estimators against the Monte-Carlo oracle while
    /// training on cooperative navigation.
    BiasBench {
        /// JSON run config; defaults to the desk cooperative-navigation setup.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        runs: usize,
        /// Episodes between measurements.
        #[arg(long, default_value_t = 500)]
        cadence: usize,
        /// Behavior episodes per oracle measurement.
        #[arg(long, default_value_t = 48)]
        oracle_episodes: usize,
        #[arg(long, default_value = "bias.csv")]
        out: PathBuf,
    },
    /// Simulate joint-action coverage times against the analytic expectation.
    Coverage {
        /// Team sizes, either one value ("3") or an inclusive range ("2..8").
        #[arg(long)]
        n: String,
        /// Actions per agent.
        #[arg(long, default_value_t = 2)]
        l: u32,
        #[arg(long, default_value_t = 20000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "coverage.csv")]
        out: PathBuf,
    },
    /// Run {full, no_f, no_im, symmetric} over paired seeds.
    Ablate {
        /// JSON run config; defaults to the desk profile of --env.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "push_box")]
        env: String,
        /// Number of paired seeds (0..seeds).
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "ablation_out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run config; defaults come from --env and --profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// push_box, secret_room, or coop_nav (used when no config file given).
    #[arg(long, default_value = "push_box")]
    env: String,
    /// Hyperparameter profile when no config file is given: desk or paper.
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    seed: Option<u64>,
    /// full, no_f, no_im, or symmetric.
    #[arg(long)]
    ablation: Option<String>,
    /// single or multi.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long, default_value = "run_out")]
    out: PathBuf,
    /// Print the fully resolved config as JSON and exit.
    #[arg(long, default_value_t = false)]
    print_config: bool,
}

fn resolve_config(
    config: &Option<PathBuf>,
    env: &str,
    profile: &str,
) -> cordex::Result<RunConfig> {
    match config {
        Some(path) => RunConfig::from_json(&std::fs::read_to_string(path)?),
        None => {
            let env: EnvName = env.parse()?;
            match profile {
                "desk" => Ok(RunConfig::desk(env)),
                "paper" => Ok(RunConfig::defaults_for(env)),
                other => Err(cordex::Error::Config(format!(
                    "unknown profile {other:?}; expected desk or paper"
                ))),
            }
        }
    }
}

fn parse_range(spec: &str) -> cordex::Result<Vec<u32>> {
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u32 = lo
            .parse()
            .map_err(|_| cordex::Error::Config(format!("bad range start {lo:?}")))?;
        let hi: u32 = hi
            .trim_start_matches('=')
            .parse()
            .map_err(|_| cordex::Error::Config(format!("bad range end {hi:?}")))?;
        if lo > hi {
            return Err(cordex::Error::Config(format!("empty range {spec:?}")));
        }
        Ok((lo..=hi).collect())
    } else {
        let v: u32 = spec
            .parse()
            .map_err(|_| cordex::Error::Config(format!("bad team size {spec:?}")))?;
        Ok(vec![v])
    }
}

fn run() -> cordex::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let mut config = resolve_config(&args.config, &args.env, &args.profile)?;
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(ablation) = &args.ablation {
                config.ablation = ablation.parse::<AblationMode>()?;
            }
            if let Some(estimator) = &args.estimator {
                config.estimator = estimator.parse::<EstimatorKind>()?;
            }
            config.validate()?;
            if args.print_config {
                println!("{}", config.to_json_pretty());
                return Ok(());
            }
            eprintln!(
                "training {} ({} episodes, ablation {}, estimator {:?})",
                config.env, config.episodes, config.ablation, config.estimator
            );
            let outcome = train(&config, &args.out)?;
            let last = outcome.rows.last();
            println!(
                "done: {} evaluation points, final team return {}, success rate {}, training wins {}",
                outcome.rows.len(),
                last.map_or(f64::NAN, |r| r.team_return),
                last.map_or(f64::NAN, |r| r.success_rate),
                outcome.train_wins,
            );
            println!("metrics: {}", outcome.metrics_path.display());
            println!("checkpoint: {}", outcome.checkpoint_path.display());
            Ok(())
        }
        Command::Eval {
            ckpt,
            episodes,
            seed,
        } => {
            let row = evaluate(&ckpt, episodes, seed)?;
            println!(
                "episodes trained: {} | team return {} | success rate {} | avg distance {} | collisions {}",
                row.episode, row.team_return, row.success_rate, row.avg_distance, row.collisions
            );
            Ok(())
        }
        Command::BiasBench {
            config,
            runs,
            cadence,
            oracle_episodes,
            out,
        } => {
            let mut bench = BiasBenchConfig::desk();
            if let Some(path) = config {
                bench.base = RunConfig::from_json(&std::fs::read_to_string(path)?)?;
            }
            bench.runs = runs;
            bench.cadence = cadence;
            bench.oracle_episodes = oracle_episodes;
            let rows = bias_bench(&bench, Some(&out))?;
            let (wins, total) = final_bias_ordering(&rows);
            println!(
                "bias bench: multi estimator at least as close to the oracle on {wins}/{total} runs"
            );
            println!("rows: {} -> {}", rows.len(), out.display());
            Ok(())
        }
        Command::Coverage {
            n,
            l,
            trials,
            seed,
            out,
        } => {
            let sizes = parse_range(&n)?;
            let results = coverage_sweep(sizes.iter().copied(), l, trials, seed)?;
            let mut file = std::fs::File::create(&out)?;
            use std::io::Write;
            writeln!(file, "# cordex coverage v1")?;
            writeln!(file, "# build: {}", build_id())?;
            writeln!(
                file,
                "# config: {{\"n\":{sizes:?},\"L\":{l},\"trials\":{trials},\"seed\":{seed}}}"
            )?;
            write_coverage_csv(&results, &mut file)?;
            for r in &results {
                println!(
                    "n={} L={} M={}: empirical {} +/- {} vs analytic {}",
                    r.n, r.l, r.configurations, r.empirical_mean, r.empirical_std,
                    r.analytic_expectation
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Ablate {
            config,
            env,
            seeds,
            out,
        } => {
            let base = resolve_config(&config, &env, "desk")?;
            let seed_list: Vec<u64> = (0..seeds).collect();
            let rows = run_ablation_suite(&base, &seed_list, &out)?;
            for row in &rows {
                println!(
                    "{} seed {}: final return {} success {}",
                    row.mode, row.seed, row.final_team_return, row.final_success_rate
                );
            }
            println!("wrote {}", out.join("ablation.csv").display());
            Ok(())
        }
    }
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
