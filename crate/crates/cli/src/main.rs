use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use crowdnav::config::{Profile, RunConfig};
use crowdnav::dynamics::{generate_scenario, save_trace_csv};
use crowdnav::episode::RobotController;
use crowdnav::eval::{
    danger_histogram, evaluate, evaluate_value_policy, histogram_svg, play, trajectory_svg,
    write_metrics_csv, Evaluation, ScenarioSet, SvgOptions,
};
use crowdnav::orca::{demonstrate_episode, OrcaController};
use crowdnav::parallel::WorkerPool;
use crowdnav::planner::ValuePolicy;
use crowdnav::training::{self, bench, collect_demonstrations, eval_context, TrainEvent};
use crowdnav::valuenet::{load_checkpoint, ValueNetwork};
use crowdnav::Error;

/// Entity-aware crowd navigation: demonstrations, training, evaluation.
#[derive(Parser)]
#[command(name = "crowdnav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run config (TOML); overrides --profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile used when no config file is given.
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Collect ORCA demonstrations and write their traces.
    Demo {
        #[command(flatten)]
        common: Common,
        /// Number of demonstrations; defaults to the config's IL episode count.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Imitation learning followed by parallel deep V-learning.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint (or the ORCA robot) on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate the ORCA robot instead of a checkpoint.
        #[arg(long)]
        orca: bool,
        /// Test episodes; defaults to the config's test size.
        #[arg(long)]
        episodes: Option<usize>,
        /// Fail with exit code 3 when a threshold is missed.
        #[arg(long)]
        assert: bool,
        #[arg(long)]
        min_sr: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        min_score: Option<f64>,
    },
    /// Play one test scenario and render it as SVG plus a trace CSV.
    Render {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to drive the robot; ORCA when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Index into the test split.
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Rollout throughput with a fixed network.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 32)]
        episodes: u64,
    },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Threshold(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let config = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<Error>(),
                Some(Error::InvalidConfig(_) | Error::InvalidParameter(_) | Error::Checkpoint { .. })
            )
        });
        if config {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        // an unreadable config file is a config problem, not a runtime one
        Some(path) => RunConfig::load(path).map_err(|e| {
            Failure::Config(anyhow::Error::new(e).context(format!("loading {}", path.display())))
        })?,
        None => RunConfig::profile(common.profile.parse::<Profile>()?),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.training.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn mkdir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_network(path: &Path, cfg: &RunConfig) -> Result<ValueNetwork, Failure> {
    let ck = load_checkpoint(path)?;
    ck.ensure_compatible(cfg.network.include_entity_type, Some(cfg.reward.hash()))
        .map_err(|e| Failure::Config(anyhow::Error::from(e).context(path.display().to_string())))?;
    Ok(ck.network)
}

fn write_evaluation(dir: &Path, ev: &Evaluation, cfg: &RunConfig) -> anyhow::Result<()> {
    mkdir(dir)?;
    let hash = cfg.hash_hex();
    write_metrics_csv(&ev.metrics, Some(&hash), create(&dir.join("metrics.csv"))?)?;
    let mut w = csv_writer(&dir.join("episodes.csv"))?;
    writeln(&mut w, "seed,outcome,time,steps,discounted_reward,danger_time")?;
    for e in &ev.episodes {
        writeln(
            &mut w,
            &format!(
                "{},{:?},{},{},{},{}",
                e.seed, e.outcome, e.time, e.steps, e.discounted_reward, e.danger_time
            ),
        )?;
    }
    let samples = ev.danger_samples();
    std::fs::write(dir.join("danger_histogram.svg"), histogram_svg(&samples))?;
    let mut w = csv_writer(&dir.join("danger_histogram.csv"))?;
    writeln(&mut w, "entity_type,bin_start,density")?;
    for (kind, h) in danger_histogram(&samples).iter() {
        if let Some(h) = h {
            for (i, d) in h.densities.iter().enumerate() {
                writeln(&mut w, &format!("{kind},{},{d}", i as f64 * h.bin_width))?;
            }
        }
    }
    Ok(())
}

fn csv_writer(path: &Path) -> anyhow::Result<BufWriter<File>> {
    create(path)
}

fn writeln(w: &mut impl std::io::Write, line: &str) -> anyhow::Result<()> {
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

fn print_metrics(label: &str, ev: &Evaluation) {
    let m = &ev.metrics;
    println!(
        "{label}: episodes={} SR={:.3} CR={:.3} (A {:.3} B {:.3} C {:.3} O {:.3}) time={} score={:.4} reward={:.4}",
        m.episodes,
        m.sr,
        m.cr,
        m.cr_by_type.adult,
        m.cr_by_type.bicycle,
        m.cr_by_type.child,
        m.cr_by_type.obstacle,
        m.time.map_or("NaN".to_string(), |t| format!("{t:.2}")),
        m.weighted_score(),
        m.reward
    );
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Demo { common, episodes } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = episodes {
                cfg.training.il_episodes = n;
            }
            let pool = WorkerPool::new(cfg.training.workers);
            let demos = collect_demonstrations(&cfg, &pool)?;
            let dir = common.out.join("demos");
            mkdir(&dir)?;
            let mut w = csv_writer(&dir.join("summary.csv"))?;
            writeln(&mut w, "episode,outcome,steps,time,discounted_return")?;
            for (i, d) in demos.iter().enumerate() {
                save_trace_csv(&d.frames, &dir.join(format!("trace_{i:05}.csv")))?;
                writeln(
                    &mut w,
                    &format!(
                        "{i},{:?},{},{},{}",
                        d.outcome,
                        d.len(),
                        d.duration(),
                        d.discounted_reward(cfg.training.gamma)
                    ),
                )?;
            }
            let ok = demos.iter().filter(|d| d.outcome == crowdnav::dynamics::EpisodeStatus::ReachedGoal).count();
            println!("{} demonstrations, {ok} reached the goal; written to {}", demos.len(), dir.display());
        }
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            mkdir(&common.out)?;
            cfg.save(&common.out.join("config.toml"))?;
            let mut progress = |ev: TrainEvent<'_>| match ev {
                TrainEvent::Demonstrations { episodes, pairs } => {
                    println!("demonstrations: {episodes} episodes, {pairs} pairs")
                }
                TrainEvent::ImitationEpoch { epoch, loss } => println!("il epoch {epoch:3} loss {loss:.6}"),
                TrainEvent::Episode(row) => {
                    if (row.episode + 1) % 50 == 0 {
                        println!(
                            "episode {:6} eps {:.3} loss {:.6} {:?} steps {}",
                            row.episode + 1,
                            row.epsilon,
                            row.loss,
                            row.outcome,
                            row.steps
                        );
                    }
                }
                TrainEvent::Validation { episode, metrics } => println!(
                    "validation @ {episode}: SR {:.3} CR {:.3} reward {:.4} score {:.4}",
                    metrics.sr,
                    metrics.cr,
                    metrics.reward,
                    metrics.weighted_score()
                ),
            };
            let outcome = training::train(&cfg, Some(&common.out), &mut progress)?;
            println!("best validation checkpoint: episode {}", outcome.best_episode);
            let pool = WorkerPool::new(cfg.training.workers);
            let test = ScenarioSet::test(&cfg.scenario, cfg.seed, cfg.eval.test_size);
            let ctx = eval_context(&cfg);
            for (name, net) in [("il", &outcome.il_network), ("best", &outcome.best_network)] {
                let ev = evaluate_value_policy(net, &test, &ctx, &pool)?;
                print_metrics(&format!("test {name}"), &ev);
                write_evaluation(&common.out.join(format!("test_{name}")), &ev, &cfg)?;
            }
        }
        Command::Evaluate {
            common,
            checkpoint,
            orca,
            episodes,
            assert,
            min_sr,
            min_score,
        } => {
            let cfg = load_config(&common)?;
            let pool = WorkerPool::new(cfg.training.workers);
            let test = ScenarioSet::test(&cfg.scenario, cfg.seed, episodes.unwrap_or(cfg.eval.test_size));
            let ctx = eval_context(&cfg);
            let ev = match (checkpoint, orca) {
                (Some(path), false) => {
                    let net = load_network(&path, &cfg)?;
                    evaluate_value_policy(&net, &test, &ctx, &pool)?
                }
                (None, true) => {
                    let make = |_| -> Box<dyn RobotController> { Box::new(OrcaController { params: cfg.orca }) };
                    evaluate(&make, &test, &ctx, &pool)?
                }
                _ => {
                    return Err(Failure::Config(anyhow::anyhow!(
                        "pass exactly one of --checkpoint PATH or --orca"
                    )))
                }
            };
            print_metrics("test", &ev);
            write_evaluation(&common.out, &ev, &cfg)?;
            if assert {
                let m = &ev.metrics;
                let mut missed = Vec::new();
                if let Some(t) = min_sr.filter(|&t| m.sr < t) {
                    missed.push(format!("SR {:.4} < {t}", m.sr));
                }
                if let Some(t) = min_score.filter(|&t| m.weighted_score() < t) {
                    missed.push(format!("weighted score {:.4} < {t}", m.weighted_score()));
                }
                if !missed.is_empty() {
                    return Err(Failure::Threshold(missed.join("; ")));
                }
            }
        }
        Command::Render {
            common,
            checkpoint,
            index,
        } => {
            let cfg = load_config(&common)?;
            let seed = ScenarioSet::test(&cfg.scenario, cfg.seed, index as usize + 1).seeds[index as usize];
            let ctx = eval_context(&cfg);
            let record = match checkpoint {
                Some(path) => {
                    let net = load_network(&path, &cfg)?;
                    let make = |_| -> Box<dyn RobotController + '_> {
                        Box::new(ValuePolicy::greedy(&net, &cfg.reward, cfg.training.gamma))
                    };
                    play(&make, &cfg.scenario, seed, &ctx)?
                }
                None => demonstrate_episode(generate_scenario(&cfg.scenario, seed)?, &cfg.orca, &cfg.reward),
            };
            mkdir(&common.out)?;
            let svg = common.out.join(format!("episode_{index:04}.svg"));
            std::fs::write(&svg, trajectory_svg(&record.frames, &SvgOptions::default()))
                .with_context(|| format!("writing {}", svg.display()))?;
            save_trace_csv(&record.frames, &common.out.join(format!("episode_{index:04}.csv")))?;
            println!("{:?} after {:.2} s; wrote {}", record.outcome, record.duration(), svg.display());
        }
        Command::Bench { common, episodes } => {
            let cfg = load_config(&common)?;
            let report = bench(&cfg, cfg.training.workers, episodes)?;
            println!(
                "workers={} episodes={} seconds={:.3} episodes_per_second={:.3} digest={:016x}",
                report.workers, report.episodes, report.seconds, report.episodes_per_second, report.digest
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Threshold(msg)) => {
            eprintln!("threshold not met: {msg}");
            ExitCode::from(3)
        }
    }
}
