//! Command line for running experiments, policy sweeps, and theory checks.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use mavfl::config::ExperimentConfig;
use mavfl::error::Error;
use mavfl::harness::{emit_plot_data, run_experiment, RunSummary, Simulation};
use mavfl::selection::Policy;
use mavfl::task::TaskKind;
use mavfl::theory;

#[derive(Parser)]
#[command(name = "mavfl", about = "Vehicular federated learning simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Selection policy: ducb, cbs, rbs, random.
    #[arg(long)]
    policy: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Vehicle speed class in km/h.
    #[arg(long)]
    velocity_kmh: Option<f64>,
    /// Number of training rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Vehicles selected per round.
    #[arg(long)]
    k0: Option<usize>,
    /// Task kind: quadratic, logistic, tiny_mlp.
    #[arg(long)]
    task: Option<String>,
    /// Output directory for metrics.csv, summary.json, and friends.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), Error> {
        if let Some(p) = &self.policy {
            Policy::from_str(p)?;
            cfg.selection.policy = p.clone();
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(v) = self.velocity_kmh {
            cfg.mobility.velocity_kmh = v;
        }
        if let Some(r) = self.rounds {
            cfg.run.rounds = r;
        }
        if let Some(k) = self.k0 {
            cfg.selection.k0 = k;
        }
        if let Some(t) = &self.task {
            TaskKind::from_str(t)?;
            cfg.task.kind = t.clone();
        }
        if let Some(out) = &self.out {
            cfg.run.out_dir = Some(out.clone());
        }
        cfg.validate()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a (policy x seed) sweep and write combined curves.csv.
    Sweep {
        config: PathBuf,
        /// Number of seeds (master_seed, master_seed+1, ...).
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Comma-separated policies to compare.
        #[arg(long, default_value = "ducb,cbs,rbs,random")]
        policies: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the instrumented theory checks and write theory.json.
    Theory {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> Result<(), Error> {
    match Cli::parse().command {
        Command::Run { config, overrides } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            overrides.apply(&mut cfg)?;
            let summary = run_experiment(&cfg)?;
            print_summary(&summary);
            Ok(())
        }
        Command::Sweep {
            config,
            seeds,
            policies,
            overrides,
        } => {
            let mut base = ExperimentConfig::from_path(&config)?;
            overrides.apply(&mut base)?;
            let policies: Vec<String> = policies
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            for p in &policies {
                Policy::from_str(p)?;
            }
            let out_root = base.run.out_dir.clone();
            let mut summaries = Vec::new();
            for policy in &policies {
                for seed_offset in 0..seeds {
                    let mut cfg = base.clone();
                    cfg.selection.policy = policy.clone();
                    cfg.master_seed = base.master_seed + seed_offset;
                    cfg.run.out_dir = out_root
                        .as_ref()
                        .map(|root| root.join(format!("{policy}_seed{}", cfg.master_seed)));
                    let summary = run_experiment(&cfg)?;
                    print_summary(&summary);
                    summaries.push(summary);
                }
            }
            if let Some(root) = out_root {
                std::fs::create_dir_all(&root)
                    .map_err(|e| Error::io(root.display().to_string(), e))?;
                let path = root.join("curves.csv");
                emit_plot_data(&summaries, &path)?;
                println!("curves written to {}", path.display());
            }
            Ok(())
        }
        Command::Theory { config, overrides } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            overrides.apply(&mut cfg)?;
            cfg.run.record_trace = true;
            let mut sim = Simulation::new(&cfg)?;
            for _ in 0..cfg.run.rounds {
                sim.run_round()?;
                if sim.deadline_exceeded() {
                    break;
                }
            }
            let trace = sim.trace().expect("trace recording enabled").clone();
            let task = sim.task().clone();
            let eta = cfg.train.learning_rate;
            let epochs = cfg.train.local_epochs;
            let mut rng = mavfl::rng::stream(cfg.master_seed, &[mavfl::rng::domain::THEORY]);
            let batch = (!cfg.train.full_batch).then_some(cfg.train.batch_size);
            let estimates = theory::estimate_constants(&task, 200, batch, &mut rng)?;
            let lemma = theory::lemma1_check(&trace, eta, epochs, estimates.grad_bound_sq);
            let bound = theory::theorem1_bound(&task, &trace, &estimates, eta, epochs);
            let identity = theory::appendix_identity_check(100_000, 5, 0.6, &mut rng)?;
            let report = serde_json::json!({
                "estimates": estimates,
                "lemma1": lemma,
                "theorem1": bound,
                "identity": identity,
            });
            let text = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
            match &cfg.run.out_dir {
                Some(dir) => {
                    std::fs::create_dir_all(dir)
                        .map_err(|e| Error::io(dir.display().to_string(), e))?;
                    let path = dir.join("theory.json");
                    std::fs::write(&path, &text)
                        .map_err(|e| Error::io(path.display().to_string(), e))?;
                    println!("theory report written to {}", path.display());
                }
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}

fn print_summary(s: &RunSummary) {
    let acc = s
        .final_accuracy
        .map(|a| format!("{a:.4}"))
        .unwrap_or_else(|| "-".into());
    let ratio = s
        .mean_ratio
        .map(|r| format!("{r:.3}"))
        .unwrap_or_else(|| "-".into());
    let target = s
        .delay_to_target_s
        .map(|d| format!("{d:.1} s"))
        .unwrap_or_else(|| "-".into());
    println!(
        "{} seed={} rounds={} delay={:.1}s loss={:.6} acc={} mean_p={} to_target={}",
        s.policy,
        s.master_seed,
        s.rounds_completed,
        s.cumulative_delay_s,
        s.final_loss,
        acc,
        ratio,
        target
    );
}
