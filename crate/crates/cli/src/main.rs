//! Command-line front end for the crop-management policy workbench: weather
//! generation, single-season simulation, Q-learning and behavior-cloning
//! training, cross-preset evaluation, and table reproduction from totals.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use agpl_core::config::{load_run_config, RunConfig};
use agpl_core::dqn::{train as train_dqn, DqnConfig, GreedyPolicy};
use agpl_core::env::CropEnv;
use agpl_core::harness::{
    self, eval_matrix_from_totals, evaluate, export_application_history, export_eval_matrix,
    export_eval_summary, export_training_curve, load_totals_csv, run_episode,
};
use agpl_core::imitation::{
    collect_demos, load_demos_csv, sha256_hex, train_bc, BcModel, BcPolicy, ScriptedExpert,
    write_demos_csv,
};
use agpl_core::nn::{
    checkpoint_to_bytes, load_checkpoint_expecting, save_checkpoint, Checkpoint, HEAD_LINEAR,
    HEAD_SQUASHED,
};
use agpl_core::policies::{BaselinePolicy, Policy, RandomPolicy, ZeroPolicy};
use agpl_core::reward::{preset, PRESET_NAMES};
use agpl_core::seeds::derive_seed;
use agpl_core::weather::{generate_synthetic, load_weather_csv, write_weather_csv};

#[derive(Parser)]
#[command(
    name = "agpl",
    version,
    about = "Crop-management policy workbench: simulate, train, evaluate"
)]
struct Cli {
    /// Run-configuration TOML; unset fields use built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config file and AGPL_OUT_DIR).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic weather season as CSV.
    GenWeather {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of days; defaults to the simulation season window.
        #[arg(long)]
        days: Option<usize>,
        /// Output file; defaults to `<out-dir>/weather.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one policy season and export its daily application history.
    Simulate {
        /// One of: zero, random, baseline, dqn, bc.
        #[arg(long)]
        policy: String,
        /// Checkpoint file (required for dqn and bc).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Season seed (weather and policy randomness).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Weather CSV to replay instead of synthetic generation.
        #[arg(long)]
        weather: Option<PathBuf>,
        /// Output file; defaults to `<out-dir>/application_history_<policy>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the Q-network; writes a training curve and a checkpoint.
    TrainDqn {
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Reward preset for the training signal (RF1..RF5).
        #[arg(long)]
        preset: Option<String>,
    },
    /// Roll out an expert and store its state-action pairs.
    CollectDemos {
        /// One of: scripted, dqn.
        #[arg(long, default_value = "scripted")]
        expert: String,
        /// Checkpoint file (required for a dqn expert).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; defaults to `<out-dir>/demos.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Clone a demonstrated policy by squared-error regression.
    TrainBc {
        /// Demonstration CSV written by collect-demos.
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output checkpoint; defaults to `<out-dir>/bc_checkpoint.bin`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a policy across seeds and reward presets.
    Evaluate {
        /// One of: zero, random, baseline, dqn, bc.
        #[arg(long)]
        policy: String,
        /// Checkpoint file (required for dqn and bc).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated preset names; defaults to all five.
        #[arg(long)]
        rf: Option<String>,
        /// Number of evaluation seasons.
        #[arg(long)]
        seeds: Option<usize>,
        /// Base seed the season seeds derive from.
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; defaults to `<out-dir>/eval_summary.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the cumulative-return table from a named-totals CSV.
    EvalMatrix {
        /// CSV with header `name,n_input,water_input,n_leach,yield`.
        #[arg(long)]
        totals: PathBuf,
        /// Comma-separated preset names; defaults to all five.
        #[arg(long)]
        rf: Option<String>,
        /// Optional CSV export (`policy,rf,return`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences on random nets.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        nets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => load_run_config(path)?,
        None => RunConfig::default(),
    };
    let out_dir = resolve_out_dir(&cli, &cfg);

    match cli.cmd {
        Cmd::GenWeather { seed, days, out } => {
            let days = days.unwrap_or(cfg.sim.max_season_days);
            let mut climate = cfg.climate.clone();
            climate.start_day_of_year = cfg.sim.planting_day_of_year;
            let series = generate_synthetic(seed, days, &climate)?;
            let path = out_path(&out_dir, out, "weather.csv")?;
            write_weather_csv(&series, &path)?;
            println!("wrote {} days of weather to {}", series.len(), path.display());
        }
        Cmd::Simulate {
            policy,
            checkpoint,
            seed,
            weather,
            out,
        } => {
            let mut policy = build_policy(&policy, checkpoint.as_deref(), &cfg, seed)?;
            let series = match weather {
                Some(path) => load_weather_csv(&path)?,
                None => {
                    let mut climate = cfg.climate.clone();
                    climate.start_day_of_year = cfg.sim.planting_day_of_year;
                    generate_synthetic(seed, cfg.sim.max_season_days, &climate)?
                }
            };
            let reward_cfg = preset(&cfg.reward_preset)?;
            let log = run_episode(&cfg.sim, series, policy.as_mut(), &reward_cfg, seed)?;
            let default_name = format!("application_history_{}.csv", log.policy_name);
            let path = out_path(&out_dir, out, &default_name)?;
            export_application_history(&log, &path)?;
            println!(
                "{} under {}: return {:.1}, N {:.1} kg/ha, water {:.1} mm, leached {:.1} kg/ha, yield {:.1} kg/ha ({:?})",
                log.policy_name,
                log.reward_name,
                log.ret,
                log.totals.n_kg_ha,
                log.totals.water_mm,
                log.totals.leached_kg_ha,
                log.totals.yield_kg_ha,
                log.done_reason,
            );
            println!("wrote {}", path.display());
        }
        Cmd::TrainDqn {
            episodes,
            seed,
            preset: preset_flag,
        } => {
            let mut dqn_cfg = cfg.dqn.clone();
            if let Some(e) = episodes {
                dqn_cfg.episodes = e;
            }
            if let Some(s) = seed {
                dqn_cfg.seed = s;
            }
            if let Some(p) = preset_flag {
                dqn_cfg.reward_preset = p;
            }
            dqn_cfg.validate()?;
            let out = train_dqn(training_env_factory(&cfg, &dqn_cfg), &dqn_cfg)?;

            std::fs::create_dir_all(&out_dir).map_err(anyhow::Error::from)?;
            let curve_path = out_dir.join("training_curve.csv");
            export_training_curve(&out.curve, &curve_path)?;
            let ckpt = Checkpoint {
                params: out.q.params.clone(),
                normalizer: out.q.normalizer.clone(),
                metadata: vec![
                    ("kind".into(), "dqn-q".into()),
                    ("preset".into(), dqn_cfg.reward_preset.clone()),
                    ("seed".into(), dqn_cfg.seed.to_string()),
                    ("episodes".into(), dqn_cfg.episodes.to_string()),
                    ("gradient_steps".into(), out.gradient_steps.to_string()),
                ],
            };
            let ckpt_path = out_dir.join("dqn_checkpoint.bin");
            save_checkpoint(&ckpt, &ckpt_path)?;
            let last = out.curve.last().map(|p| p.ret);
            println!(
                "trained {} episodes ({} gradient steps); last return {}",
                dqn_cfg.episodes,
                out.gradient_steps,
                last.map_or("n/a".to_string(), |r| format!("{r:.1}")),
            );
            println!("wrote {} and {}", curve_path.display(), ckpt_path.display());
        }
        Cmd::CollectDemos {
            expert,
            checkpoint,
            episodes,
            seed,
            out,
        } => {
            let (mut expert_policy, expert_hash): (Box<dyn Policy>, Option<String>) =
                match expert.as_str() {
                    "scripted" => (Box::new(ScriptedExpert::default()), None),
                    "dqn" => {
                        let path = checkpoint
                            .as_deref()
                            .ok_or_else(|| usage("--checkpoint is required for a dqn expert"))?;
                        let ckpt = load_checkpoint_expecting(path, HEAD_LINEAR)?;
                        let hash = sha256_hex(&checkpoint_to_bytes(&ckpt)?);
                        (Box::new(GreedyPolicy::from_checkpoint(ckpt)?), Some(hash))
                    }
                    other => {
                        return Err(usage(format!(
                            "unknown expert `{other}` (expected scripted or dqn)"
                        )))
                    }
                };
            let mut dataset = collect_demos(
                expert_policy.as_mut(),
                season_env_factory(&cfg),
                episodes,
                seed,
            )?;
            dataset.meta.expert_sha256 = expert_hash;
            let path = out_path(&out_dir, out, "demos.csv")?;
            write_demos_csv(&path, &dataset)?;
            println!(
                "collected {} pairs from {} episodes of {}; wrote {}",
                dataset.len(),
                episodes,
                dataset.meta.expert_name,
                path.display()
            );
        }
        Cmd::TrainBc {
            demos,
            epochs,
            batch_size,
            seed,
            out,
        } => {
            let dataset = load_demos_csv(&demos)?;
            let mut bc_cfg = cfg.bc.clone();
            if let Some(e) = epochs {
                bc_cfg.epochs = e;
            }
            if let Some(b) = batch_size {
                bc_cfg.batch_size = b;
            }
            if let Some(s) = seed {
                bc_cfg.seed = s;
            }
            bc_cfg.validate()?;
            let trained = train_bc(&dataset, &bc_cfg)?;
            let final_loss = *trained.epoch_losses.last().expect("epochs >= 1");

            let demo_bytes = std::fs::read(&demos).map_err(anyhow::Error::from)?;
            let ckpt = Checkpoint {
                params: trained.model.params.clone(),
                normalizer: trained.model.normalizer.clone(),
                metadata: vec![
                    ("kind".into(), "bc".into()),
                    ("seed".into(), bc_cfg.seed.to_string()),
                    ("epochs".into(), bc_cfg.epochs.to_string()),
                    ("batch_size".into(), bc_cfg.batch_size.to_string()),
                    ("demos_sha256".into(), sha256_hex(&demo_bytes)),
                    ("final_loss".into(), format!("{final_loss:.6}")),
                ],
            };
            let path = out_path(&out_dir, out, "bc_checkpoint.bin")?;
            save_checkpoint(&ckpt, &path)?;
            println!(
                "cloned {} pairs over {} epochs; final loss {final_loss:.4}; wrote {}",
                dataset.len(),
                bc_cfg.epochs,
                path.display()
            );
        }
        Cmd::Evaluate {
            policy,
            checkpoint,
            rf,
            seeds,
            seed,
            out,
        } => {
            let base_seed = seed.unwrap_or(cfg.eval_seed);
            let n_seeds = seeds.unwrap_or(cfg.eval_seeds);
            let rf_names = parse_rf_list(rf.as_deref())?;
            let rf_refs: Vec<&str> = rf_names.iter().map(String::as_str).collect();
            let mut policy = build_policy(&policy, checkpoint.as_deref(), &cfg, base_seed)?;
            let summary = evaluate(
                policy.as_mut(),
                &rf_refs,
                n_seeds,
                base_seed,
                &cfg.sim,
                &cfg.climate,
            )?;
            println!(
                "{} over {} seasons (mean totals: N {:.1} kg/ha, water {:.1} mm, leached {:.1} kg/ha, yield {:.1} kg/ha)",
                summary.policy_name,
                summary.n_seeds,
                summary.mean_totals.n_kg_ha,
                summary.mean_totals.water_mm,
                summary.mean_totals.leached_kg_ha,
                summary.mean_totals.yield_kg_ha,
            );
            for ((name, mean), std) in summary
                .rf_names
                .iter()
                .zip(&summary.mean_return)
                .zip(&summary.std_return)
            {
                println!("  {name}: {mean:.1} +/- {std:.1}");
            }
            let path = out_path(&out_dir, out, "eval_summary.csv")?;
            export_eval_summary(&summary, &path)?;
            println!("wrote {}", path.display());
        }
        Cmd::EvalMatrix { totals, rf, out } => {
            let rows = load_totals_csv(&totals)?;
            let rf_names = parse_rf_list(rf.as_deref())?;
            let rf_refs: Vec<&str> = rf_names.iter().map(String::as_str).collect();
            let matrix = eval_matrix_from_totals(&rows, &rf_refs)?;
            print!("policy");
            for name in &matrix.rf_names {
                print!("\t{name}");
            }
            println!();
            for (name, row) in matrix.row_names.iter().zip(&matrix.values) {
                print!("{name}");
                for v in row {
                    print!("\t{v:.1}");
                }
                println!();
            }
            if let Some(out) = out {
                let path = out_path(&out_dir, Some(out), "eval_matrix.csv")?;
                export_eval_matrix(&matrix, &path)?;
                println!("wrote {}", path.display());
            }
        }
        Cmd::Gradcheck {
            nets,
            seed,
            tolerance,
        } => {
            // Probe step chosen at the flat minimum of the finite-difference
            // roundoff/truncation tradeoff for these loss magnitudes.
            let worst = agpl_core::nn::gradient_check_suite(nets, seed, 3e-5)?;
            println!("max relative gradient error over {nets} nets: {worst:.3e}");
            if worst > tolerance {
                return Err(CliError::Runtime(anyhow::anyhow!(
                    "gradient check failed: {worst:.3e} exceeds tolerance {tolerance:.3e}"
                )));
            }
            println!("PASS (tolerance {tolerance:.1e})");
        }
    }
    Ok(())
}

/// Flag > config file > `AGPL_OUT_DIR` > current directory.
fn resolve_out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os("AGPL_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Joins a default file name onto the output directory unless an explicit
/// path was given; ensures the parent directory exists.
fn out_path(
    out_dir: &Path,
    explicit: Option<PathBuf>,
    default_name: &str,
) -> Result<PathBuf, CliError> {
    let path = match explicit {
        Some(p) => p,
        None => out_dir.join(default_name),
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(anyhow::Error::from)?;
        }
    }
    Ok(path)
}

fn parse_rf_list(arg: Option<&str>) -> Result<Vec<String>, CliError> {
    match arg {
        None => Ok(PRESET_NAMES.iter().map(|s| s.to_string()).collect()),
        Some(list) => {
            let names: Vec<String> = list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            if names.is_empty() {
                return Err(usage("empty preset list"));
            }
            for name in &names {
                preset(name).map_err(|_| usage(format!("unknown reward preset `{name}`")))?;
            }
            Ok(names)
        }
    }
}

fn build_policy(
    name: &str,
    checkpoint: Option<&Path>,
    cfg: &RunConfig,
    base_seed: u64,
) -> Result<Box<dyn Policy>, CliError> {
    match name {
        "zero" => Ok(Box::new(ZeroPolicy)),
        "random" => Ok(Box::new(RandomPolicy::new(base_seed))),
        "baseline" => Ok(Box::new(BaselinePolicy::new(
            cfg.baseline.clone(),
            cfg.sim.soil.taw_mm,
        )?)),
        "dqn" => {
            let path = checkpoint
                .ok_or_else(|| usage("--checkpoint is required for the dqn policy"))?;
            let ckpt = load_checkpoint_expecting(path, HEAD_LINEAR)?;
            Ok(Box::new(GreedyPolicy::from_checkpoint(ckpt)?))
        }
        "bc" => {
            let path = checkpoint
                .ok_or_else(|| usage("--checkpoint is required for the bc policy"))?;
            let ckpt = load_checkpoint_expecting(path, HEAD_SQUASHED)?;
            Ok(Box::new(BcPolicy::new(BcModel::new(
                ckpt.params,
                ckpt.normalizer,
            )?)))
        }
        other => Err(usage(format!(
            "unknown policy `{other}` (expected zero, random, baseline, dqn, or bc)"
        ))),
    }
}

/// Environment factory for Q-learning: fresh seed-derived weather per
/// episode index, or one fixed season when the config asks for it.
fn training_env_factory(
    cfg: &RunConfig,
    dqn_cfg: &DqnConfig,
) -> impl FnMut(u64) -> agpl_core::Result<CropEnv> {
    let sim = cfg.sim.clone();
    let climate = cfg.climate.clone();
    let fixed = cfg.fixed_weather;
    let base = dqn_cfg.seed;
    move |episode_index| {
        let weather_seed = if fixed {
            derive_seed(base, u64::MAX)
        } else {
            derive_seed(base, episode_index)
        };
        harness::make_env(&sim, &climate, weather_seed)
    }
}

/// Environment factory for demonstration collection: the collection routine
/// hands this an already-derived episode seed.
fn season_env_factory(cfg: &RunConfig) -> impl FnMut(u64) -> agpl_core::Result<CropEnv> {
    let sim = cfg.sim.clone();
    let climate = cfg.climate.clone();
    move |episode_seed| harness::make_env(&sim, &climate, episode_seed)
}
