//! Command-line front end: scene and dataset generation, training,
//! Monte-Carlo sweeps and result summaries.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iccl_core::baselines::NfplParams;
use iccl_core::dataset::{generate_dataset, CsiDataset};
use iccl_core::harness::{self, Algorithm, Environment, ExperimentConfig, TrainedModels};
use iccl_core::regressor::{checkpoint, RegressorParams};
use iccl_core::scene::{sample_ground_positions, SceneGenerator};
use iccl_core::scenefile::{self, TrajectorySpec};
use iccl_core::stats;

#[derive(Parser)]
#[command(name = "iccl", version, about = "UAV-assisted localization by learned CSI distances")]
struct Cli {
    /// Experiment config (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scene files.
    Scene {
        #[command(subcommand)]
        action: SceneAction,
    },
    /// CSI datasets.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train both networks from scratch (pretraining stage).
    Pretrain(TrainArgs),
    /// Fine-tune pretrained networks, or train from scratch without --init.
    Train(TrainArgs),
    /// Monte-Carlo sweep.
    Eval(EvalArgs),
    /// Summarize a results CSV: table, trend and ordering checks.
    Report {
        results: PathBuf,
    },
}

#[derive(Subcommand)]
enum SceneAction {
    /// Random urban scene with the default circular trajectory.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        buildings: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetAction {
    /// Measure CSI at uniformly drawn free ground positions.
    Gen {
        #[arg(long)]
        scene: PathBuf,
        /// Scene file holding the trajectory; defaults to --scene, then to the standard circle.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        positions: usize,
        /// Noise power in watts.
        #[arg(long, default_value_t = 0.0)]
        noise_power: f64,
        #[arg(long)]
        seed: u64,
        /// `.bin` selects the binary format, anything else CSV.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Distance regressor to continue from.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Position regressor to continue from.
    #[arg(long)]
    nfpl_init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    nfpl_out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Anchors,
    Noise,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    sweep: SweepKind,
    /// Master seed for every random stream of the run.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    realizations: Option<usize>,
    /// Trained distance regressor; without it, models are trained in-run.
    #[arg(long, requires = "nfpl")]
    model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    nfpl: Option<PathBuf>,
    /// Fingerprint dataset for DFPL; regenerated from the config when absent.
    #[arg(long)]
    fingerprints: Option<PathBuf>,
    /// Compare plain linear gains in DFPL instead of the normalized features.
    #[arg(long)]
    dfpl_raw: bool,
    /// Result CSV; plot data goes next to it with a `.dat` extension.
    #[arg(long)]
    out: PathBuf,
    /// Save models trained in-run here (`iccl.bin`, `nfpl.bin`).
    #[arg(long)]
    save_models: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> iccl_core::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn progress(stage: &str, epoch: usize, loss: f64) {
    eprintln!("{stage:>14} epoch {epoch:>4}  loss {loss:.4}");
}

fn run(cli: Cli) -> iccl_core::Result<()> {
    let mut config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Scene { action: SceneAction::Gen { seed, buildings, out } } => {
            let scene = SceneGenerator { n_buildings: buildings, ..SceneGenerator::default() }.generate(seed)?;
            scenefile::save(&out, &scene, Some(&config.trajectory))?;
            eprintln!("wrote {} ({} buildings, hash {})", out.display(), buildings, scenefile::scene_hash(&scene));
        }
        Command::Dataset { action: DatasetAction::Gen { scene, trajectory, positions, noise_power, seed, out } } => {
            let (scene_obj, own_traj) = scenefile::load(&scene)?;
            let spec = match trajectory {
                Some(p) => scenefile::load(&p)?.1,
                None => own_traj,
            }
            .unwrap_or_else(TrajectorySpec::default_circle);
            let traj = spec.build()?;
            let model = config.channel.with_noise_power(noise_power);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pos = sample_ground_positions(&scene_obj, positions, &mut rng)?;
            let ds = generate_dataset(&scene_obj, &model, &traj, &pos, &mut rng)?;
            if out.extension().is_some_and(|e| e == "bin") {
                ds.write_binary(&out)?;
            } else {
                ds.write_csv(&out)?;
            }
            eprintln!("wrote {} ({} records x {} waypoints)", out.display(), ds.records.len(), ds.n_waypoints);
        }
        Command::Pretrain(args) | Command::Train(args) => {
            let data = CsiDataset::read(&args.dataset)?;
            let models = match (&args.init, &args.nfpl_init) {
                (Some(i), Some(n)) => {
                    let iccl = RegressorParams::from_model(checkpoint::load(i)?)?;
                    let nfpl = NfplParams::from_model(checkpoint::load(n)?)?;
                    harness::finetune_models(&config, iccl, nfpl, &data, progress)?
                }
                (None, None) => {
                    let (iccl, nfpl) = harness::pretrain_models(&config, &data, progress)?;
                    TrainedModels { iccl, nfpl, fingerprints: data.records }
                }
                _ => return Err(iccl_core::Error::InvalidArgument("--init and --nfpl-init go together".into())),
            };
            checkpoint::save(models.iccl.model(), &args.out)?;
            checkpoint::save(models.nfpl.model(), &args.nfpl_out)?;
        }
        Command::Eval(args) => {
            config.seed = args.seed;
            if let Some(r) = args.realizations {
                config.realizations = r;
            }
            if args.dfpl_raw {
                config.algorithms.retain(|a| *a != Algorithm::Dfpl);
                if !config.algorithms.contains(&Algorithm::DfplRaw) {
                    config.algorithms.push(Algorithm::DfplRaw);
                }
            }
            config.validate()?;
            let env = Environment::from_config(&config)?;
            let models = match (&args.model, &args.nfpl) {
                (Some(m), Some(n)) => {
                    let fingerprints = match &args.fingerprints {
                        Some(p) => CsiDataset::read(p)?.records,
                        None => harness::generate_training_data(&config, &env)?.1.records,
                    };
                    TrainedModels {
                        iccl: RegressorParams::from_model(checkpoint::load(m)?)?,
                        nfpl: NfplParams::from_model(checkpoint::load(n)?)?,
                        fingerprints,
                    }
                }
                _ => {
                    let (pre, fine) = harness::generate_training_data(&config, &env)?;
                    let models = harness::train_models(&config, &pre, &fine, progress)?;
                    if let Some(dir) = &args.save_models {
                        std::fs::create_dir_all(dir)?;
                        checkpoint::save(models.iccl.model(), &dir.join("iccl.bin"))?;
                        checkpoint::save(models.nfpl.model(), &dir.join("nfpl.bin"))?;
                    }
                    models
                }
            };
            let results = match args.sweep {
                SweepKind::Anchors => harness::sweep_anchors(&config, &env, &models)?,
                SweepKind::Noise => harness::sweep_noise(&config, &env, &models)?,
            };
            let dat = harness::emit_results(&results, &args.out)?;
            eprintln!("wrote {} and {}", args.out.display(), dat.display());
        }
        Command::Report { results } => report(&results)?,
    }
    Ok(())
}

fn report(path: &Path) -> iccl_core::Result<()> {
    let text = std::fs::read_to_string(path)?;
    let bad = |reason: String| iccl_core::Error::Format { path: path.to_path_buf(), reason };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(format!("line {}: expected 7 fields", i + 1)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", i + 1)));
        rows.push((Algorithm::from_name(f[0])?, num(f[1])? as usize, num(f[2])?, num(f[3])?, num(f[4])?, f[5].to_string()));
    }
    println!("{:<12} {:>5} {:>16} {:>10} {:>9} {:>6}", "algorithm", "m_a", "noise (dBm)", "rmse (m)", "stderr", "runs");
    for r in &rows {
        println!("{:<12} {:>5} {:>16.2} {:>10.3} {:>9.3} {:>6}", r.0.name(), r.1, r.2, r.3, r.4, r.5);
    }
    let mut noises: Vec<f64> = rows.iter().map(|r| r.2).collect();
    noises.sort_by(f64::total_cmp);
    noises.dedup();
    let mut algs: Vec<Algorithm> = rows.iter().map(|r| r.0).collect();
    algs.sort();
    algs.dedup();
    for alg in &algs {
        for &noise in &noises {
            let mut pts: Vec<(usize, f64)> =
                rows.iter().filter(|r| r.0 == *alg && r.2 == noise).map(|r| (r.1, r.3)).collect();
            pts.sort_by_key(|p| p.0);
            if pts.len() >= 3 {
                let series: Vec<f64> = pts.iter().map(|p| p.1).collect();
                if let Ok(p) = stats::mann_kendall_decreasing(&series) {
                    println!("trend {} over m_a at {noise:.2} dBm: Mann-Kendall p = {p:.4}", alg.name());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
