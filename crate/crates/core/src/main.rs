use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fmpose::error::{Error, Result};
use fmpose::flow::{MlpConfig, MlpVelocityModel, TrainConfig, VelocityModel};
use fmpose::pipeline::{
    self, build_query_context, estimate_pose_with_context, eval_metrics, generate_scene, io,
    oracle_for_scene, run_ablation_solvers, run_steps_sweep, run_symmetry_study, PipelineConfig,
    SceneSpec, SymmetryStudyConfig,
};

#[derive(Parser)]
#[command(
    name = "fmpose",
    about = "6D pose estimation via conditional flow matching with RANSAC-Kabsch + ICP recovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes from a scene-spec file.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Train a velocity model on a directory of scenes.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Estimate the pose for one scene with a trained model or the oracle.
    Estimate {
        /// Checkpoint path, or the literal `oracle`.
        #[arg(long)]
        model: String,
        /// Scene directory (as written by `gen`).
        #[arg(long)]
        scene: PathBuf,
        /// Euler integration steps.
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted poses against ground-truth scenes.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ablation suite: solvers | steps | features.
    Ablate {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            spec,
            out,
            count,
            seed,
        } => cmd_gen(&spec, &out, count, seed),
        Command::Train {
            data,
            out,
            epochs,
            seed,
        } => cmd_train(&data, &out, epochs, seed),
        Command::Estimate {
            model,
            scene,
            steps,
            out,
        } => cmd_estimate(&model, &scene, steps, &out),
        Command::Eval { pred, gt, out } => cmd_eval(&pred, &gt, &out),
        Command::Ablate {
            suite,
            data,
            model,
            out,
        } => cmd_ablate(&suite, &data, &model, &out),
    }
}

fn cmd_gen(spec_path: &Path, out: &Path, count: usize, seed: u64) -> Result<()> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be >= 1".into()));
    }
    let template = io::read_scene_spec(spec_path)?;
    std::fs::create_dir_all(out)?;
    for i in 0..count {
        let scene_spec = SceneSpec {
            seed: seed.wrapping_add(i as u64),
            ..template
        };
        let record = generate_scene(&scene_spec)?;
        let dir = out.join(format!("scene_{i:04}"));
        io::write_scene(&record, &dir)?;
    }
    // Manifest: the template and generation parameters.
    let mut manifest = io::scene_spec_to_kv(&template);
    manifest.push_str(&format!("count {count}\ngen_seed {seed}\n"));
    std::fs::write(out.join("manifest.txt"), manifest)?;
    println!("generated {count} scenes under {}", out.display());
    Ok(())
}

fn load_scenes(data: &Path) -> Result<Vec<pipeline::SceneRecord>> {
    io::list_scene_dirs(data)?
        .iter()
        .map(|dir| io::read_scene(dir))
        .collect()
}

fn cmd_train(data: &Path, out: &Path, epochs: usize, seed: u64) -> Result<()> {
    let scenes = load_scenes(data)?;
    let config = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    let ctx = build_query_context(&scenes[0].query, &scenes[0].spec.texture, &config)?;
    let train_config = TrainConfig {
        epochs,
        steps_per_epoch: scenes.len(),
        seed,
        ..TrainConfig::default()
    };
    let trained = pipeline::train_pipeline_model(
        &scenes,
        &ctx,
        &config,
        MlpConfig::default(),
        &train_config,
    )?;
    trained.model.save(out)?;
    let log_path = out.with_extension("log.csv");
    std::fs::write(&log_path, io::train_log_csv(&trained.log))?;
    println!(
        "trained {} epochs on {} scenes; final loss {:.6}; checkpoint {}",
        epochs,
        scenes.len(),
        trained.log.last().map(|l| l.mean_loss).unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn scene_id(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into())
}

fn cmd_estimate(model_arg: &str, scene: &Path, steps: usize, out: &Path) -> Result<()> {
    let record = io::read_scene(scene)?;
    let config = PipelineConfig {
        euler_steps: steps,
        seed: record.spec.seed,
        ..PipelineConfig::default()
    };
    let ctx = build_query_context(&record.query, &record.spec.texture, &config)?;
    let estimate = if model_arg == "oracle" {
        let oracle = oracle_for_scene(&record, &ctx)?;
        estimate_pose_with_context(&record, &ctx, &oracle, &config)?
    } else {
        let model = MlpVelocityModel::load(Path::new(model_arg))?;
        if model.cond_width() != config.conditioning_width() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint conditioning width {} does not match pipeline {}",
                model.cond_width(),
                config.conditioning_width()
            )));
        }
        estimate_pose_with_context(&record, &ctx, &model, &config)?
    };
    let json = io::estimate_to_json(&estimate, &scene_id(scene), record.spec.seed, steps);
    io::write_estimate_json(&json, out)?;
    println!(
        "estimated pose for {}: {} RANSAC inliers, residual {:.6} m",
        scene_id(scene),
        estimate.diagnostics.ransac_inliers,
        estimate.registration.residual_rms
    );
    Ok(())
}

fn cmd_eval(pred: &Path, gt: &Path, out: &Path) -> Result<()> {
    let mut rows = Vec::new();
    let mut pred_files: Vec<PathBuf> = std::fs::read_dir(pred)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    pred_files.sort();
    if pred_files.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .json predictions under {}",
            pred.display()
        )));
    }
    for file in pred_files {
        let estimate = io::read_estimate_json(&file)?;
        let scene_dir = gt.join(&estimate.scene);
        let record = io::read_scene(&scene_dir)?;
        let pose = estimate.camera_pose.to_transform()?;
        let metrics = eval_metrics(&pose, &record.gt, &record.query)?;
        rows.push(io::EvalRow {
            scene: estimate.scene.clone(),
            rotation_deg: metrics.rotation_deg,
            translation_m: metrics.translation_m,
            add: metrics.add,
            add_s: metrics.add_s,
        });
    }
    std::fs::write(out, io::eval_table_csv(&rows))?;
    println!("evaluated {} predictions into {}", rows.len(), out.display());
    Ok(())
}

fn cmd_ablate(suite: &str, data: &Path, model_path: &Path, out: &Path) -> Result<()> {
    match suite {
        "solvers" | "steps" => {
            let scenes = load_scenes(data)?;
            let model = MlpVelocityModel::load(model_path)?;
            let config = PipelineConfig {
                seed: scenes[0].spec.seed,
                ..PipelineConfig::default()
            };
            if model.cond_width() != config.conditioning_width() {
                return Err(Error::InvalidArgument(
                    "checkpoint does not match the pipeline configuration".into(),
                ));
            }
            let ctx = build_query_context(&scenes[0].query, &scenes[0].spec.texture, &config)?;
            if suite == "solvers" {
                // Contamination pinned to the gross-outlier regime that
                // separates the robust solver from the global baseline.
                let table =
                    run_ablation_solvers(&scenes, &ctx, &model as &dyn VelocityModel, &config, 0.3)?;
                std::fs::write(out, io::solver_table_csv(&table))?;
            } else {
                let table = run_steps_sweep(
                    &scenes,
                    &ctx,
                    &model as &dyn VelocityModel,
                    &config,
                    &[1, 10, 50],
                )?;
                std::fs::write(out, io::sweep_table_csv(&table))?;
                let timing = out.with_extension("timing.csv");
                std::fs::write(&timing, io::sweep_timing_csv(&table))?;
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        "features" => {
            // Symmetry study: trains one desk-scale model per texture
            // condition on a 4-fold symmetric cuboid; the checkpoint
            // supplies the architecture.
            let manifest = io::read_scene_spec(&data.join("manifest.txt"))?;
            let model = MlpVelocityModel::load(model_path)?;
            let study = SymmetryStudyConfig {
                base_spec: SceneSpec {
                    shape: pipeline::ShapeKind::Cube,
                    aspect: 1.6,
                    ..manifest
                },
                pipeline: PipelineConfig {
                    seed: manifest.seed,
                    ..PipelineConfig::default()
                },
                mlp: *model.config(),
                train: TrainConfig::default(),
                train_scenes: 48,
                eval_scenes: 100,
                seed: manifest.seed,
            };
            let report = run_symmetry_study(&study)?;
            std::fs::write(out, io::symmetry_report_csv(&report))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown suite '{other}' (expected solvers | steps | features)"
        ))),
    }
}
