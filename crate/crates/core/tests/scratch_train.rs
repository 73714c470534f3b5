//! Scratch experiment (temporary): trainability of the pipeline model.

use std::time::Instant;

use fmpose::flow::{MlpConfig, TrainConfig};
use fmpose::pipeline::{
    build_query_context, estimate_pose_with_context, eval_metrics, generate_scene, pose_success,
    train_pipeline_model, PipelineConfig, SceneSpec,
};

#[test]
#[ignore]
fn scratch_train_eval() {
    let fnoise: f64 = std::env::var("SCRATCH_FNOISE").ok().and_then(|v| v.parse().ok()).unwrap_or(0.1);
    let hidden: usize = std::env::var("SCRATCH_H").ok().and_then(|v| v.parse().ok()).unwrap_or(96);
    let config = PipelineConfig {
        feature_noise: fnoise,
        ..PipelineConfig::default()
    };
    let spec = SceneSpec::default();

    let t0 = Instant::now();
    let train_scenes: Vec<_> = (0..48)
        .map(|i| {
            generate_scene(&SceneSpec {
                seed: 10_000 + i,
                ..spec
            })
            .unwrap()
        })
        .collect();
    let eval_scenes: Vec<_> = (0..100)
        .map(|i| {
            generate_scene(&SceneSpec {
                seed: 90_000 + i,
                ..spec
            })
            .unwrap()
        })
        .collect();
    println!("scene gen: {:.1}s", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let ctx = build_query_context(&train_scenes[0].query, &spec.texture, &config).unwrap();
    println!(
        "ctx: {:.1}s (query {} pts, diam {:.3})",
        t0.elapsed().as_secs_f64(),
        ctx.cloud_norm.len(),
        ctx.diameter
    );

    let lr: f64 = std::env::var("SCRATCH_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(0.05);
    let epochs: usize = std::env::var("SCRATCH_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(10);
    let train_config = TrainConfig {
        epochs,
        steps_per_epoch: 48,
        batch_size: 1,
        learning_rate: lr,
        seed: 7,
        noise_sigma: 0.5,
    };
    let mlp = MlpConfig {
        hidden1: hidden,
        hidden2: hidden,
        ..MlpConfig::default()
    };
    let t0 = Instant::now();
    let trained = train_pipeline_model(&train_scenes, &ctx, &config, mlp, &train_config).unwrap();
    let train_secs = t0.elapsed().as_secs_f64();
    for e in trained.log.iter() {
        println!("epoch {:3}  loss {:.6}  ({:.2}s)", e.epoch, e.mean_loss, e.seconds);
    }
    println!("train total: {train_secs:.1}s  lr {lr}");

    let t0 = Instant::now();
    let mut ok = 0usize;
    let mut ir_strict = 0.0;
    let mut ir_loose = 0.0;
    for record in &eval_scenes {
        let est = estimate_pose_with_context(record, &ctx, &trained.model, &config).unwrap();
        let m = eval_metrics(&est.camera_pose, &record.gt, &record.query).unwrap();
        let success = pose_success(&m, ctx.diameter);
        if success {
            ok += 1;
        }
        ir_strict += est.diagnostics.inlier_ratio_by_tau[0].1;
        ir_loose += est.diagnostics.inlier_ratio_by_tau[5].1;
        if !success {
            println!(
                "FAIL rot {:7.2} deg  trans {:7.4} m  IR0.5 {:5.1}  IR10 {:5.1}  ransac_inl {:3}",
                m.rotation_deg,
                m.translation_m,
                est.diagnostics.inlier_ratio_by_tau[0].1,
                est.diagnostics.inlier_ratio_by_tau[5].1,
                est.diagnostics.ransac_inliers,
            );
        }
    }
    println!(
        "eval: {:.1}s  success {}/{}  mean IR(0.5%) {:.1}  mean IR(10%) {:.1}",
        t0.elapsed().as_secs_f64(),
        ok,
        eval_scenes.len(),
        ir_strict / eval_scenes.len() as f64,
        ir_loose / eval_scenes.len() as f64
    );
}
