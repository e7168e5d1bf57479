//! End-to-end desk-scale run: generate, train, evaluate.
//!
//! `cargo run --release --example desk -- [steps] [context_len] [batch] [variant] [seed]`
//!
//! Defaults match the acceptance suite's desk configuration. `LR`, `WIDTH`
//! and `META` override the learning rate, decoder width and meta-network width.

use std::time::Instant;

use inpaint_vad::data::{spatial_pairs, build_test_set, generate_normal_set, synthetic_glyphs, CorruptionMode, MovingConfig};
use inpaint_vad::eval::{localization_check, report_for, score_dataset, EvalConfig};
use inpaint_vad::model::{load_checkpoint, save_checkpoint, Variant};
use inpaint_vad::train::{train, ModelConfig, TrainConfig};
use inpaint_vad::Exec;

fn main() -> inpaint_vad::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: usize| args.get(i).map_or(d, |s| s.parse().expect("integer argument"));
    let steps = arg(0, 2000);
    let context_len = arg(1, 4);
    let batch = arg(2, 4);
    let variant: Variant = args.get(3).map_or(Ok(Variant::Full), |s| s.parse())?;
    let seed = arg(4, 0) as u64;

    let glyphs = synthetic_glyphs();
    let data_cfg = MovingConfig::desk();
    let train_set = generate_normal_set(&glyphs, &data_cfg, 500, seed, Exec::Parallel)?;
    let lr: f64 = std::env::var("LR").map_or(3e-3, |v| v.parse().expect("LR"));
    let width: usize = std::env::var("WIDTH").map_or(32, |v| v.parse().expect("WIDTH"));
    let meta: usize = std::env::var("META").map_or(32, |v| v.parse().expect("META"));
    let model = ModelConfig { hidden: 16, context_len, bins: 32, decoder_width: width, meta_hidden: meta, variant };
    let cfg = TrainConfig { steps, batch_size: batch, seed, model, learning_rate: lr, log_interval: 100, ..TrainConfig::default() };
    let cache = std::env::temp_dir().join(format!("desk-{}-{steps}-{context_len}-{batch}-{seed}-{lr}-{width}-{meta}.ckpt", variant.name()));
    let params = match load_checkpoint::<f32>(&cache) {
        Ok(p) => p,
        Err(_) => {
            let clock = Instant::now();
            let (params, logs) = train::<f32>(&cfg, &train_set)?;
            for r in &logs {
                println!("{}", r.to_line());
            }
            println!("train_s\t{:.1}", clock.elapsed().as_secs_f64());
            save_checkpoint(&params, &cache)?;
            params
        }
    };
    for mode in [CorruptionMode::Both, CorruptionMode::TemporalOnly, CorruptionMode::SpatialOnly] {
        let test = build_test_set(&glyphs, &data_cfg, 50, 50, mode, 1000 + seed, Exec::Parallel)?;
        let scored = score_dataset(&params, &test, &EvalConfig::default())?;
        let r = report_for(&scored, "")?;
        println!("{mode:?}\teer {:.3}", r.eer);
        let scored = score_dataset(&params, &test, &EvalConfig { masks: 4, ..EvalConfig::default() })?;
        println!("{mode:?}\teer(4 masks) {:.3}", report_for(&scored, "")?.eer);
    }
    let pairs = spatial_pairs(&glyphs, &data_cfg, 50, 2000 + seed, Exec::Parallel)?;
    let (twins, corrupted): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let st = score_dataset(&params, &twins, &EvalConfig::default())?;
    let sc = score_dataset(&params, &corrupted, &EvalConfig::default())?;
    let ratios = sc.iter().zip(&st).map(|(c, t)| localization_check(c, t)).collect::<inpaint_vad::Result<Vec<_>>>()?;
    let stats = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        format!("mean {m:.5} sd {sd:.5}")
    };
    println!("twin mean_nll\t{}", stats(st.iter().map(|s| s.score.mean_nll).collect()));
    println!("pair delta mean_nll\t{}", stats(sc.iter().zip(&st).map(|(c, t)| c.score.mean_nll - t.score.mean_nll).collect()));
    println!("localization\t{:.3}", ratios.iter().sum::<f64>() / ratios.len() as f64);
    Ok(())
}
