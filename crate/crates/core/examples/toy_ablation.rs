//! Co-tuning versus separate tuning on the synthetic world.
//!
//! `cargo run --release --example toy_ablation -- [seeds] [steps]`

use std::sync::Arc;
use std::time::Instant;

use gpiot::cotune::{evaluate_loss, train, TrainConfig, UpdatePolicy};
use gpiot::pect::ForwardMode;
use gpiot::synth::{build_data, pipeline_exact_match, toy_base, SynthConfig};

fn env<T: std::str::FromStr>(k: &str, d: T) -> T {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() -> gpiot::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let d: usize = env("D", 32);
    let layers: usize = env("L", 2);
    let sc = SynthConfig {
        n_train: env("NTRAIN", 48),
        n_test: env("NTEST", 16),
        cgd_fraction: env("CGDF", 1.0),
        ..SynthConfig::default()
    };
    let t0 = Instant::now();
    for policy in [UpdatePolicy::Pect, UpdatePolicy::Separate] {
        let mut em_sum = 0.0;
        for seed in 0..seeds {
            let data = build_data(&sc, seed)?;
            let base = toy_base(data.vocab.clone(), d, layers, env("SEQ", 72), seed)?;
            let cfg = TrainConfig {
                rank: env("RANK", 8),
                lr_initial: env("LR", 1e-2),
                batch_size: env("BATCH", 4),
                max_steps: Some(steps),
                dropout: env("DROP", 0.0),
                p_ff: Some(env("PFF", 64)),
                seed,
                update_mask: policy,
                mode: ForwardMode::Dual,
                ..TrainConfig::default()
            };
            let mut model = cfg.init_model(base)?;
            let t_before = evaluate_loss(&model, &data.tdd, ForwardMode::Dual)?;
            let c_before = evaluate_loss(&model, &data.cgd, ForwardMode::Dual)?;
            train(&mut model, &data.tdd, &data.cgd, &cfg)?;
            let t_after = evaluate_loss(&model, &data.tdd, ForwardMode::Dual)?;
            let c_after = evaluate_loss(&model, &data.cgd, ForwardMode::Dual)?;
            model.eval();
            let em = pipeline_exact_match(Arc::new(model), ForwardMode::Dual, &data.test, 48)?;
            em_sum += em;
            println!(
                "{policy:?} seed {seed}: tdd {t_before:.3}->{t_after:.3} cgd {c_before:.3}->{c_after:.3} em {em:.3} ({:.0?})",
                t0.elapsed()
            );
        }
        println!("{policy:?} mean em {:.3}", em_sum / seeds as f64);
    }
    Ok(())
}
