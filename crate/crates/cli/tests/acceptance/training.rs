use easyasr_core::config::ClusterSpec;
use easyasr_core::synth::{toy_config, toy_records};
use easyasr_core::trainer::evaluate;
use easyasr_core::{EncoderKind, Trainer};

use crate::{ensure, Outcome};

pub fn data_parallel() -> Outcome {
    let mut cfg = toy_config();
    cfg.training.max_steps = 10;
    cfg.training.eval_every = 10;
    let (vocab, records) = toy_records(&cfg.features, 3);
    let mut single_cfg = cfg.clone();
    single_cfg.training.batch_size_per_worker = 8;
    let mut multi_cfg = cfg.clone();
    multi_cfg.training.batch_size_per_worker = 2;
    let err = |e: easyasr_core::TrainerError| e.to_string();
    let mut single = Trainer::new(&single_cfg, ClusterSpec::single(), &vocab, records.clone()).map_err(err)?;
    let mut multi = Trainer::new(&multi_cfg, ClusterSpec::with_workers(4), &vocab, records).map_err(err)?;
    for step in 1..=10 {
        single.step().map_err(err)?;
        multi.step().map_err(err)?;
        let digests = multi.replica_digests();
        ensure(digests.iter().all(|&d| d == digests[0]), || format!("replicas diverged at step {step}"))?;
    }
    // per-tensor ‖a − b‖ / ‖b‖
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    for (name, a) in single.model().params.iter() {
        let b = multi.model().params.get(name).unwrap();
        let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm = b.data().iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
        if diff / norm > worst {
            worst = diff / norm;
            worst_name = name.clone();
        }
    }
    ensure(worst < 1e-6, || format!("max relative difference {worst:.2e} at {worst_name}"))?;
    Ok(format!("10 steps, replicas bitwise identical, max relative difference {worst:.1e}"))
}

pub fn overfit() -> Outcome {
    let mut cfg = toy_config();
    cfg.training.max_steps = 2000;
    cfg.training.eval_every = 25;
    let e = &cfg.encoder_params;
    ensure(
        cfg.encoder == EncoderKind::Transformer && e.encoder_layers == 2 && e.hidden_dim == 64 && cfg.loss_params.lambda_value == 0.30,
        || "unexpected toy model shape".into(),
    )?;
    let (vocab, records) = toy_records(&cfg.features, 3);
    let err = |e: easyasr_core::TrainerError| e.to_string();
    let mut trainer = Trainer::new(&cfg, ClusterSpec::single(), &vocab, records.clone()).map_err(err)?;
    let mut last = 1.0;
    while trainer.step_index() < cfg.training.max_steps {
        trainer.step().map_err(err)?;
        if trainer.step_index() % cfg.training.eval_every == 0 {
            last = evaluate(trainer.model(), &vocab, &records).map_err(err)?.cer;
            if last == 0.0 {
                return Ok(format!("training CER 0 at step {}", trainer.step_index()));
            }
        }
    }
    Err(format!("training CER {last:.4} after 2000 steps"))
}
