//! One pass/fail line per acceptance check, each at its stated tolerance
//! and time budget. Exits non-zero if any check fails.

mod common;

use std::time::{Duration, Instant};

use asif::data::{Batch, BatchIterator, IdentityRegistry};
use asif::harness::{load_datasets, run_single, Checkpoint, ExperimentConfig, Method, RunOutcome};
use asif::losses::{macro_f1, ConfusionMatrix, LossKind};
use asif::model::{
    dgr_update, evaluate_macro_f1, ideal_identification_loss, train_epoch, AsifModel, DgrSign, DgrState, LabelSource,
    ModelConfig, StepConfig, Trainer,
};
use asif::noise::{flip_count, inject_instance_dependent, inject_symmetric, WarmupConfig};
use asif::tensor::Sgd;
use asif::RngStream;
use common::cases::{full_graph, op_cases};
use common::toy_dataset;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (name, case) in op_cases() {
        for seed in 0..50 {
            let w = case(seed);
            if w > 1.0 {
                return Err(format!("{name} seed {seed}: violation ratio {w:.3}"));
            }
            worst = worst.max(w);
            checked += 1;
        }
    }
    for seed in 0..50 {
        let w = full_graph(seed);
        if w > 1.0 {
            return Err(format!("full graph seed {seed}: violation ratio {w:.3}"));
        }
        worst = worst.max(w);
        checked += 1;
    }
    Ok(format!("{checked} instances, worst error/tolerance {worst:.3}"))
}

fn reversal_controller() -> Outcome {
    let ideal = ideal_identification_loss(10).map_err(|e| e.to_string())?;
    if ideal != 10f64.ln() {
        return Err(format!("ideal loss {ideal}"));
    }
    let s = DgrState::dynamic(10).map_err(|e| e.to_string())?;
    let at = |l: f64| dgr_update(&s, l).map(|n| n.lambda).map_err(|e| e.to_string());
    let (fixed_point, double, zero) = (at(ideal)?, at(2.0 * ideal)?, at(0.0)?);
    check(
        s.lambda == 1.0 && fixed_point == 0.0 && double == 1.0 && zero == -1.0,
        format!(
            "initial {} fixed point {fixed_point} at 2L {double} at 0 {zero}",
            s.lambda
        ),
    )
}

fn toy_config(counts: Option<Vec<usize>>) -> ModelConfig {
    ModelConfig {
        input_dim: 4,
        extractor_widths: vec![8, 6],
        num_classes: 3,
        identity_counts: counts,
        id_hidden1: 7,
        id_hidden2: 5,
        dropout: 0.5,
        bn_eps: 1e-5,
        bn_momentum: 0.1,
    }
}

fn head_routing() -> Outcome {
    let data = toy_dataset(3, 10, 4, 7);
    let registry = IdentityRegistry::build(&data);
    let step = |lambda_id| StepConfig {
        lambda_id,
        loss: LossKind::Ce,
        dgr_sign: DgrSign::Suppression,
    };
    let e = |e: asif::AsifError| e.to_string();

    // Isolation: after mixed training, a single-class step moves only that
    // class's private head.
    let model = AsifModel::<f64>::new(toy_config(Some(registry.counts().to_vec())), 3).map_err(e)?;
    let mut trainer = Trainer::new(
        model,
        Sgd::new(0.05, 0.9).map_err(e)?,
        step(1.0),
        None,
        RngStream::new(1),
    )
    .map_err(e)?;
    let mut batches = BatchIterator::new(data.len(), 8, RngStream::new(2)).map_err(e)?;
    let mut jitter = RngStream::new(3);
    train_epoch(&mut trainer, &data, &registry, &mut batches, &mut jitter).map_err(e)?;
    for c in 0..3 {
        let positions: Vec<usize> = (0..data.len())
            .filter(|&p| data.samples()[p].observed_label == c)
            .collect();
        let batch = Batch::<f64>::gather(&data, &registry, &positions, None).map_err(e)?;
        let before = trainer.model.clone();
        trainer.train_step(&batch).map_err(e)?;
        let idm = before.identifier.as_ref().expect("identifier present");
        for h in 0..3 {
            for id in idm.head_params(h) {
                let moved = before.params.get(id).data() != trainer.model.params.get(id).data();
                if moved != (h == c) {
                    return Err(format!("class-{c} batch: head {h} moved = {moved}"));
                }
            }
        }
    }

    // Zero identifier weight is bit-for-bit plain cross-entropy training.
    let run = |with_identifier: bool| -> Result<AsifModel<f64>, String> {
        let counts = with_identifier.then(|| registry.counts().to_vec());
        let model = AsifModel::<f64>::new(toy_config(counts), 11).map_err(e)?;
        let mut t = Trainer::new(
            model,
            Sgd::new(0.05, 0.9).map_err(e)?,
            step(0.0),
            None,
            RngStream::new(5),
        )
        .map_err(e)?;
        let mut b = BatchIterator::new(data.len(), 8, RngStream::new(4)).map_err(e)?;
        let mut j = RngStream::new(10);
        for _ in 0..5 {
            train_epoch(&mut t, &data, &registry, &mut b, &mut j).map_err(e)?;
        }
        Ok(t.model)
    };
    let (ce, asif) = (run(false)?, run(true)?);
    let mut compared = 0;
    for id in ce.backbone_params() {
        let name = ce.params.name(id);
        let other = asif.params.find(name).ok_or(format!("{name} missing"))?;
        let a: Vec<u64> = ce.params.get(id).data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = asif.params.get(other).data().iter().map(|v| v.to_bits()).collect();
        if a != b {
            return Err(format!("{name} differs from cross-entropy training"));
        }
        compared += a.len();
    }
    Ok(format!("heads isolated; {compared} backbone values bit-identical"))
}

fn label_noise() -> Outcome {
    let e = |e: asif::AsifError| e.to_string();
    let grid = [0.0, 0.2, 0.4, 0.6, 0.7, 0.8, 0.9];
    let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
    for eta in grid {
        let noisy = inject_symmetric(&labels, eta, 10, &mut RngStream::new(1)).map_err(e)?;
        let flips = labels.iter().zip(&noisy).filter(|(a, b)| a != b).count();
        if flips != flip_count(labels.len(), eta).map_err(e)? {
            return Err(format!("symmetric eta {eta}: {flips} flips"));
        }
    }
    let data = toy_dataset(3, 10, 4, 2);
    let warmup = WarmupConfig {
        epochs: 2,
        batch_size: 8,
        extractor_widths: vec![8],
        ..WarmupConfig::default()
    };
    for eta in grid {
        let (_, ledger) = inject_instance_dependent(&data, eta, &warmup, 3).map_err(e)?;
        if ledger.flipped_count() != flip_count(data.len(), eta).map_err(e)? {
            return Err(format!(
                "instance-dependent eta {eta}: {} flips",
                ledger.flipped_count()
            ));
        }
    }

    let classes = 10;
    let labels: Vec<usize> = (0..20_000).map(|i| i % classes).collect();
    let noisy = inject_symmetric(&labels, 0.5, classes, &mut RngStream::new(17)).map_err(e)?;
    let mut counts = vec![vec![0usize; classes]; classes];
    let mut flips = 0;
    for (&t, &o) in labels.iter().zip(&noisy) {
        if t != o {
            counts[t][o] += 1;
            flips += 1;
        }
    }
    let mut stat = 0.0;
    for (t, row) in counts.iter().enumerate() {
        let expected = row.iter().sum::<usize>() as f64 / (classes - 1) as f64;
        if row[t] != 0 {
            return Err(format!("class {t} mapped to itself"));
        }
        stat += row
            .iter()
            .enumerate()
            .filter(|(o, _)| *o != t)
            .map(|(_, &k)| (k as f64 - expected).powi(2) / expected)
            .sum::<f64>();
    }
    let p = 1.0
        - ChiSquared::new((classes * (classes - 2)) as f64)
            .map_err(|e| e.to_string())?
            .cdf(stat);
    check(
        flips == 10_000 && p > 0.01,
        format!("exact counts on the grid; {flips} flips, chi2 p = {p:.3}"),
    )
}

fn base(method: Method, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        method,
        seed,
        batch_size: 32,
        lr: 0.01,
        epochs: 100,
        extractor_widths: vec![64],
        ..ExperimentConfig::default()
    }
}

fn run(config: &ExperimentConfig) -> Result<RunOutcome, String> {
    run_single(config).map_err(|e| format!("{:?} seed {}: {e}", config.method, config.seed))
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn identity_probe() -> Outcome {
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let config = |method| ExperimentConfig {
            extractor_widths: vec![16],
            epochs: 300,
            dropout: 0.0,
            lambda_id: 10.0,
            probe: true,
            ..base(method, seed)
        };
        let probe = |c: &ExperimentConfig| -> Result<f64, String> {
            Ok(run(c)?.report.probe.expect("probe enabled").best_loss)
        };
        let ce = probe(&config(Method::Ce))?;
        let asif = probe(&config(Method::Asif))?;
        if asif > ce + 0.2 {
            wins += 1;
        }
        detail.push(format!("{asif:.3} vs {ce:.3}"));
    }
    check(
        wins >= 2,
        format!(
            "ASIF vs CE probe loss {}; {wins}/3 seeds by > 0.2 nats",
            detail.join(", ")
        ),
    )
}

fn noisy_pair(seed: u64) -> Result<(RunOutcome, RunOutcome), String> {
    let config = |method| ExperimentConfig {
        noise: asif::noise::NoiseKind::Symmetric,
        eta: 0.6,
        detect: true,
        dropout: 0.0,
        lambda_id: 10.0,
        ..base(method, seed)
    };
    Ok((run(&config(Method::Ce))?, run(&config(Method::Asif))?))
}

fn noise_robustness_and_detection() -> (Outcome, Outcome) {
    let mut f1_wins = 0;
    let mut det_wins = 0;
    let mut above_baseline = true;
    let (mut f1s, mut dets) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let (ce, asif) = match noisy_pair(seed) {
            Ok(p) => p,
            Err(e) => return (Err(e.clone()), Err(e)),
        };
        let (fc, fa) = (ce.report.final_test_macro_f1, asif.report.final_test_macro_f1);
        let last = |r: &RunOutcome| r.report.detection.as_ref().expect("detection enabled").last.f1;
        let (dc, da) = (last(&ce), last(&asif));
        f1_wins += usize::from(fa >= fc);
        det_wins += usize::from(da >= dc);
        above_baseline &= dc > 0.6 && da > 0.6;
        f1s.push(format!("{fa:.3} vs {fc:.3}"));
        dets.push(format!("{da:.3} vs {dc:.3}"));
    }
    (
        check(
            f1_wins >= 2,
            format!("ASIF vs CE test macro-F1 {}; {f1_wins}/3 seeds", f1s.join(", ")),
        ),
        check(
            det_wins >= 2 && above_baseline,
            format!(
                "ASIF vs CE final detection F1 {}; {det_wins}/3 seeds, baseline 0.6",
                dets.join(", ")
            ),
        ),
    )
}

fn pruning_curve() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for seed in SEEDS {
        let config = ExperimentConfig {
            syn_noise_std: 0.2,
            syn_separation: 10.0,
            prune: true,
            ..base(Method::Asif, seed)
        };
        if config.synthetic_spec().class_dims != 8 || config.synthetic_spec().feature_dim() != 64 {
            return Err("synthetic layout is not 8 of 64".into());
        }
        let out = run(&config)?;
        let curve = out.report.pruning.expect("pruning enabled");
        let full = curve.steps[0].best_accuracy;
        let at8 = curve
            .steps
            .iter()
            .find(|s| s.retained_dims == 8)
            .ok_or("no 8-dim step")?
            .best_accuracy;
        ok &= at8 >= 0.95 * full;
        detail.push(format!("{at8:.3}/{full:.3}"));
    }
    check(ok, format!("accuracy at 8 dims / full width: {}", detail.join(", ")))
}

fn loss_identities() -> Outcome {
    let mut worst = 0.0f64;
    for k in 1..100 {
        let p = k as f64 / 100.0;
        let ce = LossKind::Ce.of_target_prob(p);
        worst = worst.max((LossKind::Gce { q: 1e-12 }.of_target_prob(p) - ce).abs());
        worst = worst.max((LossKind::Gce { q: 1.0 }.of_target_prob(p) - (1.0 - p)).abs());
        for tau in [2.0, 10.0, 50.0] {
            let ph = LossKind::Phuber { tau }.of_target_prob(p);
            if p > 1.0 / tau {
                worst = worst.max((ph - ce).abs());
            } else {
                worst = worst.max((ph - (-tau * p + f64::ln(tau) + 1.0)).abs());
            }
            worst = worst.max((LossKind::Phuber { tau }.of_target_prob(1.0 / tau) - f64::ln(tau)).abs());
        }
    }
    let e = |e: asif::AsifError| e.to_string();
    let f1 = |t: &[usize], p: &[usize], c| -> Result<f64, String> {
        macro_f1(&ConfusionMatrix::from_predictions(t, p, c).map_err(e)?).map_err(e)
    };
    let perfect = f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3)?;
    let half = f1(&[0, 0, 1, 1], &[0, 1, 0, 1], 2)?;
    let none = f1(&[0, 0, 1, 1], &[1, 1, 0, 0], 2)?;
    check(
        worst <= 1e-9 && perfect == 1.0 && half == 0.5 && none == 0.0,
        format!("worst identity error {worst:.2e}; macro-F1 oracles {perfect}, {half}, {none}"),
    )
}

fn determinism() -> Outcome {
    let config = ExperimentConfig {
        syn_per_class: 20,
        noise: asif::noise::NoiseKind::Symmetric,
        eta: 0.2,
        detect: true,
        epochs: 10,
        ..base(Method::Asif, 4)
    };
    let a = run(&config)?;
    let b = run(&config)?;
    let same = a.report.metrics_jsonl() == b.report.metrics_jsonl()
        && serde_json::to_string(&a.report).ok() == serde_json::to_string(&b.report).ok();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    a.write(dir.path()).map_err(|e| e.to_string())?;
    let ckpt = Checkpoint::load(&dir.path().join("checkpoint.bin")).map_err(|e| e.to_string())?;
    let mut model = ckpt.model().map_err(|e| e.to_string())?;
    let (_, test) = load_datasets(&ckpt.experiment).map_err(|e| e.to_string())?;
    let f1 = evaluate_macro_f1(&mut model, &test, LabelSource::True).map_err(|e| e.to_string())?;
    let gap = (f1 - a.report.final_test_macro_f1).abs();
    check(
        same && gap <= 1e-9,
        format!("reruns identical: {same}; reloaded test F1 gap {gap:.1e}"),
    )
}

fn report(name: &str, outcome: &Outcome, elapsed: Duration, budget: Duration) -> bool {
    let within = elapsed <= budget;
    let (status, detail) = match outcome {
        Ok(d) if within => ("PASS", d.clone()),
        Ok(d) => ("FAIL", format!("{d}; over time budget")),
        Err(d) => ("FAIL", d.clone()),
    };
    println!(
        "{status} {name:<22} [{:.1}s / {}s] {detail}",
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    status == "PASS"
}

fn main() {
    let secs = Duration::from_secs;
    let mut all = true;
    let timed = |f: fn() -> Outcome| {
        let start = Instant::now();
        let out = f();
        (out, start.elapsed())
    };
    for (n, f, budget) in [
        ("gradients", gradients as fn() -> Outcome, secs(30)),
        ("reversal controller", reversal_controller, secs(1)),
        ("head routing", head_routing, secs(30)),
        ("label noise", label_noise, secs(30)),
        ("identity probe", identity_probe, secs(300)),
    ] {
        let (out, t) = timed(f);
        all &= report(n, &out, t, budget);
    }
    let start = Instant::now();
    let (robust, detect) = noise_robustness_and_detection();
    let t = start.elapsed();
    // Both checks share the same runs, so each is held to the budget.
    all &= report("noise robustness", &robust, t, secs(300));
    all &= report("noisy-label detection", &detect, t, secs(300));
    for (n, f, budget) in [
        ("pruning curve", pruning_curve as fn() -> Outcome, secs(300)),
        ("loss identities", loss_identities, secs(1)),
        ("determinism", determinism, secs(60)),
    ] {
        let (out, t) = timed(f);
        all &= report(n, &out, t, budget);
    }
    if !all {
        std::process::exit(1);
    }
}
