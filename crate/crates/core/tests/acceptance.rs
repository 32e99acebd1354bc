//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 3 7`.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use tabimpute::cli::{cmd_impute, resolve, Overrides, Profile};
use tabimpute::diffusion::{
    sample_unconditional, sm_loss_with_draws, GaussianScore, LossDraws, NoiseSchedule, Parameterization, SamplerConfig,
    ScoreNet,
};
use tabimpute::emloop::{e_step, impute_out_of_sample, inpaint_once, m_step, run_em, CheckpointOptions, EmConfig};
use tabimpute::evalkit::{mae, split_train_test, synth_generate, SyntheticSpec};
use tabimpute::missingness::{generate, mar, mcar, mnar, MaskSpec, Mechanism};
use tabimpute::ndcore::{DenoiserParams, Mask, Matrix};
use tabimpute::rng::seeded;
use tabimpute::tabular::{
    analog_bits, analog_bits_decode, bit_width, decode, encode, encode_with, Cell, ColumnSpec, TabularDataset,
};

type Outcome = Result<String>;

/// Analytic-gradient vs central finite differences, d = 3, hidden = 8.
fn c1_gradient() -> Outcome {
    let mut rng = seeded(1);
    let sched = NoiseSchedule::default();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for param in [Parameterization::Preconditioned, Parameterization::Raw] {
        let params = DenoiserParams::new(3, 8, &mut rng)?;
        let x0 = Matrix::from_vec(6, 3, (0..18).map(|_| rng.sample(StandardNormal)).collect())?;
        let draws = LossDraws::sample(6, 3, &sched, &mut rng);
        let loss = |p: &DenoiserParams| sm_loss_with_draws(p, param, &x0, draws.clone(), &sched).map(|l| l.loss);
        let analytic: Vec<f64> = sm_loss_with_draws(&params, param, &x0, draws.clone(), &sched)?
            .grads
            .tensors()
            .concat();
        let h = 1e-5;
        let mut idx = 0;
        for ti in 0..params.tensors().len() {
            for k in 0..params.tensors()[ti].len() {
                let mut plus = params.clone();
                plus.tensors_mut()[ti][k] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti][k] -= h;
                let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * h);
                let a = analytic[idx];
                // Gradients below 1e-8 are compared absolutely.
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
                ensure!(rel < 1e-4, "{param:?} tensor {ti} entry {k}: analytic {a:e}, finite difference {fd:e}");
                idx += 1;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} parameters, worst relative error {worst:.2e}"))
}

fn mixed_dataset(rows: usize, seed: u64) -> Result<TabularDataset> {
    let mut rng = seeded(seed);
    let specs = vec![
        ColumnSpec::numeric("a"),
        ColumnSpec::categorical("colour", ["red", "green", "blue"]),
        ColumnSpec::numeric("b"),
    ];
    let data = (0..rows)
        .map(|_| {
            let a: f64 = rng.sample::<f64, _>(StandardNormal) * 3.7 + 120.0;
            let b: f64 = rng.random_range(-1e-3..1e-3);
            vec![Cell::Numeric(a), Cell::Category(rng.random_range(0..3)), Cell::Numeric(b)]
        })
        .collect();
    Ok(TabularDataset::new(specs, data)?)
}

/// Observed entries survive e_step and run_em bit-exactly and decode back.
fn c2_observed_exact() -> Outcome {
    let mut cells = 0;
    for seed in 0..3 {
        let ds = mixed_dataset(80, seed)?;
        let mask = generate(&MaskSpec::new(Mechanism::Mcar, 0.3, 10 + seed), &ds.numeric_view())?.mask;
        let enc = encode(&ds.with_missing(&mask)?)?;
        let mut cfg = EmConfig {
            iterations: 2,
            epochs: 3,
            batch_size: 32,
            hidden_dim: 8,
            seed,
            ..EmConfig::desk()
        };
        cfg.sampler.steps = 10;
        cfg.sampler.repeats = 2;
        cfg.sampler.resample = 2;

        let params = cfg.init_params(enc.width(), 0)?;
        let model = ScoreNet::new(&params, cfg.parameterization);
        let x = e_step(&enc.values, &enc.mask, &model, &cfg.schedule, &cfg.sampler, seed)?;
        let res = run_em(&enc, &cfg, &CheckpointOptions::default())?;
        for out in [&x, &res.imputed.values] {
            for (i, (&a, &b)) in out.data().iter().zip(enc.values.data()).enumerate() {
                if !enc.mask.bits()[i] {
                    ensure!(a.to_bits() == b.to_bits(), "encoded entry {i} changed: {b} -> {a}");
                    cells += 1;
                }
            }
        }
        let back = decode(&res.imputed, &ds.specs)?;
        for r in 0..ds.n_rows() {
            for c in 0..ds.n_cols() {
                if mask.is_missing(r, c) {
                    continue;
                }
                match (&ds.rows[r][c], &back.rows[r][c]) {
                    (Cell::Numeric(t), Cell::Numeric(v)) => {
                        ensure!((v - t).abs() <= 1e-9 * t.abs(), "row {r} col {c}: {t} decoded as {v}")
                    }
                    (t, v) => ensure!(t == v, "row {r} col {c}: {t:?} decoded as {v:?}"),
                }
            }
        }
    }
    Ok(format!("{cells} observed encoded entries unchanged, decode exact"))
}

/// Exhaustive analog-bit round trip and clamping.
fn c3_analog_bits() -> Outcome {
    let mut n = 0;
    for c in 2..=64usize {
        for i in 0..c {
            let bits = analog_bits(i, c)?;
            ensure!(analog_bits_decode(&bits, c) == i, "C = {c}, i = {i}");
            n += 1;
        }
        let width = bit_width(c);
        for raw in c..(1usize << width) {
            let bits: Vec<f64> = (0..width).rev().map(|b| ((raw >> b) & 1) as f64).collect();
            ensure!(analog_bits_decode(&bits, c) == c - 1, "C = {c}: pattern {raw} not clamped");
        }
    }
    Ok(format!("{n} round trips, out-of-range patterns clamp"))
}

/// Closed-form perturbed-Gaussian score through inpaint_once.
fn c4_analytic_inpaint() -> Outcome {
    let model = GaussianScore::new(vec![0.0, 0.0], vec![vec![1.0, 0.8], vec![0.8, 1.0]])?;
    let n = 2000;
    let mut x = Matrix::zeros(n, 2);
    let mut mask = Mask::none(n, 2);
    for r in 0..n {
        x.set(r, 0, 1.0);
        mask.set(r, 1, true);
    }
    let cfg = SamplerConfig::default();
    ensure!(cfg.steps == 50, "expected the 50-step ladder");
    let out = inpaint_once(&x, &mask, &model, &NoiseSchedule::default(), &cfg, &mut seeded(2024))?;
    let v: Vec<f64> = (0..n).map(|r| out.get(r, 1)).collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    // Conditional law: N(0.8, 0.36).
    let se = 0.6 / (n as f64).sqrt();
    let detail = format!("mean {mean:.4} (target 0.8 +- {:.4}), std {sd:.4} (target 0.6 +- 10%)", 3.0 * se);
    ensure!((mean - 0.8).abs() < 3.0 * se && (sd / 0.6 - 1.0).abs() < 0.1, "{detail}");
    Ok(detail)
}

/// One desk-profile EM run on the 2D Gaussian (rho 0.8); criteria 5 and 9
/// read its in-sample and out-of-sample errors.
struct GaussianRun {
    in_sample: Vec<f64>,
    out_of_sample: f64,
    train_rows: usize,
    secs: f64,
}

fn gaussian_run() -> Result<GaussianRun> {
    let t = Instant::now();
    // 7143 rows split 70/30 leaves 5000 for training.
    let (full, _) = synth_generate(&SyntheticSpec::gaussian(2, 0.8, 7143, 1))?;
    let (train, test) = split_train_test(&full, 0.7, 5)?;
    let masks = |ds: &TabularDataset, seed| generate(&MaskSpec::new(Mechanism::Mcar, 0.3, seed), &ds.numeric_view());
    let (m_train, m_test) = (masks(&train, 2)?.mask, masks(&test, 3)?.mask);
    let enc = encode(&train.with_missing(&m_train)?)?;
    let truth = encode_with(&train, &enc.stats)?;
    let cfg = EmConfig {
        iterations: 3,
        seed: 11,
        ..EmConfig::desk()
    };
    let res = run_em(&enc, &cfg, &CheckpointOptions::default())?;
    let in_sample = res
        .snapshots
        .iter()
        .map(|s| mae(s, &truth.values, &enc.mask))
        .collect::<tabimpute::Result<Vec<_>>>()?;
    let test_enc = encode_with(&test.with_missing(&m_test)?, &enc.stats)?;
    let test_truth = encode_with(&test, &enc.stats)?;
    let out = impute_out_of_sample(&res.params, &test_enc, &cfg)?;
    Ok(GaussianRun {
        in_sample,
        out_of_sample: mae(&out.values, &test_truth.values, &test_enc.mask)?,
        train_rows: train.n_rows(),
        secs: t.elapsed().as_secs_f64(),
    })
}

fn c5_oracle_gap(run: &Result<GaussianRun>) -> Outcome {
    let run = run.as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))?;
    let oracle = 0.6 * (2.0 / PI).sqrt();
    let got = *run.in_sample.last().context("no snapshots")?;
    let detail = format!(
        "{} training rows, MAE by k {:.4?}, final {got:.4} vs threshold {:.4} ({:.0}s)",
        run.train_rows,
        run.in_sample,
        1.15 * oracle,
        run.secs
    );
    ensure!(run.train_rows == 5000 && got <= 1.15 * oracle, "{detail}");
    Ok(detail)
}

fn c9_out_of_sample(run: &Result<GaussianRun>) -> Outcome {
    let run = run.as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))?;
    let ins = *run.in_sample.last().context("no snapshots")?;
    let ratio = run.out_of_sample / ins;
    let detail = format!("out-of-sample {:.4} vs in-sample {ins:.4} (ratio {ratio:.3})", run.out_of_sample);
    ensure!((ratio - 1.0).abs() <= 0.2, "{detail}");
    Ok(detail)
}

/// Median in-sample MAE over 10 seeds on the 4D two-component mixture.
fn c6_iterations_help() -> Outcome {
    let mut per_k = vec![Vec::new(); 4];
    for seed in 0..10u64 {
        let (ds, _) = synth_generate(&SyntheticSpec::two_component_mixture(1000, 100 + seed))?;
        let mask = generate(&MaskSpec::new(Mechanism::Mcar, 0.3, 200 + seed), &ds.numeric_view())?.mask;
        let enc = encode(&ds.with_missing(&mask)?)?;
        let truth = encode_with(&ds, &enc.stats)?;
        let mut cfg = EmConfig {
            iterations: 3,
            hidden_dim: 64,
            epochs: 100,
            seed: 300 + seed,
            ..EmConfig::desk()
        };
        cfg.sampler.resample = 10;
        let res = run_em(&enc, &cfg, &CheckpointOptions::default())?;
        for (k, s) in res.snapshots.iter().enumerate() {
            per_k[k].push(mae(s, &truth.values, &enc.mask)?);
        }
    }
    let med: Vec<f64> = per_k
        .iter_mut()
        .map(|v| {
            v.sort_by(f64::total_cmp);
            (v[4] + v[5]) / 2.0
        })
        .collect();
    let detail = format!("median MAE k=0..3: {med:.4?}");
    ensure!(med[3] < med[1] && med[1] < med[0], "{detail}");
    Ok(detail)
}

/// Empirical missing ratios at 10^4 x 8 and seed reproducibility.
fn c7_mask_calibration() -> Outcome {
    let (ds, _) = synth_generate(&SyntheticSpec::gaussian(8, 0.5, 10_000, 7))?;
    let x = ds.numeric_view();
    let obs = [0usize, 3, 5];
    let maskable = |m: &Mask| {
        let n = (0..m.rows())
            .flat_map(|r| (0..8).filter(|c| !obs.contains(c)).map(move |c| (r, c)))
            .filter(|&(r, c)| m.is_missing(r, c))
            .count();
        n as f64 / (m.rows() * (8 - obs.len())) as f64
    };
    let a = mcar(10_000, 8, 0.3, 1)?;
    let b = mar(&x, 0.3, &obs, 1)?;
    let c = mnar(&x, 0.3, 1)?;
    let ratios = [a.missing_ratio(), maskable(&b), c.missing_ratio()];
    let detail = format!("MCAR {:.4}, MAR {:.4} (maskable columns), MNAR {:.4}", ratios[0], ratios[1], ratios[2]);
    ensure!(ratios.iter().all(|r| (r - 0.3).abs() <= 0.01), "{detail}");
    ensure!(
        (0..10_000).all(|r| obs.iter().all(|&col| !b.is_missing(r, col))),
        "MAR masked an always-observed column"
    );
    ensure!(a == mcar(10_000, 8, 0.3, 1)?, "MCAR not reproducible");
    ensure!(b == mar(&x, 0.3, &obs, 1)?, "MAR not reproducible");
    ensure!(c == mnar(&x, 0.3, 1)?, "MNAR not reproducible");
    Ok(detail)
}

/// Unconditional samples from models trained on N(0,1) and on {-2, +2}.
fn c8_unconditional() -> Outcome {
    let mut rng = seeded(1);
    let gauss: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let two: Vec<f64> = (0..5000).map(|i| if i % 2 == 0 { -2.0 } else { 2.0 }).collect();
    let cfg = EmConfig {
        epochs: 200,
        hidden_dim: 64,
        ..EmConfig::desk()
    };
    let draw = |values: Vec<f64>| -> Result<Vec<f64>> {
        let x = Matrix::from_vec(5000, 1, values)?;
        let out = m_step(&x, &cfg, &cfg.init_params(1, 0)?, &mut seeded(2))?;
        let model = ScoreNet::new(&out.params, cfg.parameterization);
        Ok(sample_unconditional(&model, &cfg.schedule, &cfg.sampler, 5000, &mut seeded(3))?.into_vec())
    };
    let s = draw(gauss)?;
    let mean = s.iter().sum::<f64>() / 5000.0;
    let sd = (s.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4999.0).sqrt();
    let s = draw(two)?;
    let near = s.iter().filter(|a| (a.abs() - 2.0).abs() < 0.5).count() as f64 / 5000.0;
    let left = s.iter().filter(|a| (**a + 2.0).abs() < 0.5).count() as f64 / 5000.0;
    let right = near - left;
    let detail = format!(
        "N(0,1): mean {mean:.3}, std {sd:.3}; two modes: {:.1}% near a mode, split {:.1}% / {:.1}%",
        100.0 * near,
        100.0 * left,
        100.0 * right
    );
    ensure!(mean.abs() < 0.1 && (0.85..=1.15).contains(&sd), "{detail}");
    ensure!(near >= 0.95, "{detail}");
    ensure!([left, right].iter().all(|m| (0.4..=0.6).contains(m)), "{detail}");
    Ok(detail)
}

fn impute_with_workers(config: &Path, out: &Path, workers: usize) -> Result<()> {
    let cfg = resolve(
        Some(config),
        &Overrides {
            profile: Some(Profile::Desk),
            ..Overrides::default()
        },
    )?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    pool.install(|| cmd_impute(&cfg, out))?;
    Ok(())
}

fn report_without_timing(dir: &Path) -> Result<serde_json::Value> {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json"))?)?;
    v.as_object_mut().context("report is not an object")?.remove("runtime");
    if let Some(traces) = v.get_mut("loss_traces").and_then(|t| t.as_array_mut()) {
        for rec in traces.iter_mut().filter_map(|r| r.as_object_mut()) {
            rec.remove("m_step_secs");
            rec.remove("e_step_secs");
        }
    }
    Ok(v)
}

/// cmd_impute twice with 1 and 3 workers: identical CSVs and reports.
fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("experiment.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "data": {"synthetic": {"family": "gaussian", "mean": [0.0, 0.0, 0.0],
                "cov": [[1.0, 0.5, 0.2], [0.5, 1.0, 0.5], [0.2, 0.5, 1.0]], "rows": 400, "seed": 3}},
            "mask": {"generate": {"mechanism": "MCAR", "ratio": 0.3}},
            "seed": 17,
            "em": {"iterations": 2, "epochs": 5, "hidden_dim": 16,
                   "sampler": {"steps": 20, "repeats": 3, "resample": 3}}
        })
        .to_string(),
    )?;
    let (a, b) = (dir.path().join("w1"), dir.path().join("w3"));
    impute_with_workers(&config, &a, 1)?;
    impute_with_workers(&config, &b, 3)?;
    let mut compared = Vec::new();
    for f in ["imputed_train.csv", "imputed_test.csv", "masks/train_mask.csv", "masks/test_mask.csv", "config.json"] {
        ensure!(std::fs::read(a.join(f))? == std::fs::read(b.join(f))?, "{f} differs between worker counts");
        compared.push(f);
    }
    ensure!(report_without_timing(&a)? == report_without_timing(&b)?, "report.json differs beyond timing");
    compared.push("report.json");
    Ok(format!("identical across 1 and 3 workers: {}", compared.join(", ")))
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let shared = if wanted(5) || wanted(9) { Some(gaussian_run()) } else { None };
    let shared = shared.as_ref();
    let checks: Vec<(usize, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "gradient oracle", Box::new(c1_gradient)),
        (2, "observed-entry exactness", Box::new(c2_observed_exact)),
        (3, "analog-bit round trip", Box::new(c3_analog_bits)),
        (4, "closed-form score inpainting", Box::new(c4_analytic_inpaint)),
        (5, "end-to-end oracle gap", Box::new(|| c5_oracle_gap(shared.unwrap()))),
        (6, "iterative improvement", Box::new(c6_iterations_help)),
        (7, "mask calibration", Box::new(c7_mask_calibration)),
        (8, "unconditional sampling", Box::new(c8_unconditional)),
        (9, "out-of-sample parity", Box::new(|| c9_out_of_sample(shared.unwrap()))),
        (10, "determinism across workers", Box::new(c10_determinism)),
    ];
    let mut failed = 0;
    for (n, name, check) in checks.into_iter().filter(|(n, ..)| wanted(*n)) {
        let t = Instant::now();
        match check() {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS  {detail}  [{:.1}s]", t.elapsed().as_secs_f64()),
            Err(e) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL  {e:#}  [{:.1}s]", t.elapsed().as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
