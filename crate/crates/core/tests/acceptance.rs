//! Exit-gate checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `POINTNORM_ACCEPTANCE_ONLY=1,4,9` restricts the run to the listed
//! criteria.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pointnorm::cli::ablate::{mean_oa_by_cell, run_ablation, AxisValues};
use pointnorm::cli::bench::{bench, BenchConfig};
use pointnorm::cli::config::{DataSpec, Preset, RunConfig};
use pointnorm::cli::train::{train_run, CHECKPOINT_DIR, FINAL_CHECKPOINT};
use pointnorm::data::{synth_datasets, SynthSpec};
use pointnorm::dualnorm::{
    delta_for, delta_report, point_normalize_parts, AffineVars, NormAffine, Regime, StatsMode, DEFAULT_EPS,
};
use pointnorm::geometry::{centroid, farthest_point_sample, knn_group, squared_distance, Point, SeedRule};
use pointnorm::gradsuite::{dualnorm_check, dualnorm_variants, op_cases, over_seeds};
use pointnorm::network::{count_params_flops, BlockKind, ModelConfig, Phase, PointNormNet};
use pointnorm::tensor::{GradCheckConfig, Graph, Tensor};
use pointnorm::train::{evaluate, TrainConfig, Trainer};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// Class count the size targets assume.
const CLASSES: usize = 15;
const FULL_PARAMS: f64 = 12.63e6;
const FULL_FLOPS: f64 = 14.59e9;
const TINY_PARAMS: f64 = 0.68e6;

// 1. gradient suite

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cfg = GradCheckConfig::default();
    let mut worst = (String::new(), 0.0f64);
    let mut failed = Vec::new();
    let mut cases = 0;
    let mut record = |name: &str, r: pointnorm::Result<pointnorm::gradsuite::CaseOutcome>| {
        cases += 1;
        match r {
            Ok(o) => {
                if o.max_rel_err > worst.1 {
                    worst = (name.to_string(), o.max_rel_err);
                }
                if !o.passed || o.checked == 0 {
                    failed.push(format!("{name} ({:.2e})", o.max_rel_err));
                }
            }
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    };
    for c in op_cases() {
        record(c.name, over_seeds(c.name, 100, |s| (c.run)(s, &cfg)));
    }
    for (name, mode, flags) in dualnorm_variants() {
        record(&name, over_seeds(&name, 100, |s| dualnorm_check(s, mode, flags, &cfg)));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failed.is_empty() && secs < 120.0,
        format!(
            "{cases} cases x 100 seeds, worst {} at {:.2e} (tol 1e-4), {secs:.1}s (limit 120s){}",
            worst.0,
            worst.1,
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(", "))
            }
        ),
    )
}

// 2. sampling and grouping oracles

/// Recomputes every min-distance from scratch at each step.
fn fps_reference(coords: &[Point], m: usize) -> Vec<usize> {
    let c = centroid(coords);
    let mut first = 0;
    for i in 1..coords.len() {
        if squared_distance(&coords[i], &c) > squared_distance(&coords[first], &c) {
            first = i;
        }
    }
    let mut chosen = vec![first];
    while chosen.len() < m {
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..coords.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&j| squared_distance(&coords[i], &coords[j]))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        chosen.push(best.unwrap());
    }
    chosen
}

fn knn_reference(coords: &[Point], q: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = coords
        .iter()
        .enumerate()
        .map(|(i, p)| (squared_distance(p, &coords[q]), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all[..k].iter().map(|&(_, i)| i).collect()
}

fn random_cloud(rng: &mut impl Rng, n: usize) -> Vec<Point> {
    // a coarse lattice produces distance ties on purpose
    let lattice = rng.random_bool(0.3);
    (0..n)
        .map(|_| {
            std::array::from_fn(|_| {
                if lattice {
                    rng.random_range(-3i32..=3) as f64
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
        })
        .collect()
}

fn sampling_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut fps_cases = 0;
    let mut mismatches = Vec::new();
    for cloud in 0..1000 {
        let n = rng.random_range(1..=64);
        let coords = random_cloud(&mut rng, n);
        let reference = fps_reference(&coords, n);
        for m in 1..=n {
            fps_cases += 1;
            let got = farthest_point_sample(&coords, m, SeedRule::FarthestFromCentroid).unwrap();
            if got[..] != reference[..m] {
                mismatches.push(format!("fps cloud {cloud} n={n} m={m}"));
            }
        }
    }
    let mut knn_cases = 0;
    for cloud in 0..200 {
        let n = rng.random_range(1..=256);
        let coords = random_cloud(&mut rng, n);
        let k = rng.random_range(1..=n.min(32));
        let samples: Vec<usize> = (0..n.min(16)).map(|_| rng.random_range(0..n)).collect();
        let got = knn_group(&coords, &samples, k).unwrap();
        for (j, &q) in samples.iter().enumerate() {
            knn_cases += 1;
            if got[j * k..(j + 1) * k] != knn_reference(&coords, q, k)[..] {
                mismatches.push(format!("knn cloud {cloud} n={n} k={k}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches.is_empty() && secs < 60.0,
        format!(
            "{fps_cases} fps prefixes over 1000 clouds (n <= 64), {knn_cases} knn queries (n <= 256), {} mismatches, {secs:.1}s (limit 60s){}",
            mismatches.len(),
            mismatches.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

// 3. normalization invariants

fn pn_global_rms(mode: StatsMode, scale: f64, seed: u64) -> (f64, Vec<f64>, Vec<(f64, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, m, k, d) = (2, 8, 6, 4);
    let xs: Vec<f64> = (0..b * m * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xg: Vec<f64> = (0..b * m * k * d)
        .map(|_| scale * rng.random_range(-1.0..1.0))
        .collect();
    let mut g = Graph::<f64>::new();
    let x_s = g.input(Tensor::from_f64(&[b, m, 1, d], &xs).unwrap());
    let x_g = g.input(Tensor::from_f64(&[b, m, k, d], &xg).unwrap());
    let aff = AffineVars::record(&mut g, &NormAffine::<f64>::scalar());
    let parts = point_normalize_parts(&mut g, x_g, x_s, &aff, mode).unwrap();
    let out = g.value(parts.output).to_f64();
    let sig = g.value(parts.sigma).to_f64();
    let dev = g.value(parts.deviations).to_f64();
    let per = out.len() / b;
    let mut worst = 0.0f64;
    let mut ratios = Vec::new();
    for c in 0..b {
        let o = &out[c * per..(c + 1) * per];
        let rms = (o.iter().map(|v| v * v).sum::<f64>() / per as f64).sqrt();
        let s = sig[c];
        worst = worst.max((rms - s / (s + DEFAULT_EPS)).abs());
        let r = delta_report(&dev[c * per..(c + 1) * per], o, 1.0, s, DEFAULT_EPS).unwrap();
        ratios.push((r.measured_ratio.unwrap(), r.delta_eps));
    }
    (worst, sig, ratios)
}

fn normalization_invariants() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut worst_rms = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for mode in [StatsMode::LMGS, StatsMode::GMGS] {
        for seed in 0..20 {
            for scale in [0.01, 1.0, 50.0] {
                let (w, _, ratios) = pn_global_rms(mode, scale, seed);
                worst_rms = worst_rms.max(w);
                for (measured, expected) in ratios {
                    worst_ratio = worst_ratio.max((measured / expected - 1.0).abs());
                }
            }
        }
    }
    ok &= worst_rms <= 1e-6;
    ok &= worst_ratio <= 1e-12;
    notes.push(format!("max |RMS - s/(s+eps)| {worst_rms:.1e} (tol 1e-6)"));
    notes.push(format!("max rel |measured/expected - 1| {worst_ratio:.1e} (tol 1e-12)"));

    // dense neighborhoods: sigma1 well below alpha; sparse: well above
    let (_, dense, _) = pn_global_rms(StatsMode::LMGS, 0.01, 7);
    let (_, sparse, _) = pn_global_rms(StatsMode::LMGS, 50.0, 7);
    let dense_ok = dense
        .iter()
        .all(|&s| delta_for(1.0, s, DEFAULT_EPS).regime == Regime::PullApart);
    let sparse_ok = sparse
        .iter()
        .all(|&s| delta_for(1.0, s, DEFAULT_EPS).regime == Regime::PushTogether);
    // neutral: deviations of exactly +-1 give sigma1 = 1 = alpha
    let mut g = Graph::<f64>::new();
    let x_s = g.input(Tensor::zeros(&[1, 1, 1, 2]));
    let x_g = g.input(Tensor::from_f64(&[1, 1, 2, 2], &[1.0, -1.0, -1.0, 1.0]).unwrap());
    let aff = AffineVars::record(&mut g, &NormAffine::<f64>::scalar());
    let parts = point_normalize_parts(&mut g, x_g, x_s, &aff, StatsMode::LMGS).unwrap();
    let s = g.value(parts.sigma).item();
    let neutral = delta_for(1.0, s, DEFAULT_EPS);
    let neutral_ok = neutral.regime == Regime::Neutral && neutral.delta == 1.0;
    ok &= dense_ok && sparse_ok && neutral_ok;
    notes.push(format!(
        "regimes dense={} sparse={} neutral={}",
        if dense_ok { "pull-apart" } else { "WRONG" },
        if sparse_ok { "push-together" } else { "WRONG" },
        if neutral_ok { "neutral" } else { "WRONG" }
    ));
    outcome(ok, notes.join("; "))
}

// 4. structural reproduction

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value / target - 1.0).abs() <= tol
}

fn structure() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let layers: Vec<usize> = (1..=3)
        .map(|d| ModelConfig::with_depth(CLASSES, 1024, d).layer_count())
        .collect();
    ok &= layers == [24, 40, 56];
    notes.push(format!("layers {layers:?} (want [24, 40, 56])"));

    let full = ModelConfig::full(CLASSES, 1024);
    let fc = count_params_flops(&full, 1024).unwrap();
    let tc = count_params_flops(&ModelConfig::tiny(CLASSES, 1024), 1024).unwrap();
    let (fp, ff, tp) = (fc.params as f64, fc.flops as f64, tc.params as f64);
    ok &= within(fp, FULL_PARAMS, 0.10) && within(ff, FULL_FLOPS, 0.10) && within(tp, TINY_PARAMS, 0.15);
    notes.push(format!(
        "full {:.3}M params ({:+.1}%), {:.3}G FLOPs ({:+.1}%); tiny {:.3}M ({:+.1}%)",
        fp / 1e6,
        100.0 * (fp / FULL_PARAMS - 1.0),
        ff / 1e9,
        100.0 * (ff / FULL_FLOPS - 1.0),
        tp / 1e6,
        100.0 * (tp / TINY_PARAMS - 1.0)
    ));

    // second route: multiply-accumulates counted by the graph on a real pass
    let net = PointNormNet::<f32>::new(full.clone(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cloud: Vec<Point> = (0..1024)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let mut g = Graph::<f32>::new();
    let vars = net.record_constants(&mut g);
    net.forward_with(&mut g, &vars, &[cloud], Phase::Eval).unwrap();
    let traced = g.fc_macs();
    ok &= traced == fc.flops;
    notes.push(format!("traced MACs {traced} vs formula {}", fc.flops));
    let live = net.param_count() as u64;
    ok &= live == fc.params;
    notes.push(format!("instantiated params {live}"));
    outcome(ok, notes.join("; "))
}

// 5. desk-scale learning

const LEARN_BUDGET: Duration = Duration::from_secs(30 * 60);
const LEARN_EPOCHS: usize = 50;

fn learn(config: ModelConfig, batch: usize, target: f64) -> (bool, String) {
    let spec = SynthSpec::default();
    let (train, test) = synth_datasets(&spec).unwrap();
    let net = PointNormNet::<f32>::new(config, 0).unwrap();
    let tc = TrainConfig {
        epochs: LEARN_EPOCHS,
        batch_size: batch,
        seed: 0,
        ..Default::default()
    };
    let mut trainer = Trainer::new(net, tc).unwrap();
    let start = Instant::now();
    let mut best = 0.0f64;
    let mut trace = Vec::new();
    for epoch in 0..LEARN_EPOCHS {
        if let Err(e) = trainer.train_epoch(&train, epoch) {
            return (false, format!("training failed at epoch {}: {e}", epoch + 1));
        }
        let oa = evaluate(&trainer.net, &test, batch).unwrap().overall_accuracy;
        best = best.max(oa);
        trace.push(format!("{oa:.3}"));
        let secs = start.elapsed().as_secs_f64();
        if oa >= target {
            return (
                start.elapsed() <= LEARN_BUDGET,
                format!(
                    "test OA {oa:.3} >= {target} at epoch {} in {secs:.0}s [{}]",
                    epoch + 1,
                    trace.join(" ")
                ),
            );
        }
        if start.elapsed() > LEARN_BUDGET {
            return (
                false,
                format!(
                    "30 min budget spent after {} epochs, best test OA {best:.3} < {target} [{}]",
                    epoch + 1,
                    trace.join(" ")
                ),
            );
        }
    }
    (
        false,
        format!("best test OA {best:.3} < {target} after {LEARN_EPOCHS} epochs"),
    )
}

fn desk_learning() -> Outcome {
    let (tiny_ok, tiny) = learn(ModelConfig::tiny(8, 256), 32, 0.90);
    let (full_ok, full) = learn(ModelConfig::full(8, 256), FULL_BATCH, 0.95);
    outcome(
        tiny_ok && full_ok,
        format!("tiny: {tiny}; full (batch {FULL_BATCH}): {full}"),
    )
}

/// Largest batch whose full-model training graph fits in memory here.
const FULL_BATCH: usize = 16;

// 6. directional ablations

const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
const ABLATION_EPOCHS: usize = 6;
const ABLATION_POINTS: usize = 128;

fn ablation_base() -> RunConfig {
    let mut r = RunConfig {
        data: DataSpec {
            synth: Some(SynthSpec::default()),
            points: Some(ABLATION_POINTS),
            manifest: None,
        },
        ..Default::default()
    };
    r.model.preset = Preset::Tiny;
    r.train.epochs = ABLATION_EPOCHS;
    r
}

fn majority(rows: &[pointnorm::cli::ablate::AblationRow], better: &str, worse: &str) -> (bool, usize) {
    let wins = ABLATION_SEEDS
        .iter()
        .filter(|&&s| {
            let oa = |cell: &str| rows.iter().find(|r| r.cell == cell && r.seed == s).map(|r| r.oa);
            matches!((oa(better), oa(worse)), (Some(a), Some(b)) if a > b)
        })
        .count();
    (2 * wins > ABLATION_SEEDS.len(), wins)
}

fn majority_at_least(rows: &[pointnorm::cli::ablate::AblationRow], better: &str, worse: &str) -> (bool, usize) {
    let wins = ABLATION_SEEDS
        .iter()
        .filter(|&&s| {
            let oa = |cell: &str| rows.iter().find(|r| r.cell == cell && r.seed == s).map(|r| r.oa);
            matches!((oa(better), oa(worse)), (Some(a), Some(b)) if a >= b)
        })
        .count();
    (2 * wins > ABLATION_SEEDS.len(), wins)
}

fn ablations() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let base = ablation_base();
    let stats = run_ablation(
        &base,
        &[AxisValues::parse("stats_mode=LMGS,LMLS,GMLS,GMGS").unwrap()],
        &ABLATION_SEEDS,
        &dir.path().join("stats"),
        |r| eprintln!("  ablation {} seed {}: OA {:.3}", r.cell, r.seed, r.oa),
    );
    let no_pn = run_ablation(
        &base,
        &[AxisValues::parse("disable_pn=true").unwrap()],
        &ABLATION_SEEDS,
        &dir.path().join("pn"),
        |r| eprintln!("  ablation {} seed {}: OA {:.3}", r.cell, r.seed, r.oa),
    );
    let mut wide = base.clone();
    wide.model.bottleneck_ratio = Some(2.0);
    let blocks = run_ablation(
        &wide,
        &[AxisValues::parse("block_kind=c-res,inv-res").unwrap()],
        &ABLATION_SEEDS,
        &dir.path().join("blocks"),
        |r| eprintln!("  ablation {} seed {}: OA {:.3}", r.cell, r.seed, r.oa),
    );
    let (stats, no_pn, blocks) = match (stats, no_pn, blocks) {
        (Ok(a), Ok(b), Ok(c)) => (a, b, c),
        (a, b, c) => {
            let err = [a.err(), b.err(), c.err()].into_iter().flatten().next().unwrap();
            return outcome(false, format!("ablation run failed: {err}"));
        }
    };
    let mut rows = stats.clone();
    rows.extend(no_pn.iter().cloned());
    rows.extend(blocks.iter().cloned());

    let (lmgs_lmls, w1) = majority(&rows, "stats_mode=LMGS", "stats_mode=LMLS");
    let (lmls_gmgs, w2) = majority(&rows, "stats_mode=LMLS", "stats_mode=GMGS");
    let gmls_oa: Vec<f64> = rows
        .iter()
        .filter(|r| r.cell == "stats_mode=GMLS")
        .map(|r| r.oa)
        .collect();
    let chance = 1.0 / SynthSpec::default().classes.len() as f64;
    let gmls_low = gmls_oa.iter().filter(|&&oa| oa <= 2.0 * chance).count() * 2 > gmls_oa.len();
    // both norms = the LMGS cell of the stats grid
    let mut both_vs_nopn = 0;
    for &s in &ABLATION_SEEDS {
        let both = rows
            .iter()
            .find(|r| r.cell == "stats_mode=LMGS" && r.seed == s)
            .map(|r| r.oa);
        let without = rows
            .iter()
            .find(|r| r.cell == "disable_pn=true" && r.seed == s)
            .map(|r| r.oa);
        if matches!((both, without), (Some(a), Some(b)) if a > b) {
            both_vs_nopn += 1;
        }
    }
    let both_beats = 2 * both_vs_nopn > ABLATION_SEEDS.len();
    let (cres_inv, w4) = majority_at_least(&rows, "block_kind=c-res", "block_kind=inv-res");

    let means: Vec<String> = mean_oa_by_cell(&rows)
        .iter()
        .map(|(c, oa)| format!("{c} {oa:.3}"))
        .collect();
    let fmt = |b: bool| if b { "true" } else { "false" };
    outcome(
        lmgs_lmls && lmls_gmgs && gmls_low && both_beats && cres_inv,
        format!(
            "LMGS>LMLS {} ({w1}/3), LMLS>GMGS {} ({w2}/3), GMLS<=2x chance {} ({:?}), both>noPN {} ({both_vs_nopn}/3), CRes(2)>=InvRes(2) {} ({w4}/3); tiny, {ABLATION_POINTS} pts, {ABLATION_EPOCHS} epochs; mean OA: {}",
            fmt(lmgs_lmls),
            fmt(lmls_gmgs),
            fmt(gmls_low),
            gmls_oa.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            fmt(both_beats),
            fmt(cres_inv),
            means.join(", ")
        ),
    )
}

// 7. throughput direction

fn throughput() -> Outcome {
    let cfg = BenchConfig {
        models: vec![Preset::Tiny, Preset::Full],
        points: 256,
        batch: 8,
        repeats: 3,
        num_classes: CLASSES,
        test_only: true,
    };
    let rows = match bench(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("bench failed: {e}")),
    };
    let (tiny, full) = (&rows[0], &rows[1]);
    let fast = tiny.test_samples_per_sec > full.test_samples_per_sec;
    let fp = count_params_flops(&ModelConfig::full(CLASSES, 1024), 1024)
        .unwrap()
        .params as f64;
    let tp = count_params_flops(&ModelConfig::tiny(CLASSES, 1024), 1024)
        .unwrap()
        .params as f64;
    let ratio = fp / tp;
    let target = FULL_PARAMS / TINY_PARAMS;
    let ratio_ok = within(ratio, target, 0.20);
    outcome(
        fast && ratio_ok,
        format!(
            "test throughput tiny {:.1} vs full {:.1} samples/s (256 pts, batch 8, median of 3); params ratio {ratio:.2} vs {target:.2} (+-20%)",
            tiny.test_samples_per_sec, full.test_samples_per_sec
        ),
    )
}

// 8. determinism

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut run = RunConfig {
        deterministic: true,
        data: DataSpec {
            synth: Some(SynthSpec {
                train_count: 64,
                test_count: 16,
                ..Default::default()
            }),
            points: Some(128),
            manifest: None,
        },
        ..Default::default()
    };
    run.model.preset = Preset::Tiny;
    run.train.epochs = 2;
    run.train.batch_size = 16;
    run.train.seed = 11;
    let mut bytes = Vec::new();
    let mut summaries = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}"));
        if let Err(e) = train_run(&run, &out, None) {
            return outcome(false, format!("run {i} failed: {e}"));
        }
        bytes.push(std::fs::read(out.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT)).unwrap());
        summaries.push(std::fs::read(out.join("summary.json")).unwrap());
    }
    let same = bytes[0] == bytes[1];
    let same_summary = summaries[0] == summaries[1];
    outcome(
        same && same_summary,
        format!(
            "final checkpoints ({} bytes) identical: {same}; summaries identical: {same_summary}",
            bytes[0].len()
        ),
    )
}

// 9. permutation invariance

fn permutation_invariance() -> Outcome {
    let config = ModelConfig::full(CLASSES, 256);
    let net = PointNormNet::<f32>::new(config, 3).unwrap();
    let spec = SynthSpec::default();
    let (_, test) = synth_datasets(&spec).unwrap();
    let base = test.samples[5].coords.clone();
    let reference = net.predict(&[base.clone()]).unwrap().to_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let perms: Vec<Vec<Point>> = (0..50)
        .map(|_| {
            let mut c = base.clone();
            c.shuffle(&mut rng);
            c
        })
        .collect();
    for chunk in perms.chunks(10) {
        let logits = net.predict(chunk).unwrap().to_f64();
        for row in logits.chunks(CLASSES) {
            for (a, b) in row.iter().zip(&reference) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    outcome(
        worst <= 1e-5,
        format!("50 permutations, full model, max |logit diff| {worst:.2e} (tol 1e-5)"),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("POINTNORM_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", gradient_suite),
        (2, "sampling oracles", sampling_oracles),
        (3, "normalization invariants", normalization_invariants),
        (4, "structural reproduction", structure),
        (5, "desk-scale learning", desk_learning),
        (6, "directional ablations", ablations),
        (7, "throughput direction", throughput),
        (8, "determinism", determinism),
        (9, "permutation invariance", permutation_invariance),
    ];
    let _ = BlockKind::CRes;
    let mut failed = 0;
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        println!(
            "{} criterion {id} {name}: {} [{:.1}s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
