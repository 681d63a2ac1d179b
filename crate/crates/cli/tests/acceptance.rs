//! Acceptance criteria P1-P8. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! `DISTREG_ACCEPTANCE=P2,P4` restricts the run to the listed criteria.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use distreg::autodiff::{Graph, Tensor, Var};
use distreg::calibration::{correct, fit_residuals};
use distreg::experiment::ExperimentReport;
use distreg::label_distribution::{expected_counts, expected_labels, LabelDensity, LabelSpace};
use distreg::loss::{total_loss, BaseMetric, LossConfig};
use distreg::metrics::{mae, overlap_ratio, pearson_r, rmse, weighted_mae, weighted_rmse, Region};
use distreg::nn::{forward, Model, Net1DLite, NetConfig};
use distreg::softsort::{hard_sort, soft_sort, Direction, SoftSortConfig};
use distreg::synth::normalize;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: &'static str,
    title: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

// ---- P1 ----

const FD_STEP: f64 = 1e-5;

fn loss_value(net: &Net1DLite, params: &[Tensor], x: &Tensor, targets: &[f64], expected: &distreg::ExpectedLabels, cfg: &LossConfig) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let xv = g.constant(x.clone());
    let preds = net.forward_bound(&mut g, xv, &vars).unwrap();
    let loss = total_loss(&mut g, preds, targets, expected, cfg).unwrap();
    g.value(loss).data()[0]
}

fn p1_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let space = LabelSpace::from_range(30.0, 80.0, 1.0).unwrap();
    let raw: Vec<f64> = space.values().iter().map(|v| (-(v - 50.0) * (v - 50.0) / 80.0).exp() + 0.02).collect();
    let total: f64 = raw.iter().sum();
    let density = LabelDensity::new(space, raw.iter().map(|p| p / total).collect()).unwrap();
    let instances = 24;
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let cfg = NetConfig {
            channels: rng.random_range(2..=4),
            blocks: rng.random_range(1..=2),
            kernel_size: [3, 5][i % 2],
            input_len: rng.random_range(8..=24),
            se_reduction: 2,
        };
        let mut net = Net1DLite::new(cfg, 1000 + i as u64).unwrap();
        net.set_output_scaling(55.0, 8.0);
        let b = rng.random_range(2..=16usize);
        let x = Tensor::new(vec![b, 1, cfg.input_len], (0..b * cfg.input_len).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = forward(&net, &mut g, xv).unwrap().output;
        let preds = g.value(out).data().to_vec();
        let targets: Vec<f64> = preds.iter().map(|p| p + sign(&mut rng) * rng.random_range(0.05..4.0)).collect();
        let expected = expected_labels(&density, b);
        let loss_cfg = LossConfig {
            lambda: 1.0,
            base_metric: if i % 2 == 0 { BaseMetric::Mae } else { BaseMetric::Mse },
            epsilon: [0.1, 1.0, 3.0][i % 3],
        };

        let params: Vec<Tensor> = net.params().iter().map(|p| p.value.clone()).collect();
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
        let xv = g.constant(x.clone());
        let p = net.forward_bound(&mut g, xv, &vars).unwrap();
        let loss = total_loss(&mut g, p, &targets, &expected, &loss_cfg).unwrap();
        g.backward(loss).unwrap();
        let analytic: Vec<f64> = vars.iter().flat_map(|&v| g.grad_or_zeros(v)).collect();

        let mut numeric = Vec::with_capacity(analytic.len());
        let mut probe = params.clone();
        for t in 0..params.len() {
            for j in 0..params[t].numel() {
                let base = params[t].data()[j];
                probe[t].data_mut()[j] = base + FD_STEP;
                let up = loss_value(&net, &probe, &x, &targets, &expected, &loss_cfg);
                probe[t].data_mut()[j] = base - FD_STEP;
                let down = loss_value(&net, &probe, &x, &targets, &expected, &loss_cfg);
                probe[t].data_mut()[j] = base;
                numeric.push((up - down) / (2.0 * FD_STEP));
            }
        }
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-300);
        worst = worst.max(rel);
        check(rel <= 1e-4, || format!("instance {i} (batch {b}, {} blocks): relative error {rel:e}", cfg.blocks))?;
    }
    Ok(format!("{instances} instances, worst relative error {worst:.2e}"))
}

// ---- P2 ----

fn p2_soft_sort() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let vectors = 10_000;
    let mut worst_sum: f64 = 0.0;
    let mut worst_hard: f64 = 0.0;
    for k in 0..vectors {
        let n = rng.random_range(1..=50usize);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let eps = 10f64.powf(rng.random_range(-6.0..3.0));
        let dir = if k % 2 == 0 { Direction::Ascending } else { Direction::Descending };
        let y = soft_sort(&x, &SoftSortConfig { epsilon: eps, direction: dir }).unwrap();
        let monotone = y.windows(2).all(|w| match dir {
            Direction::Ascending => w[0] <= w[1],
            Direction::Descending => w[0] >= w[1],
        });
        check(monotone, || format!("vector {k} not monotone at epsilon {eps}"))?;
        let err = (x.iter().sum::<f64>() - y.iter().sum::<f64>()).abs();
        worst_sum = worst_sum.max(err);
        check(err <= 1e-9, || format!("vector {k}: sum changed by {err:e}"))?;

        // hard-sort limit on inputs with pairwise gaps of at least 0.1
        let mut h = Vec::with_capacity(n);
        let mut v = rng.random_range(-50.0..0.0);
        for _ in 0..n {
            h.push(v);
            v += 0.1 + rng.random_range(0.0..2.0);
        }
        for i in (1..h.len()).rev() {
            let j = rng.random_range(0..=i);
            h.swap(i, j);
        }
        let soft = soft_sort(&h, &SoftSortConfig { epsilon: 1e-6, direction: dir }).unwrap();
        let hard = hard_sort(&h, dir);
        let dev = soft.iter().zip(&hard).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_hard = worst_hard.max(dev);
        check(dev <= 1e-3, || format!("vector {k}: deviates from hard sort by {dev:e}"))?;
    }
    Ok(format!("{vectors} vectors monotone; max sum drift {worst_sum:.1e}; max hard-sort gap {worst_hard:.1e}"))
}

// ---- P3 ----

fn p3_apportionment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let pairs = 1000;
    for k in 0..pairs {
        let bins = rng.random_range(2..=120usize);
        let w: Vec<f64> = (0..bins)
            .map(|_| if rng.random_range(0..4) == 0 { rng.random_range(0.0..1e-4) } else { rng.random_range(0.0..1.0) } + 1e-12)
            .collect();
        let total: f64 = w.iter().sum();
        let space = LabelSpace::uniform(rng.random_range(-100.0..100.0), rng.random_range(0.1..5.0), bins).unwrap();
        let d = LabelDensity::new(space, w.iter().map(|v| v / total).collect()).unwrap();
        let n = rng.random_range(1..=10_000usize);
        let labels = expected_labels(&d, n);
        check(labels.len() == n, || format!("pair {k}: {} labels for N = {n}", labels.len()))?;
        for (i, (&c, &p)) in expected_counts(&d, n).iter().zip(d.probs()).enumerate() {
            let f = (n as f64 * p).floor() as usize;
            check(c == f || c == f + 1, || format!("pair {k}, bin {i}: count {c} outside {{{f}, {}}}", f + 1))?;
        }
    }
    Ok(format!("{pairs} (density, N) pairs"))
}

// ---- P4 ----

fn nearest(space: &LabelSpace, v: f64) -> usize {
    let idx = ((v - space.values()[0]) / space.bin_width()).round();
    idx.clamp(0.0, (space.len() - 1) as f64) as usize
}

struct Oracle {
    r: f64,
    mae: f64,
    rmse: f64,
    wmae: f64,
    wrmse: f64,
    or: f64,
}

fn oracle(y: &[f64], p: &[f64], d: &LabelDensity) -> Oracle {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = p.iter().sum::<f64>() / n;
    let (mut cov, mut vy, mut vp, mut a, mut s) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..y.len() {
        cov += (y[i] - my) * (p[i] - mp);
        vy += (y[i] - my).powi(2);
        vp += (p[i] - mp).powi(2);
        a += (y[i] - p[i]).abs();
        s += (y[i] - p[i]).powi(2);
    }
    let prob: Vec<f64> = y.iter().map(|&v| d.probs()[nearest(d.space(), v)]).collect();
    let mean_p = prob.iter().sum::<f64>() / n;
    let (mut wa, mut ws) = (0.0, 0.0);
    for i in 0..y.len() {
        let w = prob[i] / mean_p;
        wa += (y[i] - p[i]).abs() * w;
        ws += ((y[i] - p[i]) * w).powi(2);
    }
    let mut oy = vec![0.0; d.space().len()];
    let mut op = vec![0.0; d.space().len()];
    for i in 0..y.len() {
        oy[nearest(d.space(), y[i])] += 1.0;
        op[nearest(d.space(), p[i])] += 1.0;
    }
    let inter: f64 = oy.iter().zip(&op).map(|(a, b)| f64::min(*a, *b)).sum();
    let union: f64 = oy.iter().zip(&op).map(|(a, b)| f64::max(*a, *b)).sum();
    Oracle { r: cov / (vy * vp).sqrt(), mae: a / n, rmse: (s / n).sqrt(), wmae: wa / n, wrmse: (ws / n).sqrt(), or: inter / union }
}

fn p4_metrics() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    let r = pearson_r(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).map_err(|e| e.to_string())?;
    check(close(r, 0.6), || format!("r([1,2,3,4],[2,1,4,3]) = {r}"))?;
    // per-bin counts O = [2, 3] and O^ = [3, 2]
    let grid = LabelSpace::uniform(0.0, 1.0, 2).unwrap();
    let or = overlap_ratio(&[0.0, 0.0, 1.0, 1.0, 1.0], &[0.0, 0.0, 0.0, 1.0, 1.0], &grid).map_err(|e| e.to_string())?;
    check(close(or, 2.0 / 3.0), || format!("OR with counts [2,3] vs [3,2] = {or}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let space = LabelSpace::from_range(30.0, 80.0, 1.0).unwrap();
    let instances = 100;
    for k in 0..instances {
        let w: Vec<f64> = (0..space.len()).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = w.iter().sum();
        let d = LabelDensity::new(space.clone(), w.iter().map(|v| v / total).collect()).unwrap();
        let n = rng.random_range(2..=1000usize);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(30.0..80.0)).collect();
        let p: Vec<f64> = y.iter().map(|v| v + rng.random_range(-15.0..15.0)).collect();
        let o = oracle(&y, &p, &d);
        let got = [
            ("r", pearson_r(&y, &p), o.r),
            ("mae", mae(&y, &p), o.mae),
            ("rmse", rmse(&y, &p), o.rmse),
            ("weighted mae", weighted_mae(&y, &p, &d), o.wmae),
            ("weighted rmse", weighted_rmse(&y, &p, &d), o.wrmse),
            ("overlap ratio", overlap_ratio(&y, &p, &space), o.or),
        ];
        for (name, v, want) in got {
            let v = v.map_err(|e| format!("instance {k}: {name}: {e}"))?;
            check(close(v, want), || format!("instance {k}: {name} {v} vs oracle {want}"))?;
        }
    }
    Ok(format!("hand cases and {instances} random instances agree within 1e-9"))
}

// ---- P5 / P7 ----

const P5_SEEDS: [u64; 3] = [0, 1, 2];

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config() -> PathBuf {
    workspace_root().join("configs/desk_scale.toml")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn pipeline(seed: u64, out: &Path) -> Result<ExperimentReport, String> {
    let config = desk_config();
    for verb in ["generate", "train", "evaluate"] {
        let o = Command::new(env!("CARGO_BIN_EXE_distreg"))
            .args([verb, "--config"])
            .arg(&config)
            .args(["--seed", &seed.to_string(), "--out"])
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("`distreg {verb}` (seed {seed}) failed: {}", String::from_utf8_lossy(&o.stderr).trim()));
        }
    }
    ExperimentReport::load(&out.join("report.json")).map_err(|e| e.to_string())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn region_metric(report: &ExperimentReport, arm: &str, region: Region, f: fn(&distreg::metrics::EvalReport) -> Option<f64>) -> Result<f64, String> {
    report
        .arm(arm)
        .and_then(|a| a.region(region))
        .and_then(f)
        .ok_or_else(|| format!("report has no {} value for arm {arm}", region.as_str()))
}

fn p5_desk_scale() -> Outcome {
    let mut few_mae = (Vec::new(), Vec::new());
    let mut few_or = (Vec::new(), Vec::new());
    let mut r = (Vec::new(), Vec::new());
    for seed in P5_SEEDS {
        let report = pipeline(seed, &scratch(&format!("p5-seed{seed}")))?;
        for (arm, slot) in [("plain", 0), ("dist", 1)] {
            let push = |pair: &mut (Vec<f64>, Vec<f64>), v: f64| if slot == 0 { pair.0.push(v) } else { pair.1.push(v) };
            push(&mut few_mae, region_metric(&report, arm, Region::FewShot, |e| Some(e.mae))?);
            push(&mut few_or, region_metric(&report, arm, Region::FewShot, |e| Some(e.overlap_ratio))?);
            push(&mut r, region_metric(&report, arm, Region::Overall, |e| e.pearson_r)?);
        }
        println!(
            "      seed {seed}: few-shot MAE {:.3} vs {:.3}, few-shot OR {:.3} vs {:.3}, r {:.3} vs {:.3} (plain vs dist)",
            few_mae.0[few_mae.0.len() - 1],
            few_mae.1[few_mae.1.len() - 1],
            few_or.0[few_or.0.len() - 1],
            few_or.1[few_or.1.len() - 1],
            r.0[r.0.len() - 1],
            r.1[r.1.len() - 1],
        );
    }
    let (mae_p, mae_d) = (median(few_mae.0), median(few_mae.1));
    let (or_p, or_d) = (median(few_or.0), median(few_or.1));
    let (r_p, r_d) = (median(r.0), median(r.1));
    let summary = format!(
        "median few-shot MAE {mae_p:.3} -> {mae_d:.3} ({:+.1}%), few-shot OR {or_p:.3} -> {or_d:.3} (x{:.2}), r {r_p:.3} -> {r_d:.3}",
        100.0 * (mae_d / mae_p - 1.0),
        or_d / or_p
    );
    let mut failed = Vec::new();
    if mae_d > 0.9 * mae_p {
        failed.push("(a) few-shot MAE not 10% lower");
    }
    if or_d < 2.0 * or_p {
        failed.push("(b) overlap ratio below 2x");
    }
    if (r_d - r_p).abs() > 0.03 {
        failed.push("(c) overall r differs by more than 0.03");
    }
    if failed.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; {}", failed.join(", ")))
    }
}

fn p7_determinism() -> Outcome {
    let out = scratch("p7");
    pipeline(0, &out)?;
    let first = fs::read(out.join("report.json")).map_err(|e| e.to_string())?;
    pipeline(0, &out)?;
    let second = fs::read(out.join("report.json")).map_err(|e| e.to_string())?;
    check(first == second, || "report.json differs between identical runs".into())?;
    Ok(format!("report.json identical across reruns ({} bytes)", first.len()))
}

// ---- P6 / P8 ----

fn p6_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let y: Vec<f64> = (0..5000).map(|_| rng.random_range(30.0..80.0)).collect();
    let yhat: Vec<f64> = y.iter().map(|v| v + 2.0 + 0.5 * v).collect();
    let fit = fit_residuals(&y, &yhat).map_err(|e| e.to_string())?;
    check((fit.intercept - 2.0).abs() <= 1e-6 && (fit.slope - 0.5).abs() <= 1e-6, || {
        format!("recovered ({}, {})", fit.intercept, fit.slope)
    })?;
    let corrected = correct(&yhat, &y, &fit).map_err(|e| e.to_string())?;
    let refit = fit_residuals(&y, &corrected).map_err(|e| e.to_string())?;
    check(refit.intercept.abs() <= 1e-9 && refit.slope.abs() <= 1e-9, || {
        format!("refit on corrected residuals gave ({:e}, {:e})", refit.intercept, refit.slope)
    })?;
    Ok(format!(
        "fit ({:.9}, {:.9}); refit ({:.1e}, {:.1e})",
        fit.intercept, fit.slope, refit.intercept, refit.slope
    ))
}

fn p8_normalize() -> Outcome {
    let z = normalize(&[0.0, 2.0, 4.0]).map_err(|e| e.to_string())?;
    let want = [-1.2247, 0.0, 1.2247];
    for (a, b) in z.iter().zip(want) {
        check((a - b).abs() <= 1e-4, || format!("normalize([0,2,4]) = {z:?}"))?;
    }
    Ok(format!("normalize([0,2,4]) = [{:.4}, {:.4}, {:.4}]", z[0], z[1], z[2]))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: "P1", title: "gradient integrity", budget: Duration::from_secs(60), run: p1_gradients },
        Criterion { id: "P2", title: "soft-sort contract", budget: Duration::from_secs(30), run: p2_soft_sort },
        Criterion { id: "P3", title: "expected-label apportionment", budget: Duration::from_secs(10), run: p3_apportionment },
        Criterion { id: "P4", title: "metric oracles", budget: Duration::from_secs(10), run: p4_metrics },
        Criterion { id: "P5", title: "desk-scale few-shot comparison", budget: Duration::from_secs(15 * 60), run: p5_desk_scale },
        Criterion { id: "P6", title: "residual calibration", budget: Duration::from_secs(1), run: p6_calibration },
        Criterion { id: "P7", title: "pipeline determinism", budget: Duration::from_secs(15 * 60), run: p7_determinism },
        Criterion { id: "P8", title: "signal normalization", budget: Duration::from_secs(1), run: p8_normalize },
    ];
    let only: Option<Vec<String>> = std::env::var("DISTREG_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').map(|t| t.trim().to_uppercase()).collect());
    let mut failures = 0;
    for c in &criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|id| id == c.id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > c.budget => {
                Err(format!("{msg}; took {:.1}s, budget {}s", elapsed.as_secs_f64(), c.budget.as_secs()))
            }
            other => other,
        };
        match outcome {
            Ok(msg) => println!("{} PASS  {} ({:.1}s): {msg}", c.id, c.title, elapsed.as_secs_f64()),
            Err(msg) => {
                failures += 1;
                println!("{} FAIL  {} ({:.1}s): {msg}", c.id, c.title, elapsed.as_secs_f64());
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
