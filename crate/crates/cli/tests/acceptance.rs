//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p smallarea-cli --test acceptance`.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use smallarea::bootstrap::bootstrap_mspe;
use smallarea::em::{
    draw_from_posteriors, initial_params, l2_gradient, l2_objective, m_step_sigma, sigma_statistics, Draws,
};
use smallarea::laplace::{laplace_fit, log_k, log_k_grad, log_k_hess, AreaTerms};
use smallarea::model::{observed_loglik, AreaGrouped};
use smallarea::predict::{best_predict_unit, direct_estimate, PredictConfig};
use smallarea::rng::substream;
use smallarea::sim::oracles::{grid_argmax, mc_best_predict, naive_area_log_marginal};
use smallarea::sim::{boundary_study, draw_sizes, evaluate, simulate, PlainMlConfig, SimDesign, SimWorld};
use smallarea::{
    em_fit, estimate_all, AdjustmentConfig, AreaPosterior, BootstrapConfig, EmConfig, FitResult, L1Variant,
    ModelParams, SmallSample,
};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn beta3() -> Vec<f64> {
    vec![-0.5, 0.8, -0.4]
}

fn world(m: usize, small: (usize, usize), big: usize, sigma2: f64, seed: u64) -> SimWorld {
    let design = SimDesign::standard(
        draw_sizes(m, small.0, small.1, seed),
        vec![big; m],
        ModelParams::new(beta3(), sigma2),
        seed,
    );
    simulate(&design).expect("valid design")
}

fn fit(small: &SmallSample, seed: u64) -> FitResult {
    let em = EmConfig {
        seed,
        ..EmConfig::default()
    };
    let adj = AdjustmentConfig::default();
    let init = initial_params(small, &em, &adj).expect("initial values");
    em_fit(small, &init, &em, &adj).expect("fit")
}

/// Central difference with one Richardson step.
fn derivative(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-3 * x.abs().max(1.0);
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn criterion_1() -> Outcome {
    let base = world(51, (2, 40), 1, 0.01, 101);
    let truth = ModelParams::new(beta3(), 0.01);
    let study = boundary_study(
        &base.small,
        &truth,
        200,
        2024,
        &EmConfig::default(),
        &AdjustmentConfig::default(),
        &PlainMlConfig::default(),
    )
    .expect("study");
    let pass = study.plain_rate() > 0.05 && study.adjusted_boundary == 0;
    Outcome {
        pass,
        detail: format!(
            "plain ML boundary/non-convergence {}/200 ({:.1}%, boundary {}); adjusted boundary {}, adjusted non-convergence {}",
            study.plain_flagged,
            100.0 * study.plain_rate(),
            study.plain_boundary,
            study.adjusted_boundary,
            study.adjusted_failures
        ),
    }
}

fn criterion_2() -> Outcome {
    let truth = [beta3(), vec![0.25]].concat();
    let mut pass = true;
    let mut errors = Vec::new();
    let mut lines = Vec::new();
    for m in [20, 50, 100] {
        let reps = 50;
        let mut estimates = vec![Vec::new(); 4];
        let mut err = 0.0;
        for r in 0..reps {
            let w = world(m, (10, 30), 1, 0.25, 10_000 * m as u64 + r);
            let f = fit(&w.small, r);
            let est = [f.params.beta.clone(), vec![f.params.sigma2]].concat();
            err += est.iter().zip(&truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>().sqrt();
            for (k, v) in est.into_iter().enumerate() {
                estimates[k].push(v);
            }
        }
        errors.push(err / reps as f64);
        let mut zs = Vec::new();
        for (k, vals) in estimates.iter().enumerate() {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let z = (mean - truth[k]) / (sd / n.sqrt());
            pass &= z.abs() <= 3.0;
            zs.push(format!("{mean:.3}(z={z:+.2})"));
        }
        lines.push(format!("m={m}: mean [{}] err {:.4}", zs.join(", "), err / reps as f64));
    }
    pass &= errors.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        pass,
        detail: lines.join("; "),
    }
}

fn criterion_3() -> Outcome {
    let mut rng = substream(33, &[1]);
    let mut worst_grad: f64 = 0.0;
    let mut worst_hess: f64 = 0.0;
    for _ in 0..25 {
        let n = rng.random_range(1..15);
        let offsets: Vec<f64> = (0..n).map(|_| rng.random_range(-2.5..2.5)).collect();
        let ys: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let terms = AreaTerms::new(offsets, ys);
        let sigma2 = rng.random_range(0.05..4.0);
        let v = rng.random_range(-3.0..3.0);
        let g = log_k_grad(v, &terms, sigma2).unwrap();
        let h = log_k_hess(v, &terms, sigma2).unwrap();
        worst_grad = worst_grad.max(rel_err(g, derivative(|x| log_k(x, &terms, sigma2).unwrap(), v)));
        worst_hess = worst_hess.max(rel_err(h, derivative(|x| log_k_grad(x, &terms, sigma2).unwrap(), v)));
    }
    let w = world(12, (3, 12), 1, 0.5, 5);
    let mut worst_l2: f64 = 0.0;
    for _ in 0..25 {
        let draws = Draws::new(
            (0..w.small.m_observed())
                .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        )
        .unwrap();
        let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let grad = l2_gradient(&beta, &draws, &w.small);
        for k in 0..3 {
            let fd = derivative(
                |x| {
                    let mut b = beta.clone();
                    b[k] = x;
                    l2_objective(&b, &draws, &w.small)
                },
                beta[k],
            );
            worst_l2 = worst_l2.max(rel_err(grad[k], fd));
        }
    }
    let pass = worst_grad < 1e-6 && worst_hess < 1e-6 && worst_l2 < 1e-6;
    Outcome {
        pass,
        detail: format!(
            "25 points each; max rel err: log k gradient {worst_grad:.2e}, log k Hessian {worst_hess:.2e}, l2 gradient {worst_l2:.2e}"
        ),
    }
}

fn criterion_4() -> Outcome {
    let mut rng = substream(44, &[1]);
    let cfg = AdjustmentConfig::default();

    let mut worst_mode: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(1..25);
        let offsets: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let terms = AreaTerms::new(offsets, ys);
        let sigma2 = rng.random_range(0.01..5.0);
        let mode = laplace_fit(&terms, sigma2, &cfg).unwrap();
        let (grid, _) = grid_argmax(|v| log_k(v, &terms, sigma2).unwrap(), -10.0, 10.0, 2001, 4);
        worst_mode = worst_mode.max((mode.v_hat - grid).abs());
    }

    let w = world(30, (2, 25), 1, 0.4, 9);
    let params = ModelParams::new(beta3(), 0.4);
    let posts = smallarea::laplace::fit_area_posteriors(&w.small, &params, &cfg).unwrap();
    let mut worst_sigma: f64 = 0.0;
    for (t, variant) in [L1Variant::PaperForm, L1Variant::StandardForm].into_iter().enumerate() {
        let draws = draw_from_posteriors(&posts, 100, 4, t as u64);
        let adj = AdjustmentConfig {
            l1_variant: variant,
            ..cfg.clone()
        };
        let step = m_step_sigma(&draws, &w.small, &adj).unwrap();
        let stats = sigma_statistics(&draws, &w.small, variant).unwrap();
        let closed = stats.s / (stats.n - 2.0);
        worst_sigma = worst_sigma.max((step.sigma2 - closed).abs());
    }

    let mut worst_z: f64 = 0.0;
    for _ in 0..4 {
        let x = vec![1.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let post = AreaPosterior {
            area: "a".into(),
            v_hat: rng.random_range(-1.0..1.0),
            tau2_hat: rng.random_range(0.05..1.5),
            n_tilde: 5,
            clipped: false,
        };
        let bp = best_predict_unit(&x, &params, &post, 20).unwrap();
        let offset: f64 = x.iter().zip(&params.beta).map(|(a, b)| a * b).sum();
        let (mc, se) = mc_best_predict(offset, post.v_hat, post.tau2_hat, 1_000_000, &mut rng);
        worst_z = worst_z.max((bp - mc).abs() / se);
    }

    let gh = observed_loglik(&params, &w.small, 20).unwrap();
    let trap: f64 = (0..w.small.m_observed())
        .map(|a| {
            let t = w.small.area_terms(a, &params.beta);
            naive_area_log_marginal(t.offsets(), t.outcomes(), params.sigma2, 40_000)
        })
        .sum();
    let lik_diff = (gh - trap).abs();

    let pass = worst_mode < 1e-4 && worst_sigma < 1e-8 && worst_z < 3.0 && lik_diff < 1e-6;
    Outcome {
        pass,
        detail: format!(
            "Laplace vs grid {worst_mode:.1e}; sigma2 step vs S/(N-2) {worst_sigma:.1e}; BP vs 1e6 MC max |z| {worst_z:.2}; GH(20) vs trapezoid loglik {lik_diff:.1e}"
        ),
    }
}

fn criterion_5() -> Outcome {
    let worlds = 50;
    let mut wins = 0;
    let mut gains = Vec::new();
    for k in 0..worlds {
        let w = world(51, (2, 40), 500, 0.25, 5_000 + k);
        let f = fit(&w.small, k);
        let table = estimate_all(&w.small, &w.big, &f, &PredictConfig::default()).unwrap();
        let ebp: Vec<f64> = table.estimates.iter().map(|e| e.ebp).collect();
        let direct: Vec<f64> = table
            .estimates
            .iter()
            .map(|e| e.direct.expect("all areas sampled"))
            .collect();
        let re = evaluate(&ebp, &w.truths).unwrap();
        let rd = evaluate(&direct, &w.truths).unwrap();
        if re.asd < rd.asd {
            wins += 1;
        }
        gains.push(re.relative_gain(&rd).asd);
    }
    gains.sort_by(f64::total_cmp);
    let median = 0.5 * (gains[24] + gains[25]);
    Outcome {
        pass: wins * 10 >= worlds as usize * 9,
        detail: format!("EBP ASD below direct ASD in {wins}/{worlds} worlds; median ASD gain {median:.2}x"),
    }
}

fn criterion_6() -> Outcome {
    let w = world(51, (2, 40), 500, 0.25, 606);
    let f = fit(&w.small, 6);
    let run = |b| {
        let cfg = BootstrapConfig {
            b_replicates: b,
            seed: 66,
            ..BootstrapConfig::default()
        };
        bootstrap_mspe(&w.small, &w.big, &f, &cfg).expect("bootstrap")
    };
    let r100 = run(100);
    let r500 = run(500);
    let ratios: Vec<f64> = r500
        .mce
        .iter()
        .zip(&r100.mce)
        .filter(|(_, b)| **b > 0.0)
        .map(|(a, b)| a / b)
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Outcome {
        pass: (0.31..=0.58).contains(&mean),
        detail: format!(
            "mean per-area MCE ratio B=500/B=100 {mean:.3} (1/sqrt5 = 0.447); mean MCE {:.2e} vs {:.2e}; failures {} and {}",
            avg(&r500.mce),
            avg(&r100.mce),
            r500.failed.len(),
            r100.failed.len()
        ),
    }
}

fn cli(dir: &Path, args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_smallarea"))
        .current_dir(dir)
        .args(args)
        .env("SMALLAREA_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(dir: &Path, design: &Path, threads: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let d = design.display().to_string();
    let run = |args: &[&str]| cli(dir, args, threads);
    run(&["simulate", "--design", &d, "--seed", "77", "--out", "."])?;
    run(&["fit", "--small", "small.csv", "--seed", "5", "--out", "fit.json"])?;
    run(&[
        "predict",
        "--small",
        "small.csv",
        "--big",
        "big.csv",
        "--fit",
        "fit.json",
        "--truth",
        "truth.csv",
        "--out",
        "predict.json",
    ])?;
    run(&[
        "predict",
        "--small",
        "small.csv",
        "--big",
        "big.csv",
        "--fit",
        "fit.json",
        "--format",
        "csv",
        "--out",
        "predict.csv",
    ])?;
    run(&[
        "bootstrap",
        "--small",
        "small.csv",
        "--big",
        "big.csv",
        "--fit",
        "fit.json",
        "--seed",
        "9",
        "--b-replicates",
        "20",
        "--out",
        "bootstrap.json",
    ])?;
    run(&[
        "evaluate",
        "--estimates",
        "predict.csv",
        "--truth",
        "truth.csv",
        "--baseline",
        "direct",
        "--out",
        "eval.json",
    ])?;
    let mut files = Vec::new();
    for name in [
        "small.csv",
        "big.csv",
        "truth.csv",
        "manifest.json",
        "fit.json",
        "predict.json",
        "predict.csv",
        "bootstrap.json",
        "eval.json",
    ] {
        files.push((
            name.to_string(),
            std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?,
        ));
    }
    Ok(files)
}

fn criterion_7() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let design = tmp.path().join("design.json");
    let sizes_small: Vec<usize> = draw_sizes(12, 0, 15, 3);
    let sim_design = SimDesign::standard(sizes_small, vec![80; 12], ModelParams::new(beta3(), 0.3), 0);
    std::fs::write(&design, serde_json::to_string(&sim_design).unwrap()).unwrap();
    let mut runs = Vec::new();
    for (k, threads) in ["1", "3"].into_iter().enumerate() {
        let dir = tmp.path().join(format!("run{k}"));
        std::fs::create_dir_all(&dir).unwrap();
        match pipeline(&dir, &design, threads) {
            Ok(files) => runs.push(files),
            Err(e) => {
                return Outcome {
                    pass: false,
                    detail: format!("pipeline failed: {e}"),
                }
            }
        }
    }
    let differing: Vec<&str> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.as_str())
        .collect();

    let w = world(20, (2, 20), 100, 0.3, 70);
    let f1 = fit(&w.small, 1);
    let f2 = fit(&w.small, 1);
    let cfg = BootstrapConfig {
        b_replicates: 10,
        seed: 3,
        ..BootstrapConfig::default()
    };
    let b1 = bootstrap_mspe(&w.small, &w.big, &f1, &cfg).unwrap();
    let b2 = bootstrap_mspe(&w.small, &w.big, &f2, &cfg).unwrap();
    let lib_identical = serde_json::to_string(&(&f1, &b1)).unwrap() == serde_json::to_string(&(&f2, &b2)).unwrap();
    Outcome {
        pass: differing.is_empty() && lib_identical,
        detail: format!(
            "CLI simulate/fit/predict/bootstrap/evaluate with 1 vs 3 threads: {} of {} files differ{}; library fit+bootstrap rerun identical: {lib_identical}",
            differing.len(),
            runs[0].len(),
            if differing.is_empty() { String::new() } else { format!(" ({differing:?})") }
        ),
    }
}

fn criterion_8() -> Outcome {
    let mut sizes = draw_sizes(20, 3, 20, 8);
    sizes[4] = 0;
    sizes[11] = 0;
    let design = SimDesign::standard(sizes, vec![300; 20], ModelParams::new(beta3(), 0.3), 8);
    let w = simulate(&design).unwrap();
    let zero_area = w.small.area_position("A007").unwrap();
    let outcomes: Vec<bool> = (0..w.small.len())
        .map(|pos| !w.small.area_members(zero_area).contains(&pos) && w.small.records()[pos].y == Some(true))
        .collect();
    let small = w.small.with_outcomes(&outcomes).unwrap();
    let f = fit(&small, 8);
    let table = estimate_all(&small, &w.big, &f, &PredictConfig::default()).unwrap();
    let get = |id: &str| table.estimates.iter().find(|e| e.area == id).unwrap();
    let mut pass = table.estimates.len() == 20;
    let mut parts = Vec::new();
    for id in ["A005", "A012"] {
        let e = get(id);
        pass &= e.ebp.is_finite() && e.ebp > 0.0 && e.ebp < 1.0 && e.direct.is_none();
        parts.push(format!(
            "{id} (no small sample) EBP {:.4}, direct {:?}",
            e.ebp, e.direct
        ));
    }
    let z = get("A007");
    let (direct, _) = direct_estimate(&small, zero_area);
    pass &= z.ebp > 0.0 && z.direct == Some(0.0) && direct == 0.0;
    parts.push(format!("A007 (all y = 0) EBP {:.4}, direct {:?}", z.ebp, z.direct));
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("boundary avoidance", criterion_1),
        ("parameter recovery", criterion_2),
        ("derivative correctness", criterion_3),
        ("oracle equivalences", criterion_4),
        ("EBP dominance", criterion_5),
        ("MCE scaling", criterion_6),
        ("determinism", criterion_7),
        ("missing-area handling", criterion_8),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {} ({name}): {status}: {} [{:.1}s]",
            i + 1,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!outcome.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
