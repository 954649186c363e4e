//! Acceptance gates. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any gate fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use jschp::cli::{cross_validate, FoldStatus};
use jschp::hyperloss::{
    argmax_f_bruteforce, argmax_f_oracle, joint_score, loss_gradient_w, predict, predict_for_measure,
    upper_bound, f_value, HyperPredictor, TiePolicy,
};
use jschp::measures::{tuple_loss, MeasureKind};
use jschp::sparse_coding::{
    code_gradient, dual_ascent_alphas, reconstruction_error, smoothing_weights, solve_dictionary,
    DictionarySystem, DualAscentOptions, SparseCodes,
};
use jschp::synthetic::two_gaussians;
use jschp::trainer::{fit, TrainConfig};
use jschp::Label;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0))
}

fn uniform_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Labels with at least one point of each class.
fn labels_both(rng: &mut ChaCha8Rng, n: usize) -> Vec<Label> {
    loop {
        let y: Vec<Label> =
            (0..n).map(|_| if rng.random_bool(0.5) { Label::Positive } else { Label::Negative }).collect();
        if y.iter().any(|l| l.is_positive()) && y.iter().any(|l| !l.is_positive()) {
            return y;
        }
    }
}

struct Instance {
    w: HyperPredictor,
    codes: SparseCodes,
    y: Vec<Label>,
}

fn instance(rng: &mut ChaCha8Rng, n_min: usize) -> Instance {
    let n = rng.random_range(n_min..=12);
    let m = rng.random_range(1..=4);
    let w = HyperPredictor::new(uniform_vec(rng, m));
    let codes = SparseCodes(uniform_matrix(rng, m, n));
    let y = if n >= 2 { labels_both(rng, n) } else { vec![Label::Positive; n] };
    Instance { w, codes, y }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 { diff } else { diff / scale }
}

fn central_diff(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> Vec<f64> {
    let mut p = at.to_vec();
    (0..at.len())
        .map(|j| {
            let h = 1e-5 * (1.0 + at[j].abs());
            p[j] = at[j] + h;
            let up = f(&p);
            p[j] = at[j] - h;
            let down = f(&p);
            p[j] = at[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn upper_bound_holds() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = 0;
    let mut checked = 0;
    for kind in MeasureKind::ALL {
        for _ in 0..1000 {
            let inst = instance(&mut rng, 2);
            let bound = upper_bound(&inst.w, &inst.codes, &inst.y, kind, TiePolicy::Single).unwrap();
            let pred = predict_for_measure(kind, &inst.w, &inst.codes, &inst.y).unwrap();
            let loss = tuple_loss(kind, &inst.y, &pred).unwrap();
            checked += 1;
            if bound < loss - 1e-12 {
                violations += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: violations == 0 && elapsed < Duration::from_secs(10),
        detail: format!("{checked} instances, {violations} violations, {:.2}s", elapsed.as_secs_f64()),
    }
}

fn oracle_matches_bruteforce() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    for kind in MeasureKind::ALL {
        for _ in 0..500 {
            let inst = instance(&mut rng, 2);
            let oracle = argmax_f_oracle(&inst.w, &inst.codes, &inst.y, kind).unwrap();
            let brute = argmax_f_bruteforce(&inst.w, &inst.codes, &inst.y, kind).unwrap();
            let gap = (oracle.max_value - brute.max_value).abs();
            worst = worst.max(gap);
            let attained = f_value(&inst.w, &inst.codes, &inst.y, &oracle.maximizers[0], kind).unwrap();
            if gap > 1e-9 || (attained - brute.max_value).abs() > 1e-9 {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: mismatches == 0 && elapsed < Duration::from_secs(30),
        detail: format!("1500 instances, {mismatches} mismatches, max gap {worst:.1e}, {:.2}s", elapsed.as_secs_f64()),
    }
}

fn gradients_match_finite_differences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_code = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let dict = uniform_matrix(&mut rng, d, m);
        let x = uniform_vec(&mut rng, d);
        let s = uniform_vec(&mut rng, m);
        let prev = uniform_vec(&mut rng, m);
        let u = smoothing_weights(&prev, 1e-8);
        let lt = uniform_vec(&mut rng, m);
        let c1 = rng.random_range(0.0..1.0);
        let g = code_gradient(&dict, &x, &s, &u, c1, &lt).unwrap();
        let obj = |s: &[f64]| {
            reconstruction_error(&dict, &x, s).unwrap()
                + c1 * u.quadratic(s)
                + lt.iter().zip(s).map(|(a, b)| a * b).sum::<f64>()
        };
        worst_code = worst_code.max(rel_err(&g, &central_diff(obj, &s)));
    }

    let mut worst_w = 0.0f64;
    for _ in 0..100 {
        let kind = MeasureKind::ALL[rng.random_range(0..3)];
        let inst = instance(&mut rng, 2);
        let (c2, c3) = (rng.random_range(0.0..1.0), rng.random_range(0.1..2.0));
        let tau = argmax_f_bruteforce(&inst.w, &inst.codes, &inst.y, kind).unwrap().maximizers;
        let g = loss_gradient_w(&inst.w, &inst.codes, &inst.y, &tau, c2, c3).unwrap();
        let h = |w: &[f64]| {
            let p = HyperPredictor::new(w.to_vec());
            let avg: f64 = tau.iter().map(|t| f_value(&p, &inst.codes, &inst.y, t, kind).unwrap()).sum::<f64>()
                / tau.len() as f64;
            0.5 * c2 * w.iter().map(|v| v * v).sum::<f64>() + c3 * avg
        };
        worst_w = worst_w.max(rel_err(&g, &central_diff(h, &inst.w.weights)));
    }
    Outcome {
        pass: worst_code <= 1e-5 && worst_w <= 1e-5,
        detail: format!("max rel. error: codes {worst_code:.1e}, predictor {worst_w:.1e}"),
    }
}

fn dictionary_optimal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_stat = 0.0f64;
    let mut worst_viol = 0.0f64;
    let mut unconverged = 0;
    for _ in 0..100 {
        let d = rng.random_range(2..=6);
        let m = rng.random_range(1..=d);
        let n = rng.random_range(3 * m..=40);
        let x = uniform_matrix(&mut rng, d, n);
        let s = uniform_matrix(&mut rng, m, n);
        let alphas: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let dict = solve_dictionary(&x, &s, &alphas).unwrap();
        let system = DictionarySystem::new(&x, &s).unwrap();
        worst_stat = worst_stat.max(system.lagrangian_gradient(&dict, &alphas).amax());

        let cap = rng.random_range(0.05..0.5);
        let opts = DualAscentOptions { rate: 1.0, steps: 20_000, tol: 1e-8, floor: 0.0 };
        let res = dual_ascent_alphas(&system, cap, &vec![1e-3; m], &opts).unwrap();
        if !res.converged {
            unconverged += 1;
        }
        worst_viol = worst_viol.max(res.max_violation);
    }
    Outcome {
        pass: worst_stat <= 1e-8 && worst_viol <= 1e-4 && unconverged == 0,
        detail: format!("stationarity {worst_stat:.1e}, violation {worst_viol:.1e}, {unconverged} unconverged"),
    }
}

fn smoothing_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 1e-8;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(1..=20);
        let s: Vec<f64> = (0..m)
            .map(|_| {
                let mag = 10f64.powf(rng.random_range(-7.0..1.0)).max(10.0 * eps);
                if rng.random_bool(0.5) { mag } else { -mag }
            })
            .collect();
        let l1: f64 = s.iter().map(|v| v.abs()).sum();
        worst = worst.max((smoothing_weights(&s, eps).quadratic(&s) - l1).abs());
    }
    Outcome { pass: worst <= 1e-12, detail: format!("1000 codes, max error {worst:.1e}") }
}

fn exhaustive_joint_argmax(inst: &Instance) -> (f64, Vec<Vec<Label>>) {
    let scores = inst.w.scores(&inst.codes).unwrap();
    let n = scores.len();
    let mut best = f64::NEG_INFINITY;
    let mut all = Vec::new();
    for mask in 0u32..(1 << n) {
        let cand: Vec<Label> =
            (0..n).map(|i| if mask >> i & 1 == 1 { Label::Positive } else { Label::Negative }).collect();
        let v: f64 = cand.iter().zip(&scores).map(|(l, s)| l.value() * s).sum();
        best = best.max(v);
        all.push((v, cand));
    }
    let tol = 1e-12 * (1.0 + best.abs());
    (best, all.into_iter().filter(|(v, _)| *v >= best - tol).map(|(_, c)| c).collect())
}

fn prediction_decomposes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let inst = instance(&mut rng, 1);
        let pred = predict(&inst.w, &inst.codes).unwrap();
        let (best, maximizers) = exhaustive_joint_argmax(&inst);
        let v = joint_score(&inst.w, &inst.codes, &pred).unwrap();
        if (v - best).abs() > 1e-12 * (1.0 + best.abs()) || !maximizers.contains(&pred) {
            mismatches += 1;
        }
    }

    // zero responses: zero weights, zero codes, and codes orthogonal to w
    let mut tie_failures = 0;
    let zero_cases = [
        Instance { w: HyperPredictor::new(vec![0.0, 0.0]), codes: SparseCodes(DMatrix::from_element(2, 5, 0.7)), y: vec![] },
        Instance { w: HyperPredictor::new(vec![1.0, -2.0]), codes: SparseCodes(DMatrix::zeros(2, 4)), y: vec![] },
        Instance {
            w: HyperPredictor::new(vec![1.0, 1.0]),
            codes: SparseCodes(DMatrix::from_row_slice(2, 3, &[1.0, -0.5, 2.0, -1.0, 0.5, -2.0])),
            y: vec![],
        },
    ];
    for inst in &zero_cases {
        let pred = predict(&inst.w, &inst.codes).unwrap();
        if pred.iter().any(|l| !l.is_positive()) {
            tie_failures += 1;
        }
    }
    let mixed = Instance {
        w: HyperPredictor::new(vec![1.0]),
        codes: SparseCodes(DMatrix::from_row_slice(1, 4, &[0.0, -1.0, 2.0, 0.0])),
        y: vec![],
    };
    let expected = vec![Label::Positive, Label::Negative, Label::Positive, Label::Positive];
    if predict(&mixed.w, &mixed.codes).unwrap() != expected {
        tie_failures += 1;
    }
    Outcome {
        pass: mismatches == 0 && tie_failures == 0,
        detail: format!("1000 instances, {mismatches} mismatches, {tie_failures} zero-score tie failures"),
    }
}

fn gate_config() -> TrainConfig {
    TrainConfig {
        atoms: Some(20),
        c1: 0.1,
        c2: 0.01,
        c3: 1.0,
        iters: 100,
        eta: 0.01,
        ..TrainConfig::default()
    }
}

fn synthetic_gate() -> Outcome {
    let data = two_gaussians(200, 10, 1.5, 0);
    let report = match cross_validate(&data, 10, false, &gate_config(), 1) {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: format!("cross-validation error: {e}") },
    };
    let ok = report.folds.iter().all(|f| f.status == FoldStatus::Ok);
    let slowest = report.folds.iter().map(|f| f.seconds).fold(0.0, f64::max);
    let f1 = report.summary.f1.as_ref().map_or(f64::NAN, |s| s.median);
    let auc = report.summary.auc.as_ref().map_or(f64::NAN, |s| s.median);
    Outcome {
        pass: ok && f1 >= 0.90 && auc >= 0.95 && slowest < 60.0,
        detail: format!("median F1 {f1:.4}, median AUC {auc:.4}, slowest fold {slowest:.2}s"),
    }
}

fn objective_decreases() -> Outcome {
    let mut decreasing = 0;
    let mut notes = Vec::new();
    for seed in 0..10 {
        let data = two_gaussians(200, 10, 1.5, seed);
        let cfg = TrainConfig { seed, ..gate_config() };
        match fit(&data, &cfg) {
            Ok(model) => {
                let first = model.trace[0].objective;
                let tenth = model.trace[9].objective;
                if tenth < first {
                    decreasing += 1;
                }
            }
            Err(e) => notes.push(format!("seed {seed}: {e}")),
        }
    }
    let mut detail = format!("{decreasing}/10 seeds decrease between iterations 1 and 10");
    if !notes.is_empty() {
        detail.push_str(&format!(" ({})", notes.join("; ")));
    }
    Outcome { pass: decreasing >= 9, detail }
}

fn cv_is_deterministic() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("gauss.svm");
    std::fs::write(&data, two_gaussians(200, 10, 1.5, 7).to_svmlight()).unwrap();
    let bin = env!("CARGO_BIN_EXE_jschp");
    let mut reports = Vec::new();
    for (run, jobs) in [(0, "1"), (1, "4")] {
        let out = dir.path().join(format!("report{run}.json"));
        let status = Command::new(bin)
            .args(["cv", "--data"])
            .arg(&data)
            .args(["--folds", "10", "--seed", "11", "--iters", "30", "--jobs", jobs, "--out"])
            .arg(&out)
            .status()
            .unwrap();
        if !status.success() {
            return Outcome { pass: false, detail: format!("cv exited with {status}") };
        }
        reports.push(std::fs::read(&out).unwrap());
    }
    let same = reports[0] == reports[1];
    Outcome { pass: same, detail: format!("{} byte report, identical: {same}", reports[0].len()) }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("upper bound dominates the loss of the prediction", upper_bound_holds),
        ("argmax oracle equals exhaustive search", oracle_matches_bruteforce),
        ("gradients match central differences", gradients_match_finite_differences),
        ("dictionary solve and multipliers are optimal", dictionary_optimal),
        ("smoothed l1 identity", smoothing_identity),
        ("prediction decomposes over points", prediction_decomposes),
        ("synthetic 10-fold gate", synthetic_gate),
        ("objective decreases over early iterations", objective_decreases),
        ("cross-validation reports are reproducible", cv_is_deterministic),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = check();
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {}: {tag}  {name}: {}", i + 1, outcome.detail);
        if !outcome.pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
