//! One check per acceptance criterion, each reporting a PASS/FAIL line.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use common::{
    kde_at, lp_optimum_uniform, ls_reference, max_relative_error, mmd_sq, normal_matrix, numeric_gradient, rng,
    trapezoid, uniform_matrix,
};
use dal_cli::{parse_config_str, run_experiment};
use dal_core::dataio::{
    gen_toy_stream, labels_per_class, sample_mixture_stream, Dataset, StreamMode, StreamSpec, TaskBatch,
};
use dal_core::diagnostics::{delta, delta_beta_limit, laplacian_factor, rademacher_u2, trajectory_length, BoundInputs};
use dal_core::efmdi::{cost_matrix, encode, kde_l2_distance, kme_sq_distance_trace_form, median_heuristic};
use dal_core::efmdi::{BandwidthRule, EfmdiMethod};
use dal_core::linalg::{gaussian_gram, median_row_distance};
use dal_core::manifold::build_laplacian;
use dal_core::model::LinearModel;
use dal_core::solvers::{fit_dal_ls, run_task_flow, CelObjective, Loss, ModelReuse, Objective, SolverConfig, Variant};
use dal_core::transport::{plan_features, sinkhorn, uniform_marginal, SinkhornConfig};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use dal_validation::*;
use statrs::distribution::{Binomial, DiscreteCDF};

#[test]
fn criterion_1_transport_matches_lp() {
    let started = Instant::now();
    let mut r = rng(101);
    let (mut worst_gap, mut worst_violation) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let d = r.random_range(2..=10);
        let c = uniform_matrix(&mut r, d, d);
        let u = uniform_marginal(d);
        let plan = sinkhorn(&c, &u, &u, &SinkhornConfig { epsilon: 1e-3, ..Default::default() }).unwrap();
        worst_gap = worst_gap.max((plan.transport_cost(&c) - lp_optimum_uniform(&c)).abs());
        worst_violation = worst_violation.max(plan.marginal_violation());
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst_gap < OT_COST_GAP && worst_violation < OT_MARGINAL && secs < OT_SECONDS;
    verdict(1, "OT correctness", pass, &format!("max gap {worst_gap:.2e}, max violation {worst_violation:.2e}, {secs:.2}s"));
}

#[test]
fn criterion_2_permutation_recovery() {
    let (mut exact, mut worst) = (true, 0.0f64);
    for seed in 0..20u64 {
        let mut r = rng(200 + seed);
        let d = r.random_range(2..=15);
        let n = 80;
        let mut locs: Vec<f64> = (0..d).map(|j| 3.0 * j as f64).collect();
        locs.shuffle(&mut r);
        let scales: Vec<f64> = (0..d).map(|_| r.random_range(0.5..1.5)).collect();
        let z = normal_matrix(&mut r, n, d);
        let prev = DMatrix::from_fn(n, d, |i, j| locs[j] + scales[j] * z[(i, j)]);
        let mut perm: Vec<usize> = (0..d).collect();
        perm.shuffle(&mut r);
        let z2 = normal_matrix(&mut r, n, d);
        // a fresh batch from the same feature marginals, columns permuted
        let cur = DMatrix::from_fn(n, d, |i, mu| locs[perm[mu]] + scales[perm[mu]] * z2[(i, mu)]);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let all: Vec<usize> = (0..n).collect();
        let pb = TaskBatch::new(0, prev, all.clone(), &labels, 2).unwrap();
        let cb = TaskBatch::new(1, cur, all, &labels, 2).unwrap();
        let width = BandwidthRule::Fixed(median_heuristic(&[&cb.features, &pb.features]));
        let cost = cost_matrix(
            &encode(&cb, EfmdiMethod::Kme, width).unwrap(),
            &encode(&pb, EfmdiMethod::Kme, width).unwrap(),
        )
        .unwrap();
        let plan = plan_features(&cost, &SinkhornConfig { epsilon: 1e-3, ..Default::default() }).unwrap();
        let p = DMatrix::from_fn(d, d, |mu, nu| if perm[mu] == nu { 1.0 } else { 0.0 });
        exact &= (0..d).all(|mu| plan.coupling.row(mu).transpose().argmax().0 == perm[mu]);
        worst = worst.max((&plan.coupling * d as f64 - p).amax());
    }
    let pass = exact && worst < PERMUTATION_ENTRY;
    verdict(2, "permutation recovery", pass, &format!("argmax exact: {exact}, max |d*T - P| {worst:.2e}"));
}

fn feature(r: &mut impl Rng, n: usize, max_scale: f64) -> Vec<f64> {
    let loc = r.random_range(-2.0..2.0);
    let scale = r.random_range(0.2..max_scale);
    (0..n).map(|_| loc + scale * r.sample::<f64, _>(StandardNormal)).collect()
}

#[test]
fn criterion_3_efmdi_equivalence() {
    let mut r = rng(301);
    let mut kme_err = 0.0f64;
    for _ in 0..100 {
        let (n, m) = (r.random_range(1..=12), r.random_range(1..=12));
        let x = feature(&mut r, n, 3.0);
        let y = feature(&mut r, m, 3.0);
        let sigma = r.random_range(0.1..3.0);
        kme_err = kme_err.max((kme_sq_distance_trace_form(&x, &y, sigma) - mmd_sq(&x, &y, sigma)).abs());
    }
    let mut kde_err = 0.0f64;
    for _ in 0..100 {
        let (n, m) = (r.random_range(1..=6), r.random_range(1..=6));
        let x = feature(&mut r, n, 2.0);
        let y = feature(&mut r, m, 2.0);
        let (hx, hy) = (r.random_range(0.2..1.5), r.random_range(0.2..1.5));
        let lo = x.iter().chain(&y).copied().fold(f64::INFINITY, f64::min) - 12.0;
        let hi = x.iter().chain(&y).copied().fold(f64::NEG_INFINITY, f64::max) + 12.0;
        let steps = ((hi - lo) / 1e-3).ceil() as usize;
        let quad = trapezoid(|u| (kde_at(&x, hx, u) - kde_at(&y, hy, u)).powi(2), lo, hi, steps);
        kde_err = kde_err.max((kde_l2_distance(&x, hx, &y, hy) - quad).abs());
    }
    let pass = kme_err < KME_TRACE_FORM && kde_err < KDE_QUADRATURE;
    verdict(3, "EFMDI equivalence", pass, &format!("trace form err {kme_err:.2e}, KDE quadrature err {kde_err:.2e}"));
}

#[test]
fn criterion_4_solver_cross_validation() {
    let mut ls_err = 0.0f64;
    let mut grad_err = 0.0f64;
    for seed in 0..20u64 {
        let mut r = rng(400 + seed);
        let (n, d, c) = (r.random_range(10..30), r.random_range(2..8), r.random_range(2..5));
        let labeled = r.random_range(c..=n);
        let features = normal_matrix(&mut r, n, d);
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut r);
        let mut idx = rows[..labeled].to_vec();
        idx.sort_unstable();
        let labels: Vec<usize> = (0..labeled).map(|i| i % c).collect();
        let batch = TaskBatch::new(1, features, idx, &labels, c).unwrap();
        let u = uniform_marginal(d);
        let plan = sinkhorn(&uniform_matrix(&mut r, d, d), &u, &u, &SinkhornConfig { epsilon: 0.1, ..Default::default() })
            .unwrap();
        let prev = LinearModel::new(normal_matrix(&mut r, d, c), DVector::zeros(c)).unwrap();
        let lap = build_laplacian(&batch.features, 5.min(n - 1)).unwrap();
        let cfg = SolverConfig { alpha: r.random_range(0.1..3.0), beta: r.random_range(0.0..1.0), ..Default::default() };
        let fit = fit_dal_ls(&batch, Some(ModelReuse { previous: &prev, plan: &plan }), Some(&lap), &cfg).unwrap();
        let prior = &plan.coupling * &prev.weights * d as f64;
        let q = batch.features.transpose() * &lap.matrix * &batch.features;
        let xl = batch.labeled_features();
        let (w, _) = ls_reference(&xl, &batch.labels_onehot, &prior, cfg.alpha, cfg.beta, &q, 1e-13);
        ls_err = ls_err.max((&fit.model.weights - w).amax());

        let cel = CelObjective::new(xl, batch.labels_onehot.clone(), prior, cfg.alpha, cfg.beta, Some(q));
        let w0 = normal_matrix(&mut r, d, c);
        let fd = numeric_gradient(|v| cel.value(v), &w0, 1e-6);
        grad_err = grad_err.max(max_relative_error(&cel.gradient(&w0), &fd));
    }
    let pass = ls_err < LS_CLOSED_FORM && grad_err < CEL_GRADIENT_REL;
    verdict(4, "solver cross-validation", pass, &format!("LS vs CG max diff {ls_err:.2e}, CEL gradient rel err {grad_err:.2e}"));
}

#[test]
fn criterion_5_convergence_behaviour() {
    let cfg = SolverConfig { loss: Loss::Cel, ..Default::default() };
    let mut iterations = Vec::new();
    let (mut monotone, mut terminated) = (true, true);
    for seed in 0..10 {
        let stream = gen_toy_stream(&StreamSpec { seed, ..Default::default() }).unwrap();
        let out = run_task_flow(&stream, &cfg, Variant::Dal, seed).unwrap();
        for (rec, trace) in out.records.iter().zip(&out.traces) {
            iterations.push(rec.iterations);
            monotone &= trace.windows(2).all(|w| w[1] <= w[0]);
            terminated &= rec.converged || rec.iterations == cfg.max_iter;
        }
    }
    iterations.sort_unstable();
    let k = iterations.len();
    let median = (iterations[k / 2 - 1] + iterations[k / 2]) as f64 / 2.0;
    let pass = k == 40 && median <= MEDIAN_ITERATIONS && monotone && terminated;
    verdict(5, "convergence", pass, &format!("median iterations {median}, monotone {monotone}, terminated {terminated}"));
}

#[test]
fn criterion_6_ablation_ordering() {
    let started = Instant::now();
    let cfg = SolverConfig { loss: Loss::Cel, ..Default::default() };
    let mean_acc = |variant: Variant| -> f64 {
        let mut total = 0.0;
        for seed in 0..10 {
            let stream = gen_toy_stream(&StreamSpec { seed, ..Default::default() }).unwrap();
            let out = run_task_flow(&stream, &cfg, variant, seed).unwrap();
            total += out.records.iter().map(|r| r.accuracy).sum::<f64>() / out.records.len() as f64;
        }
        total / 10.0
    };
    let (dal, ls_g, ridge) = (mean_acc(Variant::Dal), mean_acc(Variant::LsG), mean_acc(Variant::Ridge));
    let secs = started.elapsed().as_secs_f64();
    let (m_g, m_r) = (dal - ls_g, dal - ridge);
    let pass = m_g >= ABLATION_MARGIN && m_r >= ABLATION_MARGIN && secs < ABLATION_SECONDS;
    verdict(
        6,
        "ablation ordering",
        pass,
        &format!("dal {dal:.4}, ls_g {ls_g:.4}, ridge {ridge:.4}; margins {m_g:+.4} / {m_r:+.4}, {secs:.1}s"),
    );
}

#[test]
fn criterion_7_theory_diagnostics() {
    let mut r = rng(701);
    let mut monotone = true;
    let mut ratios = Vec::new();
    for _ in 0..50 {
        let n = r.random_range(4..20);
        let x = normal_matrix(&mut r, n, 3);
        let k = gaussian_gram(&x, median_row_distance(&x));
        let g = laplacian_factor(&build_laplacian(&x, 4.min(n - 1)).unwrap().matrix);
        let l = r.random_range(1..=n);
        let a = r.random_range(0.1..3.0);
        let mut prev = f64::INFINITY;
        for b in [0.0, 1e-2, 0.1, 1.0, 10.0, 1e2, 1e4] {
            let inp = BoundInputs::new(k.clone(), l, g.clone(), a, b).unwrap();
            let u2 = rademacher_u2(&inp).unwrap().u2;
            monotone &= u2 <= prev + 1e-12 * prev.abs().max(1.0);
            prev = u2;
        }
        let inp = BoundInputs::new(k, l, g, a, 1.0).unwrap();
        if let Ok(limit) = delta_beta_limit(&inp) {
            ratios.push(delta(&inp, 1e8).unwrap() / limit);
        }
    }
    let limit_ok = ratios.len() >= 10 && ratios.iter().all(|q| (q - 1.0).abs() <= DELTA_LIMIT_REL);

    let model = |w: DMatrix<f64>| LinearModel::new(w, DVector::zeros(2)).unwrap();
    let pts: Vec<DMatrix<f64>> = (0..6).map(|_| normal_matrix(&mut r, 3, 2)).collect();
    let coarse: Vec<LinearModel> = pts.iter().cloned().map(model).collect();
    let times = |k: usize| (0..k).map(|i| i as f64 / (k - 1) as f64).collect::<Vec<_>>();
    let direct: f64 = pts.windows(2).map(|w| (0..2).map(|j| (&w[1] - &w[0]).column(j).norm()).sum::<f64>()).sum();
    let mut fine = Vec::new();
    for w in pts.windows(2) {
        fine.push(model(w[0].clone()));
        fine.push(model((&w[0] * 0.75) + (&w[1] * 0.25)));
        fine.push(model((&w[0] + &w[1]) * 0.5));
    }
    fine.push(model(pts[5].clone()));
    let a = trajectory_length(&coarse, &times(6)).unwrap().total;
    let b = trajectory_length(&fine, &times(fine.len())).unwrap().total;
    let line_ok = (a - direct).abs() < TRAJECTORY_EXACT && (a - b).abs() < TRAJECTORY_EXACT;
    let worst_ratio = ratios.iter().map(|q| (q - 1.0).abs()).fold(0.0, f64::max);
    verdict(
        7,
        "theory diagnostics",
        monotone && limit_ok && line_ok,
        &format!(
            "U² monotone {monotone}, limit ratio err {worst_ratio:.2e} over {} instances, trajectory identities {line_ok}",
            ratios.len()
        ),
    );
}

#[test]
fn criterion_8_protocol_fidelity() {
    let mut ok = true;
    let mut notes = Vec::new();
    for seed in 0..5 {
        let spec = StreamSpec { seed, ..Default::default() };
        let stream = gen_toy_stream(&spec).unwrap();
        let t0 = &stream[0].batch;
        ok &= t0.len() == 2 * spec.batch_size && t0.labeled_count() == t0.len();
        for task in &stream[1..] {
            let labels = task.truth.labels();
            for class in 0..2 {
                let present = labels.iter().filter(|&&l| l == class).count();
                let revealed = task.batch.labeled_idx.iter().filter(|&&i| labels[i] == class).count();
                ok &= revealed == labels_per_class(present, 0.01) && revealed >= usize::from(present > 0);
            }
        }
    }
    notes.push(format!("toy task sizes/labels ok: {ok}"));

    // source rows tagged positive, target rows negative
    let n = 4000;
    let tag = |sign: f64, seed: u64| {
        let mut r = rng(seed);
        let z = normal_matrix(&mut r, n, 2);
        let f = DMatrix::from_fn(n, 3, |i, j| if j == 0 { sign * (i as f64 + 1.0) } else { z[(i, j - 1)] });
        Dataset::new(f, (0..n).map(|i| i % 2).collect(), 2).unwrap()
    };
    let (src, tgt) = (tag(1.0, 1), tag(-1.0, 2));
    let spec = StreamSpec {
        mode: StreamMode::Mixture,
        task_count: 2,
        schedule: Some(vec![0.0, 0.4, 1.0]),
        batch_size: 1000,
        task0_size_multiplier: 1.0,
        seed: 3,
        ..Default::default()
    };
    let stream = sample_mixture_stream(&src, &tgt, &spec).unwrap();
    let from_target = |t: usize| stream[t].batch.features.column(0).iter().filter(|&&v| v < 0.0).count() as u64;
    let ends = from_target(0) == 0 && from_target(2) == 1000;
    let b = Binomial::new(0.4, 1000).unwrap();
    let (lo, hi) = (b.inverse_cdf(0.005), b.inverse_cdf(0.995));
    let mid = from_target(1);
    let distinct: BTreeSet<i64> =
        stream.iter().flat_map(|t| t.batch.features.column(0).iter().map(|&v| v as i64).collect::<Vec<_>>()).collect();
    let no_reuse = distinct.len() == 3000;
    notes.push(format!("mixture endpoints {ends}, interior {mid} in [{lo}, {hi}], draws unique {no_reuse}"));
    verdict(8, "protocol fidelity", ok && ends && (lo..=hi).contains(&mid) && no_reuse, &notes.join("; "));
}

fn strip_timing(text: &str) -> Vec<serde_json::Value> {
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            v
        })
        .collect()
}

fn metric_files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for sub in ["", "runs", "models"] {
        let mut names: Vec<String> = fs::read_dir(dir.join(sub))
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            // the echoed config names its own output directory
            .filter(|e| e.file_name() != "config.json")
            .map(|e| Path::new(sub).join(e.file_name()).to_string_lossy().into_owned())
            .collect();
        names.sort();
        out.extend(names);
    }
    out
}

#[test]
fn criterion_9_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let base = r#"{"solver": {"loss": "cel"}, "seeds": [0, 1, 2]"#;
    let run = |name: &str| {
        let text = format!(r#"{base}, "output_dir": "{}"}}"#, tmp.path().join(name).display());
        let cfg = parse_config_str(&text, tmp.path()).unwrap();
        run_experiment(&cfg).unwrap();
        tmp.path().join(name)
    };
    let (a, b) = (run("a"), run("b"));
    let files = metric_files(&a);
    let mut same = files == metric_files(&b);
    let mut differing = Vec::new();
    for f in &files {
        let (x, y) = (fs::read_to_string(a.join(f)).unwrap(), fs::read_to_string(b.join(f)).unwrap());
        let equal = if f.ends_with(".jsonl") { strip_timing(&x) == strip_timing(&y) } else { x == y };
        if !equal {
            differing.push(f.clone());
        }
        same &= equal;
    }
    verdict(9, "reproducibility", same, &format!("{} files compared, differing: {differing:?}", files.len()));
}
