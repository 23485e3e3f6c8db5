//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use common::*;
use cpe_core::cadrs::select_views;
use cpe_core::config::{MatchConfig, Matcher, ViewFilter};
use cpe_core::harness::{classify_pointwise, run_benchmark, run_dataset, run_repeats, Dataset};
use cpe_core::otmatch::{classify_ot, sinkhorn, OtParams, TransportProblem, WeightScheme};
use cpe_core::synth::{generate, SynthSpec};
use cpe_core::tda::{zero_dim_persistence, DistanceMatrix};
use cpe_core::tgssg::{filter_synonyms, AmbiguityMetric, ClassCandidates, SynonymCandidate};
use cpe_core::ttamatch::{
    entropy_gradient, infer_tta, marginal_entropy, select_confident, tta_step, view_distributions, ShiftState,
    TtaParams,
};
use cpe_core::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sinkhorn_feasibility() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    for k in 0..1000 {
        let (n, m) = (r.random_range(1..=16), r.random_range(1..=16));
        let cost = Matrix::from_fn(n, m, |_, _| r.random_range(0.0..2.0));
        let a = random_simplex(&mut r, n);
        let b = random_simplex(&mut r, m);
        let eps = [0.05, 0.1, 0.5][k % 3];
        let plan = sinkhorn(&TransportProblem {
            cost,
            a: a.clone(),
            b: b.clone(),
            epsilon: eps,
            max_iters: 10_000,
            tol: 1e-9,
        })
        .map_err(|e| e.to_string())?;
        if !plan.converged {
            unconverged += 1;
            continue;
        }
        let rows = plan.plan.row_sums();
        let cols = plan.plan.col_sums();
        for (x, y) in rows.iter().zip(&a).chain(cols.iter().zip(&b)) {
            worst = worst.max((x - y).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-6 && secs < 10.0 && unconverged == 0,
        format!("max violation {worst:.2e}, {unconverged} unconverged, {secs:.2} s"),
    )
}

fn persistence_oracle() -> Outcome {
    let mut r = rng(77);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = r.random_range(1..=6);
        let d = random_metric(&mut r, n);
        let got = zero_dim_persistence(&DistanceMatrix::new(d.clone()).map_err(|e| e.to_string())?).deaths();
        mismatches += (got != sweep_deaths(&d)) as usize;
    }
    check(mismatches == 0, format!("{mismatches}/200 mismatches"))
}

fn singleton_reduction() -> Outcome {
    let mut r = rng(31);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dim = r.random_range(2..=16);
        let k = r.random_range(2..=6);
        let sets: Vec<_> = (0..k).map(|c| textual_set(c as u32, &[random_unit(&mut r, dim)])).collect();
        let views = view_set(&[random_unit(&mut r, dim)]);
        let tau = [0.01, 0.1, 1.0][r.random_range(0..3)];
        let pw = classify_pointwise(&views, &sets, tau).map_err(|e| e.to_string())?;
        let ot = classify_ot(
            &views,
            &sets,
            &OtParams {
                tau,
                weights: WeightScheme::Uniform,
                ..OtParams::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let centroids: Vec<Vec<f64>> = sets.iter().map(|s| s.centroid()).collect();
        let tta = infer_tta(
            &views,
            &centroids,
            &ShiftState::zeros(k, dim, 0.0),
            &TtaParams {
                tau,
                ..TtaParams::default()
            },
        );
        let oracle = softmax_oracle(&sets.iter().map(|s| cos(views.embeddings().row(0), &s.centroid())).collect::<Vec<_>>(), tau);
        for i in 0..k {
            worst = worst
                .max((ot.probabilities[i] - pw.probabilities[i]).abs())
                .max((tta.probabilities[i] - pw.probabilities[i]).abs())
                .max((oracle[i] - pw.probabilities[i]).abs());
        }
    }
    check(worst < 1e-9, format!("max deviation {worst:.2e} over 100 fixtures"))
}

fn tta_fixture(seed: u64) -> (cpe_core::ViewSet, Vec<Vec<f64>>, usize, usize) {
    let mut r = rng(seed);
    let dim = r.random_range(4..=16);
    let k = r.random_range(2..=5);
    let means: Vec<Vec<f64>> = (0..k).map(|_| random_unit(&mut r, dim)).collect();
    let truth = r.random_range(0..k);
    let n = r.random_range(3..=12);
    let views = view_set(&(0..n).map(|_| around(&mut r, &means[truth], 1.0)).collect::<Vec<_>>());
    let centroids = means.iter().map(|m| around(&mut r, m, 0.3)).collect();
    (views, centroids, k, dim)
}

fn tta_gradient_and_descent() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (views, centroids, k, dim) = tta_fixture(seed);
        let mut r = rng(10_000 + seed);
        let shifts = ShiftState {
            shifts: (0..k).map(|_| gaussian(&mut r, dim, 0.01)).collect(),
            learning_rate: 5e-4,
        };
        let params = TtaParams {
            tau: 0.1,
            fraction: 0.5,
            ..TtaParams::default()
        };
        let dists = view_distributions(&views, &centroids, &shifts, params.tau, false);
        let selected = select_confident(&dists, params.fraction);
        let analytic = entropy_gradient(&views, &centroids, &shifts, &params, &selected);
        let h = 1e-5;
        let (mut err, mut mag): (f64, f64) = (0.0, 0.0);
        for c in 0..k {
            for d in 0..dim {
                let mut plus = shifts.clone();
                plus.shifts[c][d] += h;
                let mut minus = shifts.clone();
                minus.shifts[c][d] -= h;
                let fd = (marginal_entropy(&views, &centroids, &plus, &params, &selected)
                    - marginal_entropy(&views, &centroids, &minus, &params, &selected))
                    / (2.0 * h);
                err = err.max((fd - analytic[c][d]).abs());
                mag = mag.max(fd.abs());
            }
        }
        worst = worst.max(if mag > 0.0 { err / mag } else { err });
    }

    let mut held = 0;
    for seed in 0..100 {
        let (views, centroids, k, dim) = tta_fixture(500 + seed);
        let params = TtaParams::default();
        let zero = ShiftState::zeros(k, dim, params.learning_rate);
        let dists = view_distributions(&views, &centroids, &zero, params.tau, false);
        let selected = select_confident(&dists, params.fraction);
        let before = marginal_entropy(&views, &centroids, &zero, &params, &selected);
        let stepped = tta_step(&views, &centroids, &zero, &params);
        let after = marginal_entropy(&views, &centroids, &stepped, &params, &selected);
        held += (after <= before + 1e-12) as usize;
    }
    check(
        worst < 1e-4 && held >= 95,
        format!("max relative gradient error {worst:.2e}; entropy non-increasing in {held}/100"),
    )
}

fn two_sigma() -> Outcome {
    let mut r = rng(5);
    let acts: Vec<f64> = (0..10_000).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let kept = select_views(&acts).len();
    let rate = 1.0 - kept as f64 / acts.len() as f64;
    let mut example = vec![0.5; 9];
    example.push(0.0);
    let example_kept = select_views(&example);
    check(
        (rate - 0.0228).abs() <= 0.005 && example_kept == (1..=9).collect::<Vec<_>>(),
        format!("rejection rate {:.2}%, example keeps {:?}", 100.0 * rate, example_kept),
    )
}

fn synonym_classes(order: &[usize], flip: bool) -> Vec<ClassCandidates> {
    let angles = synonym_fixture_angles();
    order
        .iter()
        .map(|&i| {
            let (id, ref degs) = angles[i];
            let mut candidates: Vec<SynonymCandidate> = degs
                .iter()
                .enumerate()
                .map(|(j, &deg)| SynonymCandidate {
                    text: format!("c{id}s{j}"),
                    embedding: plane_vector(6, id as usize, deg),
                    is_original: j == 0,
                })
                .collect();
            if flip {
                candidates.reverse();
            }
            ClassCandidates { class_id: id, candidates }
        })
        .collect()
}

fn synonym_fixture() -> Outcome {
    let decisions = |classes: &[ClassCandidates]| -> Result<Vec<(u32, BTreeSet<String>)>, String> {
        let f = filter_synonyms(classes, AmbiguityMetric::Similarity).map_err(|e| e.to_string())?;
        Ok(f.classes
            .iter()
            .map(|(id, d)| (*id, d.retained_texts().into_iter().collect()))
            .collect())
    };
    let base = decisions(&synonym_classes(&[0, 1, 2], false))?;
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let expected = vec![
        (0, set(&["c0s0", "c0s1", "c0s2"])),
        (1, set(&["c1s0", "c1s1", "c1s2"])),
        (2, set(&["c2s0", "c2s1"])),
    ];
    let mut invariant = true;
    for order in [[2, 0, 1], [1, 2, 0], [2, 1, 0]] {
        for flip in [false, true] {
            invariant &= decisions(&synonym_classes(&order, flip))? == base;
        }
    }
    check(
        base == expected && invariant,
        format!("class 2 keeps {:?}; permutation invariant: {invariant}", base[2].1),
    )
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let path = generate(&SynthSpec::default(), dir.path()).map_err(|e| e.to_string())?;
    let ds = Dataset::load(&path).map_err(|e| e.to_string())?;
    let acc = |cfg: MatchConfig| run_dataset(&ds, &cfg).map(|r| r.report.top1_accuracy).map_err(|e| e.to_string());
    let ot = acc(MatchConfig::default())?;
    let pw = acc(MatchConfig {
        matcher: Matcher::Pointwise,
        ..MatchConfig::default()
    })?;
    let unfiltered = acc(MatchConfig {
        view_filter: ViewFilter::None,
        ..MatchConfig::default()
    })?;
    let secs = start.elapsed().as_secs_f64();
    check(
        ot >= pw && ot >= unfiltered && secs < 60.0,
        format!(
            "ot {:.1}%, pointwise {:.1}%, ot unfiltered {:.1}%, {secs:.1} s",
            100.0 * ot,
            100.0 * pw,
            100.0 * unfiltered
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let spec = SynthSpec {
        n_classes: 5,
        images_per_class: 20,
        ..SynthSpec::default()
    };
    let path = generate(&spec, dir.path()).map_err(|e| e.to_string())?;
    let cfg = MatchConfig {
        seed: 7,
        ..MatchConfig::default()
    };
    let a = run_benchmark(&path, &cfg).map_err(|e| e.to_string())?;
    let b = run_benchmark(&path, &cfg).map_err(|e| e.to_string())?;
    let same_log = a.predictions_jsonl().map_err(|e| e.to_string())? == b.predictions_jsonl().map_err(|e| e.to_string())?;
    let repeats = run_repeats(&path, &cfg, &[7, 7, 7]).map_err(|e| e.to_string())?;
    check(
        same_log && repeats.top1_accuracy.std == 0.0,
        format!(
            "identical logs: {same_log}; repeat stddev {}",
            repeats.top1_accuracy.std
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("sinkhorn feasibility", sinkhorn_feasibility),
        ("persistence oracle", persistence_oracle),
        ("singleton reduction", singleton_reduction),
        ("tta gradient", tta_gradient_and_descent),
        ("two-sigma filter", two_sigma),
        ("synonym fixture", synonym_fixture),
        ("end-to-end synthetic", end_to_end),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
