//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use gal_core::classifier::*;
use gal_core::corpus::*;
use gal_core::diagnostics::*;
use gal_core::generator::*;
use gal_core::pipelines::*;
use gal_core::risk::*;
use gal_core::rng;
use gal_core::tasks::GaussianTask;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: u64 = 20;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn seeded_train(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

fn sampler(seed: u64) -> SamplerConfig {
    SamplerConfig {
        seed,
        ..SamplerConfig::default()
    }
}

fn gmm(components: usize, seed: u64) -> GeneratorSpec {
    GeneratorSpec::Gmm {
        components,
        max_iters: 200,
        tol: 1e-6,
        seed,
    }
}

fn spec(family: Family, feature_map: FeatureMap, seed: u64) -> ClassifierSpec {
    ClassifierSpec {
        family,
        feature_map,
        num_classes: 2,
        init_seed: seed,
    }
}

/// Per-seed test accuracies of the two-blob self-training experiment.
struct SelfTrainResults {
    base: Vec<f64>,
    soft: Vec<f64>,
    hard: Vec<f64>,
}

fn self_train_experiment() -> SelfTrainResults {
    let mut r = SelfTrainResults {
        base: vec![],
        soft: vec![],
        hard: vec![],
    };
    for seed in 0..SEEDS {
        let (l, dev, test) = GaussianTask::two_blobs().splits(50, 200, 2000, seed).unwrap();
        let g = fit_unconditional(&l, &gmm(2, seed)).unwrap();
        let f0 = spec(Family::Linear, FeatureMap::Identity { dim: 2 }, seed);
        let cfg = SelfTrainConfig {
            iterations: 3,
            k: 10,
            lambda: 0.5,
            label_mode: AnnotationMode::Soft,
            train: seeded_train(seed),
            sampler: sampler(seed),
            ..SelfTrainConfig::default()
        };
        let soft = self_train(&l, &g, &f0, &cfg, &dev, &test).unwrap();
        let hard_cfg = SelfTrainConfig {
            label_mode: AnnotationMode::Hard,
            ..cfg
        };
        let hard = self_train(&l, &g, &f0, &hard_cfg, &dev, &test).unwrap();
        r.base.push(soft.report.base.test_accuracy);
        r.soft.push(soft.report.final_record().test_accuracy);
        r.hard.push(hard.report.final_record().test_accuracy);
    }
    r
}

fn criterion_1(r: &SelfTrainResults) -> Outcome {
    let gains: Vec<f64> = r.soft.iter().zip(&r.base).map(|(s, b)| s - b).collect();
    let gain = 100.0 * mean(&gains);
    check(
        gain >= 0.5,
        format!(
            "L-only {:.2}%, GAL {:.2}%, paired gain {gain:.3} pts (need >= 0.5)",
            100.0 * mean(&r.base),
            100.0 * mean(&r.soft)
        ),
    )
}

fn criterion_2(r: &SelfTrainResults) -> Outcome {
    let (s, h) = (mean(&r.soft), mean(&r.hard));
    check(s >= h, format!("soft {:.3}%, hard {:.3}%", 100.0 * s, 100.0 * h))
}

fn flip_labels(l: &Dataset, rate: f64, seed: u64) -> Dataset {
    let mut r = rng::from_seed(seed);
    let noisy = l
        .iter()
        .map(|e| {
            let y = e.label.hard().unwrap();
            let y = if r.random::<f64>() < rate { 1 - y } else { y };
            e.with_label(Label::Hard(y))
        })
        .collect();
    l.with_examples("noisy", noisy)
}

fn criterion_3() -> Outcome {
    let (mut cond, mut gal) = (vec![], vec![]);
    for seed in 0..SEEDS {
        let (l, dev, test) = GaussianTask::two_blobs().splits(50, 200, 2000, seed).unwrap();
        let noisy = flip_labels(&l, 0.2, rng::derive(seed, 99));
        let g = fit_class_conditional(&noisy, &gmm(2, seed)).unwrap();
        let f0 = spec(Family::Linear, FeatureMap::Identity { dim: 2 }, seed);
        let synthetic = generate_labeled(&g, 10 * l.len(), &sampler(seed), &l.schema).unwrap().dataset;
        let (f, _) = train(f0.build().unwrap(), TrainingData::Single(&synthetic), &seeded_train(seed), &dev).unwrap();
        cond.push(evaluate(&f, &test).unwrap().accuracy);
        let cfg = SelfTrainConfig {
            iterations: 1,
            k: 10,
            lambda: 0.5,
            train: seeded_train(seed),
            sampler: sampler(seed),
            ..SelfTrainConfig::default()
        };
        let out = self_train(&l, &g, &f0, &cfg, &dev, &test).unwrap();
        gal.push(out.report.final_record().test_accuracy);
    }
    let gap = 100.0 * (mean(&gal) - mean(&cond));
    check(
        gap >= 2.0,
        format!(
            "conditioning labels {:.2}%, GAL re-annotation {:.2}%, gap {gap:.2} pts (need >= 2)",
            100.0 * mean(&cond),
            100.0 * mean(&gal)
        ),
    )
}

fn criterion_4() -> Outcome {
    let (mut gal, mut plain, mut teach) = (vec![], vec![], vec![]);
    for seed in 0..SEEDS {
        let (l, dev, test) = GaussianTask::xor(1.0).splits(50, 200, 2000, seed).unwrap();
        let g = fit_unconditional(&l, &gmm(4, seed)).unwrap();
        let tspec = spec(Family::Mlp { hidden: 32 }, FeatureMap::Identity { dim: 2 }, seed);
        let sspec = spec(Family::Linear, FeatureMap::Quadratic { input_dim: 2 }, seed);
        let (teacher, _) = train(tspec.build().unwrap(), TrainingData::Single(&l), &seeded_train(seed), &dev).unwrap();
        let cfg = DistillConfig {
            k: 10,
            lambda: 0.2,
            train: seeded_train(seed),
            sampler: sampler(seed),
        };
        let a = distill(&l, &g, &teacher, &sspec, &cfg, &dev, &test).unwrap();
        let b = distill_on_labeled(&l, &teacher, sspec.build().unwrap(), &seeded_train(seed), &dev, &test).unwrap();
        teach.push(a.report.base.test_accuracy);
        gal.push(a.report.final_record().test_accuracy);
        plain.push(b.report.final_record().test_accuracy);
    }
    let gap = 100.0 * (mean(&gal) - mean(&plain));
    check(
        gap >= 0.5,
        format!(
            "teacher {:.2}%, KD on L {:.2}%, GAL-KD {:.2}%, gap {gap:.2} pts (need >= 0.5)",
            100.0 * mean(&teach),
            100.0 * mean(&plain),
            100.0 * mean(&gal)
        ),
    )
}

fn criterion_5() -> Outcome {
    let t = random_tabular(16, 5);
    let g = Generator::Tabular(t.clone());
    let prior = SoftLabel::new(table(&t).0.to_vec()).unwrap();
    let bayes = BayesOptimal {
        generator: &g,
        prior,
    };
    let best = exact_class_conditional_risk(&bayes, &t);
    let mut r = rng::from_seed(55);
    let mut worst_margin = f64::INFINITY;
    for i in 0..1000 {
        let other = if i % 2 == 0 {
            exact_class_conditional_risk(&Lookup::random(&t.points, &mut r), &t)
        } else {
            let params: Vec<f64> = (0..4)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    3.0 * z
                })
                .collect();
            exact_class_conditional_risk(&linear_1d(params), &t)
        };
        if best > other {
            return Err(format!("competitor {i} has risk {other} < Bayes {best}"));
        }
        worst_margin = worst_margin.min(other - best);
    }
    Ok(format!("Bayes risk {best:.6}, smallest competitor margin {worst_margin:.3e} over 1000"))
}

fn criterion_6() -> Outcome {
    let (l, _, _) = GaussianTask::two_blobs().splits(100, 10, 10, 6).unwrap();
    let g = fit_unconditional(&l, &gmm(2, 6)).unwrap();
    let mut f_t = spec(Family::Mlp { hidden: 4 }, FeatureMap::Identity { dim: 2 }, 6).build().unwrap();
    let mut r = rng::from_seed(66);
    for w in f_t.model.params_mut() {
        *w = StandardNormal.sample(&mut r);
    }
    let base = generative_risk(&f_t, &f_t, &g, 4000, 7).unwrap();
    let mut worst = f64::INFINITY;
    for i in 0..100 {
        let mut p = f_t.clone();
        for w in p.model.params_mut() {
            let z: f64 = StandardNormal.sample(&mut r);
            *w += 0.1 * z;
        }
        let q = generative_risk(&p, &f_t, &g, 4000, 7).unwrap();
        let slack = q.value - base.value + 3.0 * base.std_error.max(q.std_error);
        if slack < 0.0 {
            return Err(format!("perturbation {i}: {} < {}", q.value, base.value));
        }
        worst = worst.min(q.value - base.value);
    }
    Ok(format!("R(f_t) = {:.5}, smallest excess over 100 perturbations {worst:.3e}", base.value))
}

fn criterion_7() -> Outcome {
    let mut notes = vec![];
    let d = GaussianTask::two_blobs().sample(40, 7, "g").unwrap();
    let lin = {
        let mut f = spec(Family::Linear, FeatureMap::Identity { dim: 2 }, 0).build().unwrap();
        let mut r = rng::from_seed(70);
        for w in f.model.params_mut() {
            *w = StandardNormal.sample(&mut r);
        }
        f
    };
    let mlp = spec(Family::Mlp { hidden: 6 }, FeatureMap::Identity { dim: 2 }, 71).build().unwrap();
    let e_lin = gradient_check(&lin, &d, 1e-6, 0.01, 0).unwrap();
    let e_mlp = gradient_check(&mlp, &d, 1e-6, 0.01, 0).unwrap();
    if !(e_lin < 1e-5 && e_mlp < 1e-4) {
        return Err(format!("gradient check: linear {e_lin:.2e}, mlp {e_mlp:.2e}"));
    }
    notes.push(format!("grad err linear {e_lin:.1e} mlp {e_mlp:.1e}"));

    let mut r = rng::from_seed(72);
    for _ in 0..1000 {
        let logits: Vec<f64> = (0..5)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                (10.0 * z * 65536.0).round() / 65536.0
            })
            .collect();
        // Dyadic logits and an integer shift keep the addition exact.
        let shift = r.random_range(-1000i32..=1000) as f64;
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let (a, b) = (softmax(&logits), softmax(&shifted));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            if (x - y).abs() > f64::EPSILON * x.max(*y) {
                return Err(format!("shift invariance: {x} vs {y}"));
            }
        }
    }
    notes.push("shift invariant".into());

    let t = random_tabular(8, 73);
    let g = Generator::Tabular(t.clone());
    let f_t = linear_1d(vec![0.6, -0.2, -0.5, 0.3]);
    let f_n = linear_1d(vec![-0.1, 0.4, 0.2, -0.3]);
    let prior = SoftLabel::new(table(&t).0.to_vec()).unwrap();
    let l = Dataset::new(
        "l8",
        TaskSchema::continuous(2, 1).unwrap(),
        t.points
            .iter()
            .enumerate()
            .map(|(i, p)| Example::features(p.clone(), Label::Hard(usize::from(i % 3 == 0))))
            .collect(),
    )
    .unwrap();
    let mut checks: Vec<(&str, RiskEstimate, f64)> = vec![
        (
            "generative",
            generative_risk(&f_n, &f_t, &g, 20_000, 1).unwrap(),
            exact_generative_risk(&f_n, &f_t, &t),
        ),
        (
            "class-conditional",
            class_conditional_risk(&f_n, &g, &prior, 20_000, 2).unwrap(),
            exact_class_conditional_risk(&f_n, &t),
        ),
        (
            "mixup",
            vicinal_risk(
                &f_n,
                &l,
                &VicinityConfig {
                    kind: Vicinity::MixupFixed { gamma: 0.3 },
                    mc_samples: 2_500,
                    seed: 3,
                },
            )
            .unwrap(),
            exact_fixed_mixup_risk(&f_n, &l, 0.3),
        ),
    ];
    let gal = gal_risk(&f_n, &f_t, &g, &l, 0.5, 20_000, 4).unwrap();
    let exact_emp = l
        .iter()
        .map(|e| ce(&SoftLabel::one_hot(e.label.hard().unwrap(), 2).into_vec(), &f_n.predict(&e.payload).unwrap().into_vec()))
        .sum::<f64>()
        / l.len() as f64;
    checks.push(("gal", gal.combined, 0.5 * exact_emp + 0.5 * exact_generative_risk(&f_n, &f_t, &t)));
    for (name, est, exact) in &checks {
        if !est.agrees_with(*exact, 3.0) {
            return Err(format!("{name}: estimate {} +- {} vs exact {exact}", est.value, est.std_error));
        }
    }
    notes.push(format!("{} estimators within 3 se of enumeration", checks.len()));
    Ok(notes.join("; "))
}

fn criterion_8() -> Outcome {
    let schema = TaskSchema::text(2, 2).unwrap();
    let mut ex = vec![];
    for i in 0..100 {
        let segs: Vec<String> = match i % 10 {
            0 => vec!["only one".into()],
            1 => vec!["a".into(), "b".into(), "c".into()],
            _ => vec![format!("w{}", i % 37), "x".into()],
        };
        ex.push(Example::text(&segs, Label::Absent));
    }
    let d = Dataset::new_unchecked("raw", schema, ex);
    let (conforming, rejected) = enforce_segment_count(&d, 2).unwrap();
    let unique = dedup(&conforming);
    let distinct: std::collections::HashSet<_> = conforming.iter().map(|e| e.payload.key()).collect();
    if rejected != 20 || conforming.len() != 80 || unique.len() != distinct.len() {
        return Err(format!("rejected {rejected}, conforming {}, unique {}", conforming.len(), unique.len()));
    }

    let probs = [[0.97, 0.03], [0.5, 0.5], [0.2, 0.8], [0.01, 0.99], [0.951, 0.049]];
    let soft = Dataset::new_unchecked(
        "soft",
        TaskSchema::continuous(2, 1).unwrap(),
        probs
            .iter()
            .map(|p| Example::features(vec![0.0], Label::Soft(SoftLabel::new(p.to_vec()).unwrap())))
            .collect(),
    );
    let (kept, dropped) = confidence_filter(&soft, 0.95).unwrap();
    if kept.len() != 3 || kept.len() + dropped != soft.len() {
        return Err(format!("confidence filter kept {} dropped {dropped}", kept.len()));
    }

    let (l, u, _) = GaussianTask::two_blobs().splits(50, 500, 1, 8).unwrap();
    let annotated = u.with_examples(
        "u",
        u.iter()
            .map(|e| e.with_label(Label::Soft(SoftLabel::uniform(2))))
            .collect(),
    );
    let mut m = mix(&l, &annotated, 0.5, 32, 8).unwrap();
    let (mut lab, mut tot) = (0usize, 0usize);
    for b in m.by_ref().take(10_000) {
        lab += b.labeled_count();
        tot += b.len();
    }
    let frac = lab as f64 / tot as f64;
    if (frac - 0.5).abs() > 0.01 {
        return Err(format!("mix labeled fraction {frac}"));
    }

    let (l, dev, test) = GaussianTask::two_blobs().splits(50, 200, 500, 9).unwrap();
    let g = fit_unconditional(&l, &gmm(2, 9)).unwrap();
    let cfg = SelfTrainConfig {
        train: seeded_train(9),
        sampler: sampler(9),
        ..SelfTrainConfig::default()
    };
    let f0 = spec(Family::Linear, FeatureMap::Identity { dim: 2 }, 9);
    let a = self_train(&l, &g, &f0, &cfg, &dev, &test).unwrap();
    let b = self_train(&l, &g, &f0, &cfg, &dev, &test).unwrap();
    let hashes: BTreeSet<_> = a.report.iterations.iter().map(|r| r.unlabeled_hash.clone()).collect();
    if hashes.len() != 1 {
        return Err(format!("{} distinct synthetic-set hashes", hashes.len()));
    }
    let (ja, jb) = (a.report.to_json().unwrap(), b.report.to_json().unwrap());
    check(
        ja == jb,
        format!("20 rejected / 80 kept, filter 3+2, mix fraction {frac:.4}, one U hash, report {} bytes identical", ja.len()),
    )
}

fn criterion_9() -> Outcome {
    let text = |s: &str| {
        Dataset::new(
            "t",
            TaskSchema::text(2, 1).unwrap(),
            vec![Example::text(&[s], Label::Absent)],
        )
        .unwrap()
    };
    let orders: BTreeSet<usize> = [2].into();
    let o = ngram_overlap(&text("a b c"), &text("b c d"), &orders).unwrap();
    let row = o.rows[0];
    if (row.unique_a, row.unique_b, row.shared) != (2, 2, 1) {
        return Err(format!("overlap {row:?}"));
    }
    let w = agreement(&[1, 1, 0, 0], &[1, 0, 0, 0], Averaging::Binary { positive_class: 1 }).unwrap();
    if (w.precision, w.recall, w.f1, w.accuracy) != (1.0, 0.5, 2.0 / 3.0, 0.75) {
        return Err(format!("worked agreement {w:?}"));
    }
    // Confusion matrix TP 40, FP 10, FN 20, TN 30.
    let mut reference = vec![];
    let mut candidate = vec![];
    for (r, c, n) in [(1, 1, 40), (0, 1, 10), (1, 0, 20), (0, 0, 30)] {
        reference.extend(std::iter::repeat_n(r, n));
        candidate.extend(std::iter::repeat_n(c, n));
    }
    let a = agreement(&reference, &candidate, Averaging::Binary { positive_class: 1 }).unwrap();
    let expected = (40.0 / 50.0, 40.0 / 60.0, 8.0 / 11.0, 70.0 / 100.0);
    let got = (a.precision, a.recall, a.f1, a.accuracy);
    check(
        got.0 == expected.0
            && got.1 == expected.1
            && got.2 == 2.0 * expected.0 * expected.1 / (expected.0 + expected.1)
            && (got.2 - expected.2).abs() <= f64::EPSILON
            && got.3 == expected.3,
        format!("overlap (2,2,1); worked P/R/F1/acc exact; 100-example matrix {got:?}"),
    )
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("criterion {id} [{tag}] {name}: {detail} ({secs:.1}s)");
    ok
}

fn main() {
    // libtest-style filters are ignored; every criterion always runs.
    let mut ok = true;
    let start = Instant::now();
    let st = catch_unwind(self_train_experiment).map_err(|_| "self-training experiment panicked".to_string());
    let secs = start.elapsed().as_secs_f64();
    ok &= run(1, "GAL self-training beats L-only", || {
        criterion_1(st.as_ref()?).map(|d| format!("{d}, experiment {secs:.1}s"))
    });
    ok &= run(2, "soft pseudo-labels >= hard", || criterion_2(st.as_ref()?));
    ok &= run(3, "re-annotation beats conditioning labels", criterion_3);
    ok &= run(4, "GAL-KD beats KD on L", criterion_4);
    ok &= run(5, "Bayes rule is risk-optimal", criterion_5);
    ok &= run(6, "teacher minimizes generative risk", criterion_6);
    ok &= run(7, "numerical integrity", criterion_7);
    ok &= run(8, "pipeline mechanics", criterion_8);
    ok &= run(9, "diagnostics fidelity", criterion_9);
    if !ok {
        std::process::exit(1);
    }
}
