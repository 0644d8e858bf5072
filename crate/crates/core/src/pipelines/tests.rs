use super::*;
use crate::classifier::{Family, FeatureMap, SoftLabel};
use crate::corpus::{Example, Payload, TaskSchema};
use crate::generator::{fit_unconditional, GeneratorSpec};
use crate::tasks::GaussianTask;

fn setup(seed: u64) -> (Dataset, Dataset, Dataset, Generator) {
    let (l, dev, test) = GaussianTask::two_blobs().splits(40, 100, 200, seed).unwrap();
    let g = fit_unconditional(
        &l,
        &GeneratorSpec::Gmm {
            components: 2,
            max_iters: 100,
            tol: 1e-6,
            seed,
        },
    )
    .unwrap();
    (l, dev, test, g)
}

fn linear_spec() -> ClassifierSpec {
    ClassifierSpec {
        family: Family::Linear,
        feature_map: FeatureMap::Identity { dim: 2 },
        num_classes: 2,
        init_seed: 0,
    }
}

fn quick_cfg() -> SelfTrainConfig {
    SelfTrainConfig {
        k: 5,
        train: TrainConfig {
            epochs: 10,
            early_stop_patience: 5,
            ..TrainConfig::default()
        },
        ..SelfTrainConfig::default()
    }
}

fn soft_set(rows: &[[f64; 2]]) -> Dataset {
    let ex = rows
        .iter()
        .map(|p| Example::features(vec![0.0], Label::Soft(SoftLabel::new(p.to_vec()).unwrap())))
        .collect();
    Dataset::new_unchecked("u", TaskSchema::continuous(2, 1).unwrap(), ex)
}

#[test]
fn confidence_filter_thresholds() {
    let u = soft_set(&[[0.96, 0.04], [0.60, 0.40], [0.02, 0.98], [0.5, 0.5]]);
    let (kept, dropped) = confidence_filter(&u, 0.95).unwrap();
    assert_eq!((kept.len(), dropped), (2, 2));
    assert_eq!(kept.examples(), &[u.examples()[0].clone(), u.examples()[2].clone()]);
    let (all, none) = confidence_filter(&u, 1e-12).unwrap();
    assert_eq!((all.len(), none), (4, 0));
    let uniform = soft_set(&[[0.5, 0.5]; 6]);
    assert_eq!(confidence_filter(&uniform, 0.95).unwrap().1, 6);
    for tau in [0.0, 1.0, -0.1] {
        assert!(confidence_filter(&u, tau).is_err());
    }
    let hard = u.with_examples("h", vec![u.examples()[0].with_label(Label::Hard(0))]);
    assert!(confidence_filter(&hard, 0.5).is_err());
}

#[test]
fn self_train_report_shape_and_determinism() {
    let (l, dev, test, g) = setup(1);
    let cfg = quick_cfg();
    let a = self_train(&l, &g, &linear_spec(), &cfg, &dev, &test).unwrap();
    assert_eq!(a.report.iterations.len(), 3);
    assert_eq!(a.checkpoints.len(), 4);
    let idx: Vec<usize> = a.report.iterations.iter().map(|r| r.iteration).collect();
    assert_eq!(idx, vec![1, 2, 3]);
    let hashes: Vec<_> = a.report.iterations.iter().map(|r| r.unlabeled_hash.clone().unwrap()).collect();
    assert!(hashes.iter().all(|h| *h == hashes[0]));
    assert!(a.report.iterations.iter().all(|r| r.synthetic_count == 5 * l.len()));

    let b = self_train(&l, &g, &linear_spec(), &cfg, &dev, &test).unwrap();
    assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
    assert_eq!(a.model, b.model);
    assert_eq!(a.report.to_csv().lines().count(), 5);
    assert!(a.report.synthesis_summary().unwrap().rejection_rate == 0.0);
    let back = RunReport::from_json(&a.report.to_json().unwrap()).unwrap();
    assert_eq!(back, a.report);

    let regen = SelfTrainConfig {
        regenerate_each_iteration: true,
        ..cfg
    };
    let c = self_train(&l, &g, &linear_spec(), &regen, &dev, &test).unwrap();
    let h: Vec<_> = c.report.iterations.iter().map(|r| r.unlabeled_hash.clone().unwrap()).collect();
    assert_eq!(h[0], hashes[0]);
    assert_ne!(h[1], h[0]);
    assert_ne!(h[2], h[1]);
}

#[test]
fn single_iteration_trains_fresh_student_on_annotation() {
    let (l, dev, test, g) = setup(2);
    let cfg = SelfTrainConfig {
        iterations: 1,
        ..quick_cfg()
    };
    let out = self_train(&l, &g, &linear_spec(), &cfg, &dev, &test).unwrap();
    let (f1, _) = train(linear_spec().build().unwrap(), TrainingData::Single(&l), &cfg.train, &dev).unwrap();
    assert_eq!(out.checkpoints[0], f1);
    let u = generate_dataset(&g, cfg.k * l.len(), &cfg.sampler, &l.schema).unwrap().dataset;
    let annotated = annotate(&f1, &u, AnnotationMode::Soft).unwrap();
    let data = TrainingData::Mixed {
        labeled: &l,
        annotated: &annotated,
        lambda: 0.5,
    };
    let (f2, _) = train(linear_spec().build().unwrap(), data, &cfg.train, &dev).unwrap();
    assert_eq!(out.model, f2);
}

#[test]
fn fully_filtered_iteration_fails_with_context() {
    let (l, dev, test, g) = setup(3);
    let cfg = SelfTrainConfig {
        confidence_threshold: Some(0.999_999_999),
        train: TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        ..quick_cfg()
    };
    let err = self_train(&l, &g, &linear_spec(), &cfg, &dev, &test).unwrap_err();
    assert!(matches!(err, Error::Iteration { iteration: 1, .. }), "{err}");
}

#[test]
fn distillation_reports_one_stage() {
    let (l, dev, test, g) = setup(4);
    let teacher_spec = ClassifierSpec {
        family: Family::Mlp { hidden: 8 },
        ..linear_spec()
    };
    let (teacher, _) = train(teacher_spec.build().unwrap(), TrainingData::Single(&l), &TrainConfig::default(), &dev).unwrap();
    let cfg = DistillConfig {
        k: 3,
        ..DistillConfig::default()
    };
    let out = distill(&l, &g, &teacher, &linear_spec(), &cfg, &dev, &test).unwrap();
    assert_eq!(out.report.iterations.len(), 1);
    assert!(out.report.warnings.is_empty());
    assert_eq!(out.report.iterations[0].synthetic_count, 3 * l.len());

    let big = ClassifierSpec {
        family: Family::Mlp { hidden: 64 },
        ..linear_spec()
    };
    let warned = distill(&l, &g, &teacher, &big, &cfg, &dev, &test).unwrap();
    assert_eq!(warned.report.warnings.len(), 1);
}

#[test]
fn self_distill_with_zero_rate_returns_its_init() {
    let (l, dev, test, _) = setup(5);
    let (f, _) = train(linear_spec().build().unwrap(), TrainingData::Single(&l), &TrainConfig::default(), &dev).unwrap();
    let frozen = TrainConfig {
        learning_rate: 0.0,
        epochs: 2,
        ..TrainConfig::default()
    };
    let out = self_distill(&l, &f, f.clone(), &frozen, &dev, &test).unwrap();
    assert_eq!(out.model, f);
    let a = self_distill(&l, &f, linear_spec().build().unwrap(), &TrainConfig::default(), &dev, &test).unwrap();
    let b = self_distill(&l, &f, linear_spec().build().unwrap(), &TrainConfig::default(), &dev, &test).unwrap();
    assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
    let mlp = ClassifierSpec {
        family: Family::Mlp { hidden: 4 },
        ..linear_spec()
    };
    assert!(self_distill(&l, &f, mlp.build().unwrap(), &frozen, &dev, &test).is_err());
}

fn fixmatch_batches(nl: usize, nu: usize) -> (Vec<(Payload, usize)>, Vec<Payload>) {
    let d = GaussianTask::two_blobs().sample(nl + nu, 9, "d").unwrap();
    let lab = d.examples()[..nl].iter().map(|e| (e.payload.clone(), e.label.hard().unwrap())).collect();
    let unl = d.examples()[nl..].iter().map(|e| e.payload.clone()).collect();
    (lab, unl)
}

fn refs<'a>(lab: &'a [(Payload, usize)], unl: &'a [Payload]) -> (Vec<(&'a Payload, usize)>, Vec<&'a Payload>) {
    (lab.iter().map(|(p, y)| (p, *y)).collect(), unl.iter().collect())
}

fn trained_linear() -> Classifier {
    let mut f = linear_spec().build().unwrap();
    f.model.params_mut().copy_from_slice(&[-0.8, -0.7, 1.2, 0.9, 0.6, -1.1]);
    f
}

#[test]
fn fixmatch_ratio_and_empty_filter() {
    let (lab, unl) = fixmatch_batches(64, 448);
    let (l, u) = refs(&lab, &unl);
    let aug = AugmentationPair::standard(vec![1.0, 1.0]);
    let mut f = trained_linear();
    let mut r = rng::from_seed(0);
    let out = fixmatch_step(&mut f, &l, &u, 0.95, 7, &aug, 0.1, &mut r).unwrap();
    assert!(out.retained <= 448);
    assert!(fixmatch_step(&mut f, &l, &u[..400], 0.95, 7, &aug, 0.1, &mut r).is_err());

    let before = trained_linear();
    let mut g = before.clone();
    let none = fixmatch_step(&mut g, &l, &u, 0.999_999_999_999, 7, &aug, 0.1, &mut r).unwrap();
    assert_eq!((none.retained, none.unlabeled_loss), (0, 0.0));
    assert_ne!(g, before);
}

#[test]
fn fixmatch_identity_reduces_to_hard_self_training_step() {
    let (lab, unl) = fixmatch_batches(8, 16);
    let (l, u) = refs(&lab, &unl);
    let mut f = trained_linear();
    let base = f.clone();
    let aug = AugmentationPair::identity(2);
    let out = fixmatch_step(&mut f, &l, &u, 0.0, 2, &aug, 0.5, &mut rng::from_seed(1)).unwrap();
    assert_eq!(out.retained, 16);

    // Manual step: mean CE over L plus sum over U of CE(argmax, f) / |U|.
    let c = 2;
    let mut grad = vec![0.0; base.param_count()];
    let mut expected_loss = 0.0;
    for (x, y) in &l {
        let phi = base.featurize(x).unwrap();
        expected_loss += base.model.accumulate_gradient(&phi, SoftLabel::one_hot(*y, c).as_slice(), 1.0 / 8.0, &mut grad) / 8.0;
    }
    for x in &u {
        let phi = base.featurize(x).unwrap();
        let y = base.predict_soft(&phi).unwrap().argmax();
        expected_loss += base.model.accumulate_gradient(&phi, SoftLabel::one_hot(y, c).as_slice(), 1.0 / 16.0, &mut grad) / 16.0;
    }
    assert!((out.loss - expected_loss).abs() < 1e-12);
    for ((w, w0), g) in f.model.params().iter().zip(base.model.params()).zip(&grad) {
        assert!((w - (w0 - 0.5 * g)).abs() < 1e-12);
    }
}

#[test]
fn fixmatch_training_runs_and_rejects_text() {
    let (l, dev, _, g) = setup(6);
    let u = generate_dataset(&g, 200, &SamplerConfig::default(), &l.schema).unwrap().dataset;
    let cfg = FixMatchConfig {
        batch_size: 8,
        epochs: 5,
        tau: 0.8,
        ..FixMatchConfig::default()
    };
    let aug = AugmentationPair::standard(feature_std(&l).unwrap());
    let (f, trace) = fixmatch_train(linear_spec().build().unwrap(), &l, &u, &cfg, &aug, &dev).unwrap();
    assert!(trace.epochs.len() <= 5);
    assert!(evaluate(&f, &dev).unwrap().accuracy > 0.7);

    let text = Payload::from_text(&["a b"]);
    let mut h = trained_linear();
    let err = fixmatch_step(&mut h, &[(&text, 0)], &[], 0.5, 0, &aug, 0.1, &mut rng::from_seed(0)).unwrap_err();
    assert!(matches!(err, Error::UnsupportedModality { .. }));
}

#[test]
fn fixmatch_pipeline_report() {
    let (l, dev, test, g) = setup(7);
    let cfg = FixMatchPipelineConfig {
        k: 4,
        fixmatch: FixMatchConfig {
            batch_size: 8,
            epochs: 5,
            ..FixMatchConfig::default()
        },
        ..FixMatchPipelineConfig::default()
    };
    let out = fixmatch_pipeline(&l, &g, &linear_spec(), &cfg, &dev, &test).unwrap();
    assert_eq!(out.report.pipeline, "fixmatch");
    assert_eq!(out.report.iterations.len(), 1);
    assert_eq!(out.checkpoints.len(), 2);
    let rec = out.report.final_record();
    assert_eq!(rec.synthetic_count, out.report.generation.as_ref().unwrap().accepted);
    assert_eq!(rec.test_accuracy, evaluate(&out.model, &test).unwrap().accuracy);
    let again = fixmatch_pipeline(&l, &g, &linear_spec(), &cfg, &dev, &test).unwrap();
    assert_eq!(again.report.to_json().unwrap(), out.report.to_json().unwrap());
}
