use xmap::bounds::BoundReport;
use xmap::distill::{distill_from_teacher, distill_train, distill_tuned, find_minimal_complexity};
use xmap::domains::registered;
use xmap::nn::Architecture;
use xmap::nonunique::{alg5_train, Alg5Settings, SharedEncoderPair};
use xmap::training::{train_generator_on, TrainConfig, TrainingData};

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        n_train: 128,
        n_div: 128,
        n_eval: 512,
        ..TrainConfig::default().with_epochs(epochs)
    }
}

#[test]
fn affine_target_needs_one_layer() {
    let pair = registered("twin-moons-rotation").unwrap();
    let found = find_minimal_complexity(&pair, &[1, 2, 3, 4], 16, &TrainConfig::default().with_epochs(150)).unwrap();
    assert_eq!(found.k1, 1, "{found:?}");
    assert_eq!(found.table.len(), 4);
}

#[test]
fn teacher_is_frozen_and_zero_lambda_is_plain_training() {
    let pair = registered("warp").unwrap();
    let cfg = quick(4).with_lambda(0.0);
    let data = TrainingData::new(&pair, &cfg).unwrap();
    let (teacher, _) = train_generator_on(&data, &pair, &Architecture::generator(2, 1, 8), &cfg).unwrap();
    let before = teacher.clone();
    let d = distill_from_teacher(&data, &pair, teacher, 1, 3, 8, &cfg).unwrap();
    assert_eq!(d.teacher, before);
    let student_cfg = cfg.reseeded("student");
    let (plain, _) = train_generator_on(&data, &pair, &Architecture::generator(2, 3, 8), &student_cfg).unwrap();
    assert_eq!(d.student, plain);
    assert!(d.report.div_h.is_finite() && d.report.div_h >= 0.0);
    assert!(d.report.risk_h_g.is_finite() && d.report.risk_h_g >= 0.0);
}

#[test]
fn large_lambda_collapses_student_onto_teacher() {
    let pair = registered("warp").unwrap();
    let cfg = TrainConfig { n_eval: 512, ..TrainConfig::default().with_epochs(100) };
    let d = distill_train(&pair, 1, 3, 16, &cfg.with_lambda(1e3)).unwrap();
    assert!(d.report.risk_h_g <= 0.01, "{:?}", d.report);
}

#[test]
fn student_risk_to_teacher_falls_with_lambda() {
    let pair = registered("warp").unwrap();
    let tuned = distill_tuned(&pair, 1, 3, 16, &quick(60), &[0.0, 0.1, 1.0, 10.0]).unwrap();
    let risks: Vec<f64> = tuned.probes.iter().map(|r| r.risk_h_g).collect();
    let inversions = risks.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(inversions <= 1, "{risks:?}");
    assert!(tuned.probes.iter().any(|r| r.lambda == tuned.chosen.report.lambda));
}

#[test]
fn shared_encoder_pair_stays_aliased() {
    let pair = registered("multi-target").unwrap();
    let arch = Architecture::generator(2, 3, 8);
    let cfg = TrainConfig {
        adversary_epochs: 2,
        lambda: 0.01,
        epsilon0: 10.0,
        ..quick(3)
    };
    let outcome = alg5_train(&pair, &arch, &Alg5Settings::default(), &cfg).unwrap();
    let shared: &SharedEncoderPair = &outcome.pair;
    let (h1, h2) = (shared.h1().unwrap(), shared.h2().unwrap());
    assert_eq!(outcome.h1, h1);
    for x in [[0.3, -1.2], [2.0, 0.1], [-1.5, 1.5]] {
        let e = shared.encoder.forward(&x).unwrap();
        assert_eq!(h1.forward(&x).unwrap(), shared.decoder1.forward(&e).unwrap());
        assert_eq!(h2.forward(&x).unwrap(), shared.decoder2.forward(&e).unwrap());
    }
    for r in &outcome.reports {
        let BoundReport { pair_risk, div_h1, bound, .. } = *r;
        assert_eq!(bound, pair_risk + div_h1);
        assert!(r.min_target_risk.unwrap() <= r.gt_risk);
    }
}
