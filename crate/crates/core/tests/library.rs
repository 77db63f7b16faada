//! Public-API round trips across module boundaries.

use tempfile::TempDir;

use trace_kit::config::RunConfig;
use trace_kit::datasets::{
    load_features, make_classification_shift, save_features, split, FileFormat, ShiftConfig,
    Translation, World,
};
use trace_kit::diagnostics::{diagnose, DiagnoseConfig, DiagnoseInputs, Labeled, Variant};
use trace_kit::models::{fit, LossSpec, Predictor, PredictorKind, TrainConfig};

#[test]
fn config_file_round_trip_is_exact() {
    let dir = TempDir::new().unwrap();
    let mut cfg = RunConfig::default();
    cfg.shift.world = World::Moons;
    cfg.shift.warp_alpha = 0.7;
    cfg.diagnose.transport.epsilon = 1.0 / 3.0;
    cfg.set_seed(11);
    cfg.set_variant(Variant::Mmd);
    let path = dir.path().join("run.json");
    cfg.save(&path).unwrap();
    let back = RunConfig::load(&path).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(
        back.diagnose.transport.epsilon.to_bits(),
        (1.0f64 / 3.0).to_bits()
    );
}

#[test]
fn dataset_and_model_files_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = ShiftConfig {
        world: World::Moons,
        warp_alpha: 1.0,
        n: 200,
        seed: 5,
        ..Default::default()
    };
    let (s, _) = make_classification_shift(&cfg).unwrap();
    for (name, format) in [("s.csv", FileFormat::Csv), ("s.json", FileFormat::Json)] {
        let path = dir.path().join(name);
        save_features(&s, &path, format).unwrap();
        let back = load_features(&path, format, None).unwrap();
        assert_eq!(back.labels(), s.labels());
        assert!(back
            .features()
            .iter()
            .zip(s.features())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let p = fit(
        PredictorKind::Mlp,
        s.features(),
        &s.targets(),
        2,
        8,
        10.0,
        &TrainConfig {
            epochs: 20,
            ..Default::default()
        },
    )
    .unwrap();
    let path = dir.path().join("m.json");
    p.save(&path).unwrap();
    assert_eq!(Predictor::load(&path).unwrap(), p);
}

#[test]
fn pipeline_bound_covers_true_change_on_both_worlds() {
    for (world, severity) in [(World::Blobs, 0.5), (World::Moons, 1.0)] {
        let cfg = ShiftConfig {
            world,
            translation: Translation::Scalar(severity),
            warp_alpha: severity,
            n: 500,
            seed: 3,
            ..Default::default()
        };
        let (s, t) = make_classification_shift(&cfg).unwrap();
        let (test, _) = make_classification_shift(&ShiftConfig {
            n: 5000,
            seed: 99,
            ..cfg.clone()
        })
        .unwrap();
        let spec = Default::default();
        let (s_tr, s_va) = split(&s, &spec).unwrap();
        let (t_tr, t_va) = split(&t, &spec).unwrap();
        let kind = if world == World::Moons {
            PredictorKind::Mlp
        } else {
            PredictorKind::LogisticLinear
        };
        let tc = TrainConfig {
            epochs: 150,
            ..Default::default()
        };
        let q = fit(kind, s_tr.features(), &s_tr.targets(), 2, 16, 10.0, &tc).unwrap();
        let qt = fit(kind, t_tr.features(), &t_tr.targets(), 2, 16, 10.0, &tc).unwrap();
        let inputs = DiagnoseInputs {
            q: &q,
            qt: &qt,
            loss: LossSpec::for_predictor(&q),
            source_train: Labeled::from_dataset(&s_tr),
            source_val: Labeled::from_dataset(&s_va),
            target_train: Labeled::from_dataset(&t_tr),
            target_val: Labeled::from_dataset(&t_va),
            target_labels: true,
            source_test: Some(Labeled::from_dataset(&test)),
        };
        let r = diagnose(
            &inputs,
            &DiagnoseConfig {
                variant: Some(Variant::Mmd),
                ..Default::default()
            },
        )
        .unwrap();
        let dr = r.delta_r_true.unwrap();
        assert!(r.total_ot >= dr && r.total_mmd.unwrap() >= dr, "{world:?}");
        assert!(r.measurements.worst_observed_loss <= 20.0 + 2f64.ln());
        let again = diagnose(
            &inputs,
            &DiagnoseConfig {
                variant: Some(Variant::Mmd),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r, again);
    }
}
