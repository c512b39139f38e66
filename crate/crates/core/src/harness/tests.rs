use super::*;
use crate::datasets::{ContrastTransform, LesionSpec, ShapeFamily};

fn spec(name: &str, gamma: f64, seed: u64) -> DistributionSpec {
    DistributionSpec {
        name: name.into(),
        shape_family: ShapeFamily::EllipsePhantom,
        contrast: if gamma == 1.0 { ContrastTransform::Identity } else { ContrastTransform::Gamma { gamma } },
        snr_db: 30.0,
        coils: 2,
        height: 16,
        width: 16,
        seed,
        sensitivity_cutoff: 2,
        lesions: None,
    }
}

fn config(template: Template, distributions: Vec<DistributionSpec>) -> ExperimentConfig {
    ExperimentConfig {
        name: "t".into(),
        template,
        distributions,
        test_distributions: vec![],
        train_count: 4,
        test_count: 2,
        model: ModelConfig {
            channels: 4,
            pool_levels: 1,
            ..ModelConfig::unet_lite(0)
        },
        train: TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        },
        accelerations: vec![4.0],
        metrics: vec![Metric::Ssim],
        skew_factor: 2.0,
        overfit: OverfitThresholds::default(),
        replicates: 1,
        seed: 5,
        output_dir: None,
    }
}

fn cells(records: &[EvalRecord]) -> std::collections::BTreeSet<(String, String)> {
    records.iter().map(|r| (r.model_id.clone(), r.test_set.clone())).collect()
}

#[test]
fn validation_catches_template_requirements() {
    let p = spec("P", 1.0, 1);
    assert!(config(Template::JointVsSeparate, vec![p.clone()]).validate().unwrap_err().is_validation());
    assert!(config(Template::DiversityRobustness, vec![p.clone(), spec("Q", 2.0, 2)]).validate().is_err());
    assert!(config(Template::Pathology, vec![p.clone()]).validate().is_err());
    assert!(config(Template::CoilShift, vec![p.clone(), p.clone()]).validate().is_err());
    assert!(config(Template::JointVsSeparate, vec![p.clone(), p.clone()]).validate().is_ok());
    let mut c = config(Template::CoilShift, vec![spec("bad/name", 1.0, 1)]);
    assert!(c.validate().is_err());
    c.distributions = vec![p.clone()];
    c.replicates = 2;
    assert!(c.validate().is_err());
    c.replicates = 1;
    c.accelerations.clear();
    assert!(c.validate().is_err());
    let mut big = spec("B", 1.0, 1);
    big.height = 32;
    let c = config(Template::CoilShift, vec![p, big]);
    assert!(matches!(c.validate().unwrap_err(), Error::Extent(_)));
}

#[test]
fn config_hash_ignores_output_dir() {
    let mut c = config(Template::CoilShift, vec![spec("P", 1.0, 1)]);
    let h = c.config_sha256();
    c.output_dir = Some("/somewhere".into());
    assert_eq!(c.config_sha256(), h);
    c.seed += 1;
    assert_ne!(c.config_sha256(), h);
}

#[test]
fn config_json_defaults() {
    let json = r#"{"name":"x","template":"coil_shift","seed":1,
        "distributions":[{"name":"P","shape_family":"ellipse-phantom","contrast":{"kind":"identity"},
                          "snr_db":30,"coils":1,"height":16,"width":16,"seed":0}],
        "model":{"kind":"unet_lite","channels":4,"pool_levels":1,"cascades":0,"denoiser_channels":0,"seed":0}}"#;
    let c: ExperimentConfig = serde_json::from_str(json).unwrap();
    c.validate().unwrap();
    assert_eq!(c.overfit, OverfitThresholds::default());
    assert_eq!(c.metrics, vec![Metric::Ssim]);
    assert!(serde_json::from_str::<ExperimentConfig>(&json.replace("\"seed\":1,", "\"seed\":1,\"bogus\":0,")).is_err());
}

#[test]
fn grow_region_reaches_window_inside_image() {
    let r = Region { row: 0, col: 14, height: 3, width: 2 };
    let (g, grown) = grow_region(r, 7, 16, 16);
    assert!(grown);
    assert_eq!((g.height, g.width), (7, 7));
    assert!(g.row + g.height <= 16 && g.col + g.width <= 16);
    let big = Region { row: 2, col: 2, height: 8, width: 9 };
    assert_eq!(grow_region(big, 7, 16, 16), (big, false));
}

#[test]
fn select_best_source_contracts() {
    let small = |name: &str, gamma: f64, seed: u64| generate(&spec(name, gamma, seed), 4).unwrap();
    let model = ModelConfig {
        channels: 4,
        pool_levels: 1,
        ..ModelConfig::unet_lite(0)
    };
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let target = test_split(&spec("T", 1.0, 3), 2).unwrap();
    assert!(select_best_source(&[], &target, &model, &tc, 4.0, 0).unwrap_err().is_validation());
    let p = small("P", 1.0, 1);
    assert_eq!(select_best_source(&[p.clone()], &target, &model, &tc, 4.0, 0).unwrap(), 0);
    assert_eq!(select_best_source(&[p.clone(), p.clone()], &target, &model, &tc, 4.0, 0).unwrap(), 0);
}

#[test]
fn in_distribution_source_wins() {
    let mut far = spec("far", 1.0, 1);
    far.shape_family = ShapeFamily::TexturedPhantom;
    far.contrast = ContrastTransform::Gamma { gamma: 3.0 };
    far.snr_db = 5.0;
    let near = spec("near", 1.0, 2);
    let model = ModelConfig {
        channels: 4,
        pool_levels: 1,
        ..ModelConfig::unet_lite(0)
    };
    let tc = TrainConfig {
        epochs: 4,
        batch_size: 2,
        lr_max: 3e-3,
        ..TrainConfig::default()
    };
    let sources = [generate(&far, 8).unwrap(), generate(&near, 8).unwrap()];
    let target = test_split(&near, 4).unwrap();
    assert_eq!(select_best_source(&sources, &target, &model, &tc, 4.0, 0).unwrap(), 1);
}

#[test]
fn joint_vs_separate_emits_full_grid_with_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(Template::JointVsSeparate, vec![spec("P", 1.0, 1), spec("Q", 2.0, 2)]);
    let m = run_experiment(&c, dir.path()).unwrap();
    assert_eq!(m.status, RunStatus::Complete);
    let records = read_records(&dir.path().join(RECORDS_FILE)).unwrap();
    let grid = cells(&records);
    for model in ["P", "Q", "joint", "joint_half"] {
        for test in ["P", "Q"] {
            assert!(grid.contains(&(model.to_owned(), test.to_owned())), "{model} on {test}");
        }
        for e in 0..=1 {
            assert!(m.artifacts.contains_key(&format!("checkpoints/{model}/epoch_{e:03}.ckpt")));
        }
    }
    assert_eq!(grid.len(), 8);
    // initial and final epoch per cell
    assert_eq!(records.len(), 16);
    let joint = records.iter().find(|r| r.model_id == "joint").unwrap();
    assert_eq!(joint.sources, vec!["P".to_owned(), "Q".to_owned()]);
    let fits: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join(FITS_FILE)).unwrap()).unwrap();
    assert!(fits["seed_band"]["P"]["joint_within_2std"].is_boolean());
    assert_eq!(fits["overfit_thresholds"]["window"], 3);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut c = config(Template::CoilShift, vec![spec("P", 1.0, 1)]);
    c.metrics = vec![Metric::LaplacianArtifact, Metric::Ssim, Metric::NormalizedSsim];
    let ma = run_experiment(&c, a.path()).unwrap();
    let mb = run_experiment(&c, b.path()).unwrap();
    assert_eq!(ma, mb);
    for f in [RECORDS_FILE, FITS_FILE, MANIFEST_FILE] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    // rerunning into the same directory replaces the earlier output
    assert_eq!(run_experiment(&c, a.path()).unwrap(), ma);
    let metrics: std::collections::BTreeSet<String> =
        read_records(&a.path().join(RECORDS_FILE)).unwrap().into_iter().map(|r| r.metric).collect();
    assert_eq!(metrics.len(), 3);
}

#[test]
fn single_acceleration_combo_matches_plain_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let plain = config(Template::CoilShift, vec![spec("P", 1.0, 1)]);
    let combo = ExperimentConfig {
        template: Template::AccelCombo,
        ..plain.clone()
    };
    run_experiment(&plain, a.path()).unwrap();
    run_experiment(&combo, b.path()).unwrap();
    assert_eq!(
        fs::read(a.path().join(RECORDS_FILE)).unwrap(),
        fs::read(b.path().join(RECORDS_FILE)).unwrap()
    );
}

#[test]
fn accel_combo_trains_one_model_per_factor_plus_combo() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Template::AccelCombo, vec![spec("P", 1.0, 1)]);
    c.accelerations = vec![2.0, 4.0];
    run_experiment(&c, dir.path()).unwrap();
    let grid = cells(&read_records(&dir.path().join(RECORDS_FILE)).unwrap());
    assert_eq!(grid.len(), 6);
    assert!(grid.contains(&("combo".into(), "P@R2".into())));
    assert!(grid.contains(&("R4".into(), "P@R4".into())));
}

#[test]
fn finetune_ablation_includes_parent_row() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(Template::FinetuneAblation, vec![spec("P", 1.0, 1), spec("Q", 2.0, 2)]);
    run_experiment(&c, dir.path()).unwrap();
    let grid = cells(&read_records(&dir.path().join(RECORDS_FILE)).unwrap());
    assert_eq!(grid.len(), 6);
    for model in ["P", "Q", "P_to_Q"] {
        assert!(grid.contains(&(model.into(), "P".into())));
    }
    let ck = Checkpoint::load(&dir.path().join("checkpoints/P_to_Q/epoch_001.ckpt")).unwrap();
    let parent = Checkpoint::load(&dir.path().join("checkpoints/P/epoch_001.ckpt")).unwrap();
    assert_eq!(ck.provenance, vec![parent.fingerprint()]);
}

#[test]
fn skewed_and_coil_shift_grids() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(Template::Skewed, vec![spec("P", 1.0, 1), spec("Q", 2.0, 2)]);
    run_experiment(&c, dir.path()).unwrap();
    let grid = cells(&read_records(&dir.path().join(RECORDS_FILE)).unwrap());
    assert!(grid.contains(&("Q_small".into(), "Q".into())));
    assert_eq!(grid.len(), 6);

    let mut one = spec("one", 1.0, 1);
    one.coils = 1;
    let mut c = config(Template::CoilShift, vec![one, spec("four", 1.0, 2)]);
    c.test_distributions = vec![spec("extra", 2.0, 3)];
    run_experiment(&c, dir.path()).unwrap();
    assert_eq!(cells(&read_records(&dir.path().join(RECORDS_FILE)).unwrap()).len(), 6);
}

#[test]
fn overfit_monitor_reports_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Template::OverfitMonitor, vec![spec("P", 1.0, 1)]);
    c.test_distributions = vec![spec("Q", 2.5, 2)];
    c.train.epochs = 4;
    run_experiment(&c, dir.path()).unwrap();
    let fits: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join(FITS_FILE)).unwrap()).unwrap();
    let id: Vec<f64> = serde_json::from_value(fits["overfit"]["id_trace"].clone()).unwrap();
    let ood: Vec<f64> = serde_json::from_value(fits["overfit"]["ood_trace"].clone()).unwrap();
    assert_eq!(id.len(), 5);
    let v: OverfitVerdict = serde_json::from_value(fits["overfit"]["verdict"].clone()).unwrap();
    assert_eq!(v, detect_distributional_overfitting(&id, &ood, &c.overfit).unwrap());
}

#[test]
fn diversity_robustness_reports_fit_and_similarity() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(
        Template::DiversityRobustness,
        vec![spec("A", 1.0, 1), spec("B", 2.0, 2), spec("C", 0.5, 3)],
    );
    c.test_distributions = vec![spec("T", 1.5, 4)];
    run_experiment(&c, dir.path()).unwrap();
    let fits: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join(FITS_FILE)).unwrap()).unwrap();
    let d = &fits["diversity"];
    assert_eq!(d["similarity_means"].as_array().unwrap().len(), 3);
    assert!(d["robustness_fit"]["slope"].is_number());
    assert_eq!(d["robustness_fit"]["effective_robustness"].as_array().unwrap().len(), 1);
    let grid = cells(&read_records(&dir.path().join(RECORDS_FILE)).unwrap());
    assert_eq!(grid.len(), 16);
}

fn lesion_spec(rate: f64) -> DistributionSpec {
    DistributionSpec {
        height: 32,
        width: 32,
        lesions: Some(LesionSpec {
            rate,
            small_fraction: 0.5,
            amplitude: 0.5,
        }),
        ..spec("L", 1.0, 9)
    }
}

#[test]
fn pathology_reports_region_ssim_by_size() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Template::Pathology, vec![lesion_spec(1.0)]);
    c.test_count = 6;
    run_experiment(&c, dir.path()).unwrap();
    let records = read_records(&dir.path().join(RECORDS_FILE)).unwrap();
    let region: Vec<&EvalRecord> = records.iter().filter(|r| r.metric == "region_ssim").collect();
    assert!(!region.is_empty());
    assert!(region.iter().all(|r| r.test_set.starts_with("L/lesion_") && r.epoch == 1));
    // small lesions at 32x32 are narrower than the window
    if let Some(small) = region.iter().find(|r| r.test_set == "L/lesion_small") {
        assert_eq!(small.flags, vec!["region_grown".to_owned()]);
    }
}

#[test]
fn failing_stage_marks_manifest_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(Template::Pathology, vec![lesion_spec(1e-12)]);
    let err = run_experiment(&c, dir.path()).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(stage, "evaluate"),
        e => panic!("unexpected error {e}"),
    }
    let m = read_manifest(dir.path()).unwrap();
    assert_eq!(m.status, RunStatus::Incomplete);
    assert_eq!(m.failed_stage.as_deref(), Some("evaluate"));
    assert!(m.artifacts.keys().any(|k| k.starts_with("checkpoints/L/")));
}
