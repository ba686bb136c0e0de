use super::*;
use crate::models::{ModelSpec, Switches};

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut g = GeneratorConfig::reference(1, 0.5);
    g.users = 60;
    g.items = 40;
    g.impressions = 3000;
    g.calibration_samples = 2000;
    ExperimentConfig {
        output_dir: dir.to_path_buf(),
        data: DataConfig {
            generator: Some(g),
            ..DataConfig::default()
        },
        architecture: Architecture {
            embedding_dim: 3,
            shared_sub_experts: 2,
            specific_sub_experts: 2,
            expert_width: 4,
            cgc_shared_experts: 1,
            cgc_task_experts: 1,
            tower_hidden: vec![3],
            scenario_embedding_dim: 2,
            ..Architecture::default()
        },
        train: TrainConfig {
            max_epochs: 1,
            batch_size: 128,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn config_toml_round_trip_and_defaults() {
    let cfg = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    let minimal = ExperimentConfig::from_toml("schema_version = 1\n").unwrap();
    assert_eq!(minimal.repeats, 5);
    assert_eq!(minimal.architecture.shared_sub_experts, 5);
    assert_eq!(minimal.architecture.cgc_task_experts, 2);
    assert!(matches!(ExperimentConfig::from_toml("schema_version = 2\n"), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_toml("variant = \"no_towers\"\n"), Err(Error::Config(_))));
}

#[test]
fn missing_dataset_is_a_config_error_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.data.dataset = Some(dir.path().join("nope.tsv"));
    match run(&cfg) {
        Err(Error::Stage { stage: "config", source }) => assert!(matches!(*source, Error::Config(_))),
        other => panic!("{other:?}"),
    }
    assert!(dir.path().join("FAILED").exists());
    assert!(!dir.path().join("report.csv").exists());
}

#[test]
fn prepare_data_splits_three_ways() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let d = prepare_data(&cfg).unwrap();
    assert_eq!(d.train.len() + d.valid.len() + d.test.len(), 3000);
    assert!((d.test.len() as f64 - 600.0).abs() <= 6.0);
    assert_eq!(d.layout.scenarios, 6);
    for s in 0..6 {
        assert!(d.train.iter().any(|r| r.scenario == s));
    }
}

#[test]
fn dataset_file_source_infers_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    let records = generate(cfg.data.generator.as_ref().unwrap()).unwrap();
    let path = dir.path().join("d.tsv");
    crate::datagen::write_dataset(&records, &path).unwrap();
    cfg.data.dataset = Some(path);
    let d = prepare_data(&cfg).unwrap();
    let max_user = records.iter().map(|r| r.user).max().unwrap();
    assert_eq!(d.layout.features.fields[0].vocab, max_user + 1);
    assert_eq!(d.layout.features.fields.len(), 5);
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&dir.path().join("a"));
    let a = run(&cfg).unwrap();
    for f in ["config.toml", "report.csv", "report.json", "train_log.csv", "timing.csv", "model.ckpt"] {
        assert!(cfg.output_dir.join(f).exists(), "{f}");
    }
    assert_eq!(a.report.cells.len(), 12);
    // Rerunning from the echoed config reproduces the report exactly.
    let mut echoed = ExperimentConfig::load(&cfg.output_dir.join("config.toml")).unwrap();
    assert_eq!(echoed, cfg);
    echoed.output_dir = dir.path().join("b");
    let b = run(&echoed).unwrap();
    assert_eq!(a.report, b.report);
    let restored = crate::trainer::load_model(&cfg.output_dir.join("model.ckpt")).unwrap();
    let d = prepare_data(&cfg).unwrap();
    let again = evaluate(&restored, &d.test, a.report.meta.clone()).unwrap();
    assert_eq!(again, a.report);
}

#[test]
fn baselines_run_through_the_same_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ModelKind::SharedBottom, ModelKind::Mmoe] {
        let cfg = ExperimentConfig {
            model: kind,
            ..tiny(&dir.path().join(kind.name()))
        };
        let out = run(&cfg).unwrap();
        assert_eq!(out.report.meta.variant, kind.name());
        assert!(matches!(out.model.spec(), ModelSpec::SharedBottom(_) | ModelSpec::Mmoe(_)));
    }
    let bad = ExperimentConfig {
        model: ModelKind::Mmoe,
        variant: Variant::NoSan,
        ..tiny(dir.path())
    };
    assert!(run(&bad).is_err());
}

#[test]
fn ablation_suite_bookkeeping() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        workers: 2,
        ..tiny(dir.path())
    };
    let out = ablation_suite(&cfg, &Variant::ALL, 2).unwrap();
    assert_eq!(out.reports.len(), 2);
    assert!(out.reports.iter().all(|r| r.len() == 6));
    assert!(out.mean_auc.is_complete());
    assert_eq!(out.mean_auc.variants, Variant::ALL.iter().map(|v| v.name().to_string()).collect::<Vec<_>>());
    assert_eq!(out.mean_auc_friedman.mean_ranks.len(), 6);
    assert!(dir.path().join("ablation_friedman.csv").exists());
    assert_eq!(std::fs::read_dir(dir.path().join("runs")).unwrap().count(), 12);
    // Sequential and parallel execution agree.
    let seq = ablation_suite(
        &ExperimentConfig {
            workers: 1,
            output_dir: dir.path().join("seq"),
            ..cfg.clone()
        },
        &Variant::ALL,
        2,
    )
    .unwrap();
    assert_eq!(seq.mean_auc, out.mean_auc);
    assert!(ablation_suite(&cfg, &Variant::ALL, 1).is_err());
}

#[test]
fn sweep_rows_follow_axis_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let rows = sweep(&cfg, SweepAxis::SubExperts, &[1, 3], 1).unwrap();
    assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![1, 3]);
    assert!(rows[0].parameters < rows[1].parameters);
    assert!(dir.path().join("sweep_sub_experts.csv").exists());
    assert_eq!(SweepAxis::SubExperts.default_values().len(), 4);
    assert_eq!(SweepAxis::CgcExperts.default_values().len(), 5);
    assert!("depth".parse::<SweepAxis>().is_err());
}

#[test]
fn attention_map_rows_are_distributions() {
    let layout = Layout::new(6, crate::datagen::FeatureSchema::standard(5, 5, 6, &[], 2));
    let arch = tiny(Path::new(".")).architecture;
    let model = Model::build(&ModelSpec::Hinet(arch.hinet(layout.clone(), Switches::default())), 3).unwrap();
    let map = export_attention(&model).unwrap();
    for (i, row) in map.weights.iter().enumerate() {
        assert_eq!(row[i], 0.0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(map.to_csv().lines().count(), 7);

    let two = Layout::new(2, crate::datagen::FeatureSchema::standard(5, 5, 2, &[], 2));
    let model = Model::build(&ModelSpec::Hinet(arch.hinet(two, Switches::default())), 3).unwrap();
    assert_eq!(export_attention(&model).unwrap().weights, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);

    let no_san = Model::build(&ModelSpec::Hinet(arch.hinet(layout, Variant::NoSan.switches())), 3).unwrap();
    assert!(matches!(export_attention(&no_san), Err(Error::Contract(_))));
}

#[test]
fn ablation_variants_match_the_published_table() {
    // "HiNet(w/o hierarchy)" .. "HiNet(w/o scenario & task gating)", in table order, then the full model.
    let rows = ["hierarchy", "SAN", "task gating", "scenario gating", "scenario & task gating"];
    let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
    let expected: Vec<String> = rows
        .iter()
        .map(|r| format!("no_{}", r.to_lowercase().replace(" & task", "_both").replace("scenario_both", "both").replace(' ', "_")))
        .chain(["full".to_string()])
        .collect();
    assert_eq!(names, expected);
}
