use std::io::Write;
use std::path::Path;

use arbp::benchmark::{density_run, supervised_run, Trained};
use arbp::config::{RunConfig, TaskKind};
use arbp::model_file::{load_model, save_model, ModelFile, StoredModel};
use arbp::synthetic::Mixture;
use arbp::table::{load_csv, read_csv};
use arbp::Error;
use arbp_core::{eval_log_density, ModelKind, Task};

fn parse(text: &str) -> arbp::Result<arbp::table::RawTable> {
    read_csv(text.as_bytes(), Path::new("mem.csv"))
}

#[test]
fn well_formed_csv_loads_in_column_order() {
    let t = parse("a,b\n1,2\n3,4.5\n-1e-3,7\n").unwrap();
    assert_eq!(t.names, ["a", "b"]);
    assert_eq!(t.rows(), 3);
    assert_eq!(t.values, [1.0, 2.0, 3.0, 4.5, -1e-3, 7.0]);
}

#[test]
fn malformed_csv_reports_row_and_column() {
    match parse("a,b\n1,2\n3,x\n") {
        Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
        other => panic!("{other:?}"),
    }
    match parse("a,b\n1,NaN\n") {
        Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 2)),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse(""), Err(Error::Data { .. })));
    assert!(matches!(parse("a,b\n"), Err(Error::Data { .. })));
    assert!(matches!(parse("a,b\n1,2,3\n"), Err(Error::Parse { row: 2, .. })));
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_csv(Path::new("/nonexistent/data.csv")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.exit_code(), arbp::exit::DATA);
}

fn quick_config(model: ModelKind) -> RunConfig {
    let mut cfg = RunConfig {
        model,
        permutations: 3,
        ..RunConfig::default()
    };
    cfg.optimizer.maxiter = 5;
    cfg
}

fn mixture() -> Mixture {
    Mixture {
        means: vec![vec![-1.0, 0.5, 0.0], vec![1.0, -0.5, 1.0]],
        sd: 0.6,
    }
}

fn density_model(model: ModelKind) -> (arbp_core::FittedDensityModel, RunConfig) {
    let cfg = quick_config(model);
    let train = mixture().sample(40, 1);
    let out = density_run(&train, &train, &cfg, 0).unwrap();
    match out.model {
        Some(Trained::Density(m)) => (m, cfg),
        _ => unreachable!(),
    }
}

#[test]
fn density_models_round_trip_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let test = mixture().sample(15, 2).values;
    for kind in [ModelKind::RBp, ModelKind::RdBp, ModelKind::ArBp, ModelKind::ArdBp, ModelKind::ArnetBp] {
        let (model, cfg) = density_model(kind);
        let path = dir.path().join(format!("{}.json", kind.name()));
        save_model(&ModelFile::from_density(&model, &cfg), &path).unwrap();
        let StoredModel::Density(back) = load_model(&path, Some(kind)).unwrap() else {
            panic!("wrong variant");
        };
        assert_eq!(back, model);
        let a = eval_log_density(&model, &test).unwrap();
        let b = eval_log_density(&back, &test).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn supervised_models_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = mixture().sample(40, 3);
    let mut cfg = quick_config(ModelKind::ArdBp);
    cfg.task = TaskKind::Regression;
    let out = supervised_run(&data, &data, &cfg, 0, Task::Regression).unwrap();
    let Some(Trained::Supervised(model)) = out.model else {
        unreachable!()
    };
    let path = dir.path().join("reg.json");
    save_model(&ModelFile::from_supervised(&model, &cfg), &path).unwrap();
    let StoredModel::Supervised(back) = load_model(&path, None).unwrap() else {
        panic!("wrong variant");
    };
    assert_eq!(back, model);
}

#[test]
fn damaged_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (model, cfg) = density_model(ModelKind::ArBp);
    let path = dir.path().join("m.json");
    save_model(&ModelFile::from_density(&model, &cfg), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();

    let truncated = dir.path().join("truncated.json");
    std::fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_model(&truncated, None), Err(Error::Schema { .. })));

    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["version"] = 2.into();
    let future = dir.path().join("future.json");
    std::fs::File::create(&future)
        .unwrap()
        .write_all(value.to_string().as_bytes())
        .unwrap();
    let err = load_model(&future, None).unwrap_err();
    assert!(err.to_string().contains("schema version 2"), "{err}");

    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["state"]["shape"][0] = 99.into();
    let bad_shape = dir.path().join("shape.json");
    std::fs::write(&bad_shape, value.to_string()).unwrap();
    assert!(matches!(load_model(&bad_shape, None), Err(Error::Schema { .. })));
}

#[test]
fn loading_into_another_family_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (model, cfg) = density_model(ModelKind::RdBp);
    let path = dir.path().join("rd.json");
    save_model(&ModelFile::from_density(&model, &cfg), &path).unwrap();
    let err = load_model(&path, Some(ModelKind::ArBp)).unwrap_err();
    assert!(err.to_string().contains("rd-bp"), "{err}");

    let mut value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    value["model"] = "ar-bp".into();
    std::fs::write(&path, value.to_string()).unwrap();
    assert!(matches!(load_model(&path, None), Err(Error::Schema { .. })));
}

#[test]
fn config_files_fill_defaults_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"model": "arnet-bp", "task": "classification", "optimizer": {"maxiter": 7}}"#).unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.model, ModelKind::ArnetBp);
    assert_eq!(cfg.task, TaskKind::Classification);
    assert_eq!(cfg.optimizer.maxiter, 7);
    assert_eq!(cfg.runs, 5);

    std::fs::write(&path, r#"{"permutations": 0}"#).unwrap();
    assert!(matches!(RunConfig::load(&path), Err(Error::Usage(_))));
}
