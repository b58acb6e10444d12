use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

fn load(name: &str) -> Value {
    serde_json::from_slice(&fs::read(schema_dir().join(name)).unwrap()).unwrap()
}

fn run(args: &[&str], out: &Path) {
    let res = Command::new(env!("CARGO_BIN_EXE_blflab")).args(args).arg("--out").arg(out).output().unwrap();
    assert_ne!(res.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
}

fn check_columns(path: &Path, spec: &Value) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let columns = spec["columns"].as_array().unwrap();
    let names: Vec<&str> = columns.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(lines.next().unwrap(), names.join(","), "{}", path.display());
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), columns.len(), "{line}");
        for (cell, col) in cells.iter().zip(columns) {
            if cell.is_empty() {
                assert!(col["nullable"].as_bool().unwrap(), "{} may not be empty", col["name"]);
                continue;
            }
            match col["type"].as_str().unwrap() {
                "number" => assert!(cell.parse::<f64>().is_ok(), "{cell}"),
                "integer" => assert!(cell.parse::<u64>().is_ok(), "{cell}"),
                _ => {}
            }
        }
    }
}

fn check_surface(path: &Path, spec: &Value) {
    let text = fs::read_to_string(path).unwrap();
    let rows = spec["shape"]["rows"].as_u64().unwrap() as usize;
    let cols = spec["shape"]["columns"].as_u64().unwrap() as usize;
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), rows + 1);
    assert!(lines[0].starts_with("eps1/eps2,"));
    for line in &lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), cols + 1);
        assert!(cells[1..].iter().all(|c| c.parse::<f64>().is_ok()));
    }
}

#[test]
fn every_output_matches_its_schema() {
    let record_schema = jsonschema::validator_for(&load("record.schema.json")).unwrap();
    let csv = load("csv.schema.json");
    let tmp = tempfile::tempdir().unwrap();
    let train_dir = tmp.path().join("train");
    run(&["train", "--config", "blobs-fast"], &train_dir);
    let ckpt = format!("checkpoint={}", train_dir.join("model.ckpt").display());
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("theorems", vec!["theorems", "--config", "blobs-fast"]),
        ("evaluate", vec!["evaluate", "--config", "blobs-fast", "--override", &ckpt]),
        ("sweep", vec!["sweep", "--config", "fig1-sweep"]),
        ("surface", vec!["surface", "--config", "blobs-fast"]),
        ("opnorms", vec!["opnorms", "--config", "blobs-fast"]),
    ];
    let mut dirs = vec![train_dir.clone()];
    for (name, args) in &runs {
        let dir = tmp.path().join(name);
        run(args, &dir);
        dirs.push(dir);
    }
    let mut checked = 0;
    for dir in &dirs {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_str().unwrap().to_string();
            match name.as_str() {
                "record.json" => {
                    let doc: Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
                    let errors: Vec<String> = record_schema.iter_errors(&doc).map(|e| format!("{e} at {}", e.instance_path)).collect();
                    assert!(errors.is_empty(), "{}: {errors:#?}", path.display());
                }
                "accuracy_vs_eps.csv" | "scatter.csv" => check_columns(&path, &csv["files"][&name]),
                "model.ckpt" => continue,
                n if n.starts_with("surface_") && n.ends_with(".csv") => check_surface(&path, &csv["files"]["surface_<i>.csv"]),
                other => panic!("undocumented output {other}"),
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 6 + 1 + 1 + 1 + 2);
}

#[test]
fn schema_rejects_a_tampered_record() {
    let validator = jsonschema::validator_for(&load("record.schema.json")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    run(&["opnorms", "--config", "blobs-fast"], tmp.path());
    let mut doc: Value = serde_json::from_slice(&fs::read(tmp.path().join("record.json")).unwrap()).unwrap();
    assert!(validator.is_valid(&doc));
    doc["surprise"] = Value::Bool(true);
    assert!(!validator.is_valid(&doc));
    doc.as_object_mut().unwrap().remove("surprise");
    doc["runs"][0]["clean_accuracy"] = Value::from(1.5);
    assert!(!validator.is_valid(&doc));
}
