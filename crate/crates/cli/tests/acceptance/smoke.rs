use std::path::Path;
use std::process::Command;

use easyasr_core::synth::{toy_config, write_toy_corpus};

use crate::{ensure, Outcome};

const BIN: &str = env!("CARGO_BIN_EXE_easyasr");
const CLUSTER: &str = r#"{"worker": {"count": 2, "cpu": 100, "gpu": 0, "memory": 1000}}"#;

fn easyasr(dir: &Path, args: &[String]) -> Result<(), String> {
    let out = Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| format!("cannot spawn {BIN}: {e}"))?;
    ensure(out.status.code() == Some(0), || {
        format!("`easyasr {}` exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr))
    })
}

fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Every output of one pipeline run that must be reproducible.
fn run_pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    write_toy_corpus(&dir.join("corpus"), 16000, 5).map_err(|e| e.to_string())?;
    let mut cfg = toy_config();
    cfg.training.max_steps = 120;
    cfg.training.eval_every = 40;
    std::fs::write(dir.join("model_config.json"), cfg.to_json_string()).map_err(|e| e.to_string())?;

    let cluster = format!("-Dcluster={CLUSTER}");
    easyasr(dir, &args(&["-name", "ASR_Create_Dataset", "-Dconfig=model_config.json", "-Dinput=corpus/manifest.csv", "-Doutput=data", "-Dshard_size=4"]))?;
    easyasr(dir, &args(&["-name", "ASR_Train", "-Dfinetune=false", "-Dconfig=model_config.json", "-Dexport=export", &cluster, "-Dtrain_data=data"]))?;
    easyasr(dir, &args(&["-name", "ASR_Eval", "-Dbundle=export", "-Dinput=data", "-Doutput=eval.tsv"]))?;
    easyasr(dir, &args(&["-name", "ASR_Export", "-Dcheckpoint=export/checkpoints/ckpt-000080.ckpt", "-Dconfig=model_config.json", "-Dvocab=data/vocab.txt", "-Dexport=export80"]))?;
    easyasr(dir, &args(&["zoo-register", "-Dmodel_name=toy", "-Dbundle=export", "-Dzoo=zoo.json"]))?;
    easyasr(dir, &args(&["-name", "ASR_Predict", "-Dmodel_name=toy", "-Dzoo=zoo.json", "-Dinput=corpus/wav", "-Doutput=predict.tsv"]))?;
    easyasr(dir, &args(&["-name", "ASR_Predict", "-Dmodel_name=toy", "-Dzoo=zoo.json", "-Dinput=corpus/wav", "-Dbeam=4", "-Doutput=predict_beam.tsv"]))?;

    let mut files = vec![
        "data/vocab.txt".to_string(),
        "eval.tsv".into(),
        "predict.tsv".into(),
        "predict_beam.tsv".into(),
    ];
    for bundle in ["export", "export80"] {
        for f in ["model.ckpt", "model_config.json", "vocab.txt"] {
            files.push(format!("{bundle}/{f}"));
        }
    }
    let mut shards: Vec<String> = std::fs::read_dir(dir.join("data"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| format!("data/{}", e.file_name().to_string_lossy())))
        .filter(|n| n.ends_with(".tfrecord"))
        .collect();
    shards.sort();
    files.extend(shards);
    files
        .into_iter()
        .map(|f| std::fs::read(dir.join(&f)).map(|b| (f.clone(), b)).map_err(|e| format!("{f}: {e}")))
        .collect()
}

fn predict_cer(tsv: &[u8], manifest: &str) -> (usize, usize) {
    let truth: std::collections::HashMap<String, String> = manifest
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(','))
        .map(|(p, t)| (Path::new(p).file_stem().unwrap().to_string_lossy().into_owned(), t.to_string()))
        .collect();
    let text = String::from_utf8_lossy(tsv);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    let correct = rows.iter().filter(|r| truth.get(r[0]).map(String::as_str) == Some(r[1])).count();
    (correct, rows.len())
}

pub fn pipeline() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_pipeline(a.path())?;
    let second = run_pipeline(b.path())?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    let manifest = std::fs::read_to_string(a.path().join("corpus/manifest.csv")).map_err(|e| e.to_string())?;
    let predictions = &first.iter().find(|(n, _)| n == "predict.tsv").unwrap().1;
    let (correct, total) = predict_cer(predictions, &manifest);
    ensure(total == 10, || format!("{total} predictions"))?;
    Ok(format!(
        "7 commands exit 0 twice, {} output files identical across runs, {correct}/{total} utterances transcribed exactly",
        first.len()
    ))
}
