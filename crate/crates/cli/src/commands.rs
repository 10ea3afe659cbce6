use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};

use easyasr_core::audio::{normalize_features, read_wav_file, LogMelExtractor};
use easyasr_core::metrics::{edit_distance, evaluate_pairs, units};
use easyasr_core::model::{greedy_score, rescore_nbest};
use easyasr_core::records::{create_dataset, list_record_files, read_record_file, DatasetOptions, VOCAB_FILE};
use easyasr_core::registry::{default_zoo_path, list_entries, register, resolve};
use easyasr_core::trainer::{export_bundle, load_bundle, load_checkpoint, Bundle};
use easyasr_core::{
    parse_model_config, prefix_beam_search, train, FeatureMatrix, Model, ModelConfig, TrainJobSpec, Unit,
    UtteranceRecord,
};

use crate::args::{Command, CommandInvocation, Component};
use crate::CliError;

/// Runs a parsed command and maps the outcome to an exit code. Errors are
/// reported on standard error.
pub fn run(command: &Command) -> i32 {
    let result = match command {
        Command::Help => {
            eprint!("{}", crate::args::usage());
            Ok(())
        }
        Command::Unsupported(name) => Err(CliError::Operation(format!("{name} is unsupported: see docs"))),
        Command::Run(inv) => execute(inv),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("easyasr: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(inv: &CommandInvocation) -> Result<(), CliError> {
    if let Some(name) = inv.get("name") {
        info!("job `{name}`: {}", inv.component);
    }
    match inv.component {
        Component::CreateDataset => create_dataset_cmd(inv),
        Component::Train => train_cmd(inv),
        Component::Eval => eval_cmd(inv),
        Component::Export => export_cmd(inv),
        Component::Predict => predict_cmd(inv),
        Component::ZooRegister => zoo_register_cmd(inv),
        Component::ZooList => zoo_list_cmd(inv),
    }
}

fn load_config(path: &str) -> Result<ModelConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Operation(format!("cannot read config {path}: {e}")))?;
    parse_model_config(&text).map_err(|e| CliError::Operation(format!("{path}: {e}")))
}

fn record_files(spec: &str) -> Result<Vec<PathBuf>, CliError> {
    let files = list_record_files(spec)?;
    if files.is_empty() {
        return Err(CliError::Operation(format!("no record files in `{spec}`")));
    }
    Ok(files)
}

/// Writes machine-readable output to `-Doutput`, or standard output.
fn emit(inv: &CommandInvocation, text: &str) -> Result<(), CliError> {
    match inv.get("output") {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Operation(format!("cannot write {path}: {e}"))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn create_dataset_cmd(inv: &CommandInvocation) -> Result<(), CliError> {
    let mut config = match inv.get("config") {
        Some(path) => load_config(path)?,
        None => ModelConfig::joint_transformer(),
    };
    if let Some(f) = inv.parse::<usize>("augment_freq_mask")? {
        config.augment.freq_mask_param = f;
        config.augment.enabled = true;
    }
    if let Some(t) = inv.parse::<usize>("augment_time_mask")? {
        config.augment.time_mask_param = t;
        config.augment.enabled = true;
    }
    let defaults = DatasetOptions::default();
    let options = DatasetOptions {
        shard_size: inv.parse("shard_size")?.unwrap_or(defaults.shard_size),
        augment_multiplier: inv.parse("augment_multiplier")?.unwrap_or(defaults.augment_multiplier),
    };
    if options.shard_size == 0 {
        return Err(CliError::Usage("-Dshard_size must be positive".into()));
    }
    if options.augment_multiplier > 0 && !config.augment.enabled {
        warn!("augmented copies requested while augmentation is disabled; copies will equal the clean features");
    }
    let report = create_dataset(
        Path::new(inv.require("input")?),
        Path::new(inv.require("output")?),
        &config,
        &options,
    )?;
    eprintln!(
        "{} utterances ok, {} failed; {} records in {} shard(s); vocabulary {}",
        report.ok,
        report.failed,
        report.records_written,
        report.shard_paths.len(),
        report.vocab_path.display()
    );
    for (path, reason) in &report.failures {
        eprintln!("  failed {path}: {reason}");
    }
    Ok(())
}

fn train_cmd(inv: &CommandInvocation) -> Result<(), CliError> {
    let config = load_config(inv.require("config")?)?;
    let export_dir = PathBuf::from(inv.require("export")?);
    let train_records = record_files(inv.require("train_data")?)?;
    let eval_records = match inv.get("eval_data") {
        Some(spec) => record_files(spec)?,
        None => train_records.clone(),
    };
    let vocab = match inv.get("vocab") {
        Some(v) => PathBuf::from(v),
        None => train_records[0].parent().unwrap_or(Path::new(".")).join(VOCAB_FILE),
    };
    let finetune = inv.flag_bool("finetune")?;
    let init_checkpoint = inv.get("checkpoint").map(PathBuf::from);
    if finetune && init_checkpoint.is_none() {
        return Err(CliError::Usage("-Dfinetune=true requires -Dcheckpoint".into()));
    }
    if !finetune && init_checkpoint.is_some() {
        warn!("-Dcheckpoint is ignored unless -Dfinetune=true");
    }
    let checkpoint_dir = inv
        .get("checkpoint_dir")
        .map(PathBuf::from)
        .unwrap_or_else(|| export_dir.join("checkpoints"));
    let job = TrainJobSpec {
        config,
        cluster: inv.cluster,
        train_records,
        eval_records,
        vocab,
        finetune,
        init_checkpoint,
        export_dir,
        checkpoint_dir,
    };
    let report = train(&job)?;
    let best = report
        .eval_history
        .iter()
        .find(|p| p.step == report.exported_checkpoint_step);
    eprintln!(
        "{} step(s) in {:.1}s; final loss {}; exported step {}{} to {}",
        report.steps_run,
        report.wall_time,
        report.loss_history.last().map_or("n/a".into(), |l| format!("{l:.4}")),
        report.exported_checkpoint_step,
        best.map_or(String::new(), |p| format!(" (CER {:.4})", p.cer)),
        job.export_dir.display()
    );
    Ok(())
}

fn zoo_path(inv: &CommandInvocation) -> PathBuf {
    inv.get("zoo").map(PathBuf::from).unwrap_or_else(default_zoo_path)
}

/// Loads the bundle named by `-Dbundle`, or by `-Dmodel_name` through the zoo.
fn bundle_for(inv: &CommandInvocation) -> Result<Bundle, CliError> {
    let dir = match (inv.get("bundle"), inv.get("model_name")) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either -Dbundle or -Dmodel_name, not both".into())),
        (Some(b), None) => PathBuf::from(b),
        (None, Some(name)) => resolve(&zoo_path(inv), name, inv.parse("version")?)?,
        (None, None) => return Err(CliError::Usage(format!("{} requires -Dbundle or -Dmodel_name", inv.component))),
    };
    Ok(load_bundle(&dir)?)
}

struct Decoder {
    model: Model,
    beam: Option<usize>,
}

impl Decoder {
    fn new(bundle: &Bundle, inv: &CommandInvocation) -> Result<Self, CliError> {
        let beam = inv.parse::<usize>("beam")?;
        if beam == Some(0) {
            return Err(CliError::Usage("-Dbeam must be positive".into()));
        }
        Ok(Self {
            model: bundle.model()?,
            beam,
        })
    }

    /// Best token sequence and its score. Beam search on a joint model is
    /// rescored with the attention decoder at the configured CTC weight.
    fn decode(&self, features: &FeatureMatrix) -> Result<(Vec<u32>, f64), CliError> {
        let out = self.model.encode(features)?;
        let Some(width) = self.beam else {
            return Ok(greedy_score(&out.logprobs));
        };
        let mut nbest = prefix_beam_search(&out.logprobs, width);
        if self.model.has_attention_decoder() {
            nbest = rescore_nbest(&self.model, &out.states, &nbest, self.model.arch.config.ctc_weight())?;
        }
        Ok(nbest
            .best()
            .map(|h| (h.tokens.clone(), h.score))
            .unwrap_or((Vec::new(), f64::NEG_INFINITY)))
    }
}

fn eval_cmd(inv: &CommandInvocation) -> Result<(), CliError> {
    let bundle = bundle_for(inv)?;
    let decoder = Decoder::new(&bundle, inv)?;
    let mut records = Vec::new();
    for path in record_files(inv.require("input")?)? {
        records.extend(read_record_file(&path)?);
    }
    if records.is_empty() {
        return Err(CliError::Operation("evaluation set is empty".into()));
    }
    let mut tsv = String::from("utt_id\treference\thypothesis\terrors\n");
    let mut pairs = Vec::with_capacity(records.len());
    for rec in &records {
        let hyp = bundle.vocab.detokenize(&decoder.decode(&rec.features)?.0)?;
        let errors = edit_distance(&units(&rec.transcript, Unit::Char), &units(&hyp, Unit::Char)).distance;
        writeln!(tsv, "{}\t{}\t{}\t{}", rec.utt_id, rec.transcript, hyp, errors).expect("string write");
        pairs.push((rec.transcript.as_str(), hyp));
    }
    let summary = evaluate_pairs(&pairs)?;
    emit(inv, &tsv)?;
    eprintln!(
        "CER {:.4} WER {:.4} over {} utterances ({} sub, {} ins, {} del of {} characters)",
        summary.cer,
        summary.wer,
        records.len(),
        summary.substitutions,
        summary.insertions,
        summary.deletions,
        summary.ref_len
    );
    Ok(())
}

fn export_cmd(inv: &CommandInvocation) -> Result<(), CliError> {
    let config = load_config(inv.require("config")?)?;
    let ckpt = load_checkpoint(Path::new(inv.require("checkpoint")?))?;
    let dir = PathBuf::from(inv.require("export")?);
    let manifest = export_bundle(&ckpt, &config, Path::new(inv.require("vocab")?), &dir)?;
    eprintln!("exported step {} to {}", manifest.step, dir.display());
    Ok(())
}

/// Inputs for predict: WAV files are featurized with the bundle's front
/// end, other files are read as record files, directories contribute both.
fn predict_inputs(spec: &str, bundle: &Bundle) -> Result<Vec<UtteranceRecord>, CliError> {
    let mut paths = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let path = PathBuf::from(part);
        if path.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(&path)
                .map_err(|e| CliError::Operation(format!("cannot list {part}: {e}")))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "wav" || x == "tfrecord"))
                .collect();
            found.sort();
            paths.extend(found);
        } else {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(CliError::Operation(format!("no inputs in `{spec}`")));
    }
    let features = &bundle.config.features;
    let extractor = LogMelExtractor::new(features);
    let mut out = Vec::new();
    for path in paths {
        if path.extension().is_some_and(|x| x == "wav") {
            let clip = read_wav_file(&path, features.sample_rate)?;
            let feats = extractor.compute(&clip)?;
            out.push(UtteranceRecord {
                utt_id: path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
                features: normalize_features(&feats),
                token_ids: Vec::new(),
                transcript: String::new(),
            });
        } else {
            out.extend(read_record_file(&path)?);
        }
    }
    Ok(out)
}

fn predict_cmd(inv: &CommandInvocation) -> Result<(), CliError> {
    let bundle = bundle_for(inv)?;
    let decoder = Decoder::new(&bundle, inv)?;
    let inputs = predict_inputs(inv.require("input")?, &bundle)?;
    let mut tsv = String::new();
    for rec in &inputs {
        let (tokens, score) = decoder.decode(&rec.features)?;
        let text = bundle.vocab.detokenize(&tokens)?;
        writeln!(tsv, "{}\t{}\t{:.6}", rec.utt_id, text, score).expect("string write");
    }
    emit(inv, &tsv)?;
    eprintln!("transcribed {} utterance(s)", inputs.len());
    Ok(())
}

fn zoo_register_cmd(inv: &CommandInvocation) -> Result<(), CliError> {
    let zoo = zoo_path(inv);
    let entry = register(&zoo, inv.require("model_name")?, Path::new(inv.require("bundle")?))?;
    eprintln!("registered {} v{} in {}", entry.name, entry.version, zoo.display());
    Ok(())
}

fn zoo_list_cmd(inv: &CommandInvocation) -> Result<(), CliError> {
    let mut tsv = String::from("name\tversion\tcer\tcreated_at\tbundle_path\n");
    for e in list_entries(&zoo_path(inv))? {
        let cer = e.cer.map_or_else(|| "-".to_string(), |c| format!("{c:.4}"));
        writeln!(tsv, "{}\t{}\t{}\t{}\t{}", e.name, e.version, cer, e.created_at, e.bundle_path.display())
            .expect("string write");
    }
    emit(inv, &tsv)
}
