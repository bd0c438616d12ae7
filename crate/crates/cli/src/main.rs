use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use multifuse_core::audio::{extract_dir, FeatureKind};
use multifuse_core::chat::{parse_chat, tokenize, TokenRecord, Vocab};
use multifuse_core::experiment::{
    evaluate, load_dataset, run_experiment, save_dataset, split_train_val, synth_dataset_with, train, RunConfig,
    SynthSpec, VOCAB_FILE,
};
use multifuse_core::fusion::{FusionKind, FusionModel};
use multifuse_core::gradsuite::{all_cases, run_case};
use multifuse_core::Execution;

#[derive(Parser)]
#[command(name = "multifuse", version, about = "Multimodal dementia detection from speech images and transcripts")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert every WAV file in a directory into a feature image.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "mel")]
        kind: FeatureKind,
        #[arg(long, default_value_t = 224)]
        side: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse CHAT transcripts into token sequences (one JSON object per line).
    ParseChat {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated speaker codes to keep.
        #[arg(long, default_value = "PAR", value_delimiter = ',')]
        speakers: Vec<String>,
        #[arg(long, default_value_t = 128)]
        max_len: usize,
        #[arg(long)]
        out: PathBuf,
        /// Reuse an existing vocabulary instead of building one.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        #[arg(long)]
        max_words: Option<usize>,
    },
    /// Train one model and save its best checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        kind: FusionKind,
        /// Use the reference learning rate (1e-5).
        #[arg(long)]
        paper_fidelity: bool,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Repeated training of several fusion kinds with a summary report.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// `all` or a comma-separated list of kinds.
        #[arg(long, default_value = "all")]
        kinds: String,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        #[arg(long)]
        paper_fidelity: bool,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Score a checkpoint on a dataset directory.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "mel")]
        features: FeatureKind,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
    },
    /// Write a synthetic two-class dataset directory.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 2.0)]
        snr_text: f64,
        #[arg(long, default_value_t = 2.0)]
        snr_audio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Take image side, max length and vocabulary size from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "mel")]
        features: FeatureKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks of ops, encoders and models.
    Gradcheck {
        /// Run every case.
        #[arg(long)]
        all: bool,
        /// Case names to run.
        #[arg(long, value_delimiter = ',')]
        case: Vec<String>,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };

    match cli.command {
        Command::Features { input, kind, side, out } => features(&input, kind, side, &out, exec),
        Command::ParseChat {
            input,
            speakers,
            max_len,
            out,
            vocab,
            min_count,
            max_words,
        } => parse_chat_dir(&input, &speakers, max_len, &out, vocab.as_deref(), min_count, max_words),
        Command::Train {
            config,
            kind,
            paper_fidelity,
            out,
            seed,
        } => train_one(&config, kind, paper_fidelity, &out, seed),
        Command::Experiment {
            config,
            kinds,
            out,
            paper_fidelity,
            repetitions,
        } => experiment(&config, &kinds, &out, paper_fidelity, repetitions, exec),
        Command::Evaluate {
            checkpoint,
            data,
            features,
            batch_size,
        } => evaluate_checkpoint(&checkpoint, &data, features, batch_size),
        Command::Synth {
            n,
            snr_text,
            snr_audio,
            seed,
            config,
            features,
            out,
        } => {
            let spec = match config {
                Some(c) => SynthSpec::for_model(&load_config(&c, false)?.model),
                None => SynthSpec::for_model(&Default::default()),
            };
            let samples = synth_dataset_with(&spec, n, snr_text, snr_audio, seed)?;
            save_dataset(&out, &samples, features, &spec.vocab())?;
            println!("{n} samples -> {}", out.display());
            Ok(())
        }
        Command::Gradcheck { all, case, seeds } => gradcheck(all, &case, seeds, exec),
    }
}

fn features(input: &Path, kind: FeatureKind, side: usize, out: &Path, exec: Execution) -> Result<()> {
    let results = extract_dir(input, kind, side, out, exec)?;
    let mut failed = 0;
    for file in &results {
        match &file.result {
            Ok(img) => {
                let flag = if img.degenerate { " (flat input, all zeros)" } else { "" };
                println!("{} -> {}{flag}", file.stem, file.output.display());
            }
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", file.stem);
            }
        }
    }
    if results.is_empty() {
        bail!("no .wav files in {}", input.display());
    }
    if failed > 0 {
        bail!("{failed} of {} files failed", results.len());
    }
    Ok(())
}

fn parse_chat_dir(
    input: &Path,
    speakers: &[String],
    max_len: usize,
    out: &Path,
    vocab_path: Option<&Path>,
    min_count: usize,
    max_words: Option<usize>,
) -> Result<()> {
    let speakers: BTreeSet<String> = speakers.iter().cloned().collect();
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("cha")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .cha files in {}", input.display());
    }
    let transcripts = files
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let raw = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_chat(&raw, &speakers, &id).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;

    let vocab = match vocab_path {
        Some(p) => serde_json::from_str::<Vocab>(&fs::read_to_string(p)?)?,
        None => {
            let texts: Vec<String> = transcripts.iter().map(|t| t.joined_text()).collect();
            Vocab::build(texts.iter().map(String::as_str), min_count, max_words)
        }
    };

    let mut w = BufWriter::new(File::create(out)?);
    for t in &transcripts {
        let seq = tokenize(t, &vocab, max_len)?;
        let rec = TokenRecord {
            id: t.source_id.clone(),
            text: t.joined_text(),
            ids: seq.ids,
            mask: seq.attention_mask,
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    w.flush()?;
    if vocab_path.is_none() {
        let vpath = out.with_file_name(VOCAB_FILE);
        fs::write(&vpath, serde_json::to_string_pretty(&vocab)?)?;
        println!("vocabulary of {} ids -> {}", vocab.size(), vpath.display());
    }
    println!("{} transcripts -> {}", transcripts.len(), out.display());
    Ok(())
}

fn load_config(path: &Path, paper_fidelity: bool) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if paper_fidelity {
        cfg.train = cfg.train.clone().with_reference_lr();
    }
    Ok(cfg)
}

fn train_one(config: &Path, kind: FusionKind, paper_fidelity: bool, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config, paper_fidelity)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let (dev, test) = cfg.load_data()?;
    let (train_set, val_set) = split_train_val(&dev, cfg.train.val_fraction, cfg.train.seed)?;
    log::info!("{kind}: {} train / {} validation samples", train_set.len(), val_set.len());
    let model = FusionModel::new(kind, cfg.model, cfg.train.seed)?;
    let (model, history) = train(model, &train_set, &val_set, &cfg.train)?;
    model.save(out)?;
    let history_path = out.with_extension("history.json");
    fs::write(&history_path, serde_json::to_string_pretty(&history)?)?;
    let scored = test.as_deref().unwrap_or(&val_set);
    let eval = evaluate(&model, scored, cfg.train.batch_size)?;
    println!(
        "best epoch {} of {} (val loss {:.4}); {} accuracy {:.4}",
        history.best_epoch,
        history.epochs.len(),
        history.best_val_loss,
        if test.is_some() { "test" } else { "validation" },
        eval.metrics.accuracy
    );
    println!("checkpoint -> {}, history -> {}", out.display(), history_path.display());
    Ok(())
}

fn parse_kinds(s: &str) -> Result<Vec<FusionKind>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(FusionKind::ALL.to_vec());
    }
    let mut kinds: Vec<FusionKind> = s.split(',').map(|k| k.trim().parse()).collect::<Result<_, _>>()?;
    kinds.sort();
    kinds.dedup();
    Ok(kinds)
}

fn experiment(
    config: &Path,
    kinds: &str,
    out: &Path,
    paper_fidelity: bool,
    repetitions: Option<usize>,
    exec: Execution,
) -> Result<()> {
    let mut cfg = load_config(config, paper_fidelity)?;
    if let Some(r) = repetitions {
        cfg.train.repetitions = r;
    }
    let kinds = parse_kinds(kinds)?;
    let (dev, test) = cfg.load_data()?;
    let report = run_experiment(&cfg.model, &cfg.train, &dev, test.as_deref(), &kinds, exec)?;
    fs::write(out, serde_json::to_string_pretty(&report)?)?;
    print!("{}", report.table());
    println!("report -> {}", out.display());
    Ok(())
}

fn evaluate_checkpoint(checkpoint: &Path, data: &Path, features: FeatureKind, batch_size: usize) -> Result<()> {
    let model = FusionModel::<f32>::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let samples = load_dataset(data, features)?;
    let eval = evaluate(&model, &samples, batch_size)?;
    let summary = serde_json::json!({
        "kind": model.kind,
        "samples": samples.len(),
        "loss": eval.loss,
        "metrics": eval.metrics,
        "mean_gate": eval.mean_gate,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn gradcheck(all: bool, names: &[String], seeds: usize, exec: Execution) -> Result<()> {
    let cases = all_cases();
    let selected: Vec<_> = if all {
        cases
    } else {
        if names.is_empty() {
            bail!("pass --all or --case <name>; cases: {}", cases.iter().map(|c| c.name).collect::<Vec<_>>().join(", "));
        }
        for n in names {
            if !cases.iter().any(|c| c.name == n) {
                bail!("unknown case {n}");
            }
        }
        cases.into_iter().filter(|c| names.iter().any(|n| n == c.name)).collect()
    };
    let mut failed = Vec::new();
    for case in &selected {
        let r = run_case(case, seeds, exec)?;
        println!(
            "{} {:<16} tol {:.0e} max rel {:.2e} checked {:>6} kinks {:>4}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.tol,
            r.max_rel_error,
            r.checked,
            r.skipped_kinks
        );
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}
