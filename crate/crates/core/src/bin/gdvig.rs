use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gdvig_core::config::parse_run_config;
use gdvig_core::data::{generate_corpus, load_corpus, save_corpus, CorpusSpec, Split};
use gdvig_core::harness::attention::{argmax_in_lesion, grad_cam, write_heatmap};
use gdvig_core::harness::bench::knn_bench;
use gdvig_core::harness::gradcheck::run_suite;
use gdvig_core::harness::{compute_metrics, sample_graphs, shortcut_experiment, train, Checkpoint, ExperimentSpec};
use gdvig_core::numerics::ops::softmax_row;
use gdvig_core::{Error, Result};

#[derive(Parser)]
#[command(name = "gdvig", version, about = "Gaze-directed vision GNN: data, training, evaluation and inspection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a spec file.
    SynthData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a corpus's train split and write a checkpoint directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print metrics of a checkpoint on one split as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Also write per-sample logits (JSON lines).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Write the class-activation heatmap of one sample (PGM and GDVT).
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: String,
        /// Defaults to the corpus recorded in the checkpoint.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Defaults to `<checkpoint>/attention`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump feature, gaze and fused graphs of one sample's first classifier block.
    DumpGraph {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: String,
        #[arg(long, value_delimiter = ',', required = true)]
        centers: Vec<usize>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Overrides the checkpoint's lambda_g.
        #[arg(long)]
        lambda_g: Option<f64>,
        /// Defaults to `<checkpoint>/graphs/<sample>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the no-gaze and gaze-directed arms on shortcut corpora, one per seed.
    ShortcutExp {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
    /// Time graph construction on random nodes and check it against a full sort.
    KnnBench {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn corpus_of(ck: &Checkpoint, given: Option<PathBuf>) -> Result<PathBuf> {
    given
        .or_else(|| ck.meta.corpus.clone())
        .ok_or_else(|| Error::Config("checkpoint records no corpus; pass --corpus".into()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::SynthData { spec, out } => {
            let spec = CorpusSpec::parse(&read(&spec)?)?;
            let corpus = generate_corpus(&spec)?;
            save_corpus(&corpus, &out)?;
            println!("wrote {} train and {} test samples to {}", corpus.train.len(), corpus.test.len(), out.display());
        }
        Command::Train { corpus, config, out } => {
            let (model_cfg, train_cfg) = parse_run_config(&read(&config)?)?;
            let data = load_corpus(&corpus)?;
            if data.num_classes() > model_cfg.num_classes {
                return Err(Error::Config(format!(
                    "corpus has {} classes, model num_classes = {}",
                    data.num_classes(),
                    model_cfg.num_classes
                )));
            }
            let trained = train(&data.train, &model_cfg, &train_cfg, &mut |e| println!("{}", e.line()))?;
            let log = trained.log_text();
            let mut ck = Checkpoint::from_trained(trained);
            ck.meta.corpus = Some(fs::canonicalize(&corpus).unwrap_or(corpus));
            ck.save(&out, &log)?;
            println!("best_epoch={} checkpoint={}", ck.meta.best_epoch, out.display());
        }
        Command::Eval {
            checkpoint,
            corpus,
            split,
            predictions,
        } => {
            let mut ck = Checkpoint::load(&checkpoint)?;
            let data = load_corpus(&corpus)?;
            let records: Vec<_> = data.split(split).iter().collect();
            let classes = ck.model.cfg.num_classes;
            if let Some(r) = records.iter().find(|r| r.label >= classes) {
                return Err(Error::LabelOutOfRange {
                    label: r.label,
                    classes,
                });
            }
            let logits = ck.predict_logits(&records)?;
            let probs: Vec<Vec<f64>> = logits.iter().map(|l| softmax_row(l)).collect();
            let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
            if let Some(path) = predictions {
                let mut text = String::new();
                for (r, l) in records.iter().zip(&logits) {
                    let line = serde_json::json!({"id": r.id, "logits": l, "label": r.label});
                    text.push_str(&format!("{line}\n"));
                }
                write(&path, &text)?;
            }
            let report = compute_metrics(&probs, &labels, classes)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            report.auc()?;
        }
        Command::ExportAttention {
            checkpoint,
            sample,
            corpus,
            out,
        } => {
            let mut ck = Checkpoint::load(&checkpoint)?;
            let data = load_corpus(&corpus_of(&ck, corpus)?)?;
            let record = data
                .find(&sample)
                .ok_or_else(|| Error::Config(format!("no sample {sample} in corpus")))?;
            let bn = ck.train_cfg.bn();
            let map = grad_cam(&ck.model, &mut ck.store, &[record], bn)?.remove(0);
            let dir = out.unwrap_or_else(|| checkpoint.join("attention"));
            write_heatmap(&dir, &sample, &map)?;
            let inside = match argmax_in_lesion(&map, record) {
                Some(b) => b.to_string(),
                None => "n/a".into(),
            };
            println!("wrote {}/{sample}.pgm argmax_in_lesion={inside}", dir.display());
        }
        Command::DumpGraph {
            checkpoint,
            sample,
            centers,
            corpus,
            lambda_g,
            out,
        } => {
            let mut ck = Checkpoint::load(&checkpoint)?;
            let data = load_corpus(&corpus_of(&ck, corpus)?)?;
            let record = data
                .find(&sample)
                .ok_or_else(|| Error::Config(format!("no sample {sample} in corpus")))?;
            let bn = ck.train_cfg.bn();
            let set = sample_graphs(&ck.model, &mut ck.store, bn, record, &centers, lambda_g)?;
            let dir = out.unwrap_or_else(|| checkpoint.join("graphs").join(&sample));
            write(&dir.join("feature.graph"), &set.feature.to_text())?;
            write(&dir.join("gaze.graph"), &set.gaze.to_text())?;
            write(&dir.join("fused.graph"), &set.fused.to_text())?;
            let report = serde_json::to_string_pretty(&set.report)?;
            write(&dir.join("report.json"), &(report.clone() + "\n"))?;
            println!("{report}");
        }
        Command::ShortcutExp { spec, seeds, out } => {
            let spec = ExperimentSpec::parse(&read(&spec)?)?;
            let report = shortcut_experiment(&spec, &seeds, &mut |line| eprintln!("{line}"))?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            if let Some(path) = out {
                write(&path, &text)?;
            }
            print!("{text}");
        }
        Command::Gradcheck => {
            let results = run_suite()?;
            let mut ok = true;
            for r in &results {
                println!(
                    "{} {} rel_error={:.3e} worst={} entries={}",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.rel_error,
                    r.worst_input,
                    r.entries
                );
                ok &= r.passed();
            }
            return Ok(ok);
        }
        Command::KnnBench { n, k, seed } => {
            let b = knn_bench(n, k, seed)?;
            println!("{}", serde_json::to_string_pretty(&b)?);
            return Ok(b.agrees);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
