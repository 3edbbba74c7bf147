//! `vhot` command line: corpus generation, training, transcription,
//! evaluation, corruption evaluation and attention export.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use vhot_core::corruption::{corruption_csv, corruption_table, run_corruption_suite};
use vhot_core::export::{attention_csv, top_hotwords_csv};
use vhot_core::{transcribe, Model, Vocabulary};

use crate::corpus::{generate_corpus, Split};
use crate::error::{HarnessError, Result};
use crate::manifest::{load_corpus, write_corpus, LoadedCorpus};
use crate::pipeline::{build_model, evaluate, parse_methods, train_model, CHECKPOINT_FILE};
use crate::runconfig::RunConfig;

pub const RUN_CONFIG_FILE: &str = "run.cfg";
pub const METRICS_FILE: &str = "metrics.csv";
pub const UTTERANCES_FILE: &str = "utterances.jsonl";
pub const HYPOTHESES_FILE: &str = "hypotheses.jsonl";
pub const CORRUPTION_FILE: &str = "corruption.csv";

#[derive(Debug, Parser)]
#[command(name = "vhot", version, about = "Dual-stream speech recognition with vision hotwords on a synthetic corpus")]
struct Cli {
    /// Run configuration (key = value lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus into --out.
    Gen,
    /// Train on a corpus; writes the checkpoint, loss log and config to --out.
    Train {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Train the ASR stream alone (baseline).
        #[arg(long)]
        freeze_vh: bool,
    },
    /// Write per-utterance hypotheses of a split as JSON Lines.
    Transcribe {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "valid", value_parser = ["train", "valid"])]
        split: String,
        #[arg(long, default_value = "asr,vh,m1,m2,m3")]
        methods: String,
    },
    /// Word error rates of the validation split per method.
    Eval {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "asr,vh,m1,m2,m3")]
        methods: String,
    },
    /// Mask word audio with white noise and score ASR and M2.
    CorruptEval {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "0.3,0.5,0.7")]
        ratios: String,
        /// Noise standard deviation; defaults to the corpus feature deviation.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Export VH-decoder attention of one validation utterance.
    ExportAttn {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long)]
        id: String,
    },
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn out_dir(cli_out: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = cli_out.clone().ok_or_else(|| HarnessError::Usage("--out DIR is required".into()))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Config precedence: `--config`, else `run.cfg` beside the checkpoint,
/// else defaults; `--seed` overrides the result.
fn run_config(path: &Option<PathBuf>, checkpoint: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match (path, checkpoint.and_then(Path::parent).map(|d| d.join(RUN_CONFIG_FILE))) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(p)) if p.is_file() => RunConfig::load(&p)?,
        _ => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(cfg: &RunConfig, corpus: &LoadedCorpus, checkpoint: &Path) -> Result<Model> {
    let h = &corpus.header;
    let mut model = build_model(cfg, h.feat_dim, h.grid, h.patch_len)?;
    let bytes = fs::read(checkpoint).map_err(|e| HarnessError::Data(format!("{}: {e}", checkpoint.display())))?;
    model.load_checkpoint_bytes(&bytes)?;
    Ok(model)
}

fn flags_of(corpus: &LoadedCorpus) -> impl Fn(&str) -> Option<Vec<bool>> + '_ {
    move |id| corpus.homophone_flags(id).map(<[bool]>::to_vec)
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn parse_ratios(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            let r: f64 = s
                .trim()
                .parse()
                .map_err(|_| HarnessError::Usage(format!("bad mask ratio {s:?}")))?;
            if !(0.0..=1.0).contains(&r) {
                return Err(HarnessError::Usage(format!("mask ratio {r} outside [0, 1]")));
            }
            Ok(r)
        })
        .collect()
}

fn execute(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Gen => {
            let cfg = run_config(&cli.config, None, cli.seed)?;
            let dir = out_dir(&cli.out)?;
            let corpus = generate_corpus(&cfg.corpus, cfg.seed)?;
            write_corpus(&dir, &corpus)?;
            println!(
                "wrote {} utterances to {} (feature sigma {:.6})",
                corpus.utterances.len(),
                dir.display(),
                corpus.feature_sigma
            );
        }
        Command::Train { corpus, freeze_vh } => {
            let mut cfg = run_config(&cli.config, None, cli.seed)?;
            cfg.train.freeze_vh |= *freeze_vh;
            let dir = out_dir(&cli.out)?;
            let data = load_corpus(corpus)?;
            let h = &data.header;
            let model = build_model(&cfg, h.feat_dim, h.grid, h.patch_len)?;
            fs::write(dir.join(RUN_CONFIG_FILE), cfg.to_text())?;
            let outcome = train_model(&cfg, model, &data.split(Split::Train), Some(&dir))?;
            let last = outcome.log.last().copied().unwrap_or_default();
            println!(
                "trained {} steps, final loss {:.4}; checkpoint {}",
                outcome.log.len(),
                last.total,
                dir.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Transcribe {
            corpus,
            checkpoint,
            split,
            methods,
        } => {
            let methods = parse_methods(methods)?;
            let cfg = run_config(&cli.config, Some(checkpoint), cli.seed)?;
            let dir = out_dir(&cli.out)?;
            let data = load_corpus(corpus)?;
            let model = load_model(&cfg, &data, checkpoint)?;
            let split = if split == "train" { Split::Train } else { Split::Valid };
            let report = evaluate(&model, &cfg, &data.split(split), &methods, &flags_of(&data))?;
            warn(&report.warnings);
            fs::write(dir.join(HYPOTHESES_FILE), report.jsonl())?;
            println!("wrote {} hypotheses to {}", report.records.len(), dir.join(HYPOTHESES_FILE).display());
        }
        Command::Eval {
            corpus,
            checkpoint,
            methods,
        } => {
            let methods = parse_methods(methods)?;
            let cfg = run_config(&cli.config, Some(checkpoint), cli.seed)?;
            let dir = out_dir(&cli.out)?;
            let data = load_corpus(corpus)?;
            let model = load_model(&cfg, &data, checkpoint)?;
            let report = evaluate(&model, &cfg, &data.split(Split::Valid), &methods, &flags_of(&data))?;
            warn(&report.warnings);
            fs::write(dir.join(METRICS_FILE), report.csv())?;
            fs::write(dir.join(UTTERANCES_FILE), report.jsonl())?;
            print!("{}", report.csv());
        }
        Command::CorruptEval {
            corpus,
            checkpoint,
            ratios,
            sigma,
        } => {
            let ratios = parse_ratios(ratios)?;
            let cfg = run_config(&cli.config, Some(checkpoint), cli.seed)?;
            let dir = out_dir(&cli.out)?;
            let data = load_corpus(corpus)?;
            let model = load_model(&cfg, &data, checkpoint)?;
            let sigma = sigma.unwrap_or(data.header.feature_sigma);
            let rows = run_corruption_suite(
                &model,
                &Vocabulary::characters(),
                &data.split(Split::Valid),
                &ratios,
                sigma,
                cfg.seed,
            )?;
            fs::write(dir.join(CORRUPTION_FILE), corruption_csv(&rows))?;
            print!("{}", corruption_table(&rows));
        }
        Command::ExportAttn { corpus, checkpoint, id } => {
            let cfg = run_config(&cli.config, Some(checkpoint), cli.seed)?;
            let dir = out_dir(&cli.out)?;
            let data = load_corpus(corpus)?;
            let model = load_model(&cfg, &data, checkpoint)?;
            let ex = data
                .examples
                .iter()
                .find(|e| &e.speech.id == id)
                .ok_or_else(|| HarnessError::Data(format!("no utterance {id:?} in the corpus")))?;
            let bundle = transcribe(&model, &ex.speech, &ex.image, true)?;
            let capture = bundle
                .attention
                .as_ref()
                .ok_or_else(|| HarnessError::Data(format!("{id}: nothing was decoded, no attention to export")))?;
            let vocab = Vocabulary::characters();
            let scores = dir.join(format!("attention_{id}.csv"));
            let top = dir.join(format!("attention_{id}_top5.csv"));
            fs::write(&scores, attention_csv(capture, &bundle.tokens_vh, &vocab)?)?;
            fs::write(&top, top_hotwords_csv(capture, &bundle.tokens_vh, &vocab)?)?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "hypothesis: {}", vocab.decode(&bundle.tokens_vh))?;
            writeln!(stdout, "wrote {} and {}", scores.display(), top.display())?;
        }
    }
    Ok(())
}
