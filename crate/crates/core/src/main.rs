use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use seglearn::ablation::{run_ablation, AblationMode};
use seglearn::config::load_config;
use seglearn::corpus::{decode_utf8, parse_bakeoff, score_files, NormalizeMode, Sentence};
use seglearn::decoder::segment_tokens;
use seglearn::trainer::{train_run, TrainConfig};
use seglearn::{Error, Model, Result};

#[derive(Parser)]
#[command(name = "seglearn", version, about = "Neural word segmentation: train, segment, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct TrainingFlags {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Beam size
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_word_len: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    freeze_embeddings: bool,
    /// word2vec text file with pretrained character vectors
    #[arg(long)]
    pretrained_emb: Option<PathBuf>,
}

impl TrainingFlags {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => load_config(path, TrainConfig::default())?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.beam {
            config.beam = v;
        }
        if let Some(v) = self.max_word_len {
            config.max_word_len = v;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.threads {
            config.threads = v;
        }
        if self.freeze_embeddings {
            config.freeze_embeddings = true;
        }
        if let Some(p) = &self.pretrained_emb {
            config.pretrained_emb = Some(p.clone());
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a segmented corpus (first 90% train, rest dev)
    Train {
        train_path: PathBuf,
        /// Output model file
        #[arg(long)]
        model: PathBuf,
        /// Per-epoch JSON records (defaults to <model>.log.jsonl)
        #[arg(long)]
        log: Option<PathBuf>,
        /// Include wall-clock time in the log records
        #[arg(long)]
        log_timing: bool,
        /// Also report F1 on the training part each epoch
        #[arg(long)]
        eval_train: bool,
        #[command(flatten)]
        flags: TrainingFlags,
    },
    /// Segment raw text, one sentence per line
    Segment {
        #[arg(long)]
        model: PathBuf,
        /// Input file, or - for standard input
        input: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        max_word_len: Option<usize>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Word precision, recall and F1 of a segmented file against gold
    Eval {
        gold: PathBuf,
        pred: PathBuf,
        /// List every line with at least one wrong word
        #[arg(long)]
        errors: bool,
    },
    /// Print a model's manifest summary
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
    /// Run an ablation: beam_sweep, simple_vs_gcnn or score_parts
    Ablate {
        mode: String,
        corpus: PathBuf,
        #[command(flatten)]
        flags: TrainingFlags,
    },
}

fn read_text(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::Read::read_to_end(&mut std::io::stdin(), &mut buf).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        return decode_utf8(path, &buf);
    }
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode_utf8(path, &bytes)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_train(
    train_path: &Path,
    model_out: &Path,
    log: Option<PathBuf>,
    log_timing: bool,
    eval_train: bool,
    flags: &TrainingFlags,
) -> Result<()> {
    let mut config = flags.resolve()?;
    config.eval_train |= eval_train;
    let corpus = parse_bakeoff(train_path, true, config.normalize)?;
    let stats = corpus.stats();
    eprintln!(
        "{}: {} sentences, {} characters, {} words ({} longer than {})",
        train_path.display(),
        corpus.len(),
        stats.chars,
        stats.words,
        stats.long_words(config.max_word_len),
        config.max_word_len
    );
    let run = train_run(&corpus, &config, |r| {
        match r.train_f1 {
            Some(f) => println!(
                "epoch {:>3}  loss {:.4}  dev F1 {:.4}  train F1 {:.4}",
                r.epoch, r.mean_hinge_loss, r.dev_f1, f
            ),
            None => println!("epoch {:>3}  loss {:.4}  dev F1 {:.4}", r.epoch, r.mean_hinge_loss, r.dev_f1),
        }
    })?;
    run.model.save(model_out)?;
    let log_path = log.unwrap_or_else(|| {
        let mut p = model_out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    write_file(&log_path, run.report.to_jsonl(log_timing).as_bytes())?;
    if run.report.skipped_long_gold > 0 {
        eprintln!("skipped {} sentences with over-long gold words", run.report.skipped_long_gold);
    }
    eprintln!("model written to {}", model_out.display());
    Ok(())
}

fn cmd_segment(model_path: &Path, input: &Path, beam: Option<usize>, w: Option<usize>, threads: usize) -> Result<()> {
    let model = Model::load(model_path)?;
    let beam = beam.unwrap_or(4);
    let w = w.unwrap_or(model.config.max_word_len);
    let text = read_text(input)?;
    let lines: Vec<&str> = text.lines().collect();
    let started = Instant::now();
    let segment_line = |(i, line): (usize, &&str)| -> Result<(String, usize)> {
        let line = line.strip_prefix('\u{FEFF}').unwrap_or(line);
        let sentence = Sentence::from_raw(line, i + 1, model.config.normalize);
        if sentence.is_empty() {
            return Ok((String::new(), 0));
        }
        let best = segment_tokens(&model, &sentence.tokens, beam, w)?;
        Ok((sentence.render(&best.segmentation), sentence.len()))
    };
    let results: Vec<Result<(String, usize)>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| lines.par_iter().enumerate().map(segment_line).collect())
    } else {
        lines.iter().enumerate().map(segment_line).collect()
    };
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    let mut chars = 0;
    for r in results {
        let (line, n) = r?;
        chars += n;
        writeln!(out, "{line}").map_err(|e| Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        })?;
    }
    out.flush().ok();
    let secs = started.elapsed().as_secs_f64().max(1e-9);
    eprintln!("segmented {chars} characters in {secs:.3}s ({:.0} chars/s)", chars as f64 / secs);
    Ok(())
}

fn cmd_eval(gold: &Path, pred: &Path, errors: bool) -> Result<()> {
    let g = parse_bakeoff(gold, true, NormalizeMode::Off)?;
    let p = parse_bakeoff(pred, true, NormalizeMode::Off)?;
    let report = score_files(&g, &p)?;
    println!("P\t{:.4}", report.precision);
    println!("R\t{:.4}", report.recall);
    println!("F1\t{:.4}", report.f1);
    println!("words\tgold {} predicted {} correct {}", report.gold_words, report.pred_words, report.correct);
    if errors {
        for ((gs, ps), detail) in g.sentences.iter().zip(&p.sentences).zip(&report.per_sentence) {
            if detail.correct != detail.gold_words || detail.correct != detail.pred_words {
                println!("line {}\tgold: {}\tpred: {}", gs.line, gs.text.trim(), ps.text.trim());
            }
        }
    }
    Ok(())
}

fn cmd_inspect(model_path: &Path) -> Result<()> {
    let m = Model::load(model_path)?;
    let c = &m.config;
    let mut out = String::new();
    out += &format!("format version\t{}\n", seglearn::model::FORMAT_VERSION);
    out += &format!("d\t{}\nH\t{}\nw\t{}\n", c.dim, c.hidden, c.max_word_len);
    out += &format!("composition length\t{}\n", c.gcnn_max_len);
    out += &format!("composition\t{}\n", c.composition.name());
    out += &format!("score parts\t{}\n", c.score_parts.name());
    out += &format!("normalize\t{}\n", c.normalize.name());
    out += &format!("vocabulary\t{}\n", m.vocab.len());
    out += &format!("parameters\t{} tensors, {} values\n", m.store.len(), m.store.element_count());
    for p in m.store.iter() {
        out += &format!("  {}\t{:?}\n", p.name, p.value.shape());
    }
    write_stdout(&out);
    Ok(())
}

/// Writes to stdout, stopping quietly if the reader has gone away.
fn write_stdout(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn cmd_ablate(mode: &str, corpus_path: &Path, flags: &TrainingFlags) -> Result<()> {
    let mode = AblationMode::from_name(mode).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "unknown ablation {mode:?}; expected beam_sweep, simple_vs_gcnn or score_parts"
        ))
    })?;
    let config = flags.resolve()?;
    let corpus = parse_bakeoff(corpus_path, true, config.normalize)?;
    let table = run_ablation(mode, &corpus, &config)?;
    write_stdout(&table.to_tsv());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            train_path,
            model,
            log,
            log_timing,
            eval_train,
            flags,
        } => cmd_train(&train_path, &model, log, log_timing, eval_train, &flags),
        Command::Segment {
            model,
            input,
            beam,
            max_word_len,
            threads,
        } => cmd_segment(&model, &input, beam, max_word_len, threads),
        Command::Eval { gold, pred, errors } => cmd_eval(&gold, &pred, errors),
        Command::Inspect { model } => cmd_inspect(&model),
        Command::Ablate { mode, corpus, flags } => cmd_ablate(&mode, &corpus, &flags),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter("SEGLEARN_LOG")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
