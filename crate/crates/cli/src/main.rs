//! `gapseg` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O, input or
//! checkpoint error, 3 internal failure.

mod config;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gapseg::bench::{bench, format_key_values as bench_kv, format_table as bench_table};
use gapseg::corpus::{parse_corpus, parse_corpus_lines, parse_raw, PretrainedVectors, SegmentedSentence};
use gapseg::eval::{bucketed_f1, f1, format_key_values, format_table, hybrid_combine, LengthBuckets};
use gapseg::train::train;
use gapseg::{Checkpoint64, Decoder, TagSetKind};

use config::{FileConfig, UsageError};

#[derive(Parser, Debug)]
#[command(name = "gapseg", version, about = "Chinese word segmentation by gap classification")]
struct Cli {
    /// TOML file with defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Tag set: 01, be or bems.
    #[arg(long, global = true)]
    tagset: Option<TagSetKind>,

    #[arg(long, global = true, value_enum)]
    decoder: Option<DecoderName>,

    #[arg(long, global = true)]
    beam_width: Option<usize>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DecoderName {
    Greedy,
    Beam,
    Viterbi,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum Format {
    #[default]
    Table,
    /// `key=value` lines.
    Kv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a segmented corpus and write a checkpoint.
    Train(TrainArgs),
    /// Segment raw text, one sentence per line.
    Segment(SegmentArgs),
    /// Score a segmented file against a gold file.
    Eval(EvalArgs),
    /// Time inference on raw text.
    Bench(BenchArgs),
    /// Take long sentences from one segmentation and the rest from another.
    Combine(CombineArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Segmented training corpus; the last tenth is held out as dev set.
    corpus: PathBuf,

    /// Where to write the checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,

    /// Pretrained character vectors in word2vec text format.
    #[arg(long)]
    embeddings: Option<PathBuf>,

    /// Also write the per-epoch log here.
    #[arg(long)]
    log: Option<PathBuf>,

    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    biaffine_dim: Option<usize>,
    /// Keep the embedding table fixed.
    #[arg(long)]
    freeze_embeddings: bool,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw text; standard input when omitted.
    input: Option<PathBuf>,
    /// Standard output when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    gold: PathBuf,
    pred: PathBuf,
    /// Add one row per sentence-length bucket.
    #[arg(long)]
    buckets: bool,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw or segmented text; spaces are ignored.
    input: PathBuf,
    #[arg(long, default_value_t = 3)]
    repeat: usize,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args, Debug)]
struct CombineArgs {
    base: PathBuf,
    ours: PathBuf,
    /// Sentences with more characters than this come from OURS.
    #[arg(long)]
    threshold: Option<usize>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(config::exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Train(args) => cmd_train(&cli, &file, args),
        Command::Segment(args) => cmd_segment(&cli, &file, args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(&cli, &file, args),
        Command::Combine(args) => cmd_combine(&file, args),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn resolve_tagset(cli: &Cli, file: &FileConfig) -> Result<TagSetKind> {
    match (cli.tagset, &file.tagset) {
        (Some(k), _) => Ok(k),
        (None, Some(name)) => Ok(name.parse()?),
        (None, None) => Ok(TagSetKind::Binary),
    }
}

/// Flag, then config file, then the tag set's default decoder.
fn resolve_decoder(cli: &Cli, file: &FileConfig, kind: TagSetKind) -> Result<Decoder> {
    let width = cli.beam_width.or(file.beam_width);
    let name = match cli.decoder {
        Some(d) => Some(d),
        None => file
            .decoder
            .as_deref()
            .map(|s| DecoderName::from_str(s, true).map_err(|_| UsageError(format!("unknown decoder `{s}` in config"))))
            .transpose()?,
    };
    let decoder = match (name, width) {
        (Some(DecoderName::Greedy), _) => Decoder::Greedy,
        (Some(DecoderName::Viterbi), _) => Decoder::Viterbi,
        (Some(DecoderName::Beam), w) | (None, w @ Some(_)) => Decoder::Beam {
            width: w.unwrap_or(gapseg::decode::DEFAULT_BEAM_WIDTH),
        },
        (None, None) => Decoder::default_for(kind),
    };
    decoder.check(kind)?;
    Ok(decoder)
}

fn load_checkpoint(cli: &Cli, file: &FileConfig, path: &Path) -> Result<Checkpoint64> {
    let ck = Checkpoint64::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let kind = ck.model.config().tagset;
    let requested = match (cli.tagset, &file.tagset) {
        (Some(k), _) => Some(k),
        (None, Some(name)) => Some(name.parse::<TagSetKind>()?),
        _ => None,
    };
    if let Some(r) = requested {
        if r != kind {
            return Err(gapseg::Error::Config(format!("checkpoint uses tag set {kind}, but {r} was requested")).into());
        }
    }
    Ok(ck)
}

fn cmd_train(cli: &Cli, file: &FileConfig, args: &TrainArgs) -> Result<()> {
    let kind = resolve_tagset(cli, file)?;
    let (mut model_config, mut train_config) = file.model_and_train(kind);
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut model_config.encoder.embedding_dim, args.embedding_dim);
    set(&mut model_config.encoder.hidden_size, args.hidden_size);
    set(&mut model_config.encoder.num_layers, args.num_layers);
    set(&mut model_config.biaffine_dim, args.biaffine_dim);
    set(&mut train_config.max_epochs, args.epochs);
    set(&mut train_config.batch_size, args.batch_size);
    set(&mut train_config.patience, args.patience);
    if let Some(d) = args.dropout {
        model_config.encoder.dropout = d;
    }
    if let Some(lr) = args.learning_rate {
        train_config.learning_rate = lr;
    }
    if let Some(seed) = cli.seed {
        train_config.seed = seed;
    }
    if args.freeze_embeddings {
        train_config.train_embeddings = false;
    }
    train_config.decoder = resolve_decoder(cli, file, kind)?;

    let corpus = parse_corpus(open(&args.corpus)?).with_context(|| format!("reading {}", args.corpus.display()))?;
    let vectors = match args.embeddings.as_ref().or(file.embeddings.as_ref()) {
        Some(path) => Some(PretrainedVectors::parse(open(path)?).with_context(|| format!("reading {}", path.display()))?),
        None => None,
    };

    let mut log_file = match &args.log {
        Some(p) => Some(File::create(p).with_context(|| format!("cannot create {}", p.display()))?),
        None => None,
    };
    let stdout = io::stdout();
    let mut log_error = None;
    let outcome = train::<f64>(&corpus, model_config, &train_config, vectors.as_ref(), |entry| {
        let line = format!("{entry}\n");
        let mut write = || -> io::Result<()> {
            stdout.lock().write_all(line.as_bytes())?;
            if let Some(f) = log_file.as_mut() {
                f.write_all(line.as_bytes())?;
            }
            Ok(())
        };
        if let Err(e) = write() {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e).context("writing training log");
    }
    if let Some(report) = outcome.embeddings {
        eprintln!(
            "embeddings: {} characters initialised from file, {} entries ignored",
            report.copied, report.ignored
        );
    }
    let ck = Checkpoint64 {
        model: outcome.model,
        train: Some(train_config),
        meta: outcome.meta,
    };
    ck.save(&args.checkpoint)
        .with_context(|| format!("writing checkpoint {}", args.checkpoint.display()))?;
    eprintln!(
        "selected epoch {} (tag set {kind}, seed {})",
        outcome.meta.epoch, outcome.meta.seed
    );
    Ok(())
}

fn read_raw(input: Option<&Path>) -> Result<Vec<Vec<char>>> {
    Ok(match input {
        Some(p) => parse_raw(open(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let mut bytes = Vec::new();
            io::stdin().lock().read_to_end(&mut bytes)?;
            parse_raw(&bytes[..]).context("reading standard input")?
        }
    })
}

fn cmd_segment(cli: &Cli, file: &FileConfig, args: &SegmentArgs) -> Result<()> {
    let ck = load_checkpoint(cli, file, &args.checkpoint)?;
    let decoder = resolve_decoder(cli, file, ck.model.config().tagset)?;
    let lines = read_raw(args.input.as_deref())?;
    let segmented = ck.model.segment_batch(&lines, decoder)?;
    let mut out = output(args.output.as_deref())?;
    for s in segmented {
        match s {
            Some(s) => writeln!(out, "{s}")?,
            None => writeln!(out)?,
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads two segmented files and pairs their non-blank lines. A blank line
/// on one side only, or differing characters, is an alignment error naming
/// the 1-based line number.
fn read_aligned(a: &Path, b: &Path) -> Result<(Vec<SegmentedSentence>, Vec<SegmentedSentence>)> {
    let read = |p: &Path| -> Result<Vec<Option<SegmentedSentence>>> {
        parse_corpus_lines(open(p)?).with_context(|| format!("reading {}", p.display()))
    };
    let (la, lb) = (read(a)?, read(b)?);
    if la.len() != lb.len() {
        return Err(gapseg::Error::Alignment {
            index: la.len().min(lb.len()) + 1,
            msg: format!("{} has {} lines, {} has {}", a.display(), la.len(), b.display(), lb.len()),
        })
        .context("files are not aligned");
    }
    let mut out = (Vec::new(), Vec::new());
    for (k, pair) in la.into_iter().zip(lb).enumerate() {
        match pair {
            (None, None) => {}
            (Some(x), Some(y)) if x.chars() == y.chars() => {
                out.0.push(x);
                out.1.push(y);
            }
            _ => {
                return Err(gapseg::Error::Alignment {
                    index: k + 1,
                    msg: "characters differ".into(),
                })
                .context(format!("line {} of {} and {}", k + 1, a.display(), b.display()));
            }
        }
    }
    Ok(out)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (gold, pred) = read_aligned(&args.gold, &args.pred)?;
    let overall = f1(&gold, &pred)?;
    let buckets = if args.buckets {
        Some(bucketed_f1(&gold, &pred, &LengthBuckets::default())?)
    } else {
        None
    };
    let text = match args.format {
        Format::Table => format_table(&overall, buckets.as_deref()),
        Format::Kv => format_key_values(&overall, buckets.as_deref()),
    };
    print!("{text}");
    Ok(())
}

fn cmd_bench(cli: &Cli, file: &FileConfig, args: &BenchArgs) -> Result<()> {
    let ck = load_checkpoint(cli, file, &args.checkpoint)?;
    let decoder = resolve_decoder(cli, file, ck.model.config().tagset)?;
    let sentences = read_raw(Some(&args.input))?;
    let report = bench(&ck.model, &sentences, decoder, args.repeat)?;
    let text = match args.format {
        Format::Table => bench_table(&report),
        Format::Kv => bench_kv(&report),
    };
    print!("{text}");
    Ok(())
}

fn cmd_combine(file: &FileConfig, args: &CombineArgs) -> Result<()> {
    let threshold = args
        .threshold
        .or(file.threshold)
        .unwrap_or(gapseg::eval::DEFAULT_HYBRID_THRESHOLD);
    let read = |p: &Path| -> Result<Vec<Option<SegmentedSentence>>> {
        parse_corpus_lines(open(p)?).with_context(|| format!("reading {}", p.display()))
    };
    let (base, ours) = (read(&args.base)?, read(&args.ours)?);
    if base.len() != ours.len() {
        bail!(gapseg::Error::Alignment {
            index: base.len().min(ours.len()) + 1,
            msg: format!("{} lines in base, {} in ours", base.len(), ours.len()),
        });
    }
    let mut out = output(args.output.as_deref())?;
    for (k, pair) in base.into_iter().zip(ours).enumerate() {
        match pair {
            (None, None) => writeln!(out)?,
            (Some(b), Some(o)) => {
                let picked = hybrid_combine(&[b], &[o], threshold).map_err(|e| match e {
                    gapseg::Error::Alignment { msg, .. } => gapseg::Error::Alignment { index: k + 1, msg },
                    other => other,
                })?;
                writeln!(out, "{}", picked[0])?;
            }
            _ => bail!(gapseg::Error::Alignment {
                index: k + 1,
                msg: "blank on one side only".into(),
            }),
        }
    }
    out.flush()?;
    Ok(())
}
