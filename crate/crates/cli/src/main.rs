//! `lrmt` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure (non-finite loss, too many failed decodes), 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lrmt::corpus::{load_mono, load_parallel, prepare, write_lines, CorpusManifest, PrepareConfig};
use lrmt::experiments::{generate_toy_suite, run, ExperimentReport, ExperimentSpec, RunOptions, ToyLanguageSpec};
use lrmt::metrics::{bleu_signature, chrf_signature, format_fixed, ComparisonTable};
use lrmt::synthesis::{generate, plan_shares, ShareMode, SynthesisConfig};
use lrmt::{bleu, chrf, Checkpoint, DecodeSettings, Direction, Error, ErrorClass, LangId, SubwordModel, Translator};
use lrmt_serve::{Model, ServeConfig};

#[derive(Parser)]
#[command(name = "lrmt", version, about = "Low-resource multilingual NMT workbench")]
struct Cli {
    /// Log filter, e.g. `info` or `lrmt=debug`.
    #[arg(long, global = true, env = "LRMT_LOG", default_value = "info")]
    log: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a toy language family with parallel, monolingual and lexicon files.
    GenToy(GenToy),
    /// Clean, deduplicate and split the raw corpora of a manifest.
    Prepare(Prepare),
    /// Run an experiment spec up to (and including) one stage.
    Train(Train),
    /// Back/forward-translate a monolingual file with a trained model.
    Synthesize(Synthesize),
    /// Translate a test set and score it with BLEU and chrF.
    Evaluate(Evaluate),
    /// Run every stage of an experiment spec and write the report.
    Run(RunCmd),
    /// Print a comparison table of rows taken from report.json files.
    Compare(Compare),
    /// Start the HTTP translation service.
    Serve(Serve),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Grid,
    Desk,
}

#[derive(Args)]
struct GenToy {
    #[arg(long, value_enum, default_value = "grid")]
    preset: Preset,
    /// Toy spec file (the `toy_spec.toml` format); overrides --preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Prepare {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    test_total: usize,
    #[arg(long, default_value_t = 1000)]
    valid_total: usize,
    #[arg(long, default_value_t = 200)]
    max_len_words: usize,
    #[arg(long, default_value_t = 9.0)]
    len_ratio_max: f64,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the spec's seed (data generation, initialization, batching).
    #[arg(long)]
    seed: Option<u64>,
    /// Continue a run already present in --out-dir.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    run: SpecArgs,
    /// Label of the last stage to run; defaults to the last stage.
    #[arg(long)]
    until: Option<String>,
}

#[derive(Args)]
struct RunCmd {
    #[command(flatten)]
    run: SpecArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shares {
    Equal,
    Uniform,
}

#[derive(Args)]
struct Synthesize {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    subword: PathBuf,
    /// Monolingual file, one sentence per line.
    #[arg(long)]
    mono: PathBuf,
    /// Language of --mono.
    #[arg(long)]
    lang: String,
    /// Languages to translate into; defaults to all others the model knows.
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    #[arg(long, value_enum, default_value = "equal")]
    shares: Shares,
    /// Keep only back-translation pairs.
    #[arg(long)]
    no_forward: bool,
    #[arg(long, default_value_t = 1)]
    iteration: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    subword: PathBuf,
    #[arg(long)]
    src: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Translation direction, e.g. `et-vro`.
    #[arg(long)]
    direction: Direction,
    /// Beam size; 1 decodes greedily.
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long, default_value = "test")]
    test_set: String,
    /// Also write the hypotheses here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Compare {
    /// report.json files; rows from all of them are pooled.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Row every other row is compared against; defaults to the first row.
    #[arg(long)]
    against: Option<String>,
    /// Restrict to these rows, in this order.
    #[arg(long, value_delimiter = ',')]
    rows: Vec<String>,
}

#[derive(Args)]
struct Serve {
    #[arg(long, env = "LRMT_CHECKPOINT")]
    checkpoint: PathBuf,
    #[arg(long, env = "LRMT_SUBWORD")]
    subword: PathBuf,
    #[arg(long, env = "LRMT_BIND", default_value = "127.0.0.1:8080")]
    bind: std::net::SocketAddr,
    #[arg(long, env = "LRMT_MAX_CHARS", default_value_t = 2000)]
    max_chars: usize,
    #[arg(long, env = "LRMT_WORKERS", default_value_t = 2)]
    workers: usize,
    #[arg(long, env = "LRMT_QUEUE", default_value_t = 64)]
    queue: usize,
    /// Allowed CORS origin; any origin when unset.
    #[arg(long, env = "LRMT_CORS_ORIGIN")]
    cors_origin: Option<String>,
    /// Append every request and response to this JSONL file.
    #[arg(long, env = "LRMT_REQUEST_LOG")]
    request_log: Option<PathBuf>,
}

type CliResult<T = ()> = Result<T, Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
        ErrorClass::Other => 1,
    }
}

fn dispatch(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::GenToy(a) => gen_toy(a),
        Cmd::Prepare(a) => prepare_cmd(a),
        Cmd::Train(a) => run_spec(a.run, a.until),
        Cmd::Run(a) => run_spec(a.run, None),
        Cmd::Synthesize(a) => synthesize(a),
        Cmd::Evaluate(a) => evaluate(a),
        Cmd::Compare(a) => compare(a),
        Cmd::Serve(a) => serve(a),
    }
}

fn gen_toy(a: GenToy) -> CliResult {
    let spec = match (&a.spec, a.preset) {
        (Some(p), _) => ToyLanguageSpec::load(p)?,
        (None, Preset::Grid) => ToyLanguageSpec::grid_preset(),
        (None, Preset::Desk) => ToyLanguageSpec::desk_preset(),
    };
    let m = generate_toy_suite(&spec, a.seed, &a.out_dir)?;
    println!("{}", a.out_dir.join("manifest.toml").display());
    for p in &m.pairs {
        println!("{}-{}\t{:?}", p.src, p.tgt, p.role);
    }
    Ok(())
}

fn prepare_cmd(a: Prepare) -> CliResult {
    let m = CorpusManifest::load(&a.manifest)?;
    let mut cfg = PrepareConfig { test_total: a.test_total, valid_total: a.valid_total, seed: a.seed, ..Default::default() };
    cfg.cleaning.max_len_words = a.max_len_words;
    cfg.cleaning.len_ratio_max = a.len_ratio_max;
    let (_, report) = prepare(&m, &cfg, &a.out_dir)?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn run_spec(a: SpecArgs, until: Option<String>) -> CliResult {
    let mut spec = ExperimentSpec::load(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
        spec.train.seed = seed;
    }
    let report = run(&spec, &a.out_dir, RunOptions { resume: a.resume, until })?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn load_model(checkpoint: &Path, subword: &Path) -> CliResult<(Checkpoint, SubwordModel)> {
    Ok((Checkpoint::load(checkpoint)?, SubwordModel::load(subword)?))
}

fn parse_lang(s: &str) -> CliResult<LangId> {
    LangId::new(s)
}

fn synthesize(a: Synthesize) -> CliResult {
    let (ckpt, sw) = load_model(&a.checkpoint, &a.subword)?;
    let lang = parse_lang(&a.lang)?;
    let mono = load_mono(&a.mono, lang.clone())?;
    let mut langs: Vec<LangId> = if a.targets.is_empty() {
        ckpt.languages.clone()
    } else {
        a.targets.iter().map(|t| parse_lang(t)).collect::<CliResult<_>>()?
    };
    if !langs.contains(&lang) {
        langs.push(lang);
    }
    let mode = match a.shares {
        Shares::Equal => ShareMode::EqualShares,
        Shares::Uniform => ShareMode::UniformRandom,
    };
    let plan = plan_shares(&mono, &langs, mode, a.seed)?;
    let cfg = SynthesisConfig { forward: !a.no_forward, ..Default::default() };
    let synth = generate(&ckpt, &sw, &mono, &plan, &cfg, a.iteration)?;
    synth.save(&a.out_dir)?;
    for c in &synth.corpora {
        println!("{}\t{}", c.direction, c.len());
    }
    println!("dropped_empty\t{}\nfailed\t{}", synth.dropped_empty, synth.failed);
    Ok(())
}

fn evaluate(a: Evaluate) -> CliResult {
    let (ckpt, sw) = load_model(&a.checkpoint, &a.subword)?;
    let test = load_parallel(&a.src, &a.reference, a.direction.clone())?;
    let settings = if a.beam > 1 { DecodeSettings::beam(a.beam) } else { DecodeSettings::greedy() };
    let tr = Translator::new(&ckpt.params, &sw, &ckpt.languages);
    let items: Vec<(&str, &LangId)> = test.sources().map(|s| (s, &a.direction.tgt)).collect();
    let hyps: Vec<String> = tr.translate_batch(&items, &settings)?.into_iter().map(|t| t.text).collect();
    let refs: Vec<&str> = test.targets().collect();
    let b = bleu(&hyps, &refs)?;
    let c = chrf(&hyps, &refs)?;
    if let Some(out) = &a.out {
        write_lines(out, hyps.iter().map(String::as_str))?;
    }
    let (s, t) = (a.direction.src.as_str(), a.direction.tgt.as_str());
    println!("BLEU\t{}\t{}", format_fixed(b.score, 1), bleu_signature(s, t, &a.test_set));
    println!("chrF\t{}\t{}", format_fixed(c, 3), chrf_signature(s, t, &a.test_set));
    Ok(())
}

fn compare(a: Compare) -> CliResult {
    let mut rows = Vec::new();
    for p in &a.reports {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let r: ExperimentReport =
            serde_json::from_str(&text).map_err(|e| Error::format("report", format!("{}: {e}", p.display())))?;
        rows.extend(r.table.reports);
    }
    if !a.rows.is_empty() {
        let mut picked = Vec::new();
        for label in &a.rows {
            let r = rows.iter().find(|r| &r.label == label).ok_or_else(|| Error::Input(format!("no row `{label}`")))?;
            picked.push(r.clone());
        }
        rows = picked;
    }
    if let Some(label) = &a.against {
        let i = rows.iter().position(|r| &r.label == label).ok_or_else(|| Error::Input(format!("no row `{label}`")))?;
        let first = rows.remove(i);
        rows.insert(0, first);
    }
    let first = rows.first().ok_or_else(|| Error::Input("no rows to compare".into()))?;
    let columns: Vec<Direction> =
        first.directions().iter().map(|d| d.parse()).collect::<Result<_, _>>()?;
    print!("{}", ComparisonTable::build(&columns, rows)?.to_tsv());
    Ok(())
}

fn serve(a: Serve) -> CliResult {
    let (ckpt, sw) = load_model(&a.checkpoint, &a.subword)?;
    let cfg = ServeConfig {
        bind: a.bind,
        max_chars: a.max_chars,
        workers: a.workers,
        queue: a.queue,
        cors_origin: a.cors_origin,
        request_log: a.request_log,
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(lrmt_serve::serve(Model::new(ckpt, sw), cfg)).map_err(|e| Error::io(a.bind.to_string(), e))
}
