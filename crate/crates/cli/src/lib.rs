//! The `qac` pipeline. [`run`] is the whole program short of process exit,
//! so tests drive it with an argv and a buffer.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use qac_core::context::{load_corpus, save_corpus, ContextMode, DocumentRecord, VectorTable};
use qac_core::dataset::{
    augment_pairs, dynamic_prefix_split, label_pairs, parse_raw_pairs, preprocess, raw_pairs_to_tsv,
    trigram_similarity, make_splits, PreprocessConfig, RelevanceClient, SplitConfig, SplitManifest,
};
use qac_core::engine::{
    attach_queries, train_lm, train_tokenizer, CompleteOptions, Engine, ModelBundle, Overrides, TrainConfig,
    TrieScope, GLOBAL_GUIDANCE_FILE, GLOBAL_TRIE_FILE, LM_FILE, TOKENIZER_FILE,
};
use qac_core::metrics::{
    evaluate_run, reports_to_table, reports_to_tsv, score_example, BleuRrMode, EvalExample, EvalOptions,
    ExampleScores, MetricReport, Quadrant,
};
use qac_core::synth::{generate, SynthConfig};
use qac_core::tokenizer::TokenizerModel;
use qac_core::trie::{CompletionTrie, GuidanceTrie};
use qac_core::{engine::global_queries, QacError, Source};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const SWEEP_ALPHAS: [f64; 4] = [0.05, 0.1, 0.2, 0.5];
pub const SWEEP_BETAS: [f64; 4] = [0.05, 0.1, 0.2, 0.5];
pub const SWEEP_BIASES: [f64; 3] = [20.0, 30.0, 40.0];

#[derive(Debug, Parser)]
#[command(name = "qac", version, about = "Document-scoped query auto-completion pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the seeded synthetic corpus (corpus.tsv, pairs.tsv).
    GenCorpus(GenCorpusArgs),
    /// Filter pairs and write the train/val/test quadrant manifest.
    MakeSplits(MakeSplitsArgs),
    /// Train the BPE tokenizer.
    TrainTokenizer(TrainTokenizerArgs),
    /// Train the global n-gram scorer on split-encoded training queries.
    TrainLm(TrainLmArgs),
    /// Build the global completion and guidance tries.
    BuildTrie(BuildTrieArgs),
    /// Print completions for one prefix as rank, score, text.
    Complete(CompleteArgs),
    /// Score modes per quadrant and print a metric table.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Evaluate guided decoding over the alpha/beta/bias grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long, default_value = "data/synthetic")]
    pub out: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().docs_per_topic)]
    pub docs_per_topic: usize,
    #[arg(long, default_value_t = SynthConfig::default().queries_per_doc)]
    pub queries_per_doc: usize,
}

#[derive(Debug, Args)]
pub struct MakeSplitsArgs {
    /// Corpus TSV: doc_id, url, title, body.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Pairs TSV: query, doc_id, clicks, origin.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value = "splits")]
    pub out: PathBuf,
    #[arg(long, default_value_t = SplitConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = SplitConfig::default().unseen_doc_fraction)]
    pub unseen_doc_fraction: f64,
    #[arg(long, default_value_t = SplitConfig::default().unseen_query_fraction)]
    pub unseen_query_fraction: f64,
    #[arg(long, default_value_t = SplitConfig::default().ss_fraction)]
    pub ss_fraction: f64,
    #[arg(long, default_value_t = SplitConfig::default().val_fraction)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = SplitConfig::default().quadrant_cap)]
    pub quadrant_cap: usize,
    #[arg(long, default_value_t = PreprocessConfig::default().min_doc_queries)]
    pub min_doc_queries: usize,
    #[arg(long, default_value_t = PreprocessConfig::default().max_doc_queries)]
    pub max_doc_queries: usize,
    /// Pre-mined augmentation candidates, one `query<TAB>doc_id` per line.
    #[arg(long)]
    pub augment: Option<PathBuf>,
    /// Relevance classifier endpoint (plain http).
    #[arg(long)]
    pub relevance_endpoint: Option<String>,
    #[arg(long, env = "QAC_RELEVANCE_KEY", hide_env_values = true)]
    pub relevance_key: Option<String>,
    #[arg(long)]
    pub relevance_model: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub concurrency: usize,
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
}

#[derive(Debug, Args)]
pub struct TrainTokenizerArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory written by make-splits.
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long, default_value = "models")]
    pub models: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().vocab_size)]
    pub vocab_size: usize,
}

#[derive(Debug, Args)]
pub struct TrainLmArgs {
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long, default_value = "models")]
    pub models: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().order)]
    pub order: usize,
    #[arg(long, default_value_t = TrainConfig::default().discount)]
    pub discount: f64,
    #[arg(long, default_value_t = TrainConfig::default().splits_per_pair)]
    pub splits_per_pair: usize,
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BuildTrieArgs {
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long, default_value = "models")]
    pub models: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long, default_value = "models")]
    pub models: PathBuf,
    #[arg(long, env = "QAC_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Split directory; its train.tsv supplies each document's queries.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// QVEC1 table with chunk and prefix vectors for dense modes and SBMRR.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    /// Suggestions returned.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Initial guidance bias b0.
    #[arg(long)]
    pub bias: Option<f64>,
    /// Weight of the document model.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beam: Option<usize>,
}

impl HyperArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            k: self.k,
            alpha: self.alpha,
            beta: self.beta,
            bias: self.bias,
            lambda: self.lambda,
            beam: self.beam,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub mode: Option<Source>,
    #[arg(long)]
    pub trie: Option<TrieScope>,
    #[arg(long)]
    pub context: Option<ContextMode>,
    #[arg(long)]
    pub doc_id: Option<String>,
    pub prefix: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Tsv,
    Table,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, value_delimiter = ',', default_value = "mpc,lm,guided")]
    pub modes: Vec<Source>,
    #[arg(long, value_delimiter = ',', default_value = "P")]
    pub contexts: Vec<ContextMode>,
    #[arg(long, default_value = "global")]
    pub trie: TrieScope,
    #[arg(long, value_delimiter = ',', default_value = "SS,SU,US,UU")]
    pub quadrants: Vec<Quadrant>,
    /// Examples drawn per quadrant.
    #[arg(long, default_value_t = 500)]
    pub limit: usize,
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "tsv")]
    pub format: OutputFormat,
    #[arg(long, default_value = "harmonic")]
    pub bleu_mode: BleuRrMode,
    #[arg(long)]
    pub no_tes: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, env = "QAC_PORT", default_value_t = qac_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Built UI files served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Allowed browser origin; any when unset.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value = "P")]
    pub context: ContextMode,
    #[arg(long, default_value = "global")]
    pub trie: TrieScope,
    #[arg(long, value_delimiter = ',', default_value = "SS")]
    pub quadrants: Vec<Quadrant>,
    #[arg(long, default_value_t = 200)]
    pub limit: usize,
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    #[arg(long)]
    pub no_tes: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(QacError),
}

impl From<QacError> for CliError {
    fn from(e: QacError) -> Self {
        match e {
            QacError::InvalidInput(m) => CliError::Usage(m),
            other => CliError::Data(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit code. Results go to `out`; diagnostics to stderr.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    log::info!("resolved config: {:?}", cli.command);
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::GenCorpus(a) => gen_corpus(&a, out),
        Command::MakeSplits(a) => make_splits_cmd(&a, out),
        Command::TrainTokenizer(a) => train_tokenizer_cmd(&a, out),
        Command::TrainLm(a) => train_lm_cmd(&a, out),
        Command::BuildTrie(a) => build_trie_cmd(&a, out),
        Command::Complete(a) => complete_cmd(&a, out),
        Command::Eval(a) => eval_cmd(&a, out),
        Command::Serve(a) => serve_cmd(a),
        Command::Sweep(a) => sweep_cmd(&a, out),
    }
}

fn gen_corpus(a: &GenCorpusArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        docs_per_topic: a.docs_per_topic,
        queries_per_doc: a.queries_per_doc,
        ..Default::default()
    };
    let corpus = generate(&cfg);
    fs::create_dir_all(&a.out)?;
    save_corpus(a.out.join("corpus.tsv"), &corpus.docs)?;
    fs::write(a.out.join("pairs.tsv"), raw_pairs_to_tsv(&corpus.pairs))?;
    writeln!(out, "wrote {} documents and {} pairs to {}", corpus.docs.len(), corpus.pairs.len(), a.out.display())?;
    Ok(())
}

fn read_candidates(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match line.split_once('\t') {
            Some((q, d)) if !q.is_empty() && !d.is_empty() => out.push((q.to_string(), d.trim().to_string())),
            _ => {
                return Err(CliError::Data(QacError::Parse(format!(
                    "{}:{}: expected query<TAB>doc_id",
                    path.display(),
                    i + 1
                ))))
            }
        }
    }
    Ok(out)
}

fn make_splits_cmd(a: &MakeSplitsArgs, out: &mut dyn Write) -> CliResult<()> {
    let split_cfg = SplitConfig {
        seed: a.seed,
        unseen_doc_fraction: a.unseen_doc_fraction,
        unseen_query_fraction: a.unseen_query_fraction,
        ss_fraction: a.ss_fraction,
        val_fraction: a.val_fraction,
        quadrant_cap: a.quadrant_cap,
    };
    split_cfg.validate()?;
    let pre_cfg = PreprocessConfig { min_doc_queries: a.min_doc_queries, max_doc_queries: a.max_doc_queries };
    let docs = load_corpus(&a.corpus)?;
    let raw = parse_raw_pairs(&fs::read_to_string(&a.pairs)?)?;
    let ids: HashSet<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    let (mut pairs, pstats) = preprocess(&raw, &ids, &pre_cfg);
    log::info!("preprocess: {pstats:?}");
    if let Some(path) = &a.augment {
        let (aug, astats) = augment_pairs(&read_candidates(path)?, &docs, &pairs, trigram_similarity)?;
        log::info!("augment: {astats:?}");
        let client = a.relevance_endpoint.as_deref().map(|ep| {
            RelevanceClient::new(ep, a.relevance_key.clone(), a.relevance_model.clone(), Duration::from_secs(a.timeout_secs))
        });
        let by_id: HashMap<String, DocumentRecord> = docs.iter().map(|d| (d.doc_id.clone(), d.clone())).collect();
        let (kept, lstats) = label_pairs(client.as_ref(), aug, &by_id, a.concurrency);
        log::info!("relevance: {lstats:?}");
        pairs.extend(kept);
    }
    let manifest = make_splits(&pairs, &split_cfg)?;
    manifest.verify()?;
    manifest.write(&a.out)?;
    writeln!(out, "train\t{}", manifest.train.len())?;
    writeln!(out, "val\t{}", manifest.val.len())?;
    for q in Quadrant::ALL {
        writeln!(out, "test_{}\t{}", q.as_str().to_lowercase(), manifest.quadrant(q).len())?;
    }
    Ok(())
}

fn train_tokenizer_cmd(a: &TrainTokenizerArgs, out: &mut dyn Write) -> CliResult<()> {
    let manifest = SplitManifest::read(&a.splits)?;
    let docs = load_corpus(&a.corpus)?;
    let tok = train_tokenizer(&manifest.train, &docs, a.vocab_size)?;
    fs::create_dir_all(&a.models)?;
    let path = a.models.join(TOKENIZER_FILE);
    tok.save(&path)?;
    writeln!(out, "vocab {} -> {}", tok.vocab_size(), path.display())?;
    Ok(())
}

fn train_lm_cmd(a: &TrainLmArgs, out: &mut dyn Write) -> CliResult<()> {
    let manifest = SplitManifest::read(&a.splits)?;
    let tok = TokenizerModel::load(a.models.join(TOKENIZER_FILE))?;
    let cfg = TrainConfig {
        order: a.order,
        discount: a.discount,
        splits_per_pair: a.splits_per_pair,
        seed: a.seed,
        ..Default::default()
    };
    let lm = train_lm(&tok, &manifest.train, &cfg)?;
    let path = a.models.join(LM_FILE);
    lm.save(&path)?;
    writeln!(out, "order {} over {} pairs -> {}", lm.order(), manifest.train.len(), path.display())?;
    Ok(())
}

fn build_trie_cmd(a: &BuildTrieArgs, out: &mut dyn Write) -> CliResult<()> {
    let manifest = SplitManifest::read(&a.splits)?;
    let tok = TokenizerModel::load(a.models.join(TOKENIZER_FILE))?;
    let queries = global_queries(&manifest.train);
    let trie = CompletionTrie::build(&queries);
    let guidance = GuidanceTrie::build(&queries, &tok);
    trie.save(a.models.join(GLOBAL_TRIE_FILE))?;
    guidance.save(a.models.join(GLOBAL_GUIDANCE_FILE))?;
    writeln!(
        out,
        "{} queries: {} trie nodes, {} guidance sequences",
        queries.len(),
        trie.node_count(),
        guidance.sequence_count()
    )?;
    Ok(())
}

/// Loads models, ingests the corpus with training queries attached and
/// returns the engine alongside the manifest, if one was given.
pub fn load_engine(a: &EngineArgs) -> CliResult<(Engine, Option<SplitManifest>)> {
    let models = ModelBundle::load(&a.models)?;
    let docs = match &a.corpus {
        Some(p) => load_corpus(p)?,
        None => Vec::new(),
    };
    let manifest = a.splits.as_ref().map(SplitManifest::read).transpose()?;
    let train = manifest.as_ref().map_or(&[][..], |m| m.train.as_slice());
    let mut engine = Engine::new(models).with_documents(attach_queries(&docs, train))?;
    if let Some(p) = &a.vectors {
        engine = engine.with_vectors(VectorTable::load(p)?);
    }
    log::info!("engine: {} documents, {} training pairs", engine.len(), train.len());
    Ok((engine, manifest))
}

fn resolve(engine: &Engine, o: &Overrides) -> CliResult<CompleteOptions> {
    let opts = engine.defaults().with(o)?;
    log::info!("decode options: {}", serde_json::to_string(&opts).unwrap_or_default());
    Ok(opts)
}

fn complete_cmd(a: &CompleteArgs, out: &mut dyn Write) -> CliResult<()> {
    let (engine, _) = load_engine(&a.engine)?;
    let o = Overrides { mode: a.mode, trie: a.trie, context: a.context, ..a.hyper.overrides() };
    let opts = resolve(&engine, &o)?;
    for s in engine.complete(a.doc_id.as_deref(), &a.prefix, &opts)? {
        writeln!(out, "{}\t{:.6}\t{}", s.rank, s.score, s.text)?;
    }
    Ok(())
}

/// Seeded evaluation instances: up to `limit` test pairs per quadrant, each
/// cut at a uniformly drawn split point.
pub fn build_examples(
    manifest: &SplitManifest,
    quadrants: &[Quadrant],
    limit: usize,
    seed: u64,
) -> qac_core::Result<Vec<EvalExample>> {
    let wanted: BTreeSet<Quadrant> = quadrants.iter().copied().collect();
    let mut out = Vec::new();
    for q in wanted {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(q as u64));
        let mut pairs = manifest.quadrant(q).to_vec();
        pairs.shuffle(&mut rng);
        pairs.truncate(limit);
        for p in pairs {
            let (prefix, _) = dynamic_prefix_split(&p.query.text, &mut rng)?;
            out.push(EvalExample::new(&p.query.text, &p.doc_id, &prefix, q)?);
        }
    }
    Ok(out)
}

/// Completion texts, or nothing when the engine refuses the request.
pub fn suggest(engine: &Engine, opts: &CompleteOptions, doc_id: &str, prefix: &str) -> Vec<String> {
    match engine.complete(Some(doc_id), prefix, opts) {
        Ok(s) => s.into_iter().map(|s| s.text).collect(),
        Err(e) => {
            log::warn!("{doc_id} {prefix:?}: {e}");
            Vec::new()
        }
    }
}

pub fn mode_label(opts: &CompleteOptions) -> String {
    match opts.mode {
        Source::Mpc => format!("mpc:{}", opts.trie),
        Source::Lm => format!("lm:{}", opts.context),
        Source::Guided => format!("guided:{}:{}", opts.trie, opts.context),
    }
}

fn require_manifest(m: Option<SplitManifest>) -> CliResult<SplitManifest> {
    m.ok_or_else(|| CliError::Usage("--splits is required".into()))
}

fn check_vectors(engine_args: &EngineArgs, context: ContextMode) -> CliResult<()> {
    if context.needs_vectors() && engine_args.vectors.is_none() {
        return Err(CliError::Data(QacError::Unavailable(format!("context {context} needs --vectors"))));
    }
    Ok(())
}

/// One report per (quadrant, mode, context), sorted by quadrant then label.
pub fn eval_reports(
    engine: &Engine,
    examples: &[EvalExample],
    runs: &[CompleteOptions],
    base: &EvalOptions<'_>,
) -> Vec<MetricReport> {
    let mut reports = Vec::new();
    for opts in runs {
        let eo = EvalOptions { mode_label: mode_label(opts), ..base.clone() };
        reports.extend(evaluate_run(examples, |d, p| suggest(engine, opts, d, p), &eo));
    }
    reports.sort_by(|a, b| a.quadrant.cmp(&b.quadrant).then_with(|| a.mode.cmp(&b.mode)));
    reports
}

fn eval_cmd(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    for &c in &a.contexts {
        check_vectors(&a.engine, c)?;
    }
    let vectors = a.engine.vectors.as_ref().map(VectorTable::load).transpose()?;
    let (engine, manifest) = load_engine(&a.engine)?;
    let manifest = require_manifest(manifest)?;
    let examples = build_examples(&manifest, &a.quadrants, a.limit, a.seed)?;
    let mut runs = Vec::new();
    for &mode in &a.modes {
        let contexts: &[ContextMode] = if mode == Source::Mpc { &[ContextMode::Prefix] } else { &a.contexts };
        for &context in contexts {
            let o = Overrides { mode: Some(mode), trie: Some(a.trie), context: Some(context), ..a.hyper.overrides() };
            runs.push(resolve(&engine, &o)?);
        }
    }
    let base = EvalOptions {
        bleu_mode: a.bleu_mode,
        vectors: vectors.as_ref(),
        compute_tes: !a.no_tes,
        ..Default::default()
    };
    let reports = eval_reports(&engine, &examples, &runs, &base);
    let text = match a.format {
        OutputFormat::Tsv => reports_to_tsv(&reports),
        OutputFormat::Table => reports_to_table(&reports),
    };
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> CliResult<()> {
    let (engine, _) = load_engine(&a.engine)?;
    let cfg = qac_service::ServeConfig {
        addr: Some(SocketAddr::new(a.host, a.port)),
        static_dir: a.static_dir,
        cors_origin: a.cors_origin,
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(qac_service::serve(engine, cfg))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub bias: f64,
    pub n_examples: usize,
    pub mean: ExampleScores,
}

pub const SWEEP_COLUMNS: [&str; 10] = ["alpha", "beta", "bias", "n", "MRR", "αNDCG", "BLEU_RR", "PPN", "PRN", "TES"];

/// Every grid cell in (alpha, beta, bias) order.
pub fn sweep_grid() -> Vec<(f64, f64, f64)> {
    let mut cells = Vec::with_capacity(SWEEP_ALPHAS.len() * SWEEP_BETAS.len() * SWEEP_BIASES.len());
    for a in SWEEP_ALPHAS {
        for b in SWEEP_BETAS {
            for bias in SWEEP_BIASES {
                cells.push((a, b, bias));
            }
        }
    }
    cells
}

/// Guided decoding at each grid cell, scored over all `examples`.
pub fn sweep(
    engine: &Engine,
    base: &CompleteOptions,
    examples: &[EvalExample],
    eval: &EvalOptions<'_>,
) -> qac_core::Result<Vec<SweepRow>> {
    let cells = sweep_grid();
    let mut rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(alpha, beta, bias)| {
            let o = Overrides { alpha: Some(alpha), beta: Some(beta), bias: Some(bias), ..Default::default() };
            let opts = CompleteOptions { mode: Source::Guided, ..base.with(&o)? };
            let system = |d: &str, p: &str| suggest(engine, &opts, d, p);
            let scores: Vec<ExampleScores> = examples.iter().map(|ex| score_example(ex, &system, eval)).collect();
            let n = scores.len().max(1) as f64;
            let mean = |f: fn(&ExampleScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
            Ok(SweepRow {
                alpha,
                beta,
                bias,
                n_examples: scores.len(),
                mean: ExampleScores {
                    mrr: mean(|x| x.mrr),
                    alpha_ndcg: mean(|x| x.alpha_ndcg),
                    bleu_rr: mean(|x| x.bleu_rr),
                    sbmrr: None,
                    ppn: mean(|x| x.ppn),
                    prn: mean(|x| x.prn),
                    tes: mean(|x| x.tes),
                },
            })
        })
        .collect::<qac_core::Result<_>>()?;
    rows.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then(a.beta.total_cmp(&b.beta)).then(a.bias.total_cmp(&b.bias)));
    Ok(rows)
}

pub fn sweep_to_tsv(rows: &[SweepRow]) -> String {
    let mut s = SWEEP_COLUMNS.join("\t");
    s.push('\n');
    for r in rows {
        let m = &r.mean;
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            r.alpha, r.beta, r.bias, r.n_examples, m.mrr, m.alpha_ndcg, m.bleu_rr, m.ppn, m.prn, m.tes
        ));
    }
    s
}

fn sweep_cmd(a: &SweepArgs, out: &mut dyn Write) -> CliResult<()> {
    check_vectors(&a.engine, a.context)?;
    let (engine, manifest) = load_engine(&a.engine)?;
    let manifest = require_manifest(manifest)?;
    let examples = build_examples(&manifest, &a.quadrants, a.limit, a.seed)?;
    let base = resolve(&engine, &Overrides { trie: Some(a.trie), context: Some(a.context), ..Default::default() })?;
    let eval = EvalOptions { compute_tes: !a.no_tes, ..Default::default() };
    let rows = sweep(&engine, &base, &examples, &eval)?;
    out.write_all(sweep_to_tsv(&rows).as_bytes())?;
    Ok(())
}
