use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use defminer::artifacts::{self, ArtifactMeta};
use defminer::clustering::{KMeansParams, Restage};
use defminer::components::{ComponentLexicon, DefinitionRecord};
use defminer::corpus::{load_corpus, Domain, Source};
use defminer::dedup::MatchMode;
use defminer::endpoint::ClassifierEndpoint;
use defminer::extract::{DefinitionCandidate, PatternTemplate};
use defminer::filter::FilterRules;
use defminer::pipeline::{self, PipelineConfig};
use defminer::report::emit_report;
use defminer::stats::{ResidualKind, Smoothing};
use defminer::vector_space::{DefinitionVector, Tokenizer, VectorRecord, VectorizerConfig};
use defminer::{Error, Result};

#[derive(Parser)]
#[command(name = "defminer", version, about = "Mine, filter and analyse definitions of a term from text corpora")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate and normalize a JSONL corpus.
    Ingest(IngestArgs),
    /// Extract candidate definition sentences.
    Extract(ExtractArgs),
    /// Drop incomplete definitions.
    Filter(FilterArgs),
    /// Compute sentence vectors.
    Embed(EmbedArgs),
    /// Staged k-means over sentence vectors.
    Cluster(ClusterArgs),
    /// Remove near-duplicate definitions within clusters.
    Dedup(DedupArgs),
    /// Tag components and compute frequency tables.
    Components(ComponentsArgs),
    /// Chi-square test, residuals and component groups.
    Stats(StatsArgs),
    /// Rebuild the report of a finished run.
    Report(ReportArgs),
    /// Run every stage.
    Run(RunArgs),
}

#[derive(Args, Serialize)]
struct EndpointArgs {
    /// Classifier or embedding service URL; enables the external path.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    /// Fail instead of falling back when the endpoint errors.
    #[arg(long)]
    no_fallback: bool,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
}

impl EndpointArgs {
    fn endpoint(&self) -> ClassifierEndpoint {
        match &self.endpoint {
            Some(url) => ClassifierEndpoint {
                timeout_ms: self.timeout_ms,
                allow_fallback: !self.no_fallback,
                max_in_flight: self.max_in_flight,
                ..ClassifierEndpoint::enabled(url.clone())
            },
            None => ClassifierEndpoint::disabled(),
        }
    }
}

#[derive(Args, Serialize)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Additional survey corpus.
    #[arg(long)]
    survey: Option<PathBuf>,
    #[arg(long)]
    domain_rules: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ExtractArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "digital twin")]
    term: String,
    /// Do not accept the plural form of the term.
    #[arg(long)]
    no_plural: bool,
    /// Extra regular expression (repeatable).
    #[arg(long = "extra-pattern")]
    extra_patterns: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct FilterArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[command(flatten)]
    endpoint: EndpointArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct EmbedArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[command(flatten)]
    endpoint: EndpointArgs,
    #[arg(long, default_value_t = 2)]
    ngram_max: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ClusterArgs {
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "400,100,50")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = RestageArg::Centroids)]
    restage: RestageArg,
    /// Use the cluster counts as given instead of scaling them to the corpus.
    #[arg(long)]
    no_scale: bool,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 10)]
    n_init: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum, Serialize)]
enum RestageArg {
    Centroids,
    Raw,
}

impl From<RestageArg> for Restage {
    fn from(r: RestageArg) -> Self {
        match r {
            RestageArg::Centroids => Restage::Centroids,
            RestageArg::Raw => Restage::Raw,
        }
    }
}

#[derive(Args, Serialize)]
struct DedupArgs {
    /// Kept candidates in corpus order.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long, default_value_t = defminer::dedup::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Compare sentences without case folding or whitespace collapse.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct ComponentsArgs {
    #[arg(long)]
    definitions: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Corpus whose survey documents feed the survey-scope tables.
    #[arg(long)]
    survey_corpus: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    ngram: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct StatsArgs {
    #[arg(long)]
    contingency: PathBuf,
    #[arg(long, value_enum, default_value_t = SmoothingArg::AddHalfZeroCells)]
    smoothing: SmoothingArg,
    /// Adjusted instead of Pearson residuals.
    #[arg(long)]
    adjusted: bool,
    #[arg(long, default_value_t = 2)]
    groups: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum, Serialize)]
enum SmoothingArg {
    None,
    AddHalfZeroCells,
}

impl From<SmoothingArg> for Smoothing {
    fn from(s: SmoothingArg) -> Self {
        match s {
            SmoothingArg::None => Smoothing::None,
            SmoothingArg::AddHalfZeroCells => Smoothing::AddHalfZeroCells,
        }
    }
}

#[derive(Args, Serialize)]
struct ReportArgs {
    /// Output directory of a run.
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Args, Serialize)]
struct RunArgs {
    /// JSON config file; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    survey: Option<PathBuf>,
    #[arg(long)]
    term: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long)]
    no_scale: bool,
    #[arg(long, value_enum)]
    restage: Option<RestageArg>,
    #[arg(long)]
    dedup_threshold: Option<f64>,
    #[arg(long)]
    raw_match: bool,
    #[arg(long)]
    domain_rules: Option<PathBuf>,
    #[arg(long)]
    filter_rules: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, value_enum)]
    smoothing: Option<SmoothingArg>,
    #[arg(long)]
    adjusted: bool,
    /// Completeness classifier URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Sentence-embedding service URL.
    #[arg(long)]
    embedding_endpoint: Option<String>,
    #[arg(long)]
    no_fallback: bool,
    #[arg(long)]
    timeout_ms: Option<u64>,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.corpus {
            cfg.corpus = v.clone();
        }
        if let Some(v) = &self.survey {
            cfg.survey = Some(v.clone());
        }
        if let Some(v) = &self.term {
            cfg.term = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.ks {
            cfg.ks = v.clone();
        }
        if self.no_scale {
            cfg.scale_ks = false;
        }
        if let Some(v) = self.restage {
            cfg.restage = v.into();
        }
        if let Some(v) = self.dedup_threshold {
            cfg.dedup_threshold = v;
        }
        if self.raw_match {
            cfg.match_mode = MatchMode::Raw;
        }
        if let Some(v) = &self.domain_rules {
            cfg.domain_rules = Some(v.clone());
        }
        if let Some(v) = &self.filter_rules {
            cfg.filter_rules = Some(v.clone());
        }
        if let Some(v) = &self.lexicon {
            cfg.lexicon = Some(v.clone());
        }
        if let Some(v) = self.smoothing {
            cfg.smoothing = v.into();
        }
        if self.adjusted {
            cfg.residual_kind = ResidualKind::Adjusted;
        }
        if let Some(url) = &self.endpoint {
            cfg.endpoint.url = url.clone();
            cfg.endpoint.enabled = true;
        }
        if let Some(url) = &self.embedding_endpoint {
            cfg.embedding_endpoint.url = url.clone();
            cfg.embedding_endpoint.enabled = true;
        }
        for e in [&mut cfg.endpoint, &mut cfg.embedding_endpoint] {
            if self.no_fallback {
                e.allow_fallback = false;
            }
            if let Some(t) = self.timeout_ms {
                e.timeout_ms = t;
            }
        }
        if cfg.corpus.as_os_str().is_empty() {
            return Err(Error::Config("no corpus given (--corpus or config key \"corpus\")".into()));
        }
        Ok(cfg)
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn meta_for<T: Serialize>(args: &T, seed: u64) -> ArtifactMeta {
    ArtifactMeta::for_args(args, seed)
}

const DEFAULT_SEED: u64 = 42;

fn run_ingest(a: &IngestArgs) -> Result<()> {
    let (corpus, summary) = pipeline::ingest(&a.input, a.survey.as_deref(), a.domain_rules.as_deref())?;
    let meta = meta_for(a, DEFAULT_SEED);
    artifacts::write_jsonl(&a.out, &meta, corpus.documents())?;
    print_json(&summary)
}

fn run_extract(a: &ExtractArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let template = PatternTemplate {
        plural: !a.no_plural,
        extra_patterns: a.extra_patterns.clone(),
        ..PatternTemplate::new(a.term.clone())
    };
    let (cands, summary) = pipeline::extract(corpus.documents(), &template)?;
    artifacts::write_jsonl(&a.out, &meta_for(a, DEFAULT_SEED), &cands)?;
    print_json(&summary)
}

fn run_filter(a: &FilterArgs) -> Result<()> {
    let cands: Vec<DefinitionCandidate> = artifacts::read_jsonl(&a.candidates)?;
    let rules = match &a.rules {
        Some(p) => FilterRules::load(p)?,
        None => FilterRules::default(),
    };
    let (outcome, verdicts) = pipeline::filter(cands, &a.endpoint.endpoint(), &rules)?;
    pipeline::write_filter(&a.out_dir, &meta_for(a, DEFAULT_SEED), &outcome, &verdicts)?;
    print_json(&outcome.audit)
}

fn run_embed(a: &EmbedArgs) -> Result<()> {
    let cands: Vec<DefinitionCandidate> = artifacts::read_jsonl(&a.candidates)?;
    let config = VectorizerConfig {
        tokenizer: Tokenizer::default(),
        ngram_max: a.ngram_max,
    };
    let (vectors, summary) = pipeline::embed(&cands, &a.endpoint.endpoint(), &config)?;
    let records: Vec<VectorRecord> = vectors.iter().map(VectorRecord::from).collect();
    artifacts::write_jsonl(&a.out, &meta_for(a, DEFAULT_SEED), &records)?;
    print_json(&summary)
}

fn run_cluster(a: &ClusterArgs) -> Result<()> {
    let records: Vec<VectorRecord> = artifacts::read_jsonl(&a.vectors)?;
    let vectors: Vec<DefinitionVector<f64>> = records.into_iter().map(Into::into).collect();
    let params = KMeansParams {
        seed: a.seed,
        max_iter: a.max_iter,
        tol: a.tol,
        n_init: a.n_init,
    };
    let outcome = pipeline::cluster(&vectors, &a.ks, !a.no_scale, &params, a.restage.into())?;
    pipeline::write_cluster(&a.out_dir, &meta_for(a, a.seed), &outcome)?;
    print_json(&outcome.summary)
}

fn run_dedup(a: &DedupArgs) -> Result<()> {
    let cands: Vec<DefinitionCandidate> = artifacts::read_jsonl(&a.candidates)?;
    let rows: Vec<pipeline::AssignmentRow> = artifacts::read_jsonl(&a.assignment)?;
    let finals = pipeline::final_clusters(&rows);
    let clusters = cands
        .iter()
        .map(|c| {
            finals
                .get(&c.id)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("candidate {} has no cluster assignment", c.id)))
        })
        .collect::<Result<Vec<usize>>>()?;
    let mode = if a.raw { MatchMode::Raw } else { MatchMode::Folded };
    let stage = pipeline::dedup(&cands, &clusters, a.threshold, mode)?;
    pipeline::write_dedup(&a.out_dir, &meta_for(a, DEFAULT_SEED), &stage)?;
    print_json(&stage.summary)
}

fn run_components(a: &ComponentsArgs) -> Result<()> {
    let records: Vec<DefinitionRecord> = artifacts::read_jsonl(&a.definitions)?;
    let lexicon = match &a.lexicon {
        Some(p) => ComponentLexicon::load(p)?,
        None => ComponentLexicon::default(),
    };
    let survey: Vec<String> = match &a.survey_corpus {
        Some(p) => load_corpus(p)?
            .documents()
            .iter()
            .filter(|d| d.source == Source::Survey)
            .map(|d| d.text.clone())
            .collect(),
        None => Vec::new(),
    };
    let domains = Domain::ANALYSIS.to_vec();
    let stage = pipeline::components(records, &survey, &lexicon, &domains, &a.ngram)?;
    pipeline::write_components(&a.out_dir, &meta_for(a, DEFAULT_SEED), &stage, &lexicon, &domains, a.top_k)?;
    print_json(&stage.summary)
}

fn run_stats(a: &StatsArgs) -> Result<()> {
    let table = pipeline::read_contingency(&a.contingency)?;
    let kind = if a.adjusted { ResidualKind::Adjusted } else { ResidualKind::Pearson };
    let anchors: Vec<String> = defminer::stats::DEFAULT_ANCHORS.iter().map(|s| s.to_string()).collect();
    let s = pipeline::stats(&table, a.smoothing.into(), kind, a.groups, &anchors)?;
    pipeline::write_stats(&a.out_dir, &meta_for(a, DEFAULT_SEED), &s, &anchors)?;
    print_json(&serde_json::json!({
        "statistic": s.chi.statistic,
        "dof": s.chi.dof,
        "p_value": s.chi.p_value,
        "groups": s.partition.groups,
    }))
}

fn run_report(a: &ReportArgs) -> Result<()> {
    let manifest = pipeline::read_manifest(&a.dir)?;
    let report = emit_report(&a.dir, &manifest)?;
    print!("{}", defminer::report::render_digest(&report));
    Ok(())
}

fn run_run(a: &RunArgs) -> Result<()> {
    let cfg = a.config()?;
    let manifest = pipeline::run_pipeline(&cfg)?;
    let digest = Path::new(&cfg.output_dir).join(pipeline::DIR_REPORT).join("digest.txt");
    eprintln!("wrote {}", digest.display());
    print_json(&manifest.counts)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => run_ingest(a),
        Command::Extract(a) => run_extract(a),
        Command::Filter(a) => run_filter(a),
        Command::Embed(a) => run_embed(a),
        Command::Cluster(a) => run_cluster(a),
        Command::Dedup(a) => run_dedup(a),
        Command::Components(a) => run_components(a),
        Command::Stats(a) => run_stats(a),
        Command::Report(a) => run_report(a),
        Command::Run(a) => run_run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
