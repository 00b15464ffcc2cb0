//! End-to-end orchestration: configuration, the stage functions shared by
//! the `run` command and the per-stage subcommands, and their artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, hash_json, ArtifactMeta, VERSION};
use crate::clustering::{cascade_cluster, scale_ks, silhouette_score, CascadeResult, KMeansParams, Restage};
use crate::components::{
    contingency, ngram_frequencies, tag_all, temporal_series, term_frequencies, word_cloud, ComponentLexicon,
    DefinitionRecord, FrequencyTable, Scope, TemporalSeries,
};
use crate::corpus::{default_domain_rules, load_corpus, load_domain_rules, Corpus, Document, Domain, Source};
use crate::dedup::{cross_cluster_duplicates, dedup_all, DedupOutcome, MatchMode};
use crate::endpoint::ClassifierEndpoint;
use crate::error::{Error, Result};
use crate::extract::{dedup_exact, extract_candidates, has_parenthetical_citation, DefinitionCandidate, PatternTemplate};
use crate::filter::{apply_filter, classify_all, FilterOutcome, FilterRules, FilterVerdict};
use crate::report::emit_report;
use crate::stats::{
    chi_square, partition_components, residual_correlation, residuals, ChiSquareResult, ContingencyTable,
    CorrelationMatrix, ComponentPartition, ResidualKind, ResidualMatrix, Smoothing,
};
use crate::vector_space::{
    embed_external, DefinitionVector, EmbeddingSource, Tokenizer, VectorRecord, VectorizerConfig,
};
use rayon::prelude::*;

/// Corpus size the reference cluster counts were chosen for.
pub const REFERENCE_CORPUS: usize = 800;

pub const DIR_CORPUS: &str = "01_corpus";
pub const DIR_CANDIDATES: &str = "02_candidates";
pub const DIR_FILTERED: &str = "03_filtered";
pub const DIR_VECTORS: &str = "04_vectors";
pub const DIR_CLUSTERS: &str = "05_clusters";
pub const DIR_DEFINITIONS: &str = "06_definitions";
pub const DIR_COMPONENTS: &str = "07_components";
pub const DIR_STATS: &str = "08_stats";
pub const DIR_REPORT: &str = "09_report";
pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Definition pattern settings; the term lives on the config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternOptions {
    pub plural: bool,
    pub copulas: Vec<String>,
    pub markers: Vec<String>,
    pub extra_patterns: Vec<String>,
}

impl Default for PatternOptions {
    fn default() -> Self {
        let t = PatternTemplate::new("");
        PatternOptions {
            plural: t.plural,
            copulas: t.copulas,
            markers: t.markers,
            extra_patterns: t.extra_patterns,
        }
    }
}

impl PatternOptions {
    pub fn template(&self, term: &str) -> PatternTemplate {
        PatternTemplate {
            term: term.to_string(),
            plural: self.plural,
            copulas: self.copulas.clone(),
            markers: self.markers.clone(),
            extra_patterns: self.extra_patterns.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    /// Optional separate survey corpus, appended to `corpus`.
    pub survey: Option<PathBuf>,
    pub term: String,
    pub pattern: PatternOptions,
    pub domain_rules: Option<PathBuf>,
    pub filter_rules: Option<PathBuf>,
    /// Completeness classifier.
    pub endpoint: ClassifierEndpoint,
    /// Sentence-embedding service; the TF-IDF baseline when disabled.
    pub embedding_endpoint: ClassifierEndpoint,
    pub ngram_max: usize,
    pub ks: Vec<usize>,
    /// Rescale `ks` to corpora smaller than the reference size.
    pub scale_ks: bool,
    pub restage: Restage,
    pub max_iter: usize,
    pub tol: f64,
    pub n_init: usize,
    pub dedup_threshold: f64,
    pub match_mode: MatchMode,
    pub lexicon: Option<PathBuf>,
    pub domains: Vec<Domain>,
    pub smoothing: Smoothing,
    pub residual_kind: ResidualKind,
    pub groups: usize,
    pub anchors: Vec<String>,
    pub ngram_sizes: Vec<usize>,
    pub top_k: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let km = KMeansParams::default();
        PipelineConfig {
            corpus: PathBuf::new(),
            survey: None,
            term: "digital twin".into(),
            pattern: PatternOptions::default(),
            domain_rules: None,
            filter_rules: None,
            endpoint: ClassifierEndpoint::disabled(),
            embedding_endpoint: ClassifierEndpoint::disabled(),
            ngram_max: 2,
            ks: vec![400, 100, 50],
            scale_ks: true,
            restage: Restage::Centroids,
            max_iter: km.max_iter,
            tol: km.tol,
            n_init: km.n_init,
            dedup_threshold: crate::dedup::DEFAULT_THRESHOLD,
            match_mode: MatchMode::Folded,
            lexicon: None,
            domains: Domain::ANALYSIS.to_vec(),
            smoothing: Smoothing::AddHalfZeroCells,
            residual_kind: ResidualKind::Pearson,
            groups: 2,
            anchors: crate::stats::DEFAULT_ANCHORS.iter().map(|s| s.to_string()).collect(),
            ngram_sizes: vec![2, 3],
            top_k: 20,
            seed: 42,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&body).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks values and that every referenced file exists. Cluster counts
    /// are checked by the clustering stage itself.
    pub fn validate(&self) -> Result<()> {
        let must_exist = |label: &str, path: &Path| {
            if path.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("{label} file {} not found", path.display())))
            }
        };
        must_exist("corpus", &self.corpus)?;
        for (label, path) in [
            ("survey", &self.survey),
            ("domain rules", &self.domain_rules),
            ("filter rules", &self.filter_rules),
            ("lexicon", &self.lexicon),
        ] {
            if let Some(p) = path {
                must_exist(label, p)?;
            }
        }
        if self.term.trim().is_empty() {
            return Err(Error::Config("term is empty".into()));
        }
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "dedup_threshold {} outside (0, 1]",
                self.dedup_threshold
            )));
        }
        if self.domains.len() < 2 {
            return Err(Error::Config("at least two analysis domains are needed".into()));
        }
        if self.ngram_max == 0 {
            return Err(Error::Config("ngram_max must be at least 1".into()));
        }
        if self.groups == 0 {
            return Err(Error::Config("groups must be at least 1".into()));
        }
        if let Some(n) = self.ngram_sizes.iter().find(|n| !(2..=5).contains(*n)) {
            return Err(Error::Config(format!("n-gram size {n} outside 2..=5")));
        }
        for endpoint in [&self.endpoint, &self.embedding_endpoint] {
            if endpoint.enabled && endpoint.url.is_empty() {
                return Err(Error::Config("enabled endpoint has no url".into()));
            }
        }
        if self.endpoint.enabled && !self.endpoint.prompt_template.contains("{sentence}") {
            return Err(Error::Config("prompt template lacks {sentence}".into()));
        }
        Ok(())
    }

    /// Hash of every setting except the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hash_json(&c)
    }

    pub fn meta(&self) -> ArtifactMeta {
        ArtifactMeta::new(self.hash(), self.seed)
    }

    pub fn kmeans_params(&self) -> KMeansParams {
        KMeansParams {
            seed: self.seed,
            max_iter: self.max_iter,
            tol: self.tol,
            n_init: self.n_init,
        }
    }

    pub fn filter_rules(&self) -> Result<FilterRules> {
        self.filter_rules
            .as_deref()
            .map_or_else(|| Ok(FilterRules::default()), FilterRules::load)
    }

    pub fn lexicon(&self) -> Result<ComponentLexicon> {
        self.lexicon
            .as_deref()
            .map_or_else(|| Ok(ComponentLexicon::default()), ComponentLexicon::load)
    }

    pub fn vectorizer(&self) -> VectorizerConfig {
        VectorizerConfig {
            tokenizer: Tokenizer::default(),
            ngram_max: self.ngram_max,
        }
    }
}

fn dir(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub documents: usize,
    pub manifest: crate::corpus::Manifest,
    /// How many documents got their domain from metadata, rules or fallback.
    pub domain_origin: BTreeMap<String, usize>,
}

pub fn ingest(corpus: &Path, survey: Option<&Path>, rules: Option<&Path>) -> Result<(Corpus, IngestSummary)> {
    let mut docs = load_corpus(corpus)?.into_documents();
    if let Some(path) = survey {
        docs.extend(load_corpus(path)?.into_documents());
    }
    let mut corpus = Corpus::new(docs)?;
    let rules = match rules {
        Some(p) => load_domain_rules(p)?,
        None => default_domain_rules(),
    };
    let domain_origin = corpus.apply_domain_rules(&rules);
    let summary = IngestSummary {
        documents: corpus.len(),
        manifest: corpus.manifest().clone(),
        domain_origin,
    };
    info!("ingested {} documents", summary.documents);
    Ok((corpus, summary))
}

pub fn write_ingest(out: &Path, meta: &ArtifactMeta, corpus: &Corpus, summary: &IngestSummary) -> Result<()> {
    artifacts::write_jsonl(&out.join("corpus.norm.jsonl"), meta, corpus.documents())?;
    artifacts::write_json(&out.join("manifest.json"), meta, summary)
}

// ---------------------------------------------------------------- extract

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub articles_scanned: usize,
    pub matched_sentences: usize,
    pub exact_duplicates: usize,
    pub candidates: usize,
    pub with_citation: usize,
    pub pattern: String,
    pub by_marker: BTreeMap<String, usize>,
}

/// Candidates from article documents, exact duplicates folded.
pub fn extract(documents: &[Document], template: &PatternTemplate) -> Result<(Vec<DefinitionCandidate>, ExtractSummary)> {
    let pattern = template.compile()?;
    let articles: Vec<&Document> = documents.iter().filter(|d| d.source == Source::Article).collect();
    let per_doc: Vec<Vec<DefinitionCandidate>> = articles.par_iter().map(|d| extract_candidates(d, &pattern)).collect();
    let raw: Vec<DefinitionCandidate> = per_doc.into_iter().flatten().collect();
    let matched = raw.len();
    let candidates = dedup_exact(raw);
    let mut by_marker = BTreeMap::new();
    for c in &candidates {
        let key = if c.marker.is_empty() { "bare" } else { c.marker.as_str() };
        *by_marker.entry(key.to_string()).or_default() += 1;
    }
    let summary = ExtractSummary {
        articles_scanned: articles.len(),
        matched_sentences: matched,
        exact_duplicates: matched - candidates.len(),
        candidates: candidates.len(),
        with_citation: candidates.iter().filter(|c| has_parenthetical_citation(&c.sentence)).count(),
        pattern: template.compiled()?,
        by_marker,
    };
    Ok((candidates, summary))
}

pub fn write_extract(out: &Path, meta: &ArtifactMeta, cands: &[DefinitionCandidate], summary: &ExtractSummary) -> Result<()> {
    artifacts::write_jsonl(&out.join("candidates.jsonl"), meta, cands)?;
    artifacts::write_json(&out.join("summary.json"), meta, summary)
}

// ---------------------------------------------------------------- filter

pub fn filter(
    cands: Vec<DefinitionCandidate>,
    endpoint: &ClassifierEndpoint,
    rules: &FilterRules,
) -> Result<(FilterOutcome, Vec<FilterVerdict>)> {
    let verdicts = classify_all(&cands, endpoint, rules)?;
    let outcome = apply_filter(cands, &verdicts)?;
    Ok((outcome, verdicts))
}

pub fn write_filter(out: &Path, meta: &ArtifactMeta, outcome: &FilterOutcome, verdicts: &[FilterVerdict]) -> Result<()> {
    artifacts::write_jsonl(&out.join("kept.jsonl"), meta, &outcome.kept)?;
    artifacts::write_jsonl(&out.join("dropped.jsonl"), meta, &outcome.dropped)?;
    artifacts::write_jsonl(&out.join("verdicts.jsonl"), meta, verdicts)?;
    artifacts::write_json(&out.join("audit.json"), meta, &outcome.audit)
}

// ---------------------------------------------------------------- embed

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub source: EmbeddingSource,
    pub vectors: usize,
    pub dimension: usize,
    pub degenerate: Vec<String>,
}

pub fn embed(
    kept: &[DefinitionCandidate],
    endpoint: &ClassifierEndpoint,
    config: &VectorizerConfig,
) -> Result<(Vec<DefinitionVector<f64>>, EmbedSummary)> {
    if kept.is_empty() {
        let summary = EmbedSummary {
            source: EmbeddingSource::Baseline,
            vectors: 0,
            dimension: 0,
            degenerate: Vec::new(),
        };
        return Ok((Vec::new(), summary));
    }
    let ids: Vec<String> = kept.iter().map(|c| c.id.clone()).collect();
    let sentences: Vec<String> = kept.iter().map(|c| c.sentence.clone()).collect();
    let (vectors, source) = embed_external(&ids, &sentences, endpoint, config)?;
    let summary = EmbedSummary {
        source,
        vectors: vectors.len(),
        dimension: vectors.first().map_or(0, DefinitionVector::dimension),
        degenerate: vectors
            .iter()
            .filter(|v| v.degenerate)
            .map(|v| v.candidate_id.clone())
            .collect(),
    };
    Ok((vectors, summary))
}

pub fn write_embed(out: &Path, meta: &ArtifactMeta, vectors: &[DefinitionVector<f64>], summary: &EmbedSummary) -> Result<()> {
    let records: Vec<VectorRecord> = vectors.iter().map(VectorRecord::from).collect();
    artifacts::write_jsonl(&out.join("vectors.jsonl"), meta, &records)?;
    artifacts::write_json(&out.join("embedding.json"), meta, summary)
}

// ---------------------------------------------------------------- cluster

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub candidate_id: String,
    pub stage: usize,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub k: usize,
    pub inertia: f64,
    pub iterations_run: usize,
    pub inertia_history: Vec<f64>,
    /// Over the original vectors, at this stage's membership.
    pub silhouette: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub requested_ks: Vec<usize>,
    pub ks: Vec<usize>,
    pub restage: Restage,
    pub seed: u64,
    pub stages: Vec<StageSummary>,
}

pub struct ClusterOutcome {
    pub ids: Vec<String>,
    pub cascade: Option<CascadeResult<f64>>,
    pub summary: ClusterSummary,
}

impl ClusterOutcome {
    /// Final-stage cluster per id (all zero when nothing was clustered).
    pub fn final_membership(&self) -> Vec<usize> {
        self.cascade
            .as_ref()
            .map_or_else(|| vec![0; self.ids.len()], |c| c.final_membership().to_vec())
    }

    pub fn rows(&self) -> Vec<AssignmentRow> {
        let Some(cascade) = &self.cascade else {
            return Vec::new();
        };
        let mut rows = Vec::new();
        for (stage, membership) in cascade.membership.iter().enumerate() {
            for (id, &cluster) in self.ids.iter().zip(membership) {
                rows.push(AssignmentRow {
                    candidate_id: id.clone(),
                    stage,
                    cluster,
                });
            }
        }
        rows
    }
}

pub fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument(format!("cluster counts must be positive, got {ks:?}")));
    }
    if ks.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(format!(
            "cluster counts must be strictly decreasing, got {ks:?}"
        )));
    }
    Ok(())
}

pub fn cluster(
    vectors: &[DefinitionVector<f64>],
    ks: &[usize],
    scale: bool,
    params: &KMeansParams,
    restage: Restage,
) -> Result<ClusterOutcome> {
    check_ks(ks)?;
    let ids: Vec<String> = vectors.iter().map(|v| v.candidate_id.clone()).collect();
    let n = vectors.len();
    let effective = if scale { scale_ks(ks, n, REFERENCE_CORPUS) } else { ks.to_vec() };
    let mut summary = ClusterSummary {
        requested_ks: ks.to_vec(),
        ks: Vec::new(),
        restage,
        seed: params.seed,
        stages: Vec::new(),
    };
    if n == 0 {
        return Ok(ClusterOutcome {
            ids,
            cascade: None,
            summary,
        });
    }
    let points: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.clone()).collect();
    let cascade = cascade_cluster(&ids, &points, &effective, params, restage)?;
    summary.ks = effective;
    summary.stages = cascade
        .stages
        .iter()
        .zip(&cascade.membership)
        .enumerate()
        .map(|(stage, (a, membership))| StageSummary {
            stage,
            k: a.k,
            inertia: a.inertia,
            iterations_run: a.iterations_run,
            inertia_history: a.inertia_history.clone(),
            silhouette: silhouette_score(&points, membership),
        })
        .collect();
    Ok(ClusterOutcome {
        ids,
        cascade: Some(cascade),
        summary,
    })
}

pub fn write_cluster(out: &Path, meta: &ArtifactMeta, outcome: &ClusterOutcome) -> Result<()> {
    artifacts::write_jsonl(&out.join("assignments.jsonl"), meta, &outcome.rows())?;
    artifacts::write_json(&out.join("stages.json"), meta, &outcome.summary)
}

/// Final-stage cluster of each candidate from an assignment file.
pub fn final_clusters(rows: &[AssignmentRow]) -> BTreeMap<String, usize> {
    let last = rows.iter().map(|r| r.stage).max().unwrap_or(0);
    rows.iter()
        .filter(|r| r.stage == last)
        .map(|r| (r.candidate_id.clone(), r.cluster))
        .collect()
}

// ---------------------------------------------------------------- dedup

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupSummary {
    pub threshold: f64,
    pub match_mode: MatchMode,
    pub input: usize,
    pub survivors: usize,
    pub dropped: usize,
    pub cross_cluster_pairs: usize,
}

pub struct DedupStage {
    pub outcome: DedupOutcome,
    pub records: Vec<DefinitionRecord>,
    pub cross: Vec<crate::dedup::CrossClusterPair>,
    pub summary: DedupSummary,
}

pub fn dedup(
    kept: &[DefinitionCandidate],
    clusters: &[usize],
    threshold: f64,
    mode: MatchMode,
) -> Result<DedupStage> {
    let outcome = dedup_all(kept, clusters, threshold, mode)?;
    let cluster_of: BTreeMap<&str, usize> = kept.iter().map(|c| c.id.as_str()).zip(clusters.iter().copied()).collect();
    let survivor_clusters: Vec<usize> = outcome.survivors.iter().map(|s| cluster_of[s.id.as_str()]).collect();
    let cross = cross_cluster_duplicates(&outcome.survivors, &survivor_clusters, threshold, mode);
    let records = outcome
        .survivors
        .iter()
        .zip(&survivor_clusters)
        .map(|(c, &k)| DefinitionRecord::from_candidate(c, Some(k)))
        .collect();
    let summary = DedupSummary {
        threshold,
        match_mode: mode,
        input: kept.len(),
        survivors: outcome.survivors.len(),
        dropped: outcome.decisions.len(),
        cross_cluster_pairs: cross.len(),
    };
    Ok(DedupStage {
        outcome,
        records,
        cross,
        summary,
    })
}

pub fn write_dedup(out: &Path, meta: &ArtifactMeta, stage: &DedupStage) -> Result<()> {
    artifacts::write_jsonl(&out.join("definitions.jsonl"), meta, &stage.records)?;
    let rows: Vec<Vec<String>> = stage
        .outcome
        .decisions
        .iter()
        .map(|d| vec![d.kept_id.clone(), d.dropped_id.clone(), fmt_f64(d.score), d.cluster.to_string()])
        .collect();
    artifacts::write_csv(
        &out.join("decisions.csv"),
        meta,
        &["kept_id", "dropped_id", "score", "cluster"],
        &rows,
    )?;
    let cross: Vec<Vec<String>> = stage
        .cross
        .iter()
        .map(|p| {
            vec![
                p.first_id.clone(),
                p.second_id.clone(),
                p.first_cluster.to_string(),
                p.second_cluster.to_string(),
                fmt_f64(p.score),
            ]
        })
        .collect();
    artifacts::write_csv(
        &out.join("cross_cluster.csv"),
        meta,
        &["first_id", "second_id", "first_cluster", "second_cluster", "score"],
        &cross,
    )?;
    artifacts::write_json(&out.join("summary.json"), meta, &stage.summary)
}

// ---------------------------------------------------------------- components

pub struct ComponentsStage {
    pub records: Vec<DefinitionRecord>,
    pub unigrams: Vec<FrequencyTable>,
    pub ngrams: Vec<FrequencyTable>,
    pub temporal: TemporalSeries,
    /// `None` when no tagged record falls in an analysis domain.
    pub table: Option<ContingencyTable>,
    pub summary: ComponentsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentsSummary {
    pub records: usize,
    pub tagged_records: usize,
    pub tags: usize,
    pub tags_per_component: BTreeMap<String, usize>,
    pub excluded_from_table: BTreeMap<String, usize>,
    pub excluded_unknown_year: usize,
    pub excluded_out_of_range_year: usize,
    pub survey_documents: usize,
}

pub fn components(
    mut records: Vec<DefinitionRecord>,
    survey_texts: &[String],
    lexicon: &ComponentLexicon,
    domains: &[Domain],
    ngram_sizes: &[usize],
) -> Result<ComponentsStage> {
    tag_all(&mut records, lexicon);
    let tokenizer = Tokenizer::default();
    let sentences: Vec<&str> = records.iter().map(|r| r.sentence.as_str()).collect();
    let unigrams = vec![
        term_frequencies(&sentences, &tokenizer, Scope::Definitions),
        term_frequencies(survey_texts, &tokenizer, Scope::Survey),
    ];
    let mut ngrams = Vec::new();
    for &n in ngram_sizes {
        ngrams.push(ngram_frequencies(&sentences, n, Scope::Definitions)?);
        ngrams.push(ngram_frequencies(survey_texts, n, Scope::Survey)?);
    }
    let temporal = temporal_series(&records, lexicon);
    let (table, excluded) = match contingency(&records, lexicon, domains) {
        Ok(c) => (Some(c.table), c.excluded),
        Err(Error::DegenerateTable(_)) => {
            let mut excluded = BTreeMap::new();
            for r in records.iter().filter(|r| !domains.contains(&r.domain)) {
                *excluded.entry(r.domain.as_str().to_string()).or_default() += 1;
            }
            (None, excluded)
        }
        Err(e) => return Err(e),
    };
    let mut per_component: BTreeMap<String, usize> = lexicon.names().into_iter().map(|n| (n, 0)).collect();
    for r in &records {
        for t in &r.components {
            *per_component.entry(t.clone()).or_default() += 1;
        }
    }
    let summary = ComponentsSummary {
        records: records.len(),
        tagged_records: records.iter().filter(|r| !r.components.is_empty()).count(),
        tags: records.iter().map(|r| r.components.len()).sum(),
        tags_per_component: per_component,
        excluded_from_table: excluded,
        excluded_unknown_year: temporal.excluded_unknown_year,
        excluded_out_of_range_year: temporal.excluded_out_of_range,
        survey_documents: survey_texts.len(),
    };
    Ok(ComponentsStage {
        records,
        unigrams,
        ngrams,
        temporal,
        table,
        summary,
    })
}

fn frequency_rows(tables: &[FrequencyTable]) -> Vec<Vec<String>> {
    tables
        .iter()
        .flat_map(|t| {
            t.rows
                .iter()
                .map(move |(term, c)| vec![t.scope.as_str().to_string(), term.clone(), c.to_string()])
        })
        .collect()
}

pub fn table_rows(table: &ContingencyTable) -> Vec<Vec<String>> {
    table
        .rows
        .iter()
        .zip(&table.observed)
        .map(|(name, counts)| {
            std::iter::once(name.clone())
                .chain(counts.iter().map(u64::to_string))
                .collect()
        })
        .collect()
}

pub fn write_components(
    out: &Path,
    meta: &ArtifactMeta,
    stage: &ComponentsStage,
    lexicon: &ComponentLexicon,
    domains: &[Domain],
    top_k: usize,
) -> Result<()> {
    artifacts::write_jsonl(&out.join("tagged.jsonl"), meta, &stage.records)?;
    artifacts::write_csv(
        &out.join("freq_unigram.csv"),
        meta,
        &["scope", "term", "count"],
        &frequency_rows(&stage.unigrams),
    )?;
    let mut sizes: Vec<usize> = stage.ngrams.iter().map(|t| t.n).collect();
    sizes.dedup();
    for n in sizes {
        let tables: Vec<FrequencyTable> = stage.ngrams.iter().filter(|t| t.n == n).cloned().collect();
        artifacts::write_csv(
            &out.join(format!("freq_ngram_{n}.csv")),
            meta,
            &["scope", "ngram", "count"],
            &frequency_rows(&tables),
        )?;
    }
    let cloud: BTreeMap<&str, _> = stage
        .unigrams
        .iter()
        .map(|t| (t.scope.as_str(), word_cloud(t, top_k.max(100))))
        .collect();
    artifacts::write_json(&out.join("wordcloud.json"), meta, &cloud)?;
    artifacts::write_csv(
        &out.join("temporal.csv"),
        meta,
        &["component", "year", "count"],
        &stage.temporal.to_csv_rows(),
    )?;
    // the full matrix is written even when empty so downstream tools see the shape
    let zero;
    let table = match &stage.table {
        Some(t) => t,
        None => {
            zero = ContingencyTable {
                rows: lexicon.names(),
                cols: domains.iter().map(|d| d.as_str().to_string()).collect(),
                observed: vec![vec![0; domains.len()]; lexicon.len()],
            };
            &zero
        }
    };
    let mut header = vec!["component"];
    header.extend(table.cols.iter().map(String::as_str));
    artifacts::write_csv(&out.join("contingency.csv"), meta, &header, &table_rows(table))?;
    artifacts::write_json(&out.join("summary.json"), meta, &stage.summary)
}

/// Reads a contingency CSV (`component,<domain>...`).
pub fn read_contingency(path: &Path) -> Result<ContingencyTable> {
    let (header, rows) = artifacts::read_csv(path)?;
    if header.len() < 3 {
        return Err(Error::DegenerateTable(format!("{}: need at least two domain columns", path.display())));
    }
    let mut names = Vec::new();
    let mut observed = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        names.push(row[0].clone());
        let counts = row[1..]
            .iter()
            .map(|v| {
                v.trim().parse::<u64>().map_err(|e| Error::MalformedLine {
                    line: i + 2,
                    message: format!("{}: {v:?}: {e}", path.display()),
                })
            })
            .collect::<Result<Vec<u64>>>()?;
        observed.push(counts);
    }
    ContingencyTable::new(names, header[1..].to_vec(), observed)
}

// ---------------------------------------------------------------- stats

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedCell {
    pub component: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    /// `"ok"` or `"skipped"`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default)]
    pub statistic: Option<f64>,
    #[serde(default)]
    pub dof: Option<usize>,
    #[serde(default)]
    pub p_value: Option<f64>,
    #[serde(default)]
    pub total: Option<f64>,
    #[serde(default)]
    pub smoothing: Option<Smoothing>,
    #[serde(default)]
    pub smoothed_cells: Vec<SmoothedCell>,
    #[serde(default)]
    pub expected: Vec<Vec<f64>>,
}

impl ChiSquareReport {
    pub fn skipped(reason: impl Into<String>) -> Self {
        ChiSquareReport {
            status: "skipped".into(),
            reason: Some(reason.into()),
            statistic: None,
            dof: None,
            p_value: None,
            total: None,
            smoothing: None,
            smoothed_cells: Vec::new(),
            expected: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupsReport {
    pub linkage: String,
    pub anchors: Vec<String>,
    pub groups: Vec<crate::stats::ComponentGroup>,
    pub zero_variance: Vec<String>,
}

pub struct StatsStage {
    pub chi: ChiSquareResult<f64>,
    pub residuals: ResidualMatrix<f64>,
    pub correlation: CorrelationMatrix<f64>,
    pub partition: ComponentPartition<f64>,
    pub table: ContingencyTable,
}

pub fn stats(
    table: &ContingencyTable,
    smoothing: Smoothing,
    kind: ResidualKind,
    groups: usize,
    anchors: &[String],
) -> Result<StatsStage> {
    let chi = chi_square::<f64>(table, smoothing)?;
    let res = residuals(table, &chi, kind)?;
    let correlation = residual_correlation(&res)?;
    let anchor_refs: Vec<&str> = anchors.iter().map(String::as_str).collect();
    let partition = partition_components(&correlation, groups.min(table.rows.len()), &anchor_refs)?;
    Ok(StatsStage {
        chi,
        residuals: res,
        correlation,
        partition,
        table: table.clone(),
    })
}

fn matrix_rows(labels: &[String], values: &[Vec<f64>]) -> Vec<Vec<String>> {
    labels
        .iter()
        .zip(values)
        .map(|(l, row)| std::iter::once(l.clone()).chain(row.iter().map(|v| fmt_f64(*v))).collect())
        .collect()
}

pub fn write_stats(out: &Path, meta: &ArtifactMeta, s: &StatsStage, anchors: &[String]) -> Result<()> {
    let report = ChiSquareReport {
        status: "ok".into(),
        reason: None,
        statistic: Some(s.chi.statistic),
        dof: Some(s.chi.dof),
        p_value: Some(s.chi.p_value),
        total: Some(s.chi.observed.iter().flatten().sum()),
        smoothing: Some(s.chi.smoothing),
        smoothed_cells: s
            .chi
            .adjusted_cells
            .iter()
            .map(|&(i, j)| SmoothedCell {
                component: s.table.rows[i].clone(),
                domain: s.table.cols[j].clone(),
            })
            .collect(),
        expected: s.chi.expected.clone(),
    };
    artifacts::write_json(&out.join("chisq.json"), meta, &report)?;
    let mut header = vec!["component"];
    header.extend(s.table.cols.iter().map(String::as_str));
    artifacts::write_csv(&out.join("expected.csv"), meta, &header, &matrix_rows(&s.table.rows, &s.chi.expected))?;
    artifacts::write_csv(
        &out.join("residuals.csv"),
        meta,
        &header,
        &matrix_rows(&s.residuals.rows, &s.residuals.values),
    )?;
    let mut significant = Vec::new();
    for (i, row) in s.residuals.values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if s.residuals.mask[i][j] {
                significant.push(vec![s.residuals.rows[i].clone(), s.residuals.cols[j].clone(), fmt_f64(v)]);
            }
        }
    }
    artifacts::write_csv(
        &out.join("significant.csv"),
        meta,
        &["component", "domain", "residual"],
        &significant,
    )?;
    let mut corr_header = vec!["component"];
    corr_header.extend(s.correlation.labels.iter().map(String::as_str));
    artifacts::write_csv(
        &out.join("residual_corr.csv"),
        meta,
        &corr_header,
        &matrix_rows(&s.correlation.labels, &s.correlation.values),
    )?;
    let linkage: Vec<Vec<String>> = s
        .partition
        .tree
        .merges
        .iter()
        .map(|m| vec![m.left.to_string(), m.right.to_string(), fmt_f64(m.distance), m.size.to_string()])
        .collect();
    artifacts::write_csv(&out.join("linkage.csv"), meta, &["left", "right", "distance", "size"], &linkage)?;
    let leaves: Vec<Vec<String>> = s
        .partition
        .tree
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), l.clone()])
        .collect();
    artifacts::write_csv(&out.join("linkage_leaves.csv"), meta, &["node", "component"], &leaves)?;
    let groups = GroupsReport {
        linkage: "average".into(),
        anchors: anchors.to_vec(),
        groups: s.partition.groups.clone(),
        zero_variance: s.correlation.zero_variance.clone(),
    };
    artifacts::write_json(&out.join("groups.json"), meta, &groups)
}

// ---------------------------------------------------------------- run

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FunnelCounts {
    pub documents: usize,
    pub articles: usize,
    pub survey_documents: usize,
    pub matched_sentences: usize,
    pub candidates: usize,
    pub kept: usize,
    pub clusters: usize,
    pub survivors: usize,
    pub tagged_records: usize,
    pub tags: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub input: usize,
    pub output: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub term: String,
    /// `"completed"` or `"failed"`.
    pub status: String,
    #[serde(default)]
    pub failed_stage: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
    pub counts: FunnelCounts,
    pub stages: Vec<StageTiming>,
}

impl RunManifest {
    fn new(cfg: &PipelineConfig) -> Self {
        RunManifest {
            version: VERSION.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            term: cfg.term.clone(),
            status: "running".into(),
            failed_stage: None,
            error: None,
            counts: FunnelCounts::default(),
            stages: Vec::new(),
        }
    }

    /// Funnel order holds: survivors <= kept <= candidates <= matched.
    pub fn funnel_is_monotone(&self) -> bool {
        let c = &self.counts;
        c.survivors <= c.kept && c.kept <= c.candidates && c.candidates <= c.matched_sentences
    }
}

struct Recorder {
    manifest: RunManifest,
}

impl Recorder {
    fn time<T>(&mut self, stage: &str, input: usize, f: impl FnOnce() -> Result<(T, usize)>) -> Result<T> {
        let started = Instant::now();
        info!("stage {stage}: {input} in");
        match f() {
            Ok((value, output)) => {
                self.manifest.stages.push(StageTiming {
                    stage: stage.to_string(),
                    input,
                    output,
                    seconds: started.elapsed().as_secs_f64(),
                });
                Ok(value)
            }
            Err(e) => {
                self.manifest.status = "failed".into();
                self.manifest.failed_stage = Some(stage.to_string());
                self.manifest.error = Some(e.to_string());
                Err(e.in_stage(stage))
            }
        }
    }
}

pub fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<()> {
    let path = out.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(out: &Path) -> Result<RunManifest> {
    let path = out.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&body)?)
}

/// Runs every stage, writing artifacts under `cfg.output_dir`. On failure
/// the manifest records the failing stage and earlier artifacts are kept.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    let mut rec = Recorder {
        manifest: RunManifest::new(cfg),
    };
    let result = run_stages(cfg, &out, &mut rec);
    if result.is_ok() {
        rec.manifest.status = "completed".into();
    }
    write_manifest(&out, &rec.manifest)?;
    result?;
    emit_report(&out, &rec.manifest).map_err(|e| e.in_stage("report"))?;
    Ok(rec.manifest)
}

fn run_stages(cfg: &PipelineConfig, out: &Path, rec: &mut Recorder) -> Result<()> {
    let meta = cfg.meta();

    let corpus = rec.time("ingest", 0, || {
        let (corpus, summary) = ingest(&cfg.corpus, cfg.survey.as_deref(), cfg.domain_rules.as_deref())?;
        write_ingest(&dir(out, DIR_CORPUS), &meta, &corpus, &summary)?;
        let n = corpus.len();
        Ok((corpus, n))
    })?;
    let docs = corpus.documents();
    rec.manifest.counts.documents = docs.len();
    rec.manifest.counts.articles = docs.iter().filter(|d| d.source == Source::Article).count();
    rec.manifest.counts.survey_documents = docs.iter().filter(|d| d.source == Source::Survey).count();

    let template = cfg.pattern.template(&cfg.term);
    let (cands, extract_summary) = rec.time("extract", docs.len(), || {
        let (cands, summary) = extract(docs, &template)?;
        write_extract(&dir(out, DIR_CANDIDATES), &meta, &cands, &summary)?;
        let n = cands.len();
        Ok(((cands, summary), n))
    })?;
    rec.manifest.counts.matched_sentences = extract_summary.matched_sentences;
    rec.manifest.counts.candidates = cands.len();

    let n_cands = cands.len();
    let outcome = rec.time("filter", n_cands, || {
        let rules = cfg.filter_rules()?;
        let (outcome, verdicts) = filter(cands, &cfg.endpoint, &rules)?;
        write_filter(&dir(out, DIR_FILTERED), &meta, &outcome, &verdicts)?;
        let n = outcome.kept.len();
        Ok((outcome, n))
    })?;
    let kept = outcome.kept;
    rec.manifest.counts.kept = kept.len();

    let vectors = rec.time("embed", kept.len(), || {
        let (vectors, summary) = embed(&kept, &cfg.embedding_endpoint, &cfg.vectorizer())?;
        write_embed(&dir(out, DIR_VECTORS), &meta, &vectors, &summary)?;
        let n = vectors.len();
        Ok((vectors, n))
    })?;

    let clusters = rec.time("cluster", vectors.len(), || {
        let outcome = cluster(&vectors, &cfg.ks, cfg.scale_ks, &cfg.kmeans_params(), cfg.restage)?;
        write_cluster(&dir(out, DIR_CLUSTERS), &meta, &outcome)?;
        let k = outcome.summary.ks.last().copied().unwrap_or(0);
        Ok((outcome, k))
    })?;
    rec.manifest.counts.clusters = clusters.summary.ks.last().copied().unwrap_or(0);

    let membership = clusters.final_membership();
    let deduped = rec.time("dedup", kept.len(), || {
        let stage = dedup(&kept, &membership, cfg.dedup_threshold, cfg.match_mode)?;
        write_dedup(&dir(out, DIR_DEFINITIONS), &meta, &stage)?;
        let n = stage.records.len();
        Ok((stage, n))
    })?;
    rec.manifest.counts.survivors = deduped.records.len();

    let survey_texts: Vec<String> = docs
        .iter()
        .filter(|d| d.source == Source::Survey)
        .map(|d| d.text.clone())
        .collect();
    let comp = rec.time("components", deduped.records.len(), || {
        let lexicon = cfg.lexicon()?;
        let stage = components(deduped.records.clone(), &survey_texts, &lexicon, &cfg.domains, &cfg.ngram_sizes)?;
        write_components(&dir(out, DIR_COMPONENTS), &meta, &stage, &lexicon, &cfg.domains, cfg.top_k)?;
        let n = stage.summary.tags;
        Ok((stage, n))
    })?;
    rec.manifest.counts.tagged_records = comp.summary.tagged_records;
    rec.manifest.counts.tags = comp.summary.tags;

    let stats_dir = dir(out, DIR_STATS);
    rec.time("stats", comp.summary.tags, || match &comp.table {
        Some(table) => {
            let s = stats(table, cfg.smoothing, cfg.residual_kind, cfg.groups, &cfg.anchors)?;
            write_stats(&stats_dir, &meta, &s, &cfg.anchors)?;
            Ok(((), s.table.rows.len()))
        }
        None => {
            let reason = if comp.records.is_empty() {
                "no definitions survived"
            } else {
                "no component tags in the analysis domains"
            };
            artifacts::write_json(&stats_dir.join("chisq.json"), &meta, &ChiSquareReport::skipped(reason))?;
            Ok(((), 0))
        }
    })?;
    Ok(())
}
