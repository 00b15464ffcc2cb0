//! Component tagging against a synonym lexicon, word and n-gram
//! frequencies, per-year series and the component by domain table.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, Source};
use crate::error::{Error, Result};
use crate::extract::{split_sentences, DefinitionCandidate};
use crate::stats::ContingencyTable;
use crate::vector_space::Tokenizer;

pub const CATEGORIES: [&str; 5] = [
    "Data",
    "Analysis and services",
    "Infrastructure",
    "Interface",
    "System governance",
];

pub const YEAR_START: i32 = 2000;
pub const YEAR_END: i32 = 2024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub category: String,
    /// Case-insensitive phrases; a trailing `*` on a word matches any
    /// word with that prefix.
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum WordPattern {
    Exact(String),
    Prefix(String),
}

impl WordPattern {
    fn matches(&self, word: &str) -> bool {
        match self {
            WordPattern::Exact(w) => w == word,
            WordPattern::Prefix(p) => word.starts_with(p.as_str()),
        }
    }
}

/// Lowercased alphanumeric runs; hyphens, slashes and punctuation all split.
pub fn tag_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn compile_phrase(pattern: &str) -> Vec<WordPattern> {
    pattern
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric() && c != '*')
        .filter(|w| !w.is_empty() && *w != "*")
        .map(|w| match w.strip_suffix('*') {
            Some(prefix) => WordPattern::Prefix(prefix.trim_end_matches('*').to_string()),
            None => WordPattern::Exact(w.to_string()),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ComponentLexicon {
    components: Vec<Component>,
    compiled: Vec<Vec<Vec<WordPattern>>>,
}

impl ComponentLexicon {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("lexicon has no components".into()));
        }
        let mut names = HashSet::new();
        for c in &components {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate component {:?}", c.name)));
            }
            if !CATEGORIES.contains(&c.category.as_str()) {
                return Err(Error::Config(format!(
                    "component {:?} has unknown category {:?}",
                    c.name, c.category
                )));
            }
            if c.patterns.iter().all(|p| compile_phrase(p).is_empty()) {
                return Err(Error::Config(format!("component {:?} has no usable pattern", c.name)));
            }
        }
        let compiled = components
            .iter()
            .map(|c| {
                c.patterns
                    .iter()
                    .map(|p| compile_phrase(p))
                    .filter(|p| !p.is_empty())
                    .collect()
            })
            .collect();
        Ok(ComponentLexicon { components, compiled })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let components: Vec<Component> =
            serde_json::from_str(&body).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ComponentLexicon::new(components)
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn names(&self) -> Vec<String> {
        self.components.iter().map(|c| c.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Names of all components with a matching pattern, in lexicon order.
    pub fn tag(&self, sentence: &str) -> Vec<String> {
        let words = tag_words(sentence);
        self.components
            .iter()
            .zip(&self.compiled)
            .filter(|(_, phrases)| phrases.iter().any(|p| phrase_occurs(p, &words)))
            .map(|(c, _)| c.name.clone())
            .collect()
    }
}

impl Default for ComponentLexicon {
    fn default() -> Self {
        let components: Vec<Component> =
            serde_json::from_str(include_str!("../data/lexicon.json")).expect("bundled lexicon is valid JSON");
        ComponentLexicon::new(components).expect("bundled lexicon is valid")
    }
}

fn phrase_occurs(phrase: &[WordPattern], words: &[String]) -> bool {
    words.len() >= phrase.len()
        && words
            .windows(phrase.len())
            .any(|w| phrase.iter().zip(w).all(|(p, word)| p.matches(word)))
}

/// A surviving definition with its component tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefinitionRecord {
    pub id: String,
    pub doc_id: String,
    pub sentence: String,
    pub year: Option<i32>,
    pub domain: Domain,
    pub source: Source,
    #[serde(default)]
    pub cluster: Option<usize>,
    #[serde(default)]
    pub components: Vec<String>,
}

impl DefinitionRecord {
    pub fn from_candidate(c: &DefinitionCandidate, cluster: Option<usize>) -> Self {
        DefinitionRecord {
            id: c.id.clone(),
            doc_id: c.doc_id.clone(),
            sentence: c.sentence.clone(),
            year: c.year,
            domain: c.domain,
            source: c.source,
            cluster,
            components: Vec::new(),
        }
    }
}

pub fn tag_components(record: &DefinitionRecord, lexicon: &ComponentLexicon) -> Vec<String> {
    lexicon.tag(&record.sentence)
}

/// Tags every record in place.
pub fn tag_all(records: &mut [DefinitionRecord], lexicon: &ComponentLexicon) {
    records
        .par_iter_mut()
        .for_each(|r| r.components = lexicon.tag(&r.sentence));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Definitions,
    Survey,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Definitions => "definitions",
            Scope::Survey => "survey",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub scope: Scope,
    /// Window length; 1 for single words.
    pub n: usize,
    /// Descending count, ties alphabetical.
    pub rows: Vec<(String, usize)>,
    pub total: usize,
}

impl FrequencyTable {
    fn from_counts(scope: Scope, n: usize, counts: HashMap<String, usize>) -> Self {
        let mut rows: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let total = rows.iter().map(|r| r.1).sum();
        FrequencyTable { scope, n, rows, total }
    }

    pub fn top(&self, k: usize) -> &[(String, usize)] {
        &self.rows[..k.min(self.rows.len())]
    }

    pub fn count(&self, term: &str) -> usize {
        self.rows.iter().find(|r| r.0 == term).map_or(0, |r| r.1)
    }

    pub fn to_csv_rows(&self) -> Vec<Vec<String>> {
        self.rows.iter().map(|(t, c)| vec![t.clone(), c.to_string()]).collect()
    }
}

/// Word counts under `tokenizer` (stopwords removed by default).
pub fn term_frequencies<S: AsRef<str>>(texts: &[S], tokenizer: &Tokenizer, scope: Scope) -> FrequencyTable {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for token in tokenizer.tokenize(text.as_ref()) {
            *counts.entry(token).or_default() += 1;
        }
    }
    FrequencyTable::from_counts(scope, 1, counts)
}

/// Sliding-window n-grams (`2 <= n <= 5`) inside each sentence, stopwords
/// kept.
pub fn ngram_frequencies<S: AsRef<str>>(texts: &[S], n: usize, scope: Scope) -> Result<FrequencyTable> {
    if !(2..=5).contains(&n) {
        return Err(Error::InvalidArgument(format!("n-gram length {n} outside 2..=5")));
    }
    let tokenizer = Tokenizer::keep_stopwords();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for (sentence, _) in split_sentences(text.as_ref()) {
            let tokens = tokenizer.tokenize(&sentence);
            for window in tokens.windows(n) {
                *counts.entry(window.join(" ")).or_default() += 1;
            }
        }
    }
    Ok(FrequencyTable::from_counts(scope, n, counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordCloudEntry {
    pub text: String,
    pub count: usize,
    /// Count divided by the largest count.
    pub weight: f64,
}

pub fn word_cloud(table: &FrequencyTable, limit: usize) -> Vec<WordCloudEntry> {
    let max = table.rows.first().map_or(1, |r| r.1).max(1) as f64;
    table
        .top(limit)
        .iter()
        .map(|(t, c)| WordCloudEntry {
            text: t.clone(),
            count: *c,
            weight: *c as f64 / max,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSeries {
    pub components: Vec<String>,
    pub start: i32,
    pub end: i32,
    /// `counts[component][year - start]`
    pub counts: Vec<Vec<usize>>,
    pub excluded_unknown_year: usize,
    pub excluded_out_of_range: usize,
}

impl TemporalSeries {
    pub fn get(&self, component: &str, year: i32) -> usize {
        let Some(row) = self.components.iter().position(|c| c == component) else {
            return 0;
        };
        if year < self.start || year > self.end {
            return 0;
        }
        self.counts[row][(year - self.start) as usize]
    }

    pub fn cumulative(&self) -> Vec<Vec<usize>> {
        self.counts
            .iter()
            .map(|row| {
                row.iter()
                    .scan(0, |acc, &c| {
                        *acc += c;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect()
    }

    /// `component,year,count` rows, every year present.
    pub fn to_csv_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for (name, counts) in self.components.iter().zip(&self.counts) {
            for (offset, c) in counts.iter().enumerate() {
                rows.push(vec![name.clone(), (self.start + offset as i32).to_string(), c.to_string()]);
            }
        }
        rows
    }
}

/// Tagged records per component and year. Records without a year, or
/// outside the series range, are counted separately.
pub fn temporal_series(records: &[DefinitionRecord], lexicon: &ComponentLexicon) -> TemporalSeries {
    let names = lexicon.names();
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let width = (YEAR_END - YEAR_START + 1) as usize;
    let mut counts = vec![vec![0; width]; names.len()];
    let mut unknown = 0;
    let mut out_of_range = 0;
    for r in records {
        match r.year {
            None => unknown += 1,
            Some(y) if !(YEAR_START..=YEAR_END).contains(&y) => out_of_range += 1,
            Some(y) => {
                for tag in &r.components {
                    if let Some(&row) = index.get(tag.as_str()) {
                        counts[row][(y - YEAR_START) as usize] += 1;
                    }
                }
            }
        }
    }
    TemporalSeries {
        components: names,
        start: YEAR_START,
        end: YEAR_END,
        counts,
        excluded_unknown_year: unknown,
        excluded_out_of_range: out_of_range,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyOutcome {
    pub table: ContingencyTable,
    /// Records left out per domain outside `domains` (e.g. `other`).
    pub excluded: BTreeMap<String, usize>,
}

/// Component by domain counts over tagged records.
pub fn contingency(
    records: &[DefinitionRecord],
    lexicon: &ComponentLexicon,
    domains: &[Domain],
) -> Result<ContingencyOutcome> {
    let names = lexicon.names();
    let row_of: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut observed = vec![vec![0u64; domains.len()]; names.len()];
    let mut excluded: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        let Some(col) = domains.iter().position(|d| *d == r.domain) else {
            *excluded.entry(r.domain.as_str().to_string()).or_default() += 1;
            continue;
        };
        for tag in &r.components {
            if let Some(&row) = row_of.get(tag.as_str()) {
                observed[row][col] += 1;
            }
        }
    }
    if observed.iter().flatten().all(|&c| c == 0) {
        return Err(Error::DegenerateTable("contingency table has no tagged records".into()));
    }
    let table = ContingencyTable::new(
        names,
        domains.iter().map(|d| d.as_str().to_string()).collect(),
        observed,
    )?;
    Ok(ContingencyOutcome { table, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const VO: &str = "Digital twin is a real-time, virtual replica of a physical object or system created using sensors and computational models.";
    const NASA: &str = "Digital Twin is defined as an integrated multi-physics, multi-scale, probabilistic simulation of a vehicle or system that uses the best available physical models, sensor updates, fleet history, and so forth, to mirror the life of its physical twin.";

    fn record(id: &str, sentence: &str, domain: Domain, year: Option<i32>) -> DefinitionRecord {
        DefinitionRecord {
            id: id.into(),
            doc_id: id.into(),
            sentence: sentence.into(),
            year,
            domain,
            source: Source::Article,
            cluster: None,
            components: Vec::new(),
        }
    }

    #[test]
    fn default_lexicon_shape() {
        let lex = ComponentLexicon::default();
        assert_eq!(
            lex.names(),
            vec![
                "2D/3D data",
                "Real-time data",
                "Data modeling",
                "Simulation models",
                "Data analytics and AI/ML models",
                "Data Catalogue",
                "Cloud platform and architecture",
                "HPC",
                "IoT and sensor network",
                "API",
                "Visualization",
                "Dashboards",
                "Data validation",
                "Security protocols",
                "Policy",
                "User management and administration",
            ]
        );
        let cats: HashSet<&str> = lex.components().iter().map(|c| c.category.as_str()).collect();
        assert_eq!(cats.len(), 5);
    }

    #[test]
    fn table_definitions_tag_as_traced() {
        let lex = ComponentLexicon::default();
        assert_eq!(lex.tag(VO), vec!["Real-time data", "Simulation models", "IoT and sensor network"]);
        assert_eq!(lex.tag(NASA), vec!["Simulation models", "IoT and sensor network"]);
        assert!(lex.tag("Digital twin is a mirror of a thing.").is_empty());
    }

    #[test]
    fn wildcard_and_phrase_matching() {
        let lex = ComponentLexicon::default();
        assert_eq!(lex.tag("kept synchronised with the asset"), vec!["Real-time data"]);
        assert_eq!(lex.tag("uses AI/ML"), vec!["Data analytics and AI/ML models"]);
        assert!(lex.tag("the time was real").is_empty());
        assert!(lex.tag("email").is_empty());
    }

    #[test]
    fn invalid_lexicons() {
        let c = |name: &str, cat: &str| Component {
            name: name.into(),
            category: cat.into(),
            patterns: vec!["x".into()],
        };
        assert!(ComponentLexicon::new(vec![c("a", "Data"), c("a", "Data")]).is_err());
        assert!(ComponentLexicon::new(vec![c("a", "Nope")]).is_err());
        assert!(ComponentLexicon::new(vec![]).is_err());
    }

    #[test]
    fn word_counts() {
        let t = term_frequencies(
            &["the physical asset", "a physical model"],
            &Tokenizer::default(),
            Scope::Definitions,
        );
        assert_eq!(t.count("physical"), 2);
        assert_eq!(t.count("the"), 0);
        assert_eq!(t.rows[0].0, "physical");
        assert_eq!(t.total, t.rows.iter().map(|r| r.1).sum::<usize>());
    }

    #[test]
    fn ngram_windows() {
        let t = ngram_frequencies(&["digital twin is defined"], 2, Scope::Definitions).unwrap();
        assert_eq!(t.rows.len(), 3);
        for g in ["digital twin", "twin is", "is defined"] {
            assert_eq!(t.count(g), 1);
        }
        assert!(ngram_frequencies(&["digital twin is defined"], 5, Scope::Definitions)
            .unwrap()
            .rows
            .is_empty());
        let rep = ngram_frequencies(&["digital twin and digital twin"], 2, Scope::Definitions).unwrap();
        assert_eq!(rep.count("digital twin"), 2);
        assert!(ngram_frequencies(&["x"], 1, Scope::Definitions).is_err());
        assert!(ngram_frequencies(&["x"], 6, Scope::Definitions).is_err());
        // windows never cross sentence boundaries
        let split = ngram_frequencies(&["alpha beta. gamma delta."], 2, Scope::Survey).unwrap();
        assert_eq!(split.count("beta gamma"), 0);
    }

    #[test]
    fn temporal_counts() {
        let lex = ComponentLexicon::default();
        let mut recs: Vec<_> = (0..3)
            .map(|i| record(&format!("r{i}"), "real-time feed", Domain::Urban, Some(2021)))
            .collect();
        recs.push(record("u", "real-time feed", Domain::Urban, None));
        tag_all(&mut recs, &lex);
        let s = temporal_series(&recs, &lex);
        assert_eq!(s.get("Real-time data", 2021), 3);
        assert_eq!(s.get("Real-time data", 2020), 0);
        assert_eq!(s.excluded_unknown_year, 1);
        assert_eq!(s.to_csv_rows().len(), 16 * 25);
        let cum = s.cumulative();
        assert_eq!(cum[1][24], 3);
    }

    #[test]
    fn single_record_table() {
        let lex = ComponentLexicon::default();
        let mut recs = vec![
            record("a", "governed by policy", Domain::Urban, Some(2020)),
            record("b", "governed by policy", Domain::Other, Some(2020)),
        ];
        tag_all(&mut recs, &lex);
        let out = contingency(&recs, &lex, &Domain::ANALYSIS).unwrap();
        let t = &out.table;
        let policy = t.rows.iter().position(|r| r == "Policy").unwrap();
        let urban = t.cols.iter().position(|c| c == "urban").unwrap();
        assert_eq!(t.observed[policy][urban], 1);
        assert_eq!(t.grand_total(), 1);
        assert_eq!(out.excluded["other"], 1);
        let empty = vec![record("c", "nothing here", Domain::Urban, None)];
        assert!(contingency(&empty, &lex, &Domain::ANALYSIS).is_err());
    }

    proptest! {
        #[test]
        fn table_total_equals_tag_count(picks in proptest::collection::vec((0usize..16, 0usize..4), 1..40)) {
            let lex = ComponentLexicon::default();
            let recs: Vec<_> = picks
                .iter()
                .enumerate()
                .map(|(i, &(c, d))| {
                    let mut r = record(&i.to_string(), "", Domain::ANALYSIS[d], None);
                    r.components = vec![lex.names()[c].clone()];
                    r
                })
                .collect();
            let t = contingency(&recs, &lex, &Domain::ANALYSIS).unwrap().table;
            prop_assert_eq!(t.grand_total() as usize, recs.iter().map(|r| r.components.len()).sum::<usize>());
        }

        #[test]
        fn adding_a_pattern_never_removes_tags(sentence in "[a-z ]{0,40}", extra in "[a-z]{1,6}\\*?") {
            let base = ComponentLexicon::default();
            let mut comps = base.components().to_vec();
            comps[3].patterns.push(extra);
            let wider = ComponentLexicon::new(comps).unwrap();
            let before: HashSet<String> = base.tag(&sentence).into_iter().collect();
            let after: HashSet<String> = wider.tag(&sentence).into_iter().collect();
            prop_assert!(before.is_subset(&after));
        }

        #[test]
        fn frequency_total_is_order_free(mut texts in proptest::collection::vec("[a-z ]{0,30}", 0..8)) {
            let tok = Tokenizer::default();
            let a = term_frequencies(&texts, &tok, Scope::Definitions);
            texts.reverse();
            let b = term_frequencies(&texts, &tok, Scope::Definitions);
            prop_assert_eq!(a, b);
        }
    }
}
