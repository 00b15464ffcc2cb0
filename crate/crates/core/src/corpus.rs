//! Corpus ingestion: JSONL documents into normalized, validated records.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize;

pub const MIN_YEAR: i32 = 1900;
pub const MAX_YEAR: i32 = 2100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Building,
    Architecture,
    Urban,
    Manufacturing,
    Other,
}

impl Domain {
    pub const ALL: [Domain; 5] = [
        Domain::Building,
        Domain::Architecture,
        Domain::Urban,
        Domain::Manufacturing,
        Domain::Other,
    ];

    /// Columns of the component contingency table.
    pub const ANALYSIS: [Domain; 4] = [
        Domain::Building,
        Domain::Architecture,
        Domain::Urban,
        Domain::Manufacturing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Building => "building",
            Domain::Architecture => "architecture",
            Domain::Urban => "urban",
            Domain::Manufacturing => "manufacturing",
            Domain::Other => "other",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown domain {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Article,
    Survey,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Article => "article",
            Source::Survey => "survey",
        }
    }
}

/// Where a document's domain label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DomainOrigin {
    /// Present in the input record; never overridden by rules.
    Metadata,
    /// Assigned by a keyword rule.
    Rules,
    /// No metadata and no rule hit.
    #[default]
    Fallback,
}

/// One corpus item. `year == None` is the unknown-year sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub year: Option<i32>,
    pub venue: String,
    pub subject: String,
    pub domain: Domain,
    #[serde(default)]
    pub domain_origin: DomainOrigin,
    pub source: Source,
    pub text: String,
}

/// Raw wire shape; `domain` and `year` may be null.
#[derive(Debug, Deserialize)]
struct RawDocument {
    id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    year: Option<i64>,
    #[serde(default)]
    venue: String,
    #[serde(default)]
    subject: String,
    #[serde(default)]
    domain: Option<String>,
    #[serde(default)]
    domain_origin: Option<DomainOrigin>,
    source: Source,
    text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub by_source: BTreeMap<String, usize>,
    pub by_domain: BTreeMap<String, usize>,
    /// Keyed by year, with `"unknown"` for the sentinel.
    pub by_year: BTreeMap<String, usize>,
}

impl Manifest {
    pub fn compute(documents: &[Document]) -> Self {
        let mut manifest = Manifest::default();
        for doc in documents {
            *manifest
                .by_source
                .entry(doc.source.as_str().to_string())
                .or_default() += 1;
            *manifest
                .by_domain
                .entry(doc.domain.as_str().to_string())
                .or_default() += 1;
            let year = doc
                .year
                .map_or_else(|| "unknown".to_string(), |y| y.to_string());
            *manifest.by_year.entry(year).or_default() += 1;
        }
        manifest
    }
}

/// Documents in file order plus their recomputed counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    manifest: Manifest,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for doc in &documents {
            if doc.id.is_empty() {
                return Err(Error::InvalidArgument("document with empty id".into()));
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
        }
        let manifest = Manifest::compute(&documents);
        Ok(Corpus {
            documents,
            manifest,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Assigns domains by rule to every document whose label did not come
    /// from metadata. Returns how many documents each origin now covers.
    pub fn apply_domain_rules(&mut self, rules: &[DomainRule]) -> BTreeMap<String, usize> {
        for doc in &mut self.documents {
            if doc.domain_origin == DomainOrigin::Metadata {
                continue;
            }
            let (domain, origin) = match matching_rule(doc, rules) {
                Some(rule) => (rule.domain, DomainOrigin::Rules),
                None => (Domain::Other, DomainOrigin::Fallback),
            };
            doc.domain = domain;
            doc.domain_origin = origin;
        }
        self.manifest = Manifest::compute(&self.documents);
        let mut origins = BTreeMap::new();
        for doc in &self.documents {
            let key = serde_json::to_value(doc.domain_origin)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            *origins.entry(key).or_insert(0) += 1;
        }
        origins
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }
}

/// Parses and validates one JSONL body. Blank lines are skipped; a line that
/// is a metadata header (`{"_meta": ...}`) is skipped as well.
pub fn parse_jsonl(body: &str) -> Result<Corpus> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in body.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || crate::artifacts::is_jsonl_header(trimmed) {
            continue;
        }
        let doc = parse_line(trimmed).map_err(|message| Error::MalformedLine {
            line: line_no,
            message,
        })?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId(doc.id));
        }
        documents.push(doc);
    }
    if documents.is_empty() {
        return Err(Error::EmptyInput("corpus contains no documents".into()));
    }
    Corpus::new(documents)
}

fn parse_line(line: &str) -> std::result::Result<Document, String> {
    let raw: RawDocument = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = raw.id.trim().to_string();
    if id.is_empty() {
        return Err("empty id".into());
    }
    let year = match raw.year {
        None => None,
        Some(y) if (MIN_YEAR as i64..=MAX_YEAR as i64).contains(&y) => Some(y as i32),
        Some(y) => return Err(format!("year {y} outside [{MIN_YEAR}, {MAX_YEAR}]")),
    };
    let text = normalize(&raw.text);
    if text.is_empty() {
        return Err(format!("document {id} has empty text"));
    }
    let (domain, origin) = match raw.domain.as_deref().map(str::trim) {
        None | Some("") => (Domain::Other, raw.domain_origin.unwrap_or_default()),
        Some(label) => {
            let domain = label.parse::<Domain>().map_err(|e| e.to_string())?;
            (domain, raw.domain_origin.unwrap_or(DomainOrigin::Metadata))
        }
    };
    Ok(Document {
        id,
        title: normalize(&raw.title),
        year,
        venue: normalize(&raw.venue),
        subject: normalize(&raw.subject),
        domain,
        domain_origin: origin,
        source: raw.source,
        text,
    })
}

/// Reads a JSONL corpus from disk.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if body.trim().is_empty() {
        return Err(Error::EmptyInput(format!("{} is empty", path.display())));
    }
    parse_jsonl(&body)
}

/// Keyword rule: the domain applies when any keyword occurs in the title,
/// subject or venue, compared case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRule {
    pub domain: Domain,
    pub keywords: Vec<String>,
}

pub fn load_domain_rules(path: &Path) -> Result<Vec<DomainRule>> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rules: Vec<DomainRule> = serde_json::from_str(&body)?;
    if rules.is_empty() {
        return Err(Error::Config(format!("{}: no domain rules", path.display())));
    }
    Ok(rules)
}

/// Default keyword rules shipped with the tool.
pub fn default_domain_rules() -> Vec<DomainRule> {
    serde_json::from_str(include_str!("../data/domain_rules.json"))
        .expect("bundled domain rules are valid JSON")
}

fn matching_rule<'r>(doc: &Document, rules: &'r [DomainRule]) -> Option<&'r DomainRule> {
    let haystack = format!("{} {} {}", doc.title, doc.subject, doc.venue).to_lowercase();
    rules.iter().find(|rule| {
        rule.keywords
            .iter()
            .any(|kw| !kw.is_empty() && haystack.contains(&kw.to_lowercase()))
    })
}

/// First rule with a keyword hit wins; `Other` when none matches.
pub fn assign_domain(doc: &Document, rules: &[DomainRule]) -> Domain {
    matching_rule(doc, rules).map_or(Domain::Other, |rule| rule.domain)
}
