//! Sentence segmentation and pattern-based definition candidate extraction.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Domain, Source};
use crate::error::{Error, Result};
use crate::text::fold_key;

/// Tokens ending in a period that do not close a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "et al.", "fig.", "figs.", "vs.", "eq.", "cf.", "dr.", "ref.",
];

/// Byte range into the normalized document text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

fn is_closer(ch: char) -> bool {
    matches!(ch, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn ends_with_abbreviation(prefix: &str) -> bool {
    let lowered = prefix.to_lowercase();
    ABBREVIATIONS.iter().any(|abbr| {
        lowered.ends_with(abbr)
            && lowered[..lowered.len() - abbr.len()]
                .chars()
                .next_back()
                .is_none_or(|c| !c.is_alphanumeric())
    })
}

/// Splits normalized text into sentences. Boundaries fall after `.`, `?` or
/// `!` followed by whitespace or end of text (closing quotes and brackets
/// stay with the sentence), and at every line break. Returned spans are
/// trimmed, non-empty, ordered and non-overlapping.
pub fn split_sentences(text: &str) -> Vec<(String, Span)> {
    let mut sentences = Vec::new();
    let mut seg_start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, ch) = chars[i];
        let cut = match ch {
            '\n' => Some((pos, pos + 1)),
            '.' | '?' | '!' => {
                let mut j = i + 1;
                while j < chars.len() && is_closer(chars[j].1) {
                    j += 1;
                }
                let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
                let followed_by_break = chars.get(j).is_none_or(|&(_, c)| c.is_whitespace());
                if followed_by_break && !(ch == '.' && ends_with_abbreviation(&text[..=pos])) {
                    i = j.saturating_sub(1);
                    Some((end, end))
                } else {
                    None
                }
            }
            _ => None,
        };
        if let Some((seg_end, next_start)) = cut {
            push_trimmed(text, seg_start, seg_end, &mut sentences);
            seg_start = next_start;
        }
        i += 1;
    }
    push_trimmed(text, seg_start, text.len(), &mut sentences);
    sentences
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<(String, Span)>) {
    if start >= end {
        return;
    }
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if trimmed.is_empty() {
        return;
    }
    let s = start + lead;
    out.push((
        trimmed.to_string(),
        Span {
            start: s,
            end: s + trimmed.len(),
        },
    ));
}

/// Definition pattern: term, copula, optional marker, in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternTemplate {
    pub term: String,
    #[serde(default = "default_true")]
    pub plural: bool,
    #[serde(default = "default_copulas")]
    pub copulas: Vec<String>,
    /// An empty string permits the bare copula form ("X is ...").
    #[serde(default = "default_markers")]
    pub markers: Vec<String>,
    /// Additional raw regular expressions; a sentence matching one of them
    /// is a candidate with marker `"custom"`.
    #[serde(default)]
    pub extra_patterns: Vec<String>,
}

fn default_true() -> bool {
    true
}

fn default_copulas() -> Vec<String> {
    ["is", "are", "can be", "could be"]
        .map(String::from)
        .to_vec()
}

fn default_markers() -> Vec<String> {
    ["defined as", "described as", "characterized by", ""]
        .map(String::from)
        .to_vec()
}

impl PatternTemplate {
    pub fn new(term: impl Into<String>) -> Self {
        PatternTemplate {
            term: term.into(),
            plural: true,
            copulas: default_copulas(),
            markers: default_markers(),
            extra_patterns: Vec::new(),
        }
    }

    fn phrase_alternation(items: &[String]) -> String {
        let mut phrases: Vec<String> = items
            .iter()
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.split_whitespace()
                    .map(regex::escape)
                    .collect::<Vec<_>>()
                    .join(r"\s+")
            })
            .collect();
        // longest first so "can be" wins over a shorter prefix
        phrases.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        phrases.dedup();
        phrases.join("|")
    }

    /// Regular-expression text for the cross product of copulas and markers.
    /// A marker may also follow the term directly, without a copula.
    pub fn compiled(&self) -> Result<String> {
        let words: Vec<String> = self.term.split_whitespace().map(regex::escape).collect();
        if words.is_empty() {
            return Err(Error::InvalidArgument("pattern term is empty".into()));
        }
        let mut term = words.join(r"\s+");
        if self.plural {
            term.push_str("(?:s)?");
        }
        let copulas = Self::phrase_alternation(&self.copulas);
        if copulas.is_empty() {
            return Err(Error::InvalidArgument("pattern needs at least one copula".into()));
        }
        let markers = Self::phrase_alternation(&self.markers);
        let bare_allowed = self.markers.iter().any(|m| m.trim().is_empty());
        let after_copula = match (markers.is_empty(), bare_allowed) {
            (true, _) => String::new(),
            (false, true) => format!(r"(?:(?P<marker>{markers})\s+)?"),
            (false, false) => format!(r"(?P<marker>{markers})\s+"),
        };
        let without_copula = if markers.is_empty() {
            String::new()
        } else {
            format!(r"|(?P<lone>{markers})\s+")
        };
        Ok(format!(
            r"(?i)\b{term}\b\s+(?:(?:{copulas})\s+{after_copula}{without_copula})\S"
        ))
    }

    pub fn compile(&self) -> Result<CompiledPattern> {
        let main = Regex::new(&self.compiled()?)?;
        let extra = self
            .extra_patterns
            .iter()
            .map(|p| Regex::new(p))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let term_check = Regex::new(&format!(
            r"(?i){}",
            self.term
                .split_whitespace()
                .map(regex::escape)
                .collect::<Vec<_>>()
                .join(r"\s+")
        ))?;
        Ok(CompiledPattern {
            main,
            extra,
            term_check,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CompiledPattern {
    main: Regex,
    extra: Vec<Regex>,
    term_check: Regex,
}

/// Result of matching one sentence: the marker and where the definition
/// body begins (byte offset into the sentence).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternMatch {
    pub marker: String,
    pub tail_offset: usize,
}

impl CompiledPattern {
    pub fn match_sentence(&self, sentence: &str) -> Option<PatternMatch> {
        if let Some(caps) = self.main.captures(sentence) {
            let whole = caps.get(0).expect("group 0");
            let marker = caps
                .name("marker")
                .or_else(|| caps.name("lone"))
                .map(|m| m.as_str().split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
                .unwrap_or_default();
            // the match ends on the first character of the body
            let body_char = sentence[..whole.end()].chars().next_back().map_or(0, char::len_utf8);
            return Some(PatternMatch {
                marker,
                tail_offset: whole.end() - body_char,
            });
        }
        for re in &self.extra {
            if let Some(m) = re.find(sentence) {
                if self.term_check.is_match(sentence) {
                    return Some(PatternMatch {
                        marker: "custom".into(),
                        tail_offset: m.end(),
                    });
                }
            }
        }
        None
    }
}

/// One candidate definition sentence with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefinitionCandidate {
    pub id: String,
    pub doc_id: String,
    pub sentence: String,
    pub start: usize,
    pub end: usize,
    pub marker: String,
    pub year: Option<i32>,
    pub domain: Domain,
    #[serde(default = "default_source")]
    pub source: Source,
    /// Byte offset into `sentence` where the text after the marker begins.
    #[serde(default)]
    pub tail_offset: usize,
    /// Number of exact duplicates folded into this record.
    #[serde(default = "default_multiplicity")]
    pub multiplicity: usize,
}

fn default_source() -> Source {
    Source::Article
}

fn default_multiplicity() -> usize {
    1
}

impl DefinitionCandidate {
    pub fn span(&self) -> Span {
        Span {
            start: self.start,
            end: self.end,
        }
    }

    /// Definition body after the term, copula and marker.
    pub fn tail(&self) -> &str {
        self.sentence
            .get(self.tail_offset..)
            .unwrap_or(self.sentence.as_str())
    }
}

/// Whole sentences of `doc` matching the template, in text order.
pub fn extract_candidates(doc: &Document, pattern: &CompiledPattern) -> Vec<DefinitionCandidate> {
    split_sentences(&doc.text)
        .into_iter()
        .filter_map(|(sentence, span)| {
            let found = pattern.match_sentence(&sentence)?;
            Some(DefinitionCandidate {
                id: format!("{}:{}", doc.id, span.start),
                doc_id: doc.id.clone(),
                sentence,
                start: span.start,
                end: span.end,
                marker: found.marker,
                year: doc.year,
                domain: doc.domain,
                source: doc.source,
                tail_offset: found.tail_offset,
                multiplicity: 1,
            })
        })
        .collect()
}

/// Drops sentences identical after case folding and whitespace collapse,
/// keeping the earliest and accumulating multiplicity.
pub fn dedup_exact(cands: Vec<DefinitionCandidate>) -> Vec<DefinitionCandidate> {
    let mut first_at: HashMap<String, usize> = HashMap::new();
    let mut kept: Vec<DefinitionCandidate> = Vec::with_capacity(cands.len());
    for cand in cands {
        let key = fold_key(&cand.sentence);
        match first_at.get(&key) {
            Some(&idx) => kept[idx].multiplicity += cand.multiplicity,
            None => {
                first_at.insert(key, kept.len());
                kept.push(cand);
            }
        }
    }
    kept
}

fn parenthetical_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\([^()]*\b(?:1[89]|20)\d{2}[a-z]?\b[^()]*\)|\[\s*\d+(?:\s*[,\u{2013}-]\s*\d+)*\s*\]")
            .expect("valid citation regex")
    })
}

/// True when the sentence carries an inline citation such as "(Smith, 2020)"
/// or "[12]". Such sentences are kept verbatim; the count is reported.
pub fn has_parenthetical_citation(sentence: &str) -> bool {
    parenthetical_regex().is_match(sentence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DomainOrigin;

    fn doc(text: &str) -> Document {
        Document {
            id: "d".into(),
            title: String::new(),
            year: Some(2020),
            venue: String::new(),
            subject: String::new(),
            domain: Domain::Urban,
            domain_origin: DomainOrigin::Metadata,
            source: Source::Article,
            text: crate::text::normalize(text),
        }
    }

    fn texts(text: &str) -> Vec<String> {
        split_sentences(text).into_iter().map(|(s, _)| s).collect()
    }

    #[test]
    fn splits_on_terminators() {
        assert_eq!(texts("A is B. C is D."), vec!["A is B.", "C is D."]);
        assert_eq!(texts("See Fig. 3. It works."), vec!["See Fig. 3.", "It works."]);
        assert!(texts("").is_empty());
        assert_eq!(texts("Why? Because!\nNext line"), vec!["Why?", "Because!", "Next line"]);
        assert_eq!(
            texts("Models, e.g. BIM, i.e. data. Done"),
            vec!["Models, e.g. BIM, i.e. data.", "Done"]
        );
        assert_eq!(texts("Smith et al. showed 3.5 m. Ok."), vec!["Smith et al. showed 3.5 m.", "Ok."]);
        assert_eq!(texts("He said \"stop.\" Then left."), vec!["He said \"stop.\"", "Then left."]);
    }

    #[test]
    fn spans_slice_back() {
        let text = "  First one.  Second (x). \nThird";
        for (s, span) in split_sentences(text) {
            assert_eq!(&text[span.start..span.end], s);
        }
    }

    #[test]
    fn canonical_patterns() {
        let pattern = PatternTemplate::new("digital twin").compile().unwrap();
        let c = extract_candidates(
            &doc("A digital twin is defined as a virtual replica of a physical asset."),
            &pattern,
        );
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].marker, "defined as");
        assert_eq!(c[0].tail(), "a virtual replica of a physical asset.");

        let c = extract_candidates(
            &doc("Digital twins are described as living models that adapt continuously."),
            &pattern,
        );
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].marker, "described as");

        let c = extract_candidates(&doc("We build a digital twin platform for bridges."), &pattern);
        assert!(c.is_empty());

        let c = extract_candidates(&doc("Digital twin is a virtual model. Other text."), &pattern);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].marker, "");
        assert_eq!(c[0].sentence, "Digital twin is a virtual model.");

        let c = extract_candidates(&doc("A digital twin can be characterized by tight coupling."), &pattern);
        assert_eq!(c[0].marker, "characterized by");
        let c = extract_candidates(&doc("Digital twinning is a process of mirroring."), &pattern);
        assert!(c.is_empty());
    }

    #[test]
    fn marker_required_without_empty_marker() {
        let mut t = PatternTemplate::new("digital twin");
        t.markers = vec!["defined as".into()];
        let p = t.compile().unwrap();
        assert!(p.match_sentence("A digital twin is a model.").is_none());
        assert!(p.match_sentence("A digital twin is defined as a model.").is_some());
        assert!(p.match_sentence("The digital twin defined as a model here.").is_some());
    }

    #[test]
    fn extra_patterns_require_term() {
        let mut t = PatternTemplate::new("digital twin");
        t.extra_patterns = vec![r"(?i)\brefers to\b".into()];
        let p = t.compile().unwrap();
        assert_eq!(
            p.match_sentence("The digital twin concept refers to a mirror.").unwrap().marker,
            "custom"
        );
        assert!(p.match_sentence("It refers to a mirror.").is_none());
    }

    #[test]
    fn case_insensitive_matching() {
        let pattern = PatternTemplate::new("digital twin").compile().unwrap();
        let text = "A digital twin is defined as a virtual replica. A twin is not. Digital twins are models of cities.";
        let lower = extract_candidates(&doc(text), &pattern).len();
        let upper = extract_candidates(&doc(&text.to_uppercase()), &pattern).len();
        assert_eq!(lower, 2);
        assert_eq!(lower, upper);
    }

    #[test]
    fn exact_dedup() {
        let pattern = PatternTemplate::new("digital twin").compile().unwrap();
        let mut a = extract_candidates(&doc("Digital twin is a virtual replica of things."), &pattern);
        let mut d2 = doc("DIGITAL twin is  a virtual replica of things.");
        d2.id = "e".into();
        a.extend(extract_candidates(&d2, &pattern));
        let mut d3 = doc("Digital twin is a virtual replica of objects.");
        d3.id = "f".into();
        a.extend(extract_candidates(&d3, &pattern));
        let out = dedup_exact(a);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].doc_id, "d");
        assert_eq!(out[0].multiplicity, 2);
        assert_eq!(out[1].multiplicity, 1);
    }

    #[test]
    fn citation_detection() {
        assert!(has_parenthetical_citation("DT is X (Grieves, 2014)."));
        assert!(has_parenthetical_citation("DT is X [3, 4]."));
        assert!(!has_parenthetical_citation("DT is X (a model)."));
    }
}
