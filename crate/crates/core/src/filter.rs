//! Incomplete-definition filtering: deterministic heuristics plus an
//! optional external classifier with heuristic fallback.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::endpoint::ClassifierEndpoint;
use crate::error::{Error, Result};
use crate::extract::DefinitionCandidate;
use crate::vector_space::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Completeness {
    Complete,
    Incomplete,
}

impl Completeness {
    pub fn as_str(self) -> &'static str {
        match self {
            Completeness::Complete => "complete",
            Completeness::Incomplete => "incomplete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub candidate_id: String,
    pub label: Completeness,
    /// Heuristic name, `"external"` or `"fallback"`.
    pub rule: String,
    pub confidence: f64,
}

pub const RULE_PASSED: &str = "passed";
pub const RULE_BUZZ: &str = "buzz_phrase";
pub const RULE_NO_CONTENT: &str = "no_content";
pub const RULE_SHORT: &str = "short_tail";
pub const RULE_EXTERNAL: &str = "external";
pub const RULE_FALLBACK: &str = "fallback";

/// Heuristic configuration, shipped as `filter_rules.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRules {
    /// Minimum number of content tokens after the marker.
    pub min_content_tokens: usize,
    /// Phrases that mark slogan-like statements, matched on word boundaries.
    pub buzz_phrases: Vec<String>,
}

impl Default for FilterRules {
    fn default() -> Self {
        serde_json::from_str(include_str!("../data/filter_rules.json"))
            .expect("bundled filter rules are valid JSON")
    }
}

impl FilterRules {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }

    fn buzz_hit(&self, tail: &str) -> Option<&str> {
        let tail_words = word_seq(tail);
        self.buzz_phrases.iter().map(String::as_str).find(|phrase| {
            let words = word_seq(phrase);
            !words.is_empty() && tail_words.windows(words.len()).any(|w| w == words.as_slice())
        })
    }
}

fn word_seq(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Labels a candidate incomplete when its tail carries a buzz phrase, has no
/// content token at all, or has fewer than `min_content_tokens` of them.
pub fn heuristic_filter(c: &DefinitionCandidate, rules: &FilterRules) -> FilterVerdict {
    let tail = c.tail();
    let content = Tokenizer::default().tokenize(tail).len();
    let rule = if rules.buzz_hit(tail).is_some() {
        RULE_BUZZ
    } else if content == 0 {
        RULE_NO_CONTENT
    } else if content < rules.min_content_tokens {
        RULE_SHORT
    } else {
        RULE_PASSED
    };
    FilterVerdict {
        candidate_id: c.id.clone(),
        label: if rule == RULE_PASSED {
            Completeness::Complete
        } else {
            Completeness::Incomplete
        },
        rule: rule.to_string(),
        confidence: 1.0,
    }
}

#[derive(Debug, Deserialize)]
struct ClassifierResponse {
    label: Completeness,
    confidence: f64,
}

/// Asks the external classifier; any failure yields the heuristic verdict
/// tagged `"fallback"` unless the endpoint forbids fallback.
pub fn classify_external(
    c: &DefinitionCandidate,
    endpoint: &ClassifierEndpoint,
    rules: &FilterRules,
) -> Result<FilterVerdict> {
    if !endpoint.enabled {
        return Ok(heuristic_filter(c, rules));
    }
    let body = json!({
        "text": c.sentence,
        "task": "definition_completeness",
        "prompt": endpoint.render_prompt(&c.sentence),
    });
    let outcome = endpoint.post_json(&body).and_then(|value| {
        let resp: ClassifierResponse = serde_json::from_value(value)
            .map_err(|e| Error::Endpoint(format!("unparsable classifier body: {e}")))?;
        if !(0.0..=1.0).contains(&resp.confidence) {
            return Err(Error::Endpoint(format!("confidence {} outside [0, 1]", resp.confidence)));
        }
        Ok(resp)
    });
    match outcome {
        Ok(resp) => Ok(FilterVerdict {
            candidate_id: c.id.clone(),
            label: resp.label,
            rule: RULE_EXTERNAL.into(),
            confidence: resp.confidence,
        }),
        Err(e) if endpoint.allow_fallback => {
            warn!("classifier failed for {}: {e}; using heuristics", c.id);
            let mut verdict = heuristic_filter(c, rules);
            verdict.rule = RULE_FALLBACK.into();
            Ok(verdict)
        }
        Err(e) => Err(e),
    }
}

/// One verdict per candidate, in candidate order. External calls run on up
/// to `max_in_flight` threads.
pub fn classify_all(
    cands: &[DefinitionCandidate],
    endpoint: &ClassifierEndpoint,
    rules: &FilterRules,
) -> Result<Vec<FilterVerdict>> {
    if !endpoint.enabled {
        return Ok(cands.iter().map(|c| heuristic_filter(c, rules)).collect());
    }
    let workers = endpoint.max_in_flight.max(1);
    let chunk = cands.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = cands
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|c| classify_external(c, endpoint, rules))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut verdicts = Vec::with_capacity(cands.len());
        for handle in handles {
            verdicts.extend(handle.join().expect("classifier worker panicked")?);
        }
        Ok(verdicts)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<DefinitionCandidate>,
    pub dropped: Vec<DefinitionCandidate>,
    /// Count per `label:rule`; sums to the number of candidates.
    pub audit: BTreeMap<String, usize>,
}

/// Partitions candidates by verdict, preserving order on both sides.
pub fn apply_filter(cands: Vec<DefinitionCandidate>, verdicts: &[FilterVerdict]) -> Result<FilterOutcome> {
    let mut by_id: HashMap<&str, &FilterVerdict> = HashMap::with_capacity(verdicts.len());
    for v in verdicts {
        if by_id.insert(v.candidate_id.as_str(), v).is_some() {
            return Err(Error::DuplicateVerdict(v.candidate_id.clone()));
        }
    }
    let mut outcome = FilterOutcome {
        kept: Vec::new(),
        dropped: Vec::new(),
        audit: BTreeMap::new(),
    };
    for c in cands {
        let verdict = by_id
            .get(c.id.as_str())
            .ok_or_else(|| Error::MissingVerdict(c.id.clone()))?;
        *outcome
            .audit
            .entry(format!("{}:{}", verdict.label.as_str(), verdict.rule))
            .or_default() += 1;
        match verdict.label {
            Completeness::Complete => outcome.kept.push(c),
            Completeness::Incomplete => outcome.dropped.push(c),
        }
    }
    Ok(outcome)
}
