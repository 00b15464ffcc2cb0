//! Final report: a machine-readable summary and a plain-text digest built
//! from a completed run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifacts::{self, ArtifactMeta};
use crate::error::{Error, Result};
use crate::pipeline::{
    ChiSquareReport, FunnelCounts, GroupsReport, RunManifest, DIR_COMPONENTS, DIR_REPORT, DIR_STATS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermCount {
    pub term: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub significant: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainTop {
    pub domain: String,
    pub component: String,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub term: String,
    pub funnel: FunnelCounts,
    /// scope -> window length -> top entries
    pub top_terms: BTreeMap<String, BTreeMap<usize, Vec<TermCount>>>,
    pub chi_square: ChiSquareReport,
    pub residual_heatmap: Option<Heatmap>,
    pub per_domain_top: Vec<DomainTop>,
    /// component -> (year, count) for years with a nonzero count
    pub temporal: BTreeMap<String, Vec<(i32, usize)>>,
    pub groups: Option<GroupsReport>,
}

pub const TOP_N: usize = 20;

fn read_frequencies(path: &Path, n: usize, out: &mut BTreeMap<String, BTreeMap<usize, Vec<TermCount>>>) -> Result<()> {
    let (_, rows) = artifacts::read_csv(path)?;
    for row in rows {
        let [scope, term, count] = row.as_slice() else {
            return Err(Error::MalformedLine {
                line: 0,
                message: format!("{}: expected scope,term,count", path.display()),
            });
        };
        let count = count.parse().map_err(|_| Error::MalformedLine {
            line: 0,
            message: format!("{}: bad count {count:?}", path.display()),
        })?;
        let list = out.entry(scope.clone()).or_default().entry(n).or_default();
        if list.len() < TOP_N {
            list.push(TermCount {
                term: term.clone(),
                count,
            });
        }
    }
    for scope in ["definitions", "survey"] {
        out.entry(scope.to_string()).or_default().entry(n).or_default();
    }
    Ok(())
}

fn parse_f64(v: &str, path: &Path) -> Result<f64> {
    v.parse().map_err(|_| Error::MalformedLine {
        line: 0,
        message: format!("{}: bad number {v:?}", path.display()),
    })
}

fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let (header, rows) = artifacts::read_csv(path)?;
    let mut names = Vec::new();
    let mut values = Vec::new();
    for row in rows {
        names.push(row[0].clone());
        values.push(row[1..].iter().map(|v| parse_f64(v, path)).collect::<Result<Vec<_>>>()?);
    }
    Ok((names, header[1..].to_vec(), values))
}

/// Assembles the report from the artifacts of a finished run.
pub fn build_report(out: &Path, manifest: &RunManifest) -> Result<Report> {
    let comp = out.join(DIR_COMPONENTS);
    let stats = out.join(DIR_STATS);
    let mut top_terms = BTreeMap::new();
    read_frequencies(&comp.join("freq_unigram.csv"), 1, &mut top_terms)?;
    for n in 2..=5 {
        let path = comp.join(format!("freq_ngram_{n}.csv"));
        if path.exists() {
            read_frequencies(&path, n, &mut top_terms)?;
        }
    }
    let temporal_path = comp.join("temporal.csv");
    let (_, temporal_rows) = artifacts::read_csv(&temporal_path)?;
    let mut temporal: BTreeMap<String, Vec<(i32, usize)>> = BTreeMap::new();
    for row in temporal_rows {
        let year: i32 = row[1].parse().map_err(|_| Error::MalformedLine {
            line: 0,
            message: format!("{}: bad year {:?}", temporal_path.display(), row[1]),
        })?;
        let count: usize = row[2].parse().map_err(|_| Error::MalformedLine {
            line: 0,
            message: format!("{}: bad count {:?}", temporal_path.display(), row[2]),
        })?;
        if count > 0 {
            temporal.entry(row[0].clone()).or_default().push((year, count));
        }
    }
    let chi_square: ChiSquareReport = artifacts::read_json(&stats.join("chisq.json"))?;
    let (residual_heatmap, per_domain_top, groups) = if chi_square.is_ok() {
        let (rows, cols, values) = read_matrix(&stats.join("residuals.csv"))?;
        let significant = values
            .iter()
            .map(|r| r.iter().map(|v| v.abs() > crate::stats::SIGNIFICANCE).collect())
            .collect();
        let mut tops = Vec::new();
        for (j, col) in cols.iter().enumerate() {
            // first row wins ties
            let mut best: Option<(usize, f64)> = None;
            for (i, row) in values.iter().enumerate() {
                if best.is_none_or(|(_, b)| row[j] > b) {
                    best = Some((i, row[j]));
                }
            }
            if let Some((i, v)) = best {
                tops.push(DomainTop {
                    domain: col.clone(),
                    component: rows[i].clone(),
                    residual: v,
                });
            }
        }
        let groups: GroupsReport = artifacts::read_json(&stats.join("groups.json"))?;
        (
            Some(Heatmap {
                rows,
                cols,
                values,
                significant,
            }),
            tops,
            Some(groups),
        )
    } else {
        (None, Vec::new(), None)
    };
    Ok(Report {
        term: manifest.term.clone(),
        funnel: manifest.counts.clone(),
        top_terms,
        chi_square,
        residual_heatmap,
        per_domain_top,
        temporal,
        groups,
    })
}

pub fn render_digest(report: &Report) -> String {
    let mut s = String::new();
    let f = &report.funnel;
    let _ = writeln!(s, "Definition mining digest for \"{}\"", report.term);
    let _ = writeln!(s);
    let _ = writeln!(s, "Funnel");
    for (label, v) in [
        ("documents", f.documents),
        ("articles", f.articles),
        ("survey responses", f.survey_documents),
        ("matched sentences", f.matched_sentences),
        ("candidates", f.candidates),
        ("kept after filtering", f.kept),
        ("final clusters", f.clusters),
        ("definitions", f.survivors),
        ("tagged definitions", f.tagged_records),
        ("component tags", f.tags),
    ] {
        let _ = writeln!(s, "  {label:<22}{v:>8}");
    }
    if f.survivors == 0 {
        let _ = writeln!(s);
        let _ = writeln!(s, "no definitions survived");
    }
    for (scope, by_n) in &report.top_terms {
        for (n, terms) in by_n {
            let kind = match n {
                1 => "words".to_string(),
                2 => "bigrams".to_string(),
                n => format!("{n}-grams"),
            };
            let _ = writeln!(s);
            let _ = writeln!(s, "Top {kind} ({scope})");
            if terms.is_empty() {
                let _ = writeln!(s, "  (none)");
            }
            for (rank, t) in terms.iter().enumerate() {
                let _ = writeln!(s, "  {:>2}. {:<32}{:>6}", rank + 1, t.term, t.count);
            }
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Chi-square test");
    let chi = &report.chi_square;
    match (chi.statistic, chi.dof, chi.p_value) {
        (Some(x), Some(dof), Some(p)) if chi.is_ok() => {
            let _ = writeln!(s, "  statistic {x:.4}, dof {dof}, p {p:.4e}");
            let _ = writeln!(s, "  smoothed cells: {}", chi.smoothed_cells.len());
        }
        _ => {
            let _ = writeln!(s, "  skipped: {}", chi.reason.as_deref().unwrap_or("unknown reason"));
        }
    }
    if let Some(h) = &report.residual_heatmap {
        let _ = writeln!(s);
        let _ = writeln!(s, "Significant residuals (|R| > 2)");
        let mut any = false;
        for (i, row) in h.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if h.significant[i][j] {
                    any = true;
                    let _ = writeln!(s, "  {:<36}{:<16}{:>+8.3}", h.rows[i], h.cols[j], v);
                }
            }
        }
        if !any {
            let _ = writeln!(s, "  (none)");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Most over-represented component per domain");
        for t in &report.per_domain_top {
            let _ = writeln!(s, "  {:<16}{:<36}{:>+8.3}", t.domain, t.component, t.residual);
        }
    }
    if let Some(g) = &report.groups {
        let _ = writeln!(s);
        let _ = writeln!(s, "Residual correlation groups");
        for group in &g.groups {
            let _ = writeln!(s, "  {}: {}", group.label, group.members.join(", "));
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Dated definitions per component");
    if report.temporal.is_empty() {
        let _ = writeln!(s, "  (none)");
    }
    for (component, years) in &report.temporal {
        let cells: Vec<String> = years.iter().map(|(y, c)| format!("{y}:{c}")).collect();
        let _ = writeln!(s, "  {component}: {}", cells.join(" "));
    }
    s
}

/// Writes `09_report/report.json` and `09_report/digest.txt`.
pub fn emit_report(out: &Path, manifest: &RunManifest) -> Result<Report> {
    let report = build_report(out, manifest)?;
    let meta = ArtifactMeta::new(manifest.config_hash.clone(), manifest.seed);
    let dir = out.join(DIR_REPORT);
    artifacts::write_json(&dir.join("report.json"), &meta, &report)?;
    artifacts::write_text(&dir.join("digest.txt"), &meta, &render_digest(&report))?;
    Ok(report)
}
