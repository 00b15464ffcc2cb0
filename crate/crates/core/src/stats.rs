//! Chi-square test of independence, standardized residuals, residual
//! correlation and the two-group component partition.

use serde::{Deserialize, Serialize};

use crate::clustering::{agglomerate, cut_tree, Linkage, LinkageTree};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Observed component by domain counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub observed: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(rows: Vec<String>, cols: Vec<String>, observed: Vec<Vec<u64>>) -> Result<Self> {
        if rows.len() < 2 || cols.len() < 2 {
            return Err(Error::DegenerateTable(format!(
                "need at least 2x2, got {}x{}",
                rows.len(),
                cols.len()
            )));
        }
        if observed.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: observed.len(),
            });
        }
        if let Some(bad) = observed.iter().find(|r| r.len() != cols.len()) {
            return Err(Error::DimensionMismatch {
                expected: cols.len(),
                found: bad.len(),
            });
        }
        let table = ContingencyTable { rows, cols, observed };
        if table.grand_total() == 0 {
            return Err(Error::DegenerateTable("table total is zero".into()));
        }
        Ok(table)
    }

    /// Unlabelled table, rows `r0..` and columns `c0..`.
    pub fn from_counts(observed: Vec<Vec<u64>>) -> Result<Self> {
        let rows = (0..observed.len()).map(|i| format!("r{i}")).collect();
        let cols = (0..observed.first().map_or(0, Vec::len)).map(|j| format!("c{j}")).collect();
        ContingencyTable::new(rows, cols, observed)
    }

    pub fn grand_total(&self) -> u64 {
        self.observed.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.observed.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.cols.len())
            .map(|j| self.observed.iter().map(|r| r[j]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// Adds 0.5 to every zero observed cell.
    #[default]
    AddHalfZeroCells,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult<T: Scalar> {
    pub statistic: T,
    pub dof: usize,
    pub p_value: T,
    /// Observed counts the statistic was computed on (after smoothing).
    pub observed: Vec<Vec<T>>,
    pub expected: Vec<Vec<T>>,
    /// `(row, col)` of every smoothed cell.
    pub adjusted_cells: Vec<(usize, usize)>,
    pub smoothing: Smoothing,
}

/// Expected counts `row_i * col_j / N`.
pub fn expected_counts<T: Scalar>(observed: &[Vec<T>]) -> Vec<Vec<T>> {
    let cols = observed.first().map_or(0, Vec::len);
    let row_sums: Vec<T> = observed.iter().map(|r| r.iter().copied().sum()).collect();
    let col_sums: Vec<T> = (0..cols).map(|j| observed.iter().map(|r| r[j]).sum()).collect();
    let total: T = row_sums.iter().copied().sum();
    row_sums
        .iter()
        .map(|&r| col_sums.iter().map(|&c| r * c / total).collect())
        .collect()
}

pub fn chi_square<T: Scalar>(table: &ContingencyTable, smoothing: Smoothing) -> Result<ChiSquareResult<T>> {
    let mut observed: Vec<Vec<T>> = table
        .observed
        .iter()
        .map(|r| r.iter().map(|&c| T::of(c as f64)).collect())
        .collect();
    let mut adjusted_cells = Vec::new();
    match smoothing {
        Smoothing::None => {
            if let Some(i) = table.row_sums().iter().position(|&s| s == 0) {
                return Err(Error::DegenerateTable(format!("row {:?} is all zero", table.rows[i])));
            }
            if let Some(j) = table.col_sums().iter().position(|&s| s == 0) {
                return Err(Error::DegenerateTable(format!("column {:?} is all zero", table.cols[j])));
            }
        }
        Smoothing::AddHalfZeroCells => {
            for (i, row) in observed.iter_mut().enumerate() {
                for (j, cell) in row.iter_mut().enumerate() {
                    if table.observed[i][j] == 0 {
                        *cell = T::of(0.5);
                        adjusted_cells.push((i, j));
                    }
                }
            }
        }
    }
    let expected = expected_counts(&observed);
    let statistic = observed
        .iter()
        .flatten()
        .zip(expected.iter().flatten())
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let dof = (table.rows.len() - 1) * (table.cols.len() - 1);
    let p_value = chi_square_sf(statistic, dof);
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value,
        observed,
        expected,
        adjusted_cells,
        smoothing,
    })
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf<T: Scalar>(statistic: T, dof: usize) -> T {
    let x = statistic.as_f64();
    if x <= 0.0 {
        return T::one();
    }
    T::of(regularized_gamma_q(dof as f64 / 2.0, x / 2.0))
}

const EPS: f64 = 1e-12;
const MAX_TERMS: usize = 100_000;

pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`: a series for `x < a + 1`,
/// otherwise a Lentz continued fraction.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let prefactor = (-x + a * x.ln() - ln_gamma(a)).exp();
    if x < a + 1.0 {
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..MAX_TERMS {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (1.0 - sum * prefactor).clamp(0.0, 1.0)
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_TERMS {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        (prefactor * h).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualKind {
    /// `(O - E) / sqrt(E)`
    #[default]
    Pearson,
    /// `(O - E) / sqrt(E (1 - row/N) (1 - col/N))`
    Adjusted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMatrix<T: Scalar> {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<T>>,
    /// `|R| > 2`
    pub mask: Vec<Vec<bool>>,
    pub kind: ResidualKind,
}

pub const SIGNIFICANCE: f64 = 2.0;

impl<T: Scalar> ResidualMatrix<T> {
    pub fn get(&self, row: &str, col: &str) -> Option<T> {
        let i = self.rows.iter().position(|r| r == row)?;
        let j = self.cols.iter().position(|c| c == col)?;
        Some(self.values[i][j])
    }

    /// Rows of one column by residual, highest first; ties keep row order.
    pub fn ranking(&self, col: usize) -> Vec<(String, T)> {
        let mut out: Vec<(String, T)> = self
            .rows
            .iter()
            .zip(&self.values)
            .map(|(r, v)| (r.clone(), v[col]))
            .collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        out
    }
}

pub fn residuals<T: Scalar>(
    table: &ContingencyTable,
    result: &ChiSquareResult<T>,
    kind: ResidualKind,
) -> Result<ResidualMatrix<T>> {
    let total: T = result.observed.iter().flatten().copied().sum();
    let row_sums: Vec<T> = result.observed.iter().map(|r| r.iter().copied().sum()).collect();
    let cols = table.cols.len();
    let col_sums: Vec<T> = (0..cols).map(|j| result.observed.iter().map(|r| r[j]).sum()).collect();
    let mut values = Vec::with_capacity(table.rows.len());
    for (i, (obs, exp)) in result.observed.iter().zip(&result.expected).enumerate() {
        let mut row = Vec::with_capacity(cols);
        for j in 0..cols {
            let e = exp[j];
            if e <= T::zero() {
                return Err(Error::DegenerateTable(format!(
                    "expected count zero at ({:?}, {:?})",
                    table.rows[i], table.cols[j]
                )));
            }
            let scale = match kind {
                ResidualKind::Pearson => e,
                ResidualKind::Adjusted => {
                    e * (T::one() - row_sums[i] / total) * (T::one() - col_sums[j] / total)
                }
            };
            row.push(if scale > T::zero() {
                (obs[j] - e) / scale.sqrt()
            } else {
                T::zero()
            });
        }
        values.push(row);
    }
    let threshold = T::of(SIGNIFICANCE);
    let mask = values
        .iter()
        .map(|r| r.iter().map(|v| v.abs() > threshold).collect())
        .collect();
    Ok(ResidualMatrix {
        rows: table.rows.clone(),
        cols: table.cols.clone(),
        values,
        mask,
        kind,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix<T: Scalar> {
    pub labels: Vec<String>,
    pub values: Vec<Vec<T>>,
    /// Rows with no variance; correlated 0 with everything else.
    pub zero_variance: Vec<String>,
}

/// Pearson correlation between the rows of `r`.
pub fn residual_correlation<T: Scalar>(r: &ResidualMatrix<T>) -> Result<CorrelationMatrix<T>> {
    row_correlation(&r.rows, &r.values)
}

pub fn row_correlation<T: Scalar>(labels: &[String], rows: &[Vec<T>]) -> Result<CorrelationMatrix<T>> {
    let cols = rows.first().map_or(0, Vec::len);
    if cols < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two columns".into()));
    }
    let n = T::of_usize(cols);
    let centered: Vec<Vec<T>> = rows
        .iter()
        .map(|r| {
            let mean = r.iter().copied().sum::<T>() / n;
            r.iter().map(|&v| v - mean).collect()
        })
        .collect();
    let spread: Vec<T> = centered
        .iter()
        .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt())
        .collect();
    let flat: Vec<bool> = rows
        .iter()
        .zip(&spread)
        .map(|(r, &s)| {
            let magnitude = r.iter().fold(T::one(), |m, v| m.max(v.abs()));
            s <= T::of(1e-12) * magnitude
        })
        .collect();
    let k = rows.len();
    let mut values = vec![vec![T::zero(); k]; k];
    for i in 0..k {
        values[i][i] = T::one();
        for j in i + 1..k {
            let v = if flat[i] || flat[j] {
                T::zero()
            } else {
                let dot: T = centered[i].iter().zip(&centered[j]).map(|(&a, &b)| a * b).sum();
                (dot / (spread[i] * spread[j])).max(-T::one()).min(T::one())
            };
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(CorrelationMatrix {
        labels: labels.to_vec(),
        values,
        zero_variance: labels
            .iter()
            .zip(&flat)
            .filter(|(_, &f)| f)
            .map(|(l, _)| l.clone())
            .collect(),
    })
}

pub const HPRT: &str = "HPRT";
pub const LTDS: &str = "LTDS";
pub const DEFAULT_ANCHORS: [&str; 2] = ["Real-time data", "HPC"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentGroup {
    pub label: String,
    /// Sorted by name.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPartition<T: Scalar> {
    pub groups: Vec<ComponentGroup>,
    /// Built over components sorted by name.
    pub tree: LinkageTree<T>,
}

/// Average-linkage clustering on `1 - corr`, cut into `groups`.
///
/// With two groups, the one whose members correlate more strongly on
/// average with `anchors` is labelled HPRT and the other LTDS; otherwise
/// groups are labelled `group_1`, `group_2`, ... by their first member.
pub fn partition_components<T: Scalar>(
    corr: &CorrelationMatrix<T>,
    groups: usize,
    anchors: &[&str],
) -> Result<ComponentPartition<T>> {
    // sorting by name makes the result independent of input order
    let mut order: Vec<usize> = (0..corr.labels.len()).collect();
    order.sort_by(|&a, &b| corr.labels[a].cmp(&corr.labels[b]));
    let labels: Vec<String> = order.iter().map(|&i| corr.labels[i].clone()).collect();
    let dissim: Vec<Vec<T>> = order
        .iter()
        .map(|&i| {
            order
                .iter()
                .map(|&j| {
                    if i == j {
                        T::zero()
                    } else {
                        let c = (corr.values[i][j] + corr.values[j][i]) / T::of(2.0);
                        (T::one() - c).max(T::zero()).min(T::of(2.0))
                    }
                })
                .collect()
        })
        .collect();
    let tree = agglomerate(&dissim, Linkage::Average, Some(labels.clone()))?;
    let cut = cut_tree(&tree, groups)?;
    let mut named: Vec<Vec<String>> = cut
        .iter()
        .map(|g| g.iter().map(|&leaf| labels[leaf].clone()).collect())
        .collect();
    named.sort();

    let anchor_rows: Vec<usize> = anchors
        .iter()
        .filter_map(|a| corr.labels.iter().position(|l| l == a))
        .collect();
    let affinity = |members: &[String]| -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for m in members {
            let i = corr.labels.iter().position(|l| l == m).expect("member label");
            for &a in &anchor_rows {
                if a != i {
                    sum += corr.values[i][a].as_f64();
                    count += 1;
                }
            }
        }
        if count == 0 {
            f64::NEG_INFINITY
        } else {
            sum / count as f64
        }
    };
    let out = if named.len() == 2 && !anchor_rows.is_empty() {
        let (first, second) = (affinity(&named[0]), affinity(&named[1]));
        let hprt = usize::from(second > first);
        let mut out: Vec<ComponentGroup> = Vec::new();
        out.push(ComponentGroup {
            label: HPRT.into(),
            members: named[hprt].clone(),
        });
        out.push(ComponentGroup {
            label: LTDS.into(),
            members: named[1 - hprt].clone(),
        });
        out
    } else {
        named
            .into_iter()
            .enumerate()
            .map(|(i, members)| ComponentGroup {
                label: format!("group_{}", i + 1),
                members,
            })
            .collect()
    };
    Ok(ComponentPartition { groups: out, tree })
}
