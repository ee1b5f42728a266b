//! Confusion matrices and the scalar scores derived from them: accuracy,
//! macro-averaged precision and recall, and Cohen's kappa. Also the
//! key=value and CSV exports of per-device, per-round scores.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

/// `K x K` counts; rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument("confusion matrix must be square".into()));
        }
        Ok(Self { k, counts: rows.concat() })
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.k + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.k..(truth + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks_exact(self.k.max(1))
    }

    fn nonempty_total(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::EmptyMatrix),
            n => Ok(n as f64),
        }
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ground-truth labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut m = ConfusionMatrix::new(k);
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= k || p >= k {
            return Err(Error::InvalidArgument(format!("label pair ({t}, {p}) outside 0..{k}")));
        }
        m.add(t, p);
    }
    Ok(m)
}

pub fn accuracy(m: &ConfusionMatrix) -> Result<f64> {
    Ok(m.trace() as f64 / m.nonempty_total()?)
}

/// An unweighted per-class mean. Classes whose denominator is zero count as
/// 0 and are listed in `undefined_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroAverage {
    pub value: f64,
    pub undefined_classes: Vec<usize>,
}

fn macro_average(m: &ConfusionMatrix, denom: impl Fn(usize) -> u64, what: &str) -> Result<MacroAverage> {
    m.nonempty_total()?;
    let mut sum = 0.0;
    let mut undefined_classes = Vec::new();
    for c in 0..m.k {
        match denom(c) {
            0 => undefined_classes.push(c),
            d => sum += m.get(c, c) as f64 / d as f64,
        }
    }
    if !undefined_classes.is_empty() {
        log::warn!("{what} undefined for classes {undefined_classes:?}; counted as 0");
    }
    Ok(MacroAverage { value: sum / m.k as f64, undefined_classes })
}

pub fn macro_precision_detailed(m: &ConfusionMatrix) -> Result<MacroAverage> {
    macro_average(m, |c| m.col_sum(c), "precision")
}

pub fn macro_recall_detailed(m: &ConfusionMatrix) -> Result<MacroAverage> {
    macro_average(m, |c| m.row_sum(c), "recall")
}

/// Mean over classes of `diag / column sum`.
pub fn macro_precision(m: &ConfusionMatrix) -> Result<f64> {
    macro_precision_detailed(m).map(|a| a.value)
}

/// Mean over classes of `diag / row sum`.
pub fn macro_recall(m: &ConfusionMatrix) -> Result<f64> {
    macro_recall_detailed(m).map(|a| a.value)
}

/// `(p_o - p_e) / (1 - p_e)` with chance agreement
/// `p_e = sum_c row_c * col_c / total^2`.
pub fn cohen_kappa(m: &ConfusionMatrix) -> Result<f64> {
    let n = m.nonempty_total()?;
    let p_o = m.trace() as f64 / n;
    let p_e = (0..m.k)
        .map(|c| m.row_sum(c) as f64 * m.col_sum(c) as f64)
        .sum::<f64>()
        / (n * n);
    if p_e == 1.0 {
        return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub kappa: f64,
}

impl MetricSummary {
    pub fn from_matrix(m: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            accuracy: accuracy(m)?,
            precision: macro_precision(m)?,
            recall: macro_recall(m)?,
            kappa: cohen_kappa(m)?,
        })
    }

    /// `key=value` lines, accuracy as a percentage with three decimals.
    pub fn to_kv(&self) -> String {
        format!(
            "accuracy_percent={}\nprecision={:.4}\nrecall={:.4}\nkappa={:.4}\n",
            percent_3dp(self.accuracy),
            self.precision,
            self.recall,
            self.kappa
        )
    }
}

/// `fraction` as a percentage rounded half-up to three decimals, e.g.
/// `0.965944` -> `"96.594"`.
pub fn percent_3dp(fraction: f64) -> String {
    let thousandths = (fraction * 100_000.0 + 0.5 + 1e-9).floor() as i64;
    format!("{}.{:03}", thousandths / 1000, thousandths % 1000)
}

/// Renders the matrix as tab-separated text: a header of prediction ids,
/// then one row per ground-truth class.
pub fn render_matrix(m: &ConfusionMatrix) -> String {
    let mut s = String::from("truth\\pred");
    for c in 0..m.k {
        write!(s, "\t{c}").unwrap();
    }
    s.push('\n');
    for (t, row) in m.rows().enumerate() {
        write!(s, "{t}").unwrap();
        for v in row {
            write!(s, "\t{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Inverse of [`render_matrix`]. Blank lines are ignored.
pub fn parse_matrix(text: &str) -> Result<ConfusionMatrix> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::Malformed("empty matrix text".into()))?;
    let k = header.split_whitespace().count().saturating_sub(1);
    let mut rows = Vec::with_capacity(k);
    for (t, line) in lines.enumerate() {
        let mut cells = line.split_whitespace();
        let id: usize = cells
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::Malformed(format!("row {t}: missing class id")))?;
        if id != t {
            return Err(Error::Malformed(format!("row {t} is labelled {id}")));
        }
        let row: Vec<u64> = cells
            .map(|c| c.parse().map_err(|_| Error::Malformed(format!("row {t}: bad count `{c}`"))))
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.len() != k {
        return Err(Error::Malformed(format!("{} rows for {k} columns", rows.len())));
    }
    ConfusionMatrix::from_rows(&rows)
        .map_err(|_| Error::Malformed("matrix rows have inconsistent widths".into()))
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_matrix(self))
    }
}

pub const ROUNDS_CSV_HEADER: &str = "device,round,accuracy,precision,recall,kappa,stop_reason";

/// One line of `rounds.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub device: String,
    pub round: u32,
    pub metrics: MetricSummary,
    pub stop_reason: String,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            self.device,
            self.round,
            self.metrics.accuracy,
            self.metrics.precision,
            self.metrics.recall,
            self.metrics.kappa,
            self.stop_reason
        )
    }
}

pub fn write_rounds_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(ROUNDS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

pub fn parse_rounds_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == ROUNDS_CSV_HEADER => {}
        Some(h) => return Err(Error::Malformed(format!("unexpected rounds.csv header `{h}`"))),
        None => return Err(Error::Malformed("rounds.csv is empty".into())),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 7 {
                return Err(Error::Malformed(format!("line {}: expected 7 fields", i + 2)));
            }
            // kappa may fall below zero for worse-than-chance predictions
            let num = |j: usize| -> Result<f64> {
                let lo = if j == 5 { -1.0 } else { 0.0 };
                let v: f64 = cells[j]
                    .parse()
                    .map_err(|_| Error::Malformed(format!("line {}: bad number `{}`", i + 2, cells[j])))?;
                if !(lo..=1.0).contains(&v) {
                    return Err(Error::Malformed(format!("line {}: {v} out of range", i + 2)));
                }
                Ok(v)
            };
            if cells[0].is_empty() {
                return Err(Error::Malformed(format!("line {}: empty device", i + 2)));
            }
            Ok(MetricsRow {
                device: cells[0].to_string(),
                round: cells[1]
                    .parse()
                    .map_err(|_| Error::Malformed(format!("line {}: bad round", i + 2)))?,
                metrics: MetricSummary {
                    accuracy: num(2)?,
                    precision: num(3)?,
                    recall: num(4)?,
                    kappa: num(5)?,
                },
                stop_reason: cells[6].to_string(),
            })
        })
        .collect()
}
