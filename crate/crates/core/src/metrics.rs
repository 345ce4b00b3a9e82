//! Calibration and OOD-detection metrics. Every score is "higher means more
//! in-distribution"; in-distribution is the positive class.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_ECE_BINS: usize = 15;

/// Which predictive entries count towards confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceMode {
    MaxSoftmax,
    /// Only the first `c` entries; the trailing none class is excluded.
    NcAware(usize),
}

impl ConfidenceMode {
    fn width(self, row: &[f64]) -> usize {
        match self {
            ConfidenceMode::MaxSoftmax => row.len(),
            ConfidenceMode::NcAware(c) => c.min(row.len()),
        }
    }
}

pub fn confidence(row: &[f64], mode: ConfidenceMode) -> f64 {
    row[..mode.width(row)]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64], mode: ConfidenceMode) -> usize {
    let mut best = 0;
    for (k, &v) in row[..mode.width(row)].iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn confidences(probs: &Matrix, mode: ConfidenceMode) -> Vec<f64> {
    probs.iter_rows().map(|r| confidence(r, mode)).collect()
}

fn check_labels(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != probs.rows() {
        return Err(Error::usage(format!(
            "{} labels for {} predictions",
            labels.len(),
            probs.rows()
        )));
    }
    if probs.rows() == 0 {
        return Err(Error::usage("no predictions to score"));
    }
    Ok(())
}

pub fn accuracy(probs: &Matrix, labels: &[usize], mode: ConfidenceMode) -> Result<f64> {
    check_labels(probs, labels)?;
    let correct = probs
        .iter_rows()
        .zip(labels)
        .filter(|(r, &y)| argmax(r, mode) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// One reliability-diagram bin `(lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub confidence_sum: f64,
    pub correct: usize,
}

impl BinStat {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count as f64
    }

    pub fn mean_confidence(&self) -> f64 {
        self.confidence_sum / self.count as f64
    }
}

/// Upper edge `(b+1)/n`; confidences land in the first bin whose upper edge they do not exceed.
fn bin_of(conf: f64, n_bins: usize) -> usize {
    (0..n_bins)
        .find(|&b| conf <= (b + 1) as f64 / n_bins as f64)
        .unwrap_or(n_bins - 1)
}

/// Equal-width bins over (0, 1]; confidence 0 joins the first bin.
pub fn reliability_bins(
    probs: &Matrix,
    labels: &[usize],
    mode: ConfidenceMode,
    n_bins: usize,
) -> Result<Vec<BinStat>> {
    check_labels(probs, labels)?;
    if n_bins == 0 {
        return Err(Error::usage("ECE needs at least one bin"));
    }
    let mut bins: Vec<BinStat> = (0..n_bins)
        .map(|b| BinStat {
            lo: b as f64 / n_bins as f64,
            hi: (b + 1) as f64 / n_bins as f64,
            count: 0,
            confidence_sum: 0.0,
            correct: 0,
        })
        .collect();
    for (row, &y) in probs.iter_rows().zip(labels) {
        let conf = confidence(row, mode);
        let bin = &mut bins[bin_of(conf, n_bins)];
        bin.count += 1;
        bin.confidence_sum += conf;
        bin.correct += usize::from(argmax(row, mode) == y);
    }
    Ok(bins)
}

/// `Σ_b (n_b/m)·|acc_b − conf_b|`.
pub fn ece(probs: &Matrix, labels: &[usize], mode: ConfidenceMode, n_bins: usize) -> Result<f64> {
    let bins = reliability_bins(probs, labels, mode, n_bins)?;
    let m = labels.len() as f64;
    Ok(bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / m * (b.accuracy() - b.mean_confidence()).abs())
        .sum())
}

/// `(1/m) Σ_i Σ_k (p_ik − 1[y_i = k])²` over every predictive column.
pub fn brier(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let mut total = 0.0;
    for (row, &y) in probs.iter_rows().zip(labels) {
        if y >= row.len() {
            return Err(Error::usage(format!(
                "label {y} outside the {} predictive classes",
                row.len()
            )));
        }
        total += row
            .iter()
            .enumerate()
            .map(|(k, &p)| (p - f64::from(k == y)).powi(2))
            .sum::<f64>();
    }
    Ok(total / labels.len() as f64)
}

/// Mean of the given confidences.
pub fn mmc(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::usage("MMC of an empty set"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn check_scores(in_scores: &[f64], out_scores: &[f64]) -> Result<()> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::usage(
            "detection metrics need non-empty in and out score sets",
        ));
    }
    if in_scores.iter().chain(out_scores).any(|s| s.is_nan()) {
        return Err(Error::usage("scores contain NaN"));
    }
    Ok(())
}

fn sorted_desc(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Share of out-scores at or above the largest threshold keeping ≥ 95% of in-scores.
pub fn fpr95(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    check_scores(in_scores, out_scores)?;
    let n = in_scores.len();
    let sorted = sorted_desc(in_scores);
    let k = (1..=n)
        .find(|&k| k as f64 / n as f64 >= 0.95)
        .expect("k = n qualifies");
    let t = sorted[k - 1];
    let hits = out_scores.iter().filter(|&&s| s >= t).count();
    Ok(hits as f64 / out_scores.len() as f64)
}

/// `(greater + ½·ties) / total`, evaluated from whichever side is at most ½ so
/// that swapping the roles of the two sets gives exactly the complement.
pub(crate) fn auc_from_pair_counts(greater: u64, ties: u64, total: u64) -> f64 {
    let twice = 2 * greater + ties;
    if twice > total {
        let lesser = total - greater - ties;
        1.0 - (2 * lesser + ties) as f64 / (2 * total) as f64
    } else {
        twice as f64 / (2 * total) as f64
    }
}

/// Mann–Whitney AUROC.
pub fn auroc(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    check_scores(in_scores, out_scores)?;
    let mut out = out_scores.to_vec();
    out.sort_by(f64::total_cmp);
    let (mut greater, mut ties) = (0u64, 0u64);
    for &s in in_scores {
        let below = out.partition_point(|&o| o < s);
        let not_above = out.partition_point(|&o| o <= s);
        greater += below as u64;
        ties += (not_above - below) as u64;
    }
    Ok(auc_from_pair_counts(
        greater,
        ties,
        (in_scores.len() * out_scores.len()) as u64,
    ))
}

/// Average precision with tied scores processed as one group.
pub fn auprc(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    check_scores(in_scores, out_scores)?;
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(out_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < all.len() {
        let j = i + all[i..].iter().take_while(|e| e.0 == all[i].0).count();
        let pos = all[i..j].iter().filter(|e| e.1).count();
        tp += pos;
        fp += j - i - pos;
        let precision = tp as f64 / (tp + fp) as f64;
        for _ in 0..pos {
            ap += precision;
        }
        i = j;
    }
    Ok(ap / in_scores.len() as f64)
}

pub const REPORT_HEADER: &str =
    "dataset,method,likelihood,accuracy,ece,brier,mmc_in,mmc_out,fpr95,auroc,auprc";

/// One CSV row of results; absent metrics are written as empty fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub method: String,
    pub likelihood: String,
    pub accuracy: Option<f64>,
    pub ece: Option<f64>,
    pub brier: Option<f64>,
    pub mmc_in: Option<f64>,
    pub mmc_out: Option<f64>,
    pub fpr95: Option<f64>,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

impl MetricsReport {
    pub fn new(dataset: &str, method: &str, likelihood: &str) -> Self {
        MetricsReport {
            dataset: dataset.to_string(),
            method: method.to_string(),
            likelihood: likelihood.to_string(),
            ..MetricsReport::default()
        }
    }

    /// Accuracy, ECE, Brier and in-distribution MMC.
    pub fn with_calibration(
        mut self,
        probs: &Matrix,
        labels: &[usize],
        mode: ConfidenceMode,
    ) -> Result<Self> {
        self.accuracy = Some(accuracy(probs, labels, mode)?);
        self.ece = Some(ece(probs, labels, mode, DEFAULT_ECE_BINS)?);
        self.brier = Some(brier(probs, labels)?);
        self.mmc_in = Some(mmc(&confidences(probs, mode))?);
        Ok(self)
    }

    /// FPR95, AUROC, AUPRC and both MMCs from predictive confidences.
    pub fn with_detection(
        mut self,
        probs_in: &Matrix,
        probs_out: &Matrix,
        mode: ConfidenceMode,
    ) -> Result<Self> {
        let s_in = confidences(probs_in, mode);
        let s_out = confidences(probs_out, mode);
        self.mmc_in = Some(mmc(&s_in)?);
        self.mmc_out = Some(mmc(&s_out)?);
        self.fpr95 = Some(fpr95(&s_in, &s_out)?);
        self.auroc = Some(auroc(&s_in, &s_out)?);
        self.auprc = Some(auprc(&s_in, &s_out)?);
        Ok(self)
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{},{}", self.dataset, self.method, self.likelihood);
        for v in [
            self.accuracy,
            self.ece,
            self.brier,
            self.mmc_in,
            self.mmc_out,
            self.fpr95,
            self.auroc,
            self.auprc,
        ] {
            s.push(',');
            if let Some(v) = v {
                let _ = write!(s, "{v}");
            }
        }
        s
    }

    /// Header plus this row, newline-terminated.
    pub fn to_csv(&self) -> String {
        format!("{REPORT_HEADER}\n{}\n", self.csv_row())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence(&[0.7, 0.3], ConfidenceMode::MaxSoftmax), 0.7);
        assert_eq!(
            confidence(&[0.1, 0.1, 0.8], ConfidenceMode::NcAware(2)),
            0.1
        );
        assert_eq!(confidence(&[0.25; 4], ConfidenceMode::MaxSoftmax), 0.25);
    }

    #[test]
    fn accuracy_examples() {
        let one_hot = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(
            accuracy(&one_hot, &[0, 1], ConfidenceMode::MaxSoftmax).unwrap(),
            1.0
        );
        assert_eq!(
            accuracy(&m(&[&[0.5, 0.5]]), &[1], ConfidenceMode::MaxSoftmax).unwrap(),
            0.0
        );
        let p = m(&[&[0.9, 0.1], &[0.2, 0.8], &[0.6, 0.4], &[0.7, 0.3]]);
        assert_eq!(
            accuracy(&p, &[0, 1, 0, 1], ConfidenceMode::MaxSoftmax).unwrap(),
            0.75
        );
        // the none class never wins the argmax
        let nc = m(&[&[0.3, 0.1, 0.6]]);
        assert_eq!(
            accuracy(&nc, &[0], ConfidenceMode::NcAware(2)).unwrap(),
            1.0
        );
        assert!(accuracy(&p, &[0], ConfidenceMode::MaxSoftmax).is_err());
    }

    #[test]
    fn ece_examples() {
        let p = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(
            ece(&p, &[0, 1], ConfidenceMode::MaxSoftmax, 15).unwrap(),
            0.0
        );
        let single = m(&[&[0.8, 0.2]]);
        assert!((ece(&single, &[1], ConfidenceMode::MaxSoftmax, 15).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(bin_of(0.0, 15), 0);
        assert_eq!(bin_of(1.0 / 15.0, 15), 0);
        assert_eq!(bin_of(1.0, 15), 14);
        let empty = Matrix::zeros(0, 2);
        assert!(ece(&empty, &[], ConfidenceMode::MaxSoftmax, 15).is_err());
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&m(&[&[1.0, 0.0]]), &[0]).unwrap(), 0.0);
        assert_eq!(brier(&m(&[&[0.5, 0.5]]), &[0]).unwrap(), 0.5);
        assert_eq!(brier(&m(&[&[0.0, 1.0]]), &[0]).unwrap(), 2.0);
    }

    #[test]
    fn mmc_examples() {
        assert!((mmc(&[0.7, 0.6]).unwrap() - 0.65).abs() < 1e-15);
        assert_eq!(mmc(&[0.3]).unwrap(), 0.3);
        assert!(mmc(&[]).is_err());
    }

    #[test]
    fn detection_examples() {
        let ins: Vec<f64> = (0..20).map(|i| 10.0 + i as f64).collect();
        let outs = [0.0, 1.0, 2.0];
        assert_eq!(fpr95(&ins, &outs).unwrap(), 0.0);
        assert_eq!(auroc(&ins, &outs).unwrap(), 1.0);
        assert_eq!(auprc(&ins, &outs).unwrap(), 1.0);
        assert!(fpr95(&ins, &ins).unwrap() >= 0.95);
        assert_eq!(auroc(&[0.3; 5], &[0.3; 7]).unwrap(), 0.5);
        assert_eq!(auprc(&[0.3; 4], &[0.3; 4]).unwrap(), 0.5);
        assert!(auroc(&[], &outs).is_err());
        assert!(fpr95(&ins, &[]).is_err());
    }

    #[test]
    fn report_csv() {
        let r = MetricsReport {
            accuracy: Some(0.5),
            auroc: Some(1.0),
            ..MetricsReport::new("toy", "la", "oe")
        };
        assert_eq!(
            r.to_csv(),
            format!("{REPORT_HEADER}\ntoy,la,oe,0.5,,,,,,1,\n")
        );
    }
}
