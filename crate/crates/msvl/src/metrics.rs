//! The evaluation protocol: ROC/AUROC, stratified percentile bootstrap
//! confidence intervals, DeLong's test for correlated AUROCs, the Youden
//! cutoff, confusion metrics, and per-group accuracy tables.
//!
//! AUROC is the Mann-Whitney form (ties credited 0.5), computed from
//! midranks; the test suite checks it exactly against pairwise concordance
//! and against the trapezoidal ROC area.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{derive_seed, rng_from_seed, uniform_index};

/// One scored test case.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub score: f64,
    pub label: bool,
    pub group: Option<String>,
}

impl ScoredSample {
    pub fn new(score: f64, label: bool) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::InvalidInput(format!("sample score {score} is not finite")));
        }
        Ok(ScoredSample { score, label, group: None })
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

fn class_counts(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    let n_pos = samples.iter().filter(|s| s.label).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(format!(
            "need both classes present, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    Ok((n_pos, n_neg))
}

/// Probability that a random positive outscores a random negative, ties
/// credited one half (Mann-Whitney U over midranks).
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let (n_pos, n_neg) = class_counts(samples)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].score.total_cmp(&samples[b].score));

    // Midranks over tie groups; the positive-rank sum gives U exactly since
    // ranks are halves of integers.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && samples[order[j]].score == samples[order[i]].score {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1 ..= j
        for &idx in &order[i..j] {
            if samples[idx].label {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// One point on the ROC staircase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// The (0,0) corner carries +inf, which JSON renders as null.
    #[serde(with = "json_float")]
    pub threshold: f64,
}

/// JSON has no infinities; this maps non-finite floats to null and back.
mod json_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// The ROC staircase from (0,0) to (1,1) with one point per distinct score,
/// thresholds descending ((0,0) carries +inf).
pub fn roc_curve(samples: &[ScoredSample]) -> Result<Vec<RocPoint>> {
    let (n_pos, n_neg) = class_counts(samples)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[b].score.total_cmp(&samples[a].score));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = samples[order[i]].score;
        let mut j = i;
        while j < order.len() && samples[order[j]].score == threshold {
            if samples[order[j]].label {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold,
        });
        i = j;
    }
    Ok(points)
}

/// Trapezoidal area under a ROC staircase.
pub fn roc_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Stratified percentile bootstrap 95% interval for the AUROC.
///
/// Positives and negatives are resampled separately with their class counts
/// preserved, so no resample can lose a class. Each resample draws from its
/// own derived seed, making the result independent of evaluation order.
pub fn bootstrap_ci(samples: &[ScoredSample], b: usize, seed: u64) -> Result<(f64, f64)> {
    class_counts(samples)?;
    if b < 100 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 100 resamples, got {b}"
        )));
    }
    let positives: Vec<&ScoredSample> = samples.iter().filter(|s| s.label).collect();
    let negatives: Vec<&ScoredSample> = samples.iter().filter(|s| !s.label).collect();

    let mut aucs: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let mut resample = Vec::with_capacity(samples.len());
            for _ in 0..positives.len() {
                resample.push(positives[uniform_index(&mut rng, positives.len())].clone());
            }
            for _ in 0..negatives.len() {
                resample.push(negatives[uniform_index(&mut rng, negatives.len())].clone());
            }
            auroc(&resample).expect("stratified resample keeps both classes")
        })
        .collect();
    aucs.sort_by(f64::total_cmp);
    Ok((percentile(&aucs, 0.025), percentile(&aucs, 0.975)))
}

/// Linear-interpolation percentile of a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Outcome of DeLong's test for two correlated AUROCs.
#[derive(Debug, Clone, Serialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub p_value: f64,
    /// Set when the variance estimate degenerated to zero while the AUROCs
    /// differ, which makes the normal approximation vacuous.
    pub degenerate: bool,
}

/// DeLong's nonparametric comparison of two models scored on the same
/// labeled test set.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<DelongResult> {
    if scores_a.len() != labels.len() || scores_b.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "score vectors ({}, {}) must align with labels ({})",
            scores_a.len(),
            scores_b.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores_a.iter().chain(scores_b).find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("score {bad} is not finite")));
    }
    let pos_idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg_idx: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let (m, n) = (pos_idx.len(), neg_idx.len());
    if m == 0 || n == 0 {
        return Err(Error::Degenerate(format!(
            "need both classes present, got {m} positives and {n} negatives"
        )));
    }

    // Placement values: v10[i] = P(score_i > random negative), v01[j] =
    // P(random positive > score_j), ties half.
    let placements = |scores: &[f64]| -> (Vec<f64>, Vec<f64>, f64) {
        let mut v10 = vec![0.0; m];
        let mut v01 = vec![0.0; n];
        for (ii, &i) in pos_idx.iter().enumerate() {
            for (jj, &j) in neg_idx.iter().enumerate() {
                let c = match scores[i].total_cmp(&scores[j]) {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
                v10[ii] += c;
                v01[jj] += c;
            }
        }
        for v in &mut v10 {
            *v /= n as f64;
        }
        for v in &mut v01 {
            *v /= m as f64;
        }
        let auc = v10.iter().sum::<f64>() / m as f64;
        (v10, v01, auc)
    };
    let (v10_a, v01_a, auc_a) = placements(scores_a);
    let (v10_b, v01_b, auc_b) = placements(scores_b);

    let cov = |x: &[f64], y: &[f64], mean_x: f64, mean_y: f64| -> f64 {
        if x.len() < 2 {
            return 0.0;
        }
        x.iter()
            .zip(y)
            .map(|(a, b)| (a - mean_x) * (b - mean_y))
            .sum::<f64>()
            / (x.len() - 1) as f64
    };
    let s10_aa = cov(&v10_a, &v10_a, auc_a, auc_a);
    let s10_bb = cov(&v10_b, &v10_b, auc_b, auc_b);
    let s10_ab = cov(&v10_a, &v10_b, auc_a, auc_b);
    let s01_aa = cov(&v01_a, &v01_a, auc_a, auc_a);
    let s01_bb = cov(&v01_b, &v01_b, auc_b, auc_b);
    let s01_ab = cov(&v01_a, &v01_b, auc_a, auc_b);

    let variance = (s10_aa + s10_bb - 2.0 * s10_ab) / m as f64
        + (s01_aa + s01_bb - 2.0 * s01_ab) / n as f64;
    let diff = auc_a - auc_b;

    let (p_value, degenerate) = if variance <= 0.0 || variance.sqrt() < 1e-12 {
        if diff.abs() < 1e-15 {
            (1.0, false)
        } else {
            (1e-300, true)
        }
    } else {
        let z = diff / variance.sqrt();
        // Two-sided: p = 2 (1 - Phi(|z|)) = erfc(|z| / sqrt(2)).
        let p = libm::erfc(z.abs() / std::f64::consts::SQRT_2);
        (p.max(1e-300), false)
    };
    Ok(DelongResult { auc_a, auc_b, p_value, degenerate })
}

/// The cutoff maximizing Youden's J = sensitivity + specificity - 1.
///
/// Candidates are the midpoints between adjacent distinct sorted scores plus
/// -inf/+inf sentinels; ties break toward the smallest threshold. A sample
/// is predicted positive when `score >= cutoff`.
pub fn youden_cutoff(samples: &[ScoredSample]) -> Result<f64> {
    let (n_pos, n_neg) = class_counts(samples)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].score.total_cmp(&samples[b].score));

    // Sweep candidates in ascending order, tracking how many samples fall
    // below the threshold (predicted negative).
    let mut best_j = f64::NEG_INFINITY;
    let mut best_cutoff = f64::NEG_INFINITY;
    let mut tp = n_pos;
    let mut fp = n_neg;

    let evaluate = |cutoff: f64, tp: usize, fp: usize, best_j: &mut f64, best: &mut f64| {
        let sensitivity = tp as f64 / n_pos as f64;
        let specificity = (n_neg - fp) as f64 / n_neg as f64;
        let j = sensitivity + specificity - 1.0;
        if j > *best_j {
            *best_j = j;
            *best = cutoff;
        }
    };

    evaluate(f64::NEG_INFINITY, tp, fp, &mut best_j, &mut best_cutoff);
    let mut i = 0;
    while i < order.len() {
        let score = samples[order[i]].score;
        let mut j = i;
        while j < order.len() && samples[order[j]].score == score {
            if samples[order[j]].label {
                tp -= 1;
            } else {
                fp -= 1;
            }
            j += 1;
        }
        let cutoff = if j < order.len() {
            (score + samples[order[j]].score) / 2.0
        } else {
            f64::INFINITY
        };
        evaluate(cutoff, tp, fp, &mut best_j, &mut best_cutoff);
        i = j;
    }
    Ok(best_cutoff)
}

/// Confusion counts and the derived rates at a fixed cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Classifies `score >= cutoff` as positive and tabulates the confusion
/// metrics. F1 is defined as 0 when precision + recall is 0.
pub fn confusion_metrics(samples: &[ScoredSample], cutoff: f64) -> Result<ConfusionMetrics> {
    if cutoff.is_nan() {
        return Err(Error::InvalidInput("cutoff must not be NaN".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for s in samples {
        match (s.label, s.score >= cutoff) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let total = samples.len().max(1) as f64;
    let accuracy = (tp + tn) as f64 / total;
    let sensitivity = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let specificity = if tn + fp > 0 { tn as f64 / (tn + fp) as f64 } else { 0.0 };
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = sensitivity;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ConfusionMetrics { accuracy, sensitivity, specificity, f1, tp, fp, tn, fn_ })
}

/// Accuracy within one stratum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAccuracy {
    pub group: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Per-group accuracy at a fixed cutoff, plus an overall row.
#[derive(Debug, Clone, Serialize)]
pub struct StratifiedReport {
    pub rows: Vec<GroupAccuracy>,
    pub overall: GroupAccuracy,
}

pub fn stratified_report(samples: &[ScoredSample], cutoff: f64) -> Result<StratifiedReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("stratified report needs samples".into()));
    }
    let mut by_group: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut overall = (0usize, 0usize);
    for s in samples {
        let Some(group) = s.group.as_deref() else {
            return Err(Error::InvalidInput(
                "every sample needs a group tag for stratified reporting".into(),
            ));
        };
        let correct = (s.score >= cutoff) == s.label;
        let entry = by_group.entry(group).or_insert((0, 0));
        entry.0 += 1;
        entry.1 += usize::from(correct);
        overall.0 += 1;
        overall.1 += usize::from(correct);
    }
    let rows = by_group
        .into_iter()
        .map(|(group, (n, correct))| GroupAccuracy {
            group: group.to_string(),
            n,
            correct,
            accuracy: correct as f64 / n as f64,
        })
        .collect();
    Ok(StratifiedReport {
        rows,
        overall: GroupAccuracy {
            group: "overall".into(),
            n: overall.0,
            correct: overall.1,
            accuracy: overall.1 as f64 / overall.0 as f64,
        },
    })
}

/// One evaluation row: every column of the standard report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub auroc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub cutoff: f64,
    pub p_value: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl EvalReport {
    /// Assembles the full report for a scored sample set.
    pub fn compute(
        samples: &[ScoredSample],
        cutoff: f64,
        bootstrap_resamples: usize,
        seed: u64,
        p_value: Option<f64>,
    ) -> Result<Self> {
        let (n_pos, n_neg) = class_counts(samples)?;
        let auc = auroc(samples)?;
        let (ci_low, ci_high) = bootstrap_ci(samples, bootstrap_resamples, seed)?;
        let cm = confusion_metrics(samples, cutoff)?;
        Ok(EvalReport {
            accuracy: cm.accuracy,
            sensitivity: cm.sensitivity,
            specificity: cm.specificity,
            f1: cm.f1,
            auroc: auc,
            ci_low,
            ci_high,
            cutoff,
            p_value,
            n_pos,
            n_neg,
            tp: cm.tp,
            fp: cm.fp,
            tn: cm.tn,
            fn_: cm.fn_,
        })
    }
}

impl fmt::Display for EvalReport {
    /// Renders one table row in the reporting style used throughout:
    /// percentages for the rates, three decimals for F1/AUROC/cutoff, a
    /// dashed CI, and `P < 0.01` below the significance floor.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.1}%\t{:.1}%\t{:.1}%\t{:.3}\t{:.3}\t{:.3} - {:.3}\t{:.3}\t{}",
            self.accuracy * 100.0,
            self.sensitivity * 100.0,
            self.specificity * 100.0,
            self.f1,
            self.auroc,
            self.ci_low,
            self.ci_high,
            self.cutoff,
            format_p_value(self.p_value),
        )
    }
}

pub fn format_p_value(p: Option<f64>) -> String {
    match p {
        None => "Ref".to_string(),
        Some(p) if p < 0.01 => "P < 0.01".to_string(),
        Some(p) => format!("P = {p:.2}"),
    }
}

// ---------------------------------------------------------------------------
// Scores CSV: `id,score,label,group`.
// ---------------------------------------------------------------------------

/// One row of a scores CSV, tying a sample to its source image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
    pub label: u8,
    pub group: String,
}

impl ScoreRecord {
    pub fn to_sample(&self) -> Result<ScoredSample> {
        if self.label > 1 {
            return Err(Error::Format(format!(
                "score record {:?} has non-binary label {}",
                self.id, self.label
            )));
        }
        let mut s = ScoredSample::new(self.score, self.label == 1)?;
        if !self.group.is_empty() {
            s = s.with_group(self.group.clone());
        }
        Ok(s)
    }
}

pub fn write_scores_csv<W: Write>(records: &[ScoreRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)
            .map_err(|e| Error::Format(format!("scores CSV write failed: {e}")))?;
    }
    w.flush().map_err(|e| Error::Format(format!("scores CSV flush failed: {e}")))?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(reader: R) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for record in r.deserialize() {
        let record: ScoreRecord =
            record.map_err(|e| Error::Format(format!("scores CSV parse failed: {e}")))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_scores_csv_file(records: &[ScoreRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_scores_csv(records, std::io::BufWriter::new(file))
}

pub fn read_scores_csv_file(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores_csv(std::io::BufReader::new(file))
}

/// ROC points CSV (`fpr,tpr,threshold`) for external plotting.
pub fn write_roc_csv<W: Write>(points: &[RocPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fpr", "tpr", "threshold"])
        .map_err(|e| Error::Format(format!("roc CSV write failed: {e}")))?;
    for p in points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])
            .map_err(|e| Error::Format(format!("roc CSV write failed: {e}")))?;
    }
    w.flush().map_err(|e| Error::Format(format!("roc CSV flush failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand_chacha::ChaCha12Rng;
    use crate::util::{derive_seed, uniform_f64, uniform_index};

    /// Exhaustive pairwise concordance oracle for AUROC. Sums of halves are
    /// exact in f64, so equality with the midrank route is exact.
    pub fn pairwise_auroc(samples: &[ScoredSample]) -> f64 {
        let mut concordant = 0.0f64;
        let mut pairs = 0.0f64;
        for p in samples.iter().filter(|s| s.label) {
            for n in samples.iter().filter(|s| !s.label) {
                pairs += 1.0;
                concordant += match p.score.total_cmp(&n.score) {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
        concordant / pairs
    }

    /// Random instance with ties: scores snap to a small lattice half the
    /// time.
    pub fn random_instance(rng: &mut ChaCha12Rng, n: usize) -> Vec<ScoredSample> {
        loop {
            let samples: Vec<ScoredSample> = (0..n)
                .map(|_| {
                    let raw = uniform_f64(rng);
                    let score = if uniform_f64(rng) < 0.5 {
                        (raw * 8.0).round() / 8.0
                    } else {
                        raw
                    };
                    ScoredSample::new(score, uniform_f64(rng) < 0.5).unwrap()
                })
                .collect();
            let pos = samples.iter().filter(|s| s.label).count();
            if pos > 0 && pos < n {
                return samples;
            }
        }
    }

    /// Brute-force Youden scan: recomputes J from scratch at every candidate.
    pub fn youden_scan_oracle(samples: &[ScoredSample]) -> f64 {
        let mut scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
        scores.sort_by(f64::total_cmp);
        scores.dedup();
        let mut candidates = vec![f64::NEG_INFINITY, f64::INFINITY];
        for w in scores.windows(2) {
            candidates.push((w[0] + w[1]) / 2.0);
        }
        candidates.sort_by(f64::total_cmp);
        let n_pos = samples.iter().filter(|s| s.label).count();
        let n_neg = samples.len() - n_pos;
        let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &c in &candidates {
            let tp = samples.iter().filter(|s| s.label && s.score >= c).count();
            let tn = samples.iter().filter(|s| !s.label && s.score < c).count();
            let j = tp as f64 / n_pos as f64 + tn as f64 / n_neg as f64 - 1.0;
            if j > best.0 {
                best = (j, c);
            }
        }
        best.1
    }

    /// Two models scored on one labeled set: model a separates strongly
    /// (but stays noisy), model b is uninformative noise. In this regime the
    /// DeLong normal approximation and the permutation distribution agree
    /// closely even at n = 20.
    pub fn two_model_fixture(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let mut rng = rng_from_seed(derive_seed(1000, seed));
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let scores_a: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let base = if l { 0.72 } else { 0.28 };
                (base + 0.62 * (uniform_f64(&mut rng) - 0.5)).clamp(0.0, 1.0)
            })
            .collect();
        let scores_b: Vec<f64> = labels
            .iter()
            .map(|_| (0.5 + 0.35 * (uniform_f64(&mut rng) - 0.5)).clamp(0.0, 1.0))
            .collect();
        (scores_a, scores_b, labels)
    }

    /// Paired sign-flip permutation test for the AUROC difference.
    pub fn permutation_p_value(
        scores_a: &[f64],
        scores_b: &[f64],
        labels: &[bool],
        draws: usize,
        rng: &mut ChaCha12Rng,
    ) -> f64 {
        let observed = {
            let sa: Vec<ScoredSample> = scores_a
                .iter()
                .zip(labels)
                .map(|(&s, &l)| ScoredSample::new(s, l).unwrap())
                .collect();
            let sb: Vec<ScoredSample> = scores_b
                .iter()
                .zip(labels)
                .map(|(&s, &l)| ScoredSample::new(s, l).unwrap())
                .collect();
            (auroc(&sa).unwrap() - auroc(&sb).unwrap()).abs()
        };
        let mut at_least = 0usize;
        let mut a = scores_a.to_vec();
        let mut b = scores_b.to_vec();
        for _ in 0..draws {
            a.copy_from_slice(scores_a);
            b.copy_from_slice(scores_b);
            for i in 0..a.len() {
                if uniform_index(rng, 2) == 1 {
                    let (x, y) = (a[i], b[i]);
                    a[i] = y;
                    b[i] = x;
                }
            }
            let sa: Vec<ScoredSample> = a
                .iter()
                .zip(labels)
                .map(|(&s, &l)| ScoredSample::new(s, l).unwrap())
                .collect();
            let sb: Vec<ScoredSample> = b
                .iter()
                .zip(labels)
                .map(|(&s, &l)| ScoredSample::new(s, l).unwrap())
                .collect();
            let diff = (auroc(&sa).unwrap() - auroc(&sb).unwrap()).abs();
            if diff >= observed - 1e-12 {
                at_least += 1;
            }
        }
        (at_least + 1) as f64 / (draws + 1) as f64
    }
}
