//! Detection metrics for "attacked statistics are small" scores.
//!
//! `Y` holds statistics of attacked inputs, `Z` those of clean inputs. A
//! sample is flagged as attacked when its statistic lies below the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

fn check(ys: &[f64], zs: &[f64]) -> Result<()> {
    if ys.is_empty() || zs.is_empty() {
        return Err(invalid("both statistic lists must be nonempty"));
    }
    if ys.iter().chain(zs).any(|v| !v.is_finite()) {
        return Err(invalid("statistics must be finite"));
    }
    Ok(())
}

/// `P(y < z) + ½·P(y = z)` over all pairs, computed from midranks of the
/// pooled sample.
pub fn auroc(ys: &[f64], zs: &[f64]) -> Result<f64> {
    check(ys, zs)?;
    let mut pooled: Vec<(f64, bool)> = ys.iter().map(|&v| (v, true)).chain(zs.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum over z of (#y < z + ½ #y = z), walking tie groups.
    let (mut y_below, mut twice) = (0u64, 0u64);
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        let (mut ny, mut nz) = (0u64, 0u64);
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            if pooled[j].1 {
                ny += 1;
            } else {
                nz += 1;
            }
            j += 1;
        }
        twice += nz * (2 * y_below + ny);
        y_below += ny;
        i = j;
    }
    Ok(twice as f64 / (2.0 * ys.len() as f64 * zs.len() as f64))
}

/// Thresholds may be infinite; JSON has no infinities, so those are written
/// as the strings `"inf"` and `"-inf"`.
mod threshold_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            v if v.is_finite() => s.serialize_f64(v),
            v if v > 0.0 => s.serialize_str("inf"),
            _ => s.serialize_str("-inf"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

/// One ROC point; `t` is the threshold `τ` with `TPR = F_Y(τ)`,
/// `FPR = F_Z(τ)`. The first point uses `τ = -∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    #[serde(with = "threshold_repr")]
    pub t: f64,
}

/// ROC points over every distinct pooled value, from (0,0) to (1,1).
pub fn roc_curve(ys: &[f64], zs: &[f64]) -> Result<Vec<RocPoint>> {
    check(ys, zs)?;
    let mut ys = ys.to_vec();
    let mut zs = zs.to_vec();
    ys.sort_by(f64::total_cmp);
    zs.sort_by(f64::total_cmp);
    let mut taus: Vec<f64> = ys.iter().chain(&zs).copied().collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let (ny, nz) = (ys.len() as f64, zs.len() as f64);
    let mut pts = vec![RocPoint { fpr: 0.0, tpr: 0.0, t: f64::NEG_INFINITY }];
    for t in taus {
        let cy = ys.partition_point(|v| *v <= t);
        let cz = zs.partition_point(|v| *v <= t);
        pts.push(RocPoint { fpr: cz as f64 / nz, tpr: cy as f64 / ny, t });
    }
    Ok(pts)
}

/// Trapezoidal area under ROC points.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Confusion table and derived rates at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// No sample flagged (`TP + FP = 0`); precision is then reported as 0.
    pub precision_undefined: bool,
}

impl Metrics {
    pub fn from_counts(tp: usize, fn_: usize, tn: usize, fp: usize) -> Metrics {
        let total = (tp + fn_ + tn + fp) as f64;
        let flagged = tp + fp;
        let positives = tp + fn_;
        Metrics {
            tp,
            fn_,
            tn,
            fp,
            accuracy: if total > 0.0 { (tp + tn) as f64 / total } else { 0.0 },
            precision: if flagged > 0 { tp as f64 / flagged as f64 } else { 0.0 },
            recall: if positives > 0 { tp as f64 / positives as f64 } else { 0.0 },
            precision_undefined: flagged == 0,
        }
    }
}

/// `TP = #{y < t}`, `FN = #{y ≥ t}`, `TN = #{z ≥ t}`, `FP = #{z < t}`.
pub fn threshold_metrics(ys: &[f64], zs: &[f64], t: f64) -> Metrics {
    let tp = ys.iter().filter(|&&y| y < t).count();
    let fp = zs.iter().filter(|&&z| z < t).count();
    Metrics::from_counts(tp, ys.len() - tp, zs.len() - fp, fp)
}

/// Threshold selection rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Maximize `0.5·recall + 0.25·accuracy + 0.25·precision`.
    Weighted,
    /// Maximize accuracy.
    Accuracy,
}

impl ThresholdRule {
    pub fn score(self, m: &Metrics) -> f64 {
        match self {
            ThresholdRule::Weighted => 0.5 * m.recall + 0.25 * m.accuracy + 0.25 * m.precision,
            ThresholdRule::Accuracy => m.accuracy,
        }
    }
}

/// Candidate thresholds: `-∞`, midpoints between consecutive distinct pooled
/// values, and `+∞`.
pub fn candidate_thresholds(ys: &[f64], zs: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = ys.iter().chain(zs).copied().collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mut out = Vec::with_capacity(v.len() + 1);
    out.push(f64::NEG_INFINITY);
    out.extend(v.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(f64::INFINITY);
    out
}

/// Best threshold under `rule`; ties go to the smaller threshold.
pub fn choose_threshold(ys: &[f64], zs: &[f64], rule: ThresholdRule) -> Result<(f64, Metrics)> {
    check(ys, zs)?;
    let mut best: Option<(f64, Metrics, f64)> = None;
    for t in candidate_thresholds(ys, zs) {
        let m = threshold_metrics(ys, zs, t);
        let s = rule.score(&m);
        if best.as_ref().is_none_or(|b| s > b.2) {
            best = Some((t, m, s));
        }
    }
    let (t, m, _) = best.expect("candidate list is never empty");
    Ok((t, m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChosenThreshold {
    #[serde(with = "threshold_repr")]
    pub t: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub attacked: usize,
    pub clean: usize,
}

/// Full detection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    pub auroc: f64,
    pub roc: Vec<RocPoint>,
    pub rule1: ChosenThreshold,
    pub rule2: ChosenThreshold,
    pub counts: Counts,
    pub orientation: String,
}

pub const ORIENTATION: &str = "attacked_below_threshold";

pub fn roc_report(ys: &[f64], zs: &[f64]) -> Result<RocReport> {
    let pick = |rule| choose_threshold(ys, zs, rule).map(|(t, metrics)| ChosenThreshold { t, metrics });
    Ok(RocReport {
        auroc: auroc(ys, zs)?,
        roc: roc_curve(ys, zs)?,
        rule1: pick(ThresholdRule::Weighted)?,
        rule2: pick(ThresholdRule::Accuracy)?,
        counts: Counts { attacked: ys.len(), clean: zs.len() },
        orientation: ORIENTATION.to_string(),
    })
}
