//! Subjective score processing and exponential-decay label propagation.
//!
//! Quality after `t` DS-SR iterations follows `Q(t) = exp(-b t)`. One rated
//! anchor per group fixes `b`; every other iteration of the group is then
//! labeled from the curve.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{groups, GroupKey, SampleRecord};
use crate::error::{Error, Result};

pub const MAX_SCORE: f64 = 10.0;
pub const MIN_SCREEN_SUBJECTS: usize = 5;
pub const MIN_NORMALIZE_SUBJECTS: usize = 3;
/// A subject is rejected when more than this fraction of their scores falls
/// outside mean ± 2 std of the panel.
pub const OUTLIER_BUDGET: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectScores {
    pub subject_id: String,
    /// sample_id → raw score in [0, 10]
    pub scores: BTreeMap<String, f64>,
}

impl SubjectScores {
    fn validate(&self) -> Result<()> {
        for (sample, &s) in &self.scores {
            if !(0.0..=MAX_SCORE).contains(&s) {
                return Err(Error::Label(format!(
                    "subject {} scored {sample} with {s}, outside [0, 10]",
                    self.subject_id
                )));
            }
        }
        Ok(())
    }
}

/// A rated point `(k, imos)` of a decay curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub k: u32,
    pub imos: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub group: GroupKey,
    pub b: f64,
}

impl DecayCurve {
    pub fn quality(&self, t: u32) -> f64 {
        (-self.b * t as f64).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Screening {
    pub kept: Vec<SubjectScores>,
    pub rejected: Vec<String>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Single-pass panel screening.
///
/// For each sample the panel mean and sample standard deviation are taken
/// over every subject who scored it; a score is out of range when
/// `|s − μ| > 2σ`. Subjects are processed in `subject_id` order, so the
/// result does not depend on input order.
pub fn screen_outliers(all: &[SubjectScores]) -> Result<Screening> {
    if all.len() < MIN_SCREEN_SUBJECTS {
        return Err(Error::Protocol(format!(
            "screening needs at least {MIN_SCREEN_SUBJECTS} subjects, got {}",
            all.len()
        )));
    }
    let mut subjects: Vec<&SubjectScores> = all.iter().collect();
    subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    for s in &subjects {
        s.validate()?;
    }

    let mut per_sample: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in &subjects {
        for (sample, &v) in &s.scores {
            per_sample.entry(sample).or_default().push(v);
        }
    }
    let stats: BTreeMap<&str, (f64, f64)> = per_sample
        .iter()
        .map(|(k, v)| (*k, mean_std(v)))
        .collect();

    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for s in subjects {
        let outside = s
            .scores
            .iter()
            .filter(|(sample, &v)| {
                let (mu, sigma) = stats[sample.as_str()];
                (v - mu).abs() > 2.0 * sigma
            })
            .count();
        let frac = if s.scores.is_empty() {
            0.0
        } else {
            outside as f64 / s.scores.len() as f64
        };
        if frac > OUTLIER_BUDGET {
            rejected.push(s.subject_id.clone());
        } else {
            kept.push(s.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::Protocol("every subject was rejected".into()));
    }
    Ok(Screening { kept, rejected })
}

/// Mean raw score of `sample` over the subjects who rated it, divided by 10.
pub fn normalize_scores(subjects: &[SubjectScores], sample: &str) -> Result<f64> {
    let values: Vec<f64> = subjects
        .iter()
        .filter_map(|s| s.scores.get(sample).copied())
        .collect();
    if values.len() < MIN_NORMALIZE_SUBJECTS {
        return Err(Error::Label(format!(
            "sample {sample} has {} scores, need {MIN_NORMALIZE_SUBJECTS}",
            values.len()
        )));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((mean / MAX_SCORE).clamp(0.0, 1.0))
}

/// Decay rate from rated anchors: `−ln(imos)/k` for one anchor, least
/// squares through the origin of `−ln(imos)` on `k` for several.
pub fn fit_decay(anchors: &[Anchor]) -> Result<f64> {
    if anchors.is_empty() {
        return Err(Error::Label("no anchors to fit".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for a in anchors {
        if a.k == 0 {
            return Err(Error::Label("anchor iteration must be >= 1".into()));
        }
        if !(a.imos > 0.0 && a.imos < 1.0) {
            return Err(Error::Label(format!(
                "anchor imos {} at k={} must lie strictly inside (0, 1)",
                a.imos, a.k
            )));
        }
        let k = a.k as f64;
        num += k * -a.imos.ln();
        den += k * k;
    }
    Ok(num / den)
}

/// `exp(−b t)` for `t = 0..=t_max`.
pub fn label_curve(b: f64, t_max: u32) -> Vec<f64> {
    (0..=t_max).map(|t| (-b * t as f64).exp()).collect()
}

/// The iteration rated by people when a group runs to `t_max`.
pub fn anchor_iteration(t_max: u32) -> u32 {
    t_max.div_ceil(2)
}

/// Sets each record's imos to `exp(−b t)` from its group's curve.
pub fn attach_labels(records: &[SampleRecord], curves: &[DecayCurve]) -> Result<Vec<SampleRecord>> {
    let by_id: BTreeMap<String, &DecayCurve> = curves.iter().map(|c| (c.group.id(), c)).collect();
    records
        .iter()
        .map(|r| {
            let curve = by_id.get(&r.group().id()).ok_or_else(|| Error::Record {
                record: r.sample_id.clone(),
                message: format!("no decay curve for group {}", r.group()),
            })?;
            Ok(SampleRecord {
                imos: Some(curve.quality(r.iteration)),
                ..r.clone()
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelOutcome {
    pub records: Vec<SampleRecord>,
    pub rejected: Vec<String>,
    pub curves: Vec<DecayCurve>,
}

/// The complete offline labeling pass: screening, per-sample normalization
/// of every rated record, one decay fit per group, label propagation.
pub fn label_manifest(records: &[SampleRecord], scores: &[SubjectScores]) -> Result<LabelOutcome> {
    let screening = screen_outliers(scores)?;
    let mut curves = Vec::new();
    for (key, idx) in groups(records) {
        let mut anchors = Vec::new();
        for &i in &idx {
            let r = &records[i];
            let rated = screening
                .kept
                .iter()
                .any(|s| s.scores.contains_key(&r.sample_id));
            if rated {
                anchors.push(Anchor {
                    k: r.iteration,
                    imos: normalize_scores(&screening.kept, &r.sample_id)?,
                });
            }
        }
        if anchors.is_empty() {
            return Err(Error::Label(format!("group {key} has no rated anchor")));
        }
        let b = fit_decay(&anchors).map_err(|e| Error::Label(format!("group {key}: {e}")))?;
        curves.push(DecayCurve { group: key, b });
    }
    Ok(LabelOutcome {
        records: attach_labels(records, &curves)?,
        rejected: screening.rejected,
        curves,
    })
}
