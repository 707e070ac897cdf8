//! Open-world evaluation over single-object records: per-class average
//! precision, wilderness impact, absolute open-set error and unknown recall.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Label, Prediction};
use crate::protocol::TaskSchedule;
use crate::CategoryId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrueStatus {
    Known,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub true_category: CategoryId,
    pub true_status: TrueStatus,
    pub prediction: Prediction,
}

impl EvalRecord {
    /// Label a prediction against the known set after task `t`.
    pub fn labeled(
        sample_id: impl Into<String>,
        true_category: CategoryId,
        prediction: Prediction,
        schedule: &TaskSchedule,
        t: u32,
    ) -> Result<Self> {
        let true_status = if schedule.known(t)?.contains(&true_category) {
            TrueStatus::Known
        } else {
            TrueStatus::Unknown
        };
        Ok(Self {
            sample_id: sample_id.into(),
            true_category,
            true_status,
            prediction,
        })
    }
}

/// Area under the stepwise precision-recall curve: the mean, over all
/// `positives`, of the precision at the rank of each true positive.
/// `ranked` holds `(score, is_correct)` in non-increasing score order.
pub fn average_precision(ranked: &[(f64, bool)], positives: usize) -> Result<f64> {
    if positives == 0 {
        return Err(Error::DegenerateMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    if ranked.windows(2).any(|w| w[0].0 < w[1].0) {
        return Err(Error::contract(
            "ranked predictions must be sorted by descending score",
        ));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &(_, correct)) in ranked.iter().enumerate() {
        if correct {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits > positives {
        return Err(Error::contract(format!(
            "{hits} true positives exceed {positives} positives"
        )));
    }
    Ok(sum / positives as f64)
}

/// `p_known / p_known_union_unknown - 1`.
pub fn wilderness_impact(p_known: f64, p_known_union_unknown: f64) -> Result<f64> {
    for p in [p_known, p_known_union_unknown] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::contract(format!("precision {p} outside [0, 1]")));
        }
    }
    if p_known_union_unknown == 0.0 {
        return Err(Error::DegenerateMetric(
            "wilderness impact denominator is zero".into(),
        ));
    }
    Ok(p_known / p_known_union_unknown - 1.0)
}

/// Unknown-status records claimed as some known class.
pub fn a_ose(records: &[EvalRecord]) -> usize {
    records
        .iter()
        .filter(|r| r.true_status == TrueStatus::Unknown && !r.prediction.label.is_unknown())
        .count()
}

/// Fraction of unknown-status records predicted UNKNOWN; `None` when the
/// evaluation has no unknowns.
pub fn unknown_recall(records: &[EvalRecord]) -> Option<f64> {
    let unknown: Vec<_> = records
        .iter()
        .filter(|r| r.true_status == TrueStatus::Unknown)
        .collect();
    if unknown.is_empty() {
        return None;
    }
    let rejected = unknown
        .iter()
        .filter(|r| r.prediction.label.is_unknown())
        .count();
    Some(rejected as f64 / unknown.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task_id: u32,
    pub map_previous: Option<f64>,
    pub map_current: Option<f64>,
    pub map_both: Option<f64>,
    pub wi: Option<f64>,
    pub a_ose: usize,
    pub ur: Option<f64>,
    pub per_class_ap: BTreeMap<CategoryId, f64>,
    /// Known classes with no ground-truth records, left out of every mean.
    pub undefined_ap_classes: Vec<CategoryId>,
}

/// AP of class `c`: its candidates are records predicted as `c`, ranked by
/// score with ties broken by sample id; the positives are all records whose
/// true category is `c`, so rejected or misclassified records cost recall.
fn class_ap(records: &[EvalRecord], c: CategoryId) -> Result<f64> {
    let mut candidates: Vec<&EvalRecord> = records
        .iter()
        .filter(|r| r.prediction.label == Label::Known(c))
        .collect();
    candidates.sort_by(|a, b| {
        b.prediction
            .score
            .total_cmp(&a.prediction.score)
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    let ranked: Vec<(f64, bool)> = candidates
        .iter()
        .map(|r| (r.prediction.score, r.true_category == c))
        .collect();
    let positives = records.iter().filter(|r| r.true_category == c).count();
    if positives == 0 {
        return Err(Error::UndefinedAp(c));
    }
    average_precision(&ranked, positives)
}

fn mean_over(per_class: &BTreeMap<CategoryId, f64>, classes: &[CategoryId]) -> Option<f64> {
    let aps: Vec<f64> = classes
        .iter()
        .filter_map(|c| per_class.get(c).copied())
        .collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Metrics after task `t`. The previous / current / both means run over
/// classes learned before `t`, in `t`, and up to `t`. Wilderness impact
/// compares the precision of known-class predictions on known records with
/// the same precision once unknown records claimed as known are counted.
pub fn build_report(
    records: &[EvalRecord],
    schedule: &TaskSchedule,
    t: u32,
) -> Result<MetricsReport> {
    let previous = schedule.previous(t)?;
    let current = schedule.task(t)?.categories.clone();
    let known: BTreeSet<CategoryId> = schedule.known(t)?;

    let mut per_class_ap = BTreeMap::new();
    let mut undefined_ap_classes = Vec::new();
    for &c in &known {
        match class_ap(records, c) {
            Ok(ap) => {
                per_class_ap.insert(c, ap);
            }
            Err(Error::UndefinedAp(c)) => undefined_ap_classes.push(c),
            Err(e) => return Err(e),
        }
    }
    let known_vec: Vec<CategoryId> = known.iter().copied().collect();

    let claimed_on_known: Vec<&EvalRecord> = records
        .iter()
        .filter(|r| r.true_status == TrueStatus::Known && !r.prediction.label.is_unknown())
        .collect();
    let correct = claimed_on_known
        .iter()
        .filter(|r| r.prediction.label == Label::Known(r.true_category))
        .count();
    let open_set_errors = a_ose(records);
    let wi = if claimed_on_known.is_empty() {
        None
    } else {
        let p_k = correct as f64 / claimed_on_known.len() as f64;
        let p_ku = correct as f64 / (claimed_on_known.len() + open_set_errors) as f64;
        // Zero correct claims leaves both precisions at 0; report absent.
        (p_ku > 0.0)
            .then(|| wilderness_impact(p_k, p_ku))
            .transpose()?
    };

    Ok(MetricsReport {
        task_id: t,
        map_previous: mean_over(&per_class_ap, &previous),
        map_current: mean_over(&per_class_ap, &current),
        map_both: mean_over(&per_class_ap, &known_vec),
        wi,
        a_ose: open_set_errors,
        ur: unknown_recall(records),
        per_class_ap,
        undefined_ap_classes,
    })
}
