//! Quantitative evaluation: joint goal accuracy with seen/unseen breakdown,
//! leave-one-out averages, schema-variant robustness statistics, and
//! Student-t confidence intervals across prompt versions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::codec::ParsedState;
use crate::corpus::{DialogueState, ServiceSchema, VariantId};
use crate::error::{Error, Result};

/// Policy for comparing a predicted value against an accepted gold value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchPolicy {
    /// Equality after trimming, collapsing whitespace runs, and case-folding.
    #[default]
    NormalizedExact,
    /// Byte equality.
    Exact,
}

impl MatchPolicy {
    pub fn matches(&self, predicted: &str, gold: &str) -> bool {
        match self {
            MatchPolicy::NormalizedExact => {
                crate::codec::normalize(predicted) == crate::codec::normalize(gold)
            }
            MatchPolicy::Exact => predicted == gold,
        }
    }
}

impl std::str::FromStr for MatchPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normalized-exact" => Ok(MatchPolicy::NormalizedExact),
            "exact" => Ok(MatchPolicy::Exact),
            other => Err(Error::Config(format!("unknown match policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchKind {
    /// Gold assigns the slot, prediction does not.
    Missing,
    /// Prediction assigns a slot gold leaves unset.
    Spurious,
    /// Both assign, values disagree.
    WrongValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotMismatch {
    pub slot_name: String,
    pub kind: MismatchKind,
    pub predicted: Option<String>,
    pub gold: Option<String>,
}

/// The verdict for one (dialogue, turn, service) frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnJudgement {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub service_name: String,
    pub correct: bool,
    pub mismatches: Vec<SlotMismatch>,
}

impl TurnJudgement {
    pub fn turn_key(&self) -> (String, usize, String) {
        (
            self.dialogue_id.clone(),
            self.turn_index,
            self.service_name.clone(),
        )
    }
}

/// Joint comparison of a predicted state against gold for one frame.
///
/// The frame is correct only when every gold slot is predicted with a value
/// matching one of its accepted surface forms, and no slot outside gold is
/// predicted.
pub fn judge_turn(
    dialogue_id: &str,
    turn_index: usize,
    predicted: &ParsedState,
    gold: &DialogueState,
    schema: &ServiceSchema,
    matcher: MatchPolicy,
) -> TurnJudgement {
    let mut mismatches = Vec::new();

    for (slot, accepted) in &gold.assignments {
        match predicted.assignments.get(slot) {
            None => mismatches.push(SlotMismatch {
                slot_name: slot.clone(),
                kind: MismatchKind::Missing,
                predicted: None,
                gold: accepted.first().cloned(),
            }),
            Some(value) => {
                if !accepted.iter().any(|g| matcher.matches(value, g)) {
                    mismatches.push(SlotMismatch {
                        slot_name: slot.clone(),
                        kind: MismatchKind::WrongValue,
                        predicted: Some(value.clone()),
                        gold: accepted.first().cloned(),
                    });
                }
            }
        }
    }
    for (slot, value) in &predicted.assignments {
        if !gold.assignments.contains_key(slot) {
            mismatches.push(SlotMismatch {
                slot_name: slot.clone(),
                kind: MismatchKind::Spurious,
                predicted: Some(value.clone()),
                gold: None,
            });
        }
    }

    TurnJudgement {
        dialogue_id: dialogue_id.to_string(),
        turn_index,
        service_name: schema.service_name.clone(),
        correct: mismatches.is_empty(),
        mismatches,
    }
}

/// Joint goal accuracy over a set of judgements, as a percentage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

/// JGA with the seen/unseen service breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JgaBreakdown {
    pub all: Accuracy,
    pub seen: Accuracy,
    pub unseen: Accuracy,
    pub per_service: BTreeMap<String, Accuracy>,
}

impl JgaBreakdown {
    pub fn jga_all(&self) -> f64 {
        self.all.percent()
    }
    pub fn jga_seen(&self) -> Option<f64> {
        (self.seen.total > 0).then(|| self.seen.percent())
    }
    pub fn jga_unseen(&self) -> Option<f64> {
        (self.unseen.total > 0).then(|| self.unseen.percent())
    }
}

/// Aggregates judgements into overall, seen/unseen, and per-service JGA.
///
/// A service is "seen" when its name appears in the training split's schema
/// set. Buckets partition the judgements, so seen + unseen counts always sum
/// to the total.
pub fn compute_jga(
    judgements: &[TurnJudgement],
    seen_services: &BTreeSet<String>,
) -> Result<JgaBreakdown> {
    if judgements.is_empty() {
        return Err(Error::UndefinedMetric(
            "JGA over an empty judgement list is undefined".into(),
        ));
    }
    let mut all = Accuracy {
        correct: 0,
        total: 0,
    };
    let mut seen = Accuracy {
        correct: 0,
        total: 0,
    };
    let mut unseen = Accuracy {
        correct: 0,
        total: 0,
    };
    let mut per_service: BTreeMap<String, Accuracy> = BTreeMap::new();

    for j in judgements {
        let hit = usize::from(j.correct);
        all.total += 1;
        all.correct += hit;
        let bucket = if seen_services.contains(&j.service_name) {
            &mut seen
        } else {
            &mut unseen
        };
        bucket.total += 1;
        bucket.correct += hit;
        let entry = per_service
            .entry(j.service_name.clone())
            .or_insert(Accuracy {
                correct: 0,
                total: 0,
            });
        entry.total += 1;
        entry.correct += hit;
    }

    Ok(JgaBreakdown {
        all,
        seen,
        unseen,
        per_service,
    })
}

/// Rounds to one decimal place, the precision used in reports.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Relative JGA difference between the original schemas and the variant
/// mean: `100 * (variant_mean - orig) / orig`, rounded to one decimal.
pub fn compute_rel_diff(jga_orig: f64, jga_variants_mean: f64) -> Result<f64> {
    if jga_orig <= 0.0 {
        return Err(Error::UndefinedMetric(
            "relative difference is undefined for a zero original JGA".into(),
        ));
    }
    Ok(round1(100.0 * (jga_variants_mean - jga_orig) / jga_orig))
}

/// Granularity at which schema sensitivity aggregates its coefficients of
/// variation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityGranularity {
    /// CV of per-service JGA across variants, averaged over services.
    #[default]
    PerService,
    /// CV of per-turn correctness across variants, averaged over turns.
    PerTurn,
}

impl std::str::FromStr for SensitivityGranularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "per-service" => Ok(SensitivityGranularity::PerService),
            "per-turn" => Ok(SensitivityGranularity::PerTurn),
            other => Err(Error::Config(format!(
                "unknown sensitivity granularity '{other}'"
            ))),
        }
    }
}

fn population_cv(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    variance.sqrt() / mean
}

/// Schema sensitivity: dispersion of JGA across the five schema variants.
/// Lower is more robust.
///
/// At the default per-service granularity this is
/// `100 * mean over services of (population std / mean)` of the five
/// per-service JGA values. Groups with zero mean contribute zero. All five
/// variants must be present with identical turn-key sets.
pub fn compute_schema_sensitivity(
    per_variant: &BTreeMap<VariantId, Vec<TurnJudgement>>,
    granularity: SensitivityGranularity,
) -> Result<f64> {
    for variant in VariantId::VARIANTS {
        if !per_variant.contains_key(&variant) {
            return Err(Error::Alignment(format!(
                "variant {variant} has no judgements"
            )));
        }
    }

    let reference: BTreeSet<_> = per_variant[&VariantId::V1]
        .iter()
        .map(|j| j.turn_key())
        .collect();
    for variant in VariantId::VARIANTS {
        let keys: BTreeSet<_> = per_variant[&variant].iter().map(|j| j.turn_key()).collect();
        if keys != reference {
            return Err(Error::Alignment(format!(
                "variant {variant} covers a different turn set than v1 ({} vs {} turns)",
                keys.len(),
                reference.len()
            )));
        }
    }

    match granularity {
        SensitivityGranularity::PerService => {
            let services: BTreeSet<String> = reference.iter().map(|k| k.2.clone()).collect();
            if services.is_empty() {
                return Err(Error::UndefinedMetric(
                    "schema sensitivity over zero services is undefined".into(),
                ));
            }
            let mut cv_sum = 0.0;
            for service in &services {
                let jgas: Vec<f64> = VariantId::VARIANTS
                    .iter()
                    .map(|variant| {
                        let js: Vec<_> = per_variant[variant]
                            .iter()
                            .filter(|j| &j.service_name == service)
                            .collect();
                        let correct = js.iter().filter(|j| j.correct).count();
                        100.0 * correct as f64 / js.len() as f64
                    })
                    .collect();
                cv_sum += population_cv(&jgas);
            }
            Ok(100.0 * cv_sum / services.len() as f64)
        }
        SensitivityGranularity::PerTurn => {
            if reference.is_empty() {
                return Err(Error::UndefinedMetric(
                    "schema sensitivity over zero turns is undefined".into(),
                ));
            }
            let mut maps: BTreeMap<VariantId, BTreeMap<(String, usize, String), bool>> =
                BTreeMap::new();
            for variant in VariantId::VARIANTS {
                maps.insert(
                    variant,
                    per_variant[&variant]
                        .iter()
                        .map(|j| (j.turn_key(), j.correct))
                        .collect(),
                );
            }
            let mut cv_sum = 0.0;
            for key in &reference {
                let values: Vec<f64> = VariantId::VARIANTS
                    .iter()
                    .map(|v| if maps[v][key] { 1.0 } else { 0.0 })
                    .collect();
                cv_sum += population_cv(&values);
            }
            Ok(100.0 * cv_sum / reference.len() as f64)
        }
    }
}

/// Mean and 95% confidence-interval half width over repeated trials, using
/// the Student's-t distribution with n-1 degrees of freedom.
pub fn aggregate_trials(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "confidence interval needs at least 2 trials, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sample_var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sample_std = sample_var.sqrt();
    if sample_std == 0.0 {
        return Ok((mean, 0.0));
    }
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::UndefinedMetric(format!("t distribution: {e}")))?
        .inverse_cdf(0.975);
    Ok((mean, t * sample_std / n.sqrt()))
}

/// Per-domain JGA plus the unweighted cross-domain average for the
/// leave-one-out setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOutReport {
    pub per_domain: BTreeMap<String, f64>,
    pub average: f64,
}

/// Computes per-holdout-domain JGA and their unweighted mean.
pub fn compute_leave_one_out(
    judgements_per_domain: &BTreeMap<String, Vec<TurnJudgement>>,
) -> Result<LeaveOneOutReport> {
    if judgements_per_domain.is_empty() {
        return Err(Error::UndefinedMetric("no holdout domains supplied".into()));
    }
    let mut per_domain = BTreeMap::new();
    for (domain, judgements) in judgements_per_domain {
        if judgements.is_empty() {
            return Err(Error::UndefinedMetric(format!(
                "holdout domain '{domain}' has no judgements"
            )));
        }
        let correct = judgements.iter().filter(|j| j.correct).count();
        per_domain.insert(
            domain.clone(),
            100.0 * correct as f64 / judgements.len() as f64,
        );
    }
    let average = per_domain.values().sum::<f64>() / per_domain.len() as f64;
    Ok(LeaveOneOutReport {
        per_domain,
        average,
    })
}

/// Everything a single evaluation run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub jga_all: f64,
    pub jga_seen: Option<f64>,
    pub jga_unseen: Option<f64>,
    pub counts: ReportCounts,
    pub per_domain: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<ConfidenceInterval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub total: usize,
    pub correct: usize,
    pub seen: usize,
    pub unseen: usize,
}

/// The robustness table row: original JGA, variant mean, relative
/// difference, and schema sensitivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub jga_orig: f64,
    pub jga_variants: BTreeMap<VariantId, f64>,
    pub jga_variant_mean: f64,
    pub rel_diff: f64,
    pub ss_jga: f64,
    pub granularity: SensitivityGranularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_breakdown(b: &JgaBreakdown) -> Self {
        MetricsReport {
            jga_all: b.jga_all(),
            jga_seen: b.jga_seen(),
            jga_unseen: b.jga_unseen(),
            counts: ReportCounts {
                total: b.all.total,
                correct: b.all.correct,
                seen: b.seen.total,
                unseen: b.unseen.total,
            },
            per_domain: b
                .per_service
                .iter()
                .map(|(k, v)| (k.clone(), v.percent()))
                .collect(),
            robustness: None,
            ci: None,
        }
    }

    /// Human-readable rendering: aligned metric rows at table precision.
    pub fn to_table(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map(|v| format!("{:.1}", round1(v)))
                .unwrap_or_else(|| "-".into())
        }
        let mut out = String::new();
        out.push_str("metric            value\n");
        out.push_str(&format!("JGA all           {}\n", cell(Some(self.jga_all))));
        out.push_str(&format!("JGA seen          {}\n", cell(self.jga_seen)));
        out.push_str(&format!("JGA unseen        {}\n", cell(self.jga_unseen)));
        out.push_str(&format!(
            "turns             {} ({} correct)\n",
            self.counts.total, self.counts.correct
        ));
        if !self.per_domain.is_empty() {
            out.push_str("per-domain JGA\n");
            for (domain, jga) in &self.per_domain {
                out.push_str(&format!("  {domain:<16}{}\n", cell(Some(*jga))));
            }
        }
        if let Some(r) = &self.robustness {
            out.push_str(&format!("JGA orig          {}\n", cell(Some(r.jga_orig))));
            for (variant, jga) in &r.jga_variants {
                out.push_str(&format!("JGA {variant:<14}{}\n", cell(Some(*jga))));
            }
            out.push_str(&format!(
                "JGA v1-5 mean     {}\n",
                cell(Some(r.jga_variant_mean))
            ));
            out.push_str(&format!("Diff_rel          {}\n", cell(Some(r.rel_diff))));
            out.push_str(&format!("SS_JGA            {}\n", cell(Some(r.ss_jga))));
        }
        if let Some(ci) = &self.ci {
            out.push_str(&format!(
                "JGA mean ± CI95   {:.2} ± {:.2} (n={})\n",
                ci.mean, ci.half_width, ci.n
            ));
        }
        out
    }
}
