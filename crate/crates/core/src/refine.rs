//! Refinement of signal instances against outcome rules.
//!
//! An instance is *expected* when the patient's history before the outcome
//! contains the antecedent of an outcome rule whose lift exceeds the
//! threshold: the outcome then has a plausible explanation other than the
//! drug. Expected instances are removed from the numerator of the
//! confounding-adjusted risk.

use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    basket::pre_outcome_basket,
    codes::{Item, ReadCode, READ_ITEM_LEVEL},
    error::{Error, Result},
    events::EventStore,
    mining::{fmt_real, AssociationRule},
    signal::{ab_ratio, exposure_count, find_instances, AbRatio, SignalInstance, SignalSpec},
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    pub lift_threshold: f64,
    pub include_same_day: bool,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            lift_threshold: 1.0,
            include_same_day: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceAssessment {
    #[serde(flatten)]
    pub instance: SignalInstance,
    pub matched_rule_count: usize,
    pub max_confidence: f64,
    pub max_lift: f64,
    pub max_chi_squared: f64,
    pub expected: bool,
}

/// Rules whose consequent is the level-3 ancestor of `hoi`.
pub fn extract_hoi_rules(rules: &[AssociationRule], hoi: &ReadCode) -> Vec<AssociationRule> {
    let target = Item::read(&hoi.truncate(READ_ITEM_LEVEL).expect("valid level"));
    rules
        .iter()
        .filter(|r| r.consequent == target)
        .cloned()
        .collect()
}

pub fn classify_expected(a: &InstanceAssessment, lift_threshold: f64) -> bool {
    a.matched_rule_count > 0 && a.max_lift > lift_threshold
}

/// Matches the patient's pre-outcome basket against `hoi_rules` and takes
/// the maxima of the matched rules' measures.
pub fn assess_instance(
    instance: &SignalInstance,
    hoi_rules: &[AssociationRule],
    store: &EventStore,
    params: &RefineParams,
) -> Result<InstanceAssessment> {
    let patient = store.patient(&instance.patient_id).ok_or_else(|| {
        Error::domain(format!(
            "instance refers to unknown patient {:?}",
            instance.patient_id
        ))
    })?;
    let basket = pre_outcome_basket(&patient, instance.hoi_date, params.include_same_day);
    let mut a = InstanceAssessment {
        instance: instance.clone(),
        matched_rule_count: 0,
        max_confidence: 0.0,
        max_lift: 0.0,
        max_chi_squared: 0.0,
        expected: false,
    };
    for rule in hoi_rules.iter().filter(|r| r.antecedent.is_subset(&basket)) {
        a.matched_rule_count += 1;
        a.max_confidence = a.max_confidence.max(rule.confidence);
        a.max_lift = a.max_lift.max(rule.lift);
        a.max_chi_squared = a.max_chi_squared.max(rule.chi_squared);
    }
    a.expected = classify_expected(&a, params.lift_threshold);
    Ok(a)
}

/// Absolute and confounding-adjusted risk from the three counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub exposure_count: usize,
    pub instance_count: usize,
    pub expected_count: usize,
    pub absolute_risk: f64,
    pub adjusted_risk: f64,
}

impl RiskSummary {
    pub fn new(
        instance_count: usize,
        expected_count: usize,
        exposure_count: usize,
    ) -> Result<Self> {
        if exposure_count == 0 {
            return Err(Error::domain(
                "risk is undefined: no patients were exposed to the drug",
            ));
        }
        if expected_count > instance_count || instance_count > exposure_count {
            return Err(Error::domain(format!(
                "inconsistent counts: expected {expected_count}, instances {instance_count}, exposed {exposure_count}"
            )));
        }
        let exposed = exposure_count as f64;
        Ok(RiskSummary {
            exposure_count,
            instance_count,
            expected_count,
            absolute_risk: instance_count as f64 / exposed,
            adjusted_risk: (instance_count - expected_count) as f64 / exposed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalReport {
    pub spec: SignalSpec,
    pub params: RefineParams,
    pub ab_ratio: AbRatio,
    pub hoi_rule_count: usize,
    pub exposure_count: usize,
    pub instance_count: usize,
    pub matched_count: usize,
    pub expected_count: usize,
    pub absolute_risk: f64,
    pub adjusted_risk: f64,
    pub avg_max_confidence_all: f64,
    pub avg_max_chi_all: f64,
    pub avg_max_confidence_matched: f64,
    pub avg_max_chi_matched: f64,
    /// No instance matched a rule, so the matched-only averages are
    /// reported as 0.
    pub matched_averages_undefined: bool,
    pub assessments: Vec<InstanceAssessment>,
}

impl SignalReport {
    pub fn risk(&self) -> RiskSummary {
        RiskSummary {
            exposure_count: self.exposure_count,
            instance_count: self.instance_count,
            expected_count: self.expected_count,
            absolute_risk: self.absolute_risk,
            adjusted_risk: self.adjusted_risk,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs refinement for one signal. `store` must already have the
/// prescription exclusions applied. When `instances` is `None` they are
/// found with [`find_instances`].
pub fn refine(
    spec: &SignalSpec,
    rules: &[AssociationRule],
    store: &EventStore,
    params: &RefineParams,
    instances: Option<Vec<SignalInstance>>,
) -> Result<SignalReport> {
    let hoi_rules = extract_hoi_rules(rules, &spec.hoi);
    let instances = instances.unwrap_or_else(|| find_instances(spec, store));
    let exposed = spec
        .exposure_count
        .unwrap_or_else(|| exposure_count(&spec.doi, store));

    let assessments = instances
        .par_iter()
        .map(|i| assess_instance(i, &hoi_rules, store, params))
        .collect::<Result<Vec<_>>>()?;

    let matched_count = assessments
        .iter()
        .filter(|a| a.matched_rule_count > 0)
        .count();
    let expected_count = assessments.iter().filter(|a| a.expected).count();
    let risk = RiskSummary::new(assessments.len(), expected_count, exposed)?;
    let matched = || assessments.iter().filter(|a| a.matched_rule_count > 0);

    Ok(SignalReport {
        spec: spec.clone(),
        params: *params,
        ab_ratio: ab_ratio(spec, store),
        hoi_rule_count: hoi_rules.len(),
        exposure_count: exposed,
        instance_count: risk.instance_count,
        matched_count,
        expected_count,
        absolute_risk: risk.absolute_risk,
        adjusted_risk: risk.adjusted_risk,
        avg_max_confidence_all: mean(assessments.iter().map(|a| a.max_confidence)).unwrap_or(0.0),
        avg_max_chi_all: mean(assessments.iter().map(|a| a.max_chi_squared)).unwrap_or(0.0),
        avg_max_confidence_matched: mean(matched().map(|a| a.max_confidence)).unwrap_or(0.0),
        avg_max_chi_matched: mean(matched().map(|a| a.max_chi_squared)).unwrap_or(0.0),
        matched_averages_undefined: matched_count == 0,
        assessments,
    })
}

pub fn write_report_json<W: io::Write>(out: W, report: &SignalReport) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(out, report)
}

/// Single summary row: `hoi,read_code,ab_ratio,instances,risk,confounding_adjusted_risk`.
pub fn write_report_csv<W: io::Write>(out: W, report: &SignalReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "hoi",
        "read_code",
        "ab_ratio",
        "instances",
        "risk",
        "confounding_adjusted_risk",
    ])?;
    let code = report.spec.hoi.to_string();
    w.write_record([
        report.spec.name.clone().unwrap_or_else(|| code.clone()),
        code,
        fmt_real(report.ab_ratio.ratio),
        report.instance_count.to_string(),
        fmt_real(report.absolute_risk),
        fmt_real(report.adjusted_risk),
    ])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(antecedent: &[&str], consequent: &str, lift: f64) -> AssociationRule {
        AssociationRule {
            antecedent: antecedent.iter().map(|s| Item::parse(s).unwrap()).collect(),
            consequent: Item::parse(consequent).unwrap(),
            left_support: 0.01,
            support: 0.001,
            confidence: 0.1,
            lift,
            chi_squared: 10.0,
        }
    }

    #[test]
    fn extracts_level_three_rules() {
        let rules = vec![
            rule(&["A...."], "B57..", 2.0),
            rule(&["A...."], "AB2..", 2.0),
            rule(&["C...."], "B57..", 2.0),
        ];
        let hoi = ReadCode::parse("B572.").unwrap();
        assert_eq!(extract_hoi_rules(&rules, &hoi).len(), 2);
        let hoi = ReadCode::parse("AB2..").unwrap();
        assert_eq!(extract_hoi_rules(&rules, &hoi).len(), 1);
        assert!(extract_hoi_rules(&[], &hoi).is_empty());
    }

    fn assessment(matched: usize, max_lift: f64) -> InstanceAssessment {
        InstanceAssessment {
            instance: SignalInstance {
                patient_id: "1".into(),
                doi_date: chrono::NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(),
                hoi_date: chrono::NaiveDate::from_ymd_opt(2001, 1, 2).unwrap(),
            },
            matched_rule_count: matched,
            max_confidence: 0.0,
            max_lift,
            max_chi_squared: 0.0,
            expected: false,
        }
    }

    #[test]
    fn expected_needs_lift_above_threshold() {
        assert!(classify_expected(&assessment(1, 1.4), 1.0));
        assert!(!classify_expected(&assessment(1, 1.0), 1.0));
        assert!(!classify_expected(&assessment(0, 0.0), 1.0));
    }

    #[test]
    fn risk_arithmetic() {
        let r = RiskSummary::new(4, 3, 25).unwrap();
        assert_eq!(r.absolute_risk, 4.0 / 25.0);
        assert_eq!(r.adjusted_risk, 0.04);
        let r = RiskSummary::new(9, 0, 258397).unwrap();
        assert_eq!(r.adjusted_risk, r.absolute_risk);
        assert!(matches!(RiskSummary::new(0, 0, 0), Err(Error::Domain(_))));
        assert!(RiskSummary::new(3, 4, 25).is_err());
    }
}
