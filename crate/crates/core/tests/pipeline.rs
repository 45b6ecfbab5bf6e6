//! Generated cohort -> files -> ingestion -> mining -> refinement.

mod common;

use common::scenario::{self, proportion_se, run_pipeline};
use rulefine::synth::{background_match_rate, expected_filter_rate, Cause};

#[test]
fn confounded_instances_are_mostly_expected() {
    let config = scenario::confounded(11, 20_000);
    let dir = tempfile::tempdir().unwrap();
    let (cohort, report) = run_pipeline(&config, dir.path());

    assert!(report.instance_count > 0);
    assert!(report.hoi_rule_count > 0);
    assert!(report.adjusted_risk <= report.absolute_risk);
    let rate = expected_filter_rate(&config);
    let n = report.instance_count;
    let observed = report.expected_count as f64 / n as f64;
    assert!(
        (observed - rate).abs() <= 4.0 * proportion_se(rate, n),
        "{observed} vs {rate} over {n}"
    );
    // every instance in this scenario comes from the condition
    let (scanned, _) = scenario::scan_confounder_instances(&config, &cohort);
    assert_eq!(scanned, n);
}

#[test]
fn planted_reaction_is_mostly_unexplained() {
    let config = scenario::planted_adr(12, 20_000);
    let dir = tempfile::tempdir().unwrap();
    let (cohort, report) = run_pipeline(&config, dir.path());
    let adr_outcomes = cohort
        .truth
        .iter()
        .filter(|t| t.cause == Cause::Adr)
        .count();
    assert_eq!(report.instance_count, adr_outcomes);
    let rate = background_match_rate(&config).unwrap();
    let n = report.instance_count;
    let expected = n as f64 * rate;
    let sd = (n as f64 * rate * (1.0 - rate)).sqrt();
    assert!(
        (report.expected_count as f64 - expected).abs() <= 4.0 * sd.max(1.0),
        "{} vs {expected}",
        report.expected_count
    );
}

#[test]
fn no_matching_rules_leaves_risk_unchanged() {
    let mut config = scenario::planted_adr(13, 5_000);
    config.confounder = None;
    let dir = tempfile::tempdir().unwrap();
    let (_, report) = run_pipeline(&config, dir.path());
    assert_eq!(report.matched_count, 0);
    assert!(report.matched_averages_undefined);
    assert_eq!(report.adjusted_risk, report.absolute_risk);
}

#[test]
fn fully_explained_signal_has_zero_adjusted_risk() {
    let mut config = scenario::confounded(14, 20_000);
    config.confounder.as_mut().unwrap().record_probability = 1.0;
    let dir = tempfile::tempdir().unwrap();
    let (_, report) = run_pipeline(&config, dir.path());
    assert!(report.instance_count > 0);
    assert_eq!(report.expected_count, report.instance_count);
    assert_eq!(report.adjusted_risk, 0.0);
}
