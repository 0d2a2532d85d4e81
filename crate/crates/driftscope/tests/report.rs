use std::collections::BTreeMap;

use driftscope::config::ExperimentConfig;
use driftscope::report::{
    correlate_experiment, emit_report, read_report, render_tables, DomainKey, DomainShiftReport, F1Stat, LayerScore,
    ProtocolSummary, ReportInputs, ScoreStat, Timestamps, DOMAINS_CSV, LAYERS_CSV, REPORT_JSON,
};
use driftscope::AppError;
use driftscope_core::shift::ShiftKind;
use proptest::prelude::*;

const LAYERS: [&str; 2] = ["enc1", "bottleneck"];

fn stat(per_set: Vec<f64>) -> ScoreStat {
    ScoreStat::from_sets(per_set, 10, "mean over sets")
}

/// Inputs for `n` domains: the source plus `n - 1` blur severities.
/// `values[i]` supplies (likelihood, dss, f1) for domain `i`.
fn inputs(values: &[(f64, f64, f64)]) -> ReportInputs {
    let cfg = ExperimentConfig::default();
    let mut domains = vec![DomainKey::source()];
    for i in 1..values.len() {
        domains.push(DomainKey::shifted(ShiftKind::Blur, i, i as f64 * 0.5));
    }
    let (mut lik, mut dss, mut f1) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    for (d, &(l, s, f)) in domains.iter().zip(values) {
        lik.insert(d.domain_id.clone(), stat(vec![l, l * 1.1]));
        dss.insert(
            d.domain_id.clone(),
            LAYERS.iter().map(|&name| LayerScore { layer: name.into(), filters: 16, score: stat(vec![s, s * 0.9]) }).collect(),
        );
        f1.insert(d.domain_id.clone(), F1Stat { score: stat(vec![f, f - 0.01]), undefined_sets: 0 });
    }
    ReportInputs {
        seed: 11,
        protocol: ProtocolSummary {
            sets: 2,
            patches_per_set: 10,
            likelihood_statistic: cfg.density.statistic,
            tile: cfg.density.tile,
            headline_layer: "bottleneck".into(),
            layers: LAYERS.iter().map(|s| s.to_string()).collect(),
            dss_pairing: "paired".into(),
            f1_aggregation: "pooled".into(),
        },
        config: cfg,
        domains,
        likelihood_w1: lik,
        dss,
        f1,
        distributions: Vec::new(),
        timestamps: None,
    }
}

fn four_domains() -> DomainShiftReport {
    correlate_experiment(inputs(&[(0.02, 0.0, 0.95), (0.4, 0.01, 0.93), (0.9, 0.03, 0.85), (1.7, 0.05, 0.7)])).unwrap()
}

#[test]
fn four_domains_give_four_rows_and_a_header() {
    let r = four_domains();
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&r, dir.path()).unwrap();
    assert_eq!(written.len(), 3);
    let csv = std::fs::read_to_string(dir.path().join(DOMAINS_CSV)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0], "domain_id,severity,likelihood_w1,dss_mean,dss_std,f1_mean,f1_std");
    assert!(lines[1].starts_with("source,0,"));
    assert!(lines[2].starts_with("blur@0.5,0.5,"));
    let layers = std::fs::read_to_string(dir.path().join(LAYERS_CSV)).unwrap();
    assert_eq!(layers.lines().count(), 4 * LAYERS.len() + 1);
}

#[test]
fn report_round_trips_through_disk() {
    let mut r = four_domains();
    r.timestamps = Some(Timestamps { started_unix_ms: 1_700_000_000_000, finished_unix_ms: 1_700_000_000_250 });
    let dir = tempfile::tempdir().unwrap();
    emit_report(&r, dir.path()).unwrap();
    assert_eq!(read_report(&dir.path().join(REPORT_JSON)).unwrap(), r);
}

#[test]
fn correlations_match_the_domain_columns() {
    let r = four_domains();
    let lik = r.correlation("likelihood_w1").unwrap();
    assert_eq!(lik.points, 4);
    assert!(lik.pearson.unwrap() < -0.9);
    assert_eq!(lik.spearman, Some(-1.0));
    let dss = r.headline_correlation().unwrap();
    assert_eq!(dss.score, "dss:bottleneck");
    assert_eq!(dss.spearman, Some(-1.0));
    assert!(dss.pearson.unwrap() <= -0.9);
    assert_eq!(r.correlations.len(), 1 + LAYERS.len());
}

#[test]
fn empty_optional_fields_are_omitted() {
    let r = four_domains();
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    let obj = v.as_object().unwrap();
    assert!(!obj.contains_key("timestamps"));
    assert!(!obj.contains_key("distributions"));
    let source = &v["domains"][0];
    assert_eq!(source["domain_id"], "source");
    assert!(source.get("kind").is_none());
    assert_eq!(v["domains"][1]["kind"], "blur");
    let c = &v["correlations"][0];
    assert!(c.get("omitted_reason").is_none());
    assert!(c.get("pearson").is_some());
}

#[test]
fn too_few_domains_omit_correlations_with_a_reason() {
    let r = correlate_experiment(inputs(&[(0.02, 0.0, 0.95)])).unwrap();
    for c in &r.correlations {
        assert_eq!((c.pearson, c.spearman), (None, None));
        assert!(c.omitted_reason.as_deref().unwrap().contains("at least 3"), "{c:?}");
    }
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert!(v["correlations"][0].get("pearson").is_none());
}

#[test]
fn constant_score_column_omits_the_correlation() {
    let r = correlate_experiment(inputs(&[(0.5, 0.0, 0.95), (0.5, 0.01, 0.9), (0.5, 0.02, 0.8)])).unwrap();
    let lik = r.correlation("likelihood_w1").unwrap();
    assert!(lik.pearson.is_none() && lik.omitted_reason.is_some());
    assert!(r.headline_correlation().unwrap().pearson.is_some());
}

#[test]
fn mismatched_branch_keys_are_rejected() {
    let mut i = inputs(&[(0.02, 0.0, 0.95), (0.4, 0.01, 0.93), (0.9, 0.03, 0.85)]);
    i.f1.remove("blur@1");
    let extra = i.dss["source"].clone();
    i.dss.insert("contrast@9".into(), extra);
    let err = correlate_experiment(i).unwrap_err();
    assert!(matches!(err, AppError::Protocol(_)));
    let msg = err.to_string();
    assert!(msg.contains("f1: missing `blur@1`"), "{msg}");
    assert!(msg.contains("dss: unexpected `contrast@9`"), "{msg}");
}

#[test]
fn unknown_schema_version_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = four_domains();
    r.schema_version = 99;
    let path = dir.path().join(REPORT_JSON);
    std::fs::write(&path, r.to_json()).unwrap();
    let err = read_report(&path).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    std::fs::write(&path, "{").unwrap();
    assert_eq!(read_report(&path).unwrap_err().exit_code(), 3);
}

#[test]
fn render_tables_matches_emit_report() {
    let r = four_domains();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_report(&r, a.path()).unwrap();
    render_tables(&read_report(&a.path().join(REPORT_JSON)).unwrap(), b.path()).unwrap();
    for name in [DOMAINS_CSV, LAYERS_CSV] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_scores_round_trip_exactly(
        values in prop::collection::vec((0.0f64..1e3, 0.0f64..10.0, 0.0f64..=1.0), 1..8),
    ) {
        let r = correlate_experiment(inputs(&values)).unwrap();
        let back: DomainShiftReport = serde_json::from_str(&r.to_json()).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(back.to_json(), r.to_json());
    }
}
