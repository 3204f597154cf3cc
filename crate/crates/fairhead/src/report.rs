//! Structured report document plus flat tables and static plots.
//!
//! The document is one JSON file with a pinned schema version; each present
//! section additionally lands as a comma-separated table, and mitigation and
//! fairness comparisons get grouped-bar SVG plots. Deltas and AUPRC values
//! render as percentage points with one decimal; threshold-analysis rates
//! keep three decimals. Reruns with identical inputs produce byte-identical
//! tables and plots; only the document timestamp moves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::Axis;
use crate::detect::{DirectionTable, FairnessReport, LeakageResult, PrevalenceTable};
use crate::metrics::RunAggregate;
use crate::mitigate::ActiveLearningRound;

pub const REPORT_SCHEMA: &str = "fairhead-report/1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unsupported report schema `{0}`")]
    BadSchema(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Full effective configuration: defaults plus overrides.
    pub config: BTreeMap<String, String>,
    /// SHA-256 over the canonical `key=value` config lines.
    pub config_hash: String,
    /// Excluded from the reproducibility contract.
    pub created_unix: u64,
}

impl ReportMetadata {
    pub fn new(seed: u64, threads: Option<usize>, config: BTreeMap<String, String>) -> Self {
        let canonical: String =
            config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let config_hash = hex_digest(canonical.as_bytes());
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        ReportMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads,
            config,
            config_hash,
            created_unix,
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// One strategy arm of a mitigation comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MitigationSection {
    pub strategy: String,
    pub aggregates: BTreeMap<String, RunAggregate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupRates {
    pub group: String,
    pub fnr: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Recall-constrained threshold analysis for one condition on a filtered
/// population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdSection {
    pub condition: String,
    pub axis: Axis,
    pub filter: Option<(String, String)>,
    pub recall_floor: f64,
    pub threshold: f64,
    pub overall_recall: f64,
    pub per_group: Vec<GroupRates>,
    pub delta_fnr: f64,
    pub delta_tpr: f64,
    pub delta_fpr: f64,
    pub eo_max_gap: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema: String,
    pub metadata: ReportMetadata,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prevalence: Option<PrevalenceTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leakage: Option<LeakageResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<DirectionTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fairness: Option<FairnessReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mitigation: Option<Vec<MitigationSection>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_analysis: Option<ThresholdSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_learning: Option<Vec<ActiveLearningRound>>,
}

impl ReportDocument {
    pub fn new(metadata: ReportMetadata) -> Self {
        ReportDocument { schema: REPORT_SCHEMA.to_string(), metadata, ..Default::default() }
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let doc: ReportDocument = serde_json::from_str(text)?;
        if doc.schema != REPORT_SCHEMA {
            return Err(ReportError::BadSchema(doc.schema));
        }
        Ok(doc)
    }
}

/// Percentage points with one decimal: 0.016 renders as "1.6".
fn pp(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn rate(v: f64) -> String {
    format!("{v:.3}")
}

/// Writes the document, its per-section tables, and plots. Empty sections
/// produce no files. Returns every path written.
pub fn emit_report(doc: &ReportDocument, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir)?;
    let tables = out_dir.join("tables");
    let plots = out_dir.join("plots");
    let mut written = Vec::new();

    let doc_path = out_dir.join("report.json");
    fs::write(&doc_path, serde_json::to_string_pretty(doc)? + "\n")?;
    written.push(doc_path);

    let write_table = |name: &str, content: String| -> Result<PathBuf, ReportError> {
        fs::create_dir_all(&tables)?;
        let path = tables.join(name);
        fs::write(&path, content)?;
        Ok(path)
    };

    if let Some(prevalence) = &doc.prevalence {
        let mut out = String::from("axis,group,condition,neg_share,pos_share,pos_rate\n");
        for row in &prevalence.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.1},{:.1},{:.1}",
                row.axis, row.group, row.condition, row.neg_share, row.pos_share, row.pos_rate
            );
        }
        written.push(write_table("prevalence.csv", out)?);
    }

    if let Some(leakage) = &doc.leakage {
        let mut out = String::from("attribute,auc\n");
        let _ = writeln!(out, "sex,{}", rate(leakage.sex_auc));
        let _ = writeln!(out, "age,{}", rate(leakage.age_auc));
        let _ = writeln!(out, "race,{}", rate(leakage.race_auc_macro));
        for (group, auc) in &leakage.race_per_group {
            let _ = writeln!(out, "race:{group},{}", rate(*auc));
        }
        written.push(write_table("leakage.csv", out)?);
    }

    if let Some(direction) = &doc.direction {
        let mut out = String::from("dimension,mean_abs_phi");
        if let Some(first) = direction.rows.first() {
            for (axis, _) in &first.directions {
                let _ = write!(out, ",{axis}");
            }
        }
        out.push('\n');
        for row in &direction.rows {
            let _ = write!(out, "{},{:.6}", row.dimension, row.mean_abs_phi);
            for (_, dir) in &row.directions {
                let _ = write!(out, ",{dir}");
            }
            out.push('\n');
        }
        written.push(write_table("direction.csv", out)?);
    }

    if let Some(fairness) = &doc.fairness {
        let mut out = String::from("condition,auprc,delta_sex,delta_age,delta_race\n");
        for cond in &fairness.conditions {
            let delta = |axis: Axis| {
                cond.subgroups
                    .iter()
                    .find(|s| s.axis == axis)
                    .map_or_else(|| "-".to_string(), |s| pp(s.delta))
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                cond.condition,
                pp(cond.auprc),
                delta(Axis::Sex),
                delta(Axis::Age),
                delta(Axis::Race)
            );
        }
        let _ = writeln!(
            out,
            "mean,{},{},{},{}",
            pp(fairness.mean_auprc),
            pp(fairness.mean_delta_sex),
            pp(fairness.mean_delta_age),
            pp(fairness.mean_delta_race)
        );
        written.push(write_table("fairness.csv", out)?);

        let mut groups_out = String::from("condition,axis,group,auprc\n");
        for cond in &fairness.conditions {
            for sub in &cond.subgroups {
                for (group, value) in &sub.per_group {
                    let _ = writeln!(
                        groups_out,
                        "{},{},{},{}",
                        cond.condition,
                        sub.axis,
                        group,
                        pp(*value)
                    );
                }
            }
        }
        written.push(write_table("fairness_groups.csv", groups_out)?);

        // AUPRC plus per-axis delta bars per condition.
        let clusters: Vec<String> =
            fairness.conditions.iter().map(|c| c.condition.clone()).collect();
        let series = vec![
            (
                "auprc".to_string(),
                fairness.conditions.iter().map(|c| c.auprc * 100.0).collect::<Vec<_>>(),
            ),
            (
                "delta_sex".to_string(),
                fairness
                    .conditions
                    .iter()
                    .map(|c| delta_of(c, Axis::Sex) * 100.0)
                    .collect(),
            ),
            (
                "delta_age".to_string(),
                fairness
                    .conditions
                    .iter()
                    .map(|c| delta_of(c, Axis::Age) * 100.0)
                    .collect(),
            ),
            (
                "delta_race".to_string(),
                fairness
                    .conditions
                    .iter()
                    .map(|c| delta_of(c, Axis::Race) * 100.0)
                    .collect(),
            ),
        ];
        let svg = grouped_bar_svg(
            "Performance and subgroup gaps per condition (percentage points)",
            &clusters,
            &series,
            None,
        );
        fs::create_dir_all(&plots)?;
        let path = plots.join("fairness.svg");
        fs::write(&path, svg)?;
        written.push(path);
    }

    if let Some(mitigation) = &doc.mitigation {
        if !mitigation.is_empty() {
            let mut out = String::from("strategy,metric,mean,std,ci_low,ci_high,n_runs\n");
            for section in mitigation {
                for (metric, agg) in &section.aggregates {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        section.strategy,
                        metric,
                        pp(agg.mean),
                        pp(agg.std),
                        pp(agg.ci_low),
                        pp(agg.ci_high),
                        agg.n_runs
                    );
                }
            }
            written.push(write_table("mitigation.csv", out)?);

            let metrics = ["mean_auprc", "delta_sex", "delta_age", "delta_race"];
            let clusters: Vec<String> = metrics.iter().map(|m| m.to_string()).collect();
            let series: Vec<(String, Vec<f64>)> = mitigation
                .iter()
                .map(|s| {
                    (
                        s.strategy.clone(),
                        metrics
                            .iter()
                            .map(|m| s.aggregates.get(*m).map_or(0.0, |a| a.mean * 100.0))
                            .collect(),
                    )
                })
                .collect();
            let intervals: Vec<Vec<(f64, f64)>> = mitigation
                .iter()
                .map(|s| {
                    metrics
                        .iter()
                        .map(|m| {
                            s.aggregates
                                .get(*m)
                                .map_or((0.0, 0.0), |a| (a.ci_low * 100.0, a.ci_high * 100.0))
                        })
                        .collect()
                })
                .collect();
            let svg = grouped_bar_svg(
                "Mitigation comparison (percentage points, 95% t-interval)",
                &clusters,
                &series,
                Some(&intervals),
            );
            fs::create_dir_all(&plots)?;
            let path = plots.join("mitigation.svg");
            fs::write(&path, svg)?;
            written.push(path);
        }
    }

    if let Some(threshold) = &doc.threshold_analysis {
        let mut out = String::from("group,fnr,tpr,fpr\n");
        for g in &threshold.per_group {
            let _ =
                writeln!(out, "{},{},{},{}", g.group, rate(g.fnr), rate(g.tpr), rate(g.fpr));
        }
        let _ = writeln!(
            out,
            "gaps,{},{},{}",
            rate(threshold.delta_fnr),
            rate(threshold.delta_tpr),
            rate(threshold.delta_fpr)
        );
        let _ = writeln!(out, "eo_max_gap,{},,", rate(threshold.eo_max_gap));
        let _ = writeln!(out, "threshold,{:.6},,", threshold.threshold);
        written.push(write_table("threshold.csv", out)?);
    }

    if let Some(history) = &doc.active_learning {
        let mut out = String::from("round,labeled,composite\n");
        for (round, entry) in history.iter().enumerate() {
            let composite =
                entry.composite.map_or_else(|| "-".to_string(), |c| format!("{c:.6}"));
            let _ = writeln!(out, "{round},{},{composite}", entry.labeled);
        }
        written.push(write_table("active_learning.csv", out)?);
    }

    Ok(written)
}

fn delta_of(cond: &crate::detect::ConditionReport, axis: Axis) -> f64 {
    cond.subgroups.iter().find(|s| s.axis == axis).map_or(0.0, |s| s.delta)
}

const PALETTE: [&str; 8] =
    ["#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c", "#dc7ec0", "#797979"];

/// Deterministic grouped-bar chart. `series` holds one legend entry and one
/// value per cluster; `intervals` optionally draws error bars.
pub fn grouped_bar_svg(
    title: &str,
    clusters: &[String],
    series: &[(String, Vec<f64>)],
    intervals: Option<&[Vec<(f64, f64)>]>,
) -> String {
    let width = 860.0;
    let height = 380.0;
    let margin_left = 64.0;
    let margin_right = 180.0;
    let margin_top = 48.0;
    let margin_bottom = 56.0;
    let plot_w = width - margin_left - margin_right;
    let plot_h = height - margin_top - margin_bottom;

    let mut max_v = 1e-9f64;
    for (_, values) in series {
        for v in values {
            max_v = max_v.max(*v);
        }
    }
    if let Some(iv) = intervals {
        for per_series in iv {
            for (_, hi) in per_series {
                max_v = max_v.max(*hi);
            }
        }
    }
    let y_max = max_v * 1.12;
    let y = |v: f64| margin_top + plot_h * (1.0 - (v / y_max).clamp(0.0, 1.0));

    let n_clusters = clusters.len().max(1);
    let n_series = series.len().max(1);
    let cluster_w = plot_w / n_clusters as f64;
    let bar_w = (cluster_w * 0.8) / n_series as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="15" font-weight="bold">{}</text>"#,
        margin_left,
        xml_escape(title)
    );

    // y grid and labels
    for tick in 0..=5 {
        let v = y_max * tick as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#dddddd"/>"##,
            margin_left,
            yy,
            margin_left + plot_w,
            yy
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{:.1}</text>"#,
            margin_left - 6.0,
            yy + 4.0,
            v
        );
    }

    for (ci, cluster) in clusters.iter().enumerate() {
        let x0 = margin_left + ci as f64 * cluster_w + cluster_w * 0.1;
        for (si, (_, values)) in series.iter().enumerate() {
            let v = values.get(ci).copied().unwrap_or(0.0);
            let x = x0 + si as f64 * bar_w;
            let yy = y(v.max(0.0));
            let h = (y(0.0) - yy).abs();
            let color = PALETTE[si % PALETTE.len()];
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{yy:.1}" width="{:.1}" height="{h:.1}" fill="{color}"/>"#,
                bar_w * 0.92
            );
            if let Some(iv) = intervals {
                if let Some((lo, hi)) = iv.get(si).and_then(|s| s.get(ci)) {
                    if hi > lo {
                        let cx = x + bar_w * 0.46;
                        let _ = writeln!(
                            svg,
                            r##"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="#333333" stroke-width="1.2"/>"##,
                            y(*hi),
                            y(*lo)
                        );
                    }
                }
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            margin_left + ci as f64 * cluster_w + cluster_w / 2.0,
            margin_top + plot_h + 20.0,
            xml_escape(cluster)
        );
    }

    // axis line and legend
    let _ = writeln!(
        svg,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#333333"/>"##,
        margin_left,
        y(0.0),
        margin_left + plot_w,
        y(0.0)
    );
    for (si, (name, _)) in series.iter().enumerate() {
        let yy = margin_top + 16.0 * si as f64;
        let x = margin_left + plot_w + 16.0;
        let color = PALETTE[si % PALETTE.len()];
        let _ = writeln!(svg, r#"<rect x="{x:.1}" y="{:.1}" width="11" height="11" fill="{color}"/>"#, yy);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            x + 16.0,
            yy + 10.0,
            xml_escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_doc() -> ReportDocument {
        let mut config = BTreeMap::new();
        config.insert("seed".to_string(), "42".to_string());
        ReportDocument::new(ReportMetadata::new(42, None, config))
    }

    #[test]
    fn empty_sections_emit_no_tables() {
        let dir = tempfile::tempdir().unwrap();
        let doc = minimal_doc();
        let written = emit_report(&doc, dir.path()).unwrap();
        assert_eq!(written.len(), 1, "only report.json expected: {written:?}");
        assert!(!dir.path().join("tables").exists());
    }

    #[test]
    fn percentage_point_rendering() {
        assert_eq!(pp(0.016), "1.6");
        assert_eq!(pp(0.8), "80.0");
        assert_eq!(pp(0.041), "4.1");
        assert_eq!(pp(0.087), "8.7");
    }

    #[test]
    fn document_round_trips_and_checks_schema() {
        let doc = minimal_doc();
        let json = serde_json::to_string_pretty(&doc).unwrap();
        let back = ReportDocument::from_json(&json).unwrap();
        assert_eq!(back.metadata.config_hash, doc.metadata.config_hash);

        let bad = json.replace(REPORT_SCHEMA, "fairhead-report/999");
        assert!(matches!(ReportDocument::from_json(&bad), Err(ReportError::BadSchema(_))));
    }

    #[test]
    fn config_hash_tracks_content() {
        let mut a = BTreeMap::new();
        a.insert("x".to_string(), "1".to_string());
        let mut b = a.clone();
        b.insert("y".to_string(), "2".to_string());
        let ma = ReportMetadata::new(0, None, a.clone());
        let ma2 = ReportMetadata::new(0, None, a);
        let mb = ReportMetadata::new(0, None, b);
        assert_eq!(ma.config_hash, ma2.config_hash);
        assert_ne!(ma.config_hash, mb.config_hash);
    }

    #[test]
    fn rerun_emits_identical_tables() {
        let dir = tempfile::tempdir().unwrap();
        let mut doc = minimal_doc();
        doc.threshold_analysis = Some(ThresholdSection {
            condition: "pleural_effusion".into(),
            axis: Axis::Race,
            filter: Some(("sex".into(), "female".into())),
            recall_floor: 0.95,
            threshold: 0.3127,
            overall_recall: 0.96,
            per_group: vec![
                GroupRates { group: "white".into(), fnr: 0.159, tpr: 0.841, fpr: 0.4 },
                GroupRates { group: "asian".into(), fnr: 0.136, tpr: 0.864, fpr: 0.41 },
            ],
            delta_fnr: 0.023,
            delta_tpr: 0.023,
            delta_fpr: 0.01,
            eo_max_gap: 0.023,
        });
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        emit_report(&doc, &out_a).unwrap();
        emit_report(&doc, &out_b).unwrap();
        let table_a = fs::read(out_a.join("tables/threshold.csv")).unwrap();
        let table_b = fs::read(out_b.join("tables/threshold.csv")).unwrap();
        assert_eq!(table_a, table_b);
        let text = String::from_utf8(table_a).unwrap();
        assert!(text.contains("white,0.159,0.841,0.400"));
        assert!(text.contains("gaps,0.023,0.023,0.010"));
    }

    #[test]
    fn svg_is_deterministic_and_well_formed() {
        let clusters = vec!["a".to_string(), "b".to_string()];
        let series = vec![
            ("x".to_string(), vec![1.0, 2.0]),
            ("y".to_string(), vec![0.5, 1.5]),
        ];
        let svg1 = grouped_bar_svg("t", &clusters, &series, None);
        let svg2 = grouped_bar_svg("t", &clusters, &series, None);
        assert_eq!(svg1, svg2);
        assert!(svg1.starts_with("<svg"));
        assert!(svg1.ends_with("</svg>\n"));
        assert_eq!(svg1.matches("<rect").count(), 1 + 4 + 2); // background + bars + legend
    }
}
