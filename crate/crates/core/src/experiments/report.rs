use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::runner::{Evaluation, ExperimentResult};
use crate::error::{Error, Result};
use crate::metrics::REPORT_SCHEMA_VERSION;

pub const RESULTS_FILE: &str = "results.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    scenario: &'a super::config::Scenario,
    master_seed: u64,
    config_hash: &'a str,
    dataset_hashes: &'a BTreeMap<String, String>,
    arms: Vec<&'a str>,
    failed_arms: BTreeMap<&'a str, &'a str>,
    files: Vec<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

fn summary_csv(result: &ExperimentResult) -> Result<String> {
    let rows: Vec<(&str, &Evaluation)> = result
        .arms
        .iter()
        .flat_map(|a| a.evaluations.iter().map(move |e| (a.arm.as_str(), e)))
        .collect();
    let mut best: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for (_, e) in &rows {
        let b = best
            .entry((&e.test_set, &e.view))
            .or_insert(f64::NEG_INFINITY);
        *b = b.max(e.report.mean_auroc);
    }
    let body = rows
        .iter()
        .map(|(arm, e)| {
            let r = &e.report;
            vec![
                arm.to_string(),
                e.model.clone(),
                e.test_set.clone(),
                e.view.clone(),
                (r.labels.len() - r.undefined_labels.len()).to_string(),
                r.mean_auroc.to_string(),
                r.ci95.0.to_string(),
                r.ci95.1.to_string(),
                opt(r.bce),
                opt(e.vs_fedfbn.map(|c| c.t_statistic)),
                opt(e.vs_fedfbn.map(|c| c.p_value)),
                e.vs_fedfbn
                    .map(|c| u8::from(c.significant).to_string())
                    .unwrap_or_default(),
                u8::from(r.mean_auroc == best[&(e.test_set.as_str(), e.view.as_str())]).to_string(),
            ]
        })
        .collect();
    csv_string(
        &[
            "arm",
            "model",
            "test_set",
            "view",
            "n_labels",
            "mean_auroc",
            "ci95_low",
            "ci95_high",
            "bce",
            "t_vs_fedfbn",
            "p_vs_fedfbn",
            "significant",
            "best",
        ],
        body,
    )
}

fn per_label_csv(evals: &[Evaluation]) -> Result<String> {
    let mut rows = Vec::new();
    for e in evals {
        for label in &e.report.labels {
            rows.push(vec![
                e.model.clone(),
                e.test_set.clone(),
                e.view.clone(),
                label.clone(),
                opt(e.report.per_label_auroc.get(label).copied().flatten()),
            ]);
        }
    }
    csv_string(&["model", "test_set", "view", "label", "auroc"], rows)
}

/// Every tabular output keyed by file name.
pub fn render_tables(result: &ExperimentResult) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    files.insert(SUMMARY_FILE.to_string(), summary_csv(result)?);
    for arm in &result.arms {
        files.insert(
            format!("auroc_{}.csv", arm.arm),
            per_label_csv(&arm.evaluations)?,
        );
        for run in &arm.runs {
            files.insert(
                format!("rounds_{}_{}.csv", arm.arm, run.model),
                run.csv.clone(),
            );
        }
    }
    Ok(files)
}

/// Writes results, tables and a manifest into `outdir`.
pub fn emit_reports(result: &ExperimentResult, outdir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(outdir)?;
    let mut files = render_tables(result)?;
    files.insert(
        RESULTS_FILE.to_string(),
        serde_json::to_string_pretty(result)? + "\n",
    );
    let manifest = Manifest {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: &result.config.scenario,
        master_seed: result.config.master_seed,
        config_hash: &result.config_hash,
        dataset_hashes: &result.dataset_hashes,
        arms: result.arms.iter().map(|a| a.arm.as_str()).collect(),
        failed_arms: result
            .arms
            .iter()
            .filter_map(|a| a.error.as_deref().map(|e| (a.arm.as_str(), e)))
            .collect(),
        files: files.keys().cloned().collect(),
    };
    files.insert(
        MANIFEST_FILE.to_string(),
        serde_json::to_string_pretty(&manifest)? + "\n",
    );
    for (name, body) in &files {
        std::fs::write(outdir.join(name), body)?;
    }
    Ok(files.into_keys().collect())
}

pub fn load_results(dir: &Path) -> Result<ExperimentResult> {
    let text = std::fs::read_to_string(dir.join(RESULTS_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

/// Re-renders the tables of a finished run from its results file.
pub fn rerender(dir: &Path) -> Result<Vec<String>> {
    let result = load_results(dir)?;
    let files = render_tables(&result)?;
    for (name, body) in &files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(files.into_keys().collect())
}
