use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::auroc::RankedScores;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanAuroc {
    pub mean: f64,
    pub excluded: Vec<String>,
}

/// Arithmetic mean over labels with a defined AUROC; undefined labels are
/// excluded and listed.
pub fn mean_auroc(per_label: &[(String, Option<f64>)]) -> Result<MeanAuroc> {
    let defined: Vec<f64> = per_label.iter().filter_map(|(_, v)| *v).collect();
    if defined.is_empty() {
        return Err(Error::Metric("no label has a defined AUROC".into()));
    }
    Ok(MeanAuroc {
        mean: defined.iter().sum::<f64>() / defined.len() as f64,
        excluded: per_label
            .iter()
            .filter(|(_, v)| v.is_none())
            .map(|(n, _)| n.clone())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub labels: Vec<String>,
    pub per_label_auroc: BTreeMap<String, Option<f64>>,
    pub undefined_labels: Vec<String>,
    pub mean_auroc: f64,
    pub bce: Option<f64>,
    pub ci95: (f64, f64),
    pub n_bootstrap: usize,
    pub seed: u64,
    pub per_replicate_means: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn defined_replicate_means(&self) -> Vec<f64> {
        self.per_replicate_means.iter().flatten().copied().collect()
    }
}

/// Nearest-rank percentile of ascending `sorted`.
fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Per-label AUROC, mean AUROC and a percentile bootstrap CI.
///
/// Replicate `r` resamples rows with a stream derived as `boot:r` from `rng`,
/// so two models scored on the same rows with the same stream share resample
/// indices. Entries with mask 0 are ignored for that label.
pub fn bootstrap_ci(
    scores: &Tensor,
    labels: &Tensor,
    mask: &Tensor,
    label_names: &[String],
    n_bootstrap: usize,
    rng: &RngStream,
) -> Result<EvalReport> {
    if n_bootstrap < MIN_BOOTSTRAP {
        return Err(Error::Input(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP} replicates, got {n_bootstrap}"
        )));
    }
    if scores.shape() != labels.shape()
        || scores.shape() != mask.shape()
        || scores.shape().len() != 2
        || scores.cols() != label_names.len()
    {
        return Err(Error::Dimension(format!(
            "scores {:?}, labels {:?}, mask {:?}, {} names",
            scores.shape(),
            labels.shape(),
            mask.shape(),
            label_names.len()
        )));
    }
    let n = scores.rows();
    if n == 0 {
        return Err(Error::Input("empty test set".into()));
    }
    let mut ranked = Vec::with_capacity(label_names.len());
    for j in 0..label_names.len() {
        let rows: Vec<usize> = (0..n).filter(|&i| mask.get(i, j) != 0.0).collect();
        let s: Vec<f64> = rows.iter().map(|&i| scores.get(i, j)).collect();
        let mut l = Vec::with_capacity(rows.len());
        for &i in &rows {
            match labels.get(i, j) {
                1.0 => l.push(true),
                0.0 => l.push(false),
                v => return Err(Error::Input(format!("label value {v} is not binary"))),
            }
        }
        ranked.push((rows, RankedScores::new(&s, &l)?));
    }

    let point: Vec<(String, Option<f64>)> = label_names
        .iter()
        .zip(&ranked)
        .map(|(name, (_, r))| (name.clone(), r.unweighted()))
        .collect();
    let mean = mean_auroc(&point)?;

    let mut per_replicate_means = Vec::with_capacity(n_bootstrap);
    let mut counts = vec![0u64; n];
    let mut weights = Vec::new();
    for r in 0..n_bootstrap {
        let mut boot = rng.derive(&format!("boot:{r}"));
        counts.fill(0);
        for _ in 0..n {
            counts[boot.random_range(0..n)] += 1;
        }
        let mut sum = 0.0;
        let mut defined = 0usize;
        for (rows, rs) in &ranked {
            weights.clear();
            weights.extend(rows.iter().map(|&i| counts[i]));
            if let Some(a) = rs.weighted(&weights) {
                sum += a;
                defined += 1;
            }
        }
        per_replicate_means.push((defined > 0).then(|| sum / defined as f64));
    }
    let mut sorted: Vec<f64> = per_replicate_means.iter().flatten().copied().collect();
    if sorted.is_empty() {
        return Err(Error::Metric(
            "every bootstrap replicate was undefined".into(),
        ));
    }
    sorted.sort_by(f64::total_cmp);
    let ci95 = (nearest_rank(&sorted, 2.5), nearest_rank(&sorted, 97.5));

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        labels: label_names.to_vec(),
        per_label_auroc: point.into_iter().collect(),
        undefined_labels: mean.excluded,
        mean_auroc: mean.mean,
        bce: None,
        ci95,
        n_bootstrap,
        seed: rng.seed(),
        per_replicate_means,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    #[serde(with = "extended_float")]
    pub t_statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

impl ComparisonResult {
    fn new(t: f64, p: f64) -> Self {
        Self {
            t_statistic: t,
            p_value: p,
            significant: p < SIGNIFICANCE_LEVEL,
        }
    }
}

/// JSON has no infinities; they are written as the strings `inf` / `-inf`.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            f64::INFINITY => Repr::Tag("inf".into()),
            f64::NEG_INFINITY => Repr::Tag("-inf".into()),
            x => Repr::Num(x),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Tag(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Tag(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!("bad float `{t}`"))),
        }
    }
}

/// Two-tailed paired t-test on `a − b`.
///
/// All-zero differences give `t = 0, p = 1`; constant non-zero differences
/// give `t = ±∞, p = 0`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<ComparisonResult> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Input("paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("samples must be finite".into()));
    }
    if d.iter().all(|&v| v == 0.0) {
        return Ok(ComparisonResult::new(0.0, 1.0));
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(ComparisonResult::new(mean.signum() * f64::INFINITY, 0.0));
    }
    let t = mean / (sd / nf.sqrt());
    Ok(ComparisonResult::new(t, student_t_two_tailed(t, nf - 1.0)))
}

/// `P(|T| ≥ |t|)` for Student's t with `dof` degrees of freedom, via the
/// regularized incomplete beta function.
pub fn student_t_two_tailed(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    beta_reg(dof / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Paired t-test on the bootstrap replicate means of two reports that share
/// resample indices. Replicates undefined in either report are dropped.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<ComparisonResult> {
    if a.seed != b.seed || a.per_replicate_means.len() != b.per_replicate_means.len() {
        return Err(Error::Input(
            "reports were not produced from the same bootstrap stream".into(),
        ));
    }
    let (xa, xb): (Vec<f64>, Vec<f64>) = a
        .per_replicate_means
        .iter()
        .zip(&b.per_replicate_means)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip();
    paired_ttest(&xa, &xb)
}
