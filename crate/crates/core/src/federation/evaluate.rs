use super::global::GlobalModel;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{bootstrap_ci, EvalReport};
use crate::neural::{masked_bce, Model};
use crate::numerics::{RngStream, Tensor};

/// Score given to labels the model has no head for.
pub const CHANCE_SCORE: f64 = 0.5;

/// Eval-mode scoring of `labels` on `test`.
///
/// With `allow_missing`, labels without a head are scored with the constant
/// [`CHANCE_SCORE`]; otherwise they are a label error.
pub fn evaluate_model<S: AsRef<str>>(
    model: &Model,
    test: &Dataset,
    labels: &[S],
    allow_missing: bool,
    n_bootstrap: usize,
    rng: &RngStream,
) -> Result<EvalReport> {
    if labels.is_empty() {
        return Err(Error::Input("no labels requested".into()));
    }
    let names: Vec<String> = labels.iter().map(|l| l.as_ref().to_string()).collect();
    let heads = model.head_labels();
    let pred = model.predict(&test.features)?;
    let n = test.len();
    let mut scores = Tensor::zeros(&[n, names.len()]);
    for (j, name) in names.iter().enumerate() {
        match heads.iter().position(|h| h == name) {
            Some(k) => {
                for i in 0..n {
                    scores.set(i, j, pred.get(i, k));
                }
            }
            None if allow_missing => {
                for i in 0..n {
                    scores.set(i, j, CHANCE_SCORE);
                }
            }
            None => return Err(Error::Label(name.clone())),
        }
    }
    let cols = test.column_indices(&names)?;
    let target = test.labels.select_cols(&cols)?;
    let mask = test.mask.select_cols(&cols)?;
    let mut report = bootstrap_ci(&scores, &target, &mask, &names, n_bootstrap, rng)?;
    report.bce = masked_bce(&scores, &target, &mask).ok();
    Ok(report)
}

/// Evaluates the shared global model; every requested label needs a head.
pub fn evaluate_global<S: AsRef<str>>(
    model: &GlobalModel,
    test: &Dataset,
    labels: &[S],
    n_bootstrap: usize,
    rng: &RngStream,
) -> Result<EvalReport> {
    evaluate_model(&model.model()?, test, labels, false, n_bootstrap, rng)
}
