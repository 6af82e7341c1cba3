use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

const MAX_HYPERPLANE_TRIES: usize = 1000;
const PREVALENCE_BOUNDS: (f64, f64) = (0.05, 0.6);

/// Feature map of one acquisition domain:
/// `features = scale ⊙ (M z + shift) + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub mix_seed: u64,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub noise_std: f64,
    /// Inclusive range of images drawn per patient.
    pub images_per_patient: (usize, usize),
}

impl DomainSpec {
    /// Unshifted domain (`shift = 0`, `scale = 1`).
    pub fn base(latent_dim: usize, feature_dim: usize, mix_seed: u64) -> Self {
        Self {
            latent_dim,
            feature_dim,
            mix_seed,
            shift: vec![0.0; feature_dim],
            scale: vec![1.0; feature_dim],
            noise_std: 0.5,
            images_per_patient: (1, 3),
        }
    }

    /// Copy of `self` with a random affine covariate shift: per-feature
    /// offsets `~ N(0, magnitude²)` and log-scales `~ N(0, (magnitude/4)²)`.
    pub fn shifted(&self, magnitude: f64, rng: &mut RngStream) -> Self {
        let mut d = self.clone();
        for j in 0..d.feature_dim {
            let o: f64 = rng.sample(StandardNormal);
            let s: f64 = rng.sample(StandardNormal);
            d.shift[j] = magnitude * o;
            d.scale[j] = (0.25 * magnitude * s).exp();
        }
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.feature_dim == 0 {
            return Err(Error::Config("domain dimensions must be positive".into()));
        }
        if self.shift.len() != self.feature_dim || self.scale.len() != self.feature_dim {
            return Err(Error::Config(
                "shift/scale length must equal feature_dim".into(),
            ));
        }
        if self.scale.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::Config("scale entries must be positive".into()));
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        let (lo, hi) = self.images_per_patient;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "invalid images_per_patient range ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    /// `feature_dim × latent_dim` mixing matrix, a pure function of `mix_seed`.
    pub fn mixing_matrix(&self) -> Tensor {
        let mut rng = RngStream::new(self.mix_seed);
        let norm = (self.latent_dim as f64).sqrt();
        let data = (0..self.feature_dim * self.latent_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / norm)
            .collect();
        Tensor::new(vec![self.feature_dim, self.latent_dim], data).expect("shape")
    }
}

/// Per-label hyperplanes over the latent space: `y_l = 1[w_l · z > c_l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    pub names: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub thresholds: Vec<f64>,
    pub uncertain_rate: f64,
}

pub fn default_label_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("L{i:02}")).collect()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

impl LabelModel {
    /// Draws hyperplanes whose analytic prevalence lies inside (0.05, 0.6),
    /// rejecting degenerate draws.
    pub fn sample(
        names: Vec<String>,
        latent_dim: usize,
        uncertain_rate: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("label model needs at least one label".into()));
        }
        if !(0.0..1.0).contains(&uncertain_rate) {
            return Err(Error::Config(format!(
                "uncertain_rate {uncertain_rate} outside [0, 1)"
            )));
        }
        let mut weights = Vec::with_capacity(names.len());
        let mut thresholds = Vec::with_capacity(names.len());
        for name in &names {
            let mut accepted = None;
            for _ in 0..MAX_HYPERPLANE_TRIES {
                let w: Vec<f64> = (0..latent_dim)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ratio: f64 = 0.8 + 0.6 * rng.sample::<f64, _>(StandardNormal);
                let prev = normal_cdf(-ratio);
                if norm > 0.0 && prev > PREVALENCE_BOUNDS.0 && prev < PREVALENCE_BOUNDS.1 {
                    accepted = Some((w, ratio * norm));
                    break;
                }
            }
            let (w, c) = accepted.ok_or_else(|| {
                Error::Generator(format!(
                    "no hyperplane for `{name}` within prevalence bounds after {MAX_HYPERPLANE_TRIES} tries"
                ))
            })?;
            weights.push(w);
            thresholds.push(c);
        }
        Ok(Self {
            names,
            weights,
            thresholds,
            uncertain_rate,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.names.len()
    }

    /// `Φ(−c/‖w‖)`, the probability of a positive under `z ~ N(0, I)`.
    pub fn analytic_prevalence(&self, label: usize) -> f64 {
        let norm = self.weights[label]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        normal_cdf(-self.thresholds[label] / norm)
    }

    fn label_of(&self, label: usize, z: &[f64]) -> f64 {
        let dot: f64 = self.weights[label].iter().zip(z).map(|(w, v)| w * v).sum();
        if dot > self.thresholds[label] {
            1.0
        } else {
            0.0
        }
    }
}

/// Samples `n_patients` patients with 1..=k images each.
///
/// Latents, image counts, noise and uncertainty recoding draw from separate
/// child streams of `rng`, so two domains generated from the same stream share
/// latents and labels and differ only in their feature maps.
pub fn generate(
    domain: &DomainSpec,
    labels: &LabelModel,
    n_patients: usize,
    rng: &RngStream,
) -> Result<Dataset> {
    domain.validate()?;
    if n_patients == 0 {
        return Err(Error::Config("n_patients must be at least 1".into()));
    }
    if labels.weights.iter().any(|w| w.len() != domain.latent_dim) {
        return Err(Error::Config(
            "label hyperplanes do not match the latent dimension".into(),
        ));
    }
    let mix = domain.mixing_matrix();
    let mut latent_rng = rng.derive("latent");
    let mut image_rng = rng.derive("images");
    let mut noise_rng = rng.derive("noise");
    let mut uncertain_rng = rng.derive("uncertain");
    let (lo, hi) = domain.images_per_patient;
    let l = labels.n_labels();
    let f = domain.feature_dim;

    let mut features = Vec::new();
    let mut label_data = Vec::new();
    let mut patient_ids = Vec::new();
    for p in 0..n_patients {
        let z: Vec<f64> = (0..domain.latent_dim)
            .map(|_| latent_rng.sample(StandardNormal))
            .collect();
        let y: Vec<f64> = (0..l).map(|j| labels.label_of(j, &z)).collect();
        let clean: Vec<f64> = (0..f)
            .map(|r| {
                let mz: f64 = mix.row(r).iter().zip(&z).map(|(m, v)| m * v).sum();
                domain.scale[r] * (mz + domain.shift[r])
            })
            .collect();
        let n_images = image_rng.random_range(lo..=hi);
        for _ in 0..n_images {
            for &c in &clean {
                let e: f64 = noise_rng.sample(StandardNormal);
                features.push(c + domain.noise_std * e);
            }
            for &v in &y {
                let u: f64 = uncertain_rng.random();
                label_data.push(if v == 1.0 && u < labels.uncertain_rate {
                    -1.0
                } else {
                    v
                });
            }
            patient_ids.push(p as u64);
        }
    }
    let n = patient_ids.len();
    Dataset::new(
        Tensor::new(vec![n, f], features)?,
        Tensor::new(vec![n, l], label_data)?,
        Tensor::filled(&[n, l], 1.0),
        patient_ids,
        labels.names.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(u: f64) -> (DomainSpec, LabelModel) {
        let d = DomainSpec::base(4, 6, 99);
        let lm = LabelModel::sample(default_label_names(5), 4, u, &mut RngStream::new(1)).unwrap();
        (d, lm)
    }

    #[test]
    fn shared_latents_give_identical_labels_and_affine_features() {
        let (mut a, lm) = setup(0.0);
        a.noise_std = 0.0;
        let mut b = a.shifted(1.0, &mut RngStream::new(5));
        b.noise_std = 0.0;
        let rng = RngStream::new(77);
        let da = generate(&a, &lm, 50, &rng).unwrap();
        let db = generate(&b, &lm, 50, &rng).unwrap();
        assert_eq!(da.labels, db.labels);
        assert_eq!(da.patient_ids, db.patient_ids);
        for i in 0..da.len() {
            for j in 0..6 {
                let expect = b.scale[j] * (da.features.get(i, j) + b.shift[j]);
                assert!((db.features.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_uncertain_when_rate_zero() {
        let (d, lm) = setup(0.0);
        let ds = generate(&d, &lm, 200, &RngStream::new(3)).unwrap();
        assert!(ds.labels.data().iter().all(|&v| v != -1.0));
    }

    #[test]
    fn uncertain_only_recodes_positives() {
        let (d, lm) = setup(0.5);
        let ds = generate(&d, &lm, 200, &RngStream::new(3)).unwrap();
        assert!(ds.labels.data().iter().any(|&v| v == -1.0));
        let (d0, lm0) = setup(0.0);
        let clean = generate(&d0, &lm0, 200, &RngStream::new(3)).unwrap();
        for (a, b) in ds.labels.data().iter().zip(clean.labels.data()) {
            if *a == -1.0 {
                assert_eq!(*b, 1.0);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn images_per_patient_in_range() {
        let (d, lm) = setup(0.0);
        let ds = generate(&d, &lm, 100, &RngStream::new(3)).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for p in &ds.patient_ids {
            *counts.entry(*p).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 100);
        assert!(counts.values().all(|&c| (1..=3).contains(&c)));
    }

    #[test]
    fn prevalence_bounds_hold() {
        let lm =
            LabelModel::sample(default_label_names(40), 16, 0.0, &mut RngStream::new(8)).unwrap();
        for l in 0..40 {
            let p = lm.analytic_prevalence(l);
            assert!(p > 0.05 && p < 0.6);
        }
    }

    #[test]
    fn bad_domain_rejected() {
        let mut d = DomainSpec::base(2, 3, 1);
        d.scale[0] = 0.0;
        assert!(d.validate().is_err());
    }
}
