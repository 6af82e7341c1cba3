use crate::error::{Error, Result};
use crate::numerics::Tensor;
use sha2::{Digest, Sha256};

/// Multi-label dataset. Label entries are `1`, `0` or `-1` (uncertain);
/// `mask` marks which entries are annotated.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Tensor,
    pub mask: Tensor,
    pub patient_ids: Vec<u64>,
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Tensor,
        mask: Tensor,
        patient_ids: Vec<u64>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let n = patient_ids.len();
        if features.shape().len() != 2 || features.rows() != n {
            return Err(Error::Data(format!(
                "features shape {:?} does not match {n} patient ids",
                features.shape()
            )));
        }
        let l = label_names.len();
        for (name, t) in [("labels", &labels), ("mask", &mask)] {
            if t.shape() != [n, l] {
                return Err(Error::Data(format!(
                    "{name} shape {:?}, expected [{n}, {l}]",
                    t.shape()
                )));
            }
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Data("mask entries must be 0 or 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = label_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Data(format!("duplicate label `{dup}`")));
        }
        Ok(Self {
            features,
            labels,
            mask,
            patient_ids,
            label_names,
        })
    }

    /// Dataset with no rows over the given schema.
    pub fn empty(feature_dim: usize, label_names: Vec<String>) -> Self {
        let l = label_names.len();
        Self {
            features: Tensor::zeros(&[0, feature_dim]),
            labels: Tensor::zeros(&[0, l]),
            mask: Tensor::zeros(&[0, l]),
            patient_ids: Vec::new(),
            label_names,
        }
    }

    pub fn len(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patient_ids.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn label_index(&self, name: &str) -> Result<usize> {
        self.label_names
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::Label(name.to_string()))
    }

    pub fn column_indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.label_index(n.as_ref())).collect()
    }

    /// Labels with at least one annotated entry.
    pub fn observed_labels(&self) -> Vec<String> {
        let l = self.n_labels();
        let mut seen = vec![false; l];
        for i in 0..self.len() {
            for (j, s) in seen.iter_mut().enumerate() {
                if self.mask.get(i, j) != 0.0 {
                    *s = true;
                }
            }
        }
        self.label_names
            .iter()
            .zip(seen)
            .filter(|(_, s)| *s)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: self.labels.select_rows(idx),
            mask: self.mask.select_rows(idx),
            patient_ids: idx.iter().map(|&i| self.patient_ids[i]).collect(),
            label_names: self.label_names.clone(),
        }
    }

    /// Distinct patient ids in first-appearance order.
    pub fn patients(&self) -> Vec<u64> {
        let mut seen = std::collections::BTreeSet::new();
        self.patient_ids
            .iter()
            .copied()
            .filter(|p| seen.insert(*p))
            .collect()
    }

    /// Rows belonging to any of the given patients, in original order.
    pub fn rows_for_patients(&self, patients: &std::collections::BTreeSet<u64>) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| patients.contains(&self.patient_ids[i]))
            .collect()
    }

    /// SHA-256 over the raw contents; equal hashes mean bit-identical data.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.label_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for t in [&self.features, &self.labels, &self.mask] {
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        for p in &self.patient_ids {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
