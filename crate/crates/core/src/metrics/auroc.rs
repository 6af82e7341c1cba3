use crate::error::{Error, Result};

/// Scores pre-sorted once so that AUROC over any row multiset (bootstrap
/// replicate) is a linear scan.
#[derive(Debug, Clone)]
pub struct RankedScores {
    /// row indices in ascending score order
    order: Vec<usize>,
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl RankedScores {
    pub fn new(scores: &[f64], labels: &[bool]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Input(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("scores must be finite".into()));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        Ok(Self {
            order,
            scores: scores.to_vec(),
            labels: labels.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// AUROC where row `i` appears `weights[i]` times; `None` when either
    /// class is absent.
    pub fn weighted(&self, weights: &[u64]) -> Option<f64> {
        // twice the Mann–Whitney credit, kept integral so ties stay exact
        let mut twice_credit: u128 = 0;
        let mut neg_below: u128 = 0;
        let mut pos_total: u128 = 0;
        let mut k = 0;
        while k < self.order.len() {
            let v = self.scores[self.order[k]];
            let (mut pos, mut neg) = (0u128, 0u128);
            while k < self.order.len() && self.scores[self.order[k]] == v {
                let i = self.order[k];
                let w = u128::from(weights[i]);
                if self.labels[i] {
                    pos += w;
                } else {
                    neg += w;
                }
                k += 1;
            }
            twice_credit += 2 * pos * neg_below + pos * neg;
            neg_below += neg;
            pos_total += pos;
        }
        if pos_total == 0 || neg_below == 0 {
            return None;
        }
        Some(twice_credit as f64 / (2 * pos_total * neg_below) as f64)
    }

    pub fn unweighted(&self) -> Option<f64> {
        self.weighted(&vec![1; self.len()])
    }
}

/// Mann–Whitney AUROC: over all (positive, negative) pairs, 1 when the
/// positive scores higher and ½ on ties. `Ok(None)` for single-class input.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    Ok(RankedScores::new(scores, labels)?.unweighted())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_tied() {
        assert_eq!(auroc(&[0.9, 0.1], &[true, false]).unwrap(), Some(1.0));
        assert_eq!(auroc(&[0.5, 0.5], &[true, false]).unwrap(), Some(0.5));
        assert_eq!(auroc(&[0.1, 0.9], &[true, false]).unwrap(), Some(0.0));
    }

    #[test]
    fn single_class_is_undefined() {
        assert_eq!(auroc(&[0.2, 0.3], &[true, true]).unwrap(), None);
        assert_eq!(auroc(&[], &[]).unwrap(), None);
    }

    #[test]
    fn negative_zero_ties_with_zero() {
        assert_eq!(auroc(&[-0.0, 0.0], &[true, false]).unwrap(), Some(0.5));
    }

    #[test]
    fn bad_input() {
        assert!(auroc(&[0.1], &[true, false]).is_err());
        assert!(auroc(&[f64::NAN, 0.1], &[true, false]).is_err());
    }

    #[test]
    fn weights_equal_duplication() {
        let s = [0.3, 0.1, 0.3, 0.8, 0.5];
        let l = [true, false, false, true, false];
        let r = RankedScores::new(&s, &l).unwrap();
        let w = [2, 0, 1, 3, 1];
        let mut ds = Vec::new();
        let mut dl = Vec::new();
        for i in 0..5 {
            for _ in 0..w[i] {
                ds.push(s[i]);
                dl.push(l[i]);
            }
        }
        assert_eq!(r.weighted(&w), auroc(&ds, &dl).unwrap());
    }
}
