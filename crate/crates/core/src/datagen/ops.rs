use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

/// Recodes every uncertain (`-1`) label as negative. The mask is untouched.
pub fn apply_u_zeros(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for v in out.labels.data_mut() {
        if *v == -1.0 {
            *v = 0.0;
        }
    }
    out
}

/// Random patient-level partition into train/validation/test.
pub fn split_by_patient(
    ds: &Dataset,
    fractions: (f64, f64, f64),
    rng: &mut RngStream,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let mut patients = ds.patients();
    patients.sort_unstable();
    patients.shuffle(rng);
    let p = patients.len();
    let n_train = ((a * p as f64).round() as usize).min(p);
    let n_val = ((b * p as f64).round() as usize).min(p - n_train);
    let parts = [
        &patients[..n_train],
        &patients[n_train..n_train + n_val],
        &patients[n_train + n_val..],
    ];
    if let Some(i) = parts.iter().position(|s| s.is_empty()) {
        return Err(Error::Split(format!(
            "split {} is empty ({p} patients)",
            ["train", "validation", "test"][i]
        )));
    }
    let take = |ids: &[u64]| {
        let set: BTreeSet<u64> = ids.iter().copied().collect();
        ds.select_rows(&ds.rows_for_patients(&set))
    };
    Ok((take(parts[0]), take(parts[1]), take(parts[2])))
}

/// Patients with at least one positive annotated label on any image.
fn positive_patients(ds: &Dataset) -> BTreeSet<u64> {
    let mut out = BTreeSet::new();
    for i in 0..ds.len() {
        let positive =
            (0..ds.n_labels()).any(|j| ds.mask.get(i, j) != 0.0 && ds.labels.get(i, j) == 1.0);
        if positive {
            out.insert(ds.patient_ids[i]);
        }
    }
    out
}

/// Stratified 50/50 patient split: patients with any positive finding and
/// all-negative patients are each halved.
pub fn make_iid_halves(ds: &Dataset, rng: &mut RngStream) -> Result<(Dataset, Dataset)> {
    let positives = positive_patients(ds);
    let mut pos: Vec<u64> = positives.iter().copied().collect();
    let mut neg: Vec<u64> = ds
        .patients()
        .into_iter()
        .filter(|p| !positives.contains(p))
        .collect();
    neg.sort_unstable();
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::Split(format!(
            "strata too small to halve: {} positive, {} negative patients",
            pos.len(),
            neg.len()
        )));
    }
    pos.shuffle(rng);
    neg.shuffle(rng);
    let mut first = BTreeSet::new();
    let mut second = BTreeSet::new();
    for stratum in [&pos, &neg] {
        let half = stratum.len() / 2;
        first.extend(&stratum[..half]);
        second.extend(&stratum[half..]);
    }
    Ok((
        ds.select_rows(&ds.rows_for_patients(&first)),
        ds.select_rows(&ds.rows_for_patients(&second)),
    ))
}

/// Zeros the mask outside `keep`; label columns stay in place.
pub fn prune_labels<S: AsRef<str>>(ds: &Dataset, keep: &[S]) -> Result<Dataset> {
    if keep.is_empty() {
        return Err(Error::Config(
            "prune_labels needs at least one label".into(),
        ));
    }
    let cols: BTreeSet<usize> = ds.column_indices(keep)?.into_iter().collect();
    let mut out = ds.clone();
    let l = ds.n_labels();
    for (k, m) in out.mask.data_mut().iter_mut().enumerate() {
        if !cols.contains(&(k % l)) {
            *m = 0.0;
        }
    }
    Ok(out)
}

/// Stacks rows without harmonizing labels. The label space is the union by
/// name (`a`'s order, then labels new in `b`); entries a source lacks get
/// mask 0. An empty side contributes nothing.
pub fn concat_naive(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    if a.is_empty() {
        return Ok(b.clone());
    }
    if b.is_empty() {
        return Ok(a.clone());
    }
    if a.feature_dim() != b.feature_dim() {
        return Err(Error::Dimension(format!(
            "feature_dim {} vs {}",
            a.feature_dim(),
            b.feature_dim()
        )));
    }
    let mut names = a.label_names.clone();
    for n in &b.label_names {
        if !names.contains(n) {
            names.push(n.clone());
        }
    }
    let l = names.len();
    let n = a.len() + b.len();
    let mut labels = Tensor::zeros(&[n, l]);
    let mut mask = Tensor::zeros(&[n, l]);
    let mut row = 0;
    for src in [a, b] {
        let map: Vec<usize> = src
            .label_names
            .iter()
            .map(|s| names.iter().position(|t| t == s).expect("union"))
            .collect();
        for i in 0..src.len() {
            for (j, &dst) in map.iter().enumerate() {
                labels.set(row, dst, src.labels.get(i, j));
                mask.set(row, dst, src.mask.get(i, j));
            }
            row += 1;
        }
    }
    let mut patient_ids = a.patient_ids.clone();
    patient_ids.extend(&b.patient_ids);
    Dataset::new(
        Tensor::vstack(&[&a.features, &b.features])?,
        labels,
        mask,
        patient_ids,
        names,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{default_label_names, generate, DomainSpec, LabelModel};

    fn sample(n: usize, u: f64, seed: u64) -> Dataset {
        let d = DomainSpec::base(4, 5, 1);
        let lm = LabelModel::sample(default_label_names(6), 4, u, &mut RngStream::new(2)).unwrap();
        generate(&d, &lm, n, &RngStream::new(seed)).unwrap()
    }

    #[test]
    fn u_zeros_contract() {
        let ds = sample(50, 0.3, 1);
        let z = apply_u_zeros(&ds);
        assert!(z.labels.data().iter().all(|&v| v != -1.0));
        assert_eq!(z.mask, ds.mask);
        assert_eq!(apply_u_zeros(&z), z);
        let clean = sample(50, 0.0, 1);
        assert_eq!(apply_u_zeros(&clean), clean);
    }

    #[test]
    fn u_zeros_single_entry() {
        let mut ds = sample(5, 0.0, 1);
        ds.labels.set(2, 3, -1.0);
        let z = apply_u_zeros(&ds);
        assert_eq!(z.labels.get(2, 3), 0.0);
        for i in 0..ds.len() {
            for j in 0..6 {
                if (i, j) != (2, 3) {
                    assert_eq!(z.labels.get(i, j), ds.labels.get(i, j));
                }
            }
        }
    }

    #[test]
    fn split_sizes_single_image() {
        let mut d = DomainSpec::base(4, 5, 1);
        d.images_per_patient = (1, 1);
        let lm =
            LabelModel::sample(default_label_names(3), 4, 0.0, &mut RngStream::new(2)).unwrap();
        let ds = generate(&d, &lm, 1000, &RngStream::new(4)).unwrap();
        let (a, b, c) = split_by_patient(&ds, (0.7, 0.1, 0.2), &mut RngStream::new(5)).unwrap();
        assert!(a.len().abs_diff(700) <= 1);
        assert!(b.len().abs_diff(100) <= 1);
        assert!(c.len().abs_diff(200) <= 1);
    }

    #[test]
    fn split_rejects_bad_fractions_and_tiny_data() {
        let ds = sample(2, 0.0, 1);
        let mut rng = RngStream::new(1);
        assert!(split_by_patient(&ds, (0.5, 0.5, 0.1), &mut rng).is_err());
        assert!(matches!(
            split_by_patient(&ds, (0.7, 0.1, 0.2), &mut rng),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn halves_partition_and_balance() {
        let ds = sample(300, 0.0, 7);
        let (a, b) = make_iid_halves(&ds, &mut RngStream::new(3)).unwrap();
        let pa: BTreeSet<u64> = a.patients().into_iter().collect();
        let pb: BTreeSet<u64> = b.patients().into_iter().collect();
        assert!(pa.is_disjoint(&pb));
        let all: BTreeSet<u64> = ds.patients().into_iter().collect();
        assert_eq!(&pa | &pb, all);
        assert_eq!(a.len() + b.len(), ds.len());
        let ca = positive_patients(&a).len();
        let cb = positive_patients(&b).len();
        assert!(ca.abs_diff(cb) <= 1);
    }

    #[test]
    fn halves_need_both_strata() {
        let mut ds = sample(20, 0.0, 7);
        ds.labels.data_mut().fill(0.0);
        assert!(matches!(
            make_iid_halves(&ds, &mut RngStream::new(3)),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn prune_contract() {
        let ds = sample(20, 0.0, 1);
        assert_eq!(prune_labels(&ds, &ds.label_names).unwrap(), ds);
        let one = prune_labels(&ds, &["L02"]).unwrap();
        for i in 0..one.len() {
            for j in 0..6 {
                assert_eq!(one.mask.get(i, j), if j == 2 { 1.0 } else { 0.0 });
            }
        }
        assert!(matches!(
            prune_labels::<&str>(&ds, &[]),
            Err(Error::Config(_))
        ));
        assert!(prune_labels(&ds, &["nope"]).is_err());
    }

    #[test]
    fn concat_contract() {
        let a = prune_labels(&sample(10, 0.0, 1), &["L00", "L01"]).unwrap();
        let mut b = sample(8, 0.0, 2);
        b.label_names = vec!["L01", "X", "L00", "Y", "Z", "W"]
            .into_iter()
            .map(String::from)
            .collect();
        let c = concat_naive(&a, &b).unwrap();
        assert_eq!(c.len(), a.len() + b.len());
        assert_eq!(c.n_labels(), 10);
        let x = c.label_index("X").unwrap();
        for i in 0..a.len() {
            assert_eq!(c.mask.get(i, x), 0.0);
        }
        let empty = Dataset::empty(5, vec!["Q".into()]);
        assert_eq!(concat_naive(&a, &empty).unwrap(), a);
        assert_eq!(concat_naive(&empty, &a).unwrap(), a);
        let wide = Dataset::new(
            Tensor::zeros(&[1, 7]),
            Tensor::zeros(&[1, 1]),
            Tensor::zeros(&[1, 1]),
            vec![0],
            vec!["a".into()],
        )
        .unwrap();
        assert!(matches!(concat_naive(&a, &wide), Err(Error::Dimension(_))));
    }
}
