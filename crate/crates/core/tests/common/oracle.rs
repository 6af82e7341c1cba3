//! Reference computations written from the definitions, independent of the
//! library's kernels.

use fedfbn::neural::{init_model, BnPolicy, LayerParams, Model, ModelSpec};
use fedfbn::numerics::{RngStream, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub struct GradCase {
    pub model: Model,
    pub x: Tensor,
    pub y: Tensor,
    pub mask: Tensor,
    pub policy: BnPolicy,
}

fn normal(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

/// Random architecture, batch, targets and mask with at least one observed
/// entry. Frozen cases get non-trivial running statistics.
pub fn grad_case(seed: u64) -> GradCase {
    let mut rng = RngStream::new(seed).derive("grad-case");
    let input = rng.random_range(2..=5);
    let depth = rng.random_range(0..=2);
    let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=5)).collect();
    let n_labels = rng.random_range(1..=4);
    let names = (0..n_labels).map(|i| format!("y{i}")).collect();
    let spec = ModelSpec::new(input, widths, names);
    let mut model = init_model(&spec, &mut rng.derive("init")).unwrap();
    let policy = if seed % 3 == 2 {
        BnPolicy::Frozen
    } else {
        BnPolicy::Normal
    };
    for l in model.representation.iter_mut() {
        if l.is_batch_norm() {
            for v in l.tensor_mut("gamma").data_mut() {
                *v = 1.0 + 0.3 * normal(&mut rng);
            }
            for v in l.tensor_mut("beta").data_mut() {
                *v = 0.3 * normal(&mut rng);
            }
            if policy == BnPolicy::Frozen {
                for v in l.tensor_mut("running_mean").data_mut() {
                    *v = 0.5 * normal(&mut rng);
                }
                for v in l.tensor_mut("running_var").data_mut() {
                    *v = 0.5 + rng.random::<f64>();
                }
            }
        }
    }
    let batch = rng.random_range(3..=8);
    let x: Vec<f64> = (0..batch * input).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = (0..batch * n_labels)
        .map(|_| f64::from(rng.random_bool(0.5)))
        .collect();
    let mut m: Vec<f64> = (0..batch * n_labels)
        .map(|_| f64::from(rng.random_bool(0.7)))
        .collect();
    m[0] = 1.0;
    GradCase {
        model,
        x: Tensor::new(vec![batch, input], x).unwrap(),
        y: Tensor::new(vec![batch, n_labels], y).unwrap(),
        mask: Tensor::new(vec![batch, n_labels], m).unwrap(),
        policy,
    }
}

fn layer_mut<'a>(model: &'a mut Model, name: &str) -> &'a mut LayerParams {
    model.layers_mut().find(|l| l.name == name).unwrap()
}

/// Largest relative error between analytic and central-difference gradients
/// over every trainable entry, and the number of entries checked.
pub fn max_gradient_error(case: &GradCase) -> (f64, usize) {
    let mut m = case.model.clone();
    let (_, grads) = m
        .loss_and_gradients(&case.x, &case.y, &case.mask, case.policy)
        .unwrap();
    let loss = |m: &Model| {
        m.train_loss(&case.x, &case.y, &case.mask, case.policy)
            .unwrap()
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (layer, tensors) in &grads.0 {
        let base = case.model.layers().find(|l| &l.name == layer).unwrap();
        for (tname, g) in tensors {
            for i in 0..base.tensor(tname).len() {
                let mut plus = case.model.clone();
                layer_mut(&mut plus, layer).tensor_mut(tname).data_mut()[i] += FD_STEP;
                let mut minus = case.model.clone();
                layer_mut(&mut minus, layer).tensor_mut(tname).data_mut()[i] -= FD_STEP;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
                worst = worst.max(relative_error(g.data()[i], numeric));
                checked += 1;
            }
        }
    }
    (worst, checked)
}

/// Ascending-k triple loop.
pub fn matmul_naive(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(i, p) * b.get(p, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// Two-pass column mean and biased variance.
pub fn batch_stats_two_pass(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    let mut var = vec![0.0; x.cols()];
    for j in 0..x.cols() {
        mean[j] = (0..x.rows()).map(|i| x.get(i, j)).sum::<f64>() / n;
        var[j] = (0..x.rows())
            .map(|i| (x.get(i, j) - mean[j]).powi(2))
            .sum::<f64>()
            / n;
    }
    (mean, var)
}

/// Exhaustive pair count: 2 per correctly ordered pair, 1 per tie.
pub fn auroc_pairs(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut twice, mut pos, mut neg) = (0u64, 0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            pos += 1;
        } else {
            neg += 1;
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if !lj {
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    (pos > 0 && neg > 0).then(|| twice as f64 / (2 * pos * neg) as f64)
}

/// Paired t statistic from the textbook formula.
pub fn paired_t(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let ss: f64 = d.iter().map(|v| (v - mean) * (v - mean)).sum();
    mean / (ss / (n - 1.0)).sqrt() * n.sqrt()
}

/// Two-tailed Student-t tail probability for integer degrees of freedom
/// from the closed-form finite series in `θ = atan(|t|/√ν)`.
pub fn student_t_p_series(t: f64, dof: u32) -> f64 {
    let nu = f64::from(dof);
    let theta = (t.abs() / nu.sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let c2 = c * c;
    let a = if dof % 2 == 1 {
        let mut sum = 0.0;
        if dof > 1 {
            let mut term = 1.0;
            sum = 1.0;
            let mut k = 2;
            while k + 1 < dof {
                term *= f64::from(k) / f64::from(k + 1) * c2;
                sum += term;
                k += 2;
            }
        }
        2.0 / std::f64::consts::PI * (theta + s * c * sum)
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1;
        while k + 1 < dof {
            term *= f64::from(k) / f64::from(k + 1) * c2;
            sum += term;
            k += 2;
        }
        s * sum
    };
    1.0 - a
}
