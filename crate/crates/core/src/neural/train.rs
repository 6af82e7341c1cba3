use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::PROB_CLAMP;
use super::model::{init_model, sigmoid, BnPolicy, Gradients, LayerParams, Model, ModelSpec};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

/// Learning rate used to warm up classification heads.
pub const WARMUP_LR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub representation: f64,
    pub heads: f64,
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self {
            representation: lr,
            heads: lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub lr: LearningRates,
}

fn step_block(layers: &mut [LayerParams], grads: &Gradients, lr: f64) {
    if lr == 0.0 {
        return;
    }
    for layer in layers.iter_mut().filter(|l| l.trainable) {
        let Some(lg) = grads.0.get(&layer.name) else {
            continue;
        };
        for (tname, g) in lg {
            if let Some(t) = layer.tensors.get_mut(tname) {
                for (w, d) in t.data_mut().iter_mut().zip(g.data()) {
                    *w -= lr * d;
                }
            }
        }
    }
}

/// `w ← w − lr(block) · g` for every tensor that has a gradient entry.
pub fn sgd_step(model: &mut Model, grads: &Gradients, lr: LearningRates) -> Result<()> {
    if !(lr.representation >= 0.0 && lr.heads >= 0.0) {
        return Err(Error::Config(format!(
            "learning rates must be non-negative, got {lr:?}"
        )));
    }
    for (layer, tensors) in &grads.0 {
        for (tname, g) in tensors {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient {layer}/{tname}")));
            }
        }
    }
    step_block(&mut model.representation, grads, lr.representation);
    step_block(&mut model.heads, grads, lr.heads);
    Ok(())
}

/// One pass of shuffled minibatch SGD over the model's own head labels.
///
/// A trailing minibatch of a single row is dropped under `Normal` policy when
/// batch statistics would be degenerate; minibatches without any observed
/// label are skipped. Returns the mean minibatch loss.
pub fn train_epoch(
    model: &mut Model,
    data: &Dataset,
    policy: BnPolicy,
    opts: &TrainOptions,
    rng: &mut RngStream,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let labels = model.head_labels();
    let cols = data.column_indices(&labels)?;
    let target = data.labels.select_cols(&cols)?;
    let mask = data.mask.select_cols(&cols)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let needs_pairs = policy == BnPolicy::Normal && !model.spec.hidden_widths.is_empty();
    let mut total = 0.0;
    let mut steps = 0usize;
    for chunk in order.chunks(opts.batch_size) {
        if needs_pairs && chunk.len() < 2 {
            continue;
        }
        let m = mask.select_rows(chunk);
        if m.data().iter().all(|&v| v == 0.0) {
            continue;
        }
        let x = data.features.select_rows(chunk);
        let y = target.select_rows(chunk);
        let (loss, grads) = model.loss_and_gradients(&x, &y, &m, policy)?;
        sgd_step(model, &grads, opts.lr)?;
        total += loss;
        steps += 1;
    }
    Ok(if steps == 0 {
        0.0
    } else {
        total / steps as f64
    })
}

/// Trains only the heads at `lr` (normally [`WARMUP_LR`]) with batch norm
/// frozen; the representation block is left bit-identical.
///
/// The frozen representation is evaluated once per row and cached, which
/// gives the same trajectory as [`train_epoch`] with a zero representation
/// learning rate under [`BnPolicy::Frozen`].
pub fn warmup_heads(
    model: &mut Model,
    data: &Dataset,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut RngStream,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("warm-up set is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let lr = LearningRates {
        representation: 0.0,
        heads: lr,
    };
    if epochs == 0 {
        return Ok(());
    }
    let cols = data.column_indices(&model.head_labels())?;
    let target = data.labels.select_cols(&cols)?;
    let mask = data.mask.select_cols(&cols)?;
    let features = model.features(&data.features)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    if model.heads.iter().all(|h| h.trainable) {
        let mut block = HeadBlock::from_model(model);
        for _ in 0..epochs {
            order.sort_unstable();
            order.shuffle(rng);
            for chunk in order.chunks(batch_size) {
                block.step(&features, &target, &mask, chunk, lr.heads)?;
            }
        }
        block.write_back(model);
        return Ok(());
    }
    for _ in 0..epochs {
        order.sort_unstable();
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let m = mask.select_rows(chunk);
            if m.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            let (_, grads) = model.head_loss_and_gradients(
                &features.select_rows(chunk),
                &target.select_rows(chunk),
                &m,
            )?;
            sgd_step(model, &grads, lr)?;
        }
    }
    Ok(())
}

/// All heads packed as one `[width, n_heads]` matrix for allocation-free
/// head-only SGD. Accumulation order matches the generic path exactly.
struct HeadBlock {
    width: usize,
    n: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    logit: Vec<f64>,
    dlogit: Vec<f64>,
    dw: Vec<f64>,
    db: Vec<f64>,
}

impl HeadBlock {
    fn from_model(model: &Model) -> Self {
        let n = model.heads.len();
        let width = model.heads.first().map_or(0, |h| h.tensor("weight").len());
        let mut w = vec![0.0; width * n];
        let mut b = vec![0.0; n];
        for (j, h) in model.heads.iter().enumerate() {
            for (i, v) in h.tensor("weight").data().iter().enumerate() {
                w[i * n + j] = *v;
            }
            b[j] = h.tensor("bias").data()[0];
        }
        Self {
            width,
            n,
            w,
            b,
            logit: Vec::new(),
            dlogit: Vec::new(),
            dw: vec![0.0; width * n],
            db: vec![0.0; n],
        }
    }

    fn write_back(&self, model: &mut Model) {
        for (j, h) in model.heads.iter_mut().enumerate() {
            for (i, v) in h.tensor_mut("weight").data_mut().iter_mut().enumerate() {
                *v = self.w[i * self.n + j];
            }
            h.tensor_mut("bias").data_mut()[0] = self.b[j];
        }
    }

    fn step(
        &mut self,
        features: &Tensor,
        target: &Tensor,
        mask: &Tensor,
        rows: &[usize],
        lr: f64,
    ) -> Result<()> {
        let (n, width) = (self.n, self.width);
        let count = rows
            .iter()
            .flat_map(|&r| mask.row(r))
            .filter(|&&m| m != 0.0)
            .count();
        if count == 0 {
            return Ok(());
        }
        let scale = 1.0 / count as f64;
        self.logit.clear();
        self.logit.resize(rows.len() * n, 0.0);
        for (k, &r) in rows.iter().enumerate() {
            let out = &mut self.logit[k * n..(k + 1) * n];
            for (i, &f) in features.row(r).iter().enumerate() {
                for (o, &wv) in out.iter_mut().zip(&self.w[i * n..(i + 1) * n]) {
                    *o += f * wv;
                }
            }
            for (o, &bv) in out.iter_mut().zip(&self.b) {
                *o += bv;
            }
        }
        self.dlogit.clear();
        for (k, &r) in rows.iter().enumerate() {
            let (y, m) = (target.row(r), mask.row(r));
            for j in 0..n {
                let p = sigmoid(self.logit[k * n + j]);
                if !p.is_finite() {
                    return Err(Error::NonFinite("forward".into()));
                }
                let g = if m[j] == 0.0 || !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                    0.0
                } else {
                    if y[j] != 0.0 && y[j] != 1.0 {
                        return Err(Error::Data(format!(
                            "target {} is not a binary label",
                            y[j]
                        )));
                    }
                    (p - y[j]) * scale
                };
                self.dlogit.push(g);
            }
        }
        self.dw.fill(0.0);
        self.db.fill(0.0);
        for i in 0..width {
            let dw_row = &mut self.dw[i * n..(i + 1) * n];
            for (k, &r) in rows.iter().enumerate() {
                let f = features.get(r, i);
                for (o, &g) in dw_row.iter_mut().zip(&self.dlogit[k * n..(k + 1) * n]) {
                    *o += f * g;
                }
            }
        }
        for k in 0..rows.len() {
            for (o, &g) in self.db.iter_mut().zip(&self.dlogit[k * n..(k + 1) * n]) {
                *o += g;
            }
        }
        if lr == 0.0 {
            return Ok(());
        }
        if !self.dw.iter().chain(&self.db).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("head gradient".into()));
        }
        for (w, g) in self.w.iter_mut().zip(&self.dw) {
            *w -= lr * g;
        }
        for (b, g) in self.b.iter_mut().zip(&self.db) {
            *b -= lr * g;
        }
        Ok(())
    }
}

/// Trains a full model on a source task with normal batch norm, then drops the
/// source heads. The returned model carries `spec` (the target label space)
/// and no heads.
pub fn pretrain_backbone(
    spec: &ModelSpec,
    source: &Dataset,
    epochs: usize,
    opts: &TrainOptions,
    rng: &mut RngStream,
) -> Result<Model> {
    spec.validate()?;
    if source.feature_dim() != spec.input_dim {
        return Err(Error::Dimension(format!(
            "source features {} vs model input {}",
            source.feature_dim(),
            spec.input_dim
        )));
    }
    let mut source_spec = spec.clone();
    source_spec.label_names = source.label_names.clone();
    let mut model = init_model(&source_spec, &mut rng.derive("init"))?;
    let mut order_rng = rng.derive("order");
    for _ in 0..epochs {
        train_epoch(&mut model, source, BnPolicy::Normal, opts, &mut order_rng)?;
    }
    Ok(Model {
        spec: spec.clone(),
        representation: model.representation,
        heads: Vec::new(),
        mode: model.mode,
    })
}

/// Mean masked BCE in eval mode over the model's head labels.
pub fn eval_loss(model: &Model, data: &Dataset) -> Result<f64> {
    let labels = model.head_labels();
    let cols = data.column_indices(&labels)?;
    let pred = model.predict(&data.features)?;
    let target = data.labels.select_cols(&cols)?;
    let mask = data.mask.select_cols(&cols)?;
    super::masked_bce(&pred, &target, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::init_model;
    use crate::numerics::Tensor;

    fn toy(n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = RngStream::new(seed);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            feats.push(vec![a, b]);
            labels.push(vec![if a + 0.5 * b > 0.0 { 1.0 } else { 0.0 }]);
        }
        Dataset::new(
            Tensor::from_rows(&feats).unwrap(),
            Tensor::from_rows(&labels).unwrap(),
            Tensor::filled(&[n, 1], 1.0),
            (0..n as u64).collect(),
            vec!["y".into()],
        )
        .unwrap()
    }

    fn toy_spec() -> ModelSpec {
        ModelSpec::new(2, vec![8], vec!["y".into()])
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut m = init_model(&toy_spec(), &mut RngStream::new(1)).unwrap();
        let d = toy(16, 2);
        let before = m.clone();
        let (_, g) = m
            .loss_and_gradients(&d.features, &d.labels, &d.mask, BnPolicy::Frozen)
            .unwrap();
        sgd_step(&mut m, &g, LearningRates::uniform(0.0)).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn scalar_step() {
        let spec = ModelSpec::new(1, vec![], vec!["y".into()]);
        let mut m = init_model(&spec, &mut RngStream::new(1)).unwrap();
        m.heads[0].tensor_mut("weight").data_mut()[0] = 1.0;
        let mut g = Gradients::default();
        g.0.entry("head.y".into())
            .or_default()
            .insert("weight".into(), Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        sgd_step(&mut m, &g, LearningRates::uniform(0.1)).unwrap();
        assert_eq!(m.heads[0].tensor("weight").data()[0], 0.8);
    }

    #[test]
    fn negative_lr_rejected() {
        let mut m = init_model(&toy_spec(), &mut RngStream::new(1)).unwrap();
        let g = Gradients::default();
        assert!(matches!(
            sgd_step(&mut m, &g, LearningRates::uniform(-1.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn block_selectivity() {
        let mut m = init_model(&toy_spec(), &mut RngStream::new(1)).unwrap();
        let d = toy(16, 2);
        let before = m.clone();
        let (_, g) = m
            .loss_and_gradients(&d.features, &d.labels, &d.mask, BnPolicy::Frozen)
            .unwrap();
        sgd_step(
            &mut m,
            &g,
            LearningRates {
                representation: 0.0,
                heads: 1e-3,
            },
        )
        .unwrap();
        assert_eq!(m.representation, before.representation);
        assert_ne!(m.heads, before.heads);
    }

    #[test]
    fn warmup_freezes_representation_and_learns() {
        let d = toy(200, 4);
        let spec = ModelSpec::new(2, vec![32], vec!["y".into()]);
        let mut m = init_model(&spec, &mut RngStream::new(9)).unwrap();
        let rep = m.representation.clone();
        let before = eval_loss(&m, &d).unwrap();
        warmup_heads(&mut m, &d, 20, 1, WARMUP_LR, &mut RngStream::new(5)).unwrap();
        let after = eval_loss(&m, &d).unwrap();
        assert_eq!(m.representation, rep);
        assert!(after <= 0.5 * before, "before {before} after {after}");
    }

    #[test]
    fn cached_warmup_matches_full_forward() {
        let d = toy(90, 2);
        let spec = ModelSpec::new(2, vec![6, 5], vec!["y".into()]);
        let mut m = init_model(&spec, &mut RngStream::new(1)).unwrap();
        m.representation[1].tensor_mut("running_mean").data_mut()[0] = 0.3;
        m.representation[3].tensor_mut("running_var").data_mut()[2] = 2.5;
        let mut reference = m.clone();
        warmup_heads(&mut m, &d, 3, 16, WARMUP_LR, &mut RngStream::new(7)).unwrap();
        let opts = TrainOptions {
            batch_size: 16,
            lr: LearningRates {
                representation: 0.0,
                heads: WARMUP_LR,
            },
        };
        let mut rng = RngStream::new(7);
        for _ in 0..3 {
            train_epoch(&mut reference, &d, BnPolicy::Frozen, &opts, &mut rng).unwrap();
        }
        assert_eq!(m, reference);
    }

    #[test]
    fn warmup_zero_epochs_and_empty_data() {
        let spec = toy_spec();
        let mut m = init_model(&spec, &mut RngStream::new(9)).unwrap();
        let before = m.clone();
        warmup_heads(&mut m, &toy(10, 1), 0, 8, WARMUP_LR, &mut RngStream::new(5)).unwrap();
        assert_eq!(m, before);
        let empty = Dataset::empty(2, vec!["y".into()]);
        assert!(warmup_heads(&mut m, &empty, 1, 8, WARMUP_LR, &mut RngStream::new(5)).is_err());
    }

    #[test]
    fn pretrain_learns_statistics_and_is_deterministic() {
        let d = toy(64, 4);
        let spec = ModelSpec::new(2, vec![8], vec!["t".into()]);
        let opts = TrainOptions {
            batch_size: 16,
            lr: LearningRates::uniform(0.05),
        };
        let a = pretrain_backbone(&spec, &d, 2, &opts, &mut RngStream::new(3)).unwrap();
        let b = pretrain_backbone(&spec, &d, 2, &opts, &mut RngStream::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.heads.is_empty());
        let init = init_model(&spec, &mut RngStream::new(3).derive("init")).unwrap();
        assert_ne!(
            a.representation[1].tensor("running_var"),
            init.representation[1].tensor("running_var")
        );
        let zero = pretrain_backbone(&spec, &d, 0, &opts, &mut RngStream::new(3)).unwrap();
        assert_eq!(zero.representation, init.representation);
    }
}
