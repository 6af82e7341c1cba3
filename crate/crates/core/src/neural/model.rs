use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{masked_bce, masked_bce_logit_grad};
use crate::error::{Error, Result};
use crate::numerics::{batch_stats, matmul, RngStream, Tensor};

const HEAD_PREFIX: &str = "head.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    BatchNorm,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// How batch-norm layers behave while training.
///
/// `Frozen` normalizes with the stored running statistics, never updates them,
/// and gives gamma/beta no gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnPolicy {
    Normal,
    Frozen,
}

/// One named parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub name: String,
    kind: LayerKind,
    pub tensors: BTreeMap<String, Tensor>,
    pub trainable: bool,
}

impl LayerParams {
    pub fn dense(name: impl Into<String>, weight: Tensor, bias: Tensor) -> Self {
        let mut tensors = BTreeMap::new();
        tensors.insert("weight".to_string(), weight);
        tensors.insert("bias".to_string(), bias);
        Self {
            name: name.into(),
            kind: LayerKind::Other,
            tensors,
            trainable: true,
        }
    }

    pub fn batch_norm(name: impl Into<String>, width: usize) -> Self {
        let mut tensors = BTreeMap::new();
        tensors.insert("gamma".to_string(), Tensor::filled(&[width], 1.0));
        tensors.insert("beta".to_string(), Tensor::zeros(&[width]));
        tensors.insert("running_mean".to_string(), Tensor::zeros(&[width]));
        tensors.insert("running_var".to_string(), Tensor::filled(&[width], 1.0));
        Self {
            name: name.into(),
            kind: LayerKind::BatchNorm,
            tensors,
            trainable: true,
        }
    }

    /// Rebuilds a layer from stored parts, checking the kind's tensor contract.
    pub fn from_parts(
        name: impl Into<String>,
        kind: LayerKind,
        tensors: BTreeMap<String, Tensor>,
        trainable: bool,
    ) -> Result<Self> {
        let layer = Self {
            name: name.into(),
            kind,
            tensors,
            trainable,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn is_batch_norm(&self) -> bool {
        self.kind == LayerKind::BatchNorm
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors.get_mut(name).expect("tensor present")
    }

    fn validate(&self) -> Result<()> {
        let expected: &[&str] = match self.kind {
            LayerKind::BatchNorm => &["beta", "gamma", "running_mean", "running_var"],
            LayerKind::Other => &["bias", "weight"],
        };
        let names: Vec<&str> = self.tensors.keys().map(String::as_str).collect();
        if names != expected {
            return Err(Error::Protocol(format!(
                "layer `{}` has tensors {names:?}, expected {expected:?}",
                self.name
            )));
        }
        if self.kind == LayerKind::BatchNorm {
            let w = self.tensors["gamma"].len();
            if self.tensors.values().any(|t| t.shape() != [w]) {
                return Err(Error::Protocol(format!(
                    "batch-norm layer `{}` has inconsistent widths",
                    self.name
                )));
            }
            if self.tensors["running_var"].data().iter().any(|&v| v < 0.0) {
                return Err(Error::Protocol(format!(
                    "batch-norm layer `{}` has negative running variance",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// True when every tensor has the same shape and kind as `other`.
    pub fn same_layout(&self, other: &LayerParams) -> bool {
        self.name == other.name
            && self.kind == other.kind
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub label_names: Vec<String>,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, label_names: Vec<String>) -> Self {
        Self {
            input_dim,
            hidden_widths,
            label_names,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.label_names.is_empty() {
            return Err(Error::Config("model needs at least one label".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.label_names {
            if l.is_empty() || l.contains('/') {
                return Err(Error::Config(format!("invalid label name `{l}`")));
            }
            if !seen.insert(l) {
                return Err(Error::Config(format!("duplicate label `{l}`")));
            }
        }
        if self.bn_epsilon.is_nan() || self.bn_epsilon <= 0.0 {
            return Err(Error::Config("bn_epsilon must be positive".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::Config("bn_momentum must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn last_width(&self) -> usize {
        self.hidden_widths.last().copied().unwrap_or(self.input_dim)
    }
}

pub fn head_layer_name(label: &str) -> String {
    format!("{HEAD_PREFIX}{label}")
}

pub fn label_of_head(layer_name: &str) -> Option<&str> {
    layer_name.strip_prefix(HEAD_PREFIX)
}

/// Representation block (dense → BN → ReLU per hidden width) followed by one
/// sigmoid head per label present in this instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub representation: Vec<LayerParams>,
    pub heads: Vec<LayerParams>,
    pub mode: Mode,
}

/// Gradients keyed by layer name, then tensor name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients(pub BTreeMap<String, BTreeMap<String, Tensor>>);

impl Gradients {
    pub fn get(&self, layer: &str, tensor: &str) -> Option<&Tensor> {
        self.0.get(layer).and_then(|m| m.get(tensor))
    }

    fn insert(&mut self, layer: &str, tensor: &str, g: Tensor) {
        self.0
            .entry(layer.to_string())
            .or_default()
            .insert(tensor.to_string(), g);
    }

    /// All `layer/tensor` keys.
    pub fn keys(&self) -> Vec<String> {
        self.0
            .iter()
            .flat_map(|(l, m)| m.keys().map(move |t| format!("{l}/{t}")))
            .collect()
    }
}

fn he_uniform(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches")
}

fn init_head(label: &str, width: usize, rng: &mut RngStream) -> LayerParams {
    LayerParams::dense(
        head_layer_name(label),
        he_uniform(width, 1, rng),
        Tensor::zeros(&[1]),
    )
}

/// Fresh model: He-uniform dense weights, zero biases, identity batch norm.
///
/// Representation weights are drawn before any head, so the representation is
/// independent of the label set.
pub fn init_model(spec: &ModelSpec, rng: &mut RngStream) -> Result<Model> {
    spec.validate()?;
    let mut representation = Vec::new();
    let mut fan_in = spec.input_dim;
    for (i, &w) in spec.hidden_widths.iter().enumerate() {
        representation.push(LayerParams::dense(
            format!("dense{i}"),
            he_uniform(fan_in, w, rng),
            Tensor::zeros(&[w]),
        ));
        representation.push(LayerParams::batch_norm(format!("bn{i}"), w));
        fan_in = w;
    }
    let heads = spec
        .label_names
        .iter()
        .map(|l| init_head(l, fan_in, rng))
        .collect();
    Ok(Model {
        spec: spec.clone(),
        representation,
        heads,
        mode: Mode::Train,
    })
}

struct HiddenCache {
    input: Tensor,
    xhat: Tensor,
    inv_std: Vec<f64>,
    batch_normalized: bool,
    /// post-BN, pre-ReLU
    pre_act: Tensor,
}

struct ForwardCache {
    hidden: Vec<HiddenCache>,
    last: Tensor,
    prob: Tensor,
}

struct RunningUpdate {
    layer: usize,
    mean: Tensor,
    var: Tensor,
}

impl Model {
    /// Assembles a model from parts, checking layout against `spec`.
    pub fn from_parts(
        spec: ModelSpec,
        representation: Vec<LayerParams>,
        heads: Vec<LayerParams>,
    ) -> Result<Model> {
        spec.validate()?;
        let mut rng = RngStream::new(0);
        let template = init_model(&spec, &mut rng)?;
        if representation.len() != template.representation.len()
            || representation
                .iter()
                .zip(&template.representation)
                .any(|(a, b)| !a.same_layout(b))
        {
            return Err(Error::Protocol(
                "representation layout does not match spec".into(),
            ));
        }
        for l in &representation {
            l.validate()?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for h in &heads {
            let label = label_of_head(&h.name)
                .ok_or_else(|| Error::Protocol(format!("`{}` is not a head", h.name)))?;
            if !spec.label_names.iter().any(|l| l == label) {
                return Err(Error::Label(label.to_string()));
            }
            if !seen.insert(label.to_string()) {
                return Err(Error::Protocol(format!("duplicate head `{label}`")));
            }
            if h.kind != LayerKind::Other || h.tensor("weight").shape() != [spec.last_width(), 1] {
                return Err(Error::Protocol(format!("head `{label}` has wrong layout")));
            }
            h.validate()?;
        }
        Ok(Model {
            spec,
            representation,
            heads,
            mode: Mode::Train,
        })
    }

    pub fn head_labels(&self) -> Vec<String> {
        self.heads
            .iter()
            .filter_map(|h| label_of_head(&h.name).map(str::to_string))
            .collect()
    }

    pub fn head(&self, label: &str) -> Option<&LayerParams> {
        let name = head_layer_name(label);
        self.heads.iter().find(|h| h.name == name)
    }

    /// Replaces the heads with freshly initialized ones for `labels`.
    pub fn with_new_heads<S: AsRef<str>>(
        &self,
        labels: &[S],
        rng: &mut RngStream,
    ) -> Result<Model> {
        let width = self.spec.last_width();
        let mut heads = Vec::with_capacity(labels.len());
        for l in labels {
            let l = l.as_ref();
            if !self.spec.label_names.iter().any(|n| n == l) {
                return Err(Error::Label(l.to_string()));
            }
            heads.push(init_head(l, width, rng));
        }
        let mut m = self.clone();
        m.heads = heads;
        Ok(m)
    }

    pub fn without_heads(&self) -> Model {
        let mut m = self.clone();
        m.heads.clear();
        m
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.representation.iter().chain(&self.heads)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.representation.iter_mut().chain(self.heads.iter_mut())
    }

    /// Concatenation of every batch-norm tensor, for invariance checks.
    pub fn batch_norm_snapshot(&self) -> Vec<(String, Tensor)> {
        self.representation
            .iter()
            .filter(|l| l.is_batch_norm())
            .flat_map(|l| {
                l.tensors
                    .iter()
                    .map(move |(t, v)| (format!("{}/{t}", l.name), v.clone()))
            })
            .collect()
    }

    fn head_matrix(&self) -> (Tensor, Vec<f64>) {
        let width = self.spec.last_width();
        let n = self.heads.len();
        let mut w = Tensor::zeros(&[width, n]);
        let mut b = Vec::with_capacity(n);
        for (j, h) in self.heads.iter().enumerate() {
            let hw = h.tensor("weight");
            for i in 0..width {
                w.set(i, j, hw.data()[i]);
            }
            b.push(h.tensor("bias").data()[0]);
        }
        (w, b)
    }

    fn run_forward(
        &self,
        x: &Tensor,
        mode: Mode,
        policy: BnPolicy,
    ) -> Result<(ForwardCache, Vec<RunningUpdate>)> {
        if x.shape().len() != 2 || x.cols() != self.spec.input_dim {
            return Err(Error::Dimension(format!(
                "input shape {:?}, expected [batch, {}]",
                x.shape(),
                self.spec.input_dim
            )));
        }
        let batch = x.rows();
        if batch == 0 {
            return Err(Error::EmptyBatch);
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("forward input".into()));
        }
        let batch_mode = mode == Mode::Train && policy == BnPolicy::Normal;
        if batch_mode && batch == 1 && !self.spec.hidden_widths.is_empty() {
            return Err(Error::DegenerateBatch(
                "batch of 1 cannot be normalized by batch statistics".into(),
            ));
        }
        let eps = self.spec.bn_epsilon;
        let mut hidden = Vec::with_capacity(self.spec.hidden_widths.len());
        let mut updates = Vec::new();
        let mut act = x.clone();
        for (i, pair) in self.representation.chunks(2).enumerate() {
            let (dense, bn) = (&pair[0], &pair[1]);
            let z = matmul(&act, dense.tensor("weight"))?
                .add_row_vector(dense.tensor("bias").data())?;
            let (mean, var) = if batch_mode {
                let (m, v) = batch_stats(&z)?;
                updates.push(RunningUpdate {
                    layer: 2 * i + 1,
                    mean: m.clone(),
                    var: v.clone(),
                });
                (m, v)
            } else {
                (
                    bn.tensor("running_mean").clone(),
                    bn.tensor("running_var").clone(),
                )
            };
            let inv_std: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let width = z.cols();
            let gamma = bn.tensor("gamma").data();
            let beta = bn.tensor("beta").data();
            let mut xhat = z;
            let mut pre_act = Tensor::zeros(&[batch, width]);
            for r in 0..batch {
                for c in 0..width {
                    let xh = (xhat.get(r, c) - mean.data()[c]) * inv_std[c];
                    xhat.set(r, c, xh);
                    pre_act.set(r, c, gamma[c] * xh + beta[c]);
                }
            }
            let out = pre_act.map(|v| v.max(0.0));
            hidden.push(HiddenCache {
                input: act,
                xhat,
                inv_std,
                batch_normalized: batch_mode,
                pre_act,
            });
            act = out;
        }
        let prob = self.head_forward(&act)?;
        Ok((
            ForwardCache {
                hidden,
                last: act,
                prob,
            },
            updates,
        ))
    }

    fn head_forward(&self, last: &Tensor) -> Result<Tensor> {
        let (hw, hb) = self.head_matrix();
        let logits = matmul(last, &hw)?.add_row_vector(&hb)?;
        logits.map(sigmoid).ensure_finite("forward")
    }

    fn head_gradients(&self, last: &Tensor, dlogit: &Tensor, grads: &mut Gradients) -> Result<()> {
        let dw_heads = matmul(&last.transpose()?, dlogit)?;
        let db_heads = dlogit.column_sums()?;
        for (j, h) in self.heads.iter().enumerate() {
            if !h.trainable {
                continue;
            }
            let col = dw_heads.select_cols(&[j])?;
            let col = Tensor::new(vec![col.len(), 1], col.into_data())?;
            grads.insert(&h.name, "weight", col);
            grads.insert(&h.name, "bias", Tensor::vector(vec![db_heads[j]]));
        }
        Ok(())
    }

    /// Eval-mode output of the representation block (the heads' input).
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run_forward(x, Mode::Eval, BnPolicy::Normal)?.0.last)
    }

    /// Loss and head-only gradients from precomputed representation
    /// features. Under a frozen representation this equals
    /// [`Model::loss_and_gradients`] restricted to the heads.
    pub fn head_loss_and_gradients(
        &self,
        features: &Tensor,
        target: &Tensor,
        mask: &Tensor,
    ) -> Result<(f64, Gradients)> {
        if features.shape().len() != 2 || features.cols() != self.spec.last_width() {
            return Err(Error::Dimension(format!(
                "features shape {:?}, expected [batch, {}]",
                features.shape(),
                self.spec.last_width()
            )));
        }
        let prob = self.head_forward(features)?;
        let loss = masked_bce(&prob, target, mask)?;
        let dlogit = masked_bce_logit_grad(&prob, target, mask)?;
        let mut grads = Gradients::default();
        self.head_gradients(features, &dlogit, &mut grads)?;
        Ok((loss, grads))
    }

    fn apply_running_updates(&mut self, updates: Vec<RunningUpdate>) {
        let m = self.spec.bn_momentum;
        for u in updates {
            let bn = &mut self.representation[u.layer];
            for (name, stat) in [("running_mean", &u.mean), ("running_var", &u.var)] {
                let t = bn.tensor_mut(name);
                for (r, s) in t.data_mut().iter_mut().zip(stat.data()) {
                    *r = (1.0 - m) * *r + m * s;
                }
            }
        }
    }

    /// Per-label probabilities. In `Train` mode with `Normal` policy the batch
    /// statistics normalize and the running statistics are updated; otherwise
    /// nothing is mutated.
    pub fn forward(&mut self, x: &Tensor, policy: BnPolicy) -> Result<Tensor> {
        let (cache, updates) = self.run_forward(x, self.mode, policy)?;
        self.apply_running_updates(updates);
        Ok(cache.prob)
    }

    /// Eval-mode forward; never mutates.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run_forward(x, Mode::Eval, BnPolicy::Normal)?.0.prob)
    }

    /// Train-mode loss without touching running statistics.
    pub fn train_loss(
        &self,
        x: &Tensor,
        target: &Tensor,
        mask: &Tensor,
        policy: BnPolicy,
    ) -> Result<f64> {
        let (cache, _) = self.run_forward(x, Mode::Train, policy)?;
        masked_bce(&cache.prob, target, mask)
    }

    /// Train-mode forward plus reverse pass. Updates running statistics under
    /// `Normal`. Returns the loss before the update and gradients for every
    /// trainable tensor (batch-norm tensors are omitted under `Frozen`).
    pub fn loss_and_gradients(
        &mut self,
        x: &Tensor,
        target: &Tensor,
        mask: &Tensor,
        policy: BnPolicy,
    ) -> Result<(f64, Gradients)> {
        let (cache, updates) = self.run_forward(x, Mode::Train, policy)?;
        let loss = masked_bce(&cache.prob, target, mask)?;
        let grads = self.backward_from(&cache, target, mask, policy)?;
        self.apply_running_updates(updates);
        Ok((loss, grads))
    }

    fn backward_from(
        &self,
        cache: &ForwardCache,
        target: &Tensor,
        mask: &Tensor,
        policy: BnPolicy,
    ) -> Result<Gradients> {
        let mut grads = Gradients::default();
        let dlogit = masked_bce_logit_grad(&cache.prob, target, mask)?;
        let batch = dlogit.rows();

        self.head_gradients(&cache.last, &dlogit, &mut grads)?;
        if cache.hidden.is_empty() {
            return Ok(grads);
        }
        let (hw, _) = self.head_matrix();
        let mut dact = matmul(&dlogit, &hw.transpose()?)?;

        for (i, hc) in cache.hidden.iter().enumerate().rev() {
            let dense = &self.representation[2 * i];
            let bn = &self.representation[2 * i + 1];
            let width = hc.xhat.cols();
            // ReLU
            let mut dy = dact;
            for (g, &p) in dy.data_mut().iter_mut().zip(hc.pre_act.data()) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
            let gamma = bn.tensor("gamma").data();
            let mut dgamma = vec![0.0; width];
            let mut dbeta = vec![0.0; width];
            let mut dxhat = Tensor::zeros(&[batch, width]);
            for r in 0..batch {
                for c in 0..width {
                    let g = dy.get(r, c);
                    dgamma[c] += g * hc.xhat.get(r, c);
                    dbeta[c] += g;
                    dxhat.set(r, c, g * gamma[c]);
                }
            }
            if policy == BnPolicy::Normal && bn.trainable {
                grads.insert(&bn.name, "gamma", Tensor::vector(dgamma));
                grads.insert(&bn.name, "beta", Tensor::vector(dbeta));
            }
            let mut dz = Tensor::zeros(&[batch, width]);
            if hc.batch_normalized {
                let n = batch as f64;
                let mut sum_dxhat = vec![0.0; width];
                let mut sum_dxhat_xhat = vec![0.0; width];
                for r in 0..batch {
                    for c in 0..width {
                        sum_dxhat[c] += dxhat.get(r, c);
                        sum_dxhat_xhat[c] += dxhat.get(r, c) * hc.xhat.get(r, c);
                    }
                }
                for r in 0..batch {
                    for c in 0..width {
                        let v = hc.inv_std[c] / n
                            * (n * dxhat.get(r, c)
                                - sum_dxhat[c]
                                - hc.xhat.get(r, c) * sum_dxhat_xhat[c]);
                        dz.set(r, c, v);
                    }
                }
            } else {
                for r in 0..batch {
                    for c in 0..width {
                        dz.set(r, c, dxhat.get(r, c) * hc.inv_std[c]);
                    }
                }
            }
            if dense.trainable {
                grads.insert(&dense.name, "weight", matmul(&hc.input.transpose()?, &dz)?);
                grads.insert(&dense.name, "bias", Tensor::vector(dz.column_sums()?));
            }
            if i > 0 {
                dact = matmul(&dz, &dense.tensor("weight").transpose()?)?;
            } else {
                dact = Tensor::zeros(&[0, 0]);
            }
        }
        Ok(grads)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
