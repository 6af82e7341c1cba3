use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Scenario};
use crate::datagen::{
    apply_u_zeros, concat_naive, default_label_names, generate, make_iid_halves, prune_labels,
    split_by_patient, Dataset, DomainSpec, LabelModel,
};
use crate::error::{Error, Result};
use crate::federation::NodeState;
use crate::neural::{
    pretrain_backbone, warmup_heads, LearningRates, Model, ModelSpec, TrainOptions,
};
use crate::numerics::RngStream;

/// Name of the held-out third-domain test set.
pub const EXTERNAL_TEST: &str = "external";

#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub labels: Vec<String>,
    pub domain: DomainSpec,
}

/// Generated data for one scenario, before any training.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    pub global_labels: Vec<String>,
    pub label_model: LabelModel,
    pub source: Dataset,
    pub source_domain: DomainSpec,
    pub nodes: Vec<NodeData>,
    pub external: Dataset,
    pub external_domain: DomainSpec,
}

impl ScenarioData {
    /// Every dataset by file stem.
    pub fn datasets(&self) -> Vec<(String, &Dataset)> {
        let mut out = vec![("source".to_string(), &self.source)];
        for (k, n) in self.nodes.iter().enumerate() {
            out.push((format!("node{k}_train"), &n.train));
            out.push((format!("node{k}_val"), &n.val));
            out.push((format!("node{k}_test"), &n.test));
        }
        out.push((format!("{EXTERNAL_TEST}_test"), &self.external));
        out
    }

    pub fn dataset_hashes(&self) -> BTreeMap<String, String> {
        self.datasets()
            .into_iter()
            .map(|(n, d)| (n, d.content_hash()))
            .collect()
    }

    /// Union of node label subsets in global order.
    pub fn union_labels(&self) -> Vec<String> {
        self.global_labels
            .iter()
            .filter(|l| self.nodes.iter().any(|n| n.labels.contains(l)))
            .cloned()
            .collect()
    }

    pub fn test_sets(&self) -> Vec<(String, &Dataset)> {
        let mut out: Vec<(String, &Dataset)> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(k, n)| (format!("node{k}"), &n.test))
            .collect();
        out.push((EXTERNAL_TEST.to_string(), &self.external));
        out
    }

    /// Label views: all (union), shared (intersection) and each node's
    /// subset, with duplicates removed.
    pub fn label_views(&self) -> Vec<(String, Vec<String>)> {
        let mut views = vec![("all".to_string(), self.union_labels())];
        let shared: Vec<String> = self
            .union_labels()
            .into_iter()
            .filter(|l| self.nodes.iter().all(|n| n.labels.contains(l)))
            .collect();
        if !shared.is_empty() {
            views.push(("shared".to_string(), shared));
        }
        for (k, n) in self.nodes.iter().enumerate() {
            views.push((format!("node{k}"), n.labels.clone()));
        }
        let mut out: Vec<(String, Vec<String>)> = Vec::new();
        for v in views {
            if !out.iter().any(|(_, l)| *l == v.1) {
                out.push(v);
            }
        }
        out
    }
}

fn offset_patients(ds: &mut Dataset, offset: u64) {
    for p in &mut ds.patient_ids {
        *p += offset;
    }
}

/// Node label subsets in global order.
fn label_plan(cfg: &ExperimentConfig, names: &[String], rng: &mut RngStream) -> [Vec<String>; 2] {
    let mut shuffled = names.to_vec();
    shuffled.shuffle(rng);
    let in_order = |chosen: &[String]| -> Vec<String> {
        names
            .iter()
            .filter(|n| chosen.contains(n))
            .cloned()
            .collect()
    };
    let p = &cfg.labels;
    match cfg.scenario {
        Scenario::IidComplete => [names.to_vec(), names.to_vec()],
        Scenario::NonIidComplete => {
            let v = in_order(&shuffled[..p.complete_view]);
            [v.clone(), v]
        }
        Scenario::IidPartial | Scenario::NonIidPartial => {
            let shared = &shuffled[..p.shared];
            let only0 = &shuffled[p.shared..p.node0];
            let only1 = &shuffled[p.node0..];
            [
                in_order(&[shared, only0].concat()),
                in_order(&[shared, only1].concat()),
            ]
        }
    }
}

/// Generates domains, patients, splits and label pruning for `cfg`.
pub fn build_data(cfg: &ExperimentConfig) -> Result<ScenarioData> {
    cfg.validate()?;
    let master = RngStream::new(cfg.master_seed);
    let d = &cfg.data;
    let names = default_label_names(d.n_labels);
    let label_model = LabelModel::sample(
        names.clone(),
        d.latent_dim,
        d.uncertain_rate,
        &mut master.derive("label_model"),
    )?;

    let mut base = DomainSpec::base(d.latent_dim, d.feature_dim, master.derive("mix").next_u64());
    base.noise_std = d.noise_std;
    base.validate()?;

    let source_names: Vec<String> = (0..d.n_labels).map(|i| format!("S{i:02}")).collect();
    let source_model = LabelModel::sample(
        source_names,
        d.latent_dim,
        0.0,
        &mut master.derive("source_labels"),
    )?;
    let source = generate(
        &base,
        &source_model,
        cfg.pretrain.n_patients,
        &master.derive("data:source"),
    )?;

    let n = d.n_patients_per_node;
    let (raw, domains): (Vec<Dataset>, Vec<DomainSpec>) = if cfg.scenario.is_iid() {
        let pool = generate(&base, &label_model, 2 * n, &master.derive("data:pool"))?;
        let (a, b) = make_iid_halves(&pool, &mut master.derive("halves"))?;
        (vec![a, b], vec![base.clone(), base.clone()])
    } else {
        let mut raw = Vec::new();
        let mut domains = Vec::new();
        for k in 0..2 {
            let dom = base.shifted(
                d.shift_magnitude,
                &mut master.derive(&format!("domain:{k}")),
            );
            let mut ds = generate(&dom, &label_model, n, &master.derive(&format!("data:{k}")))?;
            offset_patients(&mut ds, (k * n) as u64);
            raw.push(ds);
            domains.push(dom);
        }
        (raw, domains)
    };

    let external_domain = if d.shift_magnitude > 0.0 {
        base.shifted(d.shift_magnitude, &mut master.derive("domain:external"))
    } else {
        base.clone()
    };
    let mut external = generate(
        &external_domain,
        &label_model,
        d.n_external_patients,
        &master.derive("data:external"),
    )?;
    offset_patients(&mut external, (2 * n) as u64);
    let external = apply_u_zeros(&external);

    let plan = label_plan(cfg, &names, &mut master.derive("label_plan"));
    let fractions = (d.split[0], d.split[1], d.split[2]);
    let mut nodes = Vec::with_capacity(2);
    for (k, ((ds, domain), labels)) in raw.into_iter().zip(domains).zip(plan).enumerate() {
        let ds = apply_u_zeros(&ds);
        let ds = if labels.len() == names.len() {
            ds
        } else {
            prune_labels(&ds, &labels)?
        };
        let (train, val, test) =
            split_by_patient(&ds, fractions, &mut master.derive(&format!("split:{k}")))?;
        nodes.push(NodeData {
            train,
            val,
            test,
            labels,
            domain,
        });
    }
    Ok(ScenarioData {
        global_labels: names,
        label_model,
        source,
        source_domain: base,
        nodes,
        external,
        external_domain,
    })
}

/// Warmed-up participants shared by every arm.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub data: ScenarioData,
    pub backbone: Model,
    pub nodes: Vec<NodeState>,
    pub centralized: NodeState,
}

impl PreparedScenario {
    /// sha256 over a node's data and initial parameters.
    pub fn node_hash(node: &NodeState) -> String {
        let mut h = Sha256::new();
        h.update(node.train.content_hash());
        h.update(node.val.content_hash());
        h.update(
            node.model
                .to_checkpoint()
                .to_bytes()
                .expect("model serializes"),
        );
        h.update(node.rng.seed().to_le_bytes());
        hex::encode(h.finalize())
    }
}

fn node_lr(cfg: &ExperimentConfig, k: usize) -> LearningRates {
    if cfg.scenario.is_iid() {
        LearningRates::uniform(cfg.training.lr)
    } else {
        LearningRates::uniform(cfg.training.node_lr[k])
    }
}

/// One participant awaiting head warm-up. `tag` names its random streams.
struct WarmJob {
    tag: String,
    node_id: usize,
    labels: Vec<String>,
    train: Dataset,
    val: Dataset,
    lr: LearningRates,
}

fn warm_node(
    cfg: &ExperimentConfig,
    master: &RngStream,
    backbone: &Model,
    job: WarmJob,
) -> Result<NodeState> {
    let tag = &job.tag;
    let mut model =
        backbone.with_new_heads(&job.labels, &mut master.derive(&format!("heads:{tag}")))?;
    warmup_heads(
        &mut model,
        &job.train,
        cfg.training.warmup_epochs,
        cfg.training.warmup_batch_size,
        cfg.training.warmup_lr,
        &mut master.derive(&format!("warmup:{tag}")),
    )?;
    NodeState::new(
        job.node_id,
        model,
        job.train,
        job.val,
        job.lr,
        cfg.training.batch_size,
        master.derive(&format!("train:{tag}")),
    )
}

/// Builds data, pretrains the backbone on the source domain and warms up the
/// heads of every node and of the centralized baseline.
pub fn build_scenario(cfg: &ExperimentConfig) -> Result<PreparedScenario> {
    let data = build_data(cfg)?;
    let master = RngStream::new(cfg.master_seed);
    let spec = ModelSpec::new(
        cfg.data.feature_dim,
        cfg.model.hidden_widths.clone(),
        data.global_labels.clone(),
    );
    let opts = TrainOptions {
        batch_size: cfg.pretrain.batch_size,
        lr: LearningRates::uniform(cfg.pretrain.lr),
    };
    let backbone = pretrain_backbone(
        &spec,
        &data.source,
        cfg.pretrain.epochs,
        &opts,
        &mut master.derive("pretrain"),
    )?;
    if !backbone
        .representation
        .iter()
        .all(|l| l.tensors.values().all(|t| t.all_finite()))
    {
        return Err(Error::NonFinite("pretrained backbone".into()));
    }

    let (train, val) = data.nodes.iter().try_fold(
        (None::<Dataset>, None::<Dataset>),
        |(t, v), nd| -> Result<_> {
            Ok((
                Some(match t {
                    None => nd.train.clone(),
                    Some(t) => concat_naive(&t, &nd.train)?,
                }),
                Some(match v {
                    None => nd.val.clone(),
                    Some(v) => concat_naive(&v, &nd.val)?,
                }),
            ))
        },
    )?;
    let mut jobs: Vec<WarmJob> = data
        .nodes
        .iter()
        .enumerate()
        .map(|(k, nd)| WarmJob {
            tag: k.to_string(),
            node_id: k,
            labels: nd.labels.clone(),
            train: nd.train.clone(),
            val: nd.val.clone(),
            lr: node_lr(cfg, k),
        })
        .collect();
    jobs.push(WarmJob {
        tag: "central".to_string(),
        node_id: 0,
        labels: data.union_labels(),
        train: train.expect("two nodes"),
        val: val.expect("two nodes"),
        lr: LearningRates::uniform(cfg.training.lr),
    });
    let mut nodes = jobs
        .into_par_iter()
        .map(|job| warm_node(cfg, &master, &backbone, job))
        .collect::<Result<Vec<_>>>()?;
    let centralized = nodes.pop().expect("central node");
    Ok(PreparedScenario {
        data,
        backbone,
        nodes,
        centralized,
    })
}
