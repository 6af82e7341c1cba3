#![allow(dead_code)]

pub mod oracle;

use fedfbn::datagen::{
    apply_u_zeros, default_label_names, generate, prune_labels, split_by_patient, DomainSpec,
    LabelModel,
};
use fedfbn::federation::NodeState;
use fedfbn::neural::{init_model, LearningRates, ModelSpec};
use fedfbn::numerics::RngStream;

pub const N_LABELS: usize = 4;

pub fn spec() -> ModelSpec {
    ModelSpec::new(6, vec![8, 5], default_label_names(N_LABELS))
}

/// Small shifted-domain federation; node `k` observes `labels[k]`.
pub fn toy_nodes(seed: u64, labels: &[Vec<&str>], patients: usize) -> Vec<NodeState> {
    let root = RngStream::new(seed);
    let spec = spec();
    let lm =
        LabelModel::sample(spec.label_names.clone(), 3, 0.0, &mut root.derive("labels")).unwrap();
    let base = DomainSpec::base(3, spec.input_dim, 7);
    let init = init_model(&spec, &mut root.derive("init")).unwrap();
    labels
        .iter()
        .enumerate()
        .map(|(k, keep)| {
            let dom = base.shifted(0.5, &mut root.derive(&format!("dom{k}")));
            let ds = generate(&dom, &lm, patients, &root.derive(&format!("data{k}"))).unwrap();
            let ds = prune_labels(&apply_u_zeros(&ds), keep).unwrap();
            let (train, val, _) =
                split_by_patient(&ds, (0.6, 0.2, 0.2), &mut root.derive(&format!("split{k}")))
                    .unwrap();
            let model = init
                .with_new_heads(keep, &mut root.derive(&format!("heads{k}")))
                .unwrap();
            NodeState::new(
                k,
                model,
                train,
                val,
                LearningRates::uniform(0.05),
                16,
                root.derive(&format!("train{k}")),
            )
            .unwrap()
        })
        .collect()
}

pub fn two_nodes(seed: u64) -> Vec<NodeState> {
    toy_nodes(
        seed,
        &[vec!["L00", "L01", "L02"], vec!["L01", "L02", "L03"]],
        80,
    )
}

/// Scenario small enough to run every arm in well under a second.
pub fn tiny_config(
    scenario: fedfbn::experiments::Scenario,
) -> fedfbn::experiments::ExperimentConfig {
    let mut cfg = fedfbn::experiments::ExperimentConfig::new(scenario);
    cfg.master_seed = 11;
    cfg.data.n_patients_per_node = 120;
    cfg.data.n_external_patients = 60;
    cfg.data.n_labels = 6;
    cfg.data.latent_dim = 4;
    cfg.data.feature_dim = 8;
    cfg.labels.node0 = 4;
    cfg.labels.node1 = 4;
    cfg.labels.shared = 2;
    cfg.labels.complete_view = 3;
    cfg.model.hidden_widths = vec![8];
    cfg.pretrain.n_patients = 200;
    cfg.pretrain.epochs = 2;
    cfg.training.rounds = 3;
    cfg.training.batch_size = 16;
    cfg.training.lr = 1e-3;
    cfg.training.node_lr = [1e-3, 5e-3];
    cfg.training.warmup_epochs = 2;
    cfg.evaluation.n_bootstrap = 100;
    cfg
}
