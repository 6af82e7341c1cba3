use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{
    aggregate_representation, merge_heads, AggregatedRepresentation, StrategyKind, Weighting,
};
use super::bundle::{extract_bundle, ParameterBundle};
use super::global::GlobalModel;
use super::node::{local_train, NodeState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FederationConfig {
    pub strategy: StrategyKind,
    pub rounds: usize,
    pub local_epochs: usize,
    pub weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub per_node_val_loss: BTreeMap<usize, f64>,
    pub mean_loss: f64,
    pub is_best_so_far: bool,
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub best: GlobalModel,
    pub reports: Vec<RoundReport>,
    pub nodes: Vec<NodeState>,
}

impl FederationOutcome {
    pub fn best_report(&self) -> &RoundReport {
        &self.reports[self.best.round - 1]
    }
}

fn wrap(node: usize, round: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Node {
        node,
        round,
        source: Box::new(e),
    }
}

fn server_step(
    bundles: &[ParameterBundle],
    nodes: &[NodeState],
    config: &FederationConfig,
    round: usize,
) -> Result<GlobalModel> {
    let spec = &nodes[0].model.spec;
    let representation = if config.strategy.aggregates() {
        aggregate_representation(bundles, config.strategy, config.weighting)?
    } else {
        let b = &bundles[0];
        AggregatedRepresentation {
            layer_order: b.representation.iter().map(|l| l.name.clone()).collect(),
            shared: b.representation.clone(),
            personalized: BTreeMap::new(),
        }
    };
    let mut union: Vec<String> = Vec::new();
    for l in spec.label_names.iter() {
        if nodes.iter().any(|n| n.label_subset.contains(l)) {
            union.push(l.clone());
        }
    }
    let merged = merge_heads(bundles, &union)?;
    Ok(GlobalModel {
        spec: spec.clone(),
        strategy: config.strategy,
        round,
        representation,
        heads: merged.heads,
        provenance: merged.provenance,
        node_labels: nodes
            .iter()
            .map(|n| (n.node_id, n.label_subset.clone()))
            .collect(),
    })
}

/// Round loop: local training, aggregation, push-back, post-aggregation
/// validation and best-snapshot selection by mean validation loss (ties keep
/// the earliest round).
pub fn run_federation(
    nodes: Vec<NodeState>,
    config: &FederationConfig,
) -> Result<FederationOutcome> {
    run_federation_with(nodes, config, |_, _, _| {})
}

/// [`run_federation`] calling `observe` after every round with the round's
/// report, the aggregated snapshot and the nodes holding their pushed-back
/// models.
pub fn run_federation_with<F>(
    mut nodes: Vec<NodeState>,
    config: &FederationConfig,
    mut observe: F,
) -> Result<FederationOutcome>
where
    F: FnMut(&RoundReport, &GlobalModel, &[NodeState]),
{
    if nodes.is_empty() {
        return Err(Error::Config("federation needs at least one node".into()));
    }
    if config.rounds == 0 || config.local_epochs == 0 {
        return Err(Error::Config("rounds and local_epochs must be ≥ 1".into()));
    }
    if !config.strategy.aggregates() && nodes.len() != 1 {
        return Err(Error::Config(format!(
            "{} runs on exactly one node, got {}",
            config.strategy,
            nodes.len()
        )));
    }
    nodes.sort_by_key(|n| n.node_id);
    if nodes.windows(2).any(|w| w[0].node_id == w[1].node_id) {
        return Err(Error::Config("duplicate node id".into()));
    }
    for n in &nodes {
        n.validate()?;
        if n.model.spec != nodes[0].model.spec {
            return Err(Error::Config(format!(
                "node {} model spec differs from node {}",
                n.node_id, nodes[0].node_id
            )));
        }
    }

    let mut reports: Vec<RoundReport> = Vec::with_capacity(config.rounds);
    let mut best: Option<GlobalModel> = None;
    let mut best_loss = f64::INFINITY;
    for round in 1..=config.rounds {
        nodes
            .par_iter_mut()
            .map(|n| {
                local_train(n, config.strategy, config.local_epochs).map_err(wrap(n.node_id, round))
            })
            .collect::<Result<Vec<()>>>()?;
        let bundles: Vec<ParameterBundle> =
            nodes.iter().map(|n| extract_bundle(n, round)).collect();
        let global = server_step(&bundles, &nodes, config, round)?;

        let mut per_node_val_loss = BTreeMap::new();
        for node in nodes.iter_mut() {
            node.model = global
                .node_model(node.node_id)
                .map_err(wrap(node.node_id, round))?;
            let loss = node.val_loss().map_err(wrap(node.node_id, round))?;
            per_node_val_loss.insert(node.node_id, loss);
        }
        let mean_loss = per_node_val_loss.values().sum::<f64>() / per_node_val_loss.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "mean validation loss in round {round}"
            )));
        }
        let is_best = mean_loss < best_loss;
        let report = RoundReport {
            round,
            per_node_val_loss,
            mean_loss,
            is_best_so_far: is_best,
        };
        observe(&report, &global, &nodes);
        reports.push(report);
        if is_best {
            best_loss = mean_loss;
            best = Some(global);
        }
    }
    Ok(FederationOutcome {
        best: best.expect("at least one finite round"),
        reports,
        nodes,
    })
}

/// `round,loss_node<id>...,mean_loss,best` with one row per round.
pub fn round_log_csv(reports: &[RoundReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ids: Vec<usize> = reports
        .first()
        .map(|r| r.per_node_val_loss.keys().copied().collect())
        .unwrap_or_default();
    let mut header = vec!["round".to_string()];
    header.extend(ids.iter().map(|i| format!("loss_node{i}")));
    header.extend(["mean_loss".to_string(), "best".to_string()]);
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.round.to_string()];
        for i in &ids {
            let v = r
                .per_node_val_loss
                .get(i)
                .ok_or_else(|| Error::Input(format!("round {} lacks node {i}", r.round)))?;
            row.push(v.to_string());
        }
        row.push(r.mean_loss.to_string());
        row.push(u8::from(r.is_best_so_far).to_string());
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}
