use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::aggregate::{AggregatedRepresentation, StrategyKind};
use crate::error::{Error, Result};
use crate::neural::{
    Checkpoint, CheckpointEntry, LayerParams, Model, ModelSpec, GROUP_HEAD, GROUP_REPRESENTATION,
};

const META_SECTION: &str = "provenance";

/// Server-side model snapshot after one round.
///
/// Under FedBN the batch-norm layers are personalized and the snapshot is the
/// collection of per-node models.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub spec: ModelSpec,
    pub strategy: StrategyKind,
    pub round: usize,
    pub representation: AggregatedRepresentation,
    pub heads: BTreeMap<String, LayerParams>,
    pub provenance: BTreeMap<String, Vec<usize>>,
    pub node_labels: BTreeMap<usize, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    strategy: StrategyKind,
    round: usize,
    layer_order: Vec<String>,
    provenance: BTreeMap<String, Vec<usize>>,
    node_labels: BTreeMap<usize, Vec<String>>,
}

impl GlobalModel {
    pub fn is_personalized(&self) -> bool {
        !self.representation.personalized.is_empty()
    }

    pub fn node_ids(&self) -> Vec<usize> {
        self.node_labels.keys().copied().collect()
    }

    fn assemble<S: AsRef<str>>(&self, rep: Vec<LayerParams>, labels: &[S]) -> Result<Model> {
        let heads = labels
            .iter()
            .map(|l| {
                self.heads
                    .get(l.as_ref())
                    .cloned()
                    .ok_or_else(|| Error::Label(l.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Model::from_parts(self.spec.clone(), rep, heads)
    }

    /// Shared representation with every merged head.
    pub fn model(&self) -> Result<Model> {
        if self.is_personalized() {
            return Err(Error::Protocol(
                "personalized snapshot has no single global model".into(),
            ));
        }
        let labels: Vec<&String> = self.heads.keys().collect();
        self.assemble(self.representation.shared.clone(), &labels)
    }

    /// Representation as seen by `node` with the heads for its own labels.
    pub fn node_model(&self, node: usize) -> Result<Model> {
        let labels = self
            .node_labels
            .get(&node)
            .ok_or_else(|| Error::Input(format!("unknown node {node}")))?;
        self.assemble(self.representation.for_node(node)?, labels)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut entries: Vec<CheckpointEntry> = self
            .representation
            .shared
            .iter()
            .map(|l| CheckpointEntry {
                group: GROUP_REPRESENTATION.into(),
                layer: l.clone(),
            })
            .collect();
        for (node, layers) in &self.representation.personalized {
            entries.extend(layers.iter().map(|l| CheckpointEntry {
                group: format!("node:{node}"),
                layer: l.clone(),
            }));
        }
        entries.extend(self.heads.values().map(|l| CheckpointEntry {
            group: GROUP_HEAD.into(),
            layer: l.clone(),
        }));
        let meta = Meta {
            strategy: self.strategy,
            round: self.round,
            layer_order: self.representation.layer_order.clone(),
            provenance: self.provenance.clone(),
            node_labels: self.node_labels.clone(),
        };
        let mut sections = BTreeMap::new();
        sections.insert(META_SECTION.to_string(), serde_json::to_vec(&meta)?);
        Ok(Checkpoint {
            spec: self.spec.clone(),
            entries,
            sections,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<GlobalModel> {
        let meta: Meta = serde_json::from_slice(
            ckpt.sections
                .get(META_SECTION)
                .ok_or_else(|| Error::Checkpoint("missing provenance section".into()))?,
        )?;
        let mut personalized = BTreeMap::new();
        for node in meta.node_labels.keys() {
            let layers = ckpt.group(&format!("node:{node}"));
            if !layers.is_empty() {
                personalized.insert(*node, layers);
            }
        }
        let mut heads = BTreeMap::new();
        for h in ckpt.group(GROUP_HEAD) {
            let label = crate::neural::label_of_head(&h.name)
                .ok_or_else(|| Error::Checkpoint(format!("`{}` is not a head", h.name)))?
                .to_string();
            heads.insert(label, h);
        }
        let g = GlobalModel {
            spec: ckpt.spec.clone(),
            strategy: meta.strategy,
            round: meta.round,
            representation: AggregatedRepresentation {
                layer_order: meta.layer_order,
                shared: ckpt.group(GROUP_REPRESENTATION),
                personalized,
            },
            heads,
            provenance: meta.provenance,
            node_labels: meta.node_labels,
        };
        for node in g.node_ids() {
            g.node_model(node)
                .map_err(|e| Error::Checkpoint(format!("node {node}: {e}")))?;
        }
        Ok(g)
    }
}
