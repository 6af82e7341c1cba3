use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::node::NodeState;
use crate::error::{Error, Result};
use crate::neural::{
    label_of_head, Checkpoint, CheckpointEntry, LayerParams, ModelSpec, GROUP_HEAD,
    GROUP_REPRESENTATION,
};

const BUNDLE_SECTION: &str = "bundle";

/// Parameters one node sends to the server after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBundle {
    pub node_id: usize,
    pub round: usize,
    pub sample_count: usize,
    pub representation: Vec<LayerParams>,
    pub heads: Vec<LayerParams>,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    node_id: usize,
    round: usize,
    sample_count: usize,
}

impl ParameterBundle {
    pub fn head_labels(&self) -> Vec<String> {
        self.heads
            .iter()
            .filter_map(|h| label_of_head(&h.name).map(str::to_string))
            .collect()
    }

    pub fn to_checkpoint(&self, spec: &ModelSpec) -> Result<Checkpoint> {
        let entries = self
            .representation
            .iter()
            .map(|l| (GROUP_REPRESENTATION, l))
            .chain(self.heads.iter().map(|l| (GROUP_HEAD, l)))
            .map(|(g, l)| CheckpointEntry {
                group: g.into(),
                layer: l.clone(),
            })
            .collect();
        let meta = BundleMeta {
            node_id: self.node_id,
            round: self.round,
            sample_count: self.sample_count,
        };
        let mut sections = BTreeMap::new();
        sections.insert(BUNDLE_SECTION.to_string(), serde_json::to_vec(&meta)?);
        Ok(Checkpoint {
            spec: spec.clone(),
            entries,
            sections,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<ParameterBundle> {
        let meta: BundleMeta = serde_json::from_slice(
            ckpt.sections
                .get(BUNDLE_SECTION)
                .ok_or_else(|| Error::Checkpoint("missing bundle section".into()))?,
        )?;
        Ok(ParameterBundle {
            node_id: meta.node_id,
            round: meta.round,
            sample_count: meta.sample_count,
            representation: ckpt.group(GROUP_REPRESENTATION),
            heads: ckpt.group(GROUP_HEAD),
        })
    }
}

/// Deep copy of a node's parameters.
pub fn extract_bundle(node: &NodeState, round: usize) -> ParameterBundle {
    ParameterBundle {
        node_id: node.node_id,
        round,
        sample_count: node.train.len().max(1),
        representation: node.model.representation.clone(),
        heads: node.model.heads.clone(),
    }
}
