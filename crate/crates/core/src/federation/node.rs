use super::aggregate::StrategyKind;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::neural::{eval_loss, train_epoch, LearningRates, Model, TrainOptions};
use crate::numerics::RngStream;

/// One simulated client.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    pub model: Model,
    pub train: Dataset,
    pub val: Dataset,
    pub label_subset: Vec<String>,
    pub lr: LearningRates,
    pub batch_size: usize,
    pub rng: RngStream,
}

impl NodeState {
    pub fn new(
        node_id: usize,
        model: Model,
        train: Dataset,
        val: Dataset,
        lr: LearningRates,
        batch_size: usize,
        rng: RngStream,
    ) -> Result<NodeState> {
        let label_subset = model.head_labels();
        let node = NodeState {
            node_id,
            model,
            train,
            val,
            label_subset,
            lr,
            batch_size,
            rng,
        };
        node.validate()?;
        Ok(node)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_subset.is_empty() {
            return Err(Error::Config(format!(
                "node {} has no labels",
                self.node_id
            )));
        }
        if self.model.head_labels() != self.label_subset {
            return Err(Error::Protocol(format!(
                "node {} heads do not match its label subset",
                self.node_id
            )));
        }
        for l in &self.label_subset {
            if !self.model.spec.label_names.contains(l) {
                return Err(Error::Label(l.clone()));
            }
        }
        for ds in [&self.train, &self.val] {
            ds.column_indices(&self.label_subset)?;
            if ds.feature_dim() != self.model.spec.input_dim {
                return Err(Error::Dimension(format!(
                    "node {} data has {} features, model expects {}",
                    self.node_id,
                    ds.feature_dim(),
                    self.model.spec.input_dim
                )));
            }
        }
        if self.train.is_empty() || self.val.is_empty() {
            return Err(Error::Data(format!(
                "node {} needs non-empty train and validation sets",
                self.node_id
            )));
        }
        Ok(())
    }

    /// Validation BCE in eval mode over the node's own labels.
    pub fn val_loss(&self) -> Result<f64> {
        eval_loss(&self.model, &self.val)
    }
}

/// `epochs` passes of minibatch SGD over the node's labels. Batch norm is
/// frozen under FedFBN and trained normally otherwise.
pub fn local_train(node: &mut NodeState, strategy: StrategyKind, epochs: usize) -> Result<()> {
    let opts = TrainOptions {
        batch_size: node.batch_size,
        lr: node.lr,
    };
    for _ in 0..epochs {
        train_epoch(
            &mut node.model,
            &node.train,
            strategy.bn_policy(),
            &opts,
            &mut node.rng,
        )?;
    }
    Ok(())
}
