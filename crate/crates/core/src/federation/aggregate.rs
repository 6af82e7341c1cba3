use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bundle::ParameterBundle;
use crate::error::{Error, Result};
use crate::neural::{head_layer_name, label_of_head, BnPolicy, LayerParams};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    FedAvg,
    FedBN,
    FedFBN,
    Centralized,
    LocalOnly,
}

impl StrategyKind {
    /// Baselines train in isolation and never aggregate.
    pub fn aggregates(self) -> bool {
        matches!(self, Self::FedAvg | Self::FedBN | Self::FedFBN)
    }

    pub fn bn_policy(self) -> BnPolicy {
        match self {
            Self::FedFBN => BnPolicy::Frozen,
            _ => BnPolicy::Normal,
        }
    }

    /// Whether each node keeps its own batch-norm layers.
    pub fn personalized(self) -> bool {
        self == Self::FedBN
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::FedAvg => "FedAvg",
            Self::FedBN => "FedBN",
            Self::FedFBN => "FedFBN",
            Self::Centralized => "Centralized",
            Self::LocalOnly => "Local",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(Self::FedAvg),
            "fedbn" => Ok(Self::FedBN),
            "fedfbn" => Ok(Self::FedFBN),
            "centralized" | "central" => Ok(Self::Centralized),
            "local" | "localonly" | "local_only" => Ok(Self::LocalOnly),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    BySamples,
}

/// Server-side result for the representation block.
///
/// `shared` holds every aggregated layer in model order. Under FedBN the
/// batch-norm layers are not aggregated: they are absent from `shared` and
/// each node's own copies are kept in `personalized`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedRepresentation {
    pub layer_order: Vec<String>,
    pub shared: Vec<LayerParams>,
    pub personalized: BTreeMap<usize, Vec<LayerParams>>,
}

impl AggregatedRepresentation {
    /// Full representation for one node, in model layer order.
    pub fn for_node(&self, node_id: usize) -> Result<Vec<LayerParams>> {
        let own = self.personalized.get(&node_id);
        self.layer_order
            .iter()
            .map(|name| {
                self.shared
                    .iter()
                    .chain(own.into_iter().flatten())
                    .find(|l| &l.name == name)
                    .cloned()
                    .ok_or_else(|| {
                        Error::Protocol(format!("node {node_id} has no value for layer `{name}`"))
                    })
            })
            .collect()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerParams> {
        self.shared.iter().find(|l| l.name == name)
    }
}

/// Sorts by node id and rejects duplicates.
fn ordered(bundles: &[ParameterBundle]) -> Result<Vec<&ParameterBundle>> {
    let mut v: Vec<&ParameterBundle> = bundles.iter().collect();
    v.sort_by_key(|b| b.node_id);
    if v.windows(2).any(|w| w[0].node_id == w[1].node_id) {
        return Err(Error::Protocol("duplicate node id among bundles".into()));
    }
    Ok(v)
}

/// Elementwise weighted mean with accumulation in the given (ascending node)
/// order. Uniform weighting is `(Σ v_k) / K`; by-sample weighting is
/// `(Σ n_k v_k) / Σ n_k`.
fn weighted_mean(tensors: &[&Tensor], counts: &[usize], weighting: Weighting) -> Result<Tensor> {
    let first = tensors[0];
    let mut acc = vec![0.0; first.len()];
    let denom = match weighting {
        Weighting::Uniform => {
            for t in tensors {
                for (a, v) in acc.iter_mut().zip(t.data()) {
                    *a += v;
                }
            }
            tensors.len() as f64
        }
        Weighting::BySamples => {
            for (t, &n) in tensors.iter().zip(counts) {
                let w = n as f64;
                for (a, v) in acc.iter_mut().zip(t.data()) {
                    *a += w * v;
                }
            }
            counts.iter().sum::<usize>() as f64
        }
    };
    for a in &mut acc {
        *a /= denom;
    }
    Tensor::new(first.shape().to_vec(), acc)
}

fn mean_layer(
    layers: &[&LayerParams],
    counts: &[usize],
    weighting: Weighting,
) -> Result<LayerParams> {
    let mut out = layers[0].clone();
    for (tname, t) in out.tensors.iter_mut() {
        let parts: Vec<&Tensor> = layers.iter().map(|l| l.tensor(tname)).collect();
        *t = weighted_mean(&parts, counts, weighting)?;
    }
    Ok(out)
}

/// Aggregates the representation block according to `strategy`.
pub fn aggregate_representation(
    bundles: &[ParameterBundle],
    strategy: StrategyKind,
    weighting: Weighting,
) -> Result<AggregatedRepresentation> {
    if !strategy.aggregates() {
        return Err(Error::Config(format!("{strategy} does not aggregate")));
    }
    if bundles.is_empty() {
        return Err(Error::Protocol("no bundles to aggregate".into()));
    }
    let bundles = ordered(bundles)?;
    let reference = &bundles[0].representation;
    for b in &bundles[1..] {
        if b.representation.len() != reference.len()
            || b.representation
                .iter()
                .zip(reference)
                .any(|(x, y)| !x.same_layout(y))
        {
            return Err(Error::Protocol(format!(
                "node {} representation layout differs from node {}",
                b.node_id, bundles[0].node_id
            )));
        }
    }
    if bundles.iter().any(|b| b.sample_count == 0) {
        return Err(Error::Protocol("bundle with zero samples".into()));
    }
    let counts: Vec<usize> = bundles.iter().map(|b| b.sample_count).collect();

    let mut shared = Vec::with_capacity(reference.len());
    let mut personalized: BTreeMap<usize, Vec<LayerParams>> = BTreeMap::new();
    for (idx, layer) in reference.iter().enumerate() {
        let column: Vec<&LayerParams> = bundles.iter().map(|b| &b.representation[idx]).collect();
        if !layer.is_batch_norm() {
            shared.push(mean_layer(&column, &counts, weighting)?);
            continue;
        }
        match strategy {
            StrategyKind::FedAvg => shared.push(mean_layer(&column, &counts, weighting)?),
            StrategyKind::FedBN => {
                for (b, l) in bundles.iter().zip(&column) {
                    personalized
                        .entry(b.node_id)
                        .or_default()
                        .push((*l).clone());
                }
            }
            StrategyKind::FedFBN => {
                // frozen since initialization: identical everywhere, so the
                // mean is the common value
                for other in &column[1..] {
                    for (tname, t) in &layer.tensors {
                        if other.tensor(tname) != t
                            || other
                                .tensor(tname)
                                .data()
                                .iter()
                                .zip(t.data())
                                .any(|(a, b)| a.to_bits() != b.to_bits())
                        {
                            return Err(Error::FrozenInvariantViolated {
                                layer: layer.name.clone(),
                                tensor: tname.clone(),
                            });
                        }
                    }
                }
                shared.push(layer.clone());
            }
            StrategyKind::Centralized | StrategyKind::LocalOnly => unreachable!(),
        }
    }
    Ok(AggregatedRepresentation {
        layer_order: reference.iter().map(|l| l.name.clone()).collect(),
        shared,
        personalized,
    })
}

/// Union of per-label heads: a label owned by one node is copied, a label
/// shared by several nodes is their elementwise mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedHeads {
    pub heads: BTreeMap<String, LayerParams>,
    pub provenance: BTreeMap<String, Vec<usize>>,
}

pub fn merge_heads<S: AsRef<str>>(
    bundles: &[ParameterBundle],
    global_label_space: &[S],
) -> Result<MergedHeads> {
    let bundles = ordered(bundles)?;
    let mut owners: BTreeMap<String, Vec<(usize, &LayerParams)>> = BTreeMap::new();
    for b in &bundles {
        for h in &b.heads {
            let label = label_of_head(&h.name)
                .ok_or_else(|| Error::Protocol(format!("`{}` is not a head layer", h.name)))?;
            if !global_label_space.iter().any(|g| g.as_ref() == label) {
                return Err(Error::Label(label.to_string()));
            }
            owners
                .entry(label.to_string())
                .or_default()
                .push((b.node_id, h));
        }
    }
    let mut heads = BTreeMap::new();
    let mut provenance = BTreeMap::new();
    for label in global_label_space {
        let label = label.as_ref();
        let contributors = owners
            .get(label)
            .ok_or_else(|| Error::MissingHead(label.to_string()))?;
        let layers: Vec<&LayerParams> = contributors.iter().map(|(_, l)| *l).collect();
        if layers.windows(2).any(|w| !w[0].same_layout(w[1])) {
            return Err(Error::Protocol(format!("head `{label}` layouts differ")));
        }
        let mut merged = if layers.len() == 1 {
            layers[0].clone()
        } else {
            mean_layer(&layers, &vec![1; layers.len()], Weighting::Uniform)?
        };
        merged.name = head_layer_name(label);
        heads.insert(label.to_string(), merged);
        provenance.insert(
            label.to_string(),
            contributors.iter().map(|(n, _)| *n).collect(),
        );
    }
    Ok(MergedHeads { heads, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::LayerParams;

    fn dense(name: &str, w: Vec<f64>) -> LayerParams {
        let n = w.len();
        LayerParams::dense(
            name,
            Tensor::new(vec![1, n], w).unwrap(),
            Tensor::zeros(&[n]),
        )
    }

    fn bn(name: &str, mean: f64) -> LayerParams {
        let mut l = LayerParams::batch_norm(name, 2);
        l.tensor_mut("running_mean").data_mut().fill(mean);
        l
    }

    fn bundle(
        id: usize,
        rep: Vec<LayerParams>,
        heads: Vec<LayerParams>,
        n: usize,
    ) -> ParameterBundle {
        ParameterBundle {
            node_id: id,
            round: 1,
            sample_count: n,
            representation: rep,
            heads,
        }
    }

    #[test]
    fn uniform_mean() {
        let b = [
            bundle(0, vec![dense("d", vec![1.0, 3.0])], vec![], 1),
            bundle(1, vec![dense("d", vec![3.0, 5.0])], vec![], 1),
        ];
        let agg = aggregate_representation(&b, StrategyKind::FedAvg, Weighting::Uniform).unwrap();
        assert_eq!(agg.layer("d").unwrap().tensor("weight").data(), &[2.0, 4.0]);
    }

    #[test]
    fn by_samples_mean() {
        let b = [
            bundle(0, vec![dense("d", vec![0.0])], vec![], 1),
            bundle(1, vec![dense("d", vec![4.0])], vec![], 3),
        ];
        let agg = aggregate_representation(&b, StrategyKind::FedAvg, Weighting::BySamples).unwrap();
        assert_eq!(agg.layer("d").unwrap().tensor("weight").data(), &[3.0]);
    }

    #[test]
    fn fedbn_keeps_bn_per_node() {
        let b = [
            bundle(
                0,
                vec![dense("d", vec![1.0, 3.0]), bn("bn", 1.0)],
                vec![],
                1,
            ),
            bundle(
                1,
                vec![dense("d", vec![3.0, 5.0]), bn("bn", 7.0)],
                vec![],
                1,
            ),
        ];
        let agg = aggregate_representation(&b, StrategyKind::FedBN, Weighting::Uniform).unwrap();
        assert_eq!(agg.layer("d").unwrap().tensor("weight").data(), &[2.0, 4.0]);
        assert!(agg.layer("bn").is_none());
        assert_eq!(agg.for_node(0).unwrap()[1], b[0].representation[1]);
        assert_eq!(agg.for_node(1).unwrap()[1], b[1].representation[1]);

        let avg = aggregate_representation(&b, StrategyKind::FedAvg, Weighting::Uniform).unwrap();
        assert_eq!(
            avg.layer("bn").unwrap().tensor("running_mean").data(),
            &[4.0, 4.0]
        );
    }

    #[test]
    fn fedfbn_detects_drift() {
        let ok = [
            bundle(0, vec![bn("bn", 0.3)], vec![], 1),
            bundle(1, vec![bn("bn", 0.3)], vec![], 1),
            bundle(2, vec![bn("bn", 0.3)], vec![], 1),
        ];
        let agg = aggregate_representation(&ok, StrategyKind::FedFBN, Weighting::Uniform).unwrap();
        assert_eq!(agg.shared[0], ok[0].representation[0]);
        let bad = [
            bundle(0, vec![bn("bn", 0.3)], vec![], 1),
            bundle(1, vec![bn("bn", 0.30000001)], vec![], 1),
        ];
        assert!(matches!(
            aggregate_representation(&bad, StrategyKind::FedFBN, Weighting::Uniform),
            Err(Error::FrozenInvariantViolated { .. })
        ));
    }

    #[test]
    fn layout_mismatch_is_protocol_error() {
        let b = [
            bundle(0, vec![dense("d", vec![1.0, 3.0])], vec![], 1),
            bundle(1, vec![dense("d", vec![3.0])], vec![], 1),
        ];
        assert!(matches!(
            aggregate_representation(&b, StrategyKind::FedAvg, Weighting::Uniform),
            Err(Error::Protocol(_))
        ));
        assert!(aggregate_representation(&b, StrategyKind::LocalOnly, Weighting::Uniform).is_err());
        assert!(aggregate_representation(&[], StrategyKind::FedAvg, Weighting::Uniform).is_err());
    }

    fn head(label: &str, w: f64) -> LayerParams {
        dense(&head_layer_name(label), vec![w])
    }

    #[test]
    fn head_union_and_overlap() {
        let b = [
            bundle(0, vec![], vec![head("A", 1.0), head("B", 2.0)], 1),
            bundle(1, vec![], vec![head("B", 4.0), head("C", 5.0)], 1),
        ];
        let m = merge_heads(&b, &["A", "B", "C"]).unwrap();
        assert_eq!(m.heads["A"].tensor("weight").data(), &[1.0]);
        assert_eq!(m.heads["B"].tensor("weight").data(), &[3.0]);
        assert_eq!(m.heads["C"].tensor("weight").data(), &[5.0]);
        assert_eq!(m.provenance["B"], vec![0, 1]);
        assert!(matches!(
            merge_heads(&b, &["A", "B", "C", "D"]),
            Err(Error::MissingHead(_))
        ));
    }

    #[test]
    fn three_way_mean() {
        let b = [
            bundle(2, vec![], vec![head("A", 6.0)], 1),
            bundle(0, vec![], vec![head("A", 1.0)], 1),
            bundle(1, vec![], vec![head("A", 2.0)], 1),
        ];
        let m = merge_heads(&b, &["A"]).unwrap();
        assert_eq!(m.heads["A"].tensor("weight").data(), &[3.0]);
        assert_eq!(m.provenance["A"], vec![0, 1, 2]);
    }
}
