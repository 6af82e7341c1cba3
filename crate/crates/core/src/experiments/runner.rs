use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::scenario::{build_scenario, PreparedScenario};
use crate::datagen::Dataset;
use crate::error::Result;
use crate::federation::{
    evaluate_model, round_log_csv, run_federation, FederationConfig, NodeState, StrategyKind,
};
use crate::metrics::{compare_reports, ComparisonResult, EvalReport};
use crate::neural::Model;
use crate::numerics::RngStream;

/// Model evaluated by a run: the shared global model, or one node's
/// personalized/local model.
pub const GLOBAL_MODEL: &str = "global";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub model: String,
    pub test_set: String,
    pub view: String,
    pub report: EvalReport,
    pub vs_fedfbn: Option<ComparisonResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub model: String,
    pub best_round: usize,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub strategy: StrategyKind,
    /// sha256 of each participating node's data and initial parameters
    pub input_hashes: Vec<String>,
    pub evaluations: Vec<Evaluation>,
    pub runs: Vec<RunLog>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub dataset_hashes: BTreeMap<String, String>,
    pub arms: Vec<ArmResult>,
}

impl ExperimentResult {
    pub fn arm(&self, arm: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn report(
        &self,
        arm: &str,
        model: &str,
        test_set: &str,
        view: &str,
    ) -> Option<&EvalReport> {
        self.arm(arm)?
            .evaluations
            .iter()
            .find(|e| e.model == model && e.test_set == test_set && e.view == view)
            .map(|e| &e.report)
    }
}

fn arm_name(s: StrategyKind) -> &'static str {
    match s {
        StrategyKind::FedFBN => "fedfbn",
        StrategyKind::FedAvg => "fedavg",
        StrategyKind::FedBN => "fedbn",
        StrategyKind::LocalOnly => "local",
        StrategyKind::Centralized => "centralized",
    }
}

struct EvalPlan<'a> {
    test_sets: Vec<(String, &'a Dataset)>,
    views: Vec<(String, Vec<String>)>,
    n_bootstrap: usize,
    master: RngStream,
}

impl EvalPlan<'_> {
    fn evaluate(&self, model: &Model, name: &str, allow_missing: bool) -> Result<Vec<Evaluation>> {
        let mut out = Vec::new();
        for (test_name, test) in &self.test_sets {
            // shared across arms so paired tests see the same resamples
            let rng = self.master.derive(&format!("eval:{test_name}"));
            for (view_name, labels) in &self.views {
                let cols = test.column_indices(labels)?;
                let annotated = cols
                    .iter()
                    .any(|&j| (0..test.len()).any(|i| test.mask.get(i, j) != 0.0));
                if !annotated {
                    continue;
                }
                let report =
                    evaluate_model(model, test, labels, allow_missing, self.n_bootstrap, &rng)?;
                out.push(Evaluation {
                    model: name.to_string(),
                    test_set: test_name.clone(),
                    view: view_name.clone(),
                    report,
                    vs_fedfbn: None,
                });
            }
        }
        Ok(out)
    }
}

fn run_arm(
    strategy: StrategyKind,
    cfg: &ExperimentConfig,
    prep: &PreparedScenario,
    plan: &EvalPlan<'_>,
) -> ArmResult {
    let mut result = ArmResult {
        arm: arm_name(strategy).to_string(),
        strategy,
        input_hashes: Vec::new(),
        evaluations: Vec::new(),
        runs: Vec::new(),
        error: None,
    };
    let runs: Vec<(String, Vec<NodeState>)> = match strategy {
        StrategyKind::FedAvg | StrategyKind::FedBN | StrategyKind::FedFBN => {
            vec![(GLOBAL_MODEL.to_string(), prep.nodes.clone())]
        }
        StrategyKind::LocalOnly => prep
            .nodes
            .iter()
            .map(|n| (format!("node{}", n.node_id), vec![n.clone()]))
            .collect(),
        StrategyKind::Centralized => {
            vec![(GLOBAL_MODEL.to_string(), vec![prep.centralized.clone()])]
        }
    };
    let fed = FederationConfig {
        strategy,
        rounds: cfg.training.rounds,
        local_epochs: cfg.training.local_epochs,
        weighting: cfg.training.weighting,
    };
    let outcome: Result<()> = (|| {
        for (name, nodes) in runs {
            result
                .input_hashes
                .extend(nodes.iter().map(PreparedScenario::node_hash));
            let out = run_federation(nodes, &fed)?;
            result.runs.push(RunLog {
                model: name.clone(),
                best_round: out.best.round,
                csv: round_log_csv(&out.reports)?,
            });
            match strategy {
                StrategyKind::FedBN => {
                    for id in out.best.node_ids() {
                        let m = out.best.node_model(id)?;
                        result
                            .evaluations
                            .extend(plan.evaluate(&m, &format!("node{id}"), true)?);
                    }
                }
                StrategyKind::LocalOnly => {
                    let id = out.best.node_ids()[0];
                    let m = out.best.node_model(id)?;
                    result.evaluations.extend(plan.evaluate(&m, &name, true)?);
                }
                _ => {
                    let m = out.best.model()?;
                    result.evaluations.extend(plan.evaluate(&m, &name, false)?);
                }
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        result.error = Some(format!("{}: {e}", e.kind()));
    }
    result
}

/// Paired t-test of every evaluation against FedFBN's global model on the same
/// test set and label view.
fn attach_comparisons(arms: &mut [ArmResult]) {
    let Some(reference) = arms
        .iter()
        .find(|a| a.strategy == StrategyKind::FedFBN)
        .map(|a| a.evaluations.clone())
    else {
        return;
    };
    for arm in arms
        .iter_mut()
        .filter(|a| a.strategy != StrategyKind::FedFBN)
    {
        for e in &mut arm.evaluations {
            e.vs_fedfbn = reference
                .iter()
                .find(|r| r.test_set == e.test_set && r.view == e.view)
                .and_then(|r| compare_reports(&r.report, &e.report).ok());
        }
    }
}

/// Runs every configured arm on identical data, initialization and warm-up.
/// A failing arm is recorded and the remaining arms continue.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let strategies = cfg.strategies()?;
    let prep = build_scenario(cfg)?;
    let plan = EvalPlan {
        test_sets: prep.data.test_sets(),
        views: prep.data.label_views(),
        n_bootstrap: cfg.evaluation.n_bootstrap,
        master: RngStream::new(cfg.master_seed),
    };
    let mut arms: Vec<ArmResult> = strategies
        .par_iter()
        .map(|&s| run_arm(s, cfg, &prep, &plan))
        .collect();
    attach_comparisons(&mut arms);
    Ok(ExperimentResult {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        dataset_hashes: prep.data.dataset_hashes(),
        arms,
    })
}
