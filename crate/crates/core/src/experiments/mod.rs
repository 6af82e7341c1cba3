//! Scenario builders, the multi-arm runner and report emission.

mod config;
mod report;
mod runner;
mod scenario;

pub use config::{
    DataConfig, EvaluationConfig, ExperimentConfig, LabelPlan, ModelConfig, PretrainConfig,
    Scenario, TrainingConfig,
};
pub use report::{
    emit_reports, load_results, render_tables, rerender, MANIFEST_FILE, RESULTS_FILE, SUMMARY_FILE,
};
pub use runner::{run_experiment, ArmResult, Evaluation, ExperimentResult, RunLog, GLOBAL_MODEL};
pub use scenario::{
    build_data, build_scenario, NodeData, PreparedScenario, ScenarioData, EXTERNAL_TEST,
};
