//! JSON Schemas for every persisted record and input file.

use schemars::{schema_for, Schema};

use crate::config::RunConfig;
use crate::cwm::{AccuracyReport, NormalizedReturn, Transition};
use crate::data::{Contamination, ErrorClass, SftRecord, WtlOutcome};
use crate::pddl::ComponentF1;
use crate::pipeline::RunRecord;
use crate::textgame::GameScores;
use crate::tools::{HarnessRequest, HarnessResponse};
use crate::types::{InteractionTrajectory, ResearchReport, TaskSpec, TestReport, WorldModelArtifact};

/// `(file stem, schema)` pairs in a fixed order.
pub fn all_schemas() -> Vec<(&'static str, Schema)> {
    vec![
        ("task_spec", schema_for!(TaskSpec)),
        ("run_config", schema_for!(RunConfig)),
        ("world_model_artifact", schema_for!(WorldModelArtifact)),
        ("research_report", schema_for!(ResearchReport)),
        ("test_report", schema_for!(TestReport)),
        ("interaction_trajectory", schema_for!(InteractionTrajectory)),
        ("run_record", schema_for!(RunRecord)),
        ("sft_record", schema_for!(SftRecord)),
        ("transition", schema_for!(Transition)),
        ("accuracy_report", schema_for!(AccuracyReport)),
        ("normalized_return", schema_for!(NormalizedReturn)),
        ("component_f1", schema_for!(ComponentF1)),
        ("game_scores", schema_for!(GameScores)),
        ("error_class", schema_for!(ErrorClass)),
        ("contamination", schema_for!(Contamination)),
        ("wtl_outcome", schema_for!(WtlOutcome)),
        ("harness_request", schema_for!(HarnessRequest)),
        ("harness_response", schema_for!(HarnessResponse)),
    ]
}

/// Pretty JSON with a trailing newline, as written under `docs/schemas`.
pub fn render(schema: &Schema) -> String {
    serde_json::to_string_pretty(schema).expect("schema serializes") + "\n"
}
