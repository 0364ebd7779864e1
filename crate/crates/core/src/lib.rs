//! Core of an external autograder: load a question directory, extract test
//! metadata from annotations, run each test in a locked-down sandbox, turn
//! failures into line-diff feedback, and write a `results.json` grading report.
//!
//! The pipeline in [`orchestrator::grade`] strings the modules together:
//!
//! ```text
//! stage_job -> apply_lockdown -> run_test_dir -> aggregate -> emit_results
//! ```
//!
//! and falls back to a catastrophic-failure document whenever any stage fails,
//! so a results file is always written.

pub mod annotation;
pub mod diagnostics;
pub mod diff;
pub mod harness;
pub mod orchestrator;
pub mod question;
pub mod report;
pub mod sandbox;

pub use annotation::{extract_metadata, parse_annotation_line, MetadataSet, TestMetadata};
pub use diagnostics::{Diagnostic, Severity};
pub use diff::{apply_script, myers_diff, render_unified, EditKind, EditOp, EditScript};
pub use harness::{
    compare_and_record, daily_seed, parse_result_stream, run_test_dir, ExpectationRecord,
    HarnessConfig, LanguageBackend, Outcome, SeedPolicy, TestResult,
};
pub use orchestrator::{grade, inspect, validate, GraderConfig};
pub use question::{load_question, validate_layout, GradingMethod, QuestionInfo, QuestionLayout};
pub use report::{
    aggregate, catastrophic_report, emit_results, error_to_report, GradedTest, GradingReport,
};
pub use sandbox::{
    apply_lockdown, expose_file_during, run_sandboxed, stage_job, Isolation, LockdownPlan,
    LockdownReceipt, RunOutcome, SandboxSpec,
};
