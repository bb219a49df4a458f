//! Core data model and pure logic for validating Jupyter notebooks against
//! freshly computed outputs.
//!
//! - [`notebook`]: parse and serialize `.ipynb` (nbformat 4) documents and
//!   resolve per-cell validation directives.
//! - [`sanitizer`]: ordered regex replacement rules applied to both sides of
//!   a comparison.
//! - [`compare`]: check-policy resolution, output normalization, per-cell
//!   verdicts and diff rendering.
//!
//! Nothing in this crate does I/O beyond byte buffers, so every value is
//! `Send + Sync` and can be shared across validation workers.

pub mod compare;
pub mod notebook;
pub mod outcome;
pub mod sanitizer;
#[cfg(feature = "testing")]
pub mod testing;

pub use compare::{
    compare_cell, decide_check_policy, normalize_outputs, render_diff, CellVerdict, CheckPolicy,
    NormalizedOutput, OutputKind, Payload, RunMode, VerdictStatus,
};
pub use notebook::{
    extract_directives, parse_notebook, serialize_notebook, Cell, CellDirectives, CellKind,
    CellOutput, NotebookDocument, NotebookError, RichOutput, StreamName,
};
pub use outcome::{ExecutionOutcome, ExecutionStatus};
pub use sanitizer::{parse_sanitizer_file, SanitizerConfig, SanitizerError, SanitizerRule};
