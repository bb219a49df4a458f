//! Notebook validation: run every code cell again and compare with what the
//! notebook has saved.

pub mod cli;
pub mod discover;
pub mod report;
pub mod runner;

pub use discover::{discover_notebooks, PathNotFound};
pub use report::{console_report, junit_xml, summary_line};
pub use runner::{exit_code, run_all, validate_notebook, Counts, NotebookResult, RunConfig};
