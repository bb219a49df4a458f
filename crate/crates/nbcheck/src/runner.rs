//! Per-notebook validation and the multi-notebook driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use log::debug;
use nbcheck_core::notebook::{comment_prefix, extract_directives_with_prefix};
use nbcheck_core::{
    compare_cell, decide_check_policy, parse_notebook, CellVerdict, CheckPolicy, ExecutionOutcome,
    ExecutionStatus, RunMode, SanitizerConfig, VerdictStatus,
};
use nbcheck_kernel::{start_kernel, ClientOptions, KernelError, KernelHandle, KernelSpecResolver};

/// One live kernel, owned by one notebook run.
pub trait Session {
    fn execute(&mut self, source: &str, timeout: Duration) -> ExecutionOutcome;
    fn shutdown(&mut self);
}

impl Session for KernelHandle {
    fn execute(&mut self, source: &str, timeout: Duration) -> ExecutionOutcome {
        KernelHandle::execute(self, source, timeout)
    }

    fn shutdown(&mut self) {
        KernelHandle::shutdown(self)
    }
}

/// Starts a fresh kernel by name.
pub trait Launcher: Sync {
    fn launch(
        &self,
        kernel_name: &str,
        startup_timeout: Duration,
    ) -> Result<Box<dyn Session>, KernelError>;
}

/// Launches installed Jupyter kernels.
#[derive(Debug, Clone)]
pub struct JupyterLauncher {
    pub resolver: KernelSpecResolver,
    pub options: ClientOptions,
}

impl Launcher for JupyterLauncher {
    fn launch(
        &self,
        kernel_name: &str,
        startup_timeout: Duration,
    ) -> Result<Box<dyn Session>, KernelError> {
        let spec = self.resolver.resolve(kernel_name)?;
        let handle = start_kernel(&spec, startup_timeout, self.options.clone())?;
        Ok(Box::new(handle))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: RunMode,
    pub sanitizer: SanitizerConfig,
    pub kernel_override: Option<String>,
    pub default_kernel: String,
    pub cell_timeout: Duration,
    pub startup_timeout: Duration,
    pub jobs: usize,
    pub compare_images: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Strict,
            sanitizer: SanitizerConfig::default(),
            kernel_override: None,
            default_kernel: "python3".into(),
            cell_timeout: Duration::from_secs(300),
            startup_timeout: Duration::from_secs(60),
            jobs: 1,
            compare_images: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
    pub errored: usize,
}

impl Counts {
    pub fn tally<'a>(verdicts: impl IntoIterator<Item = &'a CellVerdict>) -> Self {
        let mut counts = Self::default();
        for v in verdicts {
            match v.status {
                VerdictStatus::Pass => counts.passed += 1,
                VerdictStatus::Fail => counts.failed += 1,
                VerdictStatus::Skip => counts.skipped += 1,
                VerdictStatus::Error => counts.errored += 1,
            }
        }
        counts
    }

    pub fn add(&mut self, other: Counts) {
        self.passed += other.passed;
        self.failed += other.failed;
        self.skipped += other.skipped;
        self.errored += other.errored;
    }
}

#[derive(Debug, Clone)]
pub struct NotebookResult {
    pub path: PathBuf,
    pub verdicts: Vec<CellVerdict>,
    /// Tally of `verdicts`; a file error is not included here.
    pub counts: Counts,
    pub wall_time: Duration,
    /// Set when the whole file could not be validated; `verdicts` is then empty.
    pub file_error: Option<String>,
}

impl NotebookResult {
    fn failed(path: &Path, started: Instant, error: String) -> Self {
        Self {
            path: path.to_owned(),
            verdicts: Vec::new(),
            counts: Counts::default(),
            wall_time: started.elapsed(),
            file_error: Some(error),
        }
    }

    /// File stem used in report lines.
    pub fn stem(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.display().to_string())
    }
}

/// Validates one notebook on a fresh kernel.
pub fn validate_notebook(
    path: &Path,
    config: &RunConfig,
    launcher: &dyn Launcher,
) -> NotebookResult {
    let started = Instant::now();
    let raw = match fs::read(path) {
        Ok(raw) => raw,
        Err(e) => return NotebookResult::failed(path, started, format!("cannot read: {e}")),
    };
    let doc = match parse_notebook(&raw) {
        Ok(doc) => doc,
        Err(e) => return NotebookResult::failed(path, started, e.to_string()),
    };
    let kernel_name = config
        .kernel_override
        .clone()
        .or_else(|| doc.kernel_name.clone().filter(|n| !n.is_empty()))
        .unwrap_or_else(|| config.default_kernel.clone());
    let prefix = comment_prefix(doc.language.as_deref());

    let mut session: Option<Box<dyn Session>> = None;
    let mut verdicts = Vec::with_capacity(doc.code_cell_count());
    let mut aborted: Option<String> = None;

    for (k, cell) in doc.code_cells().enumerate() {
        if let Some(why) = &aborted {
            verdicts.push(CellVerdict::error(k, format!("not executed: {why}")));
            continue;
        }
        let directives = extract_directives_with_prefix(cell, prefix);
        let policy = match directives {
            Ok(d) => decide_check_policy(config.mode, d),
            Err(_) => CheckPolicy::ExecuteOnly,
        };
        if policy == CheckPolicy::Skip {
            verdicts.push(CellVerdict::skipped(k, "skipped by marker"));
            continue;
        }

        if session.is_none() {
            debug!("{}: starting kernel {kernel_name:?}", path.display());
            match launcher.launch(&kernel_name, config.startup_timeout) {
                Ok(s) => session = Some(s),
                Err(e) => return NotebookResult::failed(path, started, e.to_string()),
            }
        }
        let kernel = session.as_mut().expect("session started above");
        let outcome = kernel.execute(&cell.source, config.cell_timeout);

        match outcome.status {
            ExecutionStatus::Timeout => aborted = Some(format!("cell {k} timed out")),
            ExecutionStatus::KernelDied => aborted = Some(format!("kernel died in cell {k}")),
            ExecutionStatus::Ok | ExecutionStatus::Error => {}
        }
        let mut verdict = compare_cell(
            k,
            &cell.outputs,
            &outcome,
            policy,
            &config.sanitizer,
            config.compare_images,
        );
        if let Err(conflict) = directives {
            if aborted.is_none() {
                verdict = CellVerdict {
                    duration: outcome.duration,
                    ..CellVerdict::error(k, conflict.to_string())
                };
            }
        }
        verdicts.push(verdict);
    }

    if let Some(mut kernel) = session {
        kernel.shutdown();
    }
    NotebookResult {
        path: path.to_owned(),
        counts: Counts::tally(&verdicts),
        verdicts,
        wall_time: started.elapsed(),
        file_error: None,
    }
}

/// Validates every notebook, up to `config.jobs` at a time. Results come
/// back in input order.
pub fn run_all(
    paths: &[PathBuf],
    config: &RunConfig,
    launcher: &dyn Launcher,
) -> Vec<NotebookResult> {
    let workers = config.jobs.clamp(1, paths.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<NotebookResult>>> = Mutex::new(vec![None; paths.len()]);

    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(path) = paths.get(i) else { break };
                let result = validate_notebook(path, config, launcher);
                slots.lock().expect("result slots")[i] = Some(result);
            });
        }
    });

    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every notebook produces a result"))
        .collect()
}

/// 0 when everything passed or was skipped, else 1.
pub fn exit_code(results: &[NotebookResult]) -> i32 {
    let bad = results.iter().any(|r| {
        r.file_error.is_some()
            || r.verdicts
                .iter()
                .any(|v| matches!(v.status, VerdictStatus::Fail | VerdictStatus::Error))
    });
    i32::from(bad)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nbcheck_core::CellOutput;
    use std::collections::HashMap;
    use std::io::Write;
    use std::sync::Arc;

    /// Answers each source with a canned outcome and records what ran.
    #[derive(Clone, Default)]
    pub(crate) struct FakeLauncher {
        pub answers: HashMap<String, ExecutionOutcome>,
        pub executed: Arc<Mutex<Vec<String>>>,
        pub launches: Arc<Mutex<Vec<String>>>,
        pub missing_kernel: bool,
    }

    struct FakeSession(FakeLauncher);

    impl Session for FakeSession {
        fn execute(&mut self, source: &str, _: Duration) -> ExecutionOutcome {
            self.0.executed.lock().unwrap().push(source.to_owned());
            self.0
                .answers
                .get(source)
                .cloned()
                .unwrap_or_else(|| ExecutionOutcome::ok(Vec::new()))
        }

        fn shutdown(&mut self) {}
    }

    impl Launcher for FakeLauncher {
        fn launch(&self, name: &str, _: Duration) -> Result<Box<dyn Session>, KernelError> {
            if self.missing_kernel {
                return Err(KernelError::KernelNotFound {
                    name: name.into(),
                    searched: Vec::new(),
                });
            }
            self.launches.lock().unwrap().push(name.to_owned());
            Ok(Box::new(FakeSession(self.clone())))
        }
    }

    pub(crate) fn write_notebook(dir: &Path, name: &str, cells: serde_json::Value) -> PathBuf {
        let doc = serde_json::json!({
            "nbformat": 4,
            "nbformat_minor": 5,
            "metadata": {"kernelspec": {"name": "python3", "display_name": "Python 3"}},
            "cells": cells,
        });
        let path = dir.join(name);
        let mut file = fs::File::create(&path).unwrap();
        file.write_all(doc.to_string().as_bytes()).unwrap();
        path
    }

    fn code(source: &str, outputs: serde_json::Value) -> serde_json::Value {
        serde_json::json!({"cell_type": "code", "metadata": {}, "source": source, "outputs": outputs, "execution_count": null})
    }

    fn stdout(text: &str) -> serde_json::Value {
        serde_json::json!([{"output_type": "stream", "name": "stdout", "text": text}])
    }

    #[test]
    fn passes_fails_and_skips_without_executing_skipped_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_notebook(
            dir.path(),
            "a.ipynb",
            serde_json::json!([
                code("good", stdout("1\n")),
                {"cell_type": "markdown", "metadata": {}, "source": "# NBVAL_SKIP"},
                code("bad", stdout("1\n")),
                code("# NBVAL_SKIP\nnever", serde_json::json!([])),
            ]),
        );
        let mut launcher = FakeLauncher::default();
        launcher.answers.insert(
            "good".into(),
            ExecutionOutcome::ok(vec![CellOutput::stdout("1\n")]),
        );
        launcher.answers.insert(
            "bad".into(),
            ExecutionOutcome::ok(vec![CellOutput::stdout("2\n")]),
        );

        let result = validate_notebook(&path, &RunConfig::default(), &launcher);
        let statuses: Vec<_> = result.verdicts.iter().map(|v| v.status).collect();
        assert_eq!(
            statuses,
            [
                VerdictStatus::Pass,
                VerdictStatus::Fail,
                VerdictStatus::Skip
            ]
        );
        assert_eq!(result.verdicts[1].cell_index, 1);
        assert_eq!(*launcher.executed.lock().unwrap(), ["good", "bad"]);
        assert_eq!(
            result.counts,
            Counts {
                passed: 1,
                failed: 1,
                skipped: 1,
                errored: 0
            }
        );
        assert_eq!(exit_code(&[result]), 1);
    }

    #[test]
    fn timeout_aborts_the_rest_of_the_notebook() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_notebook(
            dir.path(),
            "t.ipynb",
            serde_json::json!([
                code("a", serde_json::json!([])),
                code("hang", serde_json::json!([])),
                code("c", serde_json::json!([])),
                code("d", serde_json::json!([]))
            ]),
        );
        let mut launcher = FakeLauncher::default();
        launcher.answers.insert(
            "hang".into(),
            ExecutionOutcome::with_status(ExecutionStatus::Timeout, Vec::new()),
        );
        let result = validate_notebook(&path, &RunConfig::default(), &launcher);
        let statuses: Vec<_> = result.verdicts.iter().map(|v| v.status).collect();
        assert_eq!(
            statuses,
            [
                VerdictStatus::Pass,
                VerdictStatus::Error,
                VerdictStatus::Error,
                VerdictStatus::Error
            ]
        );
        assert!(result.verdicts[2].reason.contains("cell 1 timed out"));
        assert_eq!(*launcher.executed.lock().unwrap(), ["a", "hang"]);
    }

    #[test]
    fn conflicting_markers_execute_but_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_notebook(
            dir.path(),
            "c.ipynb",
            serde_json::json!([code(
                "# NBVAL_CHECK_OUTPUT\n# NBVAL_IGNORE_OUTPUT\nx = 1",
                serde_json::json!([])
            )]),
        );
        let launcher = FakeLauncher::default();
        let result = validate_notebook(&path, &RunConfig::default(), &launcher);
        assert_eq!(result.verdicts[0].status, VerdictStatus::Error);
        assert_eq!(launcher.executed.lock().unwrap().len(), 1);
    }

    #[test]
    fn kernel_choice_and_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_notebook(
            dir.path(),
            "k.ipynb",
            serde_json::json!([code("1", serde_json::json!([]))]),
        );
        let launcher = FakeLauncher::default();
        validate_notebook(&path, &RunConfig::default(), &launcher);
        let config = RunConfig {
            kernel_override: Some("other".into()),
            ..RunConfig::default()
        };
        validate_notebook(&path, &config, &launcher);
        assert_eq!(*launcher.launches.lock().unwrap(), ["python3", "other"]);

        let missing = FakeLauncher {
            missing_kernel: true,
            ..FakeLauncher::default()
        };
        let result = validate_notebook(&path, &config, &missing);
        assert!(result.verdicts.is_empty());
        assert!(result.file_error.unwrap().contains("other"));

        let garbage = dir.path().join("g.ipynb");
        fs::write(&garbage, "{").unwrap();
        let result = validate_notebook(&garbage, &config, &launcher);
        assert!(result.file_error.is_some());
        assert_eq!(exit_code(&[result]), 1);
    }

    #[test]
    fn all_skipped_notebook_starts_no_kernel() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_notebook(
            dir.path(),
            "s.ipynb",
            serde_json::json!([code("# NBVAL_SKIP", serde_json::json!([]))]),
        );
        let launcher = FakeLauncher::default();
        let result = validate_notebook(&path, &RunConfig::default(), &launcher);
        assert_eq!(result.counts.skipped, 1);
        assert!(launcher.launches.lock().unwrap().is_empty());
        assert_eq!(exit_code(&[result]), 0);
    }

    #[test]
    fn parallel_results_keep_input_order() {
        let dir = tempfile::tempdir().unwrap();
        let paths: Vec<PathBuf> = (0..7)
            .map(|i| {
                let cells: Vec<_> = (0..i).map(|_| code("1", serde_json::json!([]))).collect();
                write_notebook(
                    dir.path(),
                    &format!("n{i}.ipynb"),
                    serde_json::Value::Array(cells),
                )
            })
            .collect();
        let config = RunConfig {
            jobs: 3,
            ..RunConfig::default()
        };
        let results = run_all(&paths, &config, &FakeLauncher::default());
        for (i, result) in results.iter().enumerate() {
            assert_eq!(result.path, paths[i]);
            assert_eq!(result.verdicts.len(), i);
        }
        assert!(run_all(&[], &config, &FakeLauncher::default()).is_empty());
    }
}
