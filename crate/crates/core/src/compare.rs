//! Check-policy resolution, output normalization and per-cell comparison.

use std::fmt::Write as _;
use std::time::Duration;

use sha2::{Digest, Sha256};
use similar::{ChangeTag, TextDiff};

use crate::notebook::{CellDirectives, CellOutput, StreamName};
use crate::outcome::{ExecutionOutcome, ExecutionStatus};
use crate::sanitizer::SanitizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunMode {
    /// Every output is checked unless a cell opts out.
    Strict,
    /// Only error-free execution is required unless a cell opts in.
    Lax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckPolicy {
    Skip,
    ExecuteOnly,
    CheckOutput,
    /// The cell must raise. `check_ename` is set when the cell would
    /// otherwise have its output checked; the exception type must then match
    /// the saved one.
    ExpectException {
        check_ename: bool,
    },
}

pub fn decide_check_policy(mode: RunMode, directives: CellDirectives) -> CheckPolicy {
    if directives.skip {
        return CheckPolicy::Skip;
    }
    let checks_output = match mode {
        RunMode::Strict => !directives.ignore_output,
        RunMode::Lax => directives.check_output,
    };
    if directives.raises_exception {
        CheckPolicy::ExpectException {
            check_ename: checks_output,
        }
    } else if checks_output {
        CheckPolicy::CheckOutput
    } else {
        CheckPolicy::ExecuteOnly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutputKind {
    StreamStdout,
    StreamStderr,
    TextResult,
    ErrorName,
    ImagePng,
    ImageJpeg,
}

impl OutputKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputKind::StreamStdout => "stream_stdout",
            OutputKind::StreamStderr => "stream_stderr",
            OutputKind::TextResult => "text_result",
            OutputKind::ErrorName => "error_name",
            OutputKind::ImagePng => "image_png",
            OutputKind::ImageJpeg => "image_jpeg",
        }
    }

    fn is_stream(self) -> bool {
        matches!(self, OutputKind::StreamStdout | OutputKind::StreamStderr)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Text(String),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NormalizedOutput {
    pub kind: OutputKind,
    pub payload: Payload,
}

impl NormalizedOutput {
    pub fn text(kind: OutputKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            payload: Payload::Text(text.into()),
        }
    }

    pub fn bytes(kind: OutputKind, bytes: Vec<u8>) -> Self {
        Self {
            kind,
            payload: Payload::Bytes(bytes),
        }
    }
}

/// `\r\n` becomes `\n` and trailing whitespace is stripped from every line.
pub fn normalize_text(text: &str) -> String {
    text.replace("\r\n", "\n")
        .split('\n')
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Reduces outputs to the comparable sequence: streams of the same name that
/// end up adjacent are merged, rich outputs contribute `text/plain` (and
/// images when `compare_images`), errors contribute their type name only.
pub fn normalize_outputs(outputs: &[CellOutput], compare_images: bool) -> Vec<NormalizedOutput> {
    let mut merged: Vec<NormalizedOutput> = Vec::with_capacity(outputs.len());
    let mut push = |item: NormalizedOutput| {
        if let (Some(last), Payload::Text(more)) = (merged.last_mut(), &item.payload) {
            if last.kind == item.kind && item.kind.is_stream() {
                if let Payload::Text(existing) = &mut last.payload {
                    existing.push_str(more);
                    return;
                }
            }
        }
        merged.push(item);
    };

    for output in outputs {
        match output {
            CellOutput::Stream { name, text } => {
                let kind = match name {
                    StreamName::Stdout => OutputKind::StreamStdout,
                    StreamName::Stderr => OutputKind::StreamStderr,
                };
                push(NormalizedOutput::text(kind, text.clone()));
            }
            CellOutput::ExecuteResult { data, .. } | CellOutput::DisplayData(data) => {
                if let Some(text) = &data.text {
                    push(NormalizedOutput::text(OutputKind::TextResult, text.clone()));
                }
                if compare_images {
                    if let Some(png) = &data.image_png {
                        push(NormalizedOutput::bytes(OutputKind::ImagePng, png.clone()));
                    }
                    if let Some(jpeg) = &data.image_jpeg {
                        push(NormalizedOutput::bytes(OutputKind::ImageJpeg, jpeg.clone()));
                    }
                }
            }
            CellOutput::Error { ename, .. } => {
                push(NormalizedOutput::text(OutputKind::ErrorName, ename.clone()));
            }
            CellOutput::Unknown { .. } => {}
        }
    }

    merged
        .into_iter()
        .filter_map(|mut item| {
            if let Payload::Text(text) = &mut item.payload {
                *text = normalize_text(text);
                if item.kind.is_stream() && text.is_empty() {
                    return None;
                }
            }
            Some(item)
        })
        .collect()
}

fn sanitize_all(
    outputs: Vec<NormalizedOutput>,
    sanitizer: &SanitizerConfig,
) -> Vec<NormalizedOutput> {
    if sanitizer.is_empty() {
        return outputs;
    }
    outputs
        .into_iter()
        .map(|mut item| {
            if let Payload::Text(text) = &item.payload {
                item.payload = Payload::Text(sanitizer.apply(text));
            }
            item
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VerdictStatus {
    Pass,
    Fail,
    Skip,
    Error,
}

impl VerdictStatus {
    /// Report label, e.g. `PASSED`.
    pub fn label(self) -> &'static str {
        match self {
            VerdictStatus::Pass => "PASSED",
            VerdictStatus::Fail => "FAILED",
            VerdictStatus::Skip => "SKIPPED",
            VerdictStatus::Error => "ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellVerdict {
    pub status: VerdictStatus,
    pub cell_index: usize,
    /// Present iff the cell failed because its outputs differ.
    pub diff: Option<String>,
    pub reason: String,
    pub duration: Duration,
}

impl CellVerdict {
    pub fn new(status: VerdictStatus, cell_index: usize, reason: impl Into<String>) -> Self {
        Self {
            status,
            cell_index,
            diff: None,
            reason: reason.into(),
            duration: Duration::ZERO,
        }
    }

    pub fn skipped(cell_index: usize, reason: impl Into<String>) -> Self {
        Self::new(VerdictStatus::Skip, cell_index, reason)
    }

    pub fn error(cell_index: usize, reason: impl Into<String>) -> Self {
        Self::new(VerdictStatus::Error, cell_index, reason)
    }
}

fn raised(computed: &ExecutionOutcome) -> String {
    let name = computed.error_name().unwrap_or("Exception");
    match computed.evalue.as_deref() {
        Some(value) if !value.is_empty() => format!("cell raised {name}: {value}"),
        _ => format!("cell raised {name}"),
    }
}

/// Judges one executed cell against its saved outputs.
pub fn compare_cell(
    cell_index: usize,
    saved: &[CellOutput],
    computed: &ExecutionOutcome,
    policy: CheckPolicy,
    sanitizer: &SanitizerConfig,
    compare_images: bool,
) -> CellVerdict {
    let verdict = |status, reason: String| CellVerdict {
        status,
        cell_index,
        diff: None,
        reason,
        duration: computed.duration,
    };

    match computed.status {
        ExecutionStatus::Timeout => {
            return verdict(VerdictStatus::Error, "cell execution timed out".into())
        }
        ExecutionStatus::KernelDied => {
            return verdict(
                VerdictStatus::Error,
                "kernel died while executing the cell".into(),
            )
        }
        ExecutionStatus::Ok | ExecutionStatus::Error => {}
    }
    let failed = computed.status == ExecutionStatus::Error;

    match policy {
        CheckPolicy::Skip => verdict(VerdictStatus::Skip, "skipped".into()),
        CheckPolicy::ExpectException { check_ename } => {
            if !failed {
                return verdict(
                    VerdictStatus::Fail,
                    "expected an exception but the cell completed without error".into(),
                );
            }
            let saved_name = saved.iter().find_map(|o| match o {
                CellOutput::Error { ename, .. } => Some(ename.as_str()),
                _ => None,
            });
            match (check_ename, saved_name, computed.error_name()) {
                (true, Some(expected), actual) if actual != Some(expected) => verdict(
                    VerdictStatus::Fail,
                    format!(
                        "expected {expected} but {}",
                        match actual {
                            Some(actual) => format!("cell raised {actual}"),
                            None => "the exception type is unknown".to_owned(),
                        }
                    ),
                ),
                _ => verdict(VerdictStatus::Pass, "raised as expected".into()),
            }
        }
        CheckPolicy::ExecuteOnly => {
            if failed {
                verdict(VerdictStatus::Fail, raised(computed))
            } else {
                verdict(VerdictStatus::Pass, "executed without error".into())
            }
        }
        CheckPolicy::CheckOutput => {
            if failed {
                return verdict(VerdictStatus::Fail, raised(computed));
            }
            let expected = sanitize_all(normalize_outputs(saved, compare_images), sanitizer);
            let actual = sanitize_all(
                normalize_outputs(&computed.outputs, compare_images),
                sanitizer,
            );
            if expected == actual {
                verdict(VerdictStatus::Pass, "outputs match".into())
            } else {
                CellVerdict {
                    diff: Some(render_diff(&expected, &actual)),
                    ..verdict(VerdictStatus::Fail, "cell outputs differ".into())
                }
            }
        }
    }
}

fn flatten(outputs: &[NormalizedOutput]) -> Vec<String> {
    let mut lines = Vec::new();
    for item in outputs {
        match &item.payload {
            Payload::Text(text) => {
                lines.push(format!("[{}]", item.kind.as_str()));
                lines.extend(text.lines().map(str::to_owned));
            }
            Payload::Bytes(bytes) => {
                let digest = Sha256::digest(bytes);
                let short: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
                lines.push(format!(
                    "[{} {} bytes sha256:{short}]",
                    item.kind.as_str(),
                    bytes.len()
                ));
            }
        }
    }
    lines
}

fn image_notes(saved: &[NormalizedOutput], computed: &[NormalizedOutput]) -> Vec<String> {
    let mut notes = Vec::new();
    for kind in [OutputKind::ImagePng, OutputKind::ImageJpeg] {
        let images = |side: &[NormalizedOutput]| -> Vec<Vec<u8>> {
            side.iter()
                .filter(|o| o.kind == kind)
                .filter_map(|o| match &o.payload {
                    Payload::Bytes(b) => Some(b.clone()),
                    Payload::Text(_) => None,
                })
                .collect()
        };
        let (left, right) = (images(saved), images(computed));
        for i in 0..left.len().max(right.len()) {
            let describe = |img: Option<&Vec<u8>>| match img {
                Some(bytes) => format!("{} bytes", bytes.len()),
                None => "absent".to_owned(),
            };
            let (a, b) = (left.get(i), right.get(i));
            if a != b {
                notes.push(format!(
                    "{} differs: saved {}, computed {}",
                    kind.as_str(),
                    describe(a),
                    describe(b)
                ));
            }
        }
    }
    notes
}

/// Line diff of two normalized output sequences: `-` for saved-only lines,
/// `+` for computed-only lines, a leading space for shared lines. Each
/// output starts with a `[kind]` line. Image mismatches are followed by a
/// one-line note with both byte counts.
pub fn render_diff(saved: &[NormalizedOutput], computed: &[NormalizedOutput]) -> String {
    let old = flatten(saved);
    let new = flatten(computed);
    let old_refs: Vec<&str> = old.iter().map(String::as_str).collect();
    let new_refs: Vec<&str> = new.iter().map(String::as_str).collect();

    let mut out = String::new();
    let diff = TextDiff::configure().diff_slices(&old_refs, &new_refs);
    for change in diff.iter_all_changes() {
        let sign = match change.tag() {
            ChangeTag::Delete => '-',
            ChangeTag::Insert => '+',
            ChangeTag::Equal => ' ',
        };
        let _ = writeln!(out, "{sign}{}", change.value());
    }
    for note in image_notes(saved, computed) {
        let _ = writeln!(out, "{note}");
    }
    out
}
