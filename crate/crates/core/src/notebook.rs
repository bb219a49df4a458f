//! In-memory model of an nbformat 4 notebook and the per-cell validation
//! directives carried by cell tags and marker comments.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NotebookError {
    #[error("malformed notebook: {0}")]
    MalformedDocument(String),
    #[error("unsupported notebook format {major}.{minor} (only nbformat 4 is supported)")]
    UnsupportedFormat { major: u64, minor: u64 },
    #[error("cell {cell_index}: check-output and ignore-output markers are both present")]
    ConflictingDirectives { cell_index: usize },
}

fn malformed(msg: impl Into<String>) -> NotebookError {
    NotebookError::MalformedDocument(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NotebookDocument {
    pub format_major: u32,
    pub format_minor: u32,
    /// `metadata.kernelspec.name`
    pub kernel_name: Option<String>,
    /// `metadata.language_info.name`, falling back to `metadata.kernelspec.language`
    pub language: Option<String>,
    pub cells: Vec<Cell>,
}

impl NotebookDocument {
    pub fn empty() -> Self {
        Self {
            format_major: 4,
            format_minor: 5,
            kernel_name: None,
            language: None,
            cells: Vec::new(),
        }
    }

    pub fn code_cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| c.kind == CellKind::Code)
    }

    pub fn code_cell_count(&self) -> usize {
        self.code_cells().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Code,
    Markdown,
    Raw,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Code => "code",
            CellKind::Markdown => "markdown",
            CellKind::Raw => "raw",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub kind: CellKind,
    pub id: Option<String>,
    pub source: String,
    /// Carried through but never compared.
    pub execution_count: Option<u64>,
    /// Always empty for non-code cells.
    pub outputs: Vec<CellOutput>,
    pub tags: Vec<String>,
    /// Position among code cells (the "Cell k" number); `None` for markdown and raw cells.
    pub code_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamName {
    Stdout,
    Stderr,
}

impl StreamName {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamName::Stdout => "stdout",
            StreamName::Stderr => "stderr",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "stdout" => Some(StreamName::Stdout),
            "stderr" => Some(StreamName::Stderr),
            _ => None,
        }
    }
}

/// Mime bundle of an `execute_result` or `display_data` output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RichOutput {
    /// `text/plain`
    pub text: Option<String>,
    /// Decoded `image/png` bytes.
    pub image_png: Option<Vec<u8>>,
    /// Decoded `image/jpeg` bytes.
    pub image_jpeg: Option<Vec<u8>>,
    /// Remaining mime types, kept verbatim.
    pub other: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutput {
    Stream {
        name: StreamName,
        text: String,
    },
    ExecuteResult {
        data: RichOutput,
        execution_count: Option<u64>,
    },
    DisplayData(RichOutput),
    Error {
        ename: String,
        evalue: String,
        traceback: Vec<String>,
    },
    /// An output type this model does not know about. Kept opaque so it
    /// survives a round trip; the comparator ignores it.
    Unknown {
        output_type: String,
        raw: Value,
    },
}

impl CellOutput {
    pub fn stdout(text: impl Into<String>) -> Self {
        CellOutput::Stream {
            name: StreamName::Stdout,
            text: text.into(),
        }
    }

    pub fn stderr(text: impl Into<String>) -> Self {
        CellOutput::Stream {
            name: StreamName::Stderr,
            text: text.into(),
        }
    }

    pub fn text_result(text: impl Into<String>) -> Self {
        CellOutput::ExecuteResult {
            data: RichOutput {
                text: Some(text.into()),
                ..RichOutput::default()
            },
            execution_count: None,
        }
    }

    pub fn error(ename: impl Into<String>, evalue: impl Into<String>) -> Self {
        CellOutput::Error {
            ename: ename.into(),
            evalue: evalue.into(),
            traceback: Vec::new(),
        }
    }

    pub fn output_type(&self) -> &str {
        match self {
            CellOutput::Stream { .. } => "stream",
            CellOutput::ExecuteResult { .. } => "execute_result",
            CellOutput::DisplayData(_) => "display_data",
            CellOutput::Error { .. } => "error",
            CellOutput::Unknown { output_type, .. } => output_type,
        }
    }

    /// Builds an output from its JSON form. The same shape is used on disk
    /// and in kernel `iopub` message content, so the kernel client reuses it.
    pub fn from_json(value: &Value) -> Result<Self, NotebookError> {
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("output is not an object"))?;
        let output_type = obj
            .get("output_type")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("output without output_type"))?;
        match output_type {
            "stream" => {
                let name = required_str(obj, "name", "stream output")?;
                let name = StreamName::parse(name)
                    .ok_or_else(|| malformed(format!("unknown stream name {name:?}")))?;
                let text = multiline(obj.get("text"), "stream text")?
                    .ok_or_else(|| malformed("stream output without text"))?;
                Ok(CellOutput::Stream { name, text })
            }
            "execute_result" => Ok(CellOutput::ExecuteResult {
                data: rich_output(obj)?,
                execution_count: obj.get("execution_count").and_then(Value::as_u64),
            }),
            "display_data" => Ok(CellOutput::DisplayData(rich_output(obj)?)),
            "error" => {
                let traceback = match obj.get("traceback") {
                    None | Some(Value::Null) => Vec::new(),
                    Some(tb) => Vec::<String>::deserialize(tb)
                        .map_err(|e| malformed(format!("error traceback: {e}")))?,
                };
                Ok(CellOutput::Error {
                    ename: required_str(obj, "ename", "error output")?.to_owned(),
                    evalue: required_str(obj, "evalue", "error output")?.to_owned(),
                    traceback,
                })
            }
            other => Ok(CellOutput::Unknown {
                output_type: other.to_owned(),
                raw: value.clone(),
            }),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            CellOutput::Stream { name, text } => json!({
                "output_type": "stream",
                "name": name.as_str(),
                "text": split_lines(text),
            }),
            CellOutput::ExecuteResult {
                data,
                execution_count,
            } => json!({
                "output_type": "execute_result",
                "execution_count": execution_count,
                "data": rich_to_json(data),
                "metadata": {},
            }),
            CellOutput::DisplayData(data) => json!({
                "output_type": "display_data",
                "data": rich_to_json(data),
                "metadata": {},
            }),
            CellOutput::Error {
                ename,
                evalue,
                traceback,
            } => json!({
                "output_type": "error",
                "ename": ename,
                "evalue": evalue,
                "traceback": traceback,
            }),
            CellOutput::Unknown { raw, .. } => raw.clone(),
        }
    }
}

/// Per-cell validation markers after merging tags and comment tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CellDirectives {
    pub check_output: bool,
    pub ignore_output: bool,
    pub skip: bool,
    pub raises_exception: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MultilineText {
    One(String),
    Lines(Vec<String>),
}

impl MultilineText {
    fn join(self) -> String {
        match self {
            MultilineText::One(s) => s,
            MultilineText::Lines(lines) => lines.concat(),
        }
    }
}

#[derive(Deserialize)]
struct RawNotebook {
    nbformat_minor: u32,
    #[serde(default)]
    metadata: RawNotebookMetadata,
    cells: Vec<RawCell>,
}

#[derive(Deserialize, Default)]
struct RawNotebookMetadata {
    kernelspec: Option<RawKernelspec>,
    language_info: Option<RawLanguageInfo>,
}

#[derive(Deserialize)]
struct RawKernelspec {
    name: Option<String>,
    language: Option<String>,
}

#[derive(Deserialize)]
struct RawLanguageInfo {
    name: Option<String>,
}

#[derive(Deserialize)]
struct RawCell {
    cell_type: String,
    id: Option<String>,
    source: MultilineText,
    #[serde(default)]
    metadata: RawCellMetadata,
    execution_count: Option<u64>,
    outputs: Option<Vec<Value>>,
}

#[derive(Deserialize, Default)]
struct RawCellMetadata {
    #[serde(default)]
    tags: Vec<String>,
}

/// Parses an `.ipynb` file. Unknown metadata keys are ignored.
pub fn parse_notebook(raw: &[u8]) -> Result<NotebookDocument, NotebookError> {
    let value: Value =
        serde_json::from_slice(raw).map_err(|e| malformed(format!("invalid JSON: {e}")))?;
    let major = value
        .get("nbformat")
        .and_then(Value::as_u64)
        .ok_or_else(|| malformed("missing integer key \"nbformat\""))?;
    if major != 4 {
        let minor = value
            .get("nbformat_minor")
            .and_then(Value::as_u64)
            .unwrap_or(0);
        return Err(NotebookError::UnsupportedFormat { major, minor });
    }
    let raw_nb: RawNotebook =
        serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;

    let (kernel_name, kernel_language) = match raw_nb.metadata.kernelspec {
        Some(spec) => (spec.name, spec.language),
        None => (None, None),
    };
    let language = raw_nb
        .metadata
        .language_info
        .and_then(|info| info.name)
        .or(kernel_language);

    let mut next_code_index = 0;
    let mut cells = Vec::with_capacity(raw_nb.cells.len());
    for (position, raw_cell) in raw_nb.cells.into_iter().enumerate() {
        let kind = match raw_cell.cell_type.as_str() {
            "code" => CellKind::Code,
            "markdown" => CellKind::Markdown,
            "raw" => CellKind::Raw,
            other => {
                return Err(malformed(format!(
                    "cell {position}: unknown cell_type {other:?}"
                )))
            }
        };
        let (outputs, execution_count, code_index) = if kind == CellKind::Code {
            let outputs = raw_cell
                .outputs
                .unwrap_or_default()
                .iter()
                .map(CellOutput::from_json)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| match e {
                    NotebookError::MalformedDocument(msg) => {
                        malformed(format!("cell {position}: {msg}"))
                    }
                    other => other,
                })?;
            let index = next_code_index;
            next_code_index += 1;
            (outputs, raw_cell.execution_count, Some(index))
        } else {
            (Vec::new(), None, None)
        };
        cells.push(Cell {
            kind,
            id: raw_cell.id,
            source: raw_cell.source.join(),
            execution_count,
            outputs,
            tags: raw_cell.metadata.tags,
            code_index,
        });
    }

    Ok(NotebookDocument {
        format_major: 4,
        format_minor: raw_nb.nbformat_minor,
        kernel_name,
        language,
        cells,
    })
}

/// Serializes a document as nbformat 4 JSON with Jupyter's one-space indent.
pub fn serialize_notebook(doc: &NotebookDocument) -> Vec<u8> {
    let cells: Vec<Value> = doc.cells.iter().map(cell_to_json).collect();

    let mut metadata = Map::new();
    if doc.kernel_name.is_some() {
        let mut kernelspec = Map::new();
        if let Some(name) = &doc.kernel_name {
            kernelspec.insert("name".into(), json!(name));
            kernelspec.insert("display_name".into(), json!(name));
        }
        if let Some(language) = &doc.language {
            kernelspec.insert("language".into(), json!(language));
        }
        metadata.insert("kernelspec".into(), Value::Object(kernelspec));
    }
    if let Some(language) = &doc.language {
        metadata.insert("language_info".into(), json!({ "name": language }));
    }

    let notebook = json!({
        "cells": cells,
        "metadata": metadata,
        "nbformat": doc.format_major,
        "nbformat_minor": doc.format_minor,
    });

    let mut out = Vec::new();
    let formatter = serde_json::ser::PrettyFormatter::with_indent(b" ");
    let mut ser = serde_json::Serializer::with_formatter(&mut out, formatter);
    serde::Serialize::serialize(&notebook, &mut ser).expect("serializing a JSON value to memory");
    out.push(b'\n');
    out
}

fn cell_to_json(cell: &Cell) -> Value {
    let mut obj = Map::new();
    obj.insert("cell_type".into(), json!(cell.kind.as_str()));
    if let Some(id) = &cell.id {
        obj.insert("id".into(), json!(id));
    }
    let mut metadata = Map::new();
    if !cell.tags.is_empty() {
        metadata.insert("tags".into(), json!(cell.tags));
    }
    obj.insert("metadata".into(), Value::Object(metadata));
    obj.insert("source".into(), json!(split_lines(&cell.source)));
    if cell.kind == CellKind::Code {
        obj.insert("execution_count".into(), json!(cell.execution_count));
        obj.insert(
            "outputs".into(),
            Value::Array(cell.outputs.iter().map(CellOutput::to_json).collect()),
        );
    }
    Value::Object(obj)
}

fn rich_to_json(data: &RichOutput) -> Value {
    let mut bundle = Map::new();
    for (mime, value) in &data.other {
        bundle.insert(mime.clone(), value.clone());
    }
    if let Some(text) = &data.text {
        bundle.insert("text/plain".into(), json!(split_lines(text)));
    }
    if let Some(png) = &data.image_png {
        bundle.insert("image/png".into(), json!(BASE64.encode(png)));
    }
    if let Some(jpeg) = &data.image_jpeg {
        bundle.insert("image/jpeg".into(), json!(BASE64.encode(jpeg)));
    }
    Value::Object(bundle)
}

fn rich_output(obj: &Map<String, Value>) -> Result<RichOutput, NotebookError> {
    let mut rich = RichOutput::default();
    let Some(data) = obj.get("data") else {
        return Ok(rich);
    };
    let data = data
        .as_object()
        .ok_or_else(|| malformed("output data is not an object"))?;
    for (mime, value) in data {
        match mime.as_str() {
            "text/plain" => rich.text = multiline(Some(value), "text/plain")?,
            "image/png" => rich.image_png = Some(decode_image(value, mime)?),
            "image/jpeg" => rich.image_jpeg = Some(decode_image(value, mime)?),
            _ => {
                rich.other.insert(mime.clone(), value.clone());
            }
        }
    }
    Ok(rich)
}

fn decode_image(value: &Value, mime: &str) -> Result<Vec<u8>, NotebookError> {
    let encoded = multiline(Some(value), mime)?.unwrap_or_default();
    let compact: String = encoded.chars().filter(|c| !c.is_whitespace()).collect();
    BASE64
        .decode(compact.as_bytes())
        .map_err(|e| malformed(format!("{mime}: invalid base64: {e}")))
}

fn multiline(value: Option<&Value>, what: &str) -> Result<Option<String>, NotebookError> {
    match value {
        None | Some(Value::Null) => Ok(None),
        Some(v) => MultilineText::deserialize(v)
            .map(|t| Some(t.join()))
            .map_err(|_| malformed(format!("{what}: expected a string or a list of strings"))),
    }
}

fn required_str<'a>(
    obj: &'a Map<String, Value>,
    key: &str,
    what: &str,
) -> Result<&'a str, NotebookError> {
    obj.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(format!("{what} without {key:?}")))
}

/// Splits text into Jupyter's list-of-lines form, keeping line terminators.
fn split_lines(text: &str) -> Vec<&str> {
    text.split_inclusive('\n').collect()
}

const TAG_CHECK_OUTPUT: &str = "nbval-check-output";
const TAG_IGNORE_OUTPUT: &str = "nbval-ignore-output";
const TAG_SKIP: &str = "nbval-skip";
const TAG_RAISES: &str = "nbval-raises-exception";
const TAG_RAISES_SHORT: &str = "raises-exception";

const MARK_CHECK_OUTPUT: &str = "NBVAL_CHECK_OUTPUT";
const MARK_IGNORE_OUTPUT: &str = "NBVAL_IGNORE_OUTPUT";
const MARK_SKIP: &str = "NBVAL_SKIP";
const MARK_RAISES: &str = "NBVAL_RAISES_EXCEPTION";

/// Line-comment prefix used for marker comments in a given kernel language.
pub fn comment_prefix(language: Option<&str>) -> &'static str {
    let Some(language) = language else {
        return "#";
    };
    match language.to_ascii_lowercase().as_str() {
        "javascript" | "typescript" | "rust" | "c" | "c++" | "cpp" | "java" | "go" | "scala"
        | "kotlin" | "swift" | "csharp" | "c#" | "fsharp" | "f#" | "dart" => "//",
        "haskell" | "lua" | "sql" => "--",
        "matlab" | "octave" => "%",
        "lisp" | "clojure" | "scheme" | "racket" => ";",
        _ => "#",
    }
}

/// Resolves the directives of a code cell, recognizing `#` marker comments.
///
/// Non-code cells carry no directives and resolve to all-false.
pub fn extract_directives(cell: &Cell) -> Result<CellDirectives, NotebookError> {
    extract_directives_with_prefix(cell, "#")
}

/// Like [`extract_directives`] with an explicit comment prefix
/// (see [`comment_prefix`]).
pub fn extract_directives_with_prefix(
    cell: &Cell,
    comment: &str,
) -> Result<CellDirectives, NotebookError> {
    if cell.kind != CellKind::Code {
        return Ok(CellDirectives::default());
    }
    let has_tag = |tag: &str| cell.tags.iter().any(|t| t == tag);

    let mut markers: Vec<&str> = Vec::new();
    for line in cell.source.lines() {
        if let Some(rest) = line.trim_start().strip_prefix(comment) {
            markers.extend(
                rest.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                    .filter(|w| !w.is_empty()),
            );
        }
    }
    let has_marker = |token: &str| markers.contains(&token);

    let directives = CellDirectives {
        check_output: has_tag(TAG_CHECK_OUTPUT) || has_marker(MARK_CHECK_OUTPUT),
        ignore_output: has_tag(TAG_IGNORE_OUTPUT) || has_marker(MARK_IGNORE_OUTPUT),
        skip: has_tag(TAG_SKIP) || has_marker(MARK_SKIP),
        raises_exception: has_tag(TAG_RAISES)
            || has_tag(TAG_RAISES_SHORT)
            || has_marker(MARK_RAISES),
    };
    if directives.check_output && directives.ignore_output {
        return Err(NotebookError::ConflictingDirectives {
            cell_index: cell.code_index.unwrap_or(0),
        });
    }
    Ok(directives)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code_cell(source: &str, tags: &[&str]) -> Cell {
        Cell {
            kind: CellKind::Code,
            id: None,
            source: source.to_owned(),
            execution_count: None,
            outputs: Vec::new(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            code_index: Some(0),
        }
    }

    const HELLO: &str = r##"{
      "nbformat": 4, "nbformat_minor": 5,
      "metadata": {"kernelspec": {"name": "python3", "language": "python", "display_name": "Python 3"},
                   "widgets": {"anything": true}},
      "cells": [
        {"cell_type": "markdown", "metadata": {}, "source": ["# Title\n", "text"]},
        {"cell_type": "code", "execution_count": 1, "metadata": {"tags": ["nbval-skip"]},
         "source": "print('Hello World')",
         "outputs": [{"output_type": "stream", "name": "stdout", "text": ["Hello World\n"]}]},
        {"cell_type": "raw", "metadata": {}, "source": ""},
        {"cell_type": "code", "execution_count": 2, "metadata": {}, "source": ["1 +", " 1"],
         "outputs": [{"output_type": "execute_result", "execution_count": 2, "metadata": {},
                      "data": {"text/plain": ["2"], "text/html": ["<b>2</b>"]}}]}
      ]
    }"##;

    #[test]
    fn empty_notebook() {
        let doc = parse_notebook(br#"{"nbformat":4,"nbformat_minor":5,"metadata":{},"cells":[]}"#)
            .unwrap();
        assert!(doc.cells.is_empty());
        assert_eq!((doc.format_major, doc.format_minor), (4, 5));
        assert_eq!(doc.kernel_name, None);
    }

    #[test]
    fn hello_world_notebook() {
        let doc = parse_notebook(HELLO.as_bytes()).unwrap();
        assert_eq!(doc.cells.len(), 4);
        assert_eq!(doc.code_cell_count(), 2);
        assert_eq!(doc.kernel_name.as_deref(), Some("python3"));
        assert_eq!(doc.language.as_deref(), Some("python"));

        let hello = &doc.cells[1];
        assert_eq!(hello.kind, CellKind::Code);
        assert_eq!(hello.code_index, Some(0));
        assert_eq!(hello.source, "print('Hello World')");
        assert_eq!(hello.outputs, vec![CellOutput::stdout("Hello World\n")]);
        assert_eq!(hello.tags, vec!["nbval-skip"]);

        assert_eq!(doc.cells[0].source, "# Title\ntext");
        assert_eq!(doc.cells[0].code_index, None);
        assert_eq!(doc.cells[3].code_index, Some(1));
        assert_eq!(doc.cells[3].source, "1 + 1");
        match &doc.cells[3].outputs[0] {
            CellOutput::ExecuteResult {
                data,
                execution_count,
            } => {
                assert_eq!(data.text.as_deref(), Some("2"));
                assert_eq!(*execution_count, Some(2));
                assert!(data.other.contains_key("text/html"));
            }
            other => panic!("unexpected output {other:?}"),
        }
    }

    #[test]
    fn rejects_nbformat_3() {
        let err =
            parse_notebook(br#"{"nbformat":3,"nbformat_minor":0,"worksheets":[]}"#).unwrap_err();
        assert_eq!(err, NotebookError::UnsupportedFormat { major: 3, minor: 0 });
    }

    #[test]
    fn malformed_inputs() {
        for raw in [
            &b"not json"[..],
            br#"{"nbformat_minor":5,"cells":[]}"#,
            br#"{"nbformat":4,"nbformat_minor":5}"#,
            br#"{"nbformat":4,"nbformat_minor":5,"cells":[{"cell_type":"heading","source":""}]}"#,
            br#"{"nbformat":4,"nbformat_minor":5,"cells":[{"cell_type":"code","source":"",
                 "outputs":[{"output_type":"stream","name":"stdlog","text":""}]}]}"#,
            b"\xff\xfe",
        ] {
            assert!(
                matches!(
                    parse_notebook(raw),
                    Err(NotebookError::MalformedDocument(_))
                ),
                "{}",
                String::from_utf8_lossy(raw)
            );
        }
    }

    #[test]
    fn unknown_output_type_is_kept() {
        let raw = br#"{"nbformat":4,"nbformat_minor":9,"metadata":{},"cells":[
            {"cell_type":"code","source":"x","metadata":{},"execution_count":null,
             "outputs":[{"output_type":"hologram","payload":[1,2,3]}]}]}"#;
        let doc = parse_notebook(raw).unwrap();
        assert!(matches!(
            &doc.cells[0].outputs[0],
            CellOutput::Unknown { output_type, .. } if output_type == "hologram"
        ));
        let again = parse_notebook(&serialize_notebook(&doc)).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn images_are_base64_decoded() {
        let raw = br#"{"nbformat":4,"nbformat_minor":5,"metadata":{},"cells":[
            {"cell_type":"code","source":"img","metadata":{},"execution_count":3,
             "outputs":[{"output_type":"display_data","metadata":{},
                         "data":{"image/png":"AAEC\nAw==\n","text/plain":"<Image>"}}]}]}"#;
        let doc = parse_notebook(raw).unwrap();
        match &doc.cells[0].outputs[0] {
            CellOutput::DisplayData(data) => {
                assert_eq!(data.image_png.as_deref(), Some(&[0u8, 1, 2, 3][..]));
                assert_eq!(data.text.as_deref(), Some("<Image>"));
            }
            other => panic!("unexpected output {other:?}"),
        }
    }

    #[test]
    fn round_trip_examples() {
        let empty = NotebookDocument::empty();
        assert_eq!(parse_notebook(&serialize_notebook(&empty)).unwrap(), empty);

        let doc = parse_notebook(HELLO.as_bytes()).unwrap();
        assert_eq!(parse_notebook(&serialize_notebook(&doc)).unwrap(), doc);
    }

    #[test]
    fn directive_tags_and_comments() {
        assert_eq!(
            extract_directives(&code_cell("x = 1", &["nbval-skip"])).unwrap(),
            CellDirectives {
                skip: true,
                ..Default::default()
            }
        );
        assert_eq!(
            extract_directives(&code_cell("# NBVAL_IGNORE_OUTPUT\nprint(1)", &[])).unwrap(),
            CellDirectives {
                ignore_output: true,
                ..Default::default()
            }
        );
        assert_eq!(
            extract_directives(&code_cell("print(1)", &[])).unwrap(),
            CellDirectives::default()
        );
        for tag in ["raises-exception", "nbval-raises-exception"] {
            assert!(
                extract_directives(&code_cell("1/0", &[tag]))
                    .unwrap()
                    .raises_exception
            );
        }
        let d = extract_directives(&code_cell("  #NBVAL_CHECK_OUTPUT, NBVAL_SKIP", &[])).unwrap();
        assert!(d.check_output && d.skip);
    }

    #[test]
    fn marker_must_be_a_whole_word_on_a_comment_line() {
        for source in [
            "s = '# NBVAL_SKIP'",
            "x = 1  # NBVAL_SKIP",
            "# NBVAL_SKIPPED",
            "# XNBVAL_SKIP",
            "# nbval_skip",
        ] {
            assert_eq!(
                extract_directives(&code_cell(source, &[])).unwrap(),
                CellDirectives::default(),
                "{source}"
            );
        }
    }

    #[test]
    fn language_comment_prefix() {
        let cell = code_cell("// NBVAL_SKIP\nconsole.log(1)", &[]);
        assert!(
            extract_directives_with_prefix(&cell, comment_prefix(Some("javascript")))
                .unwrap()
                .skip
        );
        assert!(!extract_directives(&cell).unwrap().skip);
        assert_eq!(comment_prefix(None), "#");
        assert_eq!(comment_prefix(Some("R")), "#");
    }

    #[test]
    fn conflicting_directives() {
        let mut cell = code_cell("# NBVAL_IGNORE_OUTPUT", &["nbval-check-output"]);
        cell.code_index = Some(7);
        assert_eq!(
            extract_directives(&cell),
            Err(NotebookError::ConflictingDirectives { cell_index: 7 })
        );
    }

    #[test]
    fn markdown_cells_carry_no_directives() {
        let mut cell = code_cell("# NBVAL_SKIP", &["nbval-skip"]);
        cell.kind = CellKind::Markdown;
        assert_eq!(
            extract_directives(&cell).unwrap(),
            CellDirectives::default()
        );
    }
}
