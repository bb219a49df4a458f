//! Proptest strategies for notebook values, shared by the property and
//! acceptance suites.

use std::collections::BTreeMap;

use proptest::collection::{btree_map, vec};
use proptest::option;
use proptest::prelude::*;
use serde_json::json;

use crate::notebook::{Cell, CellKind, CellOutput, NotebookDocument, RichOutput, StreamName};

pub fn any_text() -> impl Strategy<Value = String> {
    "(?s).{0,40}"
}

fn word() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9-]{0,11}"
}

pub fn rich_output() -> impl Strategy<Value = RichOutput> {
    (
        option::of(any_text()),
        option::of(vec(any::<u8>(), 0..24)),
        option::of(vec(any::<u8>(), 0..24)),
        btree_map(
            prop_oneof![
                Just("text/html".to_owned()),
                Just("application/json".to_owned())
            ],
            (any_text(), any::<i32>()),
            0..2,
        ),
    )
        .prop_map(|(text, image_png, image_jpeg, extra)| RichOutput {
            text,
            image_png,
            image_jpeg,
            other: extra
                .into_iter()
                .map(|(mime, (text, n))| {
                    let value = if mime == "text/html" {
                        json!(text)
                    } else {
                        json!({ "n": n, "s": text })
                    };
                    (mime, value)
                })
                .collect::<BTreeMap<_, _>>(),
        })
}

pub fn cell_output() -> impl Strategy<Value = CellOutput> {
    prop_oneof![
        (any::<bool>(), any_text()).prop_map(|(err, text)| CellOutput::Stream {
            name: if err {
                StreamName::Stderr
            } else {
                StreamName::Stdout
            },
            text,
        }),
        (rich_output(), option::of(0u64..10_000)).prop_map(|(data, execution_count)| {
            CellOutput::ExecuteResult {
                data,
                execution_count,
            }
        }),
        rich_output().prop_map(CellOutput::DisplayData),
        ("[A-Z][A-Za-z]{0,15}", any_text(), vec(any_text(), 0..3)).prop_map(
            |(ename, evalue, traceback)| CellOutput::Error {
                ename,
                evalue,
                traceback,
            }
        ),
        ("x-[a-z]{1,6}", any::<i64>()).prop_map(|(output_type, n)| CellOutput::Unknown {
            raw: json!({ "output_type": output_type, "n": n }),
            output_type,
        }),
    ]
}

fn cell() -> impl Strategy<Value = Cell> {
    (
        prop_oneof![
            3 => Just(CellKind::Code),
            1 => Just(CellKind::Markdown),
            1 => Just(CellKind::Raw)
        ],
        option::of("[a-f0-9]{8}"),
        any_text(),
        option::of(0u64..10_000),
        vec(cell_output(), 0..4),
        vec(word(), 0..3),
    )
        .prop_map(|(kind, id, source, execution_count, outputs, tags)| {
            let code = kind == CellKind::Code;
            Cell {
                kind,
                id,
                source,
                execution_count: execution_count.filter(|_| code),
                outputs: if code { outputs } else { Vec::new() },
                tags,
                code_index: None,
            }
        })
}

/// Documents that satisfy every invariant `parse_notebook` establishes.
pub fn notebook() -> impl Strategy<Value = NotebookDocument> {
    (
        0u32..=5,
        option::of(word()),
        option::of(word()),
        vec(cell(), 0..8),
    )
        .prop_map(|(format_minor, kernel_name, language, mut cells)| {
            let mut next = 0;
            for cell in &mut cells {
                if cell.kind == CellKind::Code {
                    cell.code_index = Some(next);
                    next += 1;
                }
            }
            NotebookDocument {
                format_major: 4,
                format_minor,
                kernel_name,
                language,
                cells,
            }
        })
}

/// Splits `text` into 1..=`max_chunks` pieces at random char boundaries.
pub fn chunked(text: String, max_chunks: usize) -> impl Strategy<Value = Vec<String>> {
    let boundaries: Vec<usize> = text.char_indices().map(|(i, _)| i).skip(1).collect();
    let cuts = max_chunks.saturating_sub(1).min(boundaries.len());
    proptest::sample::subsequence(boundaries, 0..=cuts).prop_map(move |cuts| {
        let mut pieces = Vec::with_capacity(cuts.len() + 1);
        let mut start = 0;
        for cut in cuts {
            pieces.push(text[start..cut].to_owned());
            start = cut;
        }
        pieces.push(text[start..].to_owned());
        pieces
    })
}
