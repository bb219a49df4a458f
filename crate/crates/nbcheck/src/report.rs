//! Console and JUnit-XML reports.

use std::fmt::Write as _;
use std::time::Duration;

use nbcheck_core::VerdictStatus;
use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, BytesText, Event};
use quick_xml::Writer;

use crate::runner::{Counts, NotebookResult};

/// Totals over a run. A file-level error counts as one errored unit.
pub fn totals(results: &[NotebookResult]) -> Counts {
    let mut counts = Counts::default();
    for r in results {
        counts.add(r.counts);
        if r.file_error.is_some() {
            counts.errored += 1;
        }
    }
    counts
}

/// `3 passed, 1 failed in 0.52s`. Zero failed/skipped/errored parts are left out.
pub fn summary_line(counts: Counts, elapsed: Duration) -> String {
    let mut line = format!("{} passed", counts.passed);
    for (n, word) in [
        (counts.failed, "failed"),
        (counts.skipped, "skipped"),
        (counts.errored, "errored"),
    ] {
        if n > 0 {
            let _ = write!(line, ", {n} {word}");
        }
    }
    let _ = write!(line, " in {:.2}s", elapsed.as_secs_f64());
    line
}

fn progress_char(status: VerdictStatus) -> char {
    match status {
        VerdictStatus::Pass => '.',
        VerdictStatus::Fail => 'F',
        VerdictStatus::Skip => 's',
        VerdictStatus::Error => 'E',
    }
}

pub fn console_report(results: &[NotebookResult], verbose: bool, elapsed: Duration) -> String {
    let mut out = String::new();
    if results.is_empty() {
        out.push_str("no notebooks collected\n");
    }
    for r in results {
        let stem = r.stem();
        if let Some(error) = &r.file_error {
            if verbose {
                let _ = writeln!(out, "{stem}::ipynb ERROR");
            } else {
                let _ = writeln!(out, "{} E", r.path.display());
            }
            let _ = writeln!(out, "    {error}");
            continue;
        }
        if verbose {
            for v in &r.verdicts {
                let _ = writeln!(
                    out,
                    "{stem}::ipynb::Cell {} {}",
                    v.cell_index,
                    v.status.label()
                );
            }
        } else {
            let marks: String = r.verdicts.iter().map(|v| progress_char(v.status)).collect();
            let _ = writeln!(out, "{} {marks}", r.path.display());
        }
    }
    out.push_str(&summary_line(totals(results), elapsed));
    out.push('\n');

    for r in results {
        for v in &r.verdicts {
            if !matches!(v.status, VerdictStatus::Fail | VerdictStatus::Error) {
                continue;
            }
            let _ = writeln!(
                out,
                "\n___ {}::ipynb::Cell {} {} ___\n{}",
                r.stem(),
                v.cell_index,
                v.status.label(),
                v.reason
            );
            if let Some(diff) = &v.diff {
                out.push_str(diff);
                if !diff.ends_with('\n') {
                    out.push('\n');
                }
            }
        }
    }
    out
}

/// Characters XML 1.0 cannot carry even escaped become U+FFFD.
fn xml_safe(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '\t' | '\n' | '\r' => c,
            c if (c as u32) < 0x20 || c == '\u{FFFE}' || c == '\u{FFFF}' => '\u{FFFD}',
            c => c,
        })
        .collect()
}

fn secs(d: Duration) -> String {
    format!("{:.3}", d.as_secs_f64())
}

fn element(name: &str, attrs: &[(&str, String)]) -> BytesStart<'static> {
    let mut start = BytesStart::new(name.to_owned());
    for (key, value) in attrs {
        start.push_attribute((*key, xml_safe(value).as_str()));
    }
    start
}

type XmlWriter = Writer<Vec<u8>>;

fn write(w: &mut XmlWriter, event: Event<'_>) {
    w.write_event(event).expect("writing to memory cannot fail");
}

fn leaf(w: &mut XmlWriter, name: &str, attrs: &[(&str, String)], body: Option<&str>) {
    match body {
        None => write(w, Event::Empty(element(name, attrs))),
        Some(text) => {
            write(w, Event::Start(element(name, attrs)));
            write(w, Event::Text(BytesText::new(&xml_safe(text))));
            write(w, Event::End(BytesEnd::new(name.to_owned())));
        }
    }
}

/// One `testsuite` per notebook and one `testcase` per code cell.
pub fn junit_xml(results: &[NotebookResult], elapsed: Duration) -> Vec<u8> {
    let mut w = Writer::new_with_indent(Vec::new(), b' ', 2);
    write(
        &mut w,
        Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)),
    );

    let all = totals(results);
    let count_attrs = |c: Counts, time: Duration| {
        vec![
            (
                "tests",
                (c.passed + c.failed + c.skipped + c.errored).to_string(),
            ),
            ("failures", c.failed.to_string()),
            ("errors", c.errored.to_string()),
            ("skipped", c.skipped.to_string()),
            ("time", secs(time)),
        ]
    };
    let mut attrs = vec![("name", "nbcheck".to_owned())];
    attrs.extend(count_attrs(all, elapsed));
    write(&mut w, Event::Start(element("testsuites", &attrs)));

    for r in results {
        let classname = format!("{}::ipynb", r.stem());
        let mut suite_counts = r.counts;
        if r.file_error.is_some() {
            suite_counts.errored += 1;
        }
        let mut attrs = vec![("name", r.path.display().to_string())];
        attrs.extend(count_attrs(suite_counts, r.wall_time));
        write(&mut w, Event::Start(element("testsuite", &attrs)));

        if let Some(error) = &r.file_error {
            let name = r
                .path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| r.path.display().to_string());
            let case = [
                ("classname", classname.clone()),
                ("name", name),
                ("time", secs(r.wall_time)),
            ];
            write(&mut w, Event::Start(element("testcase", &case)));
            leaf(&mut w, "error", &[("message", error.clone())], None);
            write(&mut w, Event::End(BytesEnd::new("testcase")));
        }

        for v in &r.verdicts {
            let case = [
                ("classname", classname.clone()),
                ("name", format!("Cell {}", v.cell_index)),
                ("time", secs(v.duration)),
            ];
            if v.status == VerdictStatus::Pass {
                write(&mut w, Event::Empty(element("testcase", &case)));
                continue;
            }
            write(&mut w, Event::Start(element("testcase", &case)));
            let message = [("message", v.reason.clone())];
            match v.status {
                VerdictStatus::Fail => leaf(&mut w, "failure", &message, v.diff.as_deref()),
                VerdictStatus::Skip => leaf(&mut w, "skipped", &message, None),
                VerdictStatus::Error => leaf(&mut w, "error", &message, None),
                VerdictStatus::Pass => unreachable!(),
            }
            write(&mut w, Event::End(BytesEnd::new("testcase")));
        }
        write(&mut w, Event::End(BytesEnd::new("testsuite")));
    }
    write(&mut w, Event::End(BytesEnd::new("testsuites")));
    let mut bytes = w.into_inner();
    bytes.push(b'\n');
    bytes
}
