//! Plain-text and JUnit XML reports of a suite run.

use std::fmt::Write as _;

use super::runner::{SuiteReport, TestOutcome, Verdict};

/// One line per case, failing ranks' messages in rank order, then the summary.
pub fn render_text(report: &SuiteReport) -> String {
    let mut out = String::new();
    for o in &report.outcomes {
        let _ = writeln!(out, "{:<7} {} ({:.3} s)", o.verdict.name().to_uppercase(), o.case, o.duration);
        if o.verdict == Verdict::Pass {
            continue;
        }
        for note in &o.notes {
            let _ = writeln!(out, "    {note}");
        }
        for r in &o.per_rank {
            for m in &r.messages {
                let _ = writeln!(out, "    rank {}: {m}", r.rank);
            }
        }
    }
    let s = &report.summary;
    let _ = writeln!(
        out,
        "\n{} plan: {} cases, {} passed, {} failed, {} errors, {} skipped in {:.2} s",
        report.plan.strategy, s.total, s.passed, s.failed, s.errors, s.skipped, report.duration
    );
    out
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && !matches!(c, '\n' | '\t' | '\r') => {}
            c => out.push(c),
        }
    }
    out
}

fn rank_messages(o: &TestOutcome) -> String {
    let mut lines: Vec<String> = o.notes.clone();
    for r in &o.per_rank {
        for m in &r.messages {
            lines.push(format!("rank {}: {m}", r.rank));
        }
    }
    lines.join("\n")
}

/// One `<testsuite>` for the plan, one `<testcase>` per case; failures and
/// errors carry the per-rank messages.
pub fn render_junit(report: &SuiteReport) -> String {
    let s = &report.summary;
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<testsuites tests=\"{}\" failures=\"{}\" errors=\"{}\" skipped=\"{}\" time=\"{:.6}\">",
        s.total, s.failed, s.errors, s.skipped, report.duration
    );
    let _ = writeln!(
        out,
        "  <testsuite name=\"hpcwb.{}\" tests=\"{}\" failures=\"{}\" errors=\"{}\" skipped=\"{}\" time=\"{:.6}\">",
        report.plan.strategy, s.total, s.failed, s.errors, s.skipped, report.duration
    );
    for o in &report.outcomes {
        let _ = write!(
            out,
            "    <testcase classname=\"hpcwb.{}\" name=\"{}\" time=\"{:.6}\"",
            report.plan.strategy,
            escape(&o.case.name()),
            o.duration
        );
        let body = rank_messages(o);
        let first = body.lines().next().unwrap_or_default().to_string();
        match o.verdict {
            Verdict::Pass => out.push_str("/>\n"),
            Verdict::Fail | Verdict::Error => {
                let tag = if o.verdict == Verdict::Fail { "failure" } else { "error" };
                let _ = writeln!(
                    out,
                    ">\n      <{tag} message=\"{}\">{}</{tag}>\n    </testcase>",
                    escape(&first),
                    escape(&body)
                );
            }
            Verdict::Skipped => {
                let _ = writeln!(
                    out,
                    ">\n      <skipped message=\"{}\"/>\n    </testcase>",
                    escape(&first)
                );
            }
        }
    }
    out.push_str("  </testsuite>\n</testsuites>\n");
    out
}
