//! The `theory` subcommand: run the convergence-theory verification suite
//! and emit its report as JSON lines.
//!
//! Each section of the suite becomes one or more JSONL records tagged with
//! a `section` field, followed by a final `summary` record.  The
//! human-readable summary (one line per section) goes to stdout; details
//! of failing entries — with counterexample matrices embedded — go to
//! stderr.  The command succeeds only if the whole suite passed, including
//! the oversized-change negative control being flagged as a hypothesis
//! violation rather than reported convergent.

use std::path::Path;

use plastlab_core::theory::{self, SuiteReport, TaskReport};

use crate::{CliError, Result};

/// Rendered outcome of a suite run: the exit status plus the text that
/// the command prints.
#[derive(Debug, Clone)]
pub struct TheoryOutcome {
    /// Whole suite passed (negative control flagged).
    pub passed: bool,
    /// One line per section for stdout.
    pub summary: String,
    /// JSON records of failing entries for stderr; empty when passing.
    pub failures: String,
}

fn jval<T: serde::Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| CliError::Invalid(e.to_string()))
}

fn tagged(section: &str, extra: &[(&str, serde_json::Value)], value: serde_json::Value) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("section".into(), serde_json::Value::String(section.into()));
    for (k, v) in extra {
        obj.insert((*k).into(), v.clone());
    }
    if let serde_json::Value::Object(m) = value {
        for (k, v) in m {
            obj.insert(k, v);
        }
    }
    serde_json::Value::Object(obj).to_string()
}

/// Serialize a suite report as JSONL: one record per section entry plus a
/// trailing summary record.
pub fn report_lines(report: &SuiteReport) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    lines.push(tagged("constants", &[], jval(&report.constants)?));
    for (i, r) in report.spectrum.iter().enumerate() {
        lines.push(tagged(
            "spectrum",
            &[("index", serde_json::json!(i))],
            jval(r)?,
        ));
    }
    lines.push(tagged("basin", &[], jval(&report.basin)?));
    lines.push(tagged("sampler", &[], jval(&report.sampler)?));
    lines.push(tagged("shift", &[], jval(&report.shift)?));
    for r in &report.sequence {
        lines.push(tagged("sequence", &[], jval(r)?));
    }
    lines.push(tagged("control", &[], jval(&report.control)?));
    lines.push(tagged(
        "summary",
        &[],
        serde_json::json!({ "seed": report.seed, "passed": report.passed }),
    ));
    Ok(lines)
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

/// The negative control passes (from the caller's view) when the
/// oversized change was flagged as a hypothesis violation and the task
/// was not reported as a clean convergence.
fn control_flagged(control: &TaskReport) -> bool {
    !control.hypothesis_ok && !control.passed
}

/// Render the per-section summary and the failure detail.
pub fn summarize_report(report: &SuiteReport) -> Result<TheoryOutcome> {
    let spectrum_failures: Vec<usize> = report
        .spectrum
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.passed)
        .map(|(i, _)| i)
        .collect();
    let sequence_failures: Vec<usize> = report
        .sequence
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.task)
        .collect();
    let control_ok = control_flagged(&report.control);

    let mut s = String::new();
    s.push_str(&format!(
        "constants  {}  ({} pairs, {} smoothness / {} convexity violations)\n",
        mark(report.constants.passed),
        report.constants.pairs,
        report.constants.smooth_violations,
        report.constants.convex_violations,
    ));
    s.push_str(&format!(
        "spectrum   {}  ({} instances, {} outside the curvature envelope)\n",
        mark(spectrum_failures.is_empty()),
        report.spectrum.len(),
        spectrum_failures.len(),
    ));
    s.push_str(&format!(
        "basin      {}  ({} samples, {} escaped the original basin)\n",
        mark(report.basin.passed),
        report.basin.samples,
        report.basin.violations,
    ));
    s.push_str(&format!(
        "sampler    {}  ({} samples, {} singular-value / {} inverse-gap violations)\n",
        mark(report.sampler.passed),
        report.sampler.samples,
        report.sampler.sigma_violations,
        report.sampler.inverse_gap_violations,
    ));
    s.push_str(&format!(
        "shift      {}  (converged after {} steps, final distance {:.3e})\n",
        mark(report.shift.passed),
        report.shift.steps,
        report.shift.final_dist,
    ));
    s.push_str(&format!(
        "sequence   {}  ({} tasks, {} failed)\n",
        mark(sequence_failures.is_empty()),
        report.sequence.len(),
        sequence_failures.len(),
    ));
    s.push_str(&format!(
        "control    {}  (oversized change {})\n",
        mark(control_ok),
        if control_ok {
            "flagged as a hypothesis violation, as required"
        } else {
            "was NOT flagged"
        },
    ));
    s.push_str(&format!("overall    {}\n", mark(report.passed)));

    let mut failures = String::new();
    if !report.passed {
        if !report.constants.passed {
            failures.push_str(&tagged("constants", &[], jval(&report.constants)?));
            failures.push('\n');
        }
        for i in &spectrum_failures {
            failures.push_str(&tagged(
                "spectrum",
                &[("index", serde_json::json!(i))],
                jval(&report.spectrum[*i])?,
            ));
            failures.push('\n');
        }
        if !report.basin.passed {
            failures.push_str(&tagged("basin", &[], jval(&report.basin)?));
            failures.push('\n');
        }
        if !report.sampler.passed {
            failures.push_str(&tagged("sampler", &[], jval(&report.sampler)?));
            failures.push('\n');
        }
        if !report.shift.passed {
            failures.push_str(&tagged("shift", &[], jval(&report.shift)?));
            failures.push('\n');
        }
        for r in &report.sequence {
            if !r.passed {
                failures.push_str(&tagged("sequence", &[], jval(r)?));
                failures.push('\n');
            }
        }
        if !control_ok {
            failures.push_str(&tagged("control", &[], jval(&report.control)?));
            failures.push('\n');
        }
    }
    Ok(TheoryOutcome {
        passed: report.passed,
        summary: s,
        failures,
    })
}

/// Run the full verification suite, write the JSONL report to `out`, and
/// return the rendered outcome.
pub fn run_theory(seed: u64, out: &Path) -> Result<TheoryOutcome> {
    let report = theory::full_suite(seed)?;
    let lines = report_lines(&report)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
    }
    let mut body = lines.join("\n");
    body.push('\n');
    std::fs::write(out, body).map_err(|e| CliError::io(out, e))?;
    summarize_report(&report)
}
