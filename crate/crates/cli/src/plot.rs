//! Per-task line charts rendered as deterministic SVG.
//!
//! Rows are filtered to one split and to pure-task records (`alpha = 1`),
//! grouped by `run_id` (or `seed`), and aggregated per task: the line is
//! the mean over the group's values, the shaded band is plus/minus one
//! standard error (sample standard deviation over square root of n),
//! omitted when a task has a single value.  Identical inputs render
//! byte-identical SVG: grouping uses ordered maps and floats are printed
//! at fixed precision.

use std::path::Path;

use plastlab_core::metrics::MetricsRecord;

use crate::emit;
use crate::{CliError, Result};

/// Metric columns a chart can draw.
pub const METRIC_COLUMNS: &[&str] = &[
    "accuracy",
    "bleu2",
    "loss",
    "max_sigma",
    "dormant_frac",
    "weight_l2",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    RunId,
    Seed,
}

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub metric: String,
    pub split: String,
    pub group_by: GroupBy,
}

/// One aggregated point: task number, mean, and the standard-error
/// half-width when more than one value contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub task: usize,
    pub mean: f64,
    pub se: Option<f64>,
}

fn metric_value(r: &MetricsRecord, metric: &str) -> Result<Option<f64>> {
    Ok(match metric {
        "accuracy" => Some(r.accuracy),
        "bleu2" => r.bleu2,
        "loss" => Some(r.loss),
        "max_sigma" => Some(r.max_sigma),
        "dormant_frac" => Some(r.dormant_frac),
        "weight_l2" => Some(r.weight_l2),
        other => {
            return Err(CliError::Invalid(format!(
                "unknown metric `{other}`; available columns: {}",
                METRIC_COLUMNS.join(", ")
            )))
        }
    })
}

/// Aggregate records into per-group, per-task mean and standard error.
/// Only pure-task rows (`alpha = 1`) of the requested split contribute;
/// rows whose metric is absent (e.g. BLEU outside sequence test splits)
/// are skipped.
pub fn summarize(
    records: &[MetricsRecord],
    spec: &PlotSpec,
) -> Result<std::collections::BTreeMap<String, Vec<PlotPoint>>> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records {
        if r.split != spec.split || r.alpha != 1.0 {
            continue;
        }
        let Some(v) = metric_value(r, &spec.metric)? else {
            continue;
        };
        let key = match spec.group_by {
            GroupBy::RunId => r.run_id.clone(),
            GroupBy::Seed => format!("seed {}", r.seed),
        };
        groups.entry(key).or_default().entry(r.task).or_default().push(v);
    }
    if groups.is_empty() {
        return Err(CliError::Invalid(format!(
            "no `{}` rows with metric `{}` at pure-task stages",
            spec.split, spec.metric
        )));
    }
    let mut out = BTreeMap::new();
    for (key, tasks) in groups {
        let points = tasks
            .into_iter()
            .map(|(task, vs)| {
                let n = vs.len() as f64;
                let mean = vs.iter().sum::<f64>() / n;
                let se = if vs.len() > 1 {
                    let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / (n - 1.0);
                    Some(var.sqrt() / n.sqrt())
                } else {
                    None
                };
                PlotPoint { task, mean, se }
            })
            .collect();
        out.insert(key, points);
    }
    Ok(out)
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

const W: f64 = 840.0;
const H: f64 = 480.0;
const ML: f64 = 66.0; // left margin
const MR: f64 = 18.0;
const MT: f64 = 42.0;
const MB: f64 = 50.0;

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render records to an SVG chart string.
pub fn render(records: &[MetricsRecord], spec: &PlotSpec) -> Result<String> {
    let groups = summarize(records, spec)?;

    let mut t_min = usize::MAX;
    let mut t_max = 0usize;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for points in groups.values() {
        for p in points {
            t_min = t_min.min(p.task);
            t_max = t_max.max(p.task);
            let half = p.se.unwrap_or(0.0);
            y_min = y_min.min(p.mean - half);
            y_max = y_max.max(p.mean + half);
        }
    }
    if t_min == t_max {
        // A single task still needs a nonzero x span.
        t_max = t_min + 1;
    }
    let pad = if y_max > y_min {
        0.05 * (y_max - y_min)
    } else {
        0.5 * y_max.abs().max(1.0)
    };
    y_min -= pad;
    y_max += pad;

    let x_of = |task: f64| ML + (task - t_min as f64) / (t_max - t_min) as f64 * (W - ML - MR);
    let y_of = |v: f64| H - MB - (v - y_min) / (y_max - y_min) * (H - MT - MB);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-size=\"14\" fill=\"#222\">{} ({} split, per task)</text>\n",
        ML,
        esc(&spec.metric),
        esc(&spec.split)
    ));

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#444\"/>\n",
        fmt(ML),
        fmt(H - MB),
        fmt(W - MR),
        fmt(H - MB)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#444\"/>\n",
        fmt(ML),
        fmt(MT),
        fmt(ML),
        fmt(H - MB)
    ));

    // Y ticks (5 intervals).
    for i in 0..=5 {
        let v = y_min + (y_max - y_min) * i as f64 / 5.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            fmt(ML),
            fmt(y),
            fmt(W - MR),
            fmt(y)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"#444\">{}</text>\n",
            fmt(ML - 6.0),
            fmt(y + 4.0),
            fmt(v)
        ));
    }
    // X ticks at integer tasks, at most 11 labels.
    let span = t_max - t_min;
    let step = (span / 10).max(1);
    let mut t = t_min;
    while t <= t_max {
        let x = x_of(t as f64);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#444\"/>\n",
            fmt(x),
            fmt(H - MB),
            fmt(x),
            fmt(H - MB + 4.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#444\">{t}</text>\n",
            fmt(x),
            fmt(H - MB + 18.0)
        ));
        t += step;
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#222\">task</text>\n",
        fmt((ML + W - MR) / 2.0),
        fmt(H - 10.0)
    ));

    // Bands first (under the lines), then lines, then the legend.
    for (gi, (_key, points)) in groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let banded: Vec<&PlotPoint> = points.iter().filter(|p| p.se.is_some()).collect();
        if banded.len() >= 2 {
            let mut d = String::from("M");
            for p in &banded {
                d.push_str(&format!(
                    " {} {}",
                    fmt(x_of(p.task as f64)),
                    fmt(y_of(p.mean + p.se.unwrap()))
                ));
            }
            for p in banded.iter().rev() {
                d.push_str(&format!(
                    " L {} {}",
                    fmt(x_of(p.task as f64)),
                    fmt(y_of(p.mean - p.se.unwrap()))
                ));
            }
            d.push_str(" Z");
            svg.push_str(&format!(
                "<path class=\"band\" d=\"{d}\" fill=\"{color}\" fill-opacity=\"0.18\" \
                 stroke=\"none\"/>\n"
            ));
        }
    }
    for (gi, (key, points)) in groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let pts: Vec<String> = points
            .iter()
            .map(|p| format!("{},{}", fmt(x_of(p.task as f64)), fmt(y_of(p.mean))))
            .collect();
        svg.push_str(&format!(
            "<polyline class=\"line\" points=\"{}\" fill=\"none\" stroke=\"{color}\" \
             stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
        let ly = MT + 14.0 * gi as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" \
             stroke-width=\"3\"/>\n",
            fmt(W - MR - 150.0),
            fmt(ly),
            fmt(W - MR - 130.0),
            fmt(ly)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"#222\">{}</text>\n",
            fmt(W - MR - 124.0),
            fmt(ly + 4.0),
            esc(key)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Read one or more CSV result files, render the chart, write it to
/// `out`.
pub fn plot_files(inputs: &[std::path::PathBuf], spec: &PlotSpec, out: &Path) -> Result<()> {
    let mut records = Vec::new();
    for path in inputs {
        records.extend(emit::read_csv(path)?);
    }
    let svg = render(&records, spec)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
    }
    std::fs::write(out, svg).map_err(|e| CliError::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(run: &str, seed: u64, task: usize, alpha: f64, split: &str, acc: f64) -> MetricsRecord {
        MetricsRecord {
            run_id: run.into(),
            seed,
            stage: task - 1,
            task,
            alpha,
            split: split.into(),
            accuracy: acc,
            bleu2: if split == "test" { Some(acc / 2.0) } else { None },
            loss: 1.0 - acc,
            max_sigma: 2.0,
            dormant_frac: 0.1,
            weight_l2: 30.0,
            steps: task as u64 * 100,
            wall_ms: 5,
        }
    }

    fn spec(metric: &str, split: &str) -> PlotSpec {
        PlotSpec {
            metric: metric.into(),
            split: split.into(),
            group_by: GroupBy::RunId,
        }
    }

    #[test]
    fn unknown_metric_lists_available_columns() {
        let recs = vec![record("a", 1, 1, 1.0, "train", 0.9)];
        let err = render(&recs, &spec("wibble", "train")).unwrap_err().to_string();
        for col in METRIC_COLUMNS {
            assert!(err.contains(col), "{err}");
        }
    }

    #[test]
    fn five_seeds_band_half_width_is_std_over_sqrt_five() {
        let values = [0.90, 0.92, 0.88, 0.95, 0.85];
        let recs: Vec<MetricsRecord> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| record("a", i as u64 + 1, 3, 1.0, "train", v))
            .collect();
        let groups = summarize(&recs, &spec("accuracy", "train")).unwrap();
        let points = &groups["a"];
        assert_eq!(points.len(), 1);
        let mean = values.iter().sum::<f64>() / 5.0;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0).sqrt();
        assert!((points[0].mean - mean).abs() < 1e-15);
        let se = points[0].se.unwrap();
        assert!((se - std / 5.0_f64.sqrt()).abs() < 1e-15, "{se}");
    }

    #[test]
    fn single_seed_has_no_band() {
        let recs: Vec<MetricsRecord> = (1..=4)
            .map(|t| record("solo", 1, t, 1.0, "train", 0.9 - 0.1 * t as f64))
            .collect();
        let groups = summarize(&recs, &spec("accuracy", "train")).unwrap();
        assert!(groups["solo"].iter().all(|p| p.se.is_none()));
        let svg = render(&recs, &spec("accuracy", "train")).unwrap();
        assert!(!svg.contains("class=\"band\""));
        assert!(svg.contains("class=\"line\""));
    }

    #[test]
    fn fractional_stages_and_other_splits_are_excluded() {
        let recs = vec![
            record("a", 1, 2, 1.0, "train", 0.9),
            record("a", 1, 2, 0.5, "train", 0.1), // fractional: ignored
            record("a", 1, 2, 1.0, "test", 0.2),  // other split: ignored
        ];
        let groups = summarize(&recs, &spec("accuracy", "train")).unwrap();
        assert_eq!(groups["a"], vec![PlotPoint { task: 2, mean: 0.9, se: None }]);
    }

    #[test]
    fn bleu_rows_without_scores_are_skipped() {
        let recs = vec![
            record("a", 1, 1, 1.0, "train", 0.9), // bleu2 = None on train
        ];
        let err = render(&recs, &spec("bleu2", "train")).unwrap_err().to_string();
        assert!(err.contains("no"), "{err}");
        let recs = vec![record("a", 1, 1, 1.0, "test", 0.9)];
        let groups = summarize(&recs, &spec("bleu2", "test")).unwrap();
        assert_eq!(groups["a"][0].mean, 0.45);
    }

    #[test]
    fn rendering_is_deterministic_and_one_line_per_group() {
        let mut recs = Vec::new();
        for run in ["alpha", "beta", "gamma"] {
            for seed in 1..=3 {
                for task in 1..=5 {
                    recs.push(record(run, seed, task, 1.0, "train", 0.5 + 0.01 * seed as f64));
                }
            }
        }
        let svg1 = render(&recs, &spec("accuracy", "train")).unwrap();
        let svg2 = render(&recs, &spec("accuracy", "train")).unwrap();
        assert_eq!(svg1, svg2);
        assert_eq!(svg1.matches("class=\"line\"").count(), 3);
        assert_eq!(svg1.matches("class=\"band\"").count(), 3);
        for run in ["alpha", "beta", "gamma"] {
            assert!(svg1.contains(run));
        }
    }

    #[test]
    fn grouping_by_seed_draws_one_line_per_seed() {
        let mut recs = Vec::new();
        for seed in [11u64, 7] {
            for task in 1..=3 {
                recs.push(record("a", seed, task, 1.0, "train", 0.5));
            }
        }
        let groups = summarize(
            &recs,
            &PlotSpec {
                metric: "accuracy".into(),
                split: "train".into(),
                group_by: GroupBy::Seed,
            },
        )
        .unwrap();
        let keys: Vec<&String> = groups.keys().collect();
        assert_eq!(keys, vec!["seed 11", "seed 7"]);
    }
}
