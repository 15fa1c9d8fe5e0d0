//! Aggregation of metrics files into a summary table and SVG bar charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::records::{read_metrics_csv, MetricsRecord};

/// Mean and sample standard deviation of one group; `std` is `None` for a
/// single observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub method: String,
    pub split: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: Option<f64>,
}

pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

/// Final-epoch value of every `(method, seed, split, metric)` series, plus a
/// derived `degradation` metric `epe(split) / epe(clean)` for stereo runs.
pub fn final_values(records: &[MetricsRecord]) -> BTreeMap<(String, String, String), Vec<f64>> {
    let mut last: BTreeMap<(String, String, u64, String, String), (usize, f64)> = BTreeMap::new();
    for r in records {
        let key = (r.run_id.clone(), r.method.clone(), r.seed, r.split.clone(), r.metric.clone());
        let slot = last.entry(key).or_insert((r.epoch, r.value));
        if r.epoch >= slot.0 {
            *slot = (r.epoch, r.value);
        }
    }
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for ((run, method, seed, split, metric), (_, v)) in &last {
        groups.entry((method.clone(), split.clone(), metric.clone())).or_default().push(*v);
        if metric == "epe" && split != "clean" {
            if let Some((_, clean)) = last.get(&(run.clone(), method.clone(), *seed, "clean".into(), "epe".into())) {
                groups
                    .entry((method.clone(), split.clone(), "degradation".into()))
                    .or_default()
                    .push(v / clean);
            }
        }
    }
    groups
}

pub fn aggregate(records: &[MetricsRecord]) -> Vec<Aggregate> {
    final_values(records)
        .into_iter()
        .map(|((method, split, metric), values)| {
            let (mean, std) = mean_std(&values);
            Aggregate { method, split, metric, n: values.len(), mean, std }
        })
        .collect()
}

fn find_metrics(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.file_name() == "metrics.csv")
        .map(|e| e.into_path())
        .collect();
    files.sort();
    files
}

#[derive(Clone, Debug)]
pub struct PlotOutput {
    pub summary: PathBuf,
    pub charts: Vec<PathBuf>,
    pub aggregates: Vec<Aggregate>,
}

/// Reads every `metrics.csv` below `metrics_dir` and writes `summary.csv`
/// plus one chart per study found into `out_dir`.
pub fn emit_plots(metrics_dir: &Path, out_dir: &Path) -> Result<PlotOutput> {
    let files = find_metrics(metrics_dir);
    if files.is_empty() {
        return Err(HarnessError::NoMetrics(metrics_dir.display().to_string()));
    }
    let mut records = Vec::new();
    for f in &files {
        records.extend(read_metrics_csv(f)?);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let aggregates = aggregate(&records);

    let summary = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary).map_err(|e| HarnessError::Csv { path: summary.display().to_string(), reason: e.to_string() })?;
    let csv_err = |e: csv::Error| HarnessError::Csv { path: summary.display().to_string(), reason: e.to_string() };
    w.write_record(["method", "split", "metric", "n", "mean", "std"]).map_err(csv_err)?;
    for a in &aggregates {
        let std = a.std.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([a.method.as_str(), &a.split, &a.metric, &a.n.to_string(), &a.mean.to_string(), &std])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(&summary, e))?;

    let mut charts = Vec::new();
    let studies = [
        ("digit_accuracy.svg", "Top-1 accuracy (%)", "top1", vec!["source_test", "target_test"]),
        ("stereo_degradation.svg", "EPE(shifted) / EPE(clean)", "degradation", vec!["acj", "gray_left", "gray_right", "scp"]),
        ("stereo_d1.svg", "D1 (%)", "d1", vec!["clean", "acj", "gray_left", "gray_right", "scp"]),
    ];
    for (file, title, metric, splits) in studies {
        let rows: Vec<&Aggregate> = aggregates.iter().filter(|a| a.metric == metric && splits.contains(&a.split.as_str())).collect();
        if rows.is_empty() {
            continue;
        }
        let path = out_dir.join(file);
        std::fs::write(&path, bar_chart(title, &splits, &rows)).map_err(|e| HarnessError::io(&path, e))?;
        charts.push(path);
    }
    Ok(PlotOutput { summary, charts, aggregates })
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

/// Grouped bar chart: one group per split, one bar per method, error bars
/// where a standard deviation exists.
pub fn bar_chart(title: &str, splits: &[&str], rows: &[&Aggregate]) -> String {
    let mut methods: Vec<&str> = rows.iter().map(|a| a.method.as_str()).collect();
    methods.sort();
    methods.dedup();
    let groups: Vec<&str> = splits.iter().copied().filter(|s| rows.iter().any(|a| a.split == *s)).collect();
    let top = rows
        .iter()
        .map(|a| a.mean + a.std.unwrap_or(0.0))
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.1;
    let (w, h, left, bottom, plot_h) = (120.0 + 110.0 * groups.len() as f64, 320.0, 60.0, 270.0, 220.0);
    let bar_w = 80.0 / methods.len() as f64;
    let y = |v: f64| bottom - plot_h * v / top;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{title}</text>"#, w / 2.0);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="black"/>"#, w - 10.0);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{bottom}" x2="{left}" y2="{}" stroke="black"/>"#, bottom - plot_h);
    for t in 0..=4 {
        let v = top * t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, left - 4.0, y(v) + 4.0, fmt_tick(v));
    }
    for (gi, g) in groups.iter().enumerate() {
        let gx = left + 20.0 + 110.0 * gi as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{g}</text>"#, gx + 40.0, bottom + 16.0);
        for (mi, m) in methods.iter().enumerate() {
            let Some(a) = rows.iter().find(|a| a.split == *g && a.method == *m) else { continue };
            let x = gx + bar_w * mi as f64;
            let color = PALETTE[mi % PALETTE.len()];
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
                y(a.mean),
                bar_w - 2.0,
                bottom - y(a.mean)
            );
            if let Some(sd) = a.std {
                let cx = x + (bar_w - 2.0) / 2.0;
                let _ = writeln!(
                    s,
                    r#"<line class="errorbar" x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                    y(a.mean + sd),
                    y((a.mean - sd).max(0.0))
                );
            }
        }
    }
    for (mi, m) in methods.iter().enumerate() {
        let ly = 34.0 + 14.0 * mi as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/>"#, w - 100.0, ly - 9.0, PALETTE[mi % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{m}</text>"#, w - 86.0);
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}
