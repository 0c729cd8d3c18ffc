//! Experiment specs, result tables, charts and the on-disk result bundle.

mod chart;
mod spec;
mod table;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use chart::{emit_chart, render_chart, ChartSeries, PLOT};
pub use spec::{parse_spec, EmitFlags, ExperimentSpec, Protocol, Variant};
pub use table::{emit_table, format_sig6, round_sig6, ResultTable, TableFormat, TableRow};

use crate::error::{Error, Result};
use crate::harness::{
    aggregate_attainment, median_with_never, relative_threshold, run_suite, sample_efficiency, AggregateResult,
    MetricsTimeline, RunRecord,
};

pub const SPEC_FILE: &str = "spec.json";
pub const TIMELINES_FILE: &str = "timelines.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CHART_FILE: &str = "chart.svg";
pub const META_FILE: &str = "meta.json";

/// Per-run timelines together with the variant names they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineBundle {
    pub variants: Vec<String>,
    pub threshold: f64,
    pub records: Vec<RunRecord>,
}

impl TimelineBundle {
    fn timelines(&self, variant: usize) -> Vec<&MetricsTimeline> {
        self.records
            .iter()
            .filter(|r| r.config_index == variant)
            .filter_map(|r| r.timeline.as_ref())
            .filter(|t| !t.points.is_empty())
            .collect()
    }

    /// Seed-mean curve of every variant that produced at least one timeline.
    pub fn chart_series(&self) -> Vec<ChartSeries> {
        (0..self.variants.len())
            .filter_map(|v| {
                let ts = self.timelines(v);
                (!ts.is_empty()).then(|| ChartSeries::seed_mean(&self.variants[v], &ts))
            })
            .collect()
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.failed()).count()
    }
}

fn aggregate_any(values: &[Option<f64>]) -> AggregateResult {
    aggregate_attainment(values).unwrap_or_else(|_| {
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        AggregateResult {
            mean: (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64),
            half_width: None,
            attained: present.len(),
            n: values.len(),
        }
    })
}

/// Final score, episodes to the `k`-th attainment of the threshold and
/// its median (never-attained runs ranked last) for every variant.
pub fn build_table(bundle: &TimelineBundle, protocol: &Protocol) -> Result<ResultTable> {
    let mut table = ResultTable::new();
    for (v, name) in bundle.variants.iter().enumerate() {
        let ts = bundle.timelines(v);
        let runs = bundle.records.iter().filter(|r| r.config_index == v).count();
        let finals: Vec<Option<f64>> = ts.iter().map(|t| t.final_window_mean(protocol.final_window)).collect();
        table.push_aggregate(name, "final_score", &aggregate_any(&finals))?;
        let eff: Vec<Option<f64>> = ts
            .iter()
            .map(|t| sample_efficiency(t, bundle.threshold, protocol.k).episodes.map(|e| e as f64))
            .collect();
        let agg = aggregate_any(&eff);
        table.push_aggregate(name, "episodes_to_threshold", &agg)?;
        table.push(TableRow {
            variant: name.clone(),
            metric: "median_episodes_to_threshold".into(),
            mean: median_with_never(&eff),
            ci_half_width: None,
            n: agg.n,
            attained: agg.attained,
        })?;
        table.push(TableRow {
            variant: name.clone(),
            metric: "failed_runs".into(),
            mean: Some(bundle.records.iter().filter(|r| r.config_index == v && r.failed()).count() as f64),
            ci_half_width: None,
            n: runs,
            attained: 0,
        })?;
    }
    Ok(table)
}

/// Creates `dir` if needed and confirms files can be written inside it.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"")?;
    std::fs::remove_file(&probe)?;
    Ok(())
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("bundle data serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    name: String,
    seed_offset: u64,
    parallelism: usize,
    runs: usize,
    failed_runs: usize,
    started_unix: u64,
    finished_unix: u64,
    version: String,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub bundle: TimelineBundle,
    pub table: ResultTable,
    pub output_dir: PathBuf,
}

impl ExperimentOutcome {
    pub fn failures(&self) -> usize {
        self.bundle.failures()
    }
}

/// Runs every variant at every seed (shifted by `seed_offset`) and writes
/// the result bundle into `out`. Nothing is written until all runs finish.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path, parallelism: usize, seed_offset: u64) -> Result<ExperimentOutcome> {
    spec.validate()?;
    prepare_output_dir(out)?;
    let started = unix_now();
    let threshold = relative_threshold(&spec.env, spec.protocol.threshold_fraction)?;
    let records = run_suite(&spec.templates(0), &spec.shifted_seeds(seed_offset), parallelism)?;
    let bundle = TimelineBundle {
        variants: spec.variants.iter().map(|v| v.name.clone()).collect(),
        threshold,
        records,
    };
    let table = build_table(&bundle, &spec.protocol)?;

    std::fs::write(out.join(SPEC_FILE), spec.to_json() + "\n")?;
    std::fs::write(out.join(TIMELINES_FILE), to_pretty(&bundle))?;
    if spec.emit.csv {
        emit_table(&table, TableFormat::Csv, &out.join(SUMMARY_CSV))?;
    }
    if spec.emit.json {
        emit_table(&table, TableFormat::Json, &out.join(SUMMARY_JSON))?;
    }
    let series = bundle.chart_series();
    if spec.emit.svg && !series.is_empty() {
        emit_chart(&series, &out.join(CHART_FILE))?;
    }
    let meta = Meta {
        name: spec.name.clone(),
        seed_offset,
        parallelism,
        runs: bundle.records.len(),
        failed_runs: bundle.failures(),
        started_unix: started,
        finished_unix: unix_now(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
    };
    std::fs::write(out.join(META_FILE), to_pretty(&meta))?;
    Ok(ExperimentOutcome {
        bundle,
        table,
        output_dir: out.to_path_buf(),
    })
}

/// Reads a stored timeline bundle.
pub fn load_bundle(dir: &Path) -> Result<TimelineBundle> {
    let text = std::fs::read_to_string(dir.join(TIMELINES_FILE))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Regenerates the chart of a stored result bundle without retraining.
pub fn replot(dir: &Path) -> Result<PathBuf> {
    let bundle = load_bundle(dir)?;
    let path = dir.join(CHART_FILE);
    emit_chart(&bundle.chart_series(), &path)?;
    Ok(path)
}
