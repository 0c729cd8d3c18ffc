use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::AggregateResult;

/// Text of `x` with six significant digits: `3.3` renders as `3.30000`.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000".to_owned();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        sci
    }
}

/// `x` rounded to six significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub variant: String,
    pub metric: String,
    pub mean: Option<f64>,
    pub ci_half_width: Option<f64>,
    pub n: usize,
    pub attained: usize,
}

/// Aggregate results, one row per (variant, metric). Numbers are held at
/// six significant digits so every emitted format carries the same values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResultTable {
    rows: Vec<TableRow>,
}

impl ResultTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[TableRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Adds a row; a second row for the same (variant, metric) is rejected.
    pub fn push(&mut self, mut row: TableRow) -> Result<()> {
        if self.rows.iter().any(|r| r.variant == row.variant && r.metric == row.metric) {
            return Err(Error::Usage(format!(
                "duplicate row for variant `{}`, metric `{}`",
                row.variant, row.metric
            )));
        }
        row.mean = row.mean.map(round_sig6);
        row.ci_half_width = row.ci_half_width.map(round_sig6);
        self.rows.push(row);
        Ok(())
    }

    pub fn push_aggregate(&mut self, variant: &str, metric: &str, agg: &AggregateResult) -> Result<()> {
        self.push(TableRow {
            variant: variant.to_owned(),
            metric: metric.to_owned(),
            mean: agg.mean,
            ci_half_width: agg.half_width,
            n: agg.n,
            attained: agg.attained,
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["variant", "metric", "mean", "ci_half_width", "n", "attained"])
            .map_err(csv_err)?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(format_sig6).unwrap_or_default();
            w.write_record([
                r.variant.clone(),
                r.metric.clone(),
                opt(r.mean),
                opt(r.ci_half_width),
                r.n.to_string(),
                r.attained.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.rows).expect("rows serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rows: Vec<TableRow> = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Ok(Self { rows })
    }
}

/// Writes `table` to `path` as CSV or JSON.
pub fn emit_table(table: &ResultTable, format: TableFormat, path: &Path) -> Result<()> {
    if table.is_empty() {
        return Err(Error::Usage("cannot emit an empty table".into()));
    }
    let text = match format {
        TableFormat::Csv => table.to_csv()?,
        TableFormat::Json => table.to_json(),
    };
    std::fs::write(path, text)?;
    Ok(())
}
