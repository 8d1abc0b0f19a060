//! Result files: a CSV table and its JSON mirror, both carrying a manifest
//! with the full effective configuration.
//!
//! CSV layout: a `# schema_version=N manifest=<json>` comment line, the
//! header row, then one row per result. Floats use Rust's shortest
//! round-trip formatting; absent values are empty cells.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ConfigDocument;
use crate::sim::{DisturbanceReport, QberTally, RunSummary, SweepRow};

/// Bumped whenever a column is added, removed or reinterpreted.
pub const SCHEMA_VERSION: u32 = 1;

/// Columns of run and sweep result tables.
pub const RESULT_COLUMNS: [&str; 17] = [
    "variable",
    "value",
    "frames",
    "seed",
    "visibility",
    "e_b",
    "r_sift",
    "r",
    "inconclusive_fraction",
    "e_b_uncorrected",
    "r_uncorrected",
    "se_e_b",
    "se_r",
    "se_e_b_uncorrected",
    "se_r_uncorrected",
    "flipped_windows",
    "error",
];

/// Columns of the disturbance experiment table.
pub const DISTURBANCE_COLUMNS: [&str; 6] = [
    "case",
    "segment_start_frame",
    "segment_end_frame",
    "sifted",
    "errors",
    "qber",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: ConfigDocument,
}

impl Manifest {
    pub fn new(command: &str, config: ConfigDocument) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: "tfqkd".into(),
            version: crate::VERSION.into(),
            command: command.into(),
            seed: config.seed.unwrap_or_default(),
            config,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest is plain data")
    }
}

/// A result table: fixed columns, rows of JSON scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub manifest: Manifest,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

fn float(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

fn opt_float(v: Option<f64>) -> Value {
    v.map_or(Value::Null, float)
}

/// One row of a run or sweep table.
pub fn summary_row(variable: &str, value: Option<f64>, s: &RunSummary) -> Vec<Value> {
    vec![
        variable.into(),
        opt_float(value),
        s.frames.into(),
        s.seed.into(),
        opt_float(s.visibility),
        opt_float(s.e_b),
        float(s.r_sift),
        float(s.r),
        float(s.inconclusive_fraction),
        opt_float(s.e_b_uncorrected),
        float(s.r_uncorrected),
        float(s.se_e_b),
        float(s.se_r),
        float(s.se_e_b_uncorrected),
        float(s.se_r_uncorrected),
        (s.flipped_windows as u64).into(),
        Value::Null,
    ]
}

fn error_row(variable: &str, value: f64, frames: u64, seed: u64, error: &str) -> Vec<Value> {
    let mut row = vec![Value::Null; RESULT_COLUMNS.len()];
    row[0] = variable.into();
    row[1] = float(value);
    row[2] = frames.into();
    row[3] = seed.into();
    row[RESULT_COLUMNS.len() - 1] = error.into();
    row
}

pub fn run_table(manifest: Manifest, summary: &RunSummary) -> ResultTable {
    ResultTable {
        manifest,
        columns: RESULT_COLUMNS.map(String::from).to_vec(),
        rows: vec![summary_row("none", None, summary)],
    }
}

pub fn sweep_table(manifest: Manifest, variable: &str, rows: &[SweepRow]) -> ResultTable {
    ResultTable {
        manifest,
        columns: RESULT_COLUMNS.map(String::from).to_vec(),
        rows: rows
            .iter()
            .map(|r| match &r.result {
                Ok(s) => summary_row(variable, Some(r.value), s),
                Err(e) => error_row(variable, r.value, r.frames, r.seed, e),
            })
            .collect(),
    }
}

pub fn disturbance_table(manifest: Manifest, report: &DisturbanceReport) -> ResultTable {
    let (start, end) = report.segment;
    let tally_row = |case: &str, t: &QberTally| {
        vec![
            case.into(),
            start.into(),
            end.into(),
            t.sifted.into(),
            t.errors.into(),
            opt_float(t.qber()),
        ]
    };
    let mut rows = vec![
        tally_row("baseline", &report.baseline),
        tally_row("segment_uncorrected", &report.segment_uncorrected),
        tally_row("segment_corrected", &report.segment_corrected),
        tally_row("overall_uncorrected", &report.overall_uncorrected),
        tally_row("overall_corrected", &report.overall_corrected),
    ];
    rows.push(vec![
        "expected_overall_uncorrected".into(),
        start.into(),
        end.into(),
        Value::Null,
        Value::Null,
        opt_float(report.expected_uncorrected_qber),
    ]);
    ResultTable {
        manifest,
        columns: DISTURBANCE_COLUMNS.map(String::from).to_vec(),
        rows,
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) => match (n.as_u64(), n.as_i64(), n.as_f64()) {
            (Some(u), _, _) => u.to_string(),
            (None, Some(i), _) => i.to_string(),
            (_, _, Some(f)) => format!("{f}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

impl ResultTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let manifest = serde_json::to_string(&self.manifest).map_err(io::Error::other)?;
        writeln!(
            out,
            "# schema_version={} manifest={manifest}",
            self.manifest.schema_version
        )?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(cell))?;
        }
        w.flush()
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> io::Result<()> {
        serde_json::to_writer_pretty(&mut out, self).map_err(io::Error::other)?;
        writeln!(out)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 output")
    }

    /// Column index by name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Manifest, header and raw string cells of a result CSV.
pub type CsvContents = (Manifest, Vec<String>, Vec<Vec<String>>);

/// Reads back the cells of a CSV written by [`ResultTable::write_csv`].
pub fn read_csv(text: &str) -> Result<CsvContents, String> {
    let (first, rest) = text.split_once('\n').ok_or("missing manifest line")?;
    let json = first
        .strip_prefix("# schema_version=")
        .and_then(|s| s.split_once(" manifest="))
        .map(|(_, json)| json)
        .ok_or("first line is not a manifest comment")?;
    let manifest: Manifest = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let mut reader = csv::Reader::from_reader(rest.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(String::from)
        .collect();
    let rows = reader
        .records()
        .map(|r| {
            r.map(|r| r.iter().map(String::from).collect())
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    Ok((manifest, header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn summary(v: f64) -> RunSummary {
        RunSummary {
            frames: 1000,
            seed: 7,
            visibility: Some(v),
            e_b: Some(0.05),
            r_sift: 1.0 / 3.0,
            r: 1e-300,
            inconclusive_fraction: 0.0,
            e_b_uncorrected: None,
            r_uncorrected: 0.1 + 0.2,
            se_e_b: f64::NAN,
            se_r: 2.5e-7,
            se_e_b_uncorrected: 0.01,
            se_r_uncorrected: 2.0e-7,
            flipped_windows: 3,
        }
    }

    fn manifest() -> Manifest {
        Manifest::new("run", ConfigDocument::default())
    }

    #[test]
    fn csv_layout() {
        let t = run_table(manifest(), &summary(0.9));
        let text = t.to_csv_string();
        let mut lines = text.lines();
        assert!(lines
            .next()
            .unwrap()
            .starts_with("# schema_version=1 manifest={"));
        assert_eq!(lines.next().unwrap(), RESULT_COLUMNS.join(","));
        let (m, header, rows) = read_csv(&text).unwrap();
        assert_eq!(m, manifest());
        assert_eq!(header, RESULT_COLUMNS);
        assert_eq!(rows[0][t.column("e_b_uncorrected").unwrap()], "");
        assert_eq!(rows[0][t.column("se_e_b").unwrap()], "");
        assert_eq!(rows[0][t.column("flipped_windows").unwrap()], "3");
    }

    #[test]
    fn error_rows_keep_the_message() {
        let rows = vec![SweepRow {
            value: 600.0,
            seed: 1,
            frames: 10,
            result: Err("guard, too \"wide\"".into()),
        }];
        let t = sweep_table(manifest(), "guard_ps", &rows);
        let (_, _, cells) = read_csv(&t.to_csv_string()).unwrap();
        assert_eq!(cells[0].last().unwrap(), "guard, too \"wide\"");
    }

    #[test]
    fn json_mirror_round_trips() {
        let t = run_table(manifest(), &summary(0.875));
        let mut buf = Vec::new();
        t.write_json(&mut buf).unwrap();
        let back: ResultTable = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn floats_round_trip_exactly(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            let t = run_table(manifest(), &summary(v));
            let (_, _, rows) = read_csv(&t.to_csv_string()).unwrap();
            let parsed: f64 = rows[0][t.column("visibility").unwrap()].parse().unwrap();
            prop_assert_eq!(parsed.to_bits(), v.to_bits());
        }
    }
}
