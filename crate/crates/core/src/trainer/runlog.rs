//! Per-iteration training log and evaluation tables as CSV.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::{NavMetrics, TextMetrics};

pub const HEADER: [&str; 17] = [
    "iteration",
    "il",
    "rl",
    "critic",
    "speaker_mle",
    "delta_a",
    "delta_x",
    "delta_a_u",
    "delta_a_cf",
    "delta_x_cf",
    "creator",
    "discriminator",
    "beta",
    "b_f",
    "b_s",
    "eval_sr",
    "eval_bleu4",
];

/// One row; `None` cells are written empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub values: [Option<f64>; 16],
}

impl LogRow {
    pub fn new(iteration: u64) -> Self {
        LogRow {
            iteration,
            values: [None; 16],
        }
    }

    pub fn set(&mut self, column: &str, v: f64) {
        let i = column_index(column).expect("known column") - 1;
        self.values[i] = Some(v);
    }

    pub fn get(&self, column: &str) -> Option<f64> {
        match column_index(column)? {
            0 => Some(self.iteration as f64),
            i => self.values[i - 1],
        }
    }
}

pub fn column_index(name: &str) -> Option<usize> {
    HEADER.iter().position(|&h| h == name)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
}

impl RunLog {
    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    pub fn header_line() -> String {
        HEADER.join(",")
    }

    pub fn row_line(row: &LogRow) -> String {
        let mut s = row.iteration.to_string();
        for v in &row.values {
            s.push(',');
            if let Some(v) = v {
                let _ = write!(s, "{v}");
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = Self::header_line();
        s.push('\n');
        for r in &self.rows {
            s.push_str(&Self::row_line(r));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == Self::header_line() => {}
            _ => return Err(Error::Parse("run log header mismatch".into())),
        }
        let mut log = RunLog::default();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != HEADER.len() {
                return Err(Error::Parse(format!("run log line {}: {} cells", i + 2, cells.len())));
            }
            let mut row = LogRow::new(
                cells[0]
                    .parse()
                    .map_err(|_| Error::Parse(format!("run log line {}: bad iteration", i + 2)))?,
            );
            for (j, c) in cells[1..].iter().enumerate() {
                if !c.is_empty() {
                    row.values[j] = Some(
                        c.parse()
                            .map_err(|_| Error::Parse(format!("run log line {}: bad number `{c}`", i + 2)))?,
                    );
                }
            }
            log.push(row);
        }
        Ok(log)
    }

    /// `(iteration, value)` points of one column, skipping empty cells.
    pub fn series(&self, column: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.get(column).map(|v| (r.iteration as f64, v)))
            .collect()
    }
}

/// One line of a metric table. Rates are stored as fractions and written
/// ×100.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub label: String,
    pub split: String,
    pub iteration: u64,
    pub nav: NavMetrics,
    pub text: TextMetrics,
}

pub const METRIC_HEADER: &str = "label,split,iteration,SR,NE,OR,SPL,Bleu-1,Bleu-4,CIDEr,Rouge";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(METRIC_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.2},{:.3},{:.2},{:.2},{:.4},{:.4},{:.4},{:.4}",
            r.label,
            r.split,
            r.iteration,
            100.0 * r.nav.sr,
            r.nav.ne,
            100.0 * r.nav.or,
            100.0 * r.nav.spl,
            r.text.bleu1,
            r.text.bleu4,
            r.text.cider,
            r.text.rouge
        );
    }
    s
}
