use std::io::{Read, Write};

use thiserror::Error;

use super::{BenchRecord, FitRow, RowKind};

/// Records CSV header. The first fifteen columns follow the record's core
/// fields; the rest are bookkeeping.
pub const RECORD_COLUMNS: [&str; 22] = [
    "run_id",
    "d",
    "h",
    "N",
    "m",
    "n",
    "p",
    "t_compute",
    "t_comm",
    "t_ws",
    "throughput",
    "error",
    "dt_max",
    "alpha",
    "tT_over_T",
    "bytes_per_step",
    "max_message_bytes",
    "steps",
    "residual",
    "t_ws_std",
    "status",
    "kind",
];

pub const FIT_COLUMNS: [&str; 6] = [
    "fit",
    "estimate",
    "half_width",
    "expected",
    "residual",
    "points",
];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected header: {0}")]
    Header(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    Field {
        row: usize,
        column: &'static str,
        value: String,
    },
}

/// 17 significant digits, enough to round-trip any `f64`.
fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn into_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

pub fn write_records_csv<W: Write>(out: W, records: &[BenchRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_COLUMNS).map_err(into_io)?;
    for r in records {
        w.write_record([
            r.run_id.clone(),
            r.d.to_string(),
            float(r.h),
            r.n_nodes.to_string(),
            r.m.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            float(r.t_compute),
            float(r.t_comm),
            float(r.t_ws),
            float(r.throughput),
            float(r.error),
            float(r.dt_max),
            float(r.alpha),
            float(r.t_t_over_t),
            float(r.bytes_per_step),
            float(r.max_message_bytes),
            r.steps.to_string(),
            float(r.residual),
            float(r.t_ws_std),
            r.status.clone(),
            r.kind.as_str().to_string(),
        ])
        .map_err(into_io)?;
    }
    w.flush()
}

pub fn write_fits_csv<W: Write>(out: W, fits: &[FitRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIT_COLUMNS).map_err(into_io)?;
    for f in fits {
        w.write_record([
            f.name.clone(),
            float(f.estimate),
            float(f.half_width),
            float(f.expected),
            float(f.residual),
            f.points.to_string(),
        ])
        .map_err(into_io)?;
    }
    w.flush()
}

struct Row<'a> {
    index: usize,
    columns: &'a [&'static str],
    rec: csv::StringRecord,
}

impl Row<'_> {
    fn get<T: std::str::FromStr>(&self, col: usize) -> Result<T, CsvError> {
        let raw = self.rec.get(col).unwrap_or("");
        raw.parse().map_err(|_| CsvError::Field {
            row: self.index,
            column: self.columns[col],
            value: raw.into(),
        })
    }

    fn text(&self, col: usize) -> String {
        self.rec.get(col).unwrap_or("").to_string()
    }
}

fn rows<'a, R: Read>(input: R, columns: &'a [&'static str]) -> Result<Vec<Row<'a>>, CsvError> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(columns.iter().copied()) {
        return Err(CsvError::Header(
            header.iter().collect::<Vec<_>>().join(","),
        ));
    }
    rd.records()
        .enumerate()
        .map(|(i, rec)| {
            Ok(Row {
                index: i + 1,
                columns,
                rec: rec?,
            })
        })
        .collect()
}

pub fn parse_records_csv<R: Read>(input: R) -> Result<Vec<BenchRecord>, CsvError> {
    rows(input, &RECORD_COLUMNS)?
        .into_iter()
        .map(|r| {
            let kind = match r.rec.get(21) {
                Some("mean") => RowKind::Mean,
                Some("rep") => RowKind::Rep,
                other => {
                    return Err(CsvError::Field {
                        row: r.index,
                        column: "kind",
                        value: other.unwrap_or("").into(),
                    })
                }
            };
            Ok(BenchRecord {
                run_id: r.text(0),
                d: r.get(1)?,
                h: r.get(2)?,
                n_nodes: r.get(3)?,
                m: r.get(4)?,
                n: r.get(5)?,
                p: r.get(6)?,
                t_compute: r.get(7)?,
                t_comm: r.get(8)?,
                t_ws: r.get(9)?,
                throughput: r.get(10)?,
                error: r.get(11)?,
                dt_max: r.get(12)?,
                alpha: r.get(13)?,
                t_t_over_t: r.get(14)?,
                bytes_per_step: r.get(15)?,
                max_message_bytes: r.get(16)?,
                steps: r.get(17)?,
                residual: r.get(18)?,
                t_ws_std: r.get(19)?,
                status: r.text(20),
                kind,
            })
        })
        .collect()
}

pub fn parse_fits_csv<R: Read>(input: R) -> Result<Vec<FitRow>, CsvError> {
    rows(input, &FIT_COLUMNS)?
        .into_iter()
        .map(|r| {
            Ok(FitRow {
                name: r.text(0),
                estimate: r.get(1)?,
                half_width: r.get(2)?,
                expected: r.get(3)?,
                residual: r.get(4)?,
                points: r.get(5)?,
            })
        })
        .collect()
}
