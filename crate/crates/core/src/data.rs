//! Primary and auxiliary samples, their stacked joint form, CSV ingestion and
//! pair validation.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::Mode;
use crate::error::{CodaError, Result};

/// The sample with the outcome of interest observed.
#[derive(Clone, Debug)]
pub struct PrimarySample {
    pub x: DMatrix<f64>,
    pub a: Vec<u8>,
    pub m: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// The sample with covariates, treatment and intermediate outcomes only.
#[derive(Clone, Debug)]
pub struct AuxiliarySample {
    pub x: DMatrix<f64>,
    pub a: Vec<u8>,
    pub m: DMatrix<f64>,
}

fn check_lengths(what: &str, x: &DMatrix<f64>, a: &[u8], m: &DMatrix<f64>) -> Result<()> {
    if a.len() != x.nrows() || m.nrows() != x.nrows() {
        return Err(CodaError::invalid(format!(
            "{what} sample: X has {} rows, A has {}, M has {}",
            x.nrows(),
            a.len(),
            m.nrows()
        )));
    }
    Ok(())
}

impl PrimarySample {
    /// Checks row counts only; contents are checked by [`validate_pair`].
    pub fn new(x: DMatrix<f64>, a: Vec<u8>, m: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        check_lengths("primary", &x, &a, &m)?;
        if y.len() != x.nrows() {
            return Err(CodaError::invalid(format!(
                "primary sample: X has {} rows but Y has {}",
                x.nrows(),
                y.len()
            )));
        }
        Ok(PrimarySample { x, a, m, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn r(&self) -> usize {
        self.x.ncols()
    }

    pub fn s(&self) -> usize {
        self.m.ncols()
    }
}

impl AuxiliarySample {
    pub fn new(x: DMatrix<f64>, a: Vec<u8>, m: DMatrix<f64>) -> Result<Self> {
        check_lengths("auxiliary", &x, &a, &m)?;
        Ok(AuxiliarySample { x, a, m })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn r(&self) -> usize {
        self.x.ncols()
    }

    pub fn s(&self) -> usize {
        self.m.ncols()
    }
}

/// Primary rows stacked on top of auxiliary rows.
///
/// The primary-first order is relied upon by the heterogeneous rewards.
#[derive(Clone, Debug)]
pub struct JointSample {
    pub x: DMatrix<f64>,
    pub a: Vec<u8>,
    pub m: DMatrix<f64>,
    pub r: Vec<u8>,
    pub y: Vec<Option<f64>>,
    pub n_e: usize,
}

impl JointSample {
    pub fn stack(e: &PrimarySample, u: &AuxiliarySample) -> Result<Self> {
        if e.r() != u.r() || e.s() != u.s() {
            return Err(CodaError::invalid(format!(
                "cannot stack samples with (r, s) = ({}, {}) and ({}, {})",
                e.r(),
                e.s(),
                u.r(),
                u.s()
            )));
        }
        let (n_e, n_u) = (e.len(), u.len());
        let n = n_e + n_u;
        let x = DMatrix::from_fn(n, e.r(), |i, j| if i < n_e { e.x[(i, j)] } else { u.x[(i - n_e, j)] });
        let m = DMatrix::from_fn(n, e.s(), |i, j| if i < n_e { e.m[(i, j)] } else { u.m[(i - n_e, j)] });
        let a = e.a.iter().chain(&u.a).copied().collect();
        let r = std::iter::repeat_n(1u8, n_e)
            .chain(std::iter::repeat_n(0u8, n_u))
            .collect();
        let y =
            e.y.iter()
                .map(|v| Some(*v))
                .chain(std::iter::repeat_n(None, n_u))
                .collect();
        Ok(JointSample { x, a, m, r, y, n_e })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Two-sample Kolmogorov–Smirnov comparison of one covariate column.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnShift {
    pub column: String,
    pub mean_primary: f64,
    pub mean_auxiliary: f64,
    pub ks_statistic: f64,
    pub ks_critical: f64,
    pub shifted: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub failures: Vec<String>,
    pub columns: Vec<ColumnShift>,
    pub suggested_mode: Mode,
}

/// Level of the per-column KS tests behind the HO/HE suggestion.
pub const KS_LEVEL: f64 = 0.01;

/// Two-sample KS statistic `sup |F_1 - F_2|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at `level`.
pub fn ks_critical(n1: usize, n2: usize, level: f64) -> f64 {
    let c = (-(level / 2.0).ln() / 2.0).sqrt();
    c * ((n1 + n2) as f64 / (n1 as f64 * n2 as f64)).sqrt()
}

fn non_finite(mat: &DMatrix<f64>) -> Option<(usize, usize)> {
    (0..mat.nrows())
        .flat_map(|i| (0..mat.ncols()).map(move |j| (i, j)))
        .find(|&(i, j)| !mat[(i, j)].is_finite())
}

/// Checks the shape and content contracts of a primary/auxiliary pair and
/// suggests HO or HE from per-column covariate shift tests.
pub fn validate_pair(e: &PrimarySample, u: &AuxiliarySample) -> ValidationReport {
    let mut failures = Vec::new();
    if e.is_empty() {
        failures.push("primary sample is empty".to_string());
    }
    if u.is_empty() {
        failures.push("auxiliary sample is empty".to_string());
    }
    if e.r() == 0 || u.r() == 0 {
        failures.push("no baseline covariates".to_string());
    }
    if e.s() == 0 || u.s() == 0 {
        failures.push("no intermediate outcomes".to_string());
    }
    if e.r() != u.r() {
        failures.push(format!(
            "covariate dimension mismatch: primary has {}, auxiliary has {}",
            e.r(),
            u.r()
        ));
    }
    if e.s() != u.s() {
        failures.push(format!(
            "intermediate dimension mismatch: primary has {}, auxiliary has {}",
            e.s(),
            u.s()
        ));
    }
    for (name, a) in [("primary", &e.a), ("auxiliary", &u.a)] {
        if let Some(i) = a.iter().position(|&v| v > 1) {
            failures.push(format!("{name} treatment at row {i} is not binary"));
        }
    }
    for (name, mat) in [
        ("primary X", &e.x),
        ("primary M", &e.m),
        ("auxiliary X", &u.x),
        ("auxiliary M", &u.m),
    ] {
        if let Some((i, j)) = non_finite(mat) {
            failures.push(format!("{name} has a non-finite entry at row {i}, column {j}"));
        }
    }
    if let Some(i) = e.y.iter().position(|v| !v.is_finite()) {
        failures.push(format!("primary Y has a non-finite entry at row {i}"));
    }

    let mut columns = Vec::new();
    if e.r() == u.r() && !e.is_empty() && !u.is_empty() {
        let crit = ks_critical(e.len(), u.len(), KS_LEVEL);
        for j in 0..e.r() {
            let ce: Vec<f64> = e.x.column(j).iter().copied().collect();
            let cu: Vec<f64> = u.x.column(j).iter().copied().collect();
            let stat = ks_statistic(&ce, &cu);
            columns.push(ColumnShift {
                column: format!("x{}", j + 1),
                mean_primary: ce.iter().sum::<f64>() / ce.len() as f64,
                mean_auxiliary: cu.iter().sum::<f64>() / cu.len() as f64,
                ks_statistic: stat,
                ks_critical: crit,
                shifted: stat > crit,
            });
        }
    }
    let suggested_mode = if columns.iter().any(|c| c.shifted) {
        Mode::He
    } else {
        Mode::Ho
    };
    ValidationReport {
        ok: failures.is_empty(),
        failures,
        columns,
        suggested_mode,
    }
}

struct Table {
    x: Vec<f64>,
    a: Vec<u8>,
    m: Vec<f64>,
    y: Vec<f64>,
    rows: usize,
    r: usize,
    s: usize,
}

fn indexed_columns(headers: &csv::StringRecord, prefix: char) -> Vec<(usize, usize)> {
    let mut cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(pos, h)| {
            let h = h.trim();
            let rest = h.strip_prefix(prefix)?;
            rest.parse::<usize>().ok().filter(|k| *k >= 1).map(|k| (k, pos))
        })
        .collect();
    cols.sort();
    cols
}

fn read_table<R: Read>(reader: R, with_y: bool) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CodaError::Csv {
            row: 1,
            column: "header".into(),
            message: e.to_string(),
        })?
        .clone();
    let xs = indexed_columns(&headers, 'x');
    let ms = indexed_columns(&headers, 'm');
    for (name, cols) in [("x", &xs), ("m", &ms)] {
        if cols.is_empty() {
            return Err(CodaError::Csv {
                row: 1,
                column: "header".into(),
                message: format!("no {name}1.. columns"),
            });
        }
        if cols.iter().enumerate().any(|(i, (k, _))| *k != i + 1) {
            return Err(CodaError::Csv {
                row: 1,
                column: "header".into(),
                message: format!("{name} columns must be numbered 1..k without gaps"),
            });
        }
    }
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let a_pos = find("a").ok_or_else(|| CodaError::Csv {
        row: 1,
        column: "header".into(),
        message: "missing treatment column `a`".into(),
    })?;
    let y_pos = if with_y {
        Some(find("y").ok_or_else(|| CodaError::Csv {
            row: 1,
            column: "header".into(),
            message: "missing outcome column `y`".into(),
        })?)
    } else {
        None
    };

    let mut t = Table {
        x: Vec::new(),
        a: Vec::new(),
        m: Vec::new(),
        y: Vec::new(),
        rows: 0,
        r: xs.len(),
        s: ms.len(),
    };
    for (idx, rec) in rdr.records().enumerate() {
        // Header is row 1.
        let row = idx + 2;
        let rec = rec.map_err(|e| CodaError::Csv {
            row,
            column: "-".into(),
            message: e.to_string(),
        })?;
        let num = |pos: usize| -> Result<f64> {
            let raw = rec.get(pos).unwrap_or("");
            raw.parse::<f64>().map_err(|_| CodaError::Csv {
                row,
                column: headers.get(pos).unwrap_or("?").trim().to_string(),
                message: format!("cannot parse `{raw}` as a number"),
            })
        };
        for &(_, pos) in &xs {
            t.x.push(num(pos)?);
        }
        for &(_, pos) in &ms {
            t.m.push(num(pos)?);
        }
        let a = num(a_pos)?;
        if a != 0.0 && a != 1.0 {
            return Err(CodaError::Csv {
                row,
                column: "a".into(),
                message: format!("treatment must be 0 or 1, got {a}"),
            });
        }
        t.a.push(a as u8);
        if let Some(pos) = y_pos {
            t.y.push(num(pos)?);
        }
        t.rows += 1;
    }
    Ok(t)
}

/// Reads a primary sample with columns `x1..xr, a, m1..ms, y`.
pub fn read_primary_csv<R: Read>(reader: R) -> Result<PrimarySample> {
    let t = read_table(reader, true)?;
    PrimarySample::new(
        DMatrix::from_row_slice(t.rows, t.r, &t.x),
        t.a,
        DMatrix::from_row_slice(t.rows, t.s, &t.m),
        DVector::from_vec(t.y),
    )
}

/// Reads an auxiliary sample with columns `x1..xr, a, m1..ms`.
pub fn read_auxiliary_csv<R: Read>(reader: R) -> Result<AuxiliarySample> {
    let t = read_table(reader, false)?;
    AuxiliarySample::new(
        DMatrix::from_row_slice(t.rows, t.r, &t.x),
        t.a,
        DMatrix::from_row_slice(t.rows, t.s, &t.m),
    )
}

pub fn load_primary(path: impl AsRef<Path>) -> Result<PrimarySample> {
    read_primary_csv(std::fs::File::open(path)?)
}

pub fn load_auxiliary(path: impl AsRef<Path>) -> Result<AuxiliarySample> {
    read_auxiliary_csv(std::fs::File::open(path)?)
}

fn header(r: usize, s: usize, with_y: bool) -> Vec<String> {
    let mut h: Vec<String> = (1..=r).map(|j| format!("x{j}")).collect();
    h.push("a".into());
    h.extend((1..=s).map(|k| format!("m{k}")));
    if with_y {
        h.push("y".into());
    }
    h
}

fn write_rows<W: std::io::Write>(
    writer: W,
    x: &DMatrix<f64>,
    a: &[u8],
    m: &DMatrix<f64>,
    y: Option<&DVector<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| CodaError::Io(std::io::Error::other(e));
    w.write_record(header(x.ncols(), m.ncols(), y.is_some())).map_err(io)?;
    for i in 0..x.nrows() {
        let mut rec: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(a[i].to_string());
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        if let Some(y) = y {
            rec.push(y[i].to_string());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_primary_csv<W: std::io::Write>(writer: W, e: &PrimarySample) -> Result<()> {
    write_rows(writer, &e.x, &e.a, &e.m, Some(&e.y))
}

pub fn write_auxiliary_csv<W: std::io::Write>(writer: W, u: &AuxiliarySample) -> Result<()> {
    write_rows(writer, &u.x, &u.a, &u.m, None)
}
