//! Data container, CSV ingestion, environment coding and the row-wise
//! Kronecker product.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, ParseError, Result};

/// Categorical environment labels, one per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentLabels {
    labels: Vec<String>,
    /// Distinct labels in lexicographic order.
    levels: Vec<String>,
}

impl EnvironmentLabels {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut levels = labels.clone();
        levels.sort();
        levels.dedup();
        if levels.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "at least two distinct environments are required, found {}",
                levels.len()
            )));
        }
        Ok(Self { labels, levels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of distinct environments `r`.
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn count(&self, level: &str) -> usize {
        self.labels.iter().filter(|l| *l == level).count()
    }

    /// Row indices whose label equals `level`.
    pub fn rows_of(&self, level: &str) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| (l == level).then_some(i))
            .collect()
    }
}

/// Encode `r` environments as `r - 1` mean-zero columns.
///
/// Column `j` holds `1 - n_j/n` for rows in environment `levels[j]` and
/// `-n_j/n` elsewhere. The lexicographically last environment is the
/// reference and gets no column.
pub fn encode_environments(labels: &EnvironmentLabels) -> Result<DMatrix<f64>> {
    let r = labels.num_levels();
    if r < 2 {
        return Err(Error::InvalidInput("fewer than two environments".into()));
    }
    let n = labels.len();
    let nf = n as f64;
    let mut out = DMatrix::zeros(n, r - 1);
    for (j, level) in labels.levels()[..r - 1].iter().enumerate() {
        let share = labels.count(level) as f64 / nf;
        for (i, l) in labels.labels().iter().enumerate() {
            out[(i, j)] = if l == level { 1.0 - share } else { -share };
        }
    }
    Ok(out)
}

/// Row-wise Kronecker (face-splitting) product.
///
/// For `a` of shape n×p and `b` of shape n×q the output is n×pq with
/// `out[i, jb + q*ja] = a[i, ja] * b[i, jb]`, i.e. each output row is
/// `a_i ⊗ b_i`.
pub fn rowwise_kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::InvalidInput(format!(
            "row-wise Kronecker product needs equal row counts, got {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let (n, p, q) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(n, p * q);
    for ja in 0..p {
        for jb in 0..q {
            let col = ja * q + jb;
            for i in 0..n {
                out[(i, col)] = a[(i, ja)] * b[(i, jb)];
            }
        }
    }
    Ok(out)
}

/// Subtract each column's sample mean.
pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m.clone();
    if n == 0 {
        return out;
    }
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    out
}

fn center_vector(v: &DVector<f64>) -> DVector<f64> {
    let mean = v.mean();
    v.add_scalar(-mean)
}

/// Response, exposures and instruments for `n` observations.
///
/// `e` holds the instrument block used by the estimators: encoded
/// environments or sample-centered numeric instruments.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    e: DMatrix<f64>,
    raw_e: Option<DMatrix<f64>>,
    labels: Option<EnvironmentLabels>,
    response_name: String,
    exposure_names: Vec<String>,
    instrument_names: Vec<String>,
}

impl Dataset {
    /// Build from an instrument block used exactly as given.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, e: DMatrix<f64>) -> Result<Self> {
        let p = x.ncols();
        let q = e.ncols();
        let ds = Self {
            exposure_names: (1..=p).map(|j| format!("x{j}")).collect(),
            instrument_names: (1..=q).map(|j| format!("e{j}")).collect(),
            response_name: "y".into(),
            x,
            y,
            e,
            raw_e: None,
            labels: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Build from numeric instruments, which are sample-centered.
    pub fn from_instruments(x: DMatrix<f64>, y: DVector<f64>, raw_e: DMatrix<f64>) -> Result<Self> {
        let e = center_columns(&raw_e);
        let mut ds = Self::new(x, y, e)?;
        ds.raw_e = Some(raw_e);
        Ok(ds)
    }

    /// Build from categorical environments, coded by [`encode_environments`].
    pub fn from_environments(x: DMatrix<f64>, y: DVector<f64>, labels: EnvironmentLabels) -> Result<Self> {
        if labels.len() != x.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} rows",
                labels.len(),
                x.nrows()
            )));
        }
        let e = encode_environments(&labels)?;
        let mut ds = Self::new(x, y, e)?;
        let levels = labels.levels();
        ds.instrument_names = levels[..levels.len() - 1].iter().map(|l| format!("env={l}")).collect();
        ds.labels = Some(labels);
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 observations, got {n}")));
        }
        if self.x.ncols() < 1 {
            return Err(Error::InvalidInput("need at least one exposure".into()));
        }
        if self.e.ncols() < 1 {
            return Err(Error::InvalidInput("need at least one instrument".into()));
        }
        if self.y.len() != n || self.e.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "row counts differ: X has {n}, Y has {}, E has {}",
                self.y.len(),
                self.e.nrows()
            )));
        }
        let all_finite = self
            .x
            .iter()
            .chain(self.y.iter())
            .chain(self.e.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidInput("data contain NaN or infinite values".into()));
        }
        Ok(())
    }

    pub fn with_names(
        mut self,
        response: impl Into<String>,
        exposures: Vec<String>,
        instruments: Vec<String>,
    ) -> Result<Self> {
        if exposures.len() != self.p() || instruments.len() != self.q() {
            return Err(Error::InvalidInput("name count does not match column count".into()));
        }
        self.response_name = response.into();
        self.exposure_names = exposures;
        self.instrument_names = instruments;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.e.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    /// Instruments before centering, when they were supplied numerically.
    pub fn raw_instruments(&self) -> Option<&DMatrix<f64>> {
        self.raw_e.as_ref()
    }

    pub fn labels(&self) -> Option<&EnvironmentLabels> {
        self.labels.as_ref()
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn exposure_names(&self) -> &[String] {
        &self.exposure_names
    }

    pub fn instrument_names(&self) -> &[String] {
        &self.instrument_names
    }

    /// Copy with X and Y sample-centered as well.
    pub fn center_xy(&self) -> Self {
        let mut out = self.clone();
        out.x = center_columns(&self.x);
        out.y = center_vector(&self.y);
        out
    }

    /// Keep only the listed instrument columns. Environment labels are dropped.
    pub fn select_instruments(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() || cols.iter().any(|&c| c >= self.q()) {
            return Err(Error::InvalidInput(format!(
                "instrument selection {cols:?} out of range for q = {}",
                self.q()
            )));
        }
        let e = self.e.select_columns(cols);
        let mut out = self.clone();
        out.raw_e = self.raw_e.as_ref().map(|r| r.select_columns(cols));
        out.instrument_names = cols.iter().map(|&c| self.instrument_names[c].clone()).collect();
        out.e = e;
        out.labels = None;
        Ok(out)
    }

    /// Exposures and response restricted to the given rows.
    pub fn subset_xy(&self, rows: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        (self.x.select_rows(rows), self.y.select_rows(rows))
    }

    /// Write as CSV: response, exposures, then environment labels or raw instruments.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut header = vec![self.response_name.clone()];
        header.extend(self.exposure_names.iter().cloned());
        match &self.labels {
            Some(_) => header.push("env".into()),
            None => header.extend(self.instrument_names.iter().cloned()),
        }
        w.write_record(&header).map_err(io)?;
        let inst = self.raw_e.as_ref().unwrap_or(&self.e);
        for i in 0..self.n() {
            let mut rec = vec![self.y[i].to_string()];
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            match &self.labels {
                Some(l) => rec.push(l.labels()[i].clone()),
                None => rec.extend(inst.row(i).iter().map(|v| v.to_string())),
            }
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How instruments are given in a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub enum InstrumentColumns {
    /// One categorical column of environment labels.
    Environment(String),
    /// One or more numeric instrument columns.
    Numeric(Vec<String>),
}

/// Column roles for [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRoles {
    pub response: String,
    pub exposures: Vec<String>,
    pub instruments: InstrumentColumns,
}

pub fn load_csv(path: impl AsRef<Path>, roles: &ColumnRoles) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_csv(file, roles)
}

/// Parse CSV from any reader. See [`load_csv`].
pub fn read_csv<R: Read>(reader: R, roles: &ColumnRoles) -> Result<Dataset> {
    if roles.exposures.is_empty() {
        return Err(Error::InvalidInput("at least one exposure column is required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| malformed(1, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(ParseError::Empty.into());
    }
    let index: BTreeMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let find = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| ParseError::MissingColumn(name.to_string()).into())
    };
    let y_col = find(&roles.response)?;
    let x_cols = roles.exposures.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let (env_col, inst_cols) = match &roles.instruments {
        InstrumentColumns::Environment(c) => (Some(find(c)?), Vec::new()),
        InstrumentColumns::Numeric(cs) => {
            if cs.is_empty() {
                return Err(Error::InvalidInput("at least one instrument column is required".into()));
            }
            (None, cs.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?)
        }
    };

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut inst = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = row as u64 + 2;
        let rec = rec.map_err(|e| malformed(line, e))?;
        let cell = |col: usize| -> Result<f64> { parse_cell(&rec, col, &header[col], line) };
        y.push(cell(y_col)?);
        for &c in &x_cols {
            x.push(cell(c)?);
        }
        for &c in &inst_cols {
            inst.push(cell(c)?);
        }
        if let Some(c) = env_col {
            let v = rec.get(c).ok_or_else(|| ParseError::Malformed {
                line,
                message: format!("missing field `{}`", header[c]),
            })?;
            labels.push(v.trim().to_string());
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(ParseError::Empty.into());
    }
    let xm = DMatrix::from_row_slice(n, x_cols.len(), &x);
    let yv = DVector::from_vec(y);
    let ds = match &roles.instruments {
        InstrumentColumns::Environment(_) => {
            Dataset::from_environments(xm, yv, EnvironmentLabels::new(labels)?)?
        }
        InstrumentColumns::Numeric(cs) => {
            let em = DMatrix::from_row_slice(n, inst_cols.len(), &inst);
            let ds = Dataset::from_instruments(xm, yv, em)?;
            let names = cs.clone();
            ds.with_names(roles.response.clone(), roles.exposures.clone(), names)?
        }
    };
    match &roles.instruments {
        InstrumentColumns::Environment(_) => {
            let names = ds.instrument_names().to_vec();
            ds.with_names(roles.response.clone(), roles.exposures.clone(), names)
        }
        InstrumentColumns::Numeric(_) => Ok(ds),
    }
}

fn malformed(line: u64, e: csv::Error) -> Error {
    ParseError::Malformed {
        line,
        message: e.to_string(),
    }
    .into()
}

fn parse_cell(rec: &csv::StringRecord, col: usize, name: &str, line: u64) -> Result<f64> {
    let raw = rec.get(col).ok_or_else(|| ParseError::Malformed {
        line,
        message: format!("missing field `{name}`"),
    })?;
    let s = raw.trim();
    let v: f64 = s.parse().map_err(|_| ParseError::NonNumeric {
        line,
        column: name.to_string(),
        value: s.to_string(),
    })?;
    if !v.is_finite() {
        return Err(ParseError::NonFinite {
            line,
            column: name.to_string(),
            value: s.to_string(),
        }
        .into());
    }
    Ok(v)
}
