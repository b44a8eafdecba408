//! File formats: Matrix Market matrices, plain vector and sequence files,
//! weight specifications, and run histories as JSON or CSV.
//!
//! Vector files hold whitespace-separated entries; a complex entry is
//! written `re,im` without spaces. Sequence files hold one vector per line.
//! In both, blank lines and lines starting with `#` or `%` are skipped.
//!
//! Floats are written in shortest round-trip form, so a vector written and
//! read back is bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::extrap::{xi_from_gamma, ExtrapolationRecord, RunHistory, RunStatus};
use crate::harness::FixedPointProblem;
use crate::operator::{LinearMap, SparseMatrix};
use crate::wspace::{CMatrix, CVector, WeightOperator, C64};

pub const HISTORY_FORMAT: &str = "vextrap-history";
pub const HISTORY_VERSION: u32 = 1;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn parse_err(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, column, message: message.into() }
}

/// Whitespace-separated tokens of one line with their 1-based columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn is_skipped(line: &str, comment: &[char]) -> bool {
    let t = line.trim_start();
    t.is_empty() || t.starts_with(comment)
}

/// Writes `x` in the shortest form that parses back to the same bits.
fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

fn fmt_entry(z: C64) -> String {
    if z.im == 0.0 && z.im.is_sign_positive() {
        fmt_f64(z.re)
    } else {
        format!("{},{}", fmt_f64(z.re), fmt_f64(z.im))
    }
}

struct Cursor<'a> {
    path: &'a Path,
    line: usize,
}

impl Cursor<'_> {
    fn float(&self, column: usize, tok: &str) -> Result<f64> {
        tok.parse::<f64>()
            .map_err(|_| parse_err(self.path, self.line, column, format!("expected a number, found `{tok}`")))
    }

    fn entry(&self, column: usize, tok: &str) -> Result<C64> {
        match tok.split_once(',') {
            Some((re, im)) => Ok(C64::new(self.float(column, re)?, self.float(column + re.len() + 1, im)?)),
            None => Ok(C64::new(self.float(column, tok)?, 0.0)),
        }
    }

    fn index(&self, column: usize, tok: &str, bound: usize) -> Result<usize> {
        let i: usize = tok
            .parse()
            .map_err(|_| parse_err(self.path, self.line, column, format!("expected an index, found `{tok}`")))?;
        if i == 0 || i > bound {
            return Err(parse_err(self.path, self.line, column, format!("index {i} outside 1..={bound}")));
        }
        Ok(i - 1)
    }
}

fn parse_row(path: &Path, line_no: usize, line: &str) -> Result<CVector> {
    let cur = Cursor { path, line: line_no };
    let entries = tokens(line).into_iter().map(|(c, t)| cur.entry(c, t)).collect::<Result<Vec<_>>>()?;
    Ok(CVector::from_vec(entries))
}

/// A vector file: every entry of every non-comment line, in order.
pub fn parse_vector(text: &str, path: &Path) -> Result<CVector> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if is_skipped(line, &['#', '%']) {
            continue;
        }
        entries.extend(parse_row(path, i + 1, line)?.iter().copied());
    }
    if entries.is_empty() {
        return Err(parse_err(path, 1, 1, "no entries"));
    }
    Ok(CVector::from_vec(entries))
}

pub fn read_vector(path: &Path) -> Result<CVector> {
    parse_vector(&read_text(path)?, path)
}

/// One entry per line.
pub fn format_vector(v: &CVector) -> String {
    let mut out = String::new();
    for z in v.iter() {
        out.push_str(&fmt_entry(*z));
        out.push('\n');
    }
    out
}

pub fn write_vector(path: &Path, v: &CVector) -> Result<()> {
    write_text(path, &format_vector(v))
}

/// A sequence file: one vector per non-comment line, all the same length.
pub fn parse_sequence(text: &str, path: &Path) -> Result<Vec<CVector>> {
    let mut rows: Vec<CVector> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if is_skipped(line, &['#', '%']) {
            continue;
        }
        let row = parse_row(path, i + 1, line)?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    i + 1,
                    1,
                    format!("row has {} entries, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, 1, "no vectors"));
    }
    Ok(rows)
}

pub fn read_sequence(path: &Path) -> Result<Vec<CVector>> {
    parse_sequence(&read_text(path)?, path)
}

pub fn format_sequence(xs: &[CVector]) -> String {
    let mut out = String::new();
    for x in xs {
        let row: Vec<String> = x.iter().map(|z| fmt_entry(*z)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_sequence(path: &Path, xs: &[CVector]) -> Result<()> {
    write_text(path, &format_sequence(xs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Complex,
    Integer,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    Hermitian,
    Skew,
}

impl Symmetry {
    fn mirror(self, z: C64) -> C64 {
        match self {
            Symmetry::General | Symmetry::Symmetric => z,
            Symmetry::Hermitian => z.conj(),
            Symmetry::Skew => -z,
        }
    }
}

/// Matrix Market `array` or `coordinate` data with real, integer, complex or
/// pattern entries and any of the four symmetry qualifiers. Coordinate data
/// becomes a sparse matrix with explicit zeros kept; array data is dense.
pub fn parse_matrix_market(text: &str, path: &Path) -> Result<LinearMap> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, 1, "empty file"))?;
    let head = tokens(header);
    let words: Vec<String> = head.iter().map(|(_, t)| t.to_ascii_lowercase()).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(parse_err(path, 1, 1, "expected `%%MatrixMarket matrix <format> <field> <symmetry>`"));
    }
    let coordinate = match words[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(parse_err(path, 1, head[2].0, format!("unknown format `{other}`"))),
    };
    let field = match words[3].as_str() {
        "real" | "double" => Field::Real,
        "complex" => Field::Complex,
        "integer" => Field::Integer,
        "pattern" if coordinate => Field::Pattern,
        other => return Err(parse_err(path, 1, head[3].0, format!("unsupported field `{other}`"))),
    };
    let symmetry = match words[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "hermitian" if field == Field::Complex => Symmetry::Hermitian,
        "skew-symmetric" => Symmetry::Skew,
        other => return Err(parse_err(path, 1, head[4].0, format!("unsupported symmetry `{other}`"))),
    };

    let mut data = lines.filter(|(_, l)| !is_skipped(l, &['%']));
    let (size_idx, size_line) = data.next().ok_or_else(|| parse_err(path, 2, 1, "missing size line"))?;
    let cur = Cursor { path, line: size_idx + 1 };
    let size = tokens(size_line);
    let expected = if coordinate { 3 } else { 2 };
    if size.len() != expected {
        return Err(parse_err(path, size_idx + 1, 1, format!("size line needs {expected} integers")));
    }
    let dims: Vec<usize> = size
        .iter()
        .map(|&(c, t)| t.parse().map_err(|_| parse_err(path, cur.line, c, format!("expected an integer, found `{t}`"))))
        .collect::<Result<_>>()?;
    let (nrows, ncols) = (dims[0], dims[1]);
    if symmetry != Symmetry::General && nrows != ncols {
        return Err(parse_err(path, cur.line, 1, "symmetric storage needs a square matrix"));
    }
    let per_value = if field == Field::Complex { 2 } else if field == Field::Pattern { 0 } else { 1 };

    let value = |cur: &Cursor<'_>, toks: &[(usize, &str)]| -> Result<C64> {
        match field {
            Field::Pattern => Ok(C64::new(1.0, 0.0)),
            Field::Complex => Ok(C64::new(cur.float(toks[0].0, toks[0].1)?, cur.float(toks[1].0, toks[1].1)?)),
            Field::Real => Ok(C64::new(cur.float(toks[0].0, toks[0].1)?, 0.0)),
            Field::Integer => {
                let v: i64 = toks[0].1.parse().map_err(|_| {
                    parse_err(cur.path, cur.line, toks[0].0, format!("expected an integer, found `{}`", toks[0].1))
                })?;
                Ok(C64::new(v as f64, 0.0))
            }
        }
    };

    if coordinate {
        let nnz = dims[2];
        let mut trip = Vec::with_capacity(nnz);
        let mut seen = 0;
        for (idx, line) in data {
            let cur = Cursor { path, line: idx + 1 };
            let toks = tokens(line);
            if toks.len() != 2 + per_value {
                return Err(parse_err(path, cur.line, 1, format!("expected {} fields", 2 + per_value)));
            }
            if seen == nnz {
                return Err(parse_err(path, cur.line, 1, format!("more than {nnz} entries")));
            }
            let i = cur.index(toks[0].0, toks[0].1, nrows)?;
            let j = cur.index(toks[1].0, toks[1].1, ncols)?;
            let v = value(&cur, &toks[2..])?;
            if symmetry != Symmetry::General && i < j {
                return Err(parse_err(path, cur.line, toks[0].0, "symmetric storage keeps the lower triangle only"));
            }
            trip.push((i, j, v));
            if symmetry != Symmetry::General && i != j {
                trip.push((j, i, symmetry.mirror(v)));
            }
            seen += 1;
        }
        if seen != nnz {
            return Err(parse_err(path, text.lines().count(), 1, format!("expected {nnz} entries, found {seen}")));
        }
        return Ok(LinearMap::Sparse(SparseMatrix::from_triplets(nrows, ncols, &trip)));
    }

    // Array data is column major; symmetric variants list the lower
    // triangle (strictly lower for skew) column by column.
    let mut slots = Vec::new();
    for j in 0..ncols {
        let first = match symmetry {
            Symmetry::General => 0,
            Symmetry::Skew => j + 1,
            _ => j,
        };
        for i in first..nrows {
            slots.push((i, j));
        }
    }
    let mut m = CMatrix::zeros(nrows, ncols);
    let mut filled = 0;
    for (idx, line) in data {
        let cur = Cursor { path, line: idx + 1 };
        let toks = tokens(line);
        if toks.len() != per_value {
            return Err(parse_err(path, cur.line, 1, format!("expected {per_value} fields")));
        }
        let &(i, j) = slots
            .get(filled)
            .ok_or_else(|| parse_err(path, cur.line, 1, format!("more than {} values", slots.len())))?;
        let v = value(&cur, &toks)?;
        m[(i, j)] = v;
        if symmetry != Symmetry::General && i != j {
            m[(j, i)] = symmetry.mirror(v);
        }
        filled += 1;
    }
    if filled != slots.len() {
        return Err(parse_err(path, text.lines().count(), 1, format!("expected {} values, found {filled}", slots.len())));
    }
    Ok(LinearMap::Dense(m))
}

pub fn read_matrix_market(path: &Path) -> Result<LinearMap> {
    parse_matrix_market(&read_text(path)?, path)
}

/// General array format; `real` when every imaginary part is zero.
pub fn format_matrix_market(m: &CMatrix) -> String {
    let complex = m.iter().any(|z| z.im != 0.0);
    let mut out = String::new();
    let field = if complex { "complex" } else { "real" };
    let _ = writeln!(out, "%%MatrixMarket matrix array {field} general");
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            if complex {
                let _ = writeln!(out, "{} {}", fmt_f64(z.re), fmt_f64(z.im));
            } else {
                let _ = writeln!(out, "{}", fmt_f64(z.re));
            }
        }
    }
    out
}

pub fn write_matrix_market(path: &Path, m: &CMatrix) -> Result<()> {
    write_text(path, &format_matrix_market(m))
}

/// `identity`, `diag:<file>` or `dense:<file>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightSpec {
    Identity,
    Diagonal(PathBuf),
    Dense(PathBuf),
}

impl std::str::FromStr for WeightSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once(':') {
            None if s == "identity" => Ok(WeightSpec::Identity),
            Some(("diag", p)) if !p.is_empty() => Ok(WeightSpec::Diagonal(p.into())),
            Some(("dense", p)) if !p.is_empty() => Ok(WeightSpec::Dense(p.into())),
            _ => Err(format!("expected identity, diag:<file> or dense:<file>, found `{s}`")),
        }
    }
}

impl WeightSpec {
    /// Load and validate a weight of dimension `dim`.
    pub fn load(&self, dim: usize) -> Result<WeightOperator> {
        match self {
            WeightSpec::Identity => WeightOperator::identity(dim),
            WeightSpec::Diagonal(path) => {
                let v = read_vector(path)?;
                check_dim(dim, v.len())?;
                if let Some(i) = v.iter().position(|z| z.im != 0.0) {
                    return Err(parse_err(path, i + 1, 1, "diagonal weights must be real"));
                }
                WeightOperator::diagonal(v.iter().map(|z| z.re).collect())
            }
            WeightSpec::Dense(path) => {
                let m = read_matrix_market(path)?.to_dense();
                check_dim(dim, m.nrows())?;
                check_dim(dim, m.ncols())?;
                WeightOperator::dense(m)
            }
        }
    }
}

/// `x_0` for a linear problem: `zero` or a vector file.
pub fn load_linear_problem(t_path: &Path, d_path: &Path, x0: Option<&Path>) -> Result<FixedPointProblem> {
    let t = read_matrix_market(t_path)?;
    let d = read_vector(d_path)?;
    let x0 = match x0 {
        Some(p) => read_vector(p)?,
        None => CVector::zeros(d.len()),
    };
    FixedPointProblem::linear(t, d, x0)
}

/// `[re, im]`.
type Pair = [f64; 2];

fn pairs(v: &CVector) -> Vec<Pair> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn from_pairs(p: &[Pair]) -> CVector {
    CVector::from_iterator(p.len(), p.iter().map(|&[re, im]| C64::new(re, im)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordFile {
    k: usize,
    mpe_exists: bool,
    terminal: bool,
    phi_mpe: Option<f64>,
    phi_rre: f64,
    alpha: Pair,
    pivot: f64,
    lambda: f64,
    c: Vec<Pair>,
    gamma_mpe: Option<Vec<Pair>>,
    gamma_rre: Vec<Pair>,
    s_mpe: Option<Vec<Pair>>,
    s_rre: Vec<Pair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HistoryFile {
    format: String,
    version: u32,
    dimension: usize,
    status: RunStatus,
    x0: Vec<Pair>,
    records: Vec<RecordFile>,
}

/// Pretty-printed JSON with full vectors. Field order is fixed, so equal
/// histories give identical bytes.
pub fn history_to_json(h: &RunHistory) -> Result<String> {
    let file = HistoryFile {
        format: HISTORY_FORMAT.into(),
        version: HISTORY_VERSION,
        dimension: h.dim,
        status: h.status,
        x0: pairs(&h.x0),
        records: h
            .records
            .iter()
            .map(|r| RecordFile {
                k: r.k,
                mpe_exists: r.mpe_exists,
                terminal: r.terminal,
                phi_mpe: r.phi_mpe,
                phi_rre: r.phi_rre,
                alpha: [r.alpha.re, r.alpha.im],
                pivot: r.pivot,
                lambda: r.lambda,
                c: pairs(&r.c),
                gamma_mpe: r.gamma_mpe.as_ref().map(pairs),
                gamma_rre: pairs(&r.gamma_rre),
                s_mpe: r.s_mpe.as_ref().map(pairs),
                s_rre: pairs(&r.s_rre),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

/// Inverse of [`history_to_json`]. Factors and difference vectors are not
/// persisted, so the result carries neither; `eta` vectors come back empty.
pub fn history_from_json(text: &str) -> Result<RunHistory> {
    let file: HistoryFile = serde_json::from_str(text)?;
    if file.format != HISTORY_FORMAT {
        return Err(Error::InvalidArgument(format!("not a history file (format `{}`)", file.format)));
    }
    let x0 = from_pairs(&file.x0);
    check_dim(file.dimension, x0.len())?;
    let mut records = Vec::with_capacity(file.records.len());
    for r in file.records {
        let gamma_rre = from_pairs(&r.gamma_rre);
        let gamma_mpe = r.gamma_mpe.as_deref().map(from_pairs);
        let s_rre = from_pairs(&r.s_rre);
        let s_mpe = r.s_mpe.as_deref().map(from_pairs);
        check_dim(file.dimension, s_rre.len())?;
        if let Some(s) = &s_mpe {
            check_dim(file.dimension, s.len())?;
        }
        check_dim(r.k + 1, gamma_rre.len())?;
        records.push(ExtrapolationRecord {
            k: r.k,
            mpe_exists: r.mpe_exists,
            terminal: r.terminal,
            c: from_pairs(&r.c),
            alpha: C64::new(r.alpha[0], r.alpha[1]),
            pivot: r.pivot,
            lambda: r.lambda,
            xi_mpe: gamma_mpe.as_ref().filter(|_| s_mpe.is_some()).map(xi_from_gamma),
            eta_mpe: s_mpe.as_ref().map(|_| CVector::zeros(0)),
            xi_rre: xi_from_gamma(&gamma_rre),
            eta_rre: CVector::zeros(0),
            gamma_mpe,
            gamma_rre,
            phi_mpe: r.phi_mpe,
            phi_rre: r.phi_rre,
            s_mpe,
            s_rre,
        });
    }
    Ok(RunHistory { dim: file.dimension, x0, records, status: file.status, factors: None, differences: None })
}

pub fn save_history(path: &Path, h: &RunHistory) -> Result<()> {
    write_text(path, &history_to_json(h)?)
}

pub fn load_history(path: &Path) -> Result<RunHistory> {
    history_from_json(&read_text(path)?)
}

/// `k,phi_mpe,phi_rre`, with `phi_mpe` empty where MPE does not exist.
pub fn history_to_csv(h: &RunHistory) -> String {
    let mut out = String::from("k,phi_mpe,phi_rre\n");
    for r in &h.records {
        let mpe = r.phi_mpe.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", r.k, mpe, fmt_f64(r.phi_rre));
    }
    out
}
