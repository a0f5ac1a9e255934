//! CSV and JSON persistence.
//!
//! Every real is written with 17 significant digits, so a write followed by
//! a read reproduces the original bits.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossprod::{Mode, Step, SymMatrix};
use crate::error::{Result, XcanError};
use crate::model::{DataMatrix, FactorModel, LossBreakdown, PenaltyWeights};
use crate::optimizer::{FitConfig, Termination};
use crate::pipeline::{ComponentLimits, Preprocessing};

/// Order of the flattened parameter vector, recorded in every model manifest.
pub const FLATTEN_ORDER: &str = "vec(U) column-major, diag(S), vec(P) column-major, p0";

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_float(path: &Path, field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| XcanError::parse(path, format!("line {line}: `{field}` is not a number")))
}

fn csv_err(path: &Path, e: csv::Error) -> XcanError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => XcanError::io(path, source),
        other => XcanError::parse(path, format!("{other:?}")),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| XcanError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| XcanError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn finish(path: &Path, mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush().map_err(|e| XcanError::io(path, e))
}

/// Labeled data: a header row of variable names, then one row per
/// observation with its label in the first column.
pub fn write_data_csv(path: impl AsRef<Path>, x: &DataMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let header = std::iter::once("label".to_string()).chain(x.col_labels().iter().cloned());
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for (i, label) in x.row_labels().iter().enumerate() {
        let values = x.values().row(i);
        let row = std::iter::once(label.clone()).chain(values.iter().map(|&v| format_float(v)));
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

pub fn read_data_csv(path: impl AsRef<Path>) -> Result<DataMatrix> {
    let path = path.as_ref();
    let mut records = reader(path)?.into_records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_err(path, e))?,
        None => return Err(XcanError::parse(path, "file is empty")),
    };
    if header.len() < 2 {
        return Err(XcanError::parse(
            path,
            "header needs a label column and at least one variable",
        ));
    }
    let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let m = col_labels.len();
    let mut row_labels = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in records.enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = k + 2;
        if rec.len() != m + 1 {
            return Err(XcanError::parse(
                path,
                format!(
                    "line {line}: expected {} fields, found {}",
                    m + 1,
                    rec.len()
                ),
            ));
        }
        row_labels.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            values.push(parse_float(path, field, line)?);
        }
    }
    if row_labels.is_empty() {
        return Err(XcanError::parse(path, "no data rows"));
    }
    let n = row_labels.len();
    DataMatrix::new(
        DMatrix::from_row_slice(n, m, &values),
        row_labels,
        col_labels,
    )
}

/// Headerless matrix of reals, one CSV row per matrix row.
pub fn write_matrix_csv(path: impl AsRef<Path>, a: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    for row in a.row_iter() {
        w.write_record(row.iter().map(|&v| format_float(v)))
            .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in reader(path)?.into_records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|f| parse_float(path, f, k + 1))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(XcanError::parse(
                    path,
                    format!(
                        "line {}: expected {} fields, found {}",
                        k + 1,
                        first.len(),
                        row.len()
                    ),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(XcanError::parse(path, "file is empty"));
    }
    let (n, m) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_row_iterator(n, m, rows.into_iter().flatten()))
}

fn write_vector_csv(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_matrix_csv(path, &DMatrix::from_row_slice(1, v.len(), v.as_slice()))
}

fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let a = read_matrix_csv(path)?;
    if a.nrows() != 1 {
        return Err(XcanError::parse(
            path,
            format!("expected one row, found {}", a.nrows()),
        ));
    }
    Ok(DVector::from_iterator(a.ncols(), a.iter().copied()))
}

/// One label per line; blank lines are skipped.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| XcanError::io(path, e))?;
    let labels: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if labels.is_empty() {
        return Err(XcanError::parse(path, "no labels"));
    }
    Ok(labels)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut text = labels.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| XcanError::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| XcanError::parse(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| XcanError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| XcanError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| XcanError::parse(path, e.to_string()))
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| XcanError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Sidecar written next to a persisted cross-product matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossProductRecord {
    pub kind: Mode,
    pub side: usize,
    /// Last threshold interval applied, if any (`null` bounds are infinite).
    pub threshold: Option<(Option<f64>, Option<f64>)>,
    /// Last floor epsilon applied, if any.
    pub floor_eps: Option<f64>,
    pub history: Vec<Step>,
}

impl CrossProductRecord {
    pub fn of(m: &SymMatrix) -> Self {
        let threshold = m.history().iter().rev().find_map(|s| match s {
            Step::Threshold { lo, hi } => Some((*lo, *hi)),
            _ => None,
        });
        let floor_eps = m.history().iter().rev().find_map(|s| match s {
            Step::Floor { eps } => Some(*eps),
            _ => None,
        });
        CrossProductRecord {
            kind: m.mode(),
            side: m.side(),
            threshold,
            floor_eps,
            history: m.history().to_vec(),
        }
    }
}

/// `xtx.csv` → `xtx.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the matrix as headerless CSV plus its JSON sidecar.
pub fn write_cross_product(path: impl AsRef<Path>, m: &SymMatrix) -> Result<()> {
    let path = path.as_ref();
    write_matrix_csv(path, m.entries())?;
    write_json(sidecar_path(path), &CrossProductRecord::of(m))
}

/// Reads a cross-product CSV. Without a sidecar the matrix is recorded as
/// external input; with one, its kind must equal `mode`.
pub fn read_cross_product(path: impl AsRef<Path>, mode: Mode) -> Result<SymMatrix> {
    let path = path.as_ref();
    let entries = read_matrix_csv(path)?;
    let sidecar = sidecar_path(path);
    if !sidecar.exists() {
        return SymMatrix::from_matrix(entries, mode);
    }
    let rec: CrossProductRecord = read_json(&sidecar)?;
    if rec.kind != mode {
        return Err(XcanError::parse(
            &sidecar,
            format!(
                "holds a {} matrix, expected {}",
                rec.kind.short_name(),
                mode.short_name()
            ),
        ));
    }
    if rec.side != entries.nrows() {
        return Err(XcanError::parse(
            &sidecar,
            format!("records side {}, matrix has {}", rec.side, entries.nrows()),
        ));
    }
    SymMatrix::with_history(entries, mode, rec.history)
}

/// Provenance of the cross-products used by a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossProductProvenance {
    pub xtx: Vec<Step>,
    pub xxt: Vec<Step>,
}

/// Everything about a fitted model besides its factor values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub components: usize,
    pub n_obs: usize,
    pub n_vars: usize,
    pub baseline: bool,
    pub flatten_order: String,
    pub weights: PenaltyWeights,
    pub preprocessing: Preprocessing,
    pub cross_products: CrossProductProvenance,
    pub termination: Option<Termination>,
    pub iterations: Option<usize>,
    pub explained_variance: Option<f64>,
    pub final_loss: Option<LossBreakdown>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record written by every command; enough to re-run it bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, with the resolved seed made explicit.
    pub args: Vec<String>,
    pub inputs: Vec<InputRecord>,
    pub seed: Option<u64>,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<Preprocessing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_products: Option<CrossProductProvenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelRecord>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            inputs: Vec::new(),
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            preprocessing: None,
            cross_products: None,
            fit: None,
            coverage: None,
            model: None,
        }
    }

    /// Hashes `path` and appends it to the inputs.
    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.inputs.push(InputRecord {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Fails if any recorded input has changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let now = sha256_file(&input.path)?;
            if now != input.sha256 {
                return Err(XcanError::invalid(format!(
                    "input {} changed since the run was recorded",
                    input.path.display()
                )));
            }
        }
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `U.csv`, `S.csv`, `P.csv`, optional `p0.csv` and `manifest.json`.
/// The manifest must carry a [`ModelRecord`].
pub fn save_model(
    dir: impl AsRef<Path>,
    model: &FactorModel,
    manifest: &RunManifest,
) -> Result<()> {
    let dir = dir.as_ref();
    if manifest.model.is_none() {
        return Err(XcanError::invalid("model manifest lacks a model record"));
    }
    fs::create_dir_all(dir).map_err(|e| XcanError::io(dir, e))?;
    write_matrix_csv(dir.join("U.csv"), &model.u)?;
    write_vector_csv(&dir.join("S.csv"), &model.s)?;
    write_matrix_csv(dir.join("P.csv"), &model.p)?;
    let p0_path = dir.join("p0.csv");
    match &model.p0 {
        Some(p0) => write_vector_csv(&p0_path, p0)?,
        None if p0_path.exists() => {
            fs::remove_file(&p0_path).map_err(|e| XcanError::io(&p0_path, e))?
        }
        None => {}
    }
    write_json(dir.join(MANIFEST_FILE), manifest)
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<(FactorModel, RunManifest)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: RunManifest = read_json(&manifest_path)?;
    let record = manifest
        .model
        .as_ref()
        .ok_or_else(|| XcanError::parse(&manifest_path, "not a model manifest"))?;
    let u = read_matrix_csv(dir.join("U.csv"))?;
    let s = read_vector_csv(&dir.join("S.csv"))?;
    let p = read_matrix_csv(dir.join("P.csv"))?;
    let p0_path = dir.join("p0.csv");
    let p0 = if record.baseline {
        Some(read_vector_csv(&p0_path)?)
    } else {
        None
    };
    let model = FactorModel::new(u, s, p, p0)?;
    if model.n_obs() != record.n_obs || model.n_vars() != record.n_vars {
        return Err(XcanError::parse(
            &manifest_path,
            "factor shapes disagree with the manifest",
        ));
    }
    Ok((model, manifest))
}

/// Loss trace with columns `iteration,fit,f0,fr,fc,total`.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[LossBreakdown]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["iteration", "fit", "f0", "fr", "fc", "total"])
        .map_err(|e| csv_err(path, e))?;
    for (k, l) in trace.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend([l.fit, l.f0, l.fr, l.fc, l.total].map(format_float));
        w.write_record(rec).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Control-limit report with columns `component,lo,hi,flagged_rows,flagged_labels`.
/// Components are 1-based; flagged rows are 0-based indices joined by `;`.
pub fn write_limits_csv(
    path: impl AsRef<Path>,
    limits: &[ComponentLimits],
    row_labels: &[String],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["component", "lo", "hi", "flagged_rows", "flagged_labels"])
        .map_err(|e| csv_err(path, e))?;
    for l in limits {
        let rows: Vec<String> = l.flagged.iter().map(|i| i.to_string()).collect();
        let labels: Vec<&str> = l.flagged.iter().map(|&i| row_labels[i].as_str()).collect();
        w.write_record([
            (l.component + 1).to_string(),
            format_float(l.lo),
            format_float(l.hi),
            rows.join(";"),
            labels.join(";"),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

pub fn read_limits_csv(path: impl AsRef<Path>) -> Result<Vec<ComponentLimits>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (k, rec) in reader(path)?.into_records().enumerate().skip(1) {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = k + 1;
        if rec.len() < 4 {
            return Err(XcanError::parse(
                path,
                format!("line {line}: expected at least 4 fields"),
            ));
        }
        let component: usize =
            rec[0]
                .parse()
                .ok()
                .filter(|&c: &usize| c >= 1)
                .ok_or_else(|| {
                    XcanError::parse(path, format!("line {line}: bad component `{}`", &rec[0]))
                })?;
        let flagged = rec[3]
            .split(';')
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<usize>().map_err(|_| {
                    XcanError::parse(path, format!("line {line}: bad row index `{f}`"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ComponentLimits {
            component: component - 1,
            lo: parse_float(path, &rec[1], line)?,
            hi: parse_float(path, &rec[2], line)?,
            flagged,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossprod::{epsilon_floor, hard_threshold, ThresholdRule};

    #[test]
    fn awkward_floats_round_trip() {
        for v in [
            0.1,
            -1.0 / 3.0,
            1e-300,
            f64::MIN_POSITIVE,
            5e-324,
            1.7976931348623157e308,
            -0.0,
        ] {
            let back: f64 = format_float(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v}");
        }
    }

    #[test]
    fn data_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = DataMatrix::new(
            DMatrix::from_row_slice(2, 3, &[0.1, -2.5e-17, 3.0, 1.0 / 7.0, 0.0, -9e9]),
            vec!["a".into(), "b, quoted".into()],
            vec!["x".into(), "y".into(), "z".into()],
        )
        .unwrap();
        let path = dir.path().join("x.csv");
        write_data_csv(&path, &x).unwrap();
        assert_eq!(read_data_csv(&path).unwrap(), x);
    }

    #[test]
    fn cross_product_keeps_history() {
        let dir = tempfile::tempdir().unwrap();
        let raw = SymMatrix::from_matrix(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]),
            Mode::Variables,
        )
        .unwrap();
        let rule = ThresholdRule::magnitude(0.5).unwrap();
        let m = epsilon_floor(&hard_threshold(&raw, &rule), 0.01).unwrap();
        let path = dir.path().join("xtx.csv");
        write_cross_product(&path, &m).unwrap();
        let back = read_cross_product(&path, Mode::Variables).unwrap();
        assert_eq!(back, m);
        let rec: CrossProductRecord = read_json(sidecar_path(&path)).unwrap();
        assert_eq!(rec.floor_eps, Some(0.01));
        assert_eq!(rec.threshold, Some((Some(-0.5), Some(0.5))));
        assert!(read_cross_product(&path, Mode::Observations).is_err());
    }

    #[test]
    fn limits_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("limits.csv");
        let limits = vec![
            ComponentLimits {
                component: 0,
                lo: -1.5,
                hi: 2.25,
                flagged: vec![1, 3],
            },
            ComponentLimits {
                component: 1,
                lo: 0.1,
                hi: 0.1,
                flagged: vec![],
            },
        ];
        let labels: Vec<String> = ["a", "b", "c", "d"].map(String::from).to_vec();
        write_limits_csv(&path, &limits, &labels).unwrap();
        assert!(fs::read_to_string(&path).unwrap().contains("b;d"));
        assert_eq!(read_limits_csv(&path).unwrap(), limits);
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1,2\n3\n").unwrap();
        assert!(matches!(
            read_matrix_csv(&path),
            Err(XcanError::Parse { .. })
        ));
    }
}
