//! Per-device layer-wise (lookup-table) latency prediction.
//!
//! An [`OpLatencyTable`] holds one scalar cost per operation; the
//! layer-wise latency of an architecture is the sum of its six edge-op
//! costs. The table serves two roles: a weak standalone baseline
//! predictor, and the relative-latency proxy that virtual-example
//! synthesis is built on.

use std::collections::BTreeMap;
use std::path::Path;

use crate::archspace::{CellArchitecture, Operation, NUM_OPS};
use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::numfmt;

/// Per-operation latency costs for one device, in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct OpLatencyTable {
    pub device: String,
    cost_ms: [f64; NUM_OPS],
}

impl OpLatencyTable {
    pub fn new(device: impl Into<String>, cost_ms: [f64; NUM_OPS]) -> Result<OpLatencyTable> {
        for (op, &c) in cost_ms.iter().enumerate() {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::Validation(format!(
                    "op cost for '{}' must be finite and >= 0, got {c}",
                    Operation::ALL[op].name()
                )));
            }
        }
        Ok(OpLatencyTable {
            device: device.into(),
            cost_ms,
        })
    }

    pub fn cost_ms(&self) -> &[f64; NUM_OPS] {
        &self.cost_ms
    }

    /// Layer-wise latency: the sum of the per-edge operation costs.
    pub fn latency_ms(&self, arch: &CellArchitecture) -> f64 {
        arch.edge_ops()
            .iter()
            .map(|&op| self.cost_ms[op as usize])
            .sum()
    }
}

/// Diagnostics from a least-squares fit.
#[derive(Debug, Clone, Default)]
pub struct LutFitDiagnostics {
    /// Operations whose fitted cost came out negative and was clamped to 0.
    pub clamped_ops: Vec<Operation>,
    /// Root-mean-square residual of the (unclamped) fit.
    pub residual_rmse: f64,
}

/// Fit per-operation costs from (architecture, latency) records of one
/// device by least squares on the op-count design matrix.
pub fn fit_lut(device: &str, records: &[(CellArchitecture, f64)]) -> Result<OpLatencyTable> {
    fit_lut_diag(device, records).map(|(t, _)| t)
}

/// As [`fit_lut`] but also returns fit diagnostics.
pub fn fit_lut_diag(
    device: &str,
    records: &[(CellArchitecture, f64)],
) -> Result<(OpLatencyTable, LutFitDiagnostics)> {
    if records.is_empty() {
        return Err(Error::Validation(
            "cannot fit a lookup table from an empty record set".into(),
        ));
    }
    if records.len() < NUM_OPS {
        return Err(Error::Validation(format!(
            "need at least {NUM_OPS} records to identify {NUM_OPS} op costs, got {}",
            records.len()
        )));
    }

    // Normal equations on the op-count design matrix.
    let mut xtx = [[0.0; NUM_OPS]; NUM_OPS];
    let mut xty = [0.0; NUM_OPS];
    for (arch, latency) in records {
        if !(latency.is_finite() && *latency > 0.0) {
            return Err(Error::Validation(format!(
                "latency must be strictly positive, got {latency}"
            )));
        }
        let counts = arch.op_counts();
        for i in 0..NUM_OPS {
            let ci = counts[i] as f64;
            xty[i] += ci * latency;
            for j in 0..NUM_OPS {
                xtx[i][j] += ci * counts[j] as f64;
            }
        }
    }

    let solution = solve_cholesky(&xtx, &xty)?;

    let mut diag = LutFitDiagnostics::default();
    let mut sq_residual = 0.0;
    for (arch, latency) in records {
        let counts = arch.op_counts();
        let fitted: f64 = (0..NUM_OPS).map(|k| counts[k] as f64 * solution[k]).sum();
        sq_residual += (fitted - latency) * (fitted - latency);
    }
    diag.residual_rmse = (sq_residual / records.len() as f64).sqrt();

    let mut cost_ms = [0.0; NUM_OPS];
    for (op, &c) in solution.iter().enumerate() {
        if c < 0.0 {
            diag.clamped_ops.push(Operation::ALL[op]);
            cost_ms[op] = 0.0;
        } else {
            cost_ms[op] = c;
        }
    }
    Ok((OpLatencyTable::new(device, cost_ms)?, diag))
}

/// Solve the symmetric positive-definite system `xtx * c = xty` by
/// Cholesky factorization. A non-positive pivot at column `j` means op
/// `j`'s count column is linearly dependent on the previous ones (or
/// absent), so the error names that operation.
fn solve_cholesky(xtx: &[[f64; NUM_OPS]; NUM_OPS], xty: &[f64; NUM_OPS]) -> Result<[f64; NUM_OPS]> {
    let max_diag = (0..NUM_OPS).map(|i| xtx[i][i]).fold(0.0, f64::max);
    let tol = 1e-10 * max_diag.max(f64::MIN_POSITIVE);

    let mut chol = [[0.0; NUM_OPS]; NUM_OPS];
    for j in 0..NUM_OPS {
        let mut d = xtx[j][j];
        for k in 0..j {
            d -= chol[j][k] * chol[j][k];
        }
        if d <= tol {
            return Err(Error::Numerical(format!(
                "rank-deficient design matrix: cost of operation '{}' is not identifiable from the given records",
                Operation::ALL[j].name()
            )));
        }
        chol[j][j] = d.sqrt();
        for i in (j + 1)..NUM_OPS {
            let mut v = xtx[i][j];
            for k in 0..j {
                v -= chol[i][k] * chol[j][k];
            }
            chol[i][j] = v / chol[j][j];
        }
    }

    // Forward substitution: L y = xty.
    let mut y = [0.0; NUM_OPS];
    for i in 0..NUM_OPS {
        let mut v = xty[i];
        for k in 0..i {
            v -= chol[i][k] * y[k];
        }
        y[i] = v / chol[i][i];
    }
    // Back substitution: L^T c = y.
    let mut c = [0.0; NUM_OPS];
    for i in (0..NUM_OPS).rev() {
        let mut v = y[i];
        for k in (i + 1)..NUM_OPS {
            v -= chol[k][i] * c[k];
        }
        c[i] = v / chol[i][i];
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// lut.csv I/O: header `device,op_id,cost_ms`, 5 rows per device
// ---------------------------------------------------------------------------

/// Load per-device op cost tables from `lut.csv`.
pub fn load_luts(path: impl AsRef<Path>) -> Result<BTreeMap<String, OpLatencyTable>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let got: Vec<&str> = headers.iter().collect();
        if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
            return Ok(BTreeMap::new());
        }
        if got != ["device", "op_id", "cost_ms"] {
            return Err(Error::Parse(format!(
                "{}: expected header 'device,op_id,cost_ms', got '{}'",
                path.display(),
                got.join(",")
            )));
        }
    }
    let mut partial: BTreeMap<String, [Option<f64>; NUM_OPS]> = BTreeMap::new();
    for row in reader.records() {
        let record = row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(Error::Parse(format!(
                "{} line {line}: expected 3 fields, got {}",
                path.display(),
                record.len()
            )));
        }
        let device = record[0].to_string();
        let op_id: usize = record[1].parse().map_err(|_| {
            Error::Parse(format!(
                "{} line {line}: cannot parse op_id from '{}'",
                path.display(),
                &record[1]
            ))
        })?;
        if op_id >= NUM_OPS {
            return Err(Error::Validation(format!(
                "{} line {line}: op_id {op_id} out of range [0,{}]",
                path.display(),
                NUM_OPS - 1
            )));
        }
        let cost: f64 = numfmt::parse_f64(&record[2]).ok_or_else(|| {
            Error::Parse(format!(
                "{} line {line}: cannot parse cost_ms from '{}'",
                path.display(),
                &record[2]
            ))
        })?;
        let slot = &mut partial.entry(device.clone()).or_default()[op_id];
        if slot.is_some() {
            return Err(Error::Validation(format!(
                "{} line {line}: duplicate cost for ('{device}', op {op_id})",
                path.display()
            )));
        }
        *slot = Some(cost);
    }
    let mut tables = BTreeMap::new();
    for (device, costs) in partial {
        let mut cost_ms = [0.0; NUM_OPS];
        for (op, slot) in costs.iter().enumerate() {
            cost_ms[op] = slot.ok_or_else(|| {
                Error::Validation(format!(
                    "{}: device '{device}' is missing a cost for op {op}",
                    path.display()
                ))
            })?;
        }
        tables.insert(device.clone(), OpLatencyTable::new(device, cost_ms)?);
    }
    Ok(tables)
}

/// Save op cost tables in canonical form (sorted by device, op_id).
pub fn save_luts<'a>(
    tables: impl IntoIterator<Item = &'a OpLatencyTable>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut sorted: Vec<&OpLatencyTable> = tables.into_iter().collect();
    sorted.sort_by(|a, b| a.device.cmp(&b.device));
    let mut out = String::from("device,op_id,cost_ms\n");
    for t in sorted {
        for (op, &c) in t.cost_ms().iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", t.device, op, numfmt::sig9(c)));
        }
    }
    write_atomic(path.as_ref(), out.as_bytes())
}
