//! Device specs, counter descriptors, latency tables, synthetic benchmark
//! generation, and train/adaptation splits.
//!
//! All tabular data moves through CSV files with canonical formatting
//! (see [`crate::numfmt`]): loading a file and saving it back reproduces
//! the bytes exactly. Latency is milliseconds everywhere; loaders reject
//! non-positive values.
//!
//! File schemas:
//! - `devices.csv`: `name,class,cores,clock_ghz,tdp_w`
//! - `counters.csv`: `device,c0,c1,...,c9`
//! - `latency.csv` / `adaptation.csv`: `device,arch_index,latency_ms`

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::archspace::{CellArchitecture, NUM_ARCHS, NUM_OPS};
use crate::error::{Error, Result};
use crate::lut::OpLatencyTable;
use crate::numfmt;

/// Number of hardware counters per device descriptor.
pub const NUM_COUNTERS: usize = 10;

/// Device class used to structure the synthetic pool and the spec files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceClass {
    Cpu,
    Gpu,
}

impl DeviceClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            DeviceClass::Cpu => "CPU",
            DeviceClass::Gpu => "GPU",
        }
    }

    pub fn parse(s: &str) -> Result<DeviceClass> {
        match s {
            "CPU" => Ok(DeviceClass::Cpu),
            "GPU" => Ok(DeviceClass::Gpu),
            other => Err(Error::Parse(format!(
                "unknown device class '{other}' (expected CPU or GPU)"
            ))),
        }
    }
}

impl fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Publicly available hardware specification of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub class: DeviceClass,
    pub core_count: u32,
    pub max_clock_ghz: f64,
    pub tdp_watts: f64,
}

impl DeviceSpec {
    pub fn new(
        name: impl Into<String>,
        class: DeviceClass,
        core_count: u32,
        max_clock_ghz: f64,
        tdp_watts: f64,
    ) -> Result<DeviceSpec> {
        let name = name.into();
        validate_device_name(&name)?;
        let spec = DeviceSpec {
            name,
            class,
            core_count,
            max_clock_ghz,
            tdp_watts,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.core_count == 0 {
            return Err(Error::Validation(format!(
                "device '{}': core_count must be positive",
                self.name
            )));
        }
        for (field, value) in [
            ("clock_ghz", self.max_clock_ghz),
            ("tdp_w", self.tdp_watts),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Validation(format!(
                    "device '{}': {field} must be strictly positive, got {value}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

fn validate_device_name(name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::Validation("device name must be non-empty".into()));
    }
    if name.chars().any(|c| c == ',' || c == '"' || c.is_control()) {
        return Err(Error::Validation(format!(
            "device name '{name}' contains characters not representable in canonical CSV"
        )));
    }
    Ok(())
}

/// Per-device hardware counter descriptor (cycles, instructions, cache
/// accesses, ...). One vector per device, concatenated onto every sample
/// for that device.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterVector {
    values: [f64; NUM_COUNTERS],
}

impl CounterVector {
    pub fn new(values: [f64; NUM_COUNTERS]) -> Result<CounterVector> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!(
                    "counter c{i} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(CounterVector { values })
    }

    pub fn values(&self) -> &[f64; NUM_COUNTERS] {
        &self.values
    }
}

/// One measured (device, architecture, latency) row.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRecord {
    pub device: String,
    pub arch_index: u32,
    pub latency_ms: f64,
}

/// Map (device, arch_index) -> measured latency in milliseconds.
///
/// Iteration order is sorted by device name, then arch index, which is
/// also the canonical CSV row order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencyTable {
    per_device: BTreeMap<String, BTreeMap<u32, f64>>,
}

impl LatencyTable {
    pub fn new() -> LatencyTable {
        LatencyTable::default()
    }

    pub fn insert(&mut self, device: &str, arch_index: u32, latency_ms: f64) -> Result<()> {
        validate_device_name(device)?;
        if arch_index >= NUM_ARCHS {
            return Err(Error::Validation(format!(
                "arch_index {arch_index} out of range [0,{}]",
                NUM_ARCHS - 1
            )));
        }
        if !(latency_ms.is_finite() && latency_ms > 0.0) {
            return Err(Error::Validation(format!(
                "latency for ('{device}', {arch_index}) must be strictly positive, got {latency_ms}"
            )));
        }
        let entries = self.per_device.entry(device.to_string()).or_default();
        if entries.insert(arch_index, latency_ms).is_some() {
            return Err(Error::Validation(format!(
                "duplicate latency entry for ('{device}', {arch_index})"
            )));
        }
        Ok(())
    }

    pub fn get(&self, device: &str, arch_index: u32) -> Option<f64> {
        self.per_device.get(device)?.get(&arch_index).copied()
    }

    pub fn devices(&self) -> Vec<String> {
        self.per_device.keys().cloned().collect()
    }

    pub fn has_device(&self, device: &str) -> bool {
        self.per_device.contains_key(device)
    }

    /// Architecture indices measured on `device`, ascending.
    pub fn device_archs(&self, device: &str) -> Vec<u32> {
        self.per_device
            .get(device)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }

    /// Architecture indices measured on every one of `devices`, ascending.
    pub fn common_archs(&self, devices: &[String]) -> Vec<u32> {
        let Some((first, rest)) = devices.split_first() else {
            return Vec::new();
        };
        self.device_archs(first)
            .into_iter()
            .filter(|a| rest.iter().all(|d| self.get(d, *a).is_some()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.per_device.values().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.per_device.is_empty()
    }

    /// All rows in canonical order.
    pub fn records(&self) -> impl Iterator<Item = LatencyRecord> + '_ {
        self.per_device.iter().flat_map(|(device, entries)| {
            entries.iter().map(move |(&arch_index, &latency_ms)| LatencyRecord {
                device: device.clone(),
                arch_index,
                latency_ms,
            })
        })
    }
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

const DEVICES_HEADER: [&str; 5] = ["name", "class", "cores", "clock_ghz", "tdp_w"];
const LATENCY_HEADER: [&str; 3] = ["device", "arch_index", "latency_ms"];

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn check_header(path: &Path, reader: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<bool> {
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        // empty file
        return Ok(false);
    }
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Parse(format!(
            "{}: expected header '{}', got '{}'",
            path.display(),
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(true)
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    field: &str,
    raw: &str,
) -> Result<T> {
    raw.parse().map_err(|_| {
        Error::Parse(format!(
            "{} line {line}: cannot parse {field} from '{raw}'",
            path.display()
        ))
    })
}

/// Load device specifications from `devices.csv`.
pub fn load_device_specs(path: impl AsRef<Path>) -> Result<Vec<DeviceSpec>> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    if !check_header(path, &mut reader, &DEVICES_HEADER)? {
        return Ok(Vec::new());
    }
    let mut specs: Vec<DeviceSpec> = Vec::new();
    for row in reader.records() {
        let record = row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        if record.len() != DEVICES_HEADER.len() {
            return Err(Error::Parse(format!(
                "{} line {line}: expected {} fields, got {}",
                path.display(),
                DEVICES_HEADER.len(),
                record.len()
            )));
        }
        let name = record[0].to_string();
        let class = DeviceClass::parse(&record[1])
            .map_err(|e| Error::Parse(format!("{} line {line}: {e}", path.display())))?;
        let cores: u32 = parse_field(path, line, "cores", &record[2])?;
        let clock: f64 = parse_field(path, line, "clock_ghz", &record[3])?;
        let tdp: f64 = parse_field(path, line, "tdp_w", &record[4])?;
        if specs.iter().any(|s| s.name == name) {
            return Err(Error::Validation(format!(
                "{} line {line}: duplicate device name '{name}'",
                path.display()
            )));
        }
        specs.push(DeviceSpec::new(name, class, cores, clock, tdp)?);
    }
    Ok(specs)
}

/// Save device specifications in canonical form.
pub fn save_device_specs(specs: &[DeviceSpec], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str(&DEVICES_HEADER.join(","));
    out.push('\n');
    for s in specs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.name,
            s.class,
            s.core_count,
            numfmt::sig9(s.max_clock_ghz),
            numfmt::sig9(s.tdp_watts)
        ));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Load per-device counter descriptors from `counters.csv`.
pub fn load_counters(path: impl AsRef<Path>) -> Result<BTreeMap<String, CounterVector>> {
    let path = path.as_ref();
    let expected: Vec<String> = std::iter::once("device".to_string())
        .chain((0..NUM_COUNTERS).map(|i| format!("c{i}")))
        .collect();
    let expected_refs: Vec<&str> = expected.iter().map(|s| s.as_str()).collect();
    let mut reader = open_reader(path)?;
    if !check_header(path, &mut reader, &expected_refs)? {
        return Ok(BTreeMap::new());
    }
    let mut counters = BTreeMap::new();
    for row in reader.records() {
        let record = row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        if record.len() != NUM_COUNTERS + 1 {
            return Err(Error::Parse(format!(
                "{} line {line}: expected {} fields, got {}",
                path.display(),
                NUM_COUNTERS + 1,
                record.len()
            )));
        }
        let device = record[0].to_string();
        let mut values = [0.0; NUM_COUNTERS];
        for (i, v) in values.iter_mut().enumerate() {
            let raw = &record[i + 1];
            *v = numfmt::parse_f64(raw).ok_or_else(|| {
                Error::Parse(format!(
                    "{} line {line}: cannot parse c{i} from '{raw}'",
                    path.display()
                ))
            })?;
        }
        if counters
            .insert(device.clone(), CounterVector::new(values)?)
            .is_some()
        {
            return Err(Error::Validation(format!(
                "{} line {line}: duplicate counter row for device '{device}'",
                path.display()
            )));
        }
    }
    Ok(counters)
}

/// Save counter descriptors in canonical form.
pub fn save_counters(
    counters: &BTreeMap<String, CounterVector>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = String::from("device");
    for i in 0..NUM_COUNTERS {
        out.push_str(&format!(",c{i}"));
    }
    out.push('\n');
    for (device, v) in counters {
        out.push_str(device);
        for x in v.values() {
            out.push(',');
            out.push_str(&numfmt::sig9(*x));
        }
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Load a latency table from `latency.csv`.
///
/// When `known_devices` is given, rows naming a device outside that set
/// are a validation error.
pub fn load_latency_table(
    path: impl AsRef<Path>,
    known_devices: Option<&[DeviceSpec]>,
) -> Result<LatencyTable> {
    let path = path.as_ref();
    let mut table = LatencyTable::new();
    for rec in load_latency_records(path)? {
        if let Some(specs) = known_devices {
            if !specs.iter().any(|s| s.name == rec.device) {
                return Err(Error::Validation(format!(
                    "{}: unknown device '{}' (not present in the spec file)",
                    path.display(),
                    rec.device
                )));
            }
        }
        table
            .insert(&rec.device, rec.arch_index, rec.latency_ms)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    }
    Ok(table)
}

/// Load raw latency rows (also used for `adaptation.csv`, which shares
/// the schema). Order preserved; duplicates allowed.
pub fn load_latency_records(path: impl AsRef<Path>) -> Result<Vec<LatencyRecord>> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    if !check_header(path, &mut reader, &LATENCY_HEADER)? {
        return Ok(Vec::new());
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let record = row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        if record.len() != LATENCY_HEADER.len() {
            return Err(Error::Parse(format!(
                "{} line {line}: expected {} fields, got {}",
                path.display(),
                LATENCY_HEADER.len(),
                record.len()
            )));
        }
        let device = record[0].to_string();
        let arch_index: u32 = parse_field(path, line, "arch_index", &record[1])?;
        let raw = &record[2];
        let latency_ms = numfmt::parse_f64(raw).ok_or_else(|| {
            Error::Parse(format!(
                "{} line {line}: cannot parse latency_ms from '{raw}'",
                path.display()
            ))
        })?;
        if !(latency_ms.is_finite() && latency_ms > 0.0) {
            return Err(Error::Validation(format!(
                "{} line {line}: latency_ms must be strictly positive, got {raw}",
                path.display()
            )));
        }
        records.push(LatencyRecord {
            device,
            arch_index,
            latency_ms,
        });
    }
    Ok(records)
}

/// Save a latency table in canonical form (sorted by device, arch).
pub fn save_latency_table(table: &LatencyTable, path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<LatencyRecord> = table.records().collect();
    save_latency_records(&records, path)
}

/// Save latency rows in the given order.
pub fn save_latency_records(records: &[LatencyRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str(&LATENCY_HEADER.join(","));
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{}\n",
            r.device,
            r.arch_index,
            numfmt::sig9(r.latency_ms)
        ));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(bytes)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic benchmark generation
// ---------------------------------------------------------------------------

/// Configuration for the seeded synthetic benchmark generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_devices: usize,
    pub n_archs: usize,
    /// Std-dev of the multiplicative measurement noise (truncated normal).
    pub noise_sigma: f64,
    /// Range the per-device parallelism factor is drawn from; within [0,1).
    pub parallelism_range: (f64, f64),
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 {
            return Err(Error::Validation("n_devices must be at least 1".into()));
        }
        if self.n_archs == 0 || self.n_archs > NUM_ARCHS as usize {
            return Err(Error::Validation(format!(
                "n_archs must be in [1,{NUM_ARCHS}], got {}",
                self.n_archs
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Validation(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        let (lo, hi) = self.parallelism_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(Error::Validation(format!(
                "parallelism_range must satisfy 0 <= lo <= hi < 1, got [{lo},{hi})"
            )));
        }
        Ok(())
    }
}

/// Everything the generator produces: the full bundle a leave-one-device-out
/// run consumes.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub specs: Vec<DeviceSpec>,
    pub counters: BTreeMap<String, CounterVector>,
    /// True generating per-operation cost tables, one per device.
    pub luts: Vec<OpLatencyTable>,
    pub latency: LatencyTable,
}

/// Fixed cost of the `none` operation in generated tables (ms).
pub const NONE_OP_COST_MS: f64 = 1e-3;

/// Class-level per-op base costs in ms (index 0 unused; `none` is fixed).
const CPU_BASE_COST: [f64; NUM_OPS] = [0.0, 0.10, 1.00, 2.60, 0.55];
const GPU_BASE_COST: [f64; NUM_OPS] = [0.0, 0.04, 0.40, 0.95, 0.45];

/// Fixed affine map (cores, clock_ghz, tdp_w, intercept) -> counter value.
const COUNTER_MAP: [[f64; 4]; NUM_COUNTERS] = [
    [3.0e6, 1.2e9, 0.0, 5.0e7],
    [1.0e6, 8.0e8, 0.0, 3.0e7],
    [2.0e4, 0.0, 1.5e5, 1.0e6],
    [5.0e3, 0.0, 4.0e4, 2.0e5],
    [0.0, 2.0e6, 1.0e4, 1.0e5],
    [1.0e2, 5.0e4, 2.0e3, 1.0e4],
    [8.0e5, 0.0, 0.0, 1.0e5],
    [0.0, 3.0e5, 5.0e5, 1.0e6],
    [4.0e4, 1.0e5, 8.0e4, 5.0e5],
    [1.0e3, 1.0e6, 1.0e3, 1.0e4],
];

/// Generate a seeded synthetic benchmark bundle.
///
/// Per device `d`: per-op costs `c_d` are drawn around a class-level base
/// profile scaled so that faster specs mean lower costs; a parallelism
/// factor `rho_d` is drawn from the configured range (CPU-like devices
/// from the lower half, GPU-like from the upper half); the true latency of
/// architecture `a` is
///
/// ```text
/// (sum_e c_d[edge_op(a,e)]) * (1 - rho_d * active(a)/6) * (1 + eta)
/// ```
///
/// with `eta ~ Normal(0, noise_sigma^2)` truncated to (-0.5, 0.5) and
/// `active(a)` the number of non-`none` edges. The layer-wise sum is thus
/// correlated with, but not equal to, the true latency whenever `rho > 0`.
/// Counters are a fixed affine map of (cores, clock, tdp) plus seeded
/// noise, clamped non-negative. Deterministic for a fixed seed.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n_gpu = cfg.n_devices / 2;
    let n_cpu = cfg.n_devices - n_gpu;
    let (rho_lo, rho_hi) = cfg.parallelism_range;
    let rho_mid = 0.5 * (rho_lo + rho_hi);

    let mut specs = Vec::with_capacity(cfg.n_devices);
    let mut luts = Vec::with_capacity(cfg.n_devices);
    let mut rhos = Vec::with_capacity(cfg.n_devices);
    let jitter = Normal::<f64>::new(0.0, 0.10).unwrap();

    for i in 0..cfg.n_devices {
        let is_gpu = i >= n_cpu;
        let (name, class) = if is_gpu {
            (format!("gpu{}", i - n_cpu), DeviceClass::Gpu)
        } else {
            (format!("cpu{i}"), DeviceClass::Cpu)
        };
        let (cores, clock, tdp) = if is_gpu {
            (
                rng.random_range(1536..=8192u32),
                rng.random_range(1.0..2.0),
                rng.random_range(120.0..350.0),
            )
        } else {
            (
                rng.random_range(4..=32u32),
                rng.random_range(2.5..4.5),
                rng.random_range(65.0..250.0),
            )
        };
        // Faster specs -> lower per-op cost, so spec similarity tracks
        // latency-scale similarity.
        let cost_scale = if is_gpu {
            (3072.0 / cores as f64).powf(0.6) * jitter.sample(&mut rng).exp()
        } else {
            (3.5 / clock) * jitter.sample(&mut rng).exp()
        };
        let base = if is_gpu { &GPU_BASE_COST } else { &CPU_BASE_COST };
        let mut cost_ms = [0.0; NUM_OPS];
        cost_ms[0] = NONE_OP_COST_MS;
        for op in 1..NUM_OPS {
            cost_ms[op] = base[op] * cost_scale * jitter.sample(&mut rng).exp();
        }
        let rho = if rho_hi > rho_lo {
            if is_gpu {
                rng.random_range(rho_mid..rho_hi)
            } else {
                rng.random_range(rho_lo..rho_mid)
            }
        } else {
            rho_lo
        };
        specs.push(DeviceSpec::new(name.clone(), class, cores, clock, tdp)?);
        luts.push(OpLatencyTable::new(name, cost_ms)?);
        rhos.push(rho);
    }

    // Counter descriptors.
    let counter_noise = Normal::<f64>::new(0.0, 0.02).unwrap();
    let mut counters = BTreeMap::new();
    for spec in &specs {
        let mut values = [0.0; NUM_COUNTERS];
        for (j, row) in COUNTER_MAP.iter().enumerate() {
            let base = row[0] * spec.core_count as f64
                + row[1] * spec.max_clock_ghz
                + row[2] * spec.tdp_watts
                + row[3];
            let noisy = base * (1.0 + counter_noise.sample(&mut rng));
            values[j] = noisy.max(0.0);
        }
        counters.insert(spec.name.clone(), CounterVector::new(values)?);
    }

    // Architecture sample, shared across all devices.
    let arch_indices: Vec<u32> = if cfg.n_archs == NUM_ARCHS as usize {
        (0..NUM_ARCHS).collect()
    } else {
        let mut picked: Vec<u32> = rand::seq::index::sample(&mut rng, NUM_ARCHS as usize, cfg.n_archs)
            .iter()
            .map(|i| i as u32)
            .collect();
        picked.sort_unstable();
        picked
    };

    let noise = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma).unwrap())
    } else {
        None
    };

    let mut table = LatencyTable::new();
    for ((spec, lut), &rho) in specs.iter().zip(&luts).zip(&rhos) {
        for &arch_index in &arch_indices {
            let arch = CellArchitecture::from_index(arch_index)?;
            let layer_sum = lut.latency_ms(&arch);
            let factor = 1.0 - rho * arch.active_edges() as f64 / 6.0;
            let eta = match &noise {
                Some(dist) => loop {
                    let draw = dist.sample(&mut rng);
                    if draw.abs() < 0.5 {
                        break draw;
                    }
                },
                None => 0.0,
            };
            table.insert(&spec.name, arch_index, layer_sum * factor * (1.0 + eta))?;
        }
    }

    Ok(SynthData {
        specs,
        counters,
        luts,
        latency: table,
    })
}

// ---------------------------------------------------------------------------
// Train / adaptation splits
// ---------------------------------------------------------------------------

/// A leave-one-device-out split for one target device.
#[derive(Debug, Clone)]
pub struct TrainAdaptSplit {
    /// Architecture indices shared by every training device (ascending).
    pub train_archs: Vec<u32>,
    /// One row per (training device, train arch).
    pub train: Vec<LatencyRecord>,
    /// Measured adaptation rows on the target device.
    pub adaptation: Vec<LatencyRecord>,
    /// Target-device architectures held out for evaluation (ascending).
    pub eval_archs: Vec<u32>,
}

/// Split a latency table into training-pool samples and target-device
/// adaptation/evaluation sets.
///
/// The same `n_train_archs` architecture indices are sampled (seeded)
/// across every training device; `k_adapt` architectures are reserved
/// from the target device and the evaluation set is everything else the
/// target has measured.
pub fn split_train_adapt(
    table: &LatencyTable,
    target: &str,
    n_train_archs: usize,
    k_adapt: usize,
    seed: u64,
) -> Result<TrainAdaptSplit> {
    let target_archs = target_arch_set(table, target)?;
    if k_adapt > target_archs.len() {
        return Err(Error::Validation(format!(
            "k_adapt={k_adapt} exceeds the {} architectures measured on '{target}'",
            target_archs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adapt_archs: Vec<u32> = if k_adapt == 0 {
        Vec::new()
    } else {
        let mut picked: Vec<u32> =
            rand::seq::index::sample(&mut rng, target_archs.len(), k_adapt)
                .iter()
                .map(|i| target_archs[i])
                .collect();
        picked.sort_unstable();
        picked
    };
    split_with_adaptation_archs(table, target, n_train_archs, &adapt_archs, seed)
}

/// As [`split_train_adapt`], but with the adaptation architectures chosen
/// by the caller (e.g. stratified reference selection).
pub fn split_with_adaptation_archs(
    table: &LatencyTable,
    target: &str,
    n_train_archs: usize,
    adapt_archs: &[u32],
    seed: u64,
) -> Result<TrainAdaptSplit> {
    let target_archs = target_arch_set(table, target)?;
    for &a in adapt_archs {
        if table.get(target, a).is_none() {
            return Err(Error::Validation(format!(
                "adaptation architecture {a} not measured on target '{target}'"
            )));
        }
    }

    let train_devices: Vec<String> = table
        .devices()
        .into_iter()
        .filter(|d| d != target)
        .collect();
    let candidates = table.common_archs(&train_devices);
    if n_train_archs > candidates.len() {
        return Err(Error::Validation(format!(
            "n_train_archs={n_train_archs} exceeds the {} architectures common to all training devices",
            candidates.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_archs: Vec<u32> = if n_train_archs == candidates.len() {
        candidates
    } else {
        rand::seq::index::sample(&mut rng, candidates.len(), n_train_archs)
            .iter()
            .map(|i| candidates[i])
            .collect()
    };
    train_archs.sort_unstable();

    let mut train = Vec::with_capacity(train_devices.len() * train_archs.len());
    for device in &train_devices {
        for &arch_index in &train_archs {
            train.push(LatencyRecord {
                device: device.clone(),
                arch_index,
                latency_ms: table.get(device, arch_index).unwrap(),
            });
        }
    }

    let adaptation: Vec<LatencyRecord> = adapt_archs
        .iter()
        .map(|&a| LatencyRecord {
            device: target.to_string(),
            arch_index: a,
            latency_ms: table.get(target, a).unwrap(),
        })
        .collect();

    let eval_archs: Vec<u32> = target_archs
        .into_iter()
        .filter(|a| !adapt_archs.contains(a))
        .collect();

    Ok(TrainAdaptSplit {
        train_archs,
        train,
        adaptation,
        eval_archs,
    })
}

fn target_arch_set(table: &LatencyTable, target: &str) -> Result<Vec<u32>> {
    if !table.has_device(target) {
        return Err(Error::Validation(format!(
            "target device '{target}' not present in the latency table"
        )));
    }
    Ok(table.device_archs(target))
}
