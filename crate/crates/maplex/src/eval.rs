//! Metrics, correlation analyses, and the leave-one-device-out harness.
//!
//! The harness holds one device out as the target, trains each method on
//! the remaining pool (plus the target's few measured adaptation samples
//! and any synthesized virtual examples), and scores predictions on the
//! target's held-out architectures with the ±10% error-bound accuracy.
//! Method ablations share the split and the evaluation set within a
//! fold, so their scores are directly comparable.

use std::collections::BTreeMap;
use std::path::Path;

use crate::archspace::CellArchitecture;
use crate::dataset::{
    split_with_adaptation_archs, write_atomic, CounterVector, DeviceSpec, LatencyRecord,
    LatencyTable, SynthData,
};
use crate::error::{Error, Result};
use crate::lut::{fit_lut, OpLatencyTable};
use crate::numfmt;
use crate::prior::{
    discover_neighborhood_widened, neighborhood_lut_correlation, select_reference_archs_among,
    synthesize_virtual_examples, Neighborhood, NeighborhoodConfig, VirtualExample,
};
use crate::regressor::{forward, train, FeatureVector, TrainConfig, TrainingSample};
use crate::weighting::{
    assign_sample_weights, device_distance, normalize_specs, WeightConfig, WeightMode,
    WeightedRecord,
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Fraction of predictions within `bound` relative error of the truth
/// (boundary inclusive).
pub fn error_bound_accuracy(preds: &[f64], truths: &[f64], bound: f64) -> Result<f64> {
    check_paired(preds, truths)?;
    let hits = preds
        .iter()
        .zip(truths)
        .filter(|(p, t)| (*p - *t).abs() / *t <= bound)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean absolute relative error.
pub fn mean_abs_rel_error(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_paired(preds, truths)?;
    let total: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).abs() / t)
        .sum();
    Ok(total / preds.len() as f64)
}

fn check_paired(preds: &[f64], truths: &[f64]) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::Validation(format!(
            "length mismatch: {} predictions vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Validation("empty prediction set".into()));
    }
    if truths.iter().any(|&t| !(t.is_finite() && t > 0.0)) {
        return Err(Error::Validation(
            "true latencies must be strictly positive".into(),
        ));
    }
    Ok(())
}

/// Product-moment correlation; `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Validation(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Validation("empty series".into()));
    }
    let n = x.len() as f64;
    let mean_x: f64 = x.iter().sum::<f64>() / n;
    let mean_y: f64 = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Ok(None);
    }
    Ok(Some(cov / (var_x.sqrt() * var_y.sqrt())))
}

/// Average ranks (1-based); ties share the mean of their rank range.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j averaged
        let avg = (i + j + 1) as f64 / 2.0;
        for k in i..j {
            ranks[order[k]] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation (Pearson over average-tie ranks); `None`
/// when either series is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Validation(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Validation(
            "rank correlation needs at least 2 points".into(),
        ));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

// ---------------------------------------------------------------------------
// Correlation reports
// ---------------------------------------------------------------------------

/// Symmetric device-by-device Spearman matrix over shared architectures.
#[derive(Debug, Clone, PartialEq)]
pub struct SpearmanMatrix {
    pub devices: Vec<String>,
    /// `values[i][j]` is the correlation between devices i and j; NaN when
    /// undefined (fewer than 2 shared architectures or a constant series).
    pub values: Vec<Vec<f64>>,
}

/// Compute the pairwise latency rank-correlation matrix. Each pair is
/// correlated over the architectures both devices measured; the diagonal
/// is exactly 1.
pub fn spearman_matrix(table: &LatencyTable) -> Result<SpearmanMatrix> {
    let devices = table.devices();
    if devices.is_empty() {
        return Err(Error::Validation("empty latency table".into()));
    }
    let n = devices.len();
    let mut values = vec![vec![f64::NAN; n]; n];
    for i in 0..n {
        values[i][i] = 1.0;
        for j in (i + 1)..n {
            let pair = [devices[i].clone(), devices[j].clone()];
            let common = table.common_archs(&pair);
            let rho = if common.len() < 2 {
                None
            } else {
                let xs: Vec<f64> = common.iter().map(|&a| table.get(&pair[0], a).unwrap()).collect();
                let ys: Vec<f64> = common.iter().map(|&a| table.get(&pair[1], a).unwrap()).collect();
                spearman(&xs, &ys)?
            };
            let v = rho.unwrap_or(f64::NAN);
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(SpearmanMatrix { devices, values })
}

/// Save the matrix: header `device,<dev0>,<dev1>,...`, one row per device.
pub fn save_spearman_matrix(matrix: &SpearmanMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("device");
    for d in &matrix.devices {
        out.push(',');
        out.push_str(d);
    }
    out.push('\n');
    for (i, d) in matrix.devices.iter().enumerate() {
        out.push_str(d);
        for v in &matrix.values[i] {
            out.push(',');
            out.push_str(&numfmt::sig9(*v));
        }
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// One (size, layer-wise correlation) point per neighborhood of at least
/// two members, ready for density plotting. Values delegate to
/// [`neighborhood_lut_correlation`]; undefined correlations appear as NaN.
pub fn neighborhood_correlation_density(
    neighborhoods: &[Neighborhood],
    lut: &OpLatencyTable,
    table: &LatencyTable,
    device: &str,
) -> Result<Vec<(usize, f64)>> {
    let mut rows = Vec::new();
    for nbhd in neighborhoods {
        if nbhd.size() < 2 {
            continue;
        }
        let r = neighborhood_lut_correlation(nbhd, lut, table, device)?;
        rows.push((nbhd.size(), r.unwrap_or(f64::NAN)));
    }
    Ok(rows)
}

/// Save density rows as `device,size,pearson_r`.
pub fn save_density_csv(rows: &[(String, usize, f64)], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("device,size,pearson_r\n");
    for (device, size, r) in rows {
        out.push_str(&format!("{device},{size},{}\n", numfmt::sig9(*r)));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

// ---------------------------------------------------------------------------
// Leave-one-device-out harness
// ---------------------------------------------------------------------------

/// Canonical method names.
pub const METHOD_NAMES: [&str; 4] = ["maple_x", "maple_x1", "maple_baseline", "lut_only"];

/// One method to run inside the harness.
#[derive(Debug, Clone)]
pub struct MethodConfig {
    pub name: String,
    pub use_virtual: bool,
    pub weight_mode: WeightMode,
    pub k_adapt: usize,
    pub neighborhood: NeighborhoodConfig,
}

impl MethodConfig {
    /// Virtual examples + hardware-similarity weighting.
    pub fn maple_x(k_adapt: usize) -> MethodConfig {
        MethodConfig {
            name: "maple_x".into(),
            use_virtual: true,
            weight_mode: WeightMode::Hardware,
            k_adapt,
            neighborhood: NeighborhoodConfig::default(),
        }
    }

    /// Ablation: virtual examples only, uniform pool weights.
    pub fn maple_x1(k_adapt: usize) -> MethodConfig {
        MethodConfig {
            name: "maple_x1".into(),
            use_virtual: true,
            weight_mode: WeightMode::Uniform,
            k_adapt,
            neighborhood: NeighborhoodConfig::default(),
        }
    }

    /// The pre-existing adaptation scheme: measured samples only, flat
    /// emphasis on the target device.
    pub fn maple_baseline(k_adapt: usize) -> MethodConfig {
        MethodConfig {
            name: "maple_baseline".into(),
            use_virtual: false,
            weight_mode: WeightMode::AdaptationEmphasis,
            k_adapt,
            neighborhood: NeighborhoodConfig::default(),
        }
    }

    /// Layer-wise table prediction, no regressor.
    pub fn lut_only() -> MethodConfig {
        MethodConfig {
            name: "lut_only".into(),
            use_virtual: false,
            weight_mode: WeightMode::Uniform,
            k_adapt: 0,
            neighborhood: NeighborhoodConfig::default(),
        }
    }

    /// A non-canonical combination under a free-form label.
    pub fn custom(
        label: impl Into<String>,
        use_virtual: bool,
        weight_mode: WeightMode,
        k_adapt: usize,
    ) -> MethodConfig {
        MethodConfig {
            name: label.into(),
            use_virtual,
            weight_mode,
            k_adapt,
            neighborhood: NeighborhoodConfig::default(),
        }
    }

    pub fn from_name(name: &str, k_adapt: usize) -> Result<MethodConfig> {
        match name {
            "maple_x" => Ok(MethodConfig::maple_x(k_adapt)),
            "maple_x1" => Ok(MethodConfig::maple_x1(k_adapt)),
            "maple_baseline" => Ok(MethodConfig::maple_baseline(k_adapt)),
            "lut_only" => Ok(MethodConfig::lut_only()),
            other => Err(Error::Validation(format!(
                "unknown method '{other}' (expected one of {})",
                METHOD_NAMES.join(", ")
            ))),
        }
    }

    pub fn is_lut_only(&self) -> bool {
        self.name == "lut_only"
    }

    /// Canonical names pin their (use_virtual, weight_mode) combination.
    pub fn validate(&self) -> Result<()> {
        let expect = |cond: bool, what: &str| -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "method '{}' must use {what}",
                    self.name
                )))
            }
        };
        match self.name.as_str() {
            "maple_x" => {
                expect(self.use_virtual, "virtual examples")?;
                expect(self.weight_mode == WeightMode::Hardware, "hardware weighting")
            }
            "maple_x1" => {
                expect(self.use_virtual, "virtual examples")?;
                expect(self.weight_mode == WeightMode::Uniform, "uniform weighting")
            }
            "maple_baseline" => {
                expect(!self.use_virtual, "no virtual examples")?;
                expect(
                    self.weight_mode == WeightMode::AdaptationEmphasis,
                    "adaptation-emphasis weighting",
                )
            }
            "lut_only" => expect(!self.use_virtual, "no virtual examples"),
            _ => Ok(()),
        }
    }
}

/// Where the target device's layer-wise table comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetLutPolicy {
    /// Use the measured per-op costs provided in the bundle.
    Provided,
    /// Fit a table from the nearest training device's training records.
    FitNearest,
}

/// The immutable dataset a harness run consumes.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub specs: Vec<DeviceSpec>,
    pub counters: BTreeMap<String, CounterVector>,
    pub luts: BTreeMap<String, OpLatencyTable>,
    pub latency: LatencyTable,
}

impl From<SynthData> for DataBundle {
    fn from(data: SynthData) -> DataBundle {
        DataBundle {
            specs: data.specs,
            counters: data.counters,
            luts: data
                .luts
                .into_iter()
                .map(|t| (t.device.clone(), t))
                .collect(),
            latency: data.latency,
        }
    }
}

/// Harness options shared across folds and methods.
#[derive(Debug, Clone)]
pub struct LodoOptions {
    pub n_train_archs: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub weight: WeightConfig,
    pub target_lut: TargetLutPolicy,
}

impl LodoOptions {
    pub fn new(n_train_archs: usize, seed: u64) -> LodoOptions {
        LodoOptions {
            n_train_archs,
            seed,
            train: TrainConfig::default(),
            weight: WeightConfig::default(),
            target_lut: TargetLutPolicy::Provided,
        }
    }
}

/// One report row.
#[derive(Debug, Clone, PartialEq)]
pub struct LodoRow {
    pub target_device: String,
    pub method: String,
    pub n_eval: usize,
    pub acc10: f64,
    pub mare: f64,
    pub seed: u64,
}

/// Per-fold bookkeeping (split sizes, neighborhood sizes, drops).
#[derive(Debug, Clone, PartialEq)]
pub struct FoldMeta {
    pub target_device: String,
    pub fold_seed: u64,
    pub n_train_samples: usize,
    pub n_adapt: usize,
    pub n_eval: usize,
    /// Neighborhood sizes per method (virtual-example methods only).
    pub neighborhood_sizes: BTreeMap<String, Vec<usize>>,
    /// Virtual labels dropped for non-positivity, per method.
    pub virtual_dropped: BTreeMap<String, usize>,
}

/// Full harness output.
#[derive(Debug, Clone, PartialEq)]
pub struct LodoReport {
    pub rows: Vec<LodoRow>,
    pub folds: Vec<FoldMeta>,
    pub seed: u64,
    pub n_train_archs: usize,
}

/// Run the leave-one-device-out protocol: every device takes a turn as
/// the target, each method trains on the shared split and is scored on
/// the shared evaluation set. Per-fold randomness is derived as
/// `seed XOR fold_index`, so folds are independent and the whole report
/// is deterministic.
pub fn lodo_run(
    bundle: &DataBundle,
    methods: &[MethodConfig],
    opts: &LodoOptions,
) -> Result<LodoReport> {
    let devices = bundle.latency.devices();
    if devices.len() < 2 {
        return Err(Error::Validation(
            "leave-one-device-out needs at least 2 devices".into(),
        ));
    }
    if methods.is_empty() {
        return Err(Error::Validation("no methods given".into()));
    }
    for m in methods {
        m.validate()?;
    }
    // Methods share the fold's adaptation reservation so the evaluation
    // set is identical across them.
    let ks: Vec<usize> = methods
        .iter()
        .filter(|m| !m.is_lut_only())
        .map(|m| m.k_adapt)
        .collect();
    if ks.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Validation(
            "all regressor-backed methods must share the same k_adapt within one run".into(),
        ));
    }
    let k_fold = ks.first().copied().unwrap_or(0);
    for d in &devices {
        if !bundle.counters.contains_key(d) {
            return Err(Error::Validation(format!(
                "no counter descriptor for device '{d}'"
            )));
        }
        if !bundle.specs.iter().any(|s| &s.name == d) {
            return Err(Error::Validation(format!("no spec for device '{d}'")));
        }
    }

    let mut rows = Vec::with_capacity(devices.len() * methods.len());
    let mut folds = Vec::with_capacity(devices.len());
    for (fold_index, target) in devices.iter().enumerate() {
        let fold_seed = opts.seed ^ fold_index as u64;
        let (fold_rows, meta) =
            run_fold(bundle, methods, opts, target, fold_seed, k_fold).map_err(|e| {
                Error::Validation(format!("fold {fold_index} (target '{target}'): {e}"))
            })?;
        rows.extend(fold_rows);
        folds.push(meta);
    }
    Ok(LodoReport {
        rows,
        folds,
        seed: opts.seed,
        n_train_archs: opts.n_train_archs,
    })
}

fn run_fold(
    bundle: &DataBundle,
    methods: &[MethodConfig],
    opts: &LodoOptions,
    target: &str,
    fold_seed: u64,
    k_fold: usize,
) -> Result<(Vec<LodoRow>, FoldMeta)> {
    let train_devices: Vec<String> = bundle
        .latency
        .devices()
        .into_iter()
        .filter(|d| d != target)
        .collect();

    // References must be measurable on the target and present across the
    // pool; selection itself is stratified by mean pool latency.
    let refs = if k_fold > 0 {
        let target_archs: std::collections::BTreeSet<u32> =
            bundle.latency.device_archs(target).into_iter().collect();
        let candidates: Vec<u32> = bundle
            .latency
            .common_archs(&train_devices)
            .into_iter()
            .filter(|a| target_archs.contains(a))
            .collect();
        select_reference_archs_among(&bundle.latency, &train_devices, &candidates, k_fold, fold_seed)?
    } else {
        Vec::new()
    };

    let split = split_with_adaptation_archs(
        &bundle.latency,
        target,
        opts.n_train_archs,
        &refs,
        fold_seed,
    )?;

    let target_lut = resolve_target_lut(bundle, opts, target, &split.train, &train_devices)?;
    let target_counters = &bundle.counters[target];

    let eval_truths: Vec<f64> = split
        .eval_archs
        .iter()
        .map(|&a| bundle.latency.get(target, a).unwrap())
        .collect();

    let mut rows = Vec::with_capacity(methods.len());
    let mut meta = FoldMeta {
        target_device: target.to_string(),
        fold_seed,
        n_train_samples: split.train.len(),
        n_adapt: split.adaptation.len(),
        n_eval: split.eval_archs.len(),
        neighborhood_sizes: BTreeMap::new(),
        virtual_dropped: BTreeMap::new(),
    };

    for method in methods {
        let preds: Vec<f64> = if method.is_lut_only() {
            split
                .eval_archs
                .iter()
                .map(|&a| Ok(target_lut.latency_ms(&CellArchitecture::from_index(a)?)))
                .collect::<Result<_>>()?
        } else {
            // Virtual examples carry the measured reference rows, so the
            // split's adaptation records are passed only when synthesis
            // is off.
            let mut adaptation: &[LatencyRecord] = &split.adaptation;
            let mut virtuals: Vec<VirtualExample> = Vec::new();
            if method.use_virtual {
                let mut sizes = Vec::with_capacity(refs.len());
                let mut dropped = 0usize;
                for record in &split.adaptation {
                    let mut nbhd = discover_neighborhood_widened(
                        &bundle.latency,
                        &train_devices,
                        record.arch_index,
                        &method.neighborhood,
                    )?;
                    sizes.push(nbhd.size());
                    if gate_rejects(&nbhd, method, &target_lut, bundle, &train_devices)? {
                        // keep only the measured reference sample
                        virtuals.push(VirtualExample {
                            arch_index: record.arch_index,
                            label_ms: record.latency_ms,
                            neighborhood_ref: record.arch_index,
                            is_measured: true,
                        });
                        continue;
                    }
                    let synth =
                        synthesize_virtual_examples(&mut nbhd, &target_lut, record.latency_ms)?;
                    dropped += synth.dropped_non_positive;
                    virtuals.extend(synth.examples);
                }
                meta.neighborhood_sizes.insert(method.name.clone(), sizes);
                meta.virtual_dropped.insert(method.name.clone(), dropped);
                adaptation = &[];
            }

            let weight_cfg = WeightConfig {
                mode: method.weight_mode,
                ..opts.weight.clone()
            };
            let weighted = assign_sample_weights(
                &split.train,
                adaptation,
                &virtuals,
                &bundle.specs,
                target,
                &weight_cfg,
            )?;
            let samples = to_training_samples(&weighted, bundle, target)?;
            let train_cfg = TrainConfig {
                seed: fold_seed,
                ..opts.train.clone()
            };
            let model = train(&samples, &train_cfg)?;
            split
                .eval_archs
                .iter()
                .map(|&a| {
                    let arch = CellArchitecture::from_index(a)?;
                    forward(&model, FeatureVector::assemble(&arch, target_counters).values())
                })
                .collect::<Result<_>>()?
        };

        rows.push(LodoRow {
            target_device: target.to_string(),
            method: method.name.clone(),
            n_eval: split.eval_archs.len(),
            acc10: error_bound_accuracy(&preds, &eval_truths, 0.10)?,
            mare: mean_abs_rel_error(&preds, &eval_truths)?,
            seed: opts.seed,
        });
    }
    Ok((rows, meta))
}

fn gate_rejects(
    nbhd: &Neighborhood,
    method: &MethodConfig,
    target_lut: &OpLatencyTable,
    bundle: &DataBundle,
    train_devices: &[String],
) -> Result<bool> {
    let Some(threshold) = method.neighborhood.corr_gate else {
        return Ok(false);
    };
    if nbhd.size() < 2 {
        return Ok(false);
    }
    let mut sum = 0.0;
    let mut defined = 0usize;
    for d in train_devices {
        if let Some(r) = neighborhood_lut_correlation(nbhd, target_lut, &bundle.latency, d)? {
            sum += r;
            defined += 1;
        }
    }
    if defined == 0 {
        return Ok(false);
    }
    let mean_corr = sum / defined as f64;
    Ok(mean_corr < threshold)
}

fn resolve_target_lut(
    bundle: &DataBundle,
    opts: &LodoOptions,
    target: &str,
    train_records: &[LatencyRecord],
    train_devices: &[String],
) -> Result<OpLatencyTable> {
    match opts.target_lut {
        TargetLutPolicy::Provided => bundle.luts.get(target).cloned().ok_or_else(|| {
            Error::Validation(format!(
                "no measured op-cost table for target '{target}'; provide lut.csv or use the fit-nearest policy"
            ))
        }),
        TargetLutPolicy::FitNearest => {
            let nearest = nearest_training_device(&bundle.specs, target, train_devices, &opts.weight)?;
            let records: Vec<(CellArchitecture, f64)> = train_records
                .iter()
                .filter(|r| r.device == nearest)
                .map(|r| Ok((CellArchitecture::from_index(r.arch_index)?, r.latency_ms)))
                .collect::<Result<_>>()?;
            let mut lut = fit_lut(&nearest, &records)?;
            lut.device = target.to_string();
            Ok(lut)
        }
    }
}

/// The training device at smallest normalized spec distance to the target.
pub fn nearest_training_device(
    specs: &[DeviceSpec],
    target: &str,
    train_devices: &[String],
    weight_cfg: &WeightConfig,
) -> Result<String> {
    let normalized = normalize_specs(specs, weight_cfg.normalization);
    let position = |name: &str| -> Result<usize> {
        specs.iter().position(|s| s.name == name).ok_or_else(|| {
            Error::Validation(format!("no spec for device '{name}'"))
        })
    };
    let target_vec = normalized[position(target)?];
    let mut best: Option<(f64, &String)> = None;
    for d in train_devices {
        let dist = device_distance(&target_vec, &normalized[position(d)?]);
        if best.map_or(true, |(b, name)| dist < b || (dist == b && d < name)) {
            best = Some((dist, d));
        }
    }
    best.map(|(_, d)| d.clone())
        .ok_or_else(|| Error::Validation("no training devices".into()))
}

/// Build regressor inputs from weighted records: one-hot of the
/// architecture concatenated with the record's own device counters.
pub fn to_training_samples(
    weighted: &[WeightedRecord],
    bundle: &DataBundle,
    target: &str,
) -> Result<Vec<TrainingSample>> {
    weighted
        .iter()
        .map(|r| {
            let device = if r.is_target { target } else { r.device.as_str() };
            let counters = bundle.counters.get(device).ok_or_else(|| {
                Error::Validation(format!("no counter descriptor for device '{device}'"))
            })?;
            let arch = CellArchitecture::from_index(r.arch_index)?;
            Ok(TrainingSample {
                features: FeatureVector::assemble(&arch, counters).values().to_vec(),
                label_ms: r.label_ms,
                weight: r.weight,
            })
        })
        .collect()
}

/// Save the report: `target_device,method,n_eval,acc10,mare,seed`.
pub fn save_lodo_report(report: &LodoReport, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("target_device,method,n_eval,acc10,mare,seed\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.target_device,
            r.method,
            r.n_eval,
            numfmt::sig9(r.acc10),
            numfmt::sig9(r.mare),
            r.seed
        ));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn accuracy_basics() {
        assert_eq!(
            error_bound_accuracy(&[1.0, 2.0], &[1.0, 2.0], 0.1).unwrap(),
            1.0
        );
        // |−5|/105 ≈ 0.0476 in, |−100|/200 = 0.5 out
        assert_eq!(
            error_bound_accuracy(&[100.0, 100.0], &[105.0, 200.0], 0.1).unwrap(),
            0.5
        );
        // boundary inclusive
        assert_eq!(error_bound_accuracy(&[110.0], &[100.0], 0.1).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_errors() {
        assert!(error_bound_accuracy(&[1.0], &[1.0, 2.0], 0.1).is_err());
        assert!(error_bound_accuracy(&[], &[], 0.1).is_err());
        assert!(error_bound_accuracy(&[1.0], &[0.0], 0.1).is_err());
    }

    #[test]
    fn accuracy_scale_invariant() {
        let preds = [1.0, 2.0, 3.5, 4.0];
        let truths = [1.05, 2.5, 3.4, 5.0];
        let a = error_bound_accuracy(&preds, &truths, 0.1).unwrap();
        let scaled_p: Vec<f64> = preds.iter().map(|x| x * 37.0).collect();
        let scaled_t: Vec<f64> = truths.iter().map(|x| x * 37.0).collect();
        let b = error_bound_accuracy(&scaled_p, &scaled_t, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&x, &[5.0; 4]).unwrap().is_none());
    }

    #[test]
    fn spearman_hand_case() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        let rho = spearman(&x, &y).unwrap().unwrap();
        assert!((rho - 0.8).abs() < 1e-12, "{rho}");
    }

    #[test]
    fn spearman_monotone_extremes() {
        let x = [0.1f64, 0.5, 2.0, 9.0];
        let up: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let down: Vec<f64> = x.iter().map(|v| -v.exp()).collect();
        assert!((spearman(&x, &up).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &down).unwrap().unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&x, &[1.0; 4]).unwrap().is_none());
    }

    #[test]
    fn spearman_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let x: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..10.0)).collect();
            let y: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..10.0)).collect();
            let base = spearman(&x, &y).unwrap().unwrap();
            let tx: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
            let ty: Vec<f64> = y.iter().map(|v| v.ln()).collect();
            let transformed = spearman(&tx, &ty).unwrap().unwrap();
            assert!((base - transformed).abs() < 1e-12);
        }
    }

    #[test]
    fn average_ranks_handles_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 1.0, 2.0]), vec![4.0, 1.5, 1.5, 3.0]);
    }

    #[test]
    fn spearman_matrix_trivial_cases() {
        let mut t = LatencyTable::new();
        for a in 0..5u32 {
            let l = 1.0 + a as f64;
            t.insert("a", a, l).unwrap();
            t.insert("copy", a, l * 3.0).unwrap();
            t.insert("reversed", a, 10.0 - a as f64).unwrap();
        }
        let m = spearman_matrix(&t).unwrap();
        assert_eq!(m.devices, vec!["a", "copy", "reversed"]);
        let at = |x: &str, y: &str| {
            let i = m.devices.iter().position(|d| d == x).unwrap();
            let j = m.devices.iter().position(|d| d == y).unwrap();
            m.values[i][j]
        };
        assert_eq!(at("a", "a"), 1.0);
        assert!((at("a", "copy") - 1.0).abs() < 1e-12);
        assert!((at("a", "reversed") + 1.0).abs() < 1e-12);
        assert_eq!(at("copy", "a"), at("a", "copy"));
    }

    #[test]
    fn spearman_matrix_clusters_by_parallelism_regime() {
        let cfg = SynthConfig {
            n_devices: 6,
            n_archs: 300,
            noise_sigma: 0.05,
            parallelism_range: (0.1, 0.4),
            seed: 13,
        };
        let data = synth_generate(&cfg).unwrap();
        let m = spearman_matrix(&data.latency).unwrap();
        let idx = |name: &str| m.devices.iter().position(|d| d == name).unwrap();
        let mut within = Vec::new();
        let mut across = Vec::new();
        for i in &["cpu0", "cpu1", "cpu2"] {
            for j in &["cpu0", "cpu1", "cpu2"] {
                if i < j {
                    within.push(m.values[idx(i)][idx(j)]);
                }
            }
            for j in &["gpu0", "gpu1", "gpu2"] {
                across.push(m.values[idx(i)][idx(j)]);
            }
        }
        for i in &["gpu0", "gpu1", "gpu2"] {
            for j in &["gpu0", "gpu1", "gpu2"] {
                if i < j {
                    within.push(m.values[idx(i)][idx(j)]);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&within) > mean(&across),
            "within {} vs across {}",
            mean(&within),
            mean(&across)
        );
    }

    fn small_bundle(noise: f64, rho: (f64, f64), seed: u64) -> DataBundle {
        let cfg = SynthConfig {
            n_devices: 4,
            n_archs: 120,
            noise_sigma: noise,
            parallelism_range: rho,
            seed,
        };
        synth_generate(&cfg).unwrap().into()
    }

    #[test]
    fn lut_only_perfect_on_noiseless_sequential_data() {
        let bundle = small_bundle(0.0, (0.0, 0.0), 3);
        let opts = LodoOptions::new(60, 5);
        let report = lodo_run(&bundle, &[MethodConfig::lut_only()], &opts).unwrap();
        assert_eq!(report.rows.len(), 4);
        for row in &report.rows {
            assert_eq!(row.acc10, 1.0, "{}", row.target_device);
        }
    }

    #[test]
    fn lodo_report_shape_and_determinism() {
        let bundle = small_bundle(0.02, (0.05, 0.2), 17);
        let mut opts = LodoOptions::new(60, 9);
        opts.train.epochs = 12;
        opts.train.hidden_dims = vec![16];
        let methods = vec![
            MethodConfig::maple_x(3),
            MethodConfig::maple_x1(3),
            MethodConfig::maple_baseline(3),
            MethodConfig::lut_only(),
        ];
        let a = lodo_run(&bundle, &methods, &opts).unwrap();
        assert_eq!(a.rows.len(), 4 * 4, "|devices| x |methods|");
        // evaluation set identical across methods within a fold
        for fold in &a.folds {
            let n = fold.n_eval;
            for row in a.rows.iter().filter(|r| r.target_device == fold.target_device) {
                assert_eq!(row.n_eval, n);
            }
        }
        let b = lodo_run(&bundle, &methods, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lodo_rejects_mixed_k_adapt() {
        let bundle = small_bundle(0.0, (0.0, 0.0), 3);
        let methods = vec![MethodConfig::maple_x(3), MethodConfig::maple_x1(5)];
        let err = lodo_run(&bundle, &methods, &LodoOptions::new(40, 1)).unwrap_err();
        assert!(err.to_string().contains("k_adapt"), "{err}");
    }

    #[test]
    fn method_invariants_enforced() {
        let mut bad = MethodConfig::maple_x(3);
        bad.weight_mode = WeightMode::Uniform;
        assert!(bad.validate().is_err());
        let mut bad = MethodConfig::maple_baseline(3);
        bad.use_virtual = true;
        assert!(bad.validate().is_err());
        assert!(MethodConfig::custom("pooled", false, WeightMode::Uniform, 0)
            .validate()
            .is_ok());
    }

    #[test]
    fn lodo_with_no_adaptation_reduces_to_pooled_training() {
        let bundle = small_bundle(0.02, (0.05, 0.2), 23);
        let mut opts = LodoOptions::new(50, 31);
        opts.train.epochs = 10;
        opts.train.hidden_dims = vec![12];
        let pooled = MethodConfig::custom("pooled", false, WeightMode::Uniform, 0);
        let report = lodo_run(&bundle, &[pooled], &opts).unwrap();

        // reproduce fold 0 ("cpu0") by hand: plain pooled training
        let target = "cpu0";
        let fold_seed = opts.seed ^ 0u64;
        let split =
            split_with_adaptation_archs(&bundle.latency, target, opts.n_train_archs, &[], fold_seed)
                .unwrap();
        let weighted = assign_sample_weights(
            &split.train,
            &[],
            &[],
            &bundle.specs,
            target,
            &WeightConfig::with_mode(WeightMode::Uniform),
        )
        .unwrap();
        let samples = to_training_samples(&weighted, &bundle, target).unwrap();
        let cfg = TrainConfig {
            seed: fold_seed,
            ..opts.train.clone()
        };
        let model = train(&samples, &cfg).unwrap();
        let preds: Vec<f64> = split
            .eval_archs
            .iter()
            .map(|&a| {
                let arch = CellArchitecture::from_index(a).unwrap();
                forward(
                    &model,
                    FeatureVector::assemble(&arch, &bundle.counters[target]).values(),
                )
                .unwrap()
            })
            .collect();
        let truths: Vec<f64> = split
            .eval_archs
            .iter()
            .map(|&a| bundle.latency.get(target, a).unwrap())
            .collect();
        let acc = error_bound_accuracy(&preds, &truths, 0.10).unwrap();
        let row = report
            .rows
            .iter()
            .find(|r| r.target_device == target)
            .unwrap();
        assert_eq!(row.acc10, acc);
        assert_eq!(row.n_eval, split.eval_archs.len());
    }

    #[test]
    fn density_rows_delegate_to_prior() {
        let bundle = small_bundle(0.05, (0.1, 0.4), 41);
        let devices = bundle.latency.devices();
        let train_devices: Vec<String> =
            devices.iter().filter(|d| *d != "gpu0").cloned().collect();
        let refs = crate::prior::select_reference_archs(&bundle.latency, &train_devices, 5, 2)
            .unwrap();
        let neighborhoods: Vec<Neighborhood> = refs
            .iter()
            .map(|&r| {
                discover_neighborhood_widened(
                    &bundle.latency,
                    &train_devices,
                    r,
                    &NeighborhoodConfig::default(),
                )
                .unwrap()
            })
            .collect();
        let lut = &bundle.luts["gpu0"];
        let rows =
            neighborhood_correlation_density(&neighborhoods, lut, &bundle.latency, "gpu0").unwrap();
        let qualifying = neighborhoods.iter().filter(|n| n.size() >= 2).count();
        assert_eq!(rows.len(), qualifying);
        for ((size, r), nbhd) in rows.iter().zip(neighborhoods.iter().filter(|n| n.size() >= 2)) {
            assert_eq!(*size, nbhd.size());
            assert!(*size >= 2);
            let direct = neighborhood_lut_correlation(nbhd, lut, &bundle.latency, "gpu0")
                .unwrap()
                .unwrap_or(f64::NAN);
            assert!((r - direct).abs() < 1e-15 || (r.is_nan() && direct.is_nan()));
        }
    }
}
