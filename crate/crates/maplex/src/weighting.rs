//! Hardware-similarity importance weights.
//!
//! Device specifications (core count, max clock, TDP) are normalized,
//! the Euclidean distance from the target device is taken per training
//! device, and each training sample is weighted `1/sqrt(d)`. The square
//! root keeps weight magnitudes from spreading too far apart; an epsilon
//! floor on the distance keeps the weight finite when a training device
//! is spec-identical to the target.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{write_atomic, DeviceSpec, LatencyRecord};
use crate::error::{Error, Result};
use crate::numfmt;
use crate::prior::VirtualExample;

/// Normalized 3-dim device descriptor (cores, clock, TDP).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecVector {
    pub values: [f64; 3],
}

/// Spec normalization applied before the Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Zscore,
    Minmax,
    None,
}

/// How training-pool samples are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// All training weights 1.
    Uniform,
    /// Training weight `1/sqrt(distance to target)` per device.
    Hardware,
    /// Training weights 1; measured target samples get a flat emphasis
    /// factor (the pre-existing adaptation scheme).
    AdaptationEmphasis,
}

impl WeightMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeightMode::Uniform => "uniform",
            WeightMode::Hardware => "hardware",
            WeightMode::AdaptationEmphasis => "adaptation_emphasis",
        }
    }

    pub fn parse(s: &str) -> Result<WeightMode> {
        match s {
            "uniform" => Ok(WeightMode::Uniform),
            "hardware" => Ok(WeightMode::Hardware),
            "adaptation_emphasis" => Ok(WeightMode::AdaptationEmphasis),
            other => Err(Error::Validation(format!(
                "unknown weight mode '{other}' (expected uniform, hardware or adaptation_emphasis)"
            ))),
        }
    }
}

/// Weighting configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightConfig {
    pub mode: WeightMode,
    /// Floor substituted for distances below it (keeps 1/sqrt(d) finite).
    pub epsilon_floor: f64,
    pub normalization: Normalization,
    /// Target-device samples weigh this multiple of the largest
    /// training-pool weight in effect.
    pub target_sample_multiplier: f64,
    /// Extra factor on measured target samples in
    /// [`WeightMode::AdaptationEmphasis`].
    pub adaptation_emphasis: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            mode: WeightMode::Hardware,
            epsilon_floor: 1e-6,
            normalization: Normalization::Zscore,
            target_sample_multiplier: 1.0,
            adaptation_emphasis: 10.0,
        }
    }
}

impl WeightConfig {
    pub fn with_mode(mode: WeightMode) -> WeightConfig {
        WeightConfig {
            mode,
            ..WeightConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_floor.is_finite() && self.epsilon_floor > 0.0) {
            return Err(Error::Validation(format!(
                "epsilon_floor must be positive, got {}",
                self.epsilon_floor
            )));
        }
        if !(self.target_sample_multiplier.is_finite() && self.target_sample_multiplier > 0.0) {
            return Err(Error::Validation(format!(
                "target_sample_multiplier must be positive, got {}",
                self.target_sample_multiplier
            )));
        }
        if !(self.adaptation_emphasis.is_finite() && self.adaptation_emphasis > 0.0) {
            return Err(Error::Validation(format!(
                "adaptation_emphasis must be positive, got {}",
                self.adaptation_emphasis
            )));
        }
        Ok(())
    }
}

/// Normalize raw device specs into comparable vectors. The statistics are
/// computed over exactly the given list (training pool plus target), so
/// callers pass every device that will enter a distance computation.
///
/// Zscore maps each dimension to (x - mean)/std with population std;
/// zero-variance dimensions map to all zeros. Minmax maps each dimension
/// to [0,1] (constant dimensions map to zero).
pub fn normalize_specs(specs: &[DeviceSpec], mode: Normalization) -> Vec<SpecVector> {
    let raw: Vec<[f64; 3]> = specs
        .iter()
        .map(|s| [s.core_count as f64, s.max_clock_ghz, s.tdp_watts])
        .collect();
    if raw.is_empty() {
        return Vec::new();
    }
    match mode {
        Normalization::None => raw.into_iter().map(|values| SpecVector { values }).collect(),
        Normalization::Minmax => {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for v in &raw {
                for k in 0..3 {
                    lo[k] = lo[k].min(v[k]);
                    hi[k] = hi[k].max(v[k]);
                }
            }
            raw.into_iter()
                .map(|v| {
                    let mut values = [0.0; 3];
                    for k in 0..3 {
                        let span = hi[k] - lo[k];
                        values[k] = if span > 0.0 { (v[k] - lo[k]) / span } else { 0.0 };
                    }
                    SpecVector { values }
                })
                .collect()
        }
        Normalization::Zscore => {
            let n = raw.len() as f64;
            let mut mean = [0.0; 3];
            for v in &raw {
                for k in 0..3 {
                    mean[k] += v[k] / n;
                }
            }
            let mut var = [0.0; 3];
            for v in &raw {
                for k in 0..3 {
                    var[k] += (v[k] - mean[k]) * (v[k] - mean[k]) / n;
                }
            }
            let std: [f64; 3] = std::array::from_fn(|k| var[k].sqrt());
            raw.into_iter()
                .map(|v| {
                    let mut values = [0.0; 3];
                    for k in 0..3 {
                        values[k] = if std[k] > 0.0 { (v[k] - mean[k]) / std[k] } else { 0.0 };
                    }
                    SpecVector { values }
                })
                .collect()
        }
    }
}

/// Euclidean distance between two normalized spec vectors.
pub fn device_distance(target: &SpecVector, train: &SpecVector) -> f64 {
    target
        .values
        .iter()
        .zip(&train.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Importance weight `1/sqrt(max(d, epsilon_floor))`.
pub fn importance_weight(distance: f64, cfg: &WeightConfig) -> f64 {
    1.0 / distance.max(cfg.epsilon_floor).sqrt()
}

/// A training sample with its importance weight attached.
#[derive(Debug, Clone)]
pub struct WeightedRecord {
    pub device: String,
    pub arch_index: u32,
    pub label_ms: f64,
    pub weight: f64,
    pub is_target: bool,
    pub is_measured: bool,
}

/// Attach importance weights to training-pool samples and target-device
/// samples (measured adaptation rows plus virtual examples).
///
/// Training-pool weights depend on the mode: `hardware` weighs each
/// device by `1/sqrt(distance to target)`, `uniform` and
/// `adaptation_emphasis` use 1. Target-device samples always receive
/// `target_sample_multiplier x max(training weight in effect)`, so they
/// weigh at least as much as any pool sample; under
/// `adaptation_emphasis` the measured target samples additionally get the
/// flat emphasis factor.
pub fn assign_sample_weights(
    train: &[LatencyRecord],
    adaptation: &[LatencyRecord],
    virtual_examples: &[VirtualExample],
    specs: &[DeviceSpec],
    target: &str,
    cfg: &WeightConfig,
) -> Result<Vec<WeightedRecord>> {
    cfg.validate()?;
    let device_weights = training_device_weights(train, specs, target, cfg)?;
    let max_train_weight = device_weights
        .values()
        .fold(1.0f64, |acc, &w| acc.max(w));
    let target_weight = cfg.target_sample_multiplier * max_train_weight;
    let measured_weight = match cfg.mode {
        WeightMode::AdaptationEmphasis => cfg.adaptation_emphasis * target_weight,
        _ => target_weight,
    };

    let mut out = Vec::with_capacity(train.len() + adaptation.len() + virtual_examples.len());
    for r in train {
        out.push(WeightedRecord {
            device: r.device.clone(),
            arch_index: r.arch_index,
            label_ms: r.latency_ms,
            weight: device_weights[&r.device],
            is_target: false,
            is_measured: true,
        });
    }
    for r in adaptation {
        if r.device != target {
            return Err(Error::Validation(format!(
                "adaptation record for '{}' does not belong to target '{target}'",
                r.device
            )));
        }
        out.push(WeightedRecord {
            device: r.device.clone(),
            arch_index: r.arch_index,
            label_ms: r.latency_ms,
            weight: measured_weight,
            is_target: true,
            is_measured: true,
        });
    }
    for v in virtual_examples {
        // measured reference rows inside a virtual set count as measured
        let weight = if v.is_measured { measured_weight } else { target_weight };
        out.push(WeightedRecord {
            device: target.to_string(),
            arch_index: v.arch_index,
            label_ms: v.label_ms,
            weight,
            is_target: true,
            is_measured: v.is_measured,
        });
    }
    Ok(out)
}

/// Per training-device weight under the given mode.
pub fn training_device_weights(
    train: &[LatencyRecord],
    specs: &[DeviceSpec],
    target: &str,
    cfg: &WeightConfig,
) -> Result<BTreeMap<String, f64>> {
    let mut devices: Vec<String> = train.iter().map(|r| r.device.clone()).collect();
    devices.sort();
    devices.dedup();
    match cfg.mode {
        WeightMode::Uniform | WeightMode::AdaptationEmphasis => {
            Ok(devices.into_iter().map(|d| (d, 1.0)).collect())
        }
        WeightMode::Hardware => {
            let normalized = normalize_specs(specs, cfg.normalization);
            let position = |name: &str| -> Result<usize> {
                specs.iter().position(|s| s.name == name).ok_or_else(|| {
                    Error::Validation(format!(
                        "hardware weighting requires a spec for device '{name}'"
                    ))
                })
            };
            let target_vec = normalized[position(target)?];
            devices
                .into_iter()
                .map(|d| {
                    let v = normalized[position(&d)?];
                    let w = importance_weight(device_distance(&target_vec, &v), cfg);
                    Ok((d, w))
                })
                .collect()
        }
    }
}

/// One row of the pairwise weight report.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightReportRow {
    pub target_device: String,
    pub train_device: String,
    pub distance: f64,
    pub weight: f64,
}

/// Hardware-similarity weights for every (target, training) device pair.
pub fn weights_report(specs: &[DeviceSpec], cfg: &WeightConfig) -> Result<Vec<WeightReportRow>> {
    cfg.validate()?;
    let normalized = normalize_specs(specs, cfg.normalization);
    let mut order: Vec<usize> = (0..specs.len()).collect();
    order.sort_by(|&a, &b| specs[a].name.cmp(&specs[b].name));
    let mut rows = Vec::new();
    for &t in &order {
        for &d in &order {
            if t == d {
                continue;
            }
            let distance = device_distance(&normalized[t], &normalized[d]);
            rows.push(WeightReportRow {
                target_device: specs[t].name.clone(),
                train_device: specs[d].name.clone(),
                distance,
                weight: importance_weight(distance, cfg),
            });
        }
    }
    Ok(rows)
}

/// Save the weight report: `target_device,train_device,distance,weight`.
pub fn save_weights_report(rows: &[WeightReportRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("target_device,train_device,distance,weight\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.target_device,
            r.train_device,
            numfmt::sig9(r.distance),
            numfmt::sig9(r.weight)
        ));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DeviceClass;

    fn spec(name: &str, class: DeviceClass, cores: u32, clock: f64, tdp: f64) -> DeviceSpec {
        DeviceSpec::new(name, class, cores, clock, tdp).unwrap()
    }

    #[test]
    fn zscore_single_device_is_origin() {
        let specs = vec![spec("a", DeviceClass::Cpu, 8, 3.0, 95.0)];
        let v = normalize_specs(&specs, Normalization::Zscore);
        assert_eq!(v[0].values, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn minmax_two_devices_hits_bounds() {
        let specs = vec![
            spec("a", DeviceClass::Cpu, 8, 3.0, 95.0),
            spec("b", DeviceClass::Gpu, 4096, 1.5, 250.0),
        ];
        let v = normalize_specs(&specs, Normalization::Minmax);
        assert_eq!(v[0].values, [0.0, 1.0, 0.0]);
        assert_eq!(v[1].values, [1.0, 0.0, 1.0]);
    }

    #[test]
    fn zscore_mean_zero_std_one() {
        let specs = vec![
            spec("a", DeviceClass::Cpu, 4, 4.2, 91.0),
            spec("b", DeviceClass::Cpu, 12, 4.4, 165.0),
            spec("c", DeviceClass::Gpu, 4608, 1.77, 260.0),
        ];
        let v = normalize_specs(&specs, Normalization::Zscore);
        for k in 0..3 {
            let mean: f64 = v.iter().map(|s| s.values[k]).sum::<f64>() / v.len() as f64;
            let var: f64 =
                v.iter().map(|s| (s.values[k] - mean) * (s.values[k] - mean)).sum::<f64>()
                    / v.len() as f64;
            assert!(mean.abs() < 1e-12, "dim {k} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-12, "dim {k} std {}", var.sqrt());
        }
    }

    #[test]
    fn distance_is_euclidean() {
        let a = SpecVector { values: [0.0, 0.0, 0.0] };
        let b = SpecVector { values: [3.0, 4.0, 0.0] };
        assert_eq!(device_distance(&a, &b), 5.0);
        assert_eq!(device_distance(&a, &a), 0.0);
    }

    #[test]
    fn importance_weight_values() {
        let cfg = WeightConfig::default();
        assert_eq!(importance_weight(4.0, &cfg), 0.5);
        assert_eq!(importance_weight(1.0, &cfg), 1.0);
        let floored = importance_weight(0.0, &cfg);
        assert!((floored - 1000.0).abs() < 1e-9, "{floored}");
    }

    #[test]
    fn importance_weight_monotone() {
        let cfg = WeightConfig::default();
        let grid: Vec<f64> = (0..60).map(|i| 10f64.powf(-6.0 + i as f64 * 0.2)).collect();
        let mut prev = f64::INFINITY;
        for d in grid {
            let w = importance_weight(d, &cfg);
            assert!(w <= prev);
            prev = w;
        }
    }

    #[test]
    fn zscore_distance_invariant_to_tdp_rescale() {
        let base = vec![
            spec("a", DeviceClass::Cpu, 4, 4.2, 91.0),
            spec("b", DeviceClass::Cpu, 12, 4.4, 165.0),
            spec("c", DeviceClass::Gpu, 1920, 1.683, 150.0),
            spec("d", DeviceClass::Gpu, 4608, 1.77, 260.0),
        ];
        let mut scaled = base.clone();
        for s in &mut scaled {
            s.tdp_watts *= 1000.0;
        }
        let v1 = normalize_specs(&base, Normalization::Zscore);
        let v2 = normalize_specs(&scaled, Normalization::Zscore);
        for i in 0..v1.len() {
            for j in 0..v1.len() {
                let d1 = device_distance(&v1[i], &v1[j]);
                let d2 = device_distance(&v2[i], &v2[j]);
                assert!((d1 - d2).abs() < 1e-9, "({i},{j}): {d1} vs {d2}");
            }
        }
    }

    #[test]
    fn weight_ordering_matches_distance_ordering() {
        let cfg = WeightConfig::default();
        let mut pairs: Vec<(f64, f64)> = [0.0, 1e-7, 0.5, 1.0, 2.0, 10.0]
            .iter()
            .map(|&d| (d, importance_weight(d, &cfg)))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            let ((d1, w1), (d2, w2)) = (w[0], w[1]);
            assert!(w1 >= w2);
            if d1.max(cfg.epsilon_floor) < d2.max(cfg.epsilon_floor) {
                assert!(w1 > w2, "strictly decreasing above the floor");
            }
        }
    }

    fn toy_records() -> (Vec<LatencyRecord>, Vec<DeviceSpec>) {
        let train = vec![
            LatencyRecord { device: "near".into(), arch_index: 0, latency_ms: 1.0 },
            LatencyRecord { device: "far".into(), arch_index: 0, latency_ms: 2.0 },
        ];
        // distances from target under `none` normalization: near = 1, far = 4
        let specs = vec![
            spec("target", DeviceClass::Cpu, 1, 1.0, 1.0),
            spec("near", DeviceClass::Cpu, 2, 1.0, 1.0),
            spec("far", DeviceClass::Cpu, 5, 1.0, 1.0),
        ];
        (train, specs)
    }

    #[test]
    fn hardware_mode_weights_by_inverse_sqrt_distance() {
        let (train, specs) = toy_records();
        let cfg = WeightConfig {
            normalization: Normalization::None,
            ..WeightConfig::default()
        };
        let out =
            assign_sample_weights(&train, &[], &[], &specs, "target", &cfg).unwrap();
        let near = out.iter().find(|r| r.device == "near").unwrap();
        let far = out.iter().find(|r| r.device == "far").unwrap();
        assert!((near.weight - 1.0).abs() < 1e-12);
        assert!((far.weight - 0.5).abs() < 1e-12);
        assert!((near.weight / far.weight - 2.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_mode_all_ones() {
        let (train, specs) = toy_records();
        let cfg = WeightConfig::with_mode(WeightMode::Uniform);
        let out = assign_sample_weights(&train, &[], &[], &specs, "target", &cfg).unwrap();
        assert!(out.iter().all(|r| r.weight == 1.0));
    }

    #[test]
    fn adaptation_emphasis_boosts_measured_target() {
        let (train, specs) = toy_records();
        let adaptation = vec![LatencyRecord {
            device: "target".into(),
            arch_index: 5,
            latency_ms: 3.0,
        }];
        let cfg = WeightConfig::with_mode(WeightMode::AdaptationEmphasis);
        let out =
            assign_sample_weights(&train, &adaptation, &[], &specs, "target", &cfg).unwrap();
        let target_row = out.iter().find(|r| r.is_target).unwrap();
        assert_eq!(target_row.weight, 10.0);
        assert!(out.iter().filter(|r| !r.is_target).all(|r| r.weight == 1.0));
    }

    #[test]
    fn target_samples_weigh_at_least_max_pool() {
        let (train, specs) = toy_records();
        let adaptation = vec![LatencyRecord {
            device: "target".into(),
            arch_index: 5,
            latency_ms: 3.0,
        }];
        let virtuals = vec![VirtualExample {
            arch_index: 9,
            label_ms: 2.5,
            neighborhood_ref: 5,
            is_measured: false,
        }];
        for mode in [WeightMode::Uniform, WeightMode::Hardware, WeightMode::AdaptationEmphasis] {
            let cfg = WeightConfig {
                mode,
                normalization: Normalization::None,
                ..WeightConfig::default()
            };
            let out = assign_sample_weights(&train, &adaptation, &virtuals, &specs, "target", &cfg)
                .unwrap();
            let max_pool = out
                .iter()
                .filter(|r| !r.is_target)
                .map(|r| r.weight)
                .fold(0.0f64, f64::max);
            for r in out.iter().filter(|r| r.is_target) {
                assert!(r.weight >= max_pool, "{mode:?}");
            }
        }
    }

    #[test]
    fn hardware_mode_missing_spec_is_error() {
        let (train, _) = toy_records();
        let specs = vec![spec("target", DeviceClass::Cpu, 1, 1.0, 1.0)];
        let cfg = WeightConfig::default();
        let err = assign_sample_weights(&train, &[], &[], &specs, "target", &cfg).unwrap_err();
        assert!(err.to_string().contains("requires a spec"), "{err}");
    }

    #[test]
    fn report_covers_all_pairs() {
        let specs = vec![
            spec("a", DeviceClass::Cpu, 4, 4.2, 91.0),
            spec("b", DeviceClass::Cpu, 12, 4.4, 165.0),
            spec("c", DeviceClass::Gpu, 4608, 1.77, 260.0),
        ];
        let rows = weights_report(&specs, &WeightConfig::default()).unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            assert!(r.weight > 0.0 && r.distance >= 0.0);
        }
    }

    #[test]
    fn gpus_weight_gpus_above_cpus_on_public_specs() {
        // loaded from the device spec sheet shipped with the crate
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/devices.csv");
        let specs = crate::dataset::load_device_specs(path).unwrap();
        assert_eq!(specs.len(), 6);
        let rows = weights_report(&specs, &WeightConfig::default()).unwrap();
        let weight = |t: &str, d: &str| {
            rows.iter()
                .find(|r| r.target_device == t && r.train_device == d)
                .unwrap()
                .weight
        };
        // Turing-class GPUs weight each other above every CPU
        for target in ["RTX6000", "RTX2080Ti"] {
            let other_gpu = if target == "RTX6000" { "RTX2080Ti" } else { "RTX6000" };
            for cpu in ["i5-7600k", "i9-9920X", "Xeon-6230"] {
                assert!(
                    weight(target, other_gpu) > weight(target, cpu),
                    "{target}: {other_gpu} vs {cpu}"
                );
            }
        }
        // and CPUs weight CPUs above every GPU
        for target in ["i5-7600k", "i9-9920X", "Xeon-6230"] {
            for cpu in ["i5-7600k", "i9-9920X", "Xeon-6230"] {
                if cpu == target {
                    continue;
                }
                for gpu in ["GTX1070", "RTX2080Ti", "RTX6000"] {
                    assert!(
                        weight(target, cpu) > weight(target, gpu),
                        "{target}: {cpu} vs {gpu}"
                    );
                }
            }
        }
    }
}
