//! Latency neighborhoods and virtual-example synthesis.
//!
//! Architectures whose latencies stay within a relative bound of a
//! reference architecture on every training device form a neighborhood.
//! Measuring the reference once on the target device then lets us mint a
//! virtual latency label for every other member: the layer-wise table
//! supplies each member's offset relative to the neighborhood mean, and
//! the measured latency anchors the absolute level:
//!
//! ```text
//! label(a) = lut(a) - mean_lut(neighborhood) + measured_reference
//! ```
//!
//! Pairwise label differences inside a neighborhood therefore equal the
//! layer-wise differences exactly, and the mean label equals the measured
//! reference when nothing is dropped.

use std::collections::BTreeSet;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{write_atomic, LatencyTable};
use crate::error::{Error, Result};
use crate::eval::pearson;
use crate::lut::OpLatencyTable;
use crate::numfmt;
use crate::archspace::CellArchitecture;

/// How many training devices must satisfy the latency bound for an
/// architecture to join a neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MembershipRule {
    /// Bound must hold on every training device (default).
    All,
    /// Bound must hold on a strict majority of training devices.
    Majority,
}

/// Knobs for neighborhood discovery.
#[derive(Debug, Clone)]
pub struct NeighborhoodConfig {
    /// Relative latency bound.
    pub delta: f64,
    /// Hard cap on neighborhood size.
    pub max_size: usize,
    /// Auto-widening target: double `delta` while fewer members than this.
    pub min_size: usize,
    pub auto_widen: bool,
    /// Upper bound `delta` may be widened to.
    pub widen_cap: f64,
    pub rule: MembershipRule,
    /// Optional correlation gate: skip neighborhoods whose mean layer-wise
    /// correlation across training devices falls below the threshold.
    pub corr_gate: Option<f64>,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        NeighborhoodConfig {
            delta: 0.05,
            max_size: 10,
            min_size: 5,
            auto_widen: true,
            widen_cap: 0.20,
            rule: MembershipRule::All,
            corr_gate: None,
        }
    }
}

/// A latency neighborhood around one reference architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    reference: u32,
    members: BTreeSet<u32>,
    measured_latency_ms: Option<f64>,
    mean_lut_ms: Option<f64>,
    /// The bound the members were discovered at (after any widening).
    pub effective_delta: f64,
}

impl Neighborhood {
    pub fn new(reference: u32, members: BTreeSet<u32>, effective_delta: f64) -> Result<Neighborhood> {
        if !members.contains(&reference) {
            return Err(Error::Validation(format!(
                "neighborhood members must include the reference {reference}"
            )));
        }
        Ok(Neighborhood {
            reference,
            members,
            measured_latency_ms: None,
            mean_lut_ms: None,
            effective_delta,
        })
    }

    pub fn reference(&self) -> u32 {
        self.reference
    }

    /// Member architecture indices, ascending (reference included).
    pub fn members(&self) -> &BTreeSet<u32> {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Measured target latency of the reference, once known.
    pub fn measured_latency_ms(&self) -> Option<f64> {
        self.measured_latency_ms
    }

    /// Mean layer-wise latency over members, cached by synthesis.
    pub fn mean_lut_ms(&self) -> Option<f64> {
        self.mean_lut_ms
    }
}

/// Find the latency neighborhood of `reference` at exactly the given
/// bound (no auto-widening).
///
/// Membership: `|L_d(m) - L_d(ref)| <= delta * L_d(ref)` on every
/// training device (or a strict majority under
/// [`MembershipRule::Majority`]). If more than `max_size` architectures
/// qualify, the reference is kept along with the members of smallest
/// worst-case relative gap `max_d |L_d(m)-L_d(ref)|/L_d(ref)`, ties
/// broken by ascending architecture index.
pub fn discover_neighborhood(
    table: &LatencyTable,
    training_devices: &[String],
    reference: u32,
    delta: f64,
    max_size: usize,
    rule: MembershipRule,
) -> Result<Neighborhood> {
    if training_devices.is_empty() {
        return Err(Error::Validation(
            "neighborhood discovery needs at least one training device".into(),
        ));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::Validation(format!("delta must be >= 0, got {delta}")));
    }
    if max_size == 0 {
        return Err(Error::Validation("max_size must be at least 1".into()));
    }
    let ref_latencies: Vec<f64> = training_devices
        .iter()
        .map(|d| {
            table.get(d, reference).ok_or_else(|| {
                Error::Validation(format!(
                    "reference architecture {reference} is not measured on training device '{d}'"
                ))
            })
        })
        .collect::<Result<_>>()?;

    // Candidates are everything measured on the first device; the bound
    // check handles partial coverage on the rest.
    let needed = match rule {
        MembershipRule::All => training_devices.len(),
        MembershipRule::Majority => training_devices.len() / 2 + 1,
    };

    let mut scored: Vec<(f64, u32)> = Vec::new();
    for candidate in table.device_archs(&training_devices[0]) {
        if candidate == reference {
            continue;
        }
        let mut satisfied = 0usize;
        let mut worst_gap = 0.0f64;
        for (d, &l_ref) in training_devices.iter().zip(&ref_latencies) {
            let Some(l) = table.get(d, candidate) else {
                continue;
            };
            let gap = (l - l_ref).abs() / l_ref;
            worst_gap = worst_gap.max(gap);
            if gap <= delta {
                satisfied += 1;
            }
        }
        if satisfied >= needed {
            scored.push((worst_gap, candidate));
        }
    }

    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut members: BTreeSet<u32> = BTreeSet::from([reference]);
    members.extend(scored.iter().take(max_size - 1).map(|&(_, a)| a));
    Neighborhood::new(reference, members, delta)
}

/// Discover a neighborhood with the auto-widening policy: starting from
/// `cfg.delta`, the bound doubles (capped at `cfg.widen_cap`) until the
/// neighborhood reaches `cfg.min_size` members or the cap is hit.
pub fn discover_neighborhood_widened(
    table: &LatencyTable,
    training_devices: &[String],
    reference: u32,
    cfg: &NeighborhoodConfig,
) -> Result<Neighborhood> {
    let mut delta = cfg.delta;
    let mut nbhd = discover_neighborhood(table, training_devices, reference, delta, cfg.max_size, cfg.rule)?;
    if cfg.auto_widen {
        while nbhd.size() < cfg.min_size && delta < cfg.widen_cap && delta > 0.0 {
            delta = (2.0 * delta).min(cfg.widen_cap);
            nbhd = discover_neighborhood(table, training_devices, reference, delta, cfg.max_size, cfg.rule)?;
        }
    }
    Ok(nbhd)
}

/// Select `k` reference architectures stratified by mean training-pool
/// latency: candidates common to all training devices are sorted by mean
/// latency, split into `k` equal-count bins, and one member is drawn
/// (seeded) from each bin.
pub fn select_reference_archs(
    table: &LatencyTable,
    training_devices: &[String],
    k: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    let candidates = table.common_archs(&training_devices.to_vec());
    select_reference_archs_among(table, training_devices, &candidates, k, seed)
}

/// As [`select_reference_archs`], but restricted to an explicit candidate
/// set (e.g. architectures also measurable on the target device).
pub fn select_reference_archs_among(
    table: &LatencyTable,
    training_devices: &[String],
    candidates: &[u32],
    k: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    if k > candidates.len() {
        return Err(Error::Validation(format!(
            "k={k} exceeds the {} candidate architectures",
            candidates.len()
        )));
    }
    let mut by_mean: Vec<(f64, u32)> = candidates
        .iter()
        .map(|&a| {
            let mut total = 0.0;
            for d in training_devices {
                total += table.get(d, a).ok_or_else(|| {
                    Error::Validation(format!(
                        "candidate architecture {a} is not measured on training device '{d}'"
                    ))
                })?;
            }
            Ok((total / training_devices.len() as f64, a))
        })
        .collect::<Result<_>>()?;
    by_mean.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));

    let n = by_mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(k);
    for bin in 0..k {
        let lo = bin * n / k;
        let hi = (bin + 1) * n / k;
        let idx = rng.random_range(lo..hi);
        picked.push(by_mean[idx].1);
    }
    Ok(picked)
}

/// A synthesized (architecture, latency-label) pair for the target device.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualExample {
    pub arch_index: u32,
    pub label_ms: f64,
    pub neighborhood_ref: u32,
    pub is_measured: bool,
}

/// Output of virtual-label synthesis for one neighborhood.
#[derive(Debug, Clone)]
pub struct VirtualSynthesis {
    /// Retained examples, ascending by architecture index. The reference
    /// appears exactly once, carrying its measured label.
    pub examples: Vec<VirtualExample>,
    /// Members dropped because their computed label was non-positive.
    pub dropped_non_positive: usize,
}

/// Generate virtual latency labels for every member of a neighborhood
/// from the target device's layer-wise table and the measured reference
/// latency `l_r`.
///
/// The reference is emitted once as a measured example with label `l_r`;
/// every other member gets `lut(a) - mean_lut + l_r`. Members whose label
/// comes out non-positive are dropped and counted. The neighborhood's
/// `measured_latency_ms` and `mean_lut_ms` fields are filled in.
pub fn synthesize_virtual_examples(
    nbhd: &mut Neighborhood,
    lut: &OpLatencyTable,
    measured_latency_ms: f64,
) -> Result<VirtualSynthesis> {
    if !(measured_latency_ms.is_finite() && measured_latency_ms > 0.0) {
        return Err(Error::Validation(format!(
            "measured reference latency must be strictly positive, got {measured_latency_ms}"
        )));
    }
    let lut_of = |a: u32| -> Result<f64> {
        Ok(lut.latency_ms(&CellArchitecture::from_index(a)?))
    };
    let mut mean_lut = 0.0;
    for &a in nbhd.members().iter() {
        mean_lut += lut_of(a)?;
    }
    mean_lut /= nbhd.size() as f64;

    let mut examples = Vec::with_capacity(nbhd.size());
    let mut dropped = 0usize;
    for &a in nbhd.members().iter() {
        if a == nbhd.reference() {
            examples.push(VirtualExample {
                arch_index: a,
                label_ms: measured_latency_ms,
                neighborhood_ref: nbhd.reference(),
                is_measured: true,
            });
            continue;
        }
        let label = lut_of(a)? - mean_lut + measured_latency_ms;
        if label <= 0.0 {
            dropped += 1;
            continue;
        }
        examples.push(VirtualExample {
            arch_index: a,
            label_ms: label,
            neighborhood_ref: nbhd.reference(),
            is_measured: false,
        });
    }
    nbhd.measured_latency_ms = Some(measured_latency_ms);
    nbhd.mean_lut_ms = Some(mean_lut);
    Ok(VirtualSynthesis {
        examples,
        dropped_non_positive: dropped,
    })
}

/// Pearson correlation between the layer-wise latencies and the measured
/// latencies of a neighborhood's members on one device. `None` when
/// either series is constant.
pub fn neighborhood_lut_correlation(
    nbhd: &Neighborhood,
    lut: &OpLatencyTable,
    table: &LatencyTable,
    device: &str,
) -> Result<Option<f64>> {
    if nbhd.size() < 2 {
        return Err(Error::Validation(format!(
            "correlation needs at least 2 members, neighborhood of {} has {}",
            nbhd.reference(),
            nbhd.size()
        )));
    }
    let mut lut_series = Vec::with_capacity(nbhd.size());
    let mut true_series = Vec::with_capacity(nbhd.size());
    for &a in nbhd.members().iter() {
        let measured = table.get(device, a).ok_or_else(|| {
            Error::Validation(format!(
                "architecture {a} is not measured on device '{device}'"
            ))
        })?;
        lut_series.push(lut.latency_ms(&CellArchitecture::from_index(a)?));
        true_series.push(measured);
    }
    pearson(&lut_series, &true_series)
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

/// Save neighborhoods as `reference,member` rows (one row per member,
/// reference included), in ascending (reference, member) order.
pub fn save_neighborhoods(neighborhoods: &[Neighborhood], path: impl AsRef<Path>) -> Result<()> {
    let mut sorted: Vec<&Neighborhood> = neighborhoods.iter().collect();
    sorted.sort_by_key(|n| n.reference());
    let mut out = String::from("reference,member\n");
    for n in sorted {
        for &m in n.members().iter() {
            out.push_str(&format!("{},{m}\n", n.reference()));
        }
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Load neighborhoods written by [`save_neighborhoods`].
pub fn load_neighborhoods(path: impl AsRef<Path>) -> Result<Vec<Neighborhood>> {
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
        if !(headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()))
            && got != ["reference", "member"]
        {
            return Err(Error::Parse(format!(
                "{}: expected header 'reference,member', got '{}'",
                path.display(),
                got.join(",")
            )));
        }
    }
    let mut grouped: std::collections::BTreeMap<u32, BTreeSet<u32>> = Default::default();
    for row in reader.records() {
        let record = row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse = |i: usize, name: &str| -> Result<u32> {
            record[i].parse().map_err(|_| {
                Error::Parse(format!(
                    "{} line {line}: cannot parse {name} from '{}'",
                    path.display(),
                    &record[i]
                ))
            })
        };
        let reference = parse(0, "reference")?;
        let member = parse(1, "member")?;
        grouped.entry(reference).or_default().insert(member);
    }
    grouped
        .into_iter()
        .map(|(reference, members)| Neighborhood::new(reference, members, f64::NAN))
        .collect()
}

/// Save virtual examples: `arch_index,label_ms,neighborhood_ref,is_measured`.
pub fn save_virtual_examples(examples: &[VirtualExample], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("arch_index,label_ms,neighborhood_ref,is_measured\n");
    for e in examples {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.arch_index,
            numfmt::sig9(e.label_ms),
            e.neighborhood_ref,
            e.is_measured
        ));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Load virtual examples written by [`save_virtual_examples`].
pub fn load_virtual_examples(path: impl AsRef<Path>) -> Result<Vec<VirtualExample>> {
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
            return Ok(Vec::new());
        }
        if got != ["arch_index", "label_ms", "neighborhood_ref", "is_measured"] {
            return Err(Error::Parse(format!(
                "{}: expected header 'arch_index,label_ms,neighborhood_ref,is_measured', got '{}'",
                path.display(),
                got.join(",")
            )));
        }
    }
    let mut examples = Vec::new();
    for row in reader.records() {
        let record = row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let arch_index: u32 = record[0].parse().map_err(|_| {
            Error::Parse(format!("{} line {line}: bad arch_index '{}'", path.display(), &record[0]))
        })?;
        let label_ms = numfmt::parse_f64(&record[1]).ok_or_else(|| {
            Error::Parse(format!("{} line {line}: bad label_ms '{}'", path.display(), &record[1]))
        })?;
        if !(label_ms.is_finite() && label_ms > 0.0) {
            return Err(Error::Validation(format!(
                "{} line {line}: label_ms must be strictly positive",
                path.display()
            )));
        }
        let neighborhood_ref: u32 = record[2].parse().map_err(|_| {
            Error::Parse(format!("{} line {line}: bad neighborhood_ref '{}'", path.display(), &record[2]))
        })?;
        let is_measured: bool = record[3].parse().map_err(|_| {
            Error::Parse(format!("{} line {line}: bad is_measured '{}'", path.display(), &record[3]))
        })?;
        examples.push(VirtualExample {
            arch_index,
            label_ms,
            neighborhood_ref,
            is_measured,
        });
    }
    Ok(examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};
    use crate::lut::OpLatencyTable;

    fn table_from(rows: &[(&str, u32, f64)]) -> LatencyTable {
        let mut t = LatencyTable::new();
        for &(d, a, l) in rows {
            t.insert(d, a, l).unwrap();
        }
        t
    }

    fn devices(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn delta_zero_keeps_only_reference() {
        let t = table_from(&[
            ("d0", 0, 1.0),
            ("d0", 1, 1.2),
            ("d0", 2, 3.0),
            ("d1", 0, 2.0),
            ("d1", 1, 2.5),
            ("d1", 2, 6.0),
        ]);
        let n = discover_neighborhood(&t, &devices(&["d0", "d1"]), 0, 0.0, 10, MembershipRule::All)
            .unwrap();
        assert_eq!(n.members().iter().copied().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn identical_latency_always_member() {
        let t = table_from(&[
            ("d0", 0, 1.0),
            ("d0", 7, 1.0),
            ("d1", 0, 2.0),
            ("d1", 7, 2.0),
        ]);
        let n = discover_neighborhood(&t, &devices(&["d0", "d1"]), 0, 0.0, 10, MembershipRule::All)
            .unwrap();
        assert!(n.members().contains(&7));
    }

    #[test]
    fn bound_applies_on_every_device() {
        // arch 1 is close on d0 but far on d1
        let t = table_from(&[
            ("d0", 0, 1.0),
            ("d0", 1, 1.02),
            ("d1", 0, 1.0),
            ("d1", 1, 2.0),
        ]);
        let n = discover_neighborhood(&t, &devices(&["d0", "d1"]), 0, 0.05, 10, MembershipRule::All)
            .unwrap();
        assert!(!n.members().contains(&1));
    }

    #[test]
    fn missing_reference_is_error() {
        let t = table_from(&[("d0", 0, 1.0), ("d1", 1, 1.0)]);
        let err =
            discover_neighborhood(&t, &devices(&["d0", "d1"]), 0, 0.1, 10, MembershipRule::All)
                .unwrap_err();
        assert!(err.to_string().contains("d1"), "{err}");
    }

    #[test]
    fn truncation_keeps_smallest_worst_gap() {
        let mut rows = vec![("d0", 0u32, 1.0f64)];
        // gaps 0.01, 0.02, 0.03, 0.04
        for (i, gap) in [(1u32, 0.01), (2, 0.02), (3, 0.03), (4, 0.04)] {
            rows.push(("d0", i, 1.0 + gap));
        }
        let t = table_from(&rows);
        let n = discover_neighborhood(&t, &devices(&["d0"]), 0, 0.05, 3, MembershipRule::All)
            .unwrap();
        assert_eq!(
            n.members().iter().copied().collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn widening_doubles_until_min_size() {
        // members at relative gaps 0.08 and 0.15: delta 0.05 finds none,
        // 0.10 finds one, 0.20 finds both
        let t = table_from(&[
            ("d0", 0, 1.0),
            ("d0", 1, 1.08),
            ("d0", 2, 1.15),
            ("d0", 3, 2.0),
        ]);
        let cfg = NeighborhoodConfig {
            min_size: 3,
            ..NeighborhoodConfig::default()
        };
        let n = discover_neighborhood_widened(&t, &devices(&["d0"]), 0, &cfg).unwrap();
        assert_eq!(n.size(), 3);
        assert_eq!(n.effective_delta, 0.20);
    }

    #[test]
    fn subset_monotone_in_delta() {
        let cfg = SynthConfig {
            n_devices: 5,
            n_archs: 200,
            noise_sigma: 0.05,
            parallelism_range: (0.1, 0.4),
            seed: 31,
        };
        let data = synth_generate(&cfg).unwrap();
        let devs = data.latency.devices();
        let reference = data.latency.device_archs(&devs[0])[10];
        let mut previous: Option<BTreeSet<u32>> = None;
        for delta in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let n = discover_neighborhood(
                &data.latency,
                &devs,
                reference,
                delta,
                usize::MAX,
                MembershipRule::All,
            )
            .unwrap();
            if let Some(prev) = &previous {
                assert!(prev.is_subset(n.members()), "delta {delta}");
            }
            previous = Some(n.members().clone());
        }
    }

    #[test]
    fn reference_selection_stratifies_by_tercile() {
        // 9 archs with increasing latency on a single device
        let rows: Vec<(&str, u32, f64)> =
            (0..9).map(|i| ("d0", i as u32, 1.0 + i as f64)).collect();
        let t = table_from(&rows);
        let refs = select_reference_archs(&t, &devices(&["d0"]), 3, 5).unwrap();
        assert_eq!(refs.len(), 3);
        assert!(refs[0] < 3, "first draw from lowest tercile, got {}", refs[0]);
        assert!((3..6).contains(&refs[1]), "{}", refs[1]);
        assert!((6..9).contains(&refs[2]), "{}", refs[2]);

        let again = select_reference_archs(&t, &devices(&["d0"]), 3, 5).unwrap();
        assert_eq!(refs, again, "deterministic for fixed seed");
    }

    #[test]
    fn reference_selection_k_exceeds_archs() {
        let t = table_from(&[("d0", 0, 1.0)]);
        assert!(select_reference_archs(&t, &devices(&["d0"]), 2, 0).is_err());
    }

    #[test]
    fn synthesis_matches_formula() {
        // Craft costs so members {0,1,2} have lut values {10,12,14}:
        // arch 0 = [0,0,0,0,0,0] -> 6*c0; arch 1 = [1,0,...] -> c1 + 5*c0;
        // arch 2 = [2,0,...] -> c2 + 5*c0.
        // With l_r = 20 at ref 1: mu = 12, labels {18, 20, 22}.
        let c0 = 10.0 / 6.0;
        let lut = OpLatencyTable::new("t", [c0, 12.0 - 5.0 * c0, 14.0 - 5.0 * c0, 0.1, 0.1])
            .unwrap();
        let members: BTreeSet<u32> = [0u32, 1, 2].into_iter().collect();
        let mut nbhd = Neighborhood::new(1, members, 0.05).unwrap();
        let out = synthesize_virtual_examples(&mut nbhd, &lut, 20.0).unwrap();
        assert_eq!(out.dropped_non_positive, 0);
        let labels: Vec<(u32, f64, bool)> = out
            .examples
            .iter()
            .map(|e| (e.arch_index, e.label_ms, e.is_measured))
            .collect();
        assert_eq!(labels.len(), 3);
        assert!((labels[0].1 - 18.0).abs() < 1e-9 && !labels[0].2);
        assert!((labels[1].1 - 20.0).abs() < 1e-9 && labels[1].2);
        assert!((labels[2].1 - 22.0).abs() < 1e-9 && !labels[2].2);
        assert_eq!(nbhd.mean_lut_ms(), Some(12.0));
        assert_eq!(nbhd.measured_latency_ms(), Some(20.0));
    }

    #[test]
    fn singleton_neighborhood_yields_only_measured() {
        let lut = OpLatencyTable::new("t", [0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let mut nbhd = Neighborhood::new(5, BTreeSet::from([5u32]), 0.0).unwrap();
        let out = synthesize_virtual_examples(&mut nbhd, &lut, 20.0).unwrap();
        assert_eq!(out.examples.len(), 1);
        assert!(out.examples[0].is_measured);
        assert_eq!(out.examples[0].label_ms, 20.0);
    }

    #[test]
    fn offset_identity_holds() {
        // substituting the reference's virtual label for l_r, the mean of
        // all labels equals l_r (algebraic identity)
        let lut = OpLatencyTable::new("t", [0.05, 0.31, 0.47, 1.13, 0.59]).unwrap();
        let members: BTreeSet<u32> = [3u32, 77, 1500, 9000, 15000].into_iter().collect();
        let mut nbhd = Neighborhood::new(77, members.clone(), 0.1).unwrap();
        let l_r = 9.5;
        let out = synthesize_virtual_examples(&mut nbhd, &lut, l_r).unwrap();
        assert_eq!(out.dropped_non_positive, 0);
        let mu = nbhd.mean_lut_ms().unwrap();
        let mean_with_ref_virtual: f64 = out
            .examples
            .iter()
            .map(|e| {
                if e.is_measured {
                    lut.latency_ms(&CellArchitecture::from_index(e.arch_index).unwrap()) - mu + l_r
                } else {
                    e.label_ms
                }
            })
            .sum::<f64>()
            / out.examples.len() as f64;
        assert!(
            (mean_with_ref_virtual - l_r).abs() <= 1e-9 * l_r,
            "{mean_with_ref_virtual} vs {l_r}"
        );
    }

    #[test]
    fn non_positive_labels_dropped() {
        // big spread, tiny measured latency -> low members underflow zero
        let lut = OpLatencyTable::new("t", [0.001, 1.0, 2.0, 4.0, 8.0]).unwrap();
        let members: BTreeSet<u32> = [0u32, 4, 9374].into_iter().collect();
        // archs: 0 => all none (lut ~0.006), 4 => [4,0,0,0,0,0] (8.005),
        // 9374 = 4+4*5+4*25+4*125+4*625+2*3125... just check drops happen
        let mut nbhd = Neighborhood::new(4, members, 0.1).unwrap();
        let out = synthesize_virtual_examples(&mut nbhd, &lut, 0.5).unwrap();
        assert!(out.dropped_non_positive > 0);
        for e in &out.examples {
            assert!(e.label_ms > 0.0);
        }
    }

    #[test]
    fn correlation_perfect_affine() {
        // device latencies affinely related to lut values
        let lut = OpLatencyTable::new("t", [0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut t = LatencyTable::new();
        for a in [1u32, 2, 3, 4] {
            let arch = CellArchitecture::from_index(a).unwrap();
            t.insert("dev", a, 2.0 * lut.latency_ms(&arch) + 3.0).unwrap();
        }
        let members: BTreeSet<u32> = [1u32, 2, 3, 4].into_iter().collect();
        let nbhd = Neighborhood::new(1, members, 0.1).unwrap();
        let r = neighborhood_lut_correlation(&nbhd, &lut, &t, "dev")
            .unwrap()
            .unwrap();
        assert!((r - 1.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn correlation_undefined_on_constant_lut() {
        // two archs with identical op multisets -> identical lut values
        let lut = OpLatencyTable::new("t", [0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let mut t = LatencyTable::new();
        t.insert("dev", 1, 1.0).unwrap();
        t.insert("dev", 2, 2.0).unwrap();
        let nbhd = Neighborhood::new(1, BTreeSet::from([1u32, 2]), 0.1).unwrap();
        let r = neighborhood_lut_correlation(&nbhd, &lut, &t, "dev").unwrap();
        assert!(r.is_none());
    }

    #[test]
    fn pairwise_differences_preserved() {
        let lut = OpLatencyTable::new("t", [0.01, 0.33, 0.71, 1.91, 0.42]).unwrap();
        let members: BTreeSet<u32> = [12u32, 340, 5000, 7777, 15000, 9000].into_iter().collect();
        let mut nbhd = Neighborhood::new(340, members, 0.1).unwrap();
        let out = synthesize_virtual_examples(&mut nbhd, &lut, 11.0).unwrap();
        let virt: Vec<&VirtualExample> =
            out.examples.iter().filter(|e| !e.is_measured).collect();
        for i in 0..virt.len() {
            for j in (i + 1)..virt.len() {
                let label_diff = virt[i].label_ms - virt[j].label_ms;
                let lut_diff = lut
                    .latency_ms(&CellArchitecture::from_index(virt[i].arch_index).unwrap())
                    - lut.latency_ms(&CellArchitecture::from_index(virt[j].arch_index).unwrap());
                assert!(
                    (label_diff - lut_diff).abs() <= 1e-9 * lut_diff.abs().max(1.0),
                    "{label_diff} vs {lut_diff}"
                );
            }
        }
    }

    #[test]
    fn virtual_csv_round_trip() {
        let examples = vec![
            VirtualExample {
                arch_index: 3,
                label_ms: 1.5,
                neighborhood_ref: 3,
                is_measured: true,
            },
            VirtualExample {
                arch_index: 9,
                label_ms: 2.25,
                neighborhood_ref: 3,
                is_measured: false,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("virtual.csv");
        save_virtual_examples(&examples, &p).unwrap();
        assert_eq!(load_virtual_examples(&p).unwrap(), examples);
    }
}
