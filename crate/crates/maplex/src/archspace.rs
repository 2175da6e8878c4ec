//! Cell architectures from a 5-operation, 6-edge search space.
//!
//! A cell is a 4-node DAG with 6 edges, each edge carrying one of 5
//! candidate operations, for 5^6 = 15,625 architectures total. Edges are
//! ordered canonically (the (target, source) lexicographic order of the
//! DAG), and that order is baked into the index: an architecture's index
//! is its base-5 digit expansion, `Σ edge_ops[e] · 5^e`. Persisted files
//! store indices only, so the edge order lives in exactly one place.

use crate::error::{Error, Result};

/// Number of candidate operations per edge.
pub const NUM_OPS: usize = 5;
/// Number of edges in a cell.
pub const NUM_EDGES: usize = 6;
/// Total number of architectures in the space (5^6).
pub const NUM_ARCHS: u32 = 15_625;
/// Length of the one-hot encoding (6 edges x 5 ops).
pub const ONE_HOT_LEN: usize = NUM_EDGES * NUM_OPS;

/// One of the five candidate edge operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operation {
    None = 0,
    SkipConnect = 1,
    Conv1x1 = 2,
    Conv3x3 = 3,
    AvgPool3x3 = 4,
}

impl Operation {
    pub const ALL: [Operation; NUM_OPS] = [
        Operation::None,
        Operation::SkipConnect,
        Operation::Conv1x1,
        Operation::Conv3x3,
        Operation::AvgPool3x3,
    ];

    pub fn from_id(id: u8) -> Result<Operation> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Validation(format!("operation id {id} out of range [0,4]")))
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Operation::None => "none",
            Operation::SkipConnect => "skip_connect",
            Operation::Conv1x1 => "conv_1x1",
            Operation::Conv3x3 => "conv_3x3",
            Operation::AvgPool3x3 => "avg_pool_3x3",
        }
    }

    pub fn from_name(name: &str) -> Result<Operation> {
        Self::ALL
            .into_iter()
            .find(|op| op.name() == name)
            .ok_or_else(|| Error::Validation(format!("unknown operation name '{name}'")))
    }
}

/// A cell architecture: one operation id per edge, in canonical edge order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellArchitecture {
    edge_ops: [u8; NUM_EDGES],
}

impl CellArchitecture {
    /// Build from raw edge-op ids, validating each id.
    pub fn new(edge_ops: [u8; NUM_EDGES]) -> Result<CellArchitecture> {
        for (e, &op) in edge_ops.iter().enumerate() {
            if op as usize >= NUM_OPS {
                return Err(Error::Validation(format!(
                    "edge {e} has operation id {op}, outside [0,4]"
                )));
            }
        }
        Ok(CellArchitecture { edge_ops })
    }

    /// Decode an architecture index (base-5 digit expansion).
    pub fn from_index(index: u32) -> Result<CellArchitecture> {
        if index >= NUM_ARCHS {
            return Err(Error::Validation(format!(
                "architecture index {index} out of range [0,{}]",
                NUM_ARCHS - 1
            )));
        }
        let mut rest = index;
        let mut edge_ops = [0u8; NUM_EDGES];
        for op in edge_ops.iter_mut() {
            *op = (rest % NUM_OPS as u32) as u8;
            rest /= NUM_OPS as u32;
        }
        Ok(CellArchitecture { edge_ops })
    }

    /// The architecture's index: `Σ edge_ops[e] · 5^e`.
    pub fn index(&self) -> u32 {
        self.edge_ops
            .iter()
            .rev()
            .fold(0u32, |acc, &op| acc * NUM_OPS as u32 + op as u32)
    }

    pub fn edge_ops(&self) -> &[u8; NUM_EDGES] {
        &self.edge_ops
    }

    pub fn operation(&self, edge: usize) -> Operation {
        Operation::ALL[self.edge_ops[edge] as usize]
    }

    /// One-hot encoding of length 30: position `e·5 + edge_ops[e]` is 1.
    pub fn one_hot(&self) -> [f64; ONE_HOT_LEN] {
        let mut v = [0.0; ONE_HOT_LEN];
        for (e, &op) in self.edge_ops.iter().enumerate() {
            v[e * NUM_OPS + op as usize] = 1.0;
        }
        v
    }

    /// Per-operation edge counts; entries sum to 6.
    pub fn op_counts(&self) -> [usize; NUM_OPS] {
        let mut counts = [0usize; NUM_OPS];
        for &op in &self.edge_ops {
            counts[op as usize] += 1;
        }
        counts
    }

    /// Number of edges carrying an operation other than `none`.
    pub fn active_edges(&self) -> usize {
        self.edge_ops.iter().filter(|&&op| op != 0).count()
    }

    /// Iterate over the full space in index order.
    pub fn all() -> impl Iterator<Item = CellArchitecture> {
        (0..NUM_ARCHS).map(|i| CellArchitecture::from_index(i).unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn from_index_zero_and_max() {
        assert_eq!(
            CellArchitecture::from_index(0).unwrap().edge_ops(),
            &[0, 0, 0, 0, 0, 0]
        );
        assert_eq!(
            CellArchitecture::from_index(15_624).unwrap().edge_ops(),
            &[4, 4, 4, 4, 4, 4]
        );
    }

    #[test]
    fn from_index_hand_expansion() {
        // 7 = 2 + 1*5
        assert_eq!(
            CellArchitecture::from_index(7).unwrap().edge_ops(),
            &[2, 1, 0, 0, 0, 0]
        );
    }

    #[test]
    fn from_index_out_of_range() {
        assert!(matches!(
            CellArchitecture::from_index(15_625),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn new_rejects_bad_op() {
        assert!(CellArchitecture::new([0, 0, 5, 0, 0, 0]).is_err());
    }

    #[test]
    fn round_trip_exhaustive() {
        for i in 0..NUM_ARCHS {
            assert_eq!(CellArchitecture::from_index(i).unwrap().index(), i);
        }
    }

    #[test]
    fn one_hot_layout() {
        let uniform = CellArchitecture::new([0; 6]).unwrap();
        let ones: Vec<usize> = uniform
            .one_hot()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(ones, vec![0, 5, 10, 15, 20, 25]);

        let arch = CellArchitecture::new([2, 1, 0, 0, 0, 0]).unwrap();
        let ones: Vec<usize> = arch
            .one_hot()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(ones, vec![2, 6, 10, 15, 20, 25]);
    }

    #[test]
    fn one_hot_injective_over_space() {
        let mut seen = HashSet::new();
        for arch in CellArchitecture::all() {
            let key: Vec<u8> = arch.one_hot().iter().map(|&v| v as u8).collect();
            assert!(seen.insert(key), "duplicate encoding at {}", arch.index());
        }
        assert_eq!(seen.len(), NUM_ARCHS as usize);
    }

    #[test]
    fn op_counts_tally() {
        assert_eq!(
            CellArchitecture::new([0; 6]).unwrap().op_counts(),
            [6, 0, 0, 0, 0]
        );
        assert_eq!(
            CellArchitecture::new([2, 1, 0, 0, 0, 0]).unwrap().op_counts(),
            [4, 1, 1, 0, 0]
        );
        assert_eq!(
            CellArchitecture::new([4, 3, 2, 1, 0, 1]).unwrap().op_counts(),
            [1, 2, 1, 1, 1]
        );
    }

    #[test]
    fn operation_name_bijection() {
        for op in Operation::ALL {
            assert_eq!(Operation::from_name(op.name()).unwrap(), op);
            assert_eq!(Operation::from_id(op.id()).unwrap(), op);
        }
        assert!(Operation::from_name("conv_5x5").is_err());
        assert!(Operation::from_id(5).is_err());
    }

    proptest! {
        #[test]
        fn one_hot_sums_to_six(i in 0u32..NUM_ARCHS) {
            let arch = CellArchitecture::from_index(i).unwrap();
            let sum: f64 = arch.one_hot().iter().sum();
            prop_assert_eq!(sum, 6.0);
            let counts = arch.op_counts();
            prop_assert_eq!(counts.iter().sum::<usize>(), 6);
        }
    }
}
