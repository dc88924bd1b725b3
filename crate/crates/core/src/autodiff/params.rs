use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

/// What a parameter block does inside its layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    Scalar,
}

/// Registry key of a parameter block: (network, layer, role).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamKey {
    pub network: String,
    pub layer: usize,
    pub role: ParamRole,
}

impl ParamKey {
    pub fn new(network: impl Into<String>, layer: usize, role: ParamRole) -> Self {
        Self {
            network: network.into(),
            layer,
            role,
        }
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{:?}", self.network, self.layer, self.role)
    }
}

/// A registered block: a `rows x cols` matrix stored row-major at `offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub key: ParamKey,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat array of trainable reals with a registry of named blocks.
///
/// Blocks are only ever appended, so registry ranges are disjoint and tile the
/// array exactly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    blocks: Vec<ParamBlock>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a block, filling it from `init` in row-major order.
    pub fn register(
        &mut self,
        key: ParamKey,
        rows: usize,
        cols: usize,
        mut init: impl FnMut(usize, usize) -> f64,
    ) -> ParamBlock {
        assert!(self.find(&key).is_none(), "parameter block {key} registered twice");
        let offset = self.values.len();
        for r in 0..rows {
            for c in 0..cols {
                self.values.push(init(r, c));
            }
        }
        let block = ParamBlock {
            key,
            offset,
            rows,
            cols,
        };
        self.blocks.push(block.clone());
        block
    }

    pub fn find(&self, key: &ParamKey) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| &b.key == key)
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block_values(&self, block: &ParamBlock) -> &[f64] {
        &self.values[block.range()]
    }

    pub fn block_values_mut(&mut self, block: &ParamBlock) -> &mut [f64] {
        let r = block.range();
        &mut self.values[r]
    }

    /// Indices of all blocks owned by `network`.
    pub fn network_range(&self, network: &str) -> Option<Range<usize>> {
        let mut it = self.blocks.iter().filter(|b| b.key.network == network);
        let first = it.next()?;
        let mut range = first.range();
        for b in it {
            range.start = range.start.min(b.offset);
            range.end = range.end.max(b.offset + b.len());
        }
        Some(range)
    }

    /// Rebuild from stored parts, checking that the blocks tile the values.
    pub fn from_parts(values: Vec<f64>, blocks: Vec<ParamBlock>) -> Result<Self, String> {
        let mut cursor = 0;
        for b in &blocks {
            if b.offset != cursor {
                return Err(format!(
                    "block {} starts at {} but previous block ended at {}",
                    b.key, b.offset, cursor
                ));
            }
            cursor += b.len();
        }
        if cursor != values.len() {
            return Err(format!(
                "blocks cover {cursor} values but the array holds {}",
                values.len()
            ));
        }
        Ok(Self { values, blocks })
    }
}
