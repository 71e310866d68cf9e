use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// One named block inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamBlock {
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offset table describing how a flat vector splits into weight blocks.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        let offset = self.len();
        self.blocks.push(ParamBlock {
            name: name.into(),
            offset,
            rows,
            cols,
        });
        offset
    }

    /// Appends every block of `other`, prefixing names, and returns the base offset.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamLayout) -> usize {
        let base = self.len();
        for b in &other.blocks {
            self.blocks.push(ParamBlock {
                name: format!("{prefix}.{}", b.name),
                offset: base + b.offset,
                rows: b.rows,
                cols: b.cols,
            });
        }
        base
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Checks that blocks tile `0..len` without gaps.
    pub fn validate(&self) -> Result<()> {
        let mut expected = 0;
        for b in &self.blocks {
            if b.offset != expected {
                return Err(Error::Checkpoint(format!(
                    "layout block `{}` starts at {} but previous block ends at {}",
                    b.name, b.offset, expected
                )));
            }
            expected += b.len();
        }
        Ok(())
    }
}

/// A flat parameter vector together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams<T> {
    pub layout: ParamLayout,
    pub values: Vec<T>,
}

impl<T: Scalar> FlatParams<T> {
    pub fn zeros(layout: ParamLayout) -> Self {
        let values = vec![T::zero(); layout.len()];
        FlatParams { layout, values }
    }

    pub fn new(layout: ParamLayout, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::shape("FlatParams::new", layout.len(), values.len()));
        }
        Ok(FlatParams { layout, values })
    }

    pub fn block(&self, name: &str) -> Option<&[T]> {
        self.layout.block(name).map(|b| &self.values[b.range()])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Concatenates blocks into one flat vector laid out as `layout`.
pub fn flatten<T: Scalar>(layout: &ParamLayout, blocks: &[&[T]]) -> Result<FlatParams<T>> {
    if blocks.len() != layout.blocks().len() {
        return Err(Error::shape("flatten (block count)", layout.blocks().len(), blocks.len()));
    }
    let mut values = Vec::with_capacity(layout.len());
    for (b, data) in layout.blocks().iter().zip(blocks) {
        if data.len() != b.len() {
            return Err(Error::shape("flatten (block length)", b.len(), data.len()));
        }
        values.extend_from_slice(data);
    }
    Ok(FlatParams {
        layout: layout.clone(),
        values,
    })
}

/// Splits a flat vector back into its blocks.
pub fn unflatten<T: Scalar>(params: &FlatParams<T>) -> Result<Vec<Vec<T>>> {
    params.layout.validate()?;
    if params.values.len() != params.layout.len() {
        return Err(Error::shape("unflatten", params.layout.len(), params.values.len()));
    }
    Ok(params
        .layout
        .blocks()
        .iter()
        .map(|b| params.values[b.range()].to_vec())
        .collect())
}
