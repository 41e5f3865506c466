use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Result};

/// Dense row-major 2D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(crate::error::shape_err!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.cols + col]
    }

    #[inline]
    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.cols + col]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Iterates `(row, col, &value)` in row-major order.
    pub fn iter_indexed(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let cols = self.cols;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i / cols, i % cols, v))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Reduces every `factor`×`factor` block with `fold`, which sees the block in row-major order.
    pub fn pool<U>(&self, factor: usize, mut fold: impl FnMut(&mut dyn Iterator<Item = &T>) -> U) -> Result<Grid<U>> {
        if factor == 0 || !self.rows.is_multiple_of(factor) || !self.cols.is_multiple_of(factor) {
            return Err(config_err!(
                "pooling factor {factor} does not divide grid {}x{}",
                self.rows,
                self.cols
            ));
        }
        let (out_rows, out_cols) = (self.rows / factor, self.cols / factor);
        let mut data = Vec::with_capacity(out_rows * out_cols);
        for br in 0..out_rows {
            for bc in 0..out_cols {
                let mut block = (0..factor).flat_map(|dr| {
                    let row = br * factor + dr;
                    let start = row * self.cols + bc * factor;
                    self.data[start..start + factor].iter()
                });
                data.push(fold(&mut block));
            }
        }
        Ok(Grid {
            rows: out_rows,
            cols: out_cols,
            data,
        })
    }
}
