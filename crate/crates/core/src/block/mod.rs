//! Emulation of a partitioned floating-point datapath.
//!
//! Operands are split into `P × P` matrix blocks (or length-`P` vector
//! blocks), zero-padded to a multiple of `P`. Arithmetic runs in the chosen
//! precision with one rounding per scalar operation. Inner products use a
//! fixed reduction order: element-wise products per `P`-chunk, a balanced
//! pairwise adder tree over the chunk (padded with zeros to a power of two),
//! and a left-to-right accumulator across chunks. Results are therefore
//! bit-reproducible for a given `(P, precision)`.

mod cost;
mod sdkf;

pub use cost::{
    cycle_cost, default_budget_words, memory_footprint, resource_estimate, ArithConfig, ArithUnit,
    CycleCost, MemoryFootprint,
};
pub use sdkf::{sdkf_step_blocked, sdkf_step_blocked_typed};

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar type of the datapath.
pub trait Real:
    Copy
    + Debug
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const PRECISION: Precision;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const PRECISION: Precision = Precision::Binary32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const PRECISION: Precision = Precision::Binary64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "binary32", alias = "32")]
    Binary32,
    #[serde(rename = "binary64", alias = "64")]
    Binary64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::Binary32 => 32,
            Precision::Binary64 => 64,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(Precision::Binary32),
            64 => Ok(Precision::Binary64),
            _ => Err(Error::InvalidInput(format!(
                "precision must be 32 or 64, got {bits}"
            ))),
        }
    }
}

fn padded(n: usize, p: usize) -> usize {
    n.div_ceil(p) * p
}

fn check_p(p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidInput(
            "degree of parallelization must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Matrix stored as a row-major raster of row-major `P × P` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedMatrix<T> {
    rows: usize,
    cols: usize,
    p: usize,
    data: Vec<T>,
}

impl<T: Real> BlockedMatrix<T> {
    pub fn zeros(rows: usize, cols: usize, p: usize) -> Result<Self> {
        check_p(p)?;
        Ok(BlockedMatrix {
            rows,
            cols,
            p,
            data: vec![T::ZERO; padded(rows, p) * padded(cols, p)],
        })
    }

    pub fn partition(m: &DMatrix<T>, p: usize) -> Result<Self> {
        let mut out = Self::zeros(m.nrows(), m.ncols(), p)?;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.set(i, j, m[(i, j)]);
            }
        }
        Ok(out)
    }

    /// Partitions an `f64` matrix, rounding every entry to `T`.
    pub fn from_f64(m: &DMatrix<f64>, p: usize) -> Result<Self> {
        Self::partition(&m.map(T::from_f64), p)
    }

    pub fn unpartition(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        self.unpartition().map(T::to_f64)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `(block rows, block cols)`.
    pub fn raster(&self) -> (usize, usize) {
        (
            padded(self.rows, self.p) / self.p,
            padded(self.cols, self.p) / self.p,
        )
    }

    pub fn padded_rows(&self) -> usize {
        padded(self.rows, self.p)
    }

    pub fn padded_cols(&self) -> usize {
        padded(self.cols, self.p)
    }

    /// The `(bi, bj)` block as a row-major slice of `P²` entries.
    pub fn block(&self, bi: usize, bj: usize) -> &[T] {
        let start = (bi * self.raster().1 + bj) * self.p * self.p;
        &self.data[start..start + self.p * self.p]
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let p = self.p;
        let block_cols = self.padded_cols() / p;
        ((i / p) * block_cols + j / p) * p * p + (i % p) * p + j % p
    }

    /// Entry of the padded matrix (padding reads as zero).
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[self.index(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.index(i, j);
        self.data[k] = v;
    }

    /// True when every padded entry is exactly zero.
    pub fn padding_is_zero(&self) -> bool {
        (0..self.padded_rows()).all(|i| {
            (0..self.padded_cols())
                .all(|j| (i < self.rows && j < self.cols) || self.get(i, j) == T::ZERO)
        })
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if (self.rows, self.cols, self.p) != (other.rows, other.cols, other.p) {
            return Err(Error::DimensionMismatch(format!(
                "blocked operands {}×{}/P{} and {}×{}/P{}",
                self.rows, self.cols, self.p, other.rows, other.cols, other.p
            )));
        }
        Ok(())
    }
}

/// Vector stored as consecutive length-`P` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedVector<T> {
    len: usize,
    p: usize,
    data: Vec<T>,
}

impl<T: Real> BlockedVector<T> {
    pub fn zeros(len: usize, p: usize) -> Result<Self> {
        check_p(p)?;
        Ok(BlockedVector {
            len,
            p,
            data: vec![T::ZERO; padded(len, p)],
        })
    }

    pub fn partition(v: &DVector<T>, p: usize) -> Result<Self> {
        let mut out = Self::zeros(v.len(), p)?;
        out.data[..v.len()].copy_from_slice(v.as_slice());
        Ok(out)
    }

    pub fn from_f64(v: &DVector<f64>, p: usize) -> Result<Self> {
        Self::partition(&v.map(T::from_f64), p)
    }

    pub fn from_slice(v: &[T], p: usize) -> Result<Self> {
        let mut out = Self::zeros(v.len(), p)?;
        out.data[..v.len()].copy_from_slice(v);
        Ok(out)
    }

    pub fn unpartition(&self) -> DVector<T> {
        DVector::from_column_slice(&self.data[..self.len])
    }

    pub fn to_f64(&self) -> DVector<f64> {
        self.unpartition().map(T::to_f64)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn blocks(&self) -> usize {
        self.data.len() / self.p
    }

    pub fn block(&self, b: usize) -> &[T] {
        &self.data[b * self.p..(b + 1) * self.p]
    }

    /// Padded entries, the logical vector followed by zeros.
    pub fn as_padded(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, i: usize) -> T {
        self.data[i]
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if (self.len, self.p) != (other.len, other.p) {
            return Err(Error::DimensionMismatch(format!(
                "blocked vectors {}/P{} and {}/P{}",
                self.len, self.p, other.len, other.p
            )));
        }
        Ok(())
    }
}

/// Balanced pairwise sum, padding with zeros to the next power of two.
fn tree_sum<T: Real>(values: &mut Vec<T>) -> T {
    let width = values.len().next_power_of_two();
    values.resize(width, T::ZERO);
    let mut n = width;
    while n > 1 {
        for k in 0..n / 2 {
            values[k] = values[2 * k] + values[2 * k + 1];
        }
        n /= 2;
    }
    values[0]
}

/// Inner product over `P`-chunks of two equally long sequences.
fn chunked_dot<T: Real>(
    a: impl Iterator<Item = T>,
    b: impl Iterator<Item = T>,
    n: usize,
    p: usize,
) -> T {
    let mut products: Vec<T> = a.zip(b).map(|(x, y)| x * y).collect();
    debug_assert_eq!(products.len(), n);
    products.resize(padded(n, p), T::ZERO);
    let mut chunk = Vec::with_capacity(p.next_power_of_two());
    let mut acc = T::ZERO;
    for (c, part) in products.chunks(p).enumerate() {
        chunk.clear();
        chunk.extend_from_slice(part);
        let s = tree_sum(&mut chunk);
        acc = if c == 0 { s } else { acc + s };
    }
    acc
}

/// Adder-tree inner product (iv).
pub fn inner_product_tree<T: Real>(v1: &[T], v2: &[T], p: usize) -> Result<T> {
    check_p(p)?;
    if v1.len() != v2.len() {
        return Err(Error::DimensionMismatch(format!(
            "inner product of lengths {} and {}",
            v1.len(),
            v2.len()
        )));
    }
    Ok(chunked_dot(
        v1.iter().copied(),
        v2.iter().copied(),
        v1.len(),
        p,
    ))
}

/// `A ± B` element-wise (i).
pub fn mat_add<T: Real>(a: &BlockedMatrix<T>, b: &BlockedMatrix<T>) -> Result<BlockedMatrix<T>> {
    a.same_shape(b)?;
    Ok(BlockedMatrix {
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
        ..a.clone()
    })
}

pub fn mat_sub<T: Real>(a: &BlockedMatrix<T>, b: &BlockedMatrix<T>) -> Result<BlockedMatrix<T>> {
    a.same_shape(b)?;
    Ok(BlockedMatrix {
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x - y).collect(),
        ..a.clone()
    })
}

/// `a ± b` and `α a` (ii).
pub fn vec_add<T: Real>(a: &BlockedVector<T>, b: &BlockedVector<T>) -> Result<BlockedVector<T>> {
    a.same_shape(b)?;
    Ok(BlockedVector {
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
        ..a.clone()
    })
}

pub fn vec_sub<T: Real>(a: &BlockedVector<T>, b: &BlockedVector<T>) -> Result<BlockedVector<T>> {
    a.same_shape(b)?;
    Ok(BlockedVector {
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x - y).collect(),
        ..a.clone()
    })
}

pub fn vec_scale<T: Real>(a: &BlockedVector<T>, alpha: T) -> BlockedVector<T> {
    BlockedVector {
        data: a.data.iter().map(|&x| x * alpha).collect(),
        ..a.clone()
    }
}

/// `u vᵀ` (iii).
pub fn outer<T: Real>(u: &BlockedVector<T>, v: &BlockedVector<T>) -> Result<BlockedMatrix<T>> {
    if u.p != v.p {
        return Err(Error::DimensionMismatch(
            "outer product operands use different P".into(),
        ));
    }
    let mut m = BlockedMatrix::zeros(u.len, v.len, u.p)?;
    for i in 0..u.len {
        for j in 0..v.len {
            m.set(i, j, u.data[i] * v.data[j]);
        }
    }
    Ok(m)
}

/// `M v`, one adder-tree inner product per row (v).
pub fn matvec_blocked<T: Real>(
    m: &BlockedMatrix<T>,
    v: &BlockedVector<T>,
) -> Result<BlockedVector<T>> {
    if m.cols != v.len || m.p != v.p {
        return Err(Error::DimensionMismatch(format!(
            "{}×{} matrix times length-{} vector",
            m.rows, m.cols, v.len
        )));
    }
    let n = m.padded_cols();
    let mut out = BlockedVector::zeros(m.rows, m.p)?;
    for i in 0..m.rows {
        out.data[i] = chunked_dot((0..n).map(|j| m.get(i, j)), v.data.iter().copied(), n, m.p);
    }
    Ok(out)
}

/// `Mᵀ v` (equivalently `vᵀ M`), one adder-tree inner product per column.
pub fn matvec_transposed<T: Real>(
    m: &BlockedMatrix<T>,
    v: &BlockedVector<T>,
) -> Result<BlockedVector<T>> {
    if m.rows != v.len || m.p != v.p {
        return Err(Error::DimensionMismatch(format!(
            "length-{} vector times {}×{} matrix",
            v.len, m.rows, m.cols
        )));
    }
    let n = m.padded_rows();
    let mut out = BlockedVector::zeros(m.cols, m.p)?;
    for j in 0..m.cols {
        out.data[j] = chunked_dot((0..n).map(|i| m.get(i, j)), v.data.iter().copied(), n, m.p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_shapes_and_padding() {
        let m4 = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64);
        let b = BlockedMatrix::partition(&m4, 4).unwrap();
        assert_eq!(b.raster(), (1, 1));
        assert_eq!(b.block(0, 0)[5], 5.0);

        let m6 = DMatrix::from_fn(6, 6, |i, j| 1.0 + (i * 6 + j) as f64);
        let b = BlockedMatrix::partition(&m6, 4).unwrap();
        assert_eq!(b.raster(), (2, 2));
        assert_eq!((b.padded_rows(), b.padded_cols()), (8, 8));
        assert!(b.padding_is_zero());
        assert_eq!(b.get(7, 7), 0.0);
        assert_eq!(b.block(1, 0)[0], m6[(4, 0)]);
        assert_eq!(b.unpartition(), m6);
        assert!(BlockedMatrix::partition(&m6, 0).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let ones = [1.0f32; 5];
        assert_eq!(inner_product_tree(&ones, &ones, 4).unwrap(), 5.0);
        let a = [0.1f32, 0.7, 1.3, -2.2, 5.5, 0.03, 9.0];
        let r1 = inner_product_tree(&a, &a, 4).unwrap();
        let r2 = inner_product_tree(&a, &a, 4).unwrap();
        assert_eq!(r1.to_bits(), r2.to_bits());
        assert!(inner_product_tree(&a, &ones, 4).is_err());
    }

    #[test]
    fn cancellation_in_single_precision() {
        let v = [1e8f32, 1.0, -1e8, 1.0];
        let ones = [1.0f32; 4];
        let tree = inner_product_tree(&v, &ones, 4).unwrap();
        let oracle: f64 = [1e8, 1.0, -1e8, 1.0].iter().sum();
        assert_eq!(oracle, 2.0);
        // (1e8 + 1) rounds back to 1e8 in binary32, as does (-1e8 + 1).
        assert_eq!(tree, 0.0);
        assert_ne!(tree as f64, oracle);
    }

    #[test]
    fn tree_order_is_pairwise() {
        // ((a + b) + (c + d)) with a tail padded by zeros.
        let v = [1.0f64, 2.0, 3.0];
        let ones = [1.0f64; 3];
        assert_eq!(inner_product_tree(&v, &ones, 3).unwrap(), 6.0);
        assert_eq!(inner_product_tree(&v, &ones, 1).unwrap(), 6.0);
    }

    #[test]
    fn matvec_examples() {
        let v = DVector::from_vec(vec![0.1, -3.0, 2.5, 7.25, 1e-3]);
        let bv = BlockedVector::partition(&v, 2).unwrap();
        let id = BlockedMatrix::partition(&DMatrix::identity(5, 5), 2).unwrap();
        assert_eq!(matvec_blocked(&id, &bv).unwrap().unpartition(), v);
        assert_eq!(matvec_transposed(&id, &bv).unwrap().unpartition(), v);
        let zero = BlockedMatrix::<f64>::zeros(5, 5, 2).unwrap();
        assert!(matvec_blocked(&zero, &bv)
            .unwrap()
            .unpartition()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn element_wise_primitives() {
        let a = DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64);
        let b = DMatrix::from_fn(3, 3, |i, j| (i * j) as f64);
        let ba = BlockedMatrix::partition(&a, 2).unwrap();
        let bb = BlockedMatrix::partition(&b, 2).unwrap();
        assert_eq!(mat_add(&ba, &bb).unwrap().unpartition(), &a + &b);
        assert_eq!(mat_sub(&ba, &bb).unwrap().unpartition(), &a - &b);
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let w = DVector::from_vec(vec![-1.0, 0.5, 4.0]);
        let (bu, bw) = (
            BlockedVector::partition(&u, 2).unwrap(),
            BlockedVector::partition(&w, 2).unwrap(),
        );
        assert_eq!(vec_add(&bu, &bw).unwrap().unpartition(), &u + &w);
        assert_eq!(vec_sub(&bu, &bw).unwrap().unpartition(), &u - &w);
        assert_eq!(vec_scale(&bu, 2.0).unpartition(), &u * 2.0);
        assert_eq!(outer(&bu, &bw).unwrap().unpartition(), &u * w.transpose());
        assert!(outer(&bu, &BlockedVector::partition(&w, 3).unwrap()).is_err());
    }
}
