//! Rank-4 tensor container in batch/channel/height/width order, plus the
//! elementwise and channel-structural primitives the rest of the crate
//! builds on.
//!
//! Layout is fixed row-major n -> c -> h -> w and there is no broadcasting:
//! every shape mismatch is a hard error.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::fmt;

/// Shape of a [`Tensor`], kept separate so errors can print it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(n={}, c={}, h={}, w={})", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 numeric array. The universal value type of the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Shape,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor from a flat row-major buffer. The buffer length must
    /// equal `n*c*h*w` exactly.
    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<S>) -> Result<Self> {
        let shape = Shape { n, c, h, w };
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("all tensor dims must be >= 1, got {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self::filled(n, c, h, w, S::zero())
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: S) -> Self {
        let shape = Shape { n, c, h, w };
        assert!(!shape.is_empty(), "all tensor dims must be >= 1, got {shape}");
        Self { shape, data: vec![value; shape.len()] }
    }

    /// Fills in flat row-major order (n outermost, w innermost).
    pub fn from_fn(n: usize, c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        data.push(f(ni, ci, hi, wi));
                    }
                }
            }
        }
        Self::from_vec(n, c, h, w, data).expect("from_fn produces a consistent buffer")
    }

    pub fn n(&self) -> usize {
        self.shape.n
    }

    pub fn c(&self) -> usize {
        self.shape.c
    }

    pub fn h(&self) -> usize {
        self.shape.h
    }

    pub fn w(&self) -> usize {
        self.shape.w
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.shape.n && c < self.shape.c && h < self.shape.h && w < self.shape.w);
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> S {
        self.data[self.idx(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: S) {
        let i = self.idx(n, c, h, w);
        self.data[i] = value;
    }

    /// One image plane (fixed n and c) as a contiguous slice of length h*w.
    pub fn plane(&self, n: usize, c: usize) -> &[S] {
        let start = self.idx(n, c, 0, 0);
        &self.data[start..start + self.shape.h * self.shape.w]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, factor: S) -> Self {
        self.map(|v| v * factor)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{op} requires identical shapes, got {} and {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Elementwise (Hadamard) product of two identically shaped tensors.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "hadamard")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).collect();
        Ok(Self { shape: self.shape, data })
    }

    /// Elementwise sum of two identically shaped tensors.
    pub fn pixelwise_add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "pixelwise_add")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Self { shape: self.shape, data })
    }

    /// Elementwise difference `self - other`.
    pub fn pixelwise_sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "pixelwise_sub")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Self { shape: self.shape, data })
    }

    /// In-place elementwise accumulation used by gradient routing.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "accumulate")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Copies the channel block of `src` into `self` starting at channel
    /// `at`, adding to what is already there.
    pub fn accumulate_channel_block(&mut self, src: &Self, at: usize) -> Result<()> {
        if src.shape.n != self.shape.n || src.shape.h != self.shape.h || src.shape.w != self.shape.w {
            return Err(Error::Shape(format!(
                "accumulate_channel_block requires matching n/h/w, got {} and {}",
                self.shape, src.shape
            )));
        }
        if at + src.shape.c > self.shape.c {
            return Err(Error::Bounds(format!(
                "channel block [{}, {}) outside 0..{}",
                at,
                at + src.shape.c,
                self.shape.c
            )));
        }
        let hw = self.shape.h * self.shape.w;
        for n in 0..self.shape.n {
            for c in 0..src.shape.c {
                let dst_start = self.idx(n, at + c, 0, 0);
                let src_start = src.idx(n, c, 0, 0);
                let dst = &mut self.data[dst_start..dst_start + hw];
                let s = &src.data[src_start..src_start + hw];
                for (d, &v) in dst.iter_mut().zip(s) {
                    *d += v;
                }
            }
        }
        Ok(())
    }

    /// Extracts channels `[from, to)` as a new tensor.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.shape.c {
            return Err(Error::Bounds(format!(
                "channel slice [{from}, {to}) invalid for c={}",
                self.shape.c
            )));
        }
        let out_c = to - from;
        let hw = self.shape.h * self.shape.w;
        let mut data = Vec::with_capacity(self.shape.n * out_c * hw);
        for n in 0..self.shape.n {
            let start = self.idx(n, from, 0, 0);
            data.extend_from_slice(&self.data[start..start + out_c * hw]);
        }
        Self::from_vec(self.shape.n, out_c, self.shape.h, self.shape.w, data)
    }
}

/// Concatenates tensors along the channel axis; blocks appear in list order.
///
/// All inputs must share n, h and w; a mismatch reports the offending list
/// index.
pub fn concat_channels<S: Scalar>(inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let first = *inputs
        .first()
        .ok_or_else(|| Error::Shape("concat_channels requires at least one input".into()))?;
    let mut total_c = first.c();
    for (i, t) in inputs.iter().enumerate().skip(1) {
        if t.n() != first.n() || t.h() != first.h() || t.w() != first.w() {
            return Err(Error::Shape(format!(
                "concat_channels input {i} has shape {}, expected n/h/w of {}",
                t.shape(),
                first.shape()
            )));
        }
        total_c += t.c();
    }
    let hw = first.h() * first.w();
    let mut data = Vec::with_capacity(first.n() * total_c * hw);
    for n in 0..first.n() {
        for t in inputs {
            let start = t.idx(n, 0, 0, 0);
            data.extend_from_slice(&t.data()[start..start + t.c() * hw]);
        }
    }
    Tensor::from_vec(first.n(), total_c, first.h(), first.w(), data)
}

/// Stacks tensors along the batch axis; all inputs must share c, h and w.
pub fn concat_batch<S: Scalar>(inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let first = *inputs
        .first()
        .ok_or_else(|| Error::Shape("concat_batch requires at least one input".into()))?;
    let mut total_n = 0;
    for (i, t) in inputs.iter().enumerate() {
        if t.c() != first.c() || t.h() != first.h() || t.w() != first.w() {
            return Err(Error::Shape(format!(
                "concat_batch input {i} has shape {}, expected c/h/w of {}",
                t.shape(),
                first.shape()
            )));
        }
        total_n += t.n();
    }
    let mut data = Vec::with_capacity(total_n * first.c() * first.h() * first.w());
    for t in inputs {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(total_n, first.c(), first.h(), first.w(), data)
}
