//! Dense vector arithmetic and counter-keyed random streams.

use std::fmt;
use std::ops::Index;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("vector dimension must be positive")]
    EmptyVector,
    #[error("non-positive divisor {value} at coordinate {index}")]
    NonPositiveDivisor { index: usize, value: f64 },
    #[error("negative sqrt operand {value} at coordinate {index}")]
    NegativeSqrt { index: usize, value: f64 },
    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: usize },
    #[error("standard deviation must be non-negative, got {0}")]
    NegativeStd(f64),
}

/// Dense real vector of fixed dimension.
///
/// Constructors reject non-finite entries. The fast arithmetic helpers used
/// by the optimizers do not re-check finiteness; callers check once per step
/// with [`ParamVector::ensure_finite`].
#[derive(Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.values.iter()).finish()
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, NumericError> {
        if values.is_empty() {
            return Err(NumericError::EmptyVector);
        }
        let v = Self { values };
        v.ensure_finite()?;
        Ok(v)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::filled(dim, 0.0)
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        assert!(dim > 0, "ParamVector dimension must be positive");
        Self {
            values: vec![value; dim],
        }
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn ensure_finite(&self) -> Result<(), NumericError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(NumericError::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn check_dim(&self, other: &ParamVector) -> Result<(), NumericError> {
        if self.dim() != other.dim() {
            return Err(NumericError::DimMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(())
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn dist_sq(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> ParamVector {
        Self::from_raw(self.values.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> ParamVector {
        debug_assert_eq!(self.dim(), other.dim());
        Self::from_raw(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Arithmetic mean, summing in slice order and dividing by the count.
    ///
    /// A coordinate on which every input agrees bit-for-bit is returned
    /// unchanged, so the mean of identical vectors is exact.
    pub fn mean_of(vectors: &[ParamVector]) -> Result<ParamVector, NumericError> {
        let first = vectors.first().ok_or(NumericError::EmptyVector)?;
        for v in vectors {
            first.check_dim(v)?;
        }
        let n = vectors.len() as f64;
        let out = (0..first.dim())
            .map(|j| {
                let a = first.values[j];
                if vectors.iter().all(|v| v.values[j].to_bits() == a.to_bits()) {
                    a
                } else {
                    vectors.iter().map(|v| v.values[j]).sum::<f64>() / n
                }
            })
            .collect();
        Ok(Self::from_raw(out))
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Sqrt,
    Square,
}

/// Right-hand operand of [`elementwise`]. Unary ops ignore it.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Vector(&'a ParamVector),
    Scalar(f64),
}

/// Checked coordinate-wise arithmetic.
pub fn elementwise(
    op: ElementwiseOp,
    a: &ParamVector,
    b: Operand<'_>,
) -> Result<ParamVector, NumericError> {
    let rhs = |j: usize| match b {
        Operand::Vector(v) => v.values[j],
        Operand::Scalar(s) => s,
    };
    if let Operand::Vector(v) = b {
        if !matches!(op, ElementwiseOp::Sqrt | ElementwiseOp::Square) {
            a.check_dim(v)?;
        }
    }
    let mut out = Vec::with_capacity(a.dim());
    for (j, &x) in a.values.iter().enumerate() {
        let r = match op {
            ElementwiseOp::Add => x + rhs(j),
            ElementwiseOp::Sub => x - rhs(j),
            ElementwiseOp::Mul => x * rhs(j),
            ElementwiseOp::Div => {
                let d = rhs(j);
                if d.is_nan() || d <= 0.0 {
                    return Err(NumericError::NonPositiveDivisor { index: j, value: d });
                }
                x / d
            }
            ElementwiseOp::Max => x.max(rhs(j)),
            ElementwiseOp::Sqrt => {
                if x < 0.0 {
                    return Err(NumericError::NegativeSqrt { index: j, value: x });
                }
                x.sqrt()
            }
            ElementwiseOp::Square => x * x,
        };
        if !r.is_finite() {
            return Err(NumericError::NonFinite { index: j });
        }
        out.push(r);
    }
    Ok(ParamVector::from_raw(out))
}

/// What a random stream is used for. Part of the stream key so that, e.g.,
/// data generation and gradient noise never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum StreamPurpose {
    Gradient = 1,
    Init = 2,
    Data = 3,
    Shard = 4,
    Problem = 5,
    Test = 99,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub purpose: StreamPurpose,
    pub worker: u32,
    pub iteration: u64,
}

impl StreamId {
    pub fn new(purpose: StreamPurpose, worker: u32, iteration: u64) -> Self {
        Self {
            purpose,
            worker,
            iteration,
        }
    }

    pub fn gradient(worker: usize, iteration: u64) -> Self {
        Self::new(StreamPurpose::Gradient, worker as u32, iteration)
    }
}

/// Random stream keyed by `(seed, stream id)`.
///
/// The key fully determines the ChaCha12 key, so a stream never depends on
/// how many draws other streams have made.
pub struct RngStream {
    seed: u64,
    id: StreamId,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&seed.to_le_bytes());
        key[8..12].copy_from_slice(&(id.purpose as u32).to_le_bytes());
        key[12..16].copy_from_slice(&id.worker.to_le_bytes());
        key[16..24].copy_from_slice(&id.iteration.to_le_bytes());
        key[24..32].copy_from_slice(b"localams");
        Self {
            seed,
            id,
            rng: ChaCha12Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn uniform_index(&mut self, n: usize) -> usize {
        use rand::Rng;
        self.rng.random_range(0..n)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        use rand::Rng;
        if lo == hi {
            return lo;
        }
        self.rng.random_range(lo..hi)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// `dim` i.i.d. draws from N(mean, std²).
pub fn gaussian_vector(
    rng: &mut RngStream,
    dim: usize,
    mean: f64,
    std: f64,
) -> Result<ParamVector, NumericError> {
    if std.is_nan() || std < 0.0 {
        return Err(NumericError::NegativeStd(std));
    }
    if dim == 0 {
        return Err(NumericError::EmptyVector);
    }
    if std == 0.0 {
        return Ok(ParamVector::filled(dim, mean));
    }
    let values = (0..dim)
        .map(|_| mean + std * rng.standard_normal())
        .collect();
    ParamVector::new(values)
}
