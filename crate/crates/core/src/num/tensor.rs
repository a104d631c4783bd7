use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use super::{NumError, NumResult};

/// Scalar type the tape is generic over. f64 in tests and gradient checks,
/// f32 in training.
pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    /// Exponential for bulk inner loops: exact for f64; for f32 a
    /// branch-free polynomial (~1e-5 relative) that auto-vectorizes.
    fn exp_fast(self) -> Self {
        self.exp()
    }
    /// Tanh for bulk inner loops; same contract as [`Real::exp_fast`].
    fn tanh_fast(self) -> Self {
        self.tanh()
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn tanh(self) -> Self {
        f32::tanh(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn exp_fast(self) -> Self {
        // 2^t split into integer and fractional parts; the fraction uses a
        // degree-5 polynomial, the integer part lands in the exponent bits
        // via the shift-by-magic-constant trick (branch- and cast-free so
        // the whole body vectorizes)
        const LOG2E: f32 = std::f32::consts::LOG2_E;
        const MAGIC: f32 = 12_582_912.0; // 1.5 * 2^23
        let t = (self.clamp(-87.0, 88.0)) * LOG2E;
        let z = t + MAGIC;
        let n = z - MAGIC;
        let f = t - n;
        let p = 1.000_000_0_f32
            + f * (0.693_147_2
                + f * (0.240_226_5
                    + f * (0.055_504_11 + f * (0.009_618_129 + f * 0.001_333_355_8))));
        let two_n = f32::from_bits(
            z.to_bits()
                .wrapping_sub(MAGIC.to_bits())
                .wrapping_add(127)
                .wrapping_shl(23),
        );
        p * two_n
    }
    fn tanh_fast(self) -> Self {
        let e = (self + self).exp_fast();
        1.0 - 2.0 / (e + 1.0)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Dense row-major tensor. Data is shared behind an `Arc` so registering
/// weights on many tapes never copies them; mutation (the optimizer step)
/// goes through [`Tensor::data_mut`] which clones only when shared.
#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> NumResult<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) || numel != data.len() {
            return Err(NumError::InvalidShape {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![T::ZERO; numel]),
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![v]),
        }
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> NumResult<Self> {
        Tensor::new(
            shape.to_vec(),
            values.iter().map(|&v| T::from_f64(v)).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; clones the buffer if it is shared with a tape.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Rows of a 1-D or 2-D tensor ([n] is treated as [1, n]).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a 1-D or 2-D tensor.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor has at least one extent")
    }

    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }
}

/// Row-major transpose of an `m x n` matrix.
pub(crate) fn transpose<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// `c += alpha * a @ b` for row-major `a: m x k`, `b: k x n`, `c: m x n`.
///
/// Per output element the k-contributions accumulate in ascending order;
/// the shape-based dispatch below is deterministic, so results are
/// reproducible bit-for-bit on a given target. Narrow outputs keep the
/// accumulator row on the stack; wide outputs unroll k by four to cut
/// output-row traffic.
pub(crate) fn matmul_acc<T: Real>(
    c: &mut [T],
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n <= 32 {
        matmul_acc_narrow(c, a, b, m, k, n, alpha);
    } else {
        matmul_acc_wide(c, a, b, m, k, n, alpha);
    }
}

fn matmul_acc_narrow<T: Real>(
    c: &mut [T],
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
) {
    let mut acc = [T::ZERO; 32];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        acc[..n].fill(T::ZERO);
        for (kk, &aik) in a_row.iter().enumerate() {
            let s = alpha * aik;
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                acc[j] = acc[j] + s * b_row[j];
            }
        }
        let c_row = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            c_row[j] = c_row[j] + acc[j];
        }
    }
}

fn matmul_acc_wide<T: Real>(
    c: &mut [T],
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
) {
    let k4 = k - k % 4;
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        let mut kk = 0;
        while kk < k4 {
            let s0 = alpha * a_row[kk];
            let s1 = alpha * a_row[kk + 1];
            let s2 = alpha * a_row[kk + 2];
            let s3 = alpha * a_row[kk + 3];
            let b0 = &b[kk * n..(kk + 1) * n];
            let b1 = &b[(kk + 1) * n..(kk + 2) * n];
            let b2 = &b[(kk + 2) * n..(kk + 3) * n];
            let b3 = &b[(kk + 3) * n..(kk + 4) * n];
            for j in 0..n {
                let v = ((c_row[j] + s0 * b0[j]) + s1 * b1[j]) + s2 * b2[j];
                c_row[j] = v + s3 * b3[j];
            }
            kk += 4;
        }
        while kk < k {
            let s = alpha * a_row[kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                c_row[j] = c_row[j] + s * b_row[j];
            }
            kk += 1;
        }
    }
}
