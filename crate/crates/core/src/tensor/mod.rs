//! Dense row-major tensors over a scalar type chosen per graph.

mod pxt;

pub use pxt::{read_pxt, read_pxt_any, read_pxt_file, write_pxt, write_pxt_file, AnyTensor};

use std::fmt::{Debug, Display};

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Execution precision of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarMode {
    /// 32-bit floats, used for training and benchmarks.
    Standard,
    /// 64-bit floats with a fixed reduction order, used for gradient checks.
    Verification,
}

impl ScalarMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalarMode::Standard => "standard",
            ScalarMode::Verification => "verification",
        }
    }
}

/// Floating point element type of a [`Tensor`].
pub trait Scalar:
    Float + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    const MODE: ScalarMode;
    /// Code stored in the PXT1 header.
    const DTYPE: u8;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `c[m×n] = a[m×k]·b[k×n] + beta·c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );
}

fn check_gemm_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_scalar {
    ($t:ty, $mode:expr, $code:expr, $gemm:path) => {
        impl Scalar for $t {
            const MODE: ScalarMode = $mode;
            const DTYPE: u8 = $code;
            const BYTES: usize = std::mem::size_of::<$t>();

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(bytes);
                <$t>::from_le_bytes(buf)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
            ) {
                check_gemm_extent(a.len(), m, k, rsa, csa);
                check_gemm_extent(b.len(), k, n, rsb, csb);
                assert!(c.len() >= m * n, "gemm output too small");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for v in c[..m * n].iter_mut() {
                        *v = *v * beta;
                    }
                    return;
                }
                // SAFETY: operand extents were bounds-checked above and `c`
                // is a dense row-major m×n block that aliases neither input.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, ScalarMode::Standard, 0, matrixmultiply::sgemm);
impl_scalar!(f64, ScalarMode::Verification, 1, matrixmultiply::dgemm);

/// Initial contents for [`Tensor::new`].
pub enum Fill<'a, R: Rng + ?Sized> {
    Zeros,
    Constant(f64),
    Gaussian { mean: f64, sigma: f64, rng: &'a mut R },
}

/// Dense n-dimensional array in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if let Some(bad) = shape.iter().find(|&&e| e == 0) {
        return Err(Error::shape(format!("extent {bad} in shape {shape:?}; extents must be >= 1")));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    /// Allocates a tensor of the given shape.
    pub fn new<R: Rng + ?Sized>(shape: &[usize], fill: Fill<'_, R>) -> Result<Self> {
        let len = validate_shape(shape)?;
        let data = match fill {
            Fill::Zeros => vec![T::zero(); len],
            Fill::Constant(c) => vec![T::from_f64(c); len],
            Fill::Gaussian { mean, sigma, rng } => {
                if !(sigma >= 0.0) || !sigma.is_finite() {
                    return Err(Error::Domain(format!("gaussian sigma {sigma} must be finite and >= 0")));
                }
                let normal = Normal::new(mean, sigma)
                    .map_err(|e| Error::Domain(format!("gaussian fill: {e}")))?;
                (0..len).map(|_| T::from_f64(normal.sample(rng))).collect()
            }
        };
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![T::zero(); len] })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = validate_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![value; len] })
    }

    pub fn gaussian<R: Rng + ?Sized>(shape: &[usize], mean: f64, sigma: f64, rng: &mut R) -> Result<Self> {
        Self::new(shape, Fill::Gaussian { mean, sigma, rng })
    }

    /// Zero-dimensional tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {len} scalars but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    /// Converts element type; exact when widening.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: vec![T::zero(); self.data.len()] }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("add_assign {:?} vs {:?}", self.shape, other.shape)));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0` and comparing NaN payloads.
    pub fn bitwise_eq(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

impl<T> Tensor<T> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Extent of `axis`, failing with a shape error when the rank is too low.
    pub fn dim(&self, axis: usize) -> Result<usize> {
        self.shape
            .get(axis)
            .copied()
            .ok_or_else(|| Error::Shape(format!("axis {axis} out of range for shape {:?}", self.shape)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeros_fill() {
        let t = Tensor::<f64>::new::<ChaCha8Rng>(&[2, 3], Fill::Zeros).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.data(), &[0.0; 6]);
    }

    #[test]
    fn zero_extent_is_shape_error() {
        let err = Tensor::<f32>::zeros(&[2, 0]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn gaussian_is_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f64>::gaussian(&[1], 0.0, 1e-3, &mut a).unwrap();
        let y = Tensor::<f64>::gaussian(&[1], 0.0, 1e-3, &mut b).unwrap();
        assert!(x.bitwise_eq(&y));
    }

    #[test]
    fn gaussian_sample_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::<f64>::gaussian(&[10_000], 0.0, 1e-3, &mut rng).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!((0.8e-3..=1.2e-3).contains(&std), "std {std}");
    }

    #[test]
    fn negative_sigma_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(Tensor::<f32>::gaussian(&[3], 0.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn gemm_hand_case() {
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0];
        let mut c = [0.0f64; 2];
        f64::gemm(2, 2, 1, &a, 2, 1, &b, 1, 1, 0.0, &mut c);
        assert_eq!(c, [17.0, 39.0]);
    }
}
