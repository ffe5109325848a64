//! Dense row-major tensors.
//!
//! A [`Tensor`] is an immutable, cheaply clonable N-dimensional array. Four
//! dimensional values follow the `[N, C, H, W]` layout (frame batch,
//! channels, height, width).

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::Arc;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar type a tensor can hold. `f32` is the working precision; `f64`
/// exists for finite-difference gradient checking.
pub trait Element:
    Float + Default + Send + Sync + fmt::Debug + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    /// `c = beta * c + a * b` for row-major `a: [m, k]`, `b: [k, n]`,
    /// with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! impl_element {
    ($t:ty, $gemm:path) => {
        impl Element for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                (rsa, csa): (isize, isize),
                b: &[Self],
                (rsb, csb): (isize, isize),
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
                    }
                };
                assert!(a.len() >= span(m, k, rsa, csa));
                assert!(b.len() >= span(k, n, rsb, csb));
                // SAFETY: the asserts above bound every strided access of the
                // three operands inside their slices.
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

            fn of(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_element!(f32, matrixmultiply::sgemm);
impl_element!(f64, matrixmultiply::dgemm);

/// Immutable dense tensor. Cloning shares the underlying buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<E = f32> {
    dims: Vec<usize>,
    data: Arc<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn from_vec(dims: &[usize], data: Vec<E>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::shape("tensor must have rank >= 1"));
        }
        if dims.contains(&0) {
            return Err(Error::shape(format!("zero extent in dims {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} hold {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: Arc::new(data),
        })
    }

    /// Internal constructor for kernels that already guarantee consistency.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<E>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor {
            dims,
            data: Arc::new(data),
        }
    }

    pub fn full(dims: &[usize], value: E) -> Self {
        let n = dims.iter().product();
        Self::from_parts(dims.to_vec(), vec![value; n])
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, E::zero())
    }

    pub fn scalar(value: E) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let n: usize = dims.iter().product();
        Self::from_parts(dims.to_vec(), (0..n).map(&mut f).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<E> {
        Arc::try_unwrap(self.data).unwrap_or_else(|arc| (*arc).clone())
    }

    /// Dims as `[N, C, H, W]`; errors for any other rank.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.dims[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::shape(format!(
                "expected a 4-D [N, C, H, W] tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.numel() || dims.contains(&0) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, mut f: impl FnMut(E) -> E) -> Self {
        Self::from_parts(self.dims.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self> {
        self.expect_same_dims(other)?;
        Ok(Self::from_parts(
            self.dims.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn expect_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "dims differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn sum(&self) -> E {
        self.data.iter().copied().sum()
    }

    /// Inner product accumulated in 64-bit.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.expect_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.expect_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor::from_parts(
            self.dims.clone(),
            self.data.iter().map(|v| F::of(v.as_f64())).collect(),
        )
    }

    /// Select index `i` along the leading axis, dropping that axis.
    pub fn index_outer(&self, i: usize) -> Result<Self> {
        if self.rank() < 2 || i >= self.dims[0] {
            return Err(Error::shape(format!(
                "cannot take outer index {i} of dims {:?}",
                self.dims
            )));
        }
        let inner: usize = self.dims[1..].iter().product();
        Ok(Self::from_parts(
            self.dims[1..].to_vec(),
            self.data[i * inner..(i + 1) * inner].to_vec(),
        ))
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty list"))?;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            first.expect_same_dims(p)?;
            data.extend_from_slice(p.data());
        }
        let mut dims = vec![parts.len()];
        dims.extend_from_slice(first.dims());
        Ok(Self::from_parts(dims, data))
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.numel() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}
