//! Exact integer references: scalar multiply-accumulate, the nine-input
//! dot product, and the full convolution. Slow, simple, and trusted; every
//! equivalence test in the crate bottoms out here.

use thiserror::Error;

use crate::ppgen::OperandPair;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("layer dimensions must be positive")]
    NonPositiveDimension,
    #[error("input size {input} minus kernel {kernel} must be divisible by stride {stride}")]
    StrideMismatch {
        input: usize,
        kernel: usize,
        stride: usize,
    },
    #[error("kernel {kernel} does not fit input size {input}")]
    KernelTooLarge { kernel: usize, input: usize },
    #[error("tensor data length {got} does not match dims {dims:?}")]
    DataLength { dims: [usize; 4], got: usize },
    #[error("tensor dims {got:?} do not match the layer shape (expected {expected:?})")]
    ShapeMismatch {
        expected: [usize; 4],
        got: [usize; 4],
    },
    #[error("bias length {got} does not match filter count {filters}")]
    BiasLength { filters: usize, got: usize },
}

/// Convolution layer geometry: `batch` images of `channels x input_size^2`,
/// `filters` kernels of `channels x kernel^2`, sliding with `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub batch: usize,
    pub filters: usize,
    pub channels: usize,
    pub input_size: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl LayerShape {
    pub fn new(
        batch: usize,
        filters: usize,
        channels: usize,
        input_size: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self, OracleError> {
        if batch == 0 || filters == 0 || channels == 0 || input_size == 0 || kernel == 0
            || stride == 0
        {
            return Err(OracleError::NonPositiveDimension);
        }
        if kernel > input_size {
            return Err(OracleError::KernelTooLarge {
                kernel,
                input: input_size,
            });
        }
        if !(input_size - kernel).is_multiple_of(stride) {
            return Err(OracleError::StrideMismatch {
                input: input_size,
                kernel,
                stride,
            });
        }
        Ok(Self {
            batch,
            filters,
            channels,
            input_size,
            kernel,
            stride,
        })
    }

    /// Output feature-map edge length: `(H - R + S) / S`.
    pub fn output_size(&self) -> usize {
        (self.input_size - self.kernel) / self.stride + 1
    }

    pub fn ifmap_dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.input_size, self.input_size]
    }

    pub fn filter_dims(&self) -> [usize; 4] {
        [self.filters, self.channels, self.kernel, self.kernel]
    }

    pub fn ofmap_dims(&self) -> [usize; 4] {
        let e = self.output_size();
        [self.batch, self.filters, e, e]
    }

    /// Multiplications needed for the whole layer.
    pub fn mac_count(&self) -> u64 {
        let e = self.output_size() as u64;
        self.batch as u64
            * self.filters as u64
            * self.channels as u64
            * e
            * e
            * (self.kernel as u64 * self.kernel as u64)
    }
}

/// Dense rank-4 tensor of signed integers, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<i64>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<i64>) -> Result<Self, OracleError> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(OracleError::DataLength {
                dims,
                got: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    #[inline]
    fn offset(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        debug_assert!(a < self.dims[0] && b < self.dims[1] && c < self.dims[2] && d < self.dims[3]);
        ((a * self.dims[1] + b) * self.dims[2] + c) * self.dims[3] + d
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> i64 {
        self.data[self.offset(a, b, c, d)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, d: usize, v: i64) {
        let o = self.offset(a, b, c, d);
        self.data[o] = v;
    }
}

/// One multiply-accumulate step over unbounded integers.
pub fn mac_reference(acc: i128, weight: i64, input: i64) -> i128 {
    acc + weight as i128 * input as i128
}

/// Exact nine-term dot product.
pub fn dot9(pairs: &[OperandPair; 9]) -> i128 {
    pairs.iter().fold(0, |acc, p| mac_reference(acc, p.weight, p.input))
}

/// Exact valid convolution: for every output cell,
/// `O[z][u][x][y] = B[u] + sum_{k,i,j} I[z][k][Sx+i][Sy+j] * W[u][k][i][j]`.
#[allow(clippy::needless_range_loop)] // the nest mirrors the definition
pub fn conv_layer(
    ifmap: &Tensor4,
    filters: &Tensor4,
    bias: &[i64],
    shape: &LayerShape,
) -> Result<Tensor4, OracleError> {
    if ifmap.dims() != shape.ifmap_dims() {
        return Err(OracleError::ShapeMismatch {
            expected: shape.ifmap_dims(),
            got: ifmap.dims(),
        });
    }
    if filters.dims() != shape.filter_dims() {
        return Err(OracleError::ShapeMismatch {
            expected: shape.filter_dims(),
            got: filters.dims(),
        });
    }
    if bias.len() != shape.filters {
        return Err(OracleError::BiasLength {
            filters: shape.filters,
            got: bias.len(),
        });
    }

    let e = shape.output_size();
    let mut ofmap = Tensor4::zeros(shape.ofmap_dims());
    for z in 0..shape.batch {
        for u in 0..shape.filters {
            for x in 0..e {
                for y in 0..e {
                    let mut acc = bias[u] as i128;
                    for k in 0..shape.channels {
                        for i in 0..shape.kernel {
                            for j in 0..shape.kernel {
                                acc = mac_reference(
                                    acc,
                                    filters.get(u, k, i, j),
                                    ifmap.get(z, k, shape.stride * x + i, shape.stride * y + j),
                                );
                            }
                        }
                    }
                    ofmap.set(z, u, x, y, i128_to_i64(acc));
                }
            }
        }
    }
    Ok(ofmap)
}

fn i128_to_i64(v: i128) -> i64 {
    i64::try_from(v).expect("convolution sums in this toolkit stay far inside i64")
}
