use serde::{Deserialize, Serialize};

/// One stage of a sequential network. Shapes are per sample (no batch axis).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `y = x W + b` on `[features]` inputs.
    Dense { inputs: usize, outputs: usize },
    /// Strided 2D convolution with "same" zero padding: `(C,H,W) -> (C', ceil(H/s), ceil(W/s))`.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Transposed convolution, the adjoint of `Conv` from `(C', sH, sW)` down to `(C, H, W)`.
    Tconv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    Tanh,
    /// Per-feature (2D input) or per-channel (image input) batch normalization.
    Batchnorm { features: usize },
    /// Reinterpret the per-sample shape; the value count must match.
    Reshape { shape: Vec<usize> },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Tconv { .. } => "tconv",
            LayerSpec::Relu => "relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Batchnorm { .. } => "batchnorm",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    /// Output shape for a per-sample input shape, or `None` if incompatible.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match self {
            LayerSpec::Dense { inputs, outputs } => {
                (input == [*inputs]).then(|| vec![*outputs])
            }
            LayerSpec::Conv {
                in_channels,
                out_channels,
                stride,
                kernel,
            } => match input {
                [c, h, w] if c == in_channels && *stride > 0 && *kernel > 0 => {
                    Some(vec![*out_channels, h.div_ceil(*stride), w.div_ceil(*stride)])
                }
                _ => None,
            },
            LayerSpec::Tconv {
                in_channels,
                out_channels,
                stride,
                kernel,
            } => match input {
                [c, h, w] if c == in_channels && *stride > 0 && *kernel > 0 => {
                    Some(vec![*out_channels, h * stride, w * stride])
                }
                _ => None,
            },
            LayerSpec::Relu | LayerSpec::Tanh => Some(input.to_vec()),
            LayerSpec::Batchnorm { features } => match input {
                [f] | [f, _, _] if f == features => Some(input.to_vec()),
                _ => None,
            },
            LayerSpec::Reshape { shape } => {
                let a: usize = input.iter().product();
                let b: usize = shape.iter().product();
                (a == b && !shape.is_empty() && shape.len() <= 3).then(|| shape.clone())
            }
        }
    }

    pub fn is_activation(&self) -> bool {
        matches!(self, LayerSpec::Relu | LayerSpec::Tanh)
    }
}

/// Index geometry shared by `Conv` (big -> small) and `Tconv` (small -> big).
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub channels: usize,
    pub big_h: usize,
    pub big_w: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_pad(big: usize, small: usize, kernel: usize, stride: usize) -> usize {
    let total = ((small.saturating_sub(1)) * stride + kernel).saturating_sub(big);
    total / 2
}

impl ConvGeom {
    pub fn new(channels: usize, big: (usize, usize), kernel: usize, stride: usize) -> Self {
        let small_h = big.0.div_ceil(stride);
        let small_w = big.1.div_ceil(stride);
        Self {
            channels,
            big_h: big.0,
            big_w: big.1,
            small_h,
            small_w,
            kernel,
            stride,
            pad_top: same_pad(big.0, small_h, kernel, stride),
            pad_left: same_pad(big.1, small_w, kernel, stride),
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.small_h * self.small_w
    }

    #[inline]
    fn source(&self, oy: usize, ky: usize, ox: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad_top)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad_left)?;
        (y < self.big_h && x < self.big_w).then_some((y, x))
    }

    /// Gather `[C*k*k, small_h*small_w]` patches from a `[C, big_h, big_w]` image.
    pub fn im2col<T: crate::Scalar>(&self, big: &[T], cols: &mut [T]) {
        let k = self.kernel;
        let nc = self.col_cols();
        debug_assert_eq!(big.len(), self.channels * self.big_h * self.big_w);
        debug_assert_eq!(cols.len(), self.col_rows() * nc);
        for c in 0..self.channels {
            let plane = &big[c * self.big_h * self.big_w..(c + 1) * self.big_h * self.big_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let out = &mut cols[row * nc..(row + 1) * nc];
                    for oy in 0..self.small_h {
                        for ox in 0..self.small_w {
                            out[oy * self.small_w + ox] = match self.source(oy, ky, ox, kx) {
                                Some((y, x)) => plane[y * self.big_w + x],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatter-add patches back onto the big image.
    pub fn col2im<T: crate::Scalar>(&self, cols: &[T], big: &mut [T]) {
        let k = self.kernel;
        let nc = self.col_cols();
        for c in 0..self.channels {
            let base = c * self.big_h * self.big_w;
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * nc..(row + 1) * nc];
                    for oy in 0..self.small_h {
                        for ox in 0..self.small_w {
                            if let Some((y, x)) = self.source(oy, ky, ox, kx) {
                                big[base + y * self.big_w + x] += src[oy * self.small_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_then_tconv_restores_spatial_shape() {
        let conv = LayerSpec::Conv {
            in_channels: 1,
            out_channels: 4,
            kernel: 3,
            stride: 2,
        };
        let tconv = LayerSpec::Tconv {
            in_channels: 4,
            out_channels: 1,
            kernel: 3,
            stride: 2,
        };
        let mid = conv.output_shape(&[1, 32, 32]).unwrap();
        assert_eq!(mid, vec![4, 16, 16]);
        assert_eq!(tconv.output_shape(&mid).unwrap(), vec![1, 32, 32]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::new(2, (7, 6), 3, 2);
        let big: Vec<f64> = (0..2 * 7 * 6).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let cols_in: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| ((i * 13 % 7) as f64) - 3.0)
            .collect();
        let mut cols = vec![0.0; cols_in.len()];
        g.im2col(&big, &mut cols);
        let lhs: f64 = cols.iter().zip(&cols_in).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; big.len()];
        g.col2im(&cols_in, &mut back);
        let rhs: f64 = back.iter().zip(&big).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn incompatible_shapes_are_rejected() {
        let d = LayerSpec::Dense {
            inputs: 8,
            outputs: 2,
        };
        assert!(d.output_shape(&[7]).is_none());
        let r = LayerSpec::Reshape { shape: vec![2, 2, 2] };
        assert_eq!(r.output_shape(&[8]), Some(vec![2, 2, 2]));
        assert!(r.output_shape(&[9]).is_none());
    }
}
