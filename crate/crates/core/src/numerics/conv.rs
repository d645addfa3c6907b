use serde::{Deserialize, Serialize};

use super::Tensor2;
use crate::error::{arg_err, dim_err, Error, Result};

/// Shape parameters of a 1D convolution over a `len × in_channels` sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv1dGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dGeometry {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return arg_err("conv channels, kernel and stride must be positive");
        }
        Ok(Self { in_channels, out_channels, kernel, stride, padding })
    }

    /// Output length for an input of `len` steps.
    pub fn output_len(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.padding;
        if len == 0 || padded < self.kernel {
            return dim_err(format!("sequence of {len} steps too short for kernel {}", self.kernel));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// Weight matrix shape: `out_channels × (in_channels · kernel)`, i.e. a
    /// row-major `(C_out, C_in, K)` array.
    pub fn weight_shape(&self) -> (usize, usize) {
        (self.out_channels, self.in_channels * self.kernel)
    }

    fn check(&self, input: &Tensor2, batch: usize, weight: &Tensor2, bias: &[f64]) -> Result<usize> {
        if batch == 0 || input.rows() % batch != 0 {
            return dim_err(format!("{} rows do not split into {batch} sequences", input.rows()));
        }
        if input.cols() != self.in_channels {
            return dim_err(format!("conv input has {} channels, expected {}", input.cols(), self.in_channels));
        }
        if weight.shape() != self.weight_shape() {
            return dim_err(format!("conv weight {:?}, expected {:?}", weight.shape(), self.weight_shape()));
        }
        if bias.len() != self.out_channels {
            return dim_err(format!("conv bias of {}, expected {}", bias.len(), self.out_channels));
        }
        Ok(input.rows() / batch)
    }
}

/// Unrolls padded receptive fields into rows: `(batch·out_len) × (C_in·K)`.
fn im2col(input: &Tensor2, batch: usize, len: usize, out_len: usize, g: &Conv1dGeometry) -> Tensor2 {
    let width = g.in_channels * g.kernel;
    let mut col = Tensor2::zeros(batch * out_len, width);
    for b in 0..batch {
        for t in 0..out_len {
            let row = col.row_mut(b * out_len + t);
            for k in 0..g.kernel {
                let pos = (t * g.stride + k) as isize - g.padding as isize;
                if pos < 0 || pos as usize >= len {
                    continue;
                }
                let src = input.row(b * len + pos as usize);
                for (ci, &v) in src.iter().enumerate() {
                    row[ci * g.kernel + k] = v;
                }
            }
        }
    }
    col
}

/// Cross-correlation of each sequence in the batch with the kernel.
///
/// `input` stacks `batch` sequences of equal length sample-major:
/// `(batch·len) × C_in`. The result is `(batch·out_len) × C_out`.
pub fn conv1d_forward(
    input: &Tensor2,
    batch: usize,
    weight: &Tensor2,
    bias: &[f64],
    geom: &Conv1dGeometry,
) -> Result<Tensor2> {
    let len = geom.check(input, batch, weight, bias)?;
    let out_len = geom.output_len(len)?;
    let col = im2col(input, batch, len, out_len, geom);
    let mut out = col.matmul_nt(weight)?;
    out.add_row_vector(bias)?;
    Ok(out)
}

#[derive(Debug, Clone)]
struct ConvCache {
    col: Tensor2,
    batch: usize,
    in_len: usize,
    out_len: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor2,
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

/// Convolution layer that retains its unrolled input for the backward pass.
#[derive(Debug, Clone)]
pub struct Conv1d {
    geom: Conv1dGeometry,
    cache: Option<ConvCache>,
}

impl Conv1d {
    pub fn new(geom: Conv1dGeometry) -> Self {
        Self { geom, cache: None }
    }

    pub fn geometry(&self) -> &Conv1dGeometry {
        &self.geom
    }

    pub fn forward(&mut self, input: &Tensor2, batch: usize, weight: &Tensor2, bias: &[f64]) -> Result<Tensor2> {
        let len = self.geom.check(input, batch, weight, bias)?;
        let out_len = self.geom.output_len(len)?;
        let col = im2col(input, batch, len, out_len, &self.geom);
        let mut out = col.matmul_nt(weight)?;
        out.add_row_vector(bias)?;
        self.cache = Some(ConvCache { col, batch, in_len: len, out_len });
        Ok(out)
    }

    /// Gradients with respect to input, weight and bias. Consumes the cache.
    pub fn backward(&mut self, grad_out: &Tensor2, weight: &Tensor2) -> Result<ConvGrads> {
        let cache = self.cache.take().ok_or(Error::MissingCache("conv1d"))?;
        let g = &self.geom;
        if grad_out.shape() != (cache.batch * cache.out_len, g.out_channels) {
            return dim_err(format!(
                "conv grad {:?}, expected {:?}",
                grad_out.shape(),
                (cache.batch * cache.out_len, g.out_channels)
            ));
        }
        let grad_weight = grad_out.matmul_tn(&cache.col)?;
        let grad_bias = grad_out.column_sums();
        let grad_col = grad_out.matmul(weight)?;
        let mut grad_input = Tensor2::zeros(cache.batch * cache.in_len, g.in_channels);
        for b in 0..cache.batch {
            for t in 0..cache.out_len {
                let row = grad_col.row(b * cache.out_len + t);
                for k in 0..g.kernel {
                    let pos = (t * g.stride + k) as isize - g.padding as isize;
                    if pos < 0 || pos as usize >= cache.in_len {
                        continue;
                    }
                    let dst = grad_input.row_mut(b * cache.in_len + pos as usize);
                    for (ci, d) in dst.iter_mut().enumerate() {
                        *d += row[ci * g.kernel + k];
                    }
                }
            }
        }
        Ok(ConvGrads { input: grad_input, weight: grad_weight, bias: grad_bias })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{max_relative_error, numeric_gradient};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct quadruple loop, independent of the im2col path.
    fn naive_conv(input: &Tensor2, batch: usize, w: &Tensor2, bias: &[f64], g: &Conv1dGeometry) -> Tensor2 {
        let len = input.rows() / batch;
        let out_len = (len + 2 * g.padding - g.kernel) / g.stride + 1;
        let mut out = Tensor2::zeros(batch * out_len, g.out_channels);
        for b in 0..batch {
            for t in 0..out_len {
                for o in 0..g.out_channels {
                    let mut acc = bias[o];
                    for i in 0..g.in_channels {
                        for k in 0..g.kernel {
                            let pos = (t * g.stride + k) as isize - g.padding as isize;
                            if pos >= 0 && (pos as usize) < len {
                                acc += w.get(o, i * g.kernel + k) * input.get(b * len + pos as usize, i);
                            }
                        }
                    }
                    out.set(b * out_len + t, o, acc);
                }
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
        Tensor2::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_kernel_is_identity() {
        let g = Conv1dGeometry::new(1, 1, 1, 1, 0).unwrap();
        let x = Tensor2::from_fn(9, 1, |r, _| r as f64 * 0.5 - 1.0);
        let y = conv1d_forward(&x, 1, &Tensor2::filled(1, 1, 1.0), &[0.0], &g).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn stride_two_halves_length() {
        let g = Conv1dGeometry::new(7, 32, 5, 2, 2).unwrap();
        assert_eq!(g.output_len(48).unwrap(), 24);
        assert_eq!(g.output_len(24).unwrap(), 12);
        assert_eq!(g.output_len(3).unwrap(), 2);
        assert!(Conv1dGeometry::new(1, 1, 5, 1, 0).unwrap().output_len(4).is_err());
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(cin, cout, k, s, p, len, batch) in
            &[(7, 32, 5, 2, 2, 48, 3), (32, 32, 5, 2, 2, 24, 2), (3, 4, 3, 1, 1, 10, 1), (2, 5, 5, 1, 2, 7, 4), (4, 2, 1, 1, 0, 6, 2)]
        {
            let g = Conv1dGeometry::new(cin, cout, k, s, p).unwrap();
            let x = random(&mut rng, batch * len, cin);
            let (wr, wc) = g.weight_shape();
            let w = random(&mut rng, wr, wc);
            let b: Vec<f64> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = conv1d_forward(&x, batch, &w, &b, &g).unwrap();
            let slow = naive_conv(&x, batch, &w, &b, &g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.as_slice().iter().zip(slow.as_slice()) {
                assert!((a - e).abs() <= 1e-12 * e.abs().max(1.0), "{a} vs {e}");
            }
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        let g = Conv1dGeometry::new(2, 3, 3, 1, 1).unwrap();
        let x = Tensor2::zeros(10, 2);
        assert!(conv1d_forward(&x, 3, &Tensor2::zeros(3, 6), &[0.0; 3], &g).is_err());
        assert!(conv1d_forward(&x, 1, &Tensor2::zeros(3, 5), &[0.0; 3], &g).is_err());
        assert!(conv1d_forward(&Tensor2::zeros(10, 3), 1, &Tensor2::zeros(3, 6), &[0.0; 3], &g).is_err());
        assert!(conv1d_forward(&x, 1, &Tensor2::zeros(3, 6), &[0.0; 2], &g).is_err());
    }

    #[test]
    fn backward_without_forward_is_rejected() {
        let g = Conv1dGeometry::new(1, 1, 1, 1, 0).unwrap();
        let mut layer = Conv1d::new(g);
        let err = layer.backward(&Tensor2::zeros(3, 1), &Tensor2::zeros(1, 1)).unwrap_err();
        assert!(matches!(err, Error::MissingCache(_)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Conv1dGeometry::new(3, 4, 5, 2, 2).unwrap();
        let x = random(&mut rng, 16, 3);
        let w = random(&mut rng, 4, 15);
        let mut layer = Conv1d::new(g);
        let y = layer.forward(&x, 2, &w, &[0.1; 4]).unwrap();
        let grads = layer.backward(&Tensor2::zeros(y.rows(), y.cols()), &w).unwrap();
        assert_eq!(grads.input.max_abs(), 0.0);
        assert_eq!(grads.weight.max_abs(), 0.0);
        assert!(grads.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_case_is_chain_rule() {
        let g = Conv1dGeometry::new(1, 1, 1, 1, 0).unwrap();
        let mut layer = Conv1d::new(g);
        let x = Tensor2::filled(1, 1, 3.0);
        let w = Tensor2::filled(1, 1, -2.0);
        layer.forward(&x, 1, &w, &[0.5]).unwrap();
        let grads = layer.backward(&Tensor2::filled(1, 1, 1.5), &w).unwrap();
        assert_eq!(grads.input.get(0, 0), 1.5 * -2.0);
        assert_eq!(grads.weight.get(0, 0), 1.5 * 3.0);
        assert_eq!(grads.bias[0], 1.5);
    }

    /// Loss = Σ upstream ⊙ conv(x); its gradients are exactly the backward outputs.
    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let g = Conv1dGeometry::new(3, 4, 5, 2, 2).unwrap();
            let (batch, len) = (2, 9);
            let x = random(&mut rng, batch * len, 3);
            let w = random(&mut rng, 4, 15);
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut layer = Conv1d::new(g);
            let y = layer.forward(&x, batch, &w, &b).unwrap();
            let up = random(&mut rng, y.rows(), y.cols());
            let grads = layer.backward(&up, &w).unwrap();
            let dot = |y: &Tensor2| y.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum::<f64>();

            let num_x = numeric_gradient(x.as_slice(), 1e-4, |v| {
                let xt = Tensor2::from_vec(x.rows(), x.cols(), v.to_vec()).unwrap();
                dot(&conv1d_forward(&xt, batch, &w, &b, &g).unwrap())
            });
            assert!(max_relative_error(grads.input.as_slice(), &num_x).0 <= 1e-4);
            let num_w = numeric_gradient(w.as_slice(), 1e-4, |v| {
                let wt = Tensor2::from_vec(w.rows(), w.cols(), v.to_vec()).unwrap();
                dot(&conv1d_forward(&x, batch, &wt, &b, &g).unwrap())
            });
            assert!(max_relative_error(grads.weight.as_slice(), &num_w).0 <= 1e-4);
            let num_b = numeric_gradient(&b, 1e-4, |v| dot(&conv1d_forward(&x, batch, &w, v, &g).unwrap()));
            assert!(max_relative_error(&grads.bias, &num_b).0 <= 1e-4);
        }
    }
}
