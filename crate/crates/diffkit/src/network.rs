use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::layer::{ConvGeom, LayerSpec};
use crate::params::{Gradients, ParameterSet};
use crate::rng::{derive_seed, seeded_rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Batchnorm normalizes with batch statistics.
    Train,
    /// Batchnorm uses running statistics.
    Eval,
}

/// A validated sequence of layers with named parameters `"{name}.{index}.{field}"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    #[serde(skip)]
    shapes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
enum LayerCache<T> {
    Dense { input: Tensor<T> },
    Conv { cols: Vec<T> },
    Tconv { input: Tensor<T> },
    Relu { input: Tensor<T> },
    Tanh { output: Tensor<T> },
    Batchnorm {
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        mean: Vec<T>,
        var: Vec<T>,
    },
    Reshape,
}

/// Activations recorded by [`Network::forward`] for a later backward pass.
#[derive(Clone, Debug)]
pub struct Cache<T> {
    network: String,
    batch: usize,
    mode: Mode,
    layers: Vec<LayerCache<T>>,
}

impl<T> Cache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn bn_layout(shape: &[usize]) -> (usize, usize) {
    // (channels, spatial) of a per-sample batchnorm input
    match shape {
        [f] => (*f, 1),
        [c, h, w] => (*c, h * w),
        _ => unreachable!("validated at construction"),
    }
}

impl Network {
    pub fn new(name: impl Into<String>, input_shape: &[usize], layers: Vec<LayerSpec>) -> Result<Self> {
        let mut net = Self {
            name: name.into(),
            input_shape: input_shape.to_vec(),
            layers,
            shapes: Vec::new(),
        };
        net.resolve_shapes()?;
        Ok(net)
    }

    /// Recomputes per-layer shapes (needed after deserialization).
    pub fn resolve_shapes(&mut self) -> Result<()> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = shapes.last().expect("non-empty");
            let next = layer.output_shape(prev).ok_or_else(|| DiffError::InvalidNetwork {
                network: self.name.clone(),
                reason: format!("layer {i} ({}) cannot take input shape {prev:?}", layer.kind()),
            })?;
            shapes.push(next);
        }
        self.shapes = shapes;
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("resolved")
    }

    fn pname(&self, i: usize, field: &str) -> String {
        format!("{}.{}.{}", self.name, i, field)
    }

    /// Names of every parameter this network reads, in layer order.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                LayerSpec::Dense { .. } | LayerSpec::Conv { .. } | LayerSpec::Tconv { .. } => {
                    out.push(self.pname(i, "weight"));
                    out.push(self.pname(i, "bias"));
                }
                LayerSpec::Batchnorm { .. } => {
                    for f in ["gamma", "beta", "running_mean", "running_var"] {
                        out.push(self.pname(i, f));
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Activation that consumes the output of layer `i`, skipping batchnorm.
    fn following_activation(&self, i: usize) -> Option<&LayerSpec> {
        self.layers[i + 1..]
            .iter()
            .find(|l| !matches!(l, LayerSpec::Batchnorm { .. } | LayerSpec::Reshape { .. }))
            .filter(|l| l.is_activation())
    }

    /// Inserts freshly initialized parameters. Layers feeding a ReLU get
    /// He-uniform weights, all others Glorot-uniform; biases start at zero.
    pub fn init_params<T: Scalar>(&self, params: &mut ParameterSet<T>, seed: u64) {
        for (i, l) in self.layers.iter().enumerate() {
            let (wshape, fan_in, fan_out): (Vec<usize>, usize, usize) = match *l {
                LayerSpec::Dense { inputs, outputs } => (vec![inputs, outputs], inputs, outputs),
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (
                    vec![out_channels, in_channels, kernel, kernel],
                    in_channels * kernel * kernel,
                    out_channels * kernel * kernel,
                ),
                LayerSpec::Tconv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let taps = kernel.div_ceil(stride);
                    (
                        vec![in_channels, out_channels, kernel, kernel],
                        in_channels * taps * taps,
                        out_channels * taps * taps,
                    )
                }
                LayerSpec::Batchnorm { features } => {
                    params.insert(self.pname(i, "gamma"), Tensor::full(&[features], T::one()), true);
                    params.insert(self.pname(i, "beta"), Tensor::zeros(&[features]), true);
                    params.insert(self.pname(i, "running_mean"), Tensor::zeros(&[features]), false);
                    params.insert(
                        self.pname(i, "running_var"),
                        Tensor::full(&[features], T::one()),
                        false,
                    );
                    continue;
                }
                _ => continue,
            };
            let bound = match self.following_activation(i) {
                Some(LayerSpec::Relu) => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let mut rng = seeded_rng(derive_seed(seed, &self.pname(i, "weight"), 0));
            let n: usize = wshape.iter().product();
            let w: Vec<T> = (0..n)
                .map(|_| T::lit(rng.random_range(-bound..bound)))
                .collect();
            params.insert(self.pname(i, "weight"), Tensor::from_vec(&wshape, w).expect("shape"), true);
            let bias_len = wshape[if matches!(l, LayerSpec::Tconv { .. } | LayerSpec::Dense { .. }) { 1 } else { 0 }];
            params.insert(self.pname(i, "bias"), Tensor::zeros(&[bias_len]), true);
        }
    }

    fn check_input<T: Scalar>(&self, input: &Tensor<T>) -> Result<()> {
        if &input.shape()[1..] != self.input_shape.as_slice() {
            return Err(DiffError::Shape {
                layer: 0,
                kind: self.layers.first().map(|l| l.kind()).unwrap_or("input"),
                expected: self.input_shape.clone(),
                got: input.shape()[1..].to_vec(),
            });
        }
        Ok(())
    }

    /// Runs the network on a batch `[B, ...input_shape]`.
    pub fn forward<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        input: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        self.check_input(input)?;
        let batch = input.batch();
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let in_shape = &self.shapes[i];
            let out_shape = &self.shapes[i + 1];
            let mut full_out = vec![batch];
            full_out.extend_from_slice(out_shape);
            let (y, cache) = match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    let w = params.get(&self.pname(i, "weight"))?;
                    let b = params.get(&self.pname(i, "bias"))?;
                    let mut y = vec![T::zero(); batch * outputs];
                    for r in 0..batch {
                        y[r * outputs..(r + 1) * outputs].copy_from_slice(b.data());
                    }
                    T::gemm(false, false, batch, inputs, outputs, T::one(), x.data(), w.data(), T::one(), &mut y);
                    (Tensor::from_vec(&full_out, y)?, LayerCache::Dense { input: x })
                }
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let g = ConvGeom::new(in_channels, (in_shape[1], in_shape[2]), kernel, stride);
                    let w = params.get(&self.pname(i, "weight"))?;
                    let b = params.get(&self.pname(i, "bias"))?;
                    let (rows, cols_n) = (g.col_rows(), g.col_cols());
                    let mut cols = vec![T::zero(); batch * rows * cols_n];
                    let mut y = vec![T::zero(); batch * out_channels * cols_n];
                    for s in 0..batch {
                        let c = &mut cols[s * rows * cols_n..(s + 1) * rows * cols_n];
                        g.im2col(x.sample(s), c);
                        let ys = &mut y[s * out_channels * cols_n..(s + 1) * out_channels * cols_n];
                        for (oc, chunk) in ys.chunks_mut(cols_n).enumerate() {
                            chunk.fill(b.data()[oc]);
                        }
                        T::gemm(false, false, out_channels, rows, cols_n, T::one(), w.data(), c, T::one(), ys);
                    }
                    (Tensor::from_vec(&full_out, y)?, LayerCache::Conv { cols })
                }
                LayerSpec::Tconv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let g = ConvGeom::new(out_channels, (out_shape[1], out_shape[2]), kernel, stride);
                    let w = params.get(&self.pname(i, "weight"))?;
                    let b = params.get(&self.pname(i, "bias"))?;
                    let (rows, cols_n) = (g.col_rows(), g.col_cols());
                    let big = out_shape[1] * out_shape[2];
                    let mut cols = vec![T::zero(); rows * cols_n];
                    let mut y = vec![T::zero(); batch * out_channels * big];
                    for s in 0..batch {
                        T::gemm(true, false, rows, in_channels, cols_n, T::one(), w.data(), x.sample(s), T::zero(), &mut cols);
                        let ys = &mut y[s * out_channels * big..(s + 1) * out_channels * big];
                        for (oc, chunk) in ys.chunks_mut(big).enumerate() {
                            chunk.fill(b.data()[oc]);
                        }
                        g.col2im(&cols, ys);
                    }
                    (Tensor::from_vec(&full_out, y)?, LayerCache::Tconv { input: x })
                }
                LayerSpec::Relu => {
                    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
                    (y, LayerCache::Relu { input: x })
                }
                LayerSpec::Tanh => {
                    let y = x.map(|v| v.tanh());
                    (y.clone(), LayerCache::Tanh { output: y })
                }
                LayerSpec::Batchnorm { .. } => self.bn_forward(i, params, &x, in_shape, mode)?,
                LayerSpec::Reshape { .. } => (x.reshape(&full_out)?, LayerCache::Reshape),
            };
            x = y;
            caches.push(cache);
        }
        Ok((
            x,
            Cache {
                network: self.name.clone(),
                batch,
                mode,
                layers: caches,
            },
        ))
    }

    fn bn_forward<T: Scalar>(
        &self,
        i: usize,
        params: &ParameterSet<T>,
        x: &Tensor<T>,
        in_shape: &[usize],
        mode: Mode,
    ) -> Result<(Tensor<T>, LayerCache<T>)> {
        let (ch, sp) = bn_layout(in_shape);
        let batch = x.batch();
        let gamma = params.get(&self.pname(i, "gamma"))?;
        let beta = params.get(&self.pname(i, "beta"))?;
        let count = T::from_usize(batch * sp).expect("count");
        let eps = T::lit(BN_EPS);
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); ch];
                let mut var = vec![T::zero(); ch];
                for s in 0..batch {
                    let xs = x.sample(s);
                    for c in 0..ch {
                        mean[c] += xs[c * sp..(c + 1) * sp].iter().copied().sum::<T>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for s in 0..batch {
                    let xs = x.sample(s);
                    for c in 0..ch {
                        var[c] += xs[c * sp..(c + 1) * sp]
                            .iter()
                            .map(|&v| (v - mean[c]) * (v - mean[c]))
                            .sum::<T>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                (mean, var)
            }
            Mode::Eval => (
                params.get(&self.pname(i, "running_mean"))?.data().to_vec(),
                params.get(&self.pname(i, "running_var"))?.data().to_vec(),
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for s in 0..batch {
            let xh = xhat.sample_mut(s);
            for c in 0..ch {
                for v in &mut xh[c * sp..(c + 1) * sp] {
                    *v = (*v - mean[c]) * inv_std[c];
                }
            }
            let ys = y.sample_mut(s);
            for c in 0..ch {
                for (o, &h) in ys[c * sp..(c + 1) * sp].iter_mut().zip(&xh[c * sp..(c + 1) * sp]) {
                    *o = gamma.data()[c] * h + beta.data()[c];
                }
            }
        }
        Ok((
            y,
            LayerCache::Batchnorm {
                xhat,
                inv_std,
                mean,
                var,
            },
        ))
    }

    fn check_cache<T>(&self, cache: &Cache<T>) -> Result<()> {
        if cache.network != self.name {
            return Err(DiffError::StaleCache {
                network: self.name.clone(),
                reason: format!("cache was recorded by `{}`", cache.network),
            });
        }
        if cache.layers.len() != self.layers.len() {
            return Err(DiffError::StaleCache {
                network: self.name.clone(),
                reason: format!("{} cached layers for {} layers", cache.layers.len(), self.layers.len()),
            });
        }
        Ok(())
    }

    /// Back-propagates `grad_out` (shape of the forward output). Returns the
    /// input gradient and gradients for every trainable parameter of this network.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        cache: &Cache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Gradients<T>)> {
        self.check_cache(cache)?;
        let batch = cache.batch;
        let mut expected = vec![batch];
        expected.extend_from_slice(self.output_shape());
        if grad_out.shape() != expected.as_slice() {
            return Err(DiffError::Shape {
                layer: self.layers.len(),
                kind: "output-grad",
                expected,
                got: grad_out.shape().to_vec(),
            });
        }
        let mut grads = Gradients::new();
        let mut dy = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let in_shape = &self.shapes[i];
            let out_shape = &self.shapes[i + 1];
            let mut full_in = vec![batch];
            full_in.extend_from_slice(in_shape);
            let dx = match (&self.layers[i], &cache.layers[i]) {
                (&LayerSpec::Dense { inputs, outputs }, LayerCache::Dense { input }) => {
                    let w = params.get(&self.pname(i, "weight"))?;
                    let mut dw = vec![T::zero(); inputs * outputs];
                    T::gemm(true, false, inputs, batch, outputs, T::one(), input.data(), dy.data(), T::zero(), &mut dw);
                    let mut db = vec![T::zero(); outputs];
                    for r in 0..batch {
                        for (d, &g) in db.iter_mut().zip(dy.sample(r)) {
                            *d += g;
                        }
                    }
                    let mut dx = vec![T::zero(); batch * inputs];
                    T::gemm(false, true, batch, outputs, inputs, T::one(), dy.data(), w.data(), T::zero(), &mut dx);
                    grads.insert(self.pname(i, "weight"), Tensor::from_vec(&[inputs, outputs], dw)?);
                    grads.insert(self.pname(i, "bias"), Tensor::from_vec(&[outputs], db)?);
                    Tensor::from_vec(&full_in, dx)?
                }
                (
                    &LayerSpec::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                    },
                    LayerCache::Conv { cols },
                ) => {
                    let g = ConvGeom::new(in_channels, (in_shape[1], in_shape[2]), kernel, stride);
                    let w = params.get(&self.pname(i, "weight"))?;
                    let (rows, cols_n) = (g.col_rows(), g.col_cols());
                    let mut dw = vec![T::zero(); out_channels * rows];
                    let mut db = vec![T::zero(); out_channels];
                    let mut dcols = vec![T::zero(); rows * cols_n];
                    let mut dx = Tensor::zeros(&full_in);
                    for s in 0..batch {
                        let dys = dy.sample(s);
                        let c = &cols[s * rows * cols_n..(s + 1) * rows * cols_n];
                        T::gemm(false, true, out_channels, cols_n, rows, T::one(), dys, c, T::one(), &mut dw);
                        for (oc, chunk) in dys.chunks(cols_n).enumerate() {
                            db[oc] += chunk.iter().copied().sum::<T>();
                        }
                        T::gemm(true, false, rows, out_channels, cols_n, T::one(), w.data(), dys, T::zero(), &mut dcols);
                        g.col2im(&dcols, dx.sample_mut(s));
                    }
                    grads.insert(self.pname(i, "weight"), Tensor::from_vec(w.shape(), dw)?);
                    grads.insert(self.pname(i, "bias"), Tensor::from_vec(&[out_channels], db)?);
                    dx
                }
                (
                    &LayerSpec::Tconv {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                    },
                    LayerCache::Tconv { input },
                ) => {
                    let g = ConvGeom::new(out_channels, (out_shape[1], out_shape[2]), kernel, stride);
                    let w = params.get(&self.pname(i, "weight"))?;
                    let (rows, cols_n) = (g.col_rows(), g.col_cols());
                    let big = out_shape[1] * out_shape[2];
                    let mut dw = vec![T::zero(); in_channels * rows];
                    let mut db = vec![T::zero(); out_channels];
                    let mut cols = vec![T::zero(); rows * cols_n];
                    let mut dx = vec![T::zero(); batch * in_channels * cols_n];
                    for s in 0..batch {
                        let dys = dy.sample(s);
                        for (oc, chunk) in dys.chunks(big).enumerate() {
                            db[oc] += chunk.iter().copied().sum::<T>();
                        }
                        g.im2col(dys, &mut cols);
                        let dxs = &mut dx[s * in_channels * cols_n..(s + 1) * in_channels * cols_n];
                        T::gemm(false, false, in_channels, rows, cols_n, T::one(), w.data(), &cols, T::zero(), dxs);
                        T::gemm(false, true, in_channels, cols_n, rows, T::one(), input.sample(s), &cols, T::one(), &mut dw);
                    }
                    grads.insert(self.pname(i, "weight"), Tensor::from_vec(w.shape(), dw)?);
                    grads.insert(self.pname(i, "bias"), Tensor::from_vec(&[out_channels], db)?);
                    Tensor::from_vec(&full_in, dx)?
                }
                (LayerSpec::Relu, LayerCache::Relu { input }) => {
                    let mut dx = dy.clone();
                    for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                        if x <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    dx
                }
                (LayerSpec::Tanh, LayerCache::Tanh { output }) => {
                    let mut dx = dy.clone();
                    for (d, &y) in dx.data_mut().iter_mut().zip(output.data()) {
                        *d *= T::one() - y * y;
                    }
                    dx
                }
                (
                    LayerSpec::Batchnorm { .. },
                    LayerCache::Batchnorm { xhat, inv_std, .. },
                ) => self.bn_backward(i, params, &dy, xhat, inv_std, in_shape, cache.mode, &mut grads)?,
                (LayerSpec::Reshape { .. }, LayerCache::Reshape) => dy.reshape(&full_in)?,
                (spec, _) => {
                    return Err(DiffError::StaleCache {
                        network: self.name.clone(),
                        reason: format!("layer {i} ({}) has a mismatched cache entry", spec.kind()),
                    })
                }
            };
            dy = dx;
        }
        Ok((dy, grads))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_backward<T: Scalar>(
        &self,
        i: usize,
        params: &ParameterSet<T>,
        dy: &Tensor<T>,
        xhat: &Tensor<T>,
        inv_std: &[T],
        in_shape: &[usize],
        mode: Mode,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let (ch, sp) = bn_layout(in_shape);
        let batch = dy.batch();
        let gamma = params.get(&self.pname(i, "gamma"))?;
        let mut dgamma = vec![T::zero(); ch];
        let mut dbeta = vec![T::zero(); ch];
        for s in 0..batch {
            let (d, h) = (dy.sample(s), xhat.sample(s));
            for c in 0..ch {
                for k in c * sp..(c + 1) * sp {
                    dbeta[c] += d[k];
                    dgamma[c] += d[k] * h[k];
                }
            }
        }
        let mut dx = dy.clone();
        match mode {
            Mode::Eval => {
                for s in 0..batch {
                    let d = dx.sample_mut(s);
                    for c in 0..ch {
                        let scale = gamma.data()[c] * inv_std[c];
                        d[c * sp..(c + 1) * sp].iter_mut().for_each(|v| *v *= scale);
                    }
                }
            }
            Mode::Train => {
                // dx = inv_std / N * (N*dxhat - sum(dxhat) - xhat * sum(dxhat * xhat)), dxhat = gamma * dy
                let n = T::from_usize(batch * sp).expect("count");
                for s in 0..batch {
                    let h = xhat.sample(s);
                    let d = dx.sample_mut(s);
                    for c in 0..ch {
                        let g = gamma.data()[c];
                        let sum_dxhat = g * dbeta[c];
                        let sum_dxhat_xhat = g * dgamma[c];
                        for k in c * sp..(c + 1) * sp {
                            let dxhat = g * d[k];
                            d[k] = inv_std[c] / n * (n * dxhat - sum_dxhat - h[k] * sum_dxhat_xhat);
                        }
                    }
                }
            }
        }
        grads.insert(self.pname(i, "gamma"), Tensor::from_vec(&[ch], dgamma)?);
        grads.insert(self.pname(i, "beta"), Tensor::from_vec(&[ch], dbeta)?);
        Ok(dx)
    }

    /// Folds the batch statistics of a train-mode cache into the running stats:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running_stats<T: Scalar>(
        &self,
        params: &mut ParameterSet<T>,
        cache: &Cache<T>,
        momentum: f64,
    ) -> Result<()> {
        self.check_cache(cache)?;
        if cache.mode != Mode::Train {
            return Ok(());
        }
        let m = T::lit(momentum);
        let one = T::one();
        for (i, entry) in cache.layers.iter().enumerate() {
            if let LayerCache::Batchnorm { mean, var, .. } = entry {
                let rm = params.get_mut(&self.pname(i, "running_mean"))?;
                for (r, &b) in rm.data_mut().iter_mut().zip(mean) {
                    *r = m * *r + (one - m) * b;
                }
                let rv = params.get_mut(&self.pname(i, "running_var"))?;
                for (r, &b) in rv.data_mut().iter_mut().zip(var) {
                    *r = m * *r + (one - m) * b;
                }
            }
        }
        Ok(())
    }
}
