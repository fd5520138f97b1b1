use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{join, Parameters};
use crate::error::{Error, Result};

/// Added to the variance inside layer norm.
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

/// `y = W x + b` with `W` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Centered uniform weights with bound `1/sqrt(fan_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        for i in 0..dim {
            l.weights[i * dim + i] = 1.0;
        }
        l
    }

    #[inline]
    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            *yo = self.bias[o] + dot(row, x);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.out_dim];
        self.forward_into(x, &mut y);
        y
    }

    /// Accumulates `dW += g xᵀ`, `db += g` into `grads` and adds `Wᵀ g` to
    /// `dx`.
    #[inline]
    pub fn backward_into(&self, x: &[f64], g: &[f64], grads: &mut Linear, dx: &mut [f64]) {
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            grads.bias[o] += go;
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grads.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += go * x[i];
                dx[i] += go * row[i];
            }
        }
    }

    /// Same as [`Linear::backward_into`] without the input gradient.
    #[inline]
    pub fn backward_params(&self, x: &[f64], g: &[f64], grads: &mut Linear) {
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            grads.bias[o] += go;
            let grow = &mut grads.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += go * x[i];
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Parameters for Linear {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        f(
            join(prefix, "weight"),
            &[self.out_dim, self.in_dim],
            &self.weights,
        );
        f(join(prefix, "bias"), &[self.out_dim], &self.bias);
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.weights);
        f(&mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub linear: Linear,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }
}

/// A multilayer perceptron, optionally wrapped as `LN(x + mlp(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub layers: Vec<DenseLayer>,
    pub residual: bool,
    pub layer_norm: Option<LayerNorm>,
}

impl DenseParams {
    /// Builds `dims[0] → dims[1] → … → dims[n]` with ReLU between layers and
    /// no activation on the output.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| DenseLayer {
                linear: Linear::init(dims[i], dims[i + 1], rng),
                activation: if i + 1 < n {
                    Activation::Relu
                } else {
                    Activation::None
                },
            })
            .collect();
        Self {
            layers,
            residual: false,
            layer_norm: None,
        }
    }

    /// Residual block `LN(x + mlp(x))`.
    pub fn residual_block<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::mlp(&[dim, hidden, dim], rng);
        p.residual = true;
        p.layer_norm = Some(LayerNorm::new(dim));
        p
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].linear.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").linear.out_dim
    }

    /// Zeroes the last layer so the network starts as a constant zero map
    /// (or as `LN(x)` for residual blocks).
    pub fn zero_last_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.linear.weights.fill(0.0);
        last.linear.bias.fill(0.0);
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ShapeMismatch("network has no layers".into()));
        }
        for w in self.layers.windows(2) {
            if w[0].linear.out_dim != w[1].linear.in_dim {
                return Err(Error::DimMismatch {
                    expected: w[0].linear.out_dim,
                    got: w[1].linear.in_dim,
                });
            }
        }
        for l in &self.layers {
            let lin = &l.linear;
            if lin.weights.len() != lin.in_dim * lin.out_dim || lin.bias.len() != lin.out_dim {
                return Err(Error::ShapeMismatch("linear layer storage".into()));
            }
            if lin.weights.iter().chain(&lin.bias).any(|v| !v.is_finite()) {
                return Err(Error::Invariant("non-finite network weights".into()));
            }
        }
        if self.residual && self.in_dim() != self.out_dim() {
            return Err(Error::DimMismatch {
                expected: self.in_dim(),
                got: self.out_dim(),
            });
        }
        if let Some(ln) = &self.layer_norm {
            if ln.gain.len() != self.out_dim() || ln.bias.len() != self.out_dim() {
                return Err(Error::DimMismatch {
                    expected: self.out_dim(),
                    got: ln.gain.len(),
                });
            }
        }
        Ok(())
    }
}

impl Parameters for DenseParams {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.linear.for_each(&join(prefix, &i.to_string()), f);
        }
        if let Some(ln) = &self.layer_norm {
            f(join(prefix, "ln.gain"), &[ln.gain.len()], &ln.gain);
            f(join(prefix, "ln.bias"), &[ln.bias.len()], &ln.bias);
        }
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            l.linear.for_each_mut(f);
        }
        if let Some(ln) = &mut self.layer_norm {
            f(&mut ln.gain);
            f(&mut ln.bias);
        }
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to every layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of every layer.
    pre: Vec<Vec<f64>>,
    /// Normalized vector and `1/std` when layer norm is present.
    norm: Option<(Vec<f64>, f64)>,
    consumed: bool,
}

/// Forward pass recording a tape for [`mlp_backward`].
pub fn mlp_forward(params: &DenseParams, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
    if x.len() != params.in_dim() {
        return Err(Error::DimMismatch {
            expected: params.in_dim(),
            got: x.len(),
        });
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut h = x.to_vec();
    for l in &params.layers {
        let z = l.linear.forward(&h);
        let next = match l.activation {
            Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
            Activation::None => z.clone(),
        };
        inputs.push(std::mem::replace(&mut h, next));
        pre.push(z);
    }
    if params.residual {
        for (hi, xi) in h.iter_mut().zip(x) {
            *hi += xi;
        }
    }
    let mut norm = None;
    if let Some(ln) = &params.layer_norm {
        let n = h.len() as f64;
        let mean = h.iter().sum::<f64>() / n;
        let var = h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let xhat: Vec<f64> = h.iter().map(|v| (v - mean) * inv_std).collect();
        h = xhat
            .iter()
            .zip(ln.gain.iter().zip(&ln.bias))
            .map(|(v, (g, b))| v * g + b)
            .collect();
        norm = Some((xhat, inv_std));
    }
    Ok((
        h,
        Tape {
            inputs,
            pre,
            norm,
            consumed: false,
        },
    ))
}

impl DenseParams {
    /// Forward pass without a tape.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        mlp_forward(self, x).expect("input dimension").0
    }

    /// Backward pass accumulating parameter gradients into `grads`; returns
    /// the input gradient.
    pub fn backward_accumulate(
        &self,
        tape: &mut Tape,
        upstream: &[f64],
        grads: &mut DenseParams,
    ) -> Result<Vec<f64>> {
        if tape.consumed {
            return Err(Error::TapeReuse);
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::DimMismatch {
                expected: self.out_dim(),
                got: upstream.len(),
            });
        }
        tape.consumed = true;
        let mut g = upstream.to_vec();
        if let (Some(ln), Some((xhat, inv_std))) = (&self.layer_norm, &tape.norm) {
            let gln = grads
                .layer_norm
                .as_mut()
                .expect("matching gradient container");
            let n = g.len() as f64;
            let mut dxhat = vec![0.0; g.len()];
            for i in 0..g.len() {
                gln.gain[i] += g[i] * xhat[i];
                gln.bias[i] += g[i];
                dxhat[i] = g[i] * ln.gain[i];
            }
            let mean_d = dxhat.iter().sum::<f64>() / n;
            let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
            for i in 0..g.len() {
                g[i] = inv_std * (dxhat[i] - mean_d - xhat[i] * mean_dx);
            }
        }
        let skip = if self.residual { Some(g.clone()) } else { None };
        for (i, l) in self.layers.iter().enumerate().rev() {
            if l.activation == Activation::Relu {
                for (gv, z) in g.iter_mut().zip(&tape.pre[i]) {
                    if *z <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let mut dx = vec![0.0; l.linear.in_dim];
            l.linear
                .backward_into(&tape.inputs[i], &g, &mut grads.layers[i].linear, &mut dx);
            g = dx;
        }
        if let Some(s) = skip {
            for (gv, sv) in g.iter_mut().zip(s) {
                *gv += sv;
            }
        }
        Ok(g)
    }
}

/// Reverse-mode pass: returns `(parameter gradients, input gradient)`.
pub fn mlp_backward(
    params: &DenseParams,
    tape: &mut Tape,
    upstream: &[f64],
) -> Result<(DenseParams, Vec<f64>)> {
    let mut grads = super::params::zeros_like(params);
    let dx = params.backward_accumulate(tape, upstream, &mut grads)?;
    Ok((grads, dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, grad_check, unflatten};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    /// Straight-line re-evaluation used as an oracle.
    fn naive_forward(p: &DenseParams, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &p.layers {
            let lin = &l.linear;
            let mut z = vec![0.0; lin.out_dim];
            for o in 0..lin.out_dim {
                let mut acc = lin.bias[o];
                for i in 0..lin.in_dim {
                    acc += lin.weights[o * lin.in_dim + i] * h[i];
                }
                z[o] = match l.activation {
                    Activation::Relu => {
                        if acc > 0.0 {
                            acc
                        } else {
                            0.0
                        }
                    }
                    Activation::None => acc,
                };
            }
            h = z;
        }
        if p.residual {
            for i in 0..h.len() {
                h[i] += x[i];
            }
        }
        if let Some(ln) = &p.layer_norm {
            let n = h.len() as f64;
            let m: f64 = h.iter().sum::<f64>() / n;
            let v: f64 = h.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
            for i in 0..h.len() {
                h[i] = (h[i] - m) / (v + LAYER_NORM_EPS).sqrt() * ln.gain[i] + ln.bias[i];
            }
        }
        h
    }

    fn random_input(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| r.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn zero_weights_pass_bias_through_activations() {
        let mut p = DenseParams::mlp(&[3, 4, 2], &mut rng());
        for l in &mut p.layers {
            l.linear.weights.fill(0.0);
        }
        p.layers[0].linear.bias = vec![1.0, -1.0, 2.0, -3.0];
        p.layers[1].linear.bias = vec![0.5, -0.5];
        let (y, _) = mlp_forward(&p, &[9.0, 9.0, 9.0]).unwrap();
        assert_eq!(y, vec![0.5, -0.5]);
        // relu clamping of the hidden biases is visible once weights read them
        p.layers[1].linear.weights = vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let (y, _) = mlp_forward(&p, &[0.0; 3]).unwrap();
        assert_eq!(y, vec![3.5, -0.5]);
    }

    #[test]
    fn identity_layer_is_identity() {
        let p = DenseParams {
            layers: vec![DenseLayer {
                linear: Linear::identity(4),
                activation: Activation::None,
            }],
            residual: false,
            layer_norm: None,
        };
        let x = [1.0, -2.0, 3.5, 0.0];
        assert_eq!(mlp_forward(&p, &x).unwrap().0, x.to_vec());
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut r = rng();
        for p in [
            DenseParams::mlp(&[7, 16, 16, 3], &mut r),
            DenseParams::residual_block(8, 32, &mut r),
        ] {
            let x = random_input(p.in_dim(), &mut r);
            let got = mlp_forward(&p, &x).unwrap().0;
            let want = naive_forward(&p, &x);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = DenseParams::mlp(&[3, 2], &mut rng());
        assert!(matches!(
            mlp_forward(&p, &[1.0; 4]),
            Err(Error::DimMismatch {
                expected: 3,
                got: 4
            })
        ));
    }

    #[test]
    fn linear_backward_textbook_identity() {
        let mut r = rng();
        let p = DenseParams::mlp(&[3, 2], &mut r);
        let x = [0.5, -1.0, 2.0];
        let g = [1.5, -0.25];
        let (_, mut tape) = mlp_forward(&p, &x).unwrap();
        let (grads, dx) = mlp_backward(&p, &mut tape, &g).unwrap();
        let w = &p.layers[0].linear.weights;
        for i in 0..3 {
            let want = w[i] * g[0] + w[3 + i] * g[1];
            assert!((dx[i] - want).abs() < 1e-15);
        }
        for o in 0..2 {
            assert_eq!(grads.layers[0].linear.bias[o], g[o]);
            for i in 0..3 {
                assert_eq!(grads.layers[0].linear.weights[o * 3 + i], g[o] * x[i]);
            }
        }
    }

    #[test]
    fn relu_blocks_gradient_at_negative_preactivation() {
        let mut p = DenseParams::mlp(&[1, 1, 1], &mut rng());
        p.layers[0].linear.weights = vec![1.0];
        p.layers[0].linear.bias = vec![-5.0];
        p.layers[1].linear.weights = vec![2.0];
        let (_, mut tape) = mlp_forward(&p, &[1.0]).unwrap();
        let (grads, dx) = mlp_backward(&p, &mut tape, &[1.0]).unwrap();
        assert_eq!(dx, vec![0.0]);
        assert_eq!(grads.layers[0].linear.weights, vec![0.0]);
    }

    #[test]
    fn tape_cannot_be_replayed() {
        let p = DenseParams::mlp(&[2, 2], &mut rng());
        let (_, mut tape) = mlp_forward(&p, &[1.0, 2.0]).unwrap();
        mlp_backward(&p, &mut tape, &[1.0, 1.0]).unwrap();
        assert!(matches!(
            mlp_backward(&p, &mut tape, &[1.0, 1.0]),
            Err(Error::TapeReuse)
        ));
    }

    fn check_network(p: &DenseParams, r: &mut ChaCha8Rng) -> f64 {
        let x = random_input(p.in_dim(), r);
        let up = random_input(p.out_dim(), r);
        let (_, mut tape) = mlp_forward(p, &x).unwrap();
        let (grads, dx) = mlp_backward(p, &mut tape, &up).unwrap();
        let loss = |q: &DenseParams, x: &[f64]| -> f64 {
            q.apply(x).iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let theta = flatten(p);
        let mut q = p.clone();
        let e1 = grad_check(
            |t| {
                unflatten(&mut q, t);
                loss(&q, &x)
            },
            &flatten(&grads),
            &theta,
            1e-5,
        );
        let e2 = grad_check(|xx| loss(p, xx), &dx, &x, 1e-5);
        e1.max(e2)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng();
        for p in [
            DenseParams::mlp(&[6, 12, 12, 3], &mut r),
            DenseParams::mlp(&[5, 2], &mut r),
            DenseParams::residual_block(6, 24, &mut r),
        ] {
            let err = check_network(&p, &mut r);
            assert!(err < 1e-6, "rel err {err}");
        }
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut r = rng();
        let p = DenseParams::residual_block(16, 32, &mut r);
        for _ in 0..20 {
            let x = random_input(16, &mut r);
            let (_, tape) = mlp_forward(&p, &x).unwrap();
            let (xhat, _) = tape.norm.as_ref().unwrap();
            let n = xhat.len() as f64;
            let m = xhat.iter().sum::<f64>() / n;
            let v = xhat.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut r = rng();
        let p = DenseParams::residual_block(8, 16, &mut r);
        let x = random_input(8, &mut r);
        let a = mlp_forward(&p, &x).unwrap().0;
        let b = mlp_forward(&p, &x).unwrap().0;
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}
