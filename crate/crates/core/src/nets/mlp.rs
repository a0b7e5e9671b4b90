use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Linear,
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::LeakyRelu(slope) => {
                if pre > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

/// Stack of dense layers over a single flat parameter vector.
///
/// Layer `i` maps `sizes[i]` to `sizes[i + 1]`; its weights are stored
/// row-major (`out x in`) followed by the bias.
#[derive(Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    grads: Vec<f64>,
    id: u64,
    version: u64,
}

impl Clone for Mlp {
    /// Clones get their own identity so caches never cross between copies.
    fn clone(&self) -> Self {
        Mlp {
            sizes: self.sizes.clone(),
            activations: self.activations.clone(),
            offsets: self.offsets.clone(),
            params: self.params.clone(),
            grads: self.grads.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    id: u64,
    version: u64,
    /// `values[i]` is the input of layer `i`; the last entry is the output.
    values: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl MlpCache {
    /// Post-activation output of layer `i`.
    pub fn layer_output(&self, i: usize) -> &[f64] {
        &self.values[i + 1]
    }

    pub fn output(&self) -> &[f64] {
        self.values.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }
}

impl Mlp {
    pub fn new(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 || sizes.contains(&0) {
            return Err(Error::shape(
                "at least two positive sizes and one activation per layer",
                format!("{} sizes, {} activations", sizes.len(), activations.len()),
            ));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for w in sizes.windows(2) {
            offsets.push(total);
            total += w[0] * w[1] + w[1];
        }
        offsets.push(total);
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            offsets,
            params: vec![0.0; total],
            grads: vec![0.0; total],
            id: fresh_id(),
            version: 0,
        })
    }

    /// Glorot-uniform weights from `seed`, zero biases.
    pub fn init_uniform(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = self.offsets[layer];
            for p in &mut self.params[w..w + fan_in * fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            for p in &mut self.params[w + fan_in * fan_out..self.offsets[layer + 1]] {
                *p = 0.0;
            }
        }
        self.touch();
    }

    /// Parameter range `(weights, biases)` of one affine layer.
    pub fn layer_range(&self, layer: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let w = self.offsets[layer];
        let split = w + self.sizes[layer] * self.sizes[layer + 1];
        (w..split, split..self.offsets[layer + 1])
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.touch();
        &mut self.params
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn params_and_grads_mut(&mut self) -> (&mut [f64], &[f64]) {
        self.touch();
        (&mut self.params, &self.grads)
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale_grads(&mut self, factor: f64) {
        self.grads.iter_mut().for_each(|g| *g *= factor);
    }

    fn touch(&mut self) {
        self.version += 1;
    }

    pub fn forward(&self, x: &[f64]) -> Result<MlpCache> {
        if x.len() != self.input_len() {
            return Err(Error::shape(self.input_len(), x.len()));
        }
        let mut values = Vec::with_capacity(self.sizes.len());
        let mut pre = Vec::with_capacity(self.num_layers());
        values.push(x.to_vec());
        for layer in 0..self.num_layers() {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let w = &self.params[self.offsets[layer]..self.offsets[layer] + n_in * n_out];
            let b = &self.params[self.offsets[layer] + n_in * n_out..self.offsets[layer + 1]];
            let input = &values[layer];
            let z: Vec<f64> = w
                .chunks_exact(n_in)
                .zip(b)
                .map(|(row, bias)| bias + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let act = self.activations[layer];
            values.push(z.iter().map(|&v| act.apply(v)).collect());
            pre.push(z);
        }
        Ok(MlpCache {
            id: self.id,
            version: self.version,
            values,
            pre,
        })
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the input. `injections` adds upstream gradients at the
    /// post-activation output of the given layers.
    pub fn backward(
        &mut self,
        cache: &MlpCache,
        grad_out: &[f64],
        injections: &[(usize, &[f64])],
    ) -> Result<Vec<f64>> {
        let mut grads = std::mem::take(&mut self.grads);
        let out = self.backprop(cache, grad_out, injections, Some(&mut grads));
        self.grads = grads;
        out
    }

    /// Gradient with respect to the input only; parameter gradients are untouched.
    pub fn input_grad(&self, cache: &MlpCache, grad_out: &[f64]) -> Result<Vec<f64>> {
        self.backprop(cache, grad_out, &[], None)
    }

    fn backprop(
        &self,
        cache: &MlpCache,
        grad_out: &[f64],
        injections: &[(usize, &[f64])],
        mut param_grads: Option<&mut Vec<f64>>,
    ) -> Result<Vec<f64>> {
        if cache.id != self.id || cache.version != self.version {
            return Err(Error::CacheMismatch);
        }
        if grad_out.len() != self.output_len() {
            return Err(Error::shape(self.output_len(), grad_out.len()));
        }
        for &(layer, g) in injections {
            if layer >= self.num_layers() || g.len() != self.sizes[layer + 1] {
                return Err(Error::shape(
                    format!("injection at layer < {}", self.num_layers()),
                    format!("layer {layer} with {} values", g.len()),
                ));
            }
        }
        let mut grad = grad_out.to_vec();
        for layer in (0..self.num_layers()).rev() {
            for &(at, g) in injections {
                if at == layer {
                    grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            let act = self.activations[layer];
            for (g, &p) in grad.iter_mut().zip(&cache.pre[layer]) {
                *g *= act.derivative(p);
            }
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let off = self.offsets[layer];
            let input = &cache.values[layer];
            let w = &self.params[off..off + n_in * n_out];
            let mut grad_in = vec![0.0; n_in];
            if let Some(pg) = param_grads.as_deref_mut() {
                let (gw, gb) = pg[off..self.offsets[layer + 1]].split_at_mut(n_in * n_out);
                for (o, &g) in grad.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    row.iter_mut().zip(input).for_each(|(r, x)| *r += g * x);
                }
            }
            for (o, &g) in grad.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let wrow = &w[o * n_in..(o + 1) * n_in];
                grad_in
                    .iter_mut()
                    .zip(wrow)
                    .for_each(|(gi, wv)| *gi += g * wv);
            }
            grad = grad_in;
        }
        Ok(grad)
    }
}
