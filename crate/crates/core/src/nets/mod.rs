//! Desk-scale generators and discriminators with hand-written reverse mode.

mod adam;
pub mod checkpoint;
mod mlp;

pub use adam::AdamState;
pub use mlp::{Activation, Mlp, MlpCache};

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Architecture of a two-tap generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorArch {
    pub input_len: usize,
    /// Widths of the four hidden stages; the fifth stage maps back to `input_len`.
    pub hidden: Vec<usize>,
    /// Layer whose activation is exported as `s`.
    pub tap_s: usize,
    /// Layer whose activation is exported as `z`.
    pub tap_z: usize,
    /// Adds the input to the output head (global skip connection).
    pub residual: bool,
}

impl GeneratorArch {
    /// Five stages over a flattened patch with taps after stages 2 and 3.
    pub fn desk(input_len: usize) -> Self {
        GeneratorArch {
            input_len,
            hidden: vec![128, 64, 32, 128],
            tap_s: 1,
            tap_z: 2,
            residual: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.hidden.contains(&0) {
            return Err(Error::shape(
                "positive layer widths",
                format!("{:?}", self.hidden),
            ));
        }
        if !(self.tap_s < self.tap_z && self.tap_z < self.hidden.len()) {
            return Err(Error::shape(
                format!("tap_s < tap_z < {}", self.hidden.len()),
                format!("tap_s={}, tap_z={}", self.tap_s, self.tap_z),
            ));
        }
        Ok(())
    }

    fn sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.input_len);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(self.input_len);
        sizes
    }
}

/// Image-to-image mapping network exporting two intermediate activations.
#[derive(Debug, Clone)]
pub struct Generator {
    arch: GeneratorArch,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct GenForward {
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    pub cache: MlpCache,
}

impl Generator {
    /// All-zero parameters.
    pub fn zeros(arch: GeneratorArch) -> Result<Self> {
        arch.validate()?;
        let mut acts = vec![Activation::LeakyRelu(LEAKY_SLOPE); arch.hidden.len()];
        acts.push(Activation::Linear);
        let mlp = Mlp::new(&arch.sizes(), &acts)?;
        Ok(Generator { arch, mlp })
    }

    /// Glorot-initialized from `seed`. With a residual skip the output head
    /// starts at zero, so the untrained generator is the identity map.
    pub fn new(arch: GeneratorArch, seed: u64) -> Result<Self> {
        let mut g = Generator::zeros(arch)?;
        g.mlp.init_uniform(seed);
        if g.arch.residual {
            let head = g.mlp.num_layers() - 1;
            let (w, _) = g.mlp.layer_range(head);
            g.mlp.params_mut()[w].iter_mut().for_each(|p| *p = 0.0);
        }
        Ok(g)
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn s_dim(&self) -> usize {
        self.arch.hidden[self.arch.tap_s]
    }

    pub fn z_dim(&self) -> usize {
        self.arch.hidden[self.arch.tap_z]
    }

    pub fn num_params(&self) -> usize {
        self.mlp.params().len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<GenForward> {
        let cache = self.mlp.forward(x)?;
        let s = cache.layer_output(self.arch.tap_s).to_vec();
        let z = cache.layer_output(self.arch.tap_z).to_vec();
        let mut y = cache.output().to_vec();
        if self.arch.residual {
            y.iter_mut().zip(x).for_each(|(o, i)| *o += i);
        }
        Ok(GenForward { y, s, z, cache })
    }

    /// Accumulates parameter gradients from the output and both taps and
    /// returns the gradient with respect to the input image.
    pub fn backward(
        &mut self,
        cache: &MlpCache,
        grad_y: &[f64],
        grad_s: Option<&[f64]>,
        grad_z: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let mut injections: Vec<(usize, &[f64])> = Vec::with_capacity(2);
        if let Some(g) = grad_s {
            injections.push((self.arch.tap_s, g));
        }
        if let Some(g) = grad_z {
            injections.push((self.arch.tap_z, g));
        }
        let mut grad_x = self.mlp.backward(cache, grad_y, &injections)?;
        if self.arch.residual {
            grad_x.iter_mut().zip(grad_y).for_each(|(a, b)| *a += b);
        }
        Ok(grad_x)
    }
}

/// Scalar-score critic.
#[derive(Debug, Clone)]
pub struct Discriminator {
    mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct DiscForward {
    pub score: f64,
    pub cache: MlpCache,
}

impl Discriminator {
    pub fn zeros(input_len: usize, hidden: &[usize]) -> Result<Self> {
        let mut sizes = vec![input_len];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut acts = vec![Activation::LeakyRelu(LEAKY_SLOPE); hidden.len()];
        acts.push(Activation::Linear);
        Ok(Discriminator {
            mlp: Mlp::new(&sizes, &acts)?,
        })
    }

    pub fn new(input_len: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut d = Discriminator::zeros(input_len, hidden)?;
        d.mlp.init_uniform(seed);
        Ok(d)
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn forward(&self, x: &[f64]) -> Result<DiscForward> {
        let cache = self.mlp.forward(x)?;
        Ok(DiscForward {
            score: cache.output()[0],
            cache,
        })
    }

    /// Accumulates `d(loss)/d(params)` given `d(loss)/d(score)` and returns
    /// the gradient with respect to the input.
    pub fn backward(&mut self, cache: &MlpCache, grad_score: f64) -> Result<Vec<f64>> {
        self.mlp.backward(cache, &[grad_score], &[])
    }

    /// Input gradient only; parameter gradients are left untouched.
    pub fn input_grad(&self, cache: &MlpCache, grad_score: f64) -> Result<Vec<f64>> {
        self.mlp.input_grad(cache, &[grad_score])
    }
}
