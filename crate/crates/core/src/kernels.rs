//! Base kernels and the deep effective-kernel recursion.
//!
//! A depth-`L` deep GP is never sampled layer by layer. Each hidden layer is
//! integrated out analytically, so the whole stack collapses into one
//! kernel evaluated on the input pair. Layer 1 is evaluated directly on the
//! inputs with its own family; every later layer is the expectation of its
//! family over the Gaussian output of the layer below, which only needs the
//! three numbers `k(x,x)`, `k(y,y)` and `k(x,y)` from that layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, sq_dist, Mat};

/// Bias added to the linear kernel so it never degenerates to exactly zero.
pub const LINEAR_BIAS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum KernelFamily {
    /// Squared exponential, `β² exp(−‖x−y‖² / 2γ²)`.
    Se,
    /// Dimension-normalized linear, `β² xᵀy / dim + bias`.
    Lin,
    /// Squared cosine, `β² cos²(‖x−y‖ / γ)`.
    Sc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelLayer {
    pub family: KernelFamily,
    pub beta: f64,
    pub gamma: f64,
}

impl KernelLayer {
    pub fn se(beta: f64, gamma: f64) -> Self {
        KernelLayer {
            family: KernelFamily::Se,
            beta,
            gamma,
        }
    }
}

/// Kernel configuration for the GP supervisor. The prior mean is always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub layers: Vec<KernelLayer>,
    pub noise_var: f64,
}

impl Default for KernelSpec {
    /// Four homogeneous SE layers with β = γ = 1 and noise variance 0.01.
    fn default() -> Self {
        KernelSpec::homogeneous_se(4, 1.0, 0.01)
    }
}

impl KernelSpec {
    /// `depth` SE layers sharing β = γ = `scale`.
    pub fn homogeneous_se(depth: usize, scale: f64, noise_var: f64) -> Self {
        KernelSpec {
            layers: vec![KernelLayer::se(scale, scale); depth],
            noise_var,
        }
    }

    /// `SE[inner]`: the first layer uses `inner`, the rest are SE.
    pub fn composed(inner: KernelFamily, depth: usize, scale: f64, noise_var: f64) -> Self {
        let mut spec = KernelSpec::homogeneous_se(depth, scale, noise_var);
        if let Some(first) = spec.layers.first_mut() {
            first.family = inner;
        }
        spec
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Copy with every layer's signal scale set to `beta` and length scale to `gamma`.
    pub fn with_scales(mut self, beta: f64, gamma: f64) -> KernelSpec {
        for l in &mut self.layers {
            l.beta = beta;
            l.gamma = gamma;
        }
        self
    }

    /// Copy with the first layer's length scale replaced by `gamma`.
    pub fn with_input_length_scale(&self, gamma: f64) -> KernelSpec {
        let mut spec = self.clone();
        if let Some(first) = spec.layers.first_mut() {
            first.gamma = gamma;
        }
        spec
    }

    /// Signal variance β² of the outermost layer.
    pub fn outer_variance(&self) -> f64 {
        self.layers.last().map_or(0.0, |l| l.beta * l.beta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidKernel("at least one layer required".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.beta > 0.0 && l.beta.is_finite()) || !(l.gamma > 0.0 && l.gamma.is_finite()) {
                return Err(Error::InvalidKernel(format!(
                    "layer {i}: beta and gamma must be positive and finite"
                )));
            }
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidKernel(
                "noise_var must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

fn base_value(layer: &KernelLayer, x: &[f64], y: &[f64]) -> f64 {
    let b2 = layer.beta * layer.beta;
    match layer.family {
        KernelFamily::Se => b2 * (-sq_dist(x, y) / (2.0 * layer.gamma * layer.gamma)).exp(),
        KernelFamily::Lin => b2 * dot(x, y) / x.len().max(1) as f64 + LINEAR_BIAS,
        KernelFamily::Sc => {
            let c = (sq_dist(x, y).sqrt() / layer.gamma).cos();
            b2 * c * c
        }
    }
}

/// Evaluates the family of `layer` directly on the input vectors.
pub fn base_kernel(spec: &KernelSpec, layer: usize, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let l = spec.layers.get(layer).ok_or_else(|| {
        Error::InvalidKernel(format!(
            "layer {layer} out of range for depth {}",
            spec.depth()
        ))
    })?;
    Ok(base_value(l, x, y))
}

/// Second moments of one GP layer's output at a pair of inputs.
#[derive(Debug, Clone, Copy)]
struct Moments {
    kxx: f64,
    kyy: f64,
    kxy: f64,
}

/// Expected value of `layer`'s kernel applied to a zero-mean Gaussian pair
/// with the given moments, plus the new self-moments.
fn lift(layer: &KernelLayer, m: Moments, depth: usize) -> Result<Moments> {
    let b2 = layer.beta * layer.beta;
    let g2 = layer.gamma * layer.gamma;
    let out = match layer.family {
        KernelFamily::Se => {
            // 1 + 2γ⁻²[β²_prev − k_prev] for stationary layers below.
            let radicand = 1.0 + 2.0 * (0.5 * (m.kxx + m.kyy) - m.kxy) / g2;
            if !radicand.is_finite() || radicand <= 0.0 {
                return Err(Error::NonFiniteRecursion { layer: depth });
            }
            Moments {
                kxx: b2,
                kyy: b2,
                kxy: b2 / radicand.sqrt(),
            }
        }
        KernelFamily::Sc => {
            let var = m.kxx + m.kyy - 2.0 * m.kxy;
            Moments {
                kxx: b2,
                kyy: b2,
                kxy: 0.5 * b2 * (1.0 + (-2.0 * var / g2).exp()),
            }
        }
        KernelFamily::Lin => Moments {
            kxx: b2 * m.kxx + LINEAR_BIAS,
            kyy: b2 * m.kyy + LINEAR_BIAS,
            kxy: b2 * m.kxy + LINEAR_BIAS,
        },
    };
    if !out.kxy.is_finite() {
        return Err(Error::NonFiniteRecursion { layer: depth });
    }
    Ok(out)
}

fn base_moments(layer: &KernelLayer, x: &[f64], y: &[f64]) -> Moments {
    Moments {
        kxx: base_value(layer, x, x),
        kyy: base_value(layer, y, y),
        kxy: base_value(layer, x, y),
    }
}

/// Effective kernel of the full deep GP described by `spec`.
pub fn effective_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let (first, rest) = spec
        .layers
        .split_first()
        .ok_or_else(|| Error::InvalidKernel("at least one layer required".into()))?;
    let mut m = base_moments(first, x, y);
    for (i, layer) in rest.iter().enumerate() {
        m = lift(layer, m, i + 2)?;
    }
    Ok(m.kxy)
}

/// Value and gradient with respect to `x` of [`effective_kernel`].
///
/// Forward-mode through the recursion: every moment that depends on `x`
/// carries its gradient along (`k(y,y)` never does).
pub fn effective_kernel_grad_x(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dims(x, y)?;
    let (first, rest) = spec
        .layers
        .split_first()
        .ok_or_else(|| Error::InvalidKernel("at least one layer required".into()))?;
    let d = x.len();
    let mut m = base_moments(first, x, y);
    let b2 = first.beta * first.beta;
    let g2 = first.gamma * first.gamma;
    let (mut dxx, mut dxy): (Vec<f64>, Vec<f64>) = match first.family {
        KernelFamily::Se => (
            vec![0.0; d],
            x.iter()
                .zip(y)
                .map(|(a, b)| -m.kxy * (a - b) / g2)
                .collect(),
        ),
        KernelFamily::Lin => {
            let n = d.max(1) as f64;
            (
                x.iter().map(|a| 2.0 * b2 * a / n).collect(),
                y.iter().map(|b| b2 * b / n).collect(),
            )
        }
        KernelFamily::Sc => {
            let r = sq_dist(x, y).sqrt();
            let g = first.gamma;
            // d/dx cos²(r/γ) = −sin(2r/γ)/(γ r) (x−y); the factor tends to 2/γ² as r → 0.
            let factor = if r > 0.0 {
                -b2 * (2.0 * r / g).sin() / (g * r)
            } else {
                -2.0 * b2 / g2
            };
            (
                vec![0.0; d],
                x.iter().zip(y).map(|(a, b)| factor * (a - b)).collect(),
            )
        }
    };
    for (i, layer) in rest.iter().enumerate() {
        let lb2 = layer.beta * layer.beta;
        let lg2 = layer.gamma * layer.gamma;
        let next = lift(layer, m, i + 2)?;
        match layer.family {
            KernelFamily::Se => {
                let radicand = 1.0 + 2.0 * (0.5 * (m.kxx + m.kyy) - m.kxy) / lg2;
                let coef = -0.5 * lb2 * radicand.powf(-1.5) / lg2;
                dxy = dxx
                    .iter()
                    .zip(&dxy)
                    .map(|(a, b)| coef * (a - 2.0 * b))
                    .collect();
                dxx.iter_mut().for_each(|v| *v = 0.0);
            }
            KernelFamily::Sc => {
                let var = m.kxx + m.kyy - 2.0 * m.kxy;
                let e = (-2.0 * var / lg2).exp();
                let coef = 0.5 * lb2 * e * (-2.0 / lg2);
                dxy = dxx
                    .iter()
                    .zip(&dxy)
                    .map(|(a, b)| coef * (a - 2.0 * b))
                    .collect();
                dxx.iter_mut().for_each(|v| *v = 0.0);
            }
            KernelFamily::Lin => {
                dxy.iter_mut().for_each(|v| *v *= lb2);
                dxx.iter_mut().for_each(|v| *v *= lb2);
            }
        }
        m = next;
    }
    Ok((m.kxy, dxy))
}

/// Kernel matrix with entry `(i, j) = k_eff(rows[i], cols[j])`.
pub fn gram<R: AsRef<[f64]>, C: AsRef<[f64]>>(
    spec: &KernelSpec,
    rows: &[R],
    cols: &[C],
) -> Result<Mat> {
    let mut out = Mat::zeros(rows.len(), cols.len());
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            out[(i, j)] = effective_kernel(spec, r.as_ref(), c.as_ref())?;
        }
    }
    Ok(out)
}

/// Symmetric kernel matrix of a point set against itself.
pub fn gram_sym<R: AsRef<[f64]>>(spec: &KernelSpec, points: &[R]) -> Result<Mat> {
    let n = points.len();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = effective_kernel(spec, points[i].as_ref(), points[j].as_ref())?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_se(depth: usize) -> KernelSpec {
        KernelSpec::homogeneous_se(depth, 1.0, 0.01)
    }

    #[test]
    fn se_base_cases() {
        let spec = unit_se(1);
        let x = [0.3, -0.2];
        assert_eq!(base_kernel(&spec, 0, &x, &x).unwrap(), 1.0);
        let y = [1.3, 0.8];
        let k = base_kernel(&spec, 0, &x, &y).unwrap();
        assert!((k - (-1f64).exp()).abs() < 1e-15);
        assert!((k - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn two_layer_hand_value() {
        let spec = unit_se(2);
        let k = effective_kernel(&spec, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let expected = 1.0 / (1.0 + 2.0 * (1.0 - (-1f64).exp())).sqrt();
        assert!((k - expected).abs() < 1e-15);
        assert!((k - 0.664567).abs() < 1e-6);
    }

    #[test]
    fn self_value_is_outer_variance() {
        let mut spec = unit_se(4);
        spec.layers[3].beta = 1.7;
        spec.layers[3].gamma = 1.7;
        spec.layers[1].gamma = 0.4;
        let x = [0.5, 2.0, -1.0];
        let k = effective_kernel(&spec, &x, &x).unwrap();
        assert!((k - 1.7 * 1.7).abs() < 1e-12);
    }

    #[test]
    fn depth_one_equals_base() {
        let spec = unit_se(1);
        let (x, y) = ([0.1, 0.4, -0.3], [0.7, -0.2, 0.9]);
        assert_eq!(
            effective_kernel(&spec, &x, &y).unwrap(),
            base_kernel(&spec, 0, &x, &y).unwrap()
        );
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            effective_kernel(&unit_se(2), &[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(base_kernel(&unit_se(2), 5, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn gram_single_point() {
        let spec = KernelSpec::homogeneous_se(3, 2.0, 0.01);
        let g = gram(&spec, &[vec![0.3, 0.1]], &[vec![0.3, 0.1]]).unwrap();
        assert!((g[(0, 0)] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let x = [0.3, -0.4, 0.8];
        let y = [0.1, 0.2, 0.5];
        let families = [KernelFamily::Se, KernelFamily::Lin, KernelFamily::Sc];
        for inner in families {
            for (depth, outer) in (1..=3).flat_map(|d| families.map(|f| (d, f))) {
                let mut spec = KernelSpec::composed(inner, depth, 1.2, 0.01);
                if depth > 1 {
                    spec.layers[depth - 1].family = outer;
                }
                let (v, g) = effective_kernel_grad_x(&spec, &x, &y).unwrap();
                assert!((v - effective_kernel(&spec, &x, &y).unwrap()).abs() < 1e-15);
                for i in 0..3 {
                    let h = 1e-6;
                    let mut xp = x;
                    let mut xm = x;
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (effective_kernel(&spec, &xp, &y).unwrap()
                        - effective_kernel(&spec, &xm, &y).unwrap())
                        / (2.0 * h);
                    assert!(
                        (fd - g[i]).abs() < 1e-7,
                        "{inner:?} depth {depth}: {fd} vs {}",
                        g[i]
                    );
                }
            }
        }
    }
}
