use crate::error::{Error, Result};
use crate::nets::{Discriminator, Generator};

/// Named components of the full generator objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub cyc_w: f64,
    pub cyc_c: f64,
    pub adv_fwd: f64,
    pub adv_rev: f64,
    pub identity: f64,
    pub p_fwd: f64,
    pub p_rev: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// CycleGAN part of the objective.
    pub fn cycle_gan(&self) -> f64 {
        self.cyc_w + self.cyc_c + self.adv_fwd + self.adv_rev + self.identity
    }

    /// Recomputes `total` from the components.
    pub fn assemble(&mut self, lambda_p: f64) {
        self.total = self.cycle_gan() + lambda_p * (self.p_fwd + self.p_rev);
    }

    pub fn fields(&self) -> [f64; 8] {
        [
            self.cyc_w,
            self.cyc_c,
            self.adv_fwd,
            self.adv_rev,
            self.identity,
            self.p_fwd,
            self.p_rev,
            self.total,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|v| v.is_finite())
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown) {
        self.cyc_w += other.cyc_w;
        self.cyc_c += other.cyc_c;
        self.adv_fwd += other.adv_fwd;
        self.adv_rev += other.adv_rev;
        self.identity += other.identity;
        self.p_fwd += other.p_fwd;
        self.p_rev += other.p_rev;
        self.total += other.total;
    }

    pub(crate) fn scaled(&self, f: f64) -> LossBreakdown {
        LossBreakdown {
            cyc_w: self.cyc_w * f,
            cyc_c: self.cyc_c * f,
            adv_fwd: self.adv_fwd * f,
            adv_rev: self.adv_rev * f,
            identity: self.identity * f,
            p_fwd: self.p_fwd * f,
            p_rev: self.p_rev * f,
            total: self.total * f,
        }
    }
}

/// Least-squares GAN terms from raw discriminator scores:
/// generator `(D(fake) − 1)²`, discriminator `½[(D(real) − 1)² + D(fake)²]`.
pub fn lsgan_terms(real_score: f64, fake_score: f64) -> (f64, f64) {
    let gen = (fake_score - 1.0).powi(2);
    let disc = 0.5 * ((real_score - 1.0).powi(2) + fake_score * fake_score);
    (gen, disc)
}

pub fn adversarial_losses(d: &Discriminator, real: &[f64], fake: &[f64]) -> Result<(f64, f64)> {
    if real.len() != fake.len() {
        return Err(Error::shape(real.len(), fake.len()));
    }
    let r = d.forward(real)?.score;
    let f = d.forward(fake)?.score;
    Ok(lsgan_terms(r, f))
}

/// Mean absolute error.
pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

/// Gradient of [`l1`] in `a`; zero where `a == b`.
pub fn l1_grad(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(1) as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x > y {
                1.0 / n
            } else if x < y {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect()
}

/// `L1(F_{C→W}(I_w), I_w) + L1(F_{W→C}(I_c), I_c)`.
pub fn identity_loss(fwd: &Generator, rev: &Generator, iw: &[f64], ic: &[f64]) -> Result<f64> {
    let a = rev.forward(iw)?.y;
    let b = fwd.forward(ic)?.y;
    Ok(l1(&a, iw) + l1(&b, ic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::GeneratorArch;

    #[test]
    fn lsgan_cases() {
        assert_eq!(lsgan_terms(0.3, 1.0).0, 0.0);
        assert_eq!(lsgan_terms(1.0, 0.0).1, 0.0);
        let (g, d) = lsgan_terms(0.5, 0.5);
        assert!((g - 0.25).abs() < 1e-15);
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn identity_loss_cases() {
        let arch = GeneratorArch {
            input_len: 16,
            hidden: vec![4, 3, 2, 4],
            tap_s: 1,
            tap_z: 2,
            residual: true,
        };
        let ident = Generator::zeros(arch.clone()).unwrap();
        let iw: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let ic = vec![0.7; 16];
        assert_eq!(identity_loss(&ident, &ident, &iw, &ic).unwrap(), 0.0);

        let zero = Generator::zeros(GeneratorArch {
            residual: false,
            ..arch
        })
        .unwrap();
        let ones = vec![1.0; 16];
        assert_eq!(identity_loss(&zero, &zero, &ones, &ones).unwrap(), 2.0);

        let g1 = Generator::new(ident.arch().clone(), 1).unwrap();
        let g2 = Generator::new(ident.arch().clone(), 2).unwrap();
        assert_eq!(
            identity_loss(&g1, &g2, &iw, &ic).unwrap(),
            identity_loss(&g2, &g1, &ic, &iw).unwrap()
        );
    }

    #[test]
    fn l1_grad_matches_sign() {
        assert_eq!(
            l1_grad(&[1.0, 0.0, 2.0, 3.0], &[0.0, 0.0, 3.0, 3.0]),
            vec![0.25, 0.0, -0.25, 0.0]
        );
    }
}
