use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// CycleGAN-style betas (0.5, 0.999) and eps 1e-8.
    pub fn new(num_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                self.m.len(),
                format!("params {}, grads {}", params.len(), grads.len()),
            ));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params() {
        let mut adam = AdamState::new(3, 2e-4);
        let mut p = vec![0.5, -1.0, 2.0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut adam = AdamState::new(2, 0.0);
        let mut p = vec![0.5, -1.0];
        adam.step(&mut p, &[3.0, -2.0]).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let lr = 2e-4;
        let mut adam = AdamState::new(1, lr);
        let mut p = vec![0.0];
        adam.step(&mut p, &[1.0]).unwrap();
        let expected = -lr / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn shape_mismatch() {
        let mut adam = AdamState::new(2, 1e-3);
        assert!(adam.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
