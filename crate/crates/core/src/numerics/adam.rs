use super::matrix::{Matrix, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for a fixed list of parameter blocks.
#[derive(Debug, Clone)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step_count: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments for parameter blocks of the given `(rows, cols)` shapes.
    pub fn new(config: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| vec![T::zero(); r * c]).collect::<Vec<_>>();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self, block: usize) -> &[T] {
        &self.m[block]
    }

    pub fn second_moment(&self, block: usize) -> &[T] {
        &self.v[block]
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [&mut Matrix<T>], grads: &[&Matrix<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameter blocks", self.m.len()),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.as_slice().len() != self.m[i].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("block {i} with {} entries", self.m[i].len()),
                    format!("param {:?} / grad {:?}", p.shape(), g.shape()),
                ));
            }
        }

        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (((w, &gi), mi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = mi.as_f64() / bc1;
                let v_hat = vi.as_f64() / bc2;
                let update = lr * m_hat / (v_hat.sqrt() + epsilon);
                *w = *w - T::of(update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = Matrix::<f32>::from_fn(2, 3, |r, c| (r * 3 + c) as f32 - 2.5);
        let before = p.clone();
        let g = Matrix::zeros(2, 3);
        let mut state = AdamState::new(AdamConfig::default(), &[(2, 3)]);
        state.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        let mut p = Matrix::<f64>::zeros(1, 3);
        let g = Matrix::new(1, 3, vec![0.5, -2.0, 1e-3]).unwrap();
        let mut state = AdamState::new(cfg, &[(1, 3)]);
        state.step(&mut [&mut p], &[&g]).unwrap();
        for (w, gi) in p.as_slice().iter().zip(g.as_slice()) {
            let expected = -cfg.lr * gi / (gi.abs() + cfg.epsilon);
            assert!((w - expected).abs() < 1e-15, "{w} vs {expected}");
            assert!((w.abs() - cfg.lr).abs() < 1e-7);
        }
    }

    #[test]
    fn opposite_gradients_move_symmetrically() {
        let mut p = Matrix::<f32>::zeros(1, 2);
        let g = Matrix::new(1, 2, vec![0.3, -0.3]).unwrap();
        let mut state = AdamState::new(AdamConfig::default(), &[(1, 2)]);
        for _ in 0..5 {
            state.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert_eq!(p.get(0, 0), -p.get(0, 1));
        assert!(p.get(0, 0) < 0.0);
        assert!(state.second_moment(0).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Matrix::<f32>::zeros(2, 2);
        let g = Matrix::zeros(2, 3);
        let mut state = AdamState::new(AdamConfig::default(), &[(2, 2)]);
        assert!(state.step(&mut [&mut p], &[&g]).is_err());
        assert_eq!(state.step_count(), 0);
    }
}
