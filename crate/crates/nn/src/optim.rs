//! AdamW with decoupled weight decay.

use crate::tensor::Scalar;
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment accumulators for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct OptimState<T> {
    pub config: AdamWConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients and the resulting values are checked for
    /// finiteness before any parameter is touched, so a rejected step leaves
    /// everything unchanged.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(NnError::Shape(format!("parameter tensor {i} changed size")));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(format!(
                    "gradient of parameter tensor {i} element {j} is {:?} at step {}",
                    g[j],
                    self.step + 1
                )));
            }
        }

        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let lr = T::from_f64(c.lr);
        let decay = T::from_f64(c.lr * c.weight_decay);
        let (inv_bc1, inv_bc2) = (T::from_f64(1.0 / bc1), T::from_f64(1.0 / bc2));
        let eps = T::from_f64(c.eps);

        let update = |p: T, g: T, m: T, v: T| {
            let m = b1 * m + one_b1 * g;
            let v = b2 * v + one_b2 * g * g;
            let p = p - lr * (m * inv_bc1) / ((v * inv_bc2).sqrt() + eps) - decay * p;
            (p, m, v)
        };
        // dry run first so an overflowing step leaves everything unchanged
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            for j in 0..p.len() {
                let (np, nm, nv) = update(p[j], g[j], self.m[i][j], self.v[i][j]);
                if !(np.is_finite() && nm.is_finite() && nv.is_finite()) {
                    self.step -= 1;
                    return Err(NnError::NonFinite(format!(
                        "update of parameter tensor {i} element {j} overflows at step {}",
                        self.step + 1
                    )));
                }
            }
        }
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                (p[j], m[j], v[j]) = update(p[j], g[j], m[j], v[j]);
            }
        }
        Ok(())
    }
}
