use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Exponential moving average of parameters, `ema <- decay ema + (1 - decay) theta`.
#[derive(Debug, Clone)]
pub struct Ema {
    decay: f64,
    shadow: Vec<f64>,
}

impl Ema {
    pub fn new(decay: f64, initial: &[f64]) -> Self {
        Self {
            decay,
            shadow: initial.to_vec(),
        }
    }

    pub fn update(&mut self, params: &[f64]) {
        let d = self.decay;
        for (s, p) in self.shadow.iter_mut().zip(params) {
            *s = d * *s + (1.0 - d) * p;
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.shadow
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_matches_unrolled_recursion() {
        let decay = 0.9;
        let init = [1.0, -2.0];
        let updates: Vec<[f64; 2]> = (0..25).map(|k| [k as f64 * 0.3, (k as f64).sin()]).collect();
        let mut ema = Ema::new(decay, &init);
        for u in &updates {
            ema.update(u);
        }
        // Closed form: decay^k init + sum_j (1 - decay) decay^(k-1-j) u_j.
        let k = updates.len();
        for i in 0..2 {
            let mut expected = decay.powi(k as i32) * init[i];
            for (j, u) in updates.iter().enumerate() {
                expected += (1.0 - decay) * decay.powi((k - 1 - j) as i32) * u[i];
            }
            assert!((ema.weights()[i] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, 1.0, 1.0];
        let mut adam = Adam::new(AdamConfig::default(), 3);
        adam.step(&mut p, &[2.0, -0.5, 0.0]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (1.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
            2,
        );
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            adam.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3);
    }
}
