use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Step decay: the rate is multiplied by `factor` after every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub base_lr: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            base_lr: 0.005,
            factor: 0.5,
            every: 20,
        }
    }
}

impl Schedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = if self.every == 0 { 0 } else { epoch / self.every };
        self.base_lr * self.factor.powi(drops as i32)
    }
}

/// Parameters with Adam moments. The moment vectors share the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub adam: AdamConfig,
    pub schedule: Schedule,
}

impl TrainState {
    pub fn new(params: Vec<f64>, schedule: Schedule) -> Result<Self> {
        if !(schedule.base_lr > 0.0) {
            return Err(TrainError::spec(format!("learning rate must be positive, got {}", schedule.base_lr)));
        }
        let n = params.len();
        Ok(TrainState {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr: schedule.base_lr,
            adam: AdamConfig::default(),
            schedule,
        })
    }

    pub fn begin_epoch(&mut self, epoch: usize) {
        self.lr = self.schedule.lr_at(epoch);
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &[f64]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(TrainError::shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, m), v), &g) in self.params.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grads) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_twenty_epochs() {
        let s = Schedule::default();
        assert_eq!(s.lr_at(0), 0.005);
        assert_eq!(s.lr_at(19), 0.005);
        assert_eq!(s.lr_at(20), 0.0025);
        assert_eq!(s.lr_at(39), 0.0025);
        assert_eq!(s.lr_at(40), 0.00125);
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut st = TrainState::new(vec![1.0, -2.0], Schedule::default()).unwrap();
        st.adam_step(&[0.0, 0.0]).unwrap();
        assert_eq!(st.params, vec![1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut st = TrainState::new(vec![0.5, 0.5, 0.5], Schedule::default()).unwrap();
        let g = [3.0, -1e-3, 1e-9];
        st.adam_step(&g).unwrap();
        for (k, &gk) in g.iter().enumerate() {
            let expected = 0.5 - 0.005 * gk / (gk.abs() + 1e-8);
            assert!((st.params[k] - expected).abs() < 1e-15, "{k}");
        }
    }

    #[test]
    fn constant_gradient_descends() {
        let mut st = TrainState::new(vec![0.0], Schedule::default()).unwrap();
        for _ in 0..100 {
            st.adam_step(&[2.0]).unwrap();
        }
        assert!(st.params[0] < -0.4);
    }

    #[test]
    fn layout_mismatch_and_bad_rate() {
        let mut st = TrainState::new(vec![0.0; 3], Schedule::default()).unwrap();
        assert!(matches!(st.adam_step(&[1.0]), Err(TrainError::ShapeMismatch(_))));
        let bad = Schedule {
            base_lr: 0.0,
            ..Schedule::default()
        };
        assert!(TrainState::new(vec![], bad).is_err());
    }
}
