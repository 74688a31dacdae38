use serde::{Deserialize, Serialize};

/// Linear warmup followed by step decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f32,
    pub warmup_iters: usize,
    pub decay_points: Vec<usize>,
    pub decay_factor: f32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 0.01,
            warmup_iters: 1000,
            decay_points: vec![15_000, 18_000],
            decay_factor: 0.33,
        }
    }
}

impl LrSchedule {
    /// The default schedule with warmup and decay points rescaled to a run of
    /// `iterations` (the defaults assume 20K).
    pub fn scaled_to(iterations: usize) -> Self {
        let d = Self::default();
        let scale = |it: usize| ((it as f64) * iterations as f64 / 20_000.0).round() as usize;
        Self {
            warmup_iters: scale(d.warmup_iters).max(1),
            decay_points: d.decay_points.iter().map(|&p| scale(p)).collect(),
            ..d
        }
    }

    pub fn lr_at(&self, iter: usize) -> f32 {
        let decays = self.decay_points.iter().filter(|&&p| p <= iter).count();
        let lr = self.base_lr * self.decay_factor.powi(decays as i32);
        if iter < self.warmup_iters {
            lr * (iter + 1) as f32 / self.warmup_iters as f32
        } else {
            lr
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_points() {
        let s = LrSchedule::default();
        assert!((s.lr_at(15_000) - 0.0033).abs() < 1e-9);
        assert!((s.lr_at(18_000) - 0.001089).abs() < 1e-9);
        assert!((s.lr_at(14_999) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn warmup_ramp() {
        let s = LrSchedule::default();
        assert!((s.lr_at(500) - 0.00501).abs() < 1e-9);
        assert!((s.lr_at(0) - 1e-5).abs() < 1e-10);
        assert_eq!(s.lr_at(999), 0.01);
        assert_eq!(s.lr_at(1000), 0.01);
    }

    #[test]
    fn positive_and_nonincreasing_after_warmup() {
        let s = LrSchedule::default();
        let mut prev = f32::INFINITY;
        for it in 0..25_000 {
            let lr = s.lr_at(it);
            assert!(lr > 0.0);
            if it >= s.warmup_iters {
                assert!(lr <= prev);
                prev = lr;
            }
        }
    }

    #[test]
    fn scaled_schedule() {
        let s = LrSchedule::scaled_to(2000);
        assert_eq!(s.warmup_iters, 100);
        assert_eq!(s.decay_points, vec![1500, 1800]);
        assert_eq!(LrSchedule::scaled_to(20_000), LrSchedule::default());
    }
}
