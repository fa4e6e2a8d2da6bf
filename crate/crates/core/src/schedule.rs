//! Learning-rate schedules for the training loops.

use crate::error::{Error, Result};

/// Decaying learning rate over a fixed horizon of `max_iters` steps.
#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    /// base * (1 - k/K)^tau
    Polynomial {
        base: f64,
        tau: f64,
        max_iters: usize,
    },
    /// base * gamma^floor(k/S)
    Step {
        base: f64,
        gamma: f64,
        step_size: usize,
        max_iters: usize,
    },
}

impl LrSchedule {
    pub fn polynomial(base: f64, tau: f64, max_iters: usize) -> Result<Self> {
        if !(base > 0.0 && base.is_finite()) {
            return Err(Error::InvalidParam {
                name: "base_lr",
                value: base,
            });
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParam {
                name: "tau",
                value: tau,
            });
        }
        if max_iters == 0 {
            return Err(Error::InvalidParam {
                name: "max_iters",
                value: 0.0,
            });
        }
        Ok(Self::Polynomial {
            base,
            tau,
            max_iters,
        })
    }

    pub fn step(base: f64, gamma: f64, step_size: usize, max_iters: usize) -> Result<Self> {
        if !(base > 0.0 && base.is_finite()) {
            return Err(Error::InvalidParam {
                name: "base_lr",
                value: base,
            });
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidParam {
                name: "gamma",
                value: gamma,
            });
        }
        if step_size == 0 {
            return Err(Error::InvalidParam {
                name: "step_size",
                value: 0.0,
            });
        }
        if max_iters == 0 {
            return Err(Error::InvalidParam {
                name: "max_iters",
                value: 0.0,
            });
        }
        Ok(Self::Step {
            base,
            gamma,
            step_size,
            max_iters,
        })
    }

    pub fn max_iters(&self) -> usize {
        match *self {
            Self::Polynomial { max_iters, .. } | Self::Step { max_iters, .. } => max_iters,
        }
    }

    /// Learning rate at iteration `k`, valid for 0 <= k <= K.
    pub fn lr_at(&self, k: usize) -> Result<f64> {
        let max = self.max_iters();
        if k > max {
            return Err(Error::ScheduleOutOfRange { k, max });
        }
        Ok(match *self {
            Self::Polynomial {
                base,
                tau,
                max_iters,
            } => base * (1.0 - k as f64 / max_iters as f64).powf(tau),
            Self::Step {
                base,
                gamma,
                step_size,
                ..
            } => base * gamma.powi((k / step_size) as i32),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn polynomial_endpoints() {
        let s = LrSchedule::polynomial(0.001, 0.9, 20_000).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 0.001);
        assert_eq!(s.lr_at(20_000).unwrap(), 0.0);
    }

    #[test]
    fn step_decay_values() {
        let s = LrSchedule::step(0.001, 0.1, 20_000, 40_000).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 0.001);
        assert!((s.lr_at(25_000).unwrap() - 0.0001).abs() < 1e-12);
    }

    #[test]
    fn queries_beyond_horizon_fail() {
        let s = LrSchedule::polynomial(0.001, 0.9, 100).unwrap();
        assert!(matches!(
            s.lr_at(101),
            Err(crate::error::Error::ScheduleOutOfRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn rates_positive_and_non_increasing(k in 0usize..500) {
            for sched in [
                LrSchedule::polynomial(0.001, 0.9, 500).unwrap(),
                LrSchedule::step(0.001, 0.1, 120, 500).unwrap(),
            ] {
                let a = sched.lr_at(k).unwrap();
                let b = sched.lr_at(k + 1).unwrap();
                prop_assert!(a > 0.0);
                prop_assert!(b <= a);
            }
        }
    }
}
