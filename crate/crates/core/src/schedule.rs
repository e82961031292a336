//! Linear-warmup, polynomial-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupPoly {
    pub lr0: f64,
    /// Warmup length as a fraction of the total step count.
    pub warmup_frac: f64,
    pub power: f64,
}

impl Default for WarmupPoly {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            warmup_frac: 0.05,
            power: 0.9,
        }
    }
}

impl WarmupPoly {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("warmup_frac must lie in [0, 1)".into()));
        }
        if !(self.power > 0.0) {
            return Err(Error::Config("poly power must be positive".into()));
        }
        Ok(())
    }

    pub fn warmup_steps(&self, total: usize) -> usize {
        (self.warmup_frac * total as f64).floor() as usize
    }

    /// Learning rate at `step` of `total`.
    pub fn at(&self, step: usize, total: usize) -> f64 {
        lr_schedule(step, total, self.warmup_steps(total), self.lr0, self.power)
            .expect("warmup_frac < 1 keeps warmup below total")
    }
}

/// `lr0·(step+1)/warmup` during warmup, then `lr0·(1 − (step−warmup)/(total−warmup))^power`.
pub fn lr_schedule(step: usize, total: usize, warmup: usize, lr0: f64, power: f64) -> Result<f64> {
    if total <= warmup {
        return Err(Error::Config(format!("total steps {total} must exceed warmup {warmup}")));
    }
    if step < warmup {
        return Ok(lr0 * (step + 1) as f64 / warmup as f64);
    }
    let t = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(lr0 * (1.0 - t).max(0.0).powf(power))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn boundary_values() {
        assert_eq!(lr_schedule(10, 100, 10, 1e-4, 0.9).unwrap(), 1e-4);
        let last = lr_schedule(99, 100, 10, 1e-4, 1.0).unwrap();
        assert!(last >= 0.0 && last <= 1e-4 / 90.0 + 1e-18);
        let mid = lr_schedule(55, 100, 10, 2e-3, 0.9).unwrap();
        assert!((mid - 2e-3 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!(lr_schedule(0, 10, 10, 1e-4, 0.9).is_err());
        assert_eq!(lr_schedule(0, 10, 0, 1e-4, 0.9).unwrap(), 1e-4);
    }

    proptest! {
        #[test]
        fn schedule_shape(total in 2usize..400, frac in 0.0f64..0.9, power in 0.1f64..3.0) {
            let s = WarmupPoly { lr0: 1e-3, warmup_frac: frac, power };
            let w = s.warmup_steps(total);
            let lrs: Vec<f64> = (0..=total).map(|i| s.at(i, total)).collect();
            for i in 1..w {
                prop_assert!(lrs[i] >= lrs[i - 1]);
            }
            for i in w.max(1)..=total {
                if i > w {
                    prop_assert!(lrs[i] <= lrs[i - 1]);
                }
            }
            let max = lrs.iter().cloned().fold(0.0, f64::max);
            prop_assert!((max - 1e-3).abs() < 1e-15);
            prop_assert!(lrs.iter().all(|l| *l >= 0.0));
        }
    }
}
