use crate::error::{AutogradError, Result};
use crate::tensor::Tensor;

/// Plain SGD with a step-decay schedule.
///
/// `schedule` holds `(epoch_threshold, multiplier)` pairs; the learning rate
/// at a (zero-based) epoch is the base rate times every multiplier whose
/// threshold is `<= epoch`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub schedule: Vec<(usize, f64)>,
}

impl SgdConfig {
    pub fn new(learning_rate: f64, schedule: Vec<(usize, f64)>) -> Result<Self> {
        let cfg = Self {
            learning_rate,
            schedule,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AutogradError::Invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(&(_, m)) = self.schedule.iter().find(|(_, m)| !(*m > 0.0 && *m <= 1.0)) {
            return Err(AutogradError::Invalid(format!(
                "schedule multiplier {m} outside (0, 1]"
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|(threshold, _)| *threshold <= epoch)
            .fold(self.learning_rate, |lr, (_, m)| lr * m)
    }
}

/// `p ← p − lr(epoch)·∇p` for every parameter, then zeroes the gradients.
///
/// Fails without touching anything if some parameter has no gradient.
pub fn sgd_step(params: &mut [&mut Tensor], config: &SgdConfig, epoch: usize) -> Result<()> {
    if let Some(index) = params.iter().position(|p| p.grad().is_none()) {
        return Err(AutogradError::MissingGrad { index });
    }
    let lr = config.lr_at(epoch);
    for p in params.iter_mut() {
        let grad = p.grad().expect("checked above").to_vec();
        p.data_mut()
            .iter_mut()
            .zip(&grad)
            .for_each(|(w, g)| *w -= lr * g);
        p.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let mut p = Tensor::from_vec(vec![1.0]);
        p.accumulate_grad(&[2.0]).unwrap();
        let cfg = SgdConfig::new(0.1, vec![]).unwrap();
        sgd_step(&mut [&mut p], &cfg, 0).unwrap();
        assert!((p.data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(p.grad(), Some(&[0.0][..]));
    }

    #[test]
    fn step_decay_schedules() {
        let one_drop = SgdConfig::new(1e-4, vec![(1300, 0.1)]).unwrap();
        assert_eq!(one_drop.lr_at(1299), 1e-4);
        assert!((one_drop.lr_at(1300) - 1e-5).abs() < 1e-20);

        let two_drops = SgdConfig::new(1e-4, vec![(800, 0.1), (1100, 0.1)]).unwrap();
        assert!((two_drops.lr_at(900) - 1e-5).abs() < 1e-20);
        assert!((two_drops.lr_at(1200) - 1e-6).abs() < 1e-21);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut a = Tensor::from_vec(vec![1.0]);
        let mut b = Tensor::from_vec(vec![1.0]);
        a.accumulate_grad(&[1.0]).unwrap();
        let cfg = SgdConfig::new(0.1, vec![]).unwrap();
        let err = sgd_step(&mut [&mut a, &mut b], &cfg, 0).unwrap_err();
        assert_eq!(err, AutogradError::MissingGrad { index: 1 });
        assert_eq!(a.data(), &[1.0]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SgdConfig::new(0.0, vec![]).is_err());
        assert!(SgdConfig::new(1e-3, vec![(10, 1.5)]).is_err());
        assert!(SgdConfig::new(1e-3, vec![(10, 0.0)]).is_err());
    }
}
