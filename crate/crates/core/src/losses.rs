//! Siamese objective: squared hinge on descriptor distance plus one identity
//! cross-entropy per branch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempattn_autograd::{Tape, Tensor, Var};

use crate::error::{ReidError, Result};
use crate::params::{fan_in_uniform, ParamSet};

pub const DEFAULT_MARGIN: f64 = 2.0;

/// Linear identity classifier applied to the normalized descriptor of either
/// branch.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityClassifier {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl IdentityClassifier {
    pub fn init(seed: u64, num_classes: usize, feature_dim: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(ReidError::Invalid(format!(
                "identity classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            weight: fan_in_uniform(&mut rng, &[num_classes, feature_dim], feature_dim),
            bias: Tensor::zeros(&[num_classes]),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape) -> ClassifierVars {
        let v = self.bind_all(tape);
        ClassifierVars {
            weight: v[0],
            bias: v[1],
            num_classes: self.num_classes(),
        }
    }
}

impl ParamSet for IdentityClassifier {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("classifier.weight".into(), &self.weight),
            ("classifier.bias".into(), &self.bias),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("classifier.weight".into(), &mut self.weight),
            ("classifier.bias".into(), &mut self.bias),
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierVars {
    pub weight: Var,
    pub bias: Var,
    pub num_classes: usize,
}

/// Scalar loss values of one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub hinge: f64,
    pub id1: f64,
    pub id2: f64,
    pub total: f64,
    pub margin: f64,
}

/// Positive pairs: `½‖f1 − f2‖²`. Negative pairs: `½ max(0, m − ‖f1 − f2‖)²`.
pub fn hinge_loss(tape: &mut Tape, f1: Var, f2: Var, same_identity: bool, margin: f64) -> Result<Var> {
    if !(margin > 0.0) {
        return Err(ReidError::Invalid(format!("margin must be positive, got {margin}")));
    }
    if same_identity {
        let diff = tape.sub(f1, f2)?;
        let sq = tape.mul(diff, diff)?;
        let s = tape.sum(sq, None)?;
        Ok(tape.scale(s, 0.5))
    } else {
        let d = tape.euclidean_distance(f1, f2)?;
        let gap = tape.scale(d, -1.0);
        let gap = tape.add_scalar(gap, margin);
        let gap = tape.relu(gap);
        let sq = tape.mul(gap, gap)?;
        Ok(tape.scale(sq, 0.5))
    }
}

/// `−log softmax(W f + b)[label]`.
pub fn identity_loss(tape: &mut Tape, f: Var, label: usize, clf: &ClassifierVars) -> Result<Var> {
    if label >= clf.num_classes {
        return Err(ReidError::Invalid(format!(
            "label {label} out of range for {} classes",
            clf.num_classes
        )));
    }
    let logits = tape.linear(f, clf.weight, clf.bias)?;
    Ok(tape.cross_entropy(logits, label)?)
}

/// Records `id1 + hinge + id2` on the tape and returns the total together
/// with the component values.
pub fn combined_loss(
    tape: &mut Tape,
    f1: Var,
    f2: Var,
    labels: (usize, usize),
    clf: &ClassifierVars,
    margin: f64,
) -> Result<(Var, LossBreakdown)> {
    let hinge = hinge_loss(tape, f1, f2, labels.0 == labels.1, margin)?;
    let id1 = identity_loss(tape, f1, labels.0, clf)?;
    let id2 = identity_loss(tape, f2, labels.1, clf)?;
    let partial = tape.add(id1, hinge)?;
    let total = tape.add(partial, id2)?;
    let item = |t: &Tape, v: Var| t.value(v).item();
    Ok((
        total,
        LossBreakdown {
            hinge: item(tape, hinge),
            id1: item(tape, id1),
            id2: item(tape, id2),
            total: item(tape, total),
            margin,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_var(t: &mut Tape, v: &[f64]) -> Var {
        t.leaf(Tensor::from_vec(v.to_vec()))
    }

    #[test]
    fn hinge_closed_forms() {
        let mut t = Tape::new();
        let a = vec_var(&mut t, &[0.6, 0.8]);
        let b = vec_var(&mut t, &[0.6, 0.8]);
        let l = hinge_loss(&mut t, a, b, true, 2.0).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let c = vec_var(&mut t, &[1.0, 0.0]);
        let d = vec_var(&mut t, &[-1.0, 0.0]);
        let l = hinge_loss(&mut t, c, d, false, 2.0).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let e = vec_var(&mut t, &[0.0, 0.0]);
        let l = hinge_loss(&mut t, c, e, false, 2.0).unwrap();
        assert_eq!(t.value(l).item(), 0.5);
    }

    #[test]
    fn hinge_rejects_bad_margin() {
        let mut t = Tape::new();
        let a = vec_var(&mut t, &[1.0]);
        assert!(hinge_loss(&mut t, a, a, false, 0.0).is_err());
    }

    #[test]
    fn identity_loss_uniform_logits() {
        let mut t = Tape::new();
        let clf = IdentityClassifier {
            weight: Tensor::zeros(&[2, 3]),
            bias: Tensor::zeros(&[2]),
        };
        let cv = clf.bind(&mut t);
        let f = vec_var(&mut t, &[0.3, -0.2, 0.9]);
        let l = identity_loss(&mut t, f, 1, &cv).unwrap();
        assert!((t.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(identity_loss(&mut t, f, 2, &cv).is_err());
    }

    #[test]
    fn classifier_needs_two_classes() {
        assert!(IdentityClassifier::init(0, 1, 128).is_err());
        assert_eq!(IdentityClassifier::init(0, 5, 128).unwrap().num_classes(), 5);
    }
}
