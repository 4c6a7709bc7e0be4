//! Distances, simulation-error losses and the free-run RMSE metric.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::StateVector;
use crate::scalar::Scalar;

/// How a state or output component is compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    AngularPosition,
    LinearPosition,
    Velocity,
}

impl ComponentKind {
    pub fn distance<T: Scalar>(self, yhat: T, y: T) -> T {
        match self {
            ComponentKind::AngularPosition => angular_distance(yhat, y),
            ComponentKind::LinearPosition | ComponentKind::Velocity => squared_distance(yhat, y),
        }
    }

    /// Partial derivative of [`Self::distance`] with respect to `yhat`.
    pub fn distance_grad<T: Scalar>(self, yhat: T, y: T) -> T {
        match self {
            ComponentKind::AngularPosition => T::c(2.0) * (yhat - y).sin(),
            ComponentKind::LinearPosition | ComponentKind::Velocity => T::c(2.0) * (yhat - y),
        }
    }
}

/// Dispatch table for an all-angular mechanical state `[q, q̇]`.
pub fn angular_state_kinds(n_q: usize) -> Vec<ComponentKind> {
    let mut kinds = vec![ComponentKind::AngularPosition; n_q];
    kinds.extend(std::iter::repeat(ComponentKind::Velocity).take(n_q));
    kinds
}

/// Output dispatch for the grey-box output loss: squared distance everywhere.
pub fn squared_output_kinds(n_y: usize) -> Vec<ComponentKind> {
    vec![ComponentKind::LinearPosition; n_y]
}

pub fn squared_distance<T: Scalar>(yhat: T, y: T) -> T {
    let d = yhat - y;
    d * d
}

/// `2 (1 - cos(yhat - y))`.
pub fn angular_distance<T: Scalar>(yhat: T, y: T) -> T {
    // 4 sin²(d/2) == 2(1 - cos d), without the cancellation near d = 0
    let h = ((yhat - y) * T::c(0.5)).sin();
    T::c(4.0) * h * h
}

/// Chordal form `(cos ŷ - cos y)² + (sin ŷ - sin y)²`, equal to [`angular_distance`].
pub fn angular_distance_chordal<T: Scalar>(yhat: T, y: T) -> T {
    let (sh, ch) = yhat.sin_cos();
    let (s, c) = y.sin_cos();
    (ch - c) * (ch - c) + (sh - s) * (sh - s)
}

/// `(1/T) Σ_{k=1..T} Σ_j ℓ_j(ŷ_k, y_k)` for one sequence of `T + 1` vectors.
pub fn sequence_loss<T: Scalar>(simulated: &[Vec<T>], reference: &[Vec<T>], kinds: &[ComponentKind]) -> Result<T> {
    check_len("simulated sequence length", reference.len(), simulated.len())?;
    if reference.len() < 2 {
        return Err(Error::Config("a sequence needs at least one step after k = 0".into()));
    }
    let mut total = T::zero();
    for (yhat, y) in simulated[1..].iter().zip(&reference[1..]) {
        check_len("component count", kinds.len(), yhat.len())?;
        check_len("component count", kinds.len(), y.len())?;
        for ((&a, &b), kind) in yhat.iter().zip(y).zip(kinds) {
            total += kind.distance(a, b);
        }
    }
    Ok(total / T::c((reference.len() - 1) as f64))
}

/// Mean over sequences of [`sequence_loss`]; each sequence is normalized by its own horizon.
pub fn output_loss<T: Scalar>(simulated: &[Vec<Vec<T>>], dataset: &[Vec<Vec<T>>], kinds: &[ComponentKind]) -> Result<T> {
    if dataset.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    check_len("number of simulated sequences", dataset.len(), simulated.len())?;
    let mut total = T::zero();
    for (sim, reference) in simulated.iter().zip(dataset) {
        total += sequence_loss(sim, reference, kinds)?;
    }
    Ok(total / T::c(dataset.len() as f64))
}

/// State-vector loss over subsequence samples; positions and velocities are
/// dispatched through `kinds` (length `2 n_q`).
pub fn state_loss<T: Scalar>(
    simulated: &[Vec<StateVector<T>>],
    dataset: &[Vec<StateVector<T>>],
    kinds: &[ComponentKind],
) -> Result<T> {
    let flat = |seq: &[Vec<StateVector<T>>]| -> Vec<Vec<Vec<T>>> {
        seq.iter().map(|s| s.iter().map(StateVector::to_vec).collect()).collect()
    };
    output_loss(&flat(simulated), &flat(dataset), kinds)
}

/// Gradients of one sample's [`sequence_loss`] with respect to each simulated state.
pub fn state_loss_grad<T: Scalar>(
    simulated: &[StateVector<T>],
    reference: &[StateVector<T>],
    kinds: &[ComponentKind],
) -> Result<Vec<StateVector<T>>> {
    check_len("simulated sequence length", reference.len(), simulated.len())?;
    if reference.len() < 2 {
        return Err(Error::Config("a sequence needs at least one step after k = 0".into()));
    }
    let scale = T::one() / T::c((reference.len() - 1) as f64);
    let mut out = Vec::with_capacity(simulated.len());
    out.push(StateVector::zeros(simulated[0].n_q()));
    for (xhat, x) in simulated[1..].iter().zip(&reference[1..]) {
        let a = xhat.to_vec();
        let b = x.to_vec();
        check_len("component count", kinds.len(), a.len())?;
        let g: Vec<T> = a
            .iter()
            .zip(&b)
            .zip(kinds)
            .map(|((&p, &r), k)| scale * k.distance_grad(p, r))
            .collect();
        out.push(StateVector::from_slice(&g));
    }
    Ok(out)
}

/// Free-run RMSE: `sqrt( (1/T_v) Σ_{k=0..T_v} ‖ŷ_k - y_k‖² )`.
///
/// Note the `T_v + 1` summands over a divisor of `T_v`. Angles are compared unwrapped.
pub fn rmse<T: Scalar>(y_sim: &[Vec<T>], y_val: &[Vec<T>]) -> Result<T> {
    check_len("simulated output length", y_val.len(), y_sim.len())?;
    if y_val.len() < 2 {
        return Err(Error::Config("RMSE needs T_v >= 1".into()));
    }
    let mut total = T::zero();
    for (a, b) in y_sim.iter().zip(y_val) {
        check_len("output width", b.len(), a.len())?;
        total += a.iter().zip(b).map(|(&x, &y)| squared_distance(x, y)).sum::<T>();
    }
    Ok((total / T::c((y_val.len() - 1) as f64)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn squared_distance_examples() {
        assert_eq!(squared_distance(3.0, 3.0), 0.0);
        assert_eq!(squared_distance(2.0, -1.0), 9.0);
    }

    #[test]
    fn angular_distance_examples() {
        assert_eq!(angular_distance(1.3, 1.3), 0.0);
        assert!((angular_distance(PI, 0.0) - 4.0).abs() < 1e-12);
        assert!((angular_distance(PI / 2.0, 0.0) - 2.0).abs() < 1e-12);
        assert!(angular_distance(0.4 + 2.0 * PI, 0.4).abs() < 1e-12);
    }

    #[test]
    fn output_loss_examples() {
        let kinds = [ComponentKind::AngularPosition];
        let reference = vec![vec![vec![0.0], vec![0.0]]];
        assert_eq!(output_loss(&reference, &reference, &kinds).unwrap(), 0.0);
        let sim = vec![vec![vec![0.0], vec![PI]]];
        assert!((output_loss(&sim, &reference, &kinds).unwrap() - 4.0).abs() < 1e-12);

        // per-sequence losses 4 and 2 average to 3
        let sims = vec![vec![vec![0.0], vec![PI]], vec![vec![0.0], vec![PI / 2.0]]];
        let refs = vec![vec![vec![0.0], vec![0.0]]; 2];
        assert!((output_loss(&sims, &refs, &kinds).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(output_loss::<f64>(&[], &[], &kinds), Err(Error::Config(_))));
    }

    #[test]
    fn output_loss_skips_initial_term() {
        let kinds = [ComponentKind::LinearPosition];
        let sim = vec![vec![vec![5.0], vec![1.0], vec![1.0]]];
        let reference = vec![vec![vec![0.0], vec![0.0], vec![0.0]]];
        assert_eq!(output_loss(&sim, &reference, &kinds).unwrap(), 1.0);
    }

    #[test]
    fn state_loss_mixes_angular_and_squared_terms() {
        let kinds = angular_state_kinds(1);
        let reference = vec![vec![StateVector::new(vec![0.0], vec![0.0]); 2]];
        let sim = vec![vec![
            StateVector::new(vec![0.0], vec![0.0]),
            StateVector::new(vec![PI], vec![1.0]),
        ]];
        assert!((state_loss(&sim, &reference, &kinds).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(state_loss(&reference, &reference, &kinds).unwrap(), 0.0);
    }

    #[test]
    fn state_loss_invariant_under_joint_2pi_shift() {
        let kinds = angular_state_kinds(2);
        let a = vec![vec![
            StateVector::new(vec![0.1, 0.2], vec![0.0, 1.0]),
            StateVector::new(vec![0.4, -0.2], vec![0.3, 1.5]),
        ]];
        let b = vec![vec![
            StateVector::new(vec![0.0, 0.0], vec![0.0, 0.0]),
            StateVector::new(vec![1.0, 0.5], vec![-0.3, 1.0]),
        ]];
        let shift = |v: &Vec<Vec<StateVector<f64>>>| -> Vec<Vec<StateVector<f64>>> {
            v.iter()
                .map(|s| {
                    s.iter()
                        .map(|x| StateVector::new(vec![x.q[0] + 2.0 * PI, x.q[1]], x.qdot.clone()))
                        .collect()
                })
                .collect()
        };
        let l0 = state_loss(&a, &b, &kinds).unwrap();
        let l1 = state_loss(&shift(&a), &shift(&b), &kinds).unwrap();
        assert!((l0 - l1).abs() < 1e-12);
    }

    #[test]
    fn rmse_examples() {
        let y = vec![vec![1.0, 2.0]; 11];
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        for t_v in [1usize, 4, 10, 100] {
            let base = vec![vec![0.0, 0.0]; t_v + 1];
            let off = vec![vec![0.1, 0.0]; t_v + 1];
            let expected = ((t_v as f64 + 1.0) / t_v as f64).sqrt() * 0.1;
            assert!((rmse(&off, &base).unwrap() - expected).abs() < 1e-14);
        }
        let base = vec![vec![0.0, 0.0]; 100_001];
        let off = vec![vec![0.1, 0.1]; 100_001];
        assert!((rmse(&off, &base).unwrap() - 0.1 * 2f64.sqrt()).abs() < 1e-5);
        assert!(matches!(rmse(&y[..1], &y[..1]), Err(Error::Config(_))));
    }

    #[test]
    fn angular_gradient_matches_finite_differences() {
        for &(a, b) in &[(0.3f64, -1.2), (2.9, 0.1), (-4.0, 5.5)] {
            let h = 1e-6;
            let fd = (angular_distance(a + h, b) - angular_distance(a - h, b)) / (2.0 * h);
            let g = ComponentKind::AngularPosition.distance_grad(a, b);
            assert!((fd - g).abs() < 1e-8, "{fd} vs {g}");
        }
    }
}
