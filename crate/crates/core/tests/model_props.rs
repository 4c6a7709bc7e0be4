use std::f64::consts::PI;

use proptest::prelude::*;

use tustin_core::error::Error;
use tustin_core::model::{StateVector, TustinModel};
use tustin_core::nn::init_net;
use tustin_core::Model;

fn model(seed: u64) -> Model {
    TustinModel::new(init_net(&[7, 16, 16, 2], 0.01, seed).unwrap(), 2, 1, 0.01).unwrap()
}

fn inputs(n: usize, phase: f64) -> Vec<Vec<f64>> {
    (0..n).map(|k| vec![3.0 * (0.07 * k as f64 + phase).sin()]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollouts_compose(seed in 0u64..1000, a in 1usize..30, b in 1usize..30, th in -1.0f64..1.0, al in -3.0f64..3.0) {
        let m = model(seed);
        let x0 = StateVector::new(vec![th, al], vec![0.5, -1.0]);
        let u = inputs(a + b + 1, th);
        let whole = m.rollout(&x0, &u).unwrap();
        let head = m.rollout(&x0, &u[..=a]).unwrap();
        let tail = m.rollout(head.final_state(), &u[a..]).unwrap();
        prop_assert_eq!(whole.final_state(), tail.final_state());
        prop_assert_eq!(&whole.states[a], head.final_state());
    }

    #[test]
    fn shifting_an_angle_by_two_pi_shifts_the_trajectory(seed in 0u64..1000, n in -2i32..=2, th in -1.0f64..1.0) {
        let m = model(seed);
        let u = inputs(40, 0.3);
        let x0 = StateVector::new(vec![th, 0.4], vec![0.2, 0.1]);
        let shift = 2.0 * PI * n as f64;
        let x1 = StateVector::new(vec![th, 0.4 + shift], vec![0.2, 0.1]);
        let a = m.rollout(&x0, &u).unwrap();
        let b = m.rollout(&x1, &u).unwrap();
        for (p, q) in a.states.iter().zip(&b.states) {
            prop_assert!((p.q[0] - q.q[0]).abs() < 1e-9);
            prop_assert!((p.q[1] + shift - q.q[1]).abs() < 1e-9);
            prop_assert!((p.qdot[1] - q.qdot[1]).abs() < 1e-9);
        }
    }
}

#[test]
fn rollout_length_is_inputs_length() {
    let m = model(1);
    let traj = m.rollout(&StateVector::zeros(2), &inputs(11, 0.0)).unwrap();
    assert_eq!(traj.states.len(), 11);
    assert_eq!(traj.horizon(), 10);
    assert_eq!(traj.outputs()[3], traj.states[3].q);
}

#[test]
fn runaway_rollout_reports_divergence() {
    let mut m = model(2);
    for w in m.net.weights_mut() {
        w.iter_mut().for_each(|x| *x *= 1e3);
    }
    let x0 = StateVector::new(vec![0.3, 0.2], vec![1.0, 1.0]);
    match m.rollout(&x0, &inputs(2000, 0.0)) {
        Err(Error::Divergence { step }) => assert!(step < 1999),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let m = model(3);
    assert!(m.rollout(&StateVector::zeros(3), &inputs(3, 0.0)).is_err());
    assert!(m.rollout(&StateVector::zeros(2), &[vec![0.0, 1.0]]).is_err());
    assert!(m.rollout(&StateVector::zeros(2), &[]).is_err());
    let net = init_net::<f64>(&[6, 4, 2], 0.01, 0).unwrap();
    assert!(TustinModel::new(net, 2, 1, 0.01).is_err());
}
