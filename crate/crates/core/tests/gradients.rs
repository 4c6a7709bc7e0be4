use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tustin_core::batch::{batch_loss, batch_loss_and_grad};
use tustin_core::data::{ExperimentKind, ExperimentSequence, SubsequenceSample};
use tustin_core::linalg::Matrix;
use tustin_core::loss::{angular_state_kinds, sequence_loss, state_loss_grad};
use tustin_core::model::{StateVector, TustinModel};
use tustin_core::nn::{init_net, FeedforwardNet};
use tustin_core::Model;

fn random_net(sizes: &[usize], seed: u64) -> FeedforwardNet<f64> {
    let mut net = init_net::<f64>(sizes, 0.01, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    for b in net.biases_mut() {
        b.iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
    }
    net
}

fn forward_sum(net: &FeedforwardNet<f64>, z: &[f64], upstream: &[f64]) -> f64 {
    net.forward(z).unwrap().iter().zip(upstream).map(|(a, b)| a * b).sum()
}

#[test]
fn network_backward_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..10 {
        let net = random_net(&[5, 6, 4, 3], seed);
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let up: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = net.backward(&z, &up).unwrap();
        let h = 1e-6;
        for m in 0..net.weights().len() {
            for i in 0..net.weights()[m].as_slice().len() {
                let mut p = net.clone();
                p.weights_mut()[m].as_mut_slice()[i] += h;
                let mut n = net.clone();
                n.weights_mut()[m].as_mut_slice()[i] -= h;
                let fd = (forward_sum(&p, &z, &up) - forward_sum(&n, &z, &up)) / (2.0 * h);
                assert!((fd - g.d_weights[m].as_slice()[i]).abs() < 1e-7);
            }
        }
        for m in 0..net.biases().len() {
            for i in 0..net.biases()[m].len() {
                let mut p = net.clone();
                p.biases_mut()[m][i] += h;
                let mut n = net.clone();
                n.biases_mut()[m][i] -= h;
                let fd = (forward_sum(&p, &z, &up) - forward_sum(&n, &z, &up)) / (2.0 * h);
                assert!((fd - g.d_biases[m][i]).abs() < 1e-7);
            }
        }
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zn = z.clone();
            zn[i] -= h;
            let fd = (forward_sum(&net, &zp, &up) - forward_sum(&net, &zn, &up)) / (2.0 * h);
            assert!((fd - g.d_input[i]).abs() < 1e-7);
        }
    }
}

fn rollout_loss(model: &Model, x0: &StateVector<f64>, u: &[Vec<f64>], reference: &[StateVector<f64>]) -> f64 {
    let traj = model.rollout(x0, u).unwrap();
    let sim: Vec<Vec<f64>> = traj.states.iter().map(StateVector::to_vec).collect();
    let r: Vec<Vec<f64>> = reference.iter().map(StateVector::to_vec).collect();
    sequence_loss(&sim, &r, &angular_state_kinds(model.n_q())).unwrap()
}

#[test]
fn bptt_matches_central_differences_including_initial_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (seed, horizon) in [(0u64, 1usize), (1, 5), (2, 25)] {
        let mut net = random_net(&[7, 8, 8, 2], seed);
        net.weights_mut()[2].iter_mut().for_each(|x| *x *= 20.0);
        let model = TustinModel::new(net, 2, 1, 0.01).unwrap();
        let x0 = StateVector::new(vec![0.3, -2.0], vec![1.0, -4.0]);
        let u: Vec<Vec<f64>> = (0..=horizon).map(|_| vec![rng.gen_range(-5.0..5.0)]).collect();
        let reference: Vec<StateVector<f64>> = (0..=horizon)
            .map(|_| StateVector::new(vec![rng.gen_range(-1.0..1.0), 2.0], vec![0.5, rng.gen_range(-3.0..3.0)]))
            .collect();
        let traj = model.rollout(&x0, &u).unwrap();
        let d_states = state_loss_grad(&traj.states, &reference, &angular_state_kinds(2)).unwrap();
        let grad = model.rollout_backward(&traj, &d_states).unwrap();
        let h = 1e-6;
        let x0v = x0.to_vec();
        let dx0 = grad.d_x0.to_vec();
        for i in 0..4 {
            let mut p = x0v.clone();
            p[i] += h;
            let mut n = x0v.clone();
            n[i] -= h;
            let fd = (rollout_loss(&model, &StateVector::from_slice(&p), &u, &reference)
                - rollout_loss(&model, &StateVector::from_slice(&n), &u, &reference))
                / (2.0 * h);
            assert!((fd - dx0[i]).abs() <= 1e-6 * fd.abs().max(1.0), "x0[{i}]: {fd} vs {}", dx0[i]);
        }
    }
}

#[test]
fn one_step_gradient_matches_hand_derivation() {
    // n_q = 1, n_u = 1, one hidden unit
    let (w1, b1, w2): ([f64; 4], f64, f64) = ([0.4, -0.7, 0.9, 0.3], 0.1, 1.7);
    let net = FeedforwardNet::from_parts(
        vec![
            Matrix::from_rows(&[w1.to_vec()]).unwrap(),
            Matrix::from_rows(&[vec![w2]]).unwrap(),
        ],
        vec![vec![b1]],
        0.01,
    )
    .unwrap();
    let tau: f64 = 0.05;
    let model = TustinModel::new(net, 1, 1, tau).unwrap();
    let (q0, v0, u0, r): (f64, f64, f64, f64) = (0.6, -0.8, 4.0, 0.2);
    let x0 = StateVector::new(vec![q0], vec![v0]);
    let traj = model.rollout(&x0, &[vec![u0], vec![0.0]]).unwrap();

    let z = [q0.sin(), q0.cos(), v0, u0];
    let a: f64 = w1.iter().zip(&z).map(|(w, z)| w * z).sum::<f64>() + b1;
    assert!(a > 0.0, "hand derivation assumes the active branch");
    let f = w2 * a;
    let q1 = q0 + tau * v0 + 0.5 * tau * tau * f;
    assert!((traj.states[1].q[0] - q1).abs() < 1e-15);

    // L = (q1 - r)^2 on the position only
    let dl = 2.0 * (q1 - r);
    let d_states = vec![StateVector::new(vec![0.0], vec![0.0]), StateVector::new(vec![dl], vec![0.0])];
    let g = model.rollout_backward(&traj, &d_states).unwrap();
    let c = dl * 0.5 * tau * tau;
    assert!((g.bundle.d_weights[1][(0, 0)] - c * a).abs() < 1e-15);
    for j in 0..4 {
        assert!((g.bundle.d_weights[0][(0, j)] - c * w2 * z[j]).abs() < 1e-15);
    }
    assert!((g.bundle.d_biases[0][0] - c * w2).abs() < 1e-15);
    let dq0 = dl + c * w2 * (w1[0] * q0.cos() - w1[1] * q0.sin());
    let dv0 = dl * tau + c * w2 * w1[2];
    assert!((g.d_x0.q[0] - dq0).abs() < 1e-14);
    assert!((g.d_x0.qdot[0] - dv0).abs() < 1e-14);
}

fn synthetic_sequence(len: usize, seed: u64) -> ExperimentSequence<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = 0.01;
    let t: Vec<f64> = (0..len).map(|k| k as f64 * tau).collect();
    let (pa, pb) = (rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0));
    let q = t.iter().map(|&s| vec![0.5 * (3.0 * s + pa).sin(), 2.0 + (5.0 * s + pb).cos()]).collect();
    let u = (0..len).map(|_| vec![rng.gen_range(-3.0..3.0)]).collect();
    ExperimentSequence::from_samples(0, ExperimentKind::NoiseExcited, tau, t, q, u).unwrap()
}

#[test]
fn batched_gradient_equals_sum_of_per_sample_gradients() {
    let seq = synthetic_sequence(200, 3);
    let samples: Vec<SubsequenceSample<f64>> = [2, 17, 40, 99, 120].iter().map(|&s| SubsequenceSample::cut(&seq, s, 30)).collect();
    let refs: Vec<&SubsequenceSample<f64>> = samples.iter().collect();
    let mut net = random_net(&[7, 9, 6, 2], 4);
    net.weights_mut()[2].iter_mut().for_each(|x| *x *= 10.0);
    let model = TustinModel::new(net, 2, 1, 0.01).unwrap();
    let kinds = angular_state_kinds(2);

    let batched = batch_loss_and_grad(&model, &refs, &kinds, false).unwrap();
    let mut loss = 0.0;
    let mut total = None::<tustin_core::Gradients>;
    for s in &samples {
        let traj = model.rollout(&s.x0, &s.u_window).unwrap();
        let sim: Vec<Vec<f64>> = traj.states.iter().map(StateVector::to_vec).collect();
        let r: Vec<Vec<f64>> = s.x_window.iter().map(StateVector::to_vec).collect();
        loss += sequence_loss(&sim, &r, &kinds).unwrap();
        let d = state_loss_grad(&traj.states, &s.x_window, &kinds).unwrap();
        let g = model.rollout_backward(&traj, &d).unwrap().bundle;
        match total.as_mut() {
            Some(t) => t.add_assign(&g),
            None => total = Some(g),
        }
    }
    let total = total.unwrap();
    assert!((batched.loss_sum - loss).abs() < 1e-10 * loss.max(1.0));
    assert!((batch_loss(&model, &refs, &kinds).unwrap() - loss).abs() < 1e-10 * loss.max(1.0));
    for (a, b) in batched.grads.param_values().zip(total.param_values()) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn skipping_frozen_groups_only_zeroes_their_gradients() {
    let seq = synthetic_sequence(120, 5);
    let samples: Vec<SubsequenceSample<f64>> = [2, 30, 60].iter().map(|&s| SubsequenceSample::cut(&seq, s, 20)).collect();
    let refs: Vec<&SubsequenceSample<f64>> = samples.iter().collect();
    let mut model = TustinModel::new(random_net(&[7, 5, 5, 2], 6), 2, 1, 0.01).unwrap();
    let kinds = angular_state_kinds(2);
    let full = batch_loss_and_grad(&model, &refs, &kinds, true).unwrap();
    model = tustin_core::train::freeze_layers(&model, 2).unwrap();
    assert_eq!(model.net.frozen(), &[true, true, false]);
    let skipped = batch_loss_and_grad(&model, &refs, &kinds, true).unwrap();
    assert_eq!(skipped.loss_sum, full.loss_sum);
    for m in 0..2 {
        assert!(skipped.grads.d_weights[m].iter().all(|&x| x == 0.0));
        assert!(skipped.grads.d_biases[m].iter().all(|&x| x == 0.0));
    }
    assert_eq!(skipped.grads.d_weights[2], full.grads.d_weights[2]);
}

proptest! {
    #[test]
    fn adjoint_is_linear_in_the_loss_gradient(c in -10.0f64..10.0, seed in 0u64..50) {
        let model = TustinModel::new(random_net(&[7, 6, 6, 2], seed), 2, 1, 0.01).unwrap();
        let x0 = StateVector::new(vec![0.1, 0.2], vec![0.3, 0.4]);
        let u = vec![vec![1.0]; 6];
        let traj = model.rollout(&x0, &u).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<StateVector<f64>> = (0..6)
            .map(|_| StateVector::new(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        let scaled: Vec<StateVector<f64>> = d
            .iter()
            .map(|x| StateVector::new(x.q.iter().map(|v| c * v).collect(), x.qdot.iter().map(|v| c * v).collect()))
            .collect();
        let g1 = model.rollout_backward(&traj, &d).unwrap().bundle;
        let g2 = model.rollout_backward(&traj, &scaled).unwrap().bundle;
        for (a, b) in g1.param_values().zip(g2.param_values()) {
            prop_assert!((c * a - b).abs() <= 1e-12 * (c * a).abs().max(1e-9));
        }
    }
}
