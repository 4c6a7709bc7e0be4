//! The Tustin-Net discrete-time state-space model.
//!
//! One transition reads
//!
//! ```text
//! q̇_{k+1} = q̇_k + τ_s · f(sin q_k, cos q_k, q̇_k, u_k)
//! q_{k+1} = q_k + τ_s · (q̇_k + q̇_{k+1}) / 2
//! ```
//!
//! The velocity update is evaluated first, so the trapezoidal position update is
//! fully explicit. Angles are never wrapped.

use crate::error::{check_len, Error, Result};
use crate::nn::{FeedforwardNet, GradientBundle};
use crate::scalar::Scalar;

/// Any state entry beyond this magnitude aborts a rollout.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector<T> {
    pub q: Vec<T>,
    pub qdot: Vec<T>,
}

impl<T: Scalar> StateVector<T> {
    pub fn new(q: Vec<T>, qdot: Vec<T>) -> Self {
        Self { q, qdot }
    }

    pub fn zeros(n_q: usize) -> Self {
        Self {
            q: vec![T::zero(); n_q],
            qdot: vec![T::zero(); n_q],
        }
    }

    pub fn n_q(&self) -> usize {
        self.q.len()
    }

    /// `[q, q̇]` flattened.
    pub fn to_vec(&self) -> Vec<T> {
        self.q.iter().chain(&self.qdot).copied().collect()
    }

    pub fn from_slice(x: &[T]) -> Self {
        let n = x.len() / 2;
        Self {
            q: x[..n].to_vec(),
            qdot: x[n..].to_vec(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        let lim = T::c(DIVERGENCE_LIMIT);
        self.q.iter().chain(&self.qdot).all(|v| v.is_finite() && v.abs() <= lim)
    }
}

/// States `x_0..x_T` and the inputs that drove them.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub states: Vec<StateVector<T>>,
    /// Same length as `states`; the final input is stored but not consumed.
    pub inputs: Vec<Vec<T>>,
    pub tau_s: T,
}

impl<T: Scalar> Trajectory<T> {
    /// Number of transitions `T`.
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Output sequence `y_k = q_k`.
    pub fn outputs(&self) -> Vec<Vec<T>> {
        self.states.iter().map(|s| s.q.clone()).collect()
    }

    pub fn final_state(&self) -> &StateVector<T> {
        self.states.last().expect("trajectory holds x0")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TustinModel<T> {
    pub net: FeedforwardNet<T>,
    n_q: usize,
    n_u: usize,
    tau_s: T,
}

/// Gradient of a rollout loss: network parameters plus the initial state.
#[derive(Clone, Debug)]
pub struct RolloutGradient<T> {
    /// Parameter gradients summed over every transition. `d_input` is unused and left at zero.
    pub bundle: GradientBundle<T>,
    pub d_x0: StateVector<T>,
}

/// `cat(sin q, cos q, q̇, u)`.
pub fn features<T: Scalar>(x: &StateVector<T>, u: &[T]) -> Vec<T> {
    let mut z = Vec::with_capacity(3 * x.q.len() + u.len());
    z.extend(x.q.iter().map(|q| q.sin()));
    z.extend(x.q.iter().map(|q| q.cos()));
    z.extend_from_slice(&x.qdot);
    z.extend_from_slice(u);
    z
}

/// Trapezoidal transition given the velocity increment `f` (already evaluated at `x`).
pub fn tustin_update<T: Scalar>(x: &StateVector<T>, increment: &[T], tau_s: T) -> StateVector<T> {
    let half = T::c(0.5) * tau_s;
    let qdot: Vec<T> = x.qdot.iter().zip(increment).map(|(&v, &f)| v + tau_s * f).collect();
    let q = x
        .q
        .iter()
        .zip(&x.qdot)
        .zip(&qdot)
        .map(|((&q, &v0), &v1)| q + half * (v0 + v1))
        .collect();
    StateVector { q, qdot }
}

impl<T: Scalar> TustinModel<T> {
    pub fn new(net: FeedforwardNet<T>, n_q: usize, n_u: usize, tau_s: T) -> Result<Self> {
        check_len("network input (n_u + 3 n_q)", n_u + 3 * n_q, net.input_dim())?;
        check_len("network output (n_q)", n_q, net.output_dim())?;
        if !(tau_s > T::zero()) {
            return Err(Error::Config(format!("sampling time must be positive; got {tau_s}")));
        }
        Ok(Self { net, n_q, n_u, tau_s })
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn tau_s(&self) -> T {
        self.tau_s
    }

    fn check_dims(&self, x: &StateVector<T>, u: &[T]) -> Result<()> {
        check_len("state positions", self.n_q, x.q.len())?;
        check_len("state velocities", self.n_q, x.qdot.len())?;
        check_len("input", self.n_u, u.len())
    }

    pub fn features(&self, x: &StateVector<T>, u: &[T]) -> Result<Vec<T>> {
        self.check_dims(x, u)?;
        Ok(features(x, u))
    }

    pub fn step(&self, x: &StateVector<T>, u: &[T]) -> Result<StateVector<T>> {
        self.step_at(x, u, 0)
    }

    fn step_at(&self, x: &StateVector<T>, u: &[T], k: usize) -> Result<StateVector<T>> {
        let z = self.features(x, u)?;
        let increment = self.net.forward(&z)?;
        let next = tustin_update(x, &increment, self.tau_s);
        if next.is_bounded() {
            Ok(next)
        } else {
            Err(Error::Divergence { step: k })
        }
    }

    /// Free-run simulation over `u_seq.len() - 1` transitions.
    pub fn rollout(&self, x0: &StateVector<T>, u_seq: &[Vec<T>]) -> Result<Trajectory<T>> {
        if u_seq.is_empty() {
            return Err(Error::Config("input sequence must hold at least u_0".into()));
        }
        let last = u_seq.last().expect("nonempty");
        self.check_dims(x0, last)?;
        let mut states = Vec::with_capacity(u_seq.len());
        states.push(x0.clone());
        for (k, u) in u_seq[..u_seq.len() - 1].iter().enumerate() {
            let next = self.step_at(&states[k], u, k)?;
            states.push(next);
        }
        Ok(Trajectory {
            states,
            inputs: u_seq.to_vec(),
            tau_s: self.tau_s,
        })
    }

    /// Backpropagation through time for a loss whose partial derivative with
    /// respect to each state `x_k` is `d_states[k]`.
    pub fn rollout_backward(&self, traj: &Trajectory<T>, d_states: &[StateVector<T>]) -> Result<RolloutGradient<T>> {
        check_len("state gradients", traj.states.len(), d_states.len())?;
        check_len("trajectory inputs", traj.states.len(), traj.inputs.len())?;
        let n = self.n_q;
        let tau = self.tau_s;
        let half = T::c(0.5) * tau;
        let horizon = traj.horizon();
        let mut bundle = GradientBundle::zeros_like(&self.net);

        // Adjoint of x_{k+1}, accumulated from the future.
        let mut gq = d_states[horizon].q.clone();
        let mut gv = d_states[horizon].qdot.clone();
        check_len("state gradient width", n, gq.len())?;
        for k in (0..horizon).rev() {
            let x = &traj.states[k];
            let u = &traj.inputs[k];
            // q̇_{k+1} feeds q_{k+1} through the trapezoid.
            let gv_next: Vec<T> = gv.iter().zip(&gq).map(|(&v, &q)| v + half * q).collect();
            let upstream: Vec<T> = gv_next.iter().map(|&g| tau * g).collect();
            let z = self.features(x, u)?;
            let trace = self.net.forward_trace(&z)?;
            self.net.accumulate_backward(&trace, &upstream, &mut bundle);
            let dz = &bundle.d_input;

            let local = &d_states[k];
            let mut new_gq = Vec::with_capacity(n);
            let mut new_gv = Vec::with_capacity(n);
            for j in 0..n {
                let (s, c) = x.q[j].sin_cos();
                new_gq.push(local.q[j] + gq[j] + dz[j] * c - dz[n + j] * s);
                new_gv.push(local.qdot[j] + half * gq[j] + gv_next[j] + dz[2 * n + j]);
            }
            gq = new_gq;
            gv = new_gv;
        }
        bundle.d_input.iter_mut().for_each(|x| *x = T::zero());
        Ok(RolloutGradient {
            bundle,
            d_x0: StateVector { q: gq, qdot: gv },
        })
    }
}
