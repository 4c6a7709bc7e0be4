//! First-principles Furuta pendulum model.
//!
//! Coordinates are `q = (θ, α)`: arm angle and pendulum angle, with `α = 0`
//! upright. The realization is
//!
//! ```text
//! M(α) q̈ + C(q, q̇) q̇ + D q̇ + H(q) = K U
//!
//! M11 = J_r + m_p L_r² + m_p l_p² sin²α      M12 = M21 = m_p L_r l_p cos α
//! M22 = J_p + m_p l_p²
//! C   = Christoffel matrix of M
//! D   = diag(b1 + κ_t κ_v, b2)               (back-EMF folded into the arm damping)
//! H   = (κ1 θ + κ2 θ², −m_p g l_p sin α)
//! K   = (κ_t, 0)
//! ```
//!
//! `J_p` is the pendulum inertia about its centre of mass; the parallel-axis term
//! `m_p l_p²` is added by `M22`.

use serde::{Deserialize, Serialize};

use crate::data::VOLTAGE_LIMIT;
use crate::error::{Error, Result};
use crate::model::{StateVector, Trajectory};
use crate::scalar::Scalar;

pub const GRAVITY: f64 = 9.81;
/// RK4 substeps per sampling interval.
pub const DEFAULT_SUBSTEPS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpringMode {
    WithSpring,
    NoSpring,
}

/// Grey-box parameter set plus the known geometric constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ELParameters<T> {
    /// Rotor plus arm inertia about the motor axis [kg m²].
    pub j_r: T,
    /// Pendulum inertia about its centre of mass [kg m²].
    pub j_p: T,
    /// Linear cable-spring coefficient [N m / rad].
    pub kappa1: T,
    /// Quadratic cable-spring coefficient [N m / rad²].
    pub kappa2: T,
    /// Arm viscous damping [N m s / rad].
    pub b1: T,
    /// Pendulum viscous damping [N m s / rad].
    pub b2: T,
    /// Motor torque per volt [N m / V].
    pub kappa_t: T,
    /// Back-EMF constant [V s / rad].
    pub kappa_v: T,
    /// Arm mass [kg].
    pub m_r: T,
    /// Pendulum mass [kg].
    pub m_p: T,
    /// Arm length, motor axis to pendulum pivot [m].
    pub l_r: T,
    /// Pivot to pendulum centre of mass [m].
    pub l_p: T,
    /// Gravitational acceleration [m / s²].
    pub g: T,
}

impl Default for ELParameters<f64> {
    /// Nominal values for a small commercial rotary pendulum with a cable spring.
    fn default() -> Self {
        Self {
            j_r: 2.3e-4,
            j_p: 3.3e-5,
            kappa1: 2.0e-3,
            kappa2: 1.0e-3,
            b1: 1.5e-3,
            b2: 2.5e-4,
            kappa_t: 5.0e-3,
            kappa_v: 4.2e-2,
            m_r: 0.095,
            m_p: 0.024,
            l_r: 0.085,
            l_p: 0.0645,
            g: GRAVITY,
        }
    }
}

impl<T: Scalar> ELParameters<T> {
    pub fn cast<U: Scalar>(&self) -> ELParameters<U> {
        let c = |x: T| U::c(x.as_f64());
        ELParameters {
            j_r: c(self.j_r),
            j_p: c(self.j_p),
            kappa1: c(self.kappa1),
            kappa2: c(self.kappa2),
            b1: c(self.b1),
            b2: c(self.b2),
            kappa_t: c(self.kappa_t),
            kappa_v: c(self.kappa_v),
            m_r: c(self.m_r),
            m_p: c(self.m_p),
            l_r: c(self.l_r),
            l_p: c(self.l_p),
            g: c(self.g),
        }
    }

    /// Copy with the spring removed when `mode` is [`SpringMode::NoSpring`].
    pub fn with_mode(mut self, mode: SpringMode) -> Self {
        if mode == SpringMode::NoSpring {
            self.kappa1 = T::zero();
            self.kappa2 = T::zero();
        }
        self
    }

    pub fn mass_matrix(&self, alpha: T) -> [[T; 2]; 2] {
        let (s, c) = alpha.sin_cos();
        let m11 = self.j_r + self.m_p * self.l_r * self.l_r + self.m_p * self.l_p * self.l_p * s * s;
        let m12 = self.m_p * self.l_r * self.l_p * c;
        let m22 = self.j_p + self.m_p * self.l_p * self.l_p;
        [[m11, m12], [m12, m22]]
    }

    /// Time derivative of the mass matrix along `α̇`.
    pub fn mass_matrix_rate(&self, alpha: T, alpha_dot: T) -> [[T; 2]; 2] {
        let (s, c) = alpha.sin_cos();
        let d11 = T::c(2.0) * self.m_p * self.l_p * self.l_p * s * c * alpha_dot;
        let d12 = -self.m_p * self.l_r * self.l_p * s * alpha_dot;
        [[d11, d12], [d12, T::zero()]]
    }

    /// Coriolis/centrifugal matrix built from the Christoffel symbols of `M`.
    pub fn coriolis_matrix(&self, x: &StateVector<T>) -> [[T; 2]; 2] {
        let (s, c) = x.q[1].sin_cos();
        let (th_d, al_d) = (x.qdot[0], x.qdot[1]);
        let a = self.m_p * self.l_p * self.l_p * s * c;
        let b = self.m_p * self.l_r * self.l_p * s;
        [[a * al_d, a * th_d - b * al_d], [-a * th_d, T::zero()]]
    }

    /// Spring torque `dV_s/dθ`.
    pub fn spring_torque(&self, theta: T) -> T {
        self.kappa1 * theta + self.kappa2 * theta * theta
    }

    pub fn spring_potential(&self, theta: T) -> T {
        T::c(0.5) * self.kappa1 * theta * theta + self.kappa2 * theta * theta * theta / T::c(3.0)
    }

    /// `T + V` with `V = m_p g l_p cos α + V_s(θ)`.
    pub fn energy(&self, x: &StateVector<T>) -> T {
        let m = self.mass_matrix(x.q[1]);
        let (a, b) = (x.qdot[0], x.qdot[1]);
        let kinetic = T::c(0.5) * (m[0][0] * a * a + T::c(2.0) * m[0][1] * a * b + m[1][1] * b * b);
        kinetic + self.m_p * self.g * self.l_p * x.q[1].cos() + self.spring_potential(x.q[0])
    }

    /// Power dissipated with zero input: `(b1 + κ_t κ_v) θ̇² + b2 α̇²`.
    pub fn dissipation(&self, x: &StateVector<T>) -> T {
        let (a, b) = (x.qdot[0], x.qdot[1]);
        (self.b1 + self.kappa_t * self.kappa_v) * a * a + self.b2 * b * b
    }
}

pub fn saturate<T: Scalar>(u: T) -> T {
    let lim = T::c(VOLTAGE_LIMIT);
    u.max(-lim).min(lim)
}

/// `(q̇, q̈)` for state `x` under voltage `u` (clamped to the actuator range).
pub fn dynamics<T: Scalar>(x: &StateVector<T>, u: T, theta: &ELParameters<T>, mode: SpringMode) -> Result<StateVector<T>> {
    let p = theta.with_mode(mode);
    let u = saturate(u);
    let m = p.mass_matrix(x.q[1]);
    let c = p.coriolis_matrix(x);
    let (th_d, al_d) = (x.qdot[0], x.qdot[1]);
    let damp0 = (p.b1 + p.kappa_t * p.kappa_v) * th_d;
    let damp1 = p.b2 * al_d;
    let h0 = p.spring_torque(x.q[0]);
    let h1 = -p.m_p * p.g * p.l_p * x.q[1].sin();
    let rhs0 = p.kappa_t * u - (c[0][0] * th_d + c[0][1] * al_d) - damp0 - h0;
    let rhs1 = -(c[1][0] * th_d + c[1][1] * al_d) - damp1 - h1;
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m[0][0].abs().max(m[1][1].abs());
    if !(det.abs() > T::c(1e-12) * scale * scale) {
        return Err(Error::Numeric(format!("mass matrix singular (det = {det})")));
    }
    let acc0 = (m[1][1] * rhs0 - m[0][1] * rhs1) / det;
    let acc1 = (m[0][0] * rhs1 - m[1][0] * rhs0) / det;
    Ok(StateVector::new(x.qdot.clone(), vec![acc0, acc1]))
}

fn axpy<T: Scalar>(x: &StateVector<T>, h: T, d: &StateVector<T>) -> StateVector<T> {
    StateVector::new(
        x.q.iter().zip(&d.q).map(|(&a, &b)| a + h * b).collect(),
        x.qdot.iter().zip(&d.qdot).map(|(&a, &b)| a + h * b).collect(),
    )
}

/// One classical RK4 step of length `h` with constant input.
pub fn rk4_step<T: Scalar>(x: &StateVector<T>, u: T, h: T, theta: &ELParameters<T>, mode: SpringMode) -> Result<StateVector<T>> {
    let half = T::c(0.5) * h;
    let k1 = dynamics(x, u, theta, mode)?;
    let k2 = dynamics(&axpy(x, half, &k1), u, theta, mode)?;
    let k3 = dynamics(&axpy(x, half, &k2), u, theta, mode)?;
    let k4 = dynamics(&axpy(x, h, &k3), u, theta, mode)?;
    let sixth = h / T::c(6.0);
    let two = T::c(2.0);
    let comb = |a: &[T], b: &[T], c: &[T], d: &[T], base: &[T]| -> Vec<T> {
        (0..base.len())
            .map(|i| base[i] + sixth * (a[i] + two * b[i] + two * c[i] + d[i]))
            .collect()
    };
    Ok(StateVector::new(
        comb(&k1.q, &k2.q, &k3.q, &k4.q, &x.q),
        comb(&k1.qdot, &k2.qdot, &k3.qdot, &k4.qdot, &x.qdot),
    ))
}

/// Zero-order-hold simulation sampled every `tau_s`, integrated with
/// `substeps` RK4 steps per interval.
pub fn simulate_with<T: Scalar>(
    theta: &ELParameters<T>,
    x0: &StateVector<T>,
    u_seq: &[T],
    tau_s: T,
    mode: SpringMode,
    substeps: usize,
) -> Result<Trajectory<T>> {
    if u_seq.is_empty() {
        return Err(Error::Config("input sequence must hold at least u_0".into()));
    }
    if substeps == 0 {
        return Err(Error::Config("at least one integrator substep is required".into()));
    }
    let h = tau_s / T::c(substeps as f64);
    let mut states = Vec::with_capacity(u_seq.len());
    states.push(x0.clone());
    let mut x = x0.clone();
    for (k, &u) in u_seq[..u_seq.len() - 1].iter().enumerate() {
        for _ in 0..substeps {
            x = rk4_step(&x, u, h, theta, mode)?;
        }
        if !x.is_bounded() {
            return Err(Error::Divergence { step: k });
        }
        states.push(x.clone());
    }
    Ok(Trajectory {
        states,
        inputs: u_seq.iter().map(|&u| vec![u]).collect(),
        tau_s,
    })
}

pub fn simulate<T: Scalar>(
    theta: &ELParameters<T>,
    x0: &StateVector<T>,
    u_seq: &[T],
    tau_s: T,
    mode: SpringMode,
) -> Result<Trajectory<T>> {
    simulate_with(theta, x0, u_seq, tau_s, mode, DEFAULT_SUBSTEPS)
}

/// TOML rendering with units in comments.
pub fn params_to_toml(p: &ELParameters<f64>) -> String {
    let rows = [
        ("j_r", p.j_r, "rotor + arm inertia about the motor axis [kg m^2]"),
        ("j_p", p.j_p, "pendulum inertia about its centre of mass [kg m^2]"),
        ("kappa1", p.kappa1, "linear cable-spring coefficient [N m / rad]"),
        ("kappa2", p.kappa2, "quadratic cable-spring coefficient [N m / rad^2]"),
        ("b1", p.b1, "arm viscous damping [N m s / rad]"),
        ("b2", p.b2, "pendulum viscous damping [N m s / rad]"),
        ("kappa_t", p.kappa_t, "motor torque per volt [N m / V]"),
        ("kappa_v", p.kappa_v, "back-EMF constant [V s / rad]"),
        ("m_r", p.m_r, "arm mass [kg] (known)"),
        ("m_p", p.m_p, "pendulum mass [kg] (known)"),
        ("l_r", p.l_r, "arm length [m] (known)"),
        ("l_p", p.l_p, "pivot to pendulum centre of mass [m] (known)"),
        ("g", p.g, "gravitational acceleration [m / s^2] (known)"),
    ];
    let mut out = String::new();
    for (name, value, comment) in rows {
        out.push_str(&format!("# {comment}\n{name} = {value:?}\n"));
    }
    out
}

pub fn params_from_toml(text: &str) -> Result<ELParameters<f64>> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}
