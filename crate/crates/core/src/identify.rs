//! Constrained grey-box identification by simulation-error minimization.
//!
//! Positive parameters are optimized as logarithms and `κ2` as a scaled raw
//! value, so the search space is unconstrained apart from the box `Ξ`, which
//! is enforced by rejecting candidates outside it. Each stage runs a
//! Nelder-Mead search followed by a Levenberg-Marquardt polish whose Jacobian
//! is taken by forward differences through the integrator. Stages may use
//! truncated simulation windows before the full-length fit.

use serde::{Deserialize, Serialize};

use crate::data::{ExperimentSequence, FIRST_STENCIL_INDEX};
use crate::error::{Error, Result};
use crate::euler_lagrange::{simulate_with, ELParameters, SpringMode, DEFAULT_SUBSTEPS};
use crate::loss::{sequence_loss, squared_output_kinds};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    JR,
    JP,
    Kappa1,
    Kappa2,
    B1,
    B2,
    KappaT,
    KappaV,
}

impl ParamName {
    pub const ALL: [ParamName; 8] = [
        ParamName::JR,
        ParamName::JP,
        ParamName::Kappa1,
        ParamName::Kappa2,
        ParamName::B1,
        ParamName::B2,
        ParamName::KappaT,
        ParamName::KappaV,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ParamName::JR => "j_r",
            ParamName::JP => "j_p",
            ParamName::Kappa1 => "kappa1",
            ParamName::Kappa2 => "kappa2",
            ParamName::B1 => "b1",
            ParamName::B2 => "b2",
            ParamName::KappaT => "kappa_t",
            ParamName::KappaV => "kappa_v",
        }
    }

    pub fn get(self, p: &ELParameters<f64>) -> f64 {
        match self {
            ParamName::JR => p.j_r,
            ParamName::JP => p.j_p,
            ParamName::Kappa1 => p.kappa1,
            ParamName::Kappa2 => p.kappa2,
            ParamName::B1 => p.b1,
            ParamName::B2 => p.b2,
            ParamName::KappaT => p.kappa_t,
            ParamName::KappaV => p.kappa_v,
        }
    }

    pub fn set(self, p: &mut ELParameters<f64>, v: f64) {
        match self {
            ParamName::JR => p.j_r = v,
            ParamName::JP => p.j_p = v,
            ParamName::Kappa1 => p.kappa1 = v,
            ParamName::Kappa2 => p.kappa2 = v,
            ParamName::B1 => p.b1 = v,
            ParamName::B2 => p.b2 = v,
            ParamName::KappaT => p.kappa_t = v,
            ParamName::KappaV => p.kappa_v = v,
        }
    }

    /// `κ2` may take either sign; everything else is strictly positive.
    pub fn is_positive(self) -> bool {
        self != ParamName::Kappa2
    }

    fn is_spring(self) -> bool {
        matches!(self, ParamName::Kappa1 | ParamName::Kappa2)
    }
}

/// The box `Ξ`: inclusive `[lo, hi]` per identifiable parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBox {
    pub j_r: [f64; 2],
    pub j_p: [f64; 2],
    pub kappa1: [f64; 2],
    pub kappa2: [f64; 2],
    pub b1: [f64; 2],
    pub b2: [f64; 2],
    pub kappa_t: [f64; 2],
    pub kappa_v: [f64; 2],
}

impl ParameterBox {
    pub fn range(&self, name: ParamName) -> [f64; 2] {
        match name {
            ParamName::JR => self.j_r,
            ParamName::JP => self.j_p,
            ParamName::Kappa1 => self.kappa1,
            ParamName::Kappa2 => self.kappa2,
            ParamName::B1 => self.b1,
            ParamName::B2 => self.b2,
            ParamName::KappaT => self.kappa_t,
            ParamName::KappaV => self.kappa_v,
        }
    }

    /// A box spanning `[nominal / factor, nominal * factor]`; `κ2` gets a symmetric
    /// interval of half-width `factor * |κ2|` (at least `factor * κ1`).
    pub fn around(nominal: &ELParameters<f64>, factor: f64) -> Self {
        let pos = |v: f64| [v / factor, v * factor];
        let k2_half = factor * nominal.kappa2.abs().max(nominal.kappa1);
        Self {
            j_r: pos(nominal.j_r),
            j_p: pos(nominal.j_p),
            kappa1: pos(nominal.kappa1),
            kappa2: [nominal.kappa2 - k2_half, nominal.kappa2 + k2_half],
            b1: pos(nominal.b1),
            b2: pos(nominal.b2),
            kappa_t: pos(nominal.kappa_t),
            kappa_v: pos(nominal.kappa_v),
        }
    }

    pub fn contains(&self, p: &ELParameters<f64>, names: &[ParamName]) -> bool {
        names.iter().all(|&n| {
            let [lo, hi] = self.range(n);
            let v = n.get(p);
            v >= lo && v <= hi && (!n.is_positive() || v > 0.0)
        })
    }

    fn validate(&self) -> Result<()> {
        for n in ParamName::ALL {
            let [lo, hi] = self.range(n);
            if !(lo <= hi) || (n.is_positive() && lo <= 0.0) {
                return Err(Error::Config(format!(
                    "bounds for {} must satisfy 0 < lo <= hi (kappa2: lo <= hi); got [{lo}, {hi}]",
                    n.label()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentificationLoss {
    /// Positions and stencil velocities.
    StateError,
    /// Positions only.
    OutputError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyStage {
    /// Simulation window in steps; `0` simulates every sequence in full.
    pub horizon: usize,
    pub nelder_mead_evals: usize,
    pub lm_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifyConfig {
    /// Parameters to identify; the rest stay at their initial values.
    pub free: Vec<ParamName>,
    pub loss: IdentificationLoss,
    pub stages: Vec<IdentifyStage>,
    pub substeps: usize,
    /// Relative size of the initial simplex in the transformed coordinates.
    pub simplex_scale: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            free: vec![
                ParamName::JR,
                ParamName::JP,
                ParamName::Kappa1,
                ParamName::Kappa2,
                ParamName::B1,
                ParamName::B2,
                ParamName::KappaT,
            ],
            loss: IdentificationLoss::StateError,
            stages: vec![
                IdentifyStage {
                    horizon: 100,
                    nelder_mead_evals: 600,
                    lm_iterations: 20,
                },
                IdentifyStage {
                    horizon: 0,
                    nelder_mead_evals: 300,
                    lm_iterations: 30,
                },
            ],
            substeps: DEFAULT_SUBSTEPS,
            simplex_scale: 0.1,
        }
    }
}

impl IdentifyConfig {
    /// A configuration that performs no evaluations beyond the initial one.
    pub fn zero_budget() -> Self {
        Self {
            stages: Vec::new(),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub mode: SpringMode,
    pub free: Vec<ParamName>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub evaluations: usize,
    /// `(evaluation index, best loss so far)` whenever the best improves.
    pub loss_trace: Vec<(usize, f64)>,
}

impl IdentificationReport {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("evaluation,loss\n");
        for (e, l) in &self.loss_trace {
            s.push_str(&format!("{e},{l:e}\n"));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Simulation-error objective

struct Window<'a> {
    seq: &'a ExperimentSequence<f64>,
    start: usize,
    end: usize,
}

struct Objective<'a> {
    windows: Vec<Window<'a>>,
    mode: SpringMode,
    loss: IdentificationLoss,
    substeps: usize,
}

impl<'a> Objective<'a> {
    fn new(experiments: &'a [ExperimentSequence<f64>], horizon: usize, mode: SpringMode, cfg: &IdentifyConfig) -> Self {
        let mut windows = Vec::new();
        for seq in experiments {
            let last = seq.horizon();
            if last <= FIRST_STENCIL_INDEX {
                continue;
            }
            if horizon == 0 {
                windows.push(Window {
                    seq,
                    start: FIRST_STENCIL_INDEX,
                    end: last,
                });
            } else {
                let mut start = FIRST_STENCIL_INDEX;
                while start + horizon <= last {
                    windows.push(Window {
                        seq,
                        start,
                        end: start + horizon,
                    });
                    start += horizon;
                }
            }
        }
        Self {
            windows,
            mode,
            loss: cfg.loss,
            substeps: cfg.substeps,
        }
    }

    fn components(&self) -> usize {
        match self.loss {
            IdentificationLoss::StateError => 4,
            IdentificationLoss::OutputError => 2,
        }
    }

    /// Weighted residuals whose squared norm equals the loss.
    fn residuals(&self, p: &ELParameters<f64>) -> Option<Vec<f64>> {
        let nw = self.windows.len() as f64;
        let comps = self.components();
        let mut r = Vec::new();
        for w in &self.windows {
            let len = w.end - w.start;
            let weight = (1.0 / (nw * len as f64)).sqrt();
            let u: Vec<f64> = w.seq.u[w.start..=w.end].iter().map(|v| v[0]).collect();
            let traj = simulate_with(p, &w.seq.state(w.start), &u, w.seq.tau_s, self.mode, self.substeps).ok()?;
            for (k, x) in traj.states.iter().enumerate().skip(1) {
                let reference = w.seq.state(w.start + k);
                let sim = x.to_vec();
                let refv = reference.to_vec();
                for j in 0..comps {
                    r.push(weight * (sim[j] - refv[j]));
                }
            }
        }
        Some(r)
    }

    fn loss(&self, p: &ELParameters<f64>) -> f64 {
        match self.residuals(p) {
            Some(r) => r.iter().map(|x| x * x).sum(),
            None => f64::INFINITY,
        }
    }
}

/// Simulation-error loss of `theta` on full sequences, each simulated from its
/// first stencil-valid state, with squared distances on every component.
pub fn simulation_loss(
    experiments: &[ExperimentSequence<f64>],
    theta: &ELParameters<f64>,
    mode: SpringMode,
    loss: IdentificationLoss,
) -> f64 {
    let cfg = IdentifyConfig {
        loss,
        ..IdentifyConfig::default()
    };
    Objective::new(experiments, 0, mode, &cfg).loss(theta)
}

/// Output-error loss over whole sequences from `x_0`, matching the dataset-level form.
pub fn output_error_loss(experiments: &[ExperimentSequence<f64>], theta: &ELParameters<f64>, mode: SpringMode) -> Result<f64> {
    if experiments.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let kinds = squared_output_kinds(2);
    let mut total = 0.0;
    for seq in experiments {
        let u: Vec<f64> = seq.u.iter().map(|v| v[0]).collect();
        let traj = crate::euler_lagrange::simulate(theta, &seq.state(0), &u, seq.tau_s, mode)?;
        total += sequence_loss(&traj.outputs(), &seq.q, &kinds)?;
    }
    Ok(total / experiments.len() as f64)
}

// ---------------------------------------------------------------------------
// Parameter transform

struct Transform {
    names: Vec<ParamName>,
    base: ELParameters<f64>,
    /// Scale of the raw (signed) coordinates.
    raw_scale: f64,
}

impl Transform {
    fn encode(&self, p: &ELParameters<f64>) -> Vec<f64> {
        self.names
            .iter()
            .map(|&n| {
                let v = n.get(p);
                if n.is_positive() {
                    v.ln()
                } else {
                    v / self.raw_scale
                }
            })
            .collect()
    }

    fn decode(&self, z: &[f64]) -> ELParameters<f64> {
        let mut p = self.base;
        for (&n, &zi) in self.names.iter().zip(z) {
            n.set(&mut p, if n.is_positive() { zi.exp() } else { zi * self.raw_scale });
        }
        p
    }
}

struct Search<'a> {
    transform: &'a Transform,
    bounds: &'a ParameterBox,
    evaluations: usize,
    best: f64,
    best_z: Vec<f64>,
    trace: Vec<(usize, f64)>,
}

impl Search<'_> {
    fn admissible(&self, z: &[f64]) -> Option<ELParameters<f64>> {
        let p = self.transform.decode(z);
        self.bounds.contains(&p, &self.transform.names).then_some(p)
    }

    fn record(&mut self, z: &[f64], f: f64) {
        self.evaluations += 1;
        if f < self.best {
            self.best = f;
            self.best_z = z.to_vec();
            self.trace.push((self.evaluations, f));
        }
    }

    fn eval(&mut self, obj: &Objective<'_>, z: &[f64]) -> f64 {
        let f = match self.admissible(z) {
            Some(p) => obj.loss(&p),
            None => f64::INFINITY,
        };
        self.record(z, f);
        f
    }

    fn nelder_mead(&mut self, obj: &Objective<'_>, start: &[f64], scale: f64, max_evals: usize) {
        let n = start.len();
        if n == 0 || max_evals == 0 {
            return;
        }
        let budget = self.evaluations + max_evals;
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let f0 = self.eval(obj, start);
        simplex.push((start.to_vec(), f0));
        for i in 0..n {
            let mut z = start.to_vec();
            z[i] += scale;
            if self.admissible(&z).is_none() {
                z[i] = start[i] - scale;
            }
            let f = self.eval(obj, &z);
            simplex.push((z, f));
        }
        let centroid = |s: &[(Vec<f64>, f64)]| -> Vec<f64> {
            let mut c = vec![0.0; n];
            for (z, _) in &s[..n] {
                for (ci, zi) in c.iter_mut().zip(z) {
                    *ci += zi / n as f64;
                }
            }
            c
        };
        let along = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> { c.iter().zip(w).map(|(a, b)| a + t * (b - a)).collect() };
        while self.evaluations < budget {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[n].1 - simplex[0].1;
            if spread.abs() <= 1e-14 * simplex[0].1.abs().max(1e-300) {
                break;
            }
            let c = centroid(&simplex);
            let worst = simplex[n].clone();
            let zr = along(&c, &worst.0, -1.0);
            let fr = self.eval(obj, &zr);
            if fr < simplex[0].1 {
                let ze = along(&c, &worst.0, -2.0);
                let fe = self.eval(obj, &ze);
                simplex[n] = if fe < fr { (ze, fe) } else { (zr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (zr, fr);
            } else {
                let (zc, fc) = if fr < worst.1 {
                    let z = along(&c, &worst.0, -0.5);
                    let f = self.eval(obj, &z);
                    (z, f)
                } else {
                    let z = along(&c, &worst.0, 0.5);
                    let f = self.eval(obj, &z);
                    (z, f)
                };
                if fc < worst.1.min(fr) {
                    simplex[n] = (zc, fc);
                } else {
                    let best = simplex[0].0.clone();
                    for entry in simplex.iter_mut().skip(1) {
                        let z = along(&best, &entry.0, 0.5);
                        let f = self.eval(obj, &z);
                        *entry = (z, f);
                    }
                }
            }
        }
    }

    fn levenberg_marquardt(&mut self, obj: &Objective<'_>, iterations: usize) {
        let n = self.best_z.len();
        if n == 0 || iterations == 0 {
            return;
        }
        let mut z = self.best_z.clone();
        let Some(mut r) = self.admissible(&z).and_then(|p| obj.residuals(&p)) else {
            return;
        };
        let mut cost: f64 = r.iter().map(|x| x * x).sum();
        let mut lambda = 1e-3;
        for _ in 0..iterations {
            // forward-difference Jacobian
            let mut jac: Vec<Vec<f64>> = Vec::with_capacity(n);
            for i in 0..n {
                let h = 1e-6 * z[i].abs().max(1.0);
                let mut zp = z.clone();
                zp[i] += h;
                let Some(rp) = self.admissible(&zp).and_then(|p| obj.residuals(&p)) else {
                    zp[i] = z[i] - h;
                    let Some(rm) = self.admissible(&zp).and_then(|p| obj.residuals(&p)) else {
                        return;
                    };
                    self.evaluations += 1;
                    jac.push(rm.iter().zip(&r).map(|(a, b)| (b - a) / h).collect());
                    continue;
                };
                self.evaluations += 1;
                jac.push(rp.iter().zip(&r).map(|(a, b)| (a - b) / h).collect());
            }
            let mut jtj = vec![vec![0.0; n]; n];
            let mut jtr = vec![0.0; n];
            for i in 0..n {
                for j in 0..=i {
                    let v: f64 = jac[i].iter().zip(&jac[j]).map(|(a, b)| a * b).sum();
                    jtj[i][j] = v;
                    jtj[j][i] = v;
                }
                jtr[i] = jac[i].iter().zip(&r).map(|(a, b)| a * b).sum();
            }
            let mut improved = false;
            for _ in 0..12 {
                let mut a = jtj.clone();
                for i in 0..n {
                    a[i][i] += lambda * jtj[i][i].max(1e-12);
                }
                let Some(step) = solve_spd(a, jtr.iter().map(|v| -v).collect()) else {
                    lambda *= 10.0;
                    continue;
                };
                let zn: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + b).collect();
                let candidate = self.admissible(&zn).and_then(|p| obj.residuals(&p));
                let cn = candidate.as_ref().map_or(f64::INFINITY, |rn| rn.iter().map(|x| x * x).sum());
                self.record(&zn, cn);
                if cn < cost {
                    let rel = (cost - cn) / cost.max(1e-300);
                    z = zn;
                    r = candidate.expect("finite cost implies residuals");
                    cost = cn;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel < 1e-12 {
                        return;
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                return;
            }
        }
    }
}

/// Cholesky solve of a small symmetric positive-definite system.
fn solve_spd(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i][k] * b[k];
        }
        b[i] = s / a[i][i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k][i] * b[k];
        }
        b[i] = s / a[i][i];
    }
    Some(b)
}

/// Identifies `Θ` within `Ξ`, starting from `theta0`.
///
/// The returned report holds the final loss on full-length sequences.
pub fn identify_parameters(
    experiments: &[ExperimentSequence<f64>],
    bounds: &ParameterBox,
    theta0: &ELParameters<f64>,
    mode: SpringMode,
    cfg: &IdentifyConfig,
) -> Result<(ELParameters<f64>, IdentificationReport)> {
    if experiments.is_empty() {
        return Err(Error::Dataset("identification needs at least one experiment".into()));
    }
    bounds.validate()?;
    let free: Vec<ParamName> = cfg
        .free
        .iter()
        .copied()
        .filter(|n| mode == SpringMode::WithSpring || !n.is_spring())
        .collect();
    let start = theta0.with_mode(mode);
    if !bounds.contains(theta0, &free) {
        return Err(Error::Constraint("initial parameters lie outside the box".into()));
    }
    let transform = Transform {
        names: free.clone(),
        base: start,
        raw_scale: theta0.kappa2.abs().max(theta0.kappa1.abs()).max(1e-12),
    };
    let full = Objective::new(experiments, 0, mode, cfg);
    if full.windows.is_empty() {
        return Err(Error::Dataset("no experiment is long enough to simulate".into()));
    }
    let z0 = transform.encode(&start);
    let initial_loss = full.loss(&start);
    let mut search = Search {
        transform: &transform,
        bounds,
        evaluations: 1,
        best: f64::INFINITY,
        best_z: z0.clone(),
        trace: Vec::new(),
    };
    for stage in &cfg.stages {
        let obj = Objective::new(experiments, stage.horizon, mode, cfg);
        let obj = if obj.windows.is_empty() {
            Objective::new(experiments, 0, mode, cfg)
        } else {
            obj
        };
        // best-so-far is tracked per objective
        search.best = obj.loss(&transform.decode(&search.best_z));
        search.evaluations += 1;
        let from = search.best_z.clone();
        search.nelder_mead(&obj, &from, cfg.simplex_scale, stage.nelder_mead_evals);
        search.levenberg_marquardt(&obj, stage.lm_iterations);
    }
    let theta = transform.decode(&search.best_z);
    let final_loss = full.loss(&theta);
    if !final_loss.is_finite() {
        return Err(Error::IdentificationFailed(
            "every candidate diverged or left the parameter box".into(),
        ));
    }
    // A stage may end on a truncated objective; never return something worse than the start.
    let (theta, final_loss) = if final_loss <= initial_loss || !initial_loss.is_finite() {
        (theta, final_loss)
    } else {
        (start, initial_loss)
    };
    Ok((
        theta,
        IdentificationReport {
            mode,
            free,
            initial_loss,
            final_loss,
            evaluations: search.evaluations,
            loss_trace: search.trace,
        },
    ))
}

/// Relative error per free parameter, `(name, identified, reference, |Δ|/|ref|)`.
pub fn relative_errors(
    identified: &ELParameters<f64>,
    reference: &ELParameters<f64>,
    names: &[ParamName],
) -> Vec<(ParamName, f64, f64, f64)> {
    names
        .iter()
        .map(|&n| {
            let a = n.get(identified);
            let b = n.get(reference);
            (n, a, b, (a - b).abs() / b.abs().max(1e-300))
        })
        .collect()
}
