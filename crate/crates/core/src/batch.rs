//! Lockstep rollout and back-propagation of a batch of equal-length subsequences.
//!
//! Samples are stacked as rows so each transition is a handful of dense
//! products. The arithmetic matches [`TustinModel::rollout_backward`] applied
//! per sample and summed; only the summation order differs.

use crate::data::SubsequenceSample;
use crate::error::{Error, Result};
use crate::loss::ComponentKind;
use crate::model::TustinModel;
use crate::nn::{leaky, leaky_grad, GradientBundle};
use crate::scalar::{MatRef, Scalar};

/// Sum of per-sample losses and of their parameter gradients.
#[derive(Clone, Debug)]
pub struct BatchResult<T> {
    pub loss_sum: T,
    pub grads: GradientBundle<T>,
    pub samples: usize,
}

/// Activations of one transition for the whole batch.
struct StepTrace<T> {
    /// `inputs[m]` is the `B x n_m` input of layer `m`.
    inputs: Vec<Vec<T>>,
    /// `B x n_m` pre-activations of the hidden layers.
    preacts: Vec<Vec<T>>,
}

fn window_len<T>(samples: &[&SubsequenceSample<T>]) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Dataset("empty batch".into()))?
        .window_len;
    if samples.iter().any(|s| s.window_len != first) {
        return Err(Error::Dataset("a batch must hold windows of one length".into()));
    }
    if first == 0 {
        return Err(Error::Dataset("windows must contain at least one transition".into()));
    }
    Ok(first)
}

struct Rollout<T> {
    /// `q[k]`, `v[k]`: `B x n_q` states for `k = 0..=T`.
    q: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    traces: Vec<StepTrace<T>>,
}

fn forward<T: Scalar>(
    model: &TustinModel<T>,
    samples: &[&SubsequenceSample<T>],
    horizon: usize,
    keep_traces: bool,
) -> Result<Rollout<T>> {
    let net = &model.net;
    let b = samples.len();
    let nq = model.n_q();
    let nu = model.n_u();
    let n0 = net.input_dim();
    let tau = model.tau_s();
    let half = T::c(0.5) * tau;
    let slope = net.activation_slope;
    let hidden = net.hidden_layers();

    let mut q0 = Vec::with_capacity(b * nq);
    let mut v0 = Vec::with_capacity(b * nq);
    for s in samples {
        crate::error::check_len("sample n_q", nq, s.x0.n_q())?;
        q0.extend_from_slice(&s.x0.q);
        v0.extend_from_slice(&s.x0.qdot);
    }
    let mut q = vec![q0];
    let mut v = vec![v0];
    let mut traces = Vec::with_capacity(if keep_traces { horizon } else { 0 });
    let mut out = vec![T::zero(); b * nq];
    for k in 0..horizon {
        let (qk, vk) = (&q[k], &v[k]);
        let mut z = Vec::with_capacity(b * n0);
        for (i, s) in samples.iter().enumerate() {
            let row_q = &qk[i * nq..(i + 1) * nq];
            z.extend(row_q.iter().map(|x| x.sin()));
            z.extend(row_q.iter().map(|x| x.cos()));
            z.extend_from_slice(&vk[i * nq..(i + 1) * nq]);
            let u = &s.u_window[k];
            crate::error::check_len("sample n_u", nu, u.len())?;
            z.extend_from_slice(u);
        }
        let mut inputs = vec![z];
        let mut preacts = Vec::with_capacity(hidden);
        for m in 0..hidden {
            let w = &net.weights[m];
            let n_out = w.rows();
            let mut a = Vec::with_capacity(b * n_out);
            for _ in 0..b {
                a.extend_from_slice(&net.biases[m]);
            }
            T::gemm(
                MatRef::new(&inputs[m], b, w.cols()),
                w.view().t(),
                T::one(),
                &mut a,
            );
            let h: Vec<T> = a.iter().map(|&x| leaky(x, slope)).collect();
            preacts.push(a);
            inputs.push(h);
        }
        let w_out = &net.weights[hidden];
        T::gemm(
            MatRef::new(&inputs[hidden], b, w_out.cols()),
            w_out.view().t(),
            T::zero(),
            &mut out,
        );
        let v_next: Vec<T> = vk.iter().zip(&out).map(|(&v, &f)| v + tau * f).collect();
        let q_next: Vec<T> = qk
            .iter()
            .zip(vk)
            .zip(&v_next)
            .map(|((&q, &v0), &v1)| q + half * (v0 + v1))
            .collect();
        q.push(q_next);
        v.push(v_next);
        if keep_traces {
            traces.push(StepTrace { inputs, preacts });
        }
    }
    Ok(Rollout { q, v, traces })
}

fn reference<'a, T: Scalar>(samples: &[&'a SubsequenceSample<T>], k: usize, i: usize) -> (&'a [T], &'a [T]) {
    let x = &samples[i].x_window[k];
    (&x.q, &x.qdot)
}

/// Sum over the batch of the per-sample state losses `(1/T) Σ_{k=1..T} Σ_j ℓ_j`.
pub fn batch_loss<T: Scalar>(model: &TustinModel<T>, samples: &[&SubsequenceSample<T>], kinds: &[ComponentKind]) -> Result<T> {
    let horizon = window_len(samples)?;
    crate::error::check_len("loss components", 2 * model.n_q(), kinds.len())?;
    let roll = forward(model, samples, horizon, false)?;
    Ok(loss_from(&roll, samples, kinds, model.n_q(), horizon))
}

fn loss_from<T: Scalar>(roll: &Rollout<T>, samples: &[&SubsequenceSample<T>], kinds: &[ComponentKind], nq: usize, horizon: usize) -> T {
    let mut total = T::zero();
    for k in 1..=horizon {
        for i in 0..samples.len() {
            let (rq, rv) = reference(samples, k, i);
            for j in 0..nq {
                total += kinds[j].distance(roll.q[k][i * nq + j], rq[j]);
                total += kinds[nq + j].distance(roll.v[k][i * nq + j], rv[j]);
            }
        }
    }
    total / T::c(horizon as f64)
}

/// Loss and gradient summed over the batch.
///
/// With `skip_frozen`, weight and bias gradients of frozen groups are left at
/// zero instead of being computed; the back-propagated signal is unaffected.
pub fn batch_loss_and_grad<T: Scalar>(
    model: &TustinModel<T>,
    samples: &[&SubsequenceSample<T>],
    kinds: &[ComponentKind],
    skip_frozen: bool,
) -> Result<BatchResult<T>> {
    let horizon = window_len(samples)?;
    let nq = model.n_q();
    crate::error::check_len("loss components", 2 * nq, kinds.len())?;
    let roll = forward(model, samples, horizon, true)?;
    let loss_sum = loss_from(&roll, samples, kinds, nq, horizon);

    let net = &model.net;
    let b = samples.len();
    let tau = model.tau_s();
    let half = T::c(0.5) * tau;
    let slope = net.activation_slope;
    let hidden = net.hidden_layers();
    let scale = T::one() / T::c(horizon as f64);
    let mut grads = GradientBundle::zeros_like(net);
    grads.d_input.iter_mut().for_each(|g| *g = T::zero());

    // adjoints of x_{k+1}, consumed at transition k
    let mut gq = vec![T::zero(); b * nq];
    let mut gv = vec![T::zero(); b * nq];
    for k in (0..horizon).rev() {
        // local loss gradient at k + 1
        for i in 0..b {
            let (rq, rv) = reference(samples, k + 1, i);
            for j in 0..nq {
                let idx = i * nq + j;
                gq[idx] += scale * kinds[j].distance_grad(roll.q[k + 1][idx], rq[j]);
                gv[idx] += scale * kinds[nq + j].distance_grad(roll.v[k + 1][idx], rv[j]);
            }
        }
        let gv_eff: Vec<T> = gv.iter().zip(&gq).map(|(&v, &q)| v + half * q).collect();
        let mut delta: Vec<T> = gv_eff.iter().map(|&g| tau * g).collect();
        let trace = &roll.traces[k];

        // output layer
        let w_out = &net.weights[hidden];
        let n_h = w_out.cols();
        if !(skip_frozen && net.frozen[hidden]) {
            T::gemm(
                MatRef::new(&delta, b, nq).t(),
                MatRef::new(&trace.inputs[hidden], b, n_h),
                T::one(),
                grads.d_weights[hidden].as_mut_slice(),
            );
        }
        let mut upstream = vec![T::zero(); b * n_h];
        T::gemm(MatRef::new(&delta, b, nq), w_out.view(), T::zero(), &mut upstream);

        for m in (0..hidden).rev() {
            let w = &net.weights[m];
            let (n_out, n_in) = w.shape();
            delta = upstream
                .iter()
                .zip(&trace.preacts[m])
                .map(|(&g, &a)| g * leaky_grad(a, slope))
                .collect();
            if !(skip_frozen && net.frozen[m]) {
                T::gemm(
                    MatRef::new(&delta, b, n_out).t(),
                    MatRef::new(&trace.inputs[m], b, n_in),
                    T::one(),
                    grads.d_weights[m].as_mut_slice(),
                );
                let db = &mut grads.d_biases[m];
                for row in delta.chunks_exact(n_out) {
                    for (d, &x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
            }
            upstream = vec![T::zero(); b * n_in];
            T::gemm(MatRef::new(&delta, b, n_out), w.view(), T::zero(), &mut upstream);
        }

        // upstream now holds d/dz for the features of x_k
        let n0 = net.input_dim();
        let qk = &roll.q[k];
        let mut gq_prev = vec![T::zero(); b * nq];
        let mut gv_prev = vec![T::zero(); b * nq];
        for i in 0..b {
            let dz = &upstream[i * n0..(i + 1) * n0];
            for j in 0..nq {
                let idx = i * nq + j;
                let (s, c) = qk[idx].sin_cos();
                gq_prev[idx] = gq[idx] + dz[j] * c - dz[nq + j] * s;
                gv_prev[idx] = half * gq[idx] + gv_eff[idx] + dz[2 * nq + j];
            }
        }
        gq = gq_prev;
        gv = gv_prev;
    }
    Ok(BatchResult {
        loss_sum,
        grads,
        samples: b,
    })
}

/// Mean per-sample state loss over a whole dataset, evaluated in chunks of `chunk`.
pub fn dataset_loss<T: Scalar>(
    model: &TustinModel<T>,
    samples: &[SubsequenceSample<T>],
    kinds: &[ComponentKind],
    chunk: usize,
) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let mut total = T::zero();
    for part in samples.chunks(chunk.max(1)) {
        let refs: Vec<&SubsequenceSample<T>> = part.iter().collect();
        total += batch_loss(model, &refs, kinds)?;
    }
    Ok(total / T::c(samples.len() as f64))
}
