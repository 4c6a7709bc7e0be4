//! Experiment ingestion, velocity reconstruction and subsequence datasets.

use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StateVector;
use crate::scalar::Scalar;

/// Absolute tolerance on the sampling grid.
pub const GRID_TOLERANCE: f64 = 1e-6;
/// Actuator voltage limit in volts.
pub const VOLTAGE_LIMIT: f64 = 15.0;
pub const DEFAULT_SPEED_TOL: f64 = 0.1;
pub const DEFAULT_EQUILIBRIUM_WINDOW: usize = 50;
/// First index at which the five-point stencil is defined.
pub const FIRST_STENCIL_INDEX: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FreeFall,
    NoiseExcited,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::FreeFall => "free-fall",
            ExperimentKind::NoiseExcited => "noise-excited",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
}

/// One recorded run on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSequence<T> {
    pub id: usize,
    pub t: Vec<T>,
    pub u: Vec<Vec<T>>,
    pub q: Vec<Vec<T>>,
    pub qdot_est: Vec<Vec<T>>,
    /// True where `qdot_est` comes from a one-sided difference.
    pub qdot_boundary: Vec<bool>,
    pub tau_s: T,
    /// Equilibrium-entry step; equals [`Self::horizon`] when none was found.
    pub kbar: usize,
    pub kind: ExperimentKind,
}

impl<T: Scalar> ExperimentSequence<T> {
    /// Builds a sequence from positions and inputs, estimating velocities and `kbar`.
    pub fn from_samples(
        id: usize,
        kind: ExperimentKind,
        tau_s: T,
        t: Vec<T>,
        q: Vec<Vec<T>>,
        u: Vec<Vec<T>>,
    ) -> Result<Self> {
        if q.len() < 5 {
            return Err(Error::TooShort {
                path: PathBuf::from(format!("<experiment {id}>")),
                rows: q.len(),
            });
        }
        if t.len() != q.len() || u.len() != q.len() {
            return Err(Error::Dataset(format!(
                "experiment {id}: t, q and u must have equal lengths ({}, {}, {})",
                t.len(),
                q.len(),
                u.len()
            )));
        }
        let (qdot_est, qdot_boundary) = estimate_state_velocities(&q, tau_s);
        let mut seq = Self {
            id,
            t,
            u,
            q,
            qdot_est,
            qdot_boundary,
            tau_s,
            kbar: 0,
            kind,
        };
        seq.kbar = detect_equilibrium_entry(&seq, T::c(DEFAULT_SPEED_TOL), DEFAULT_EQUILIBRIUM_WINDOW)
            .unwrap_or_else(|_| seq.horizon());
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `T_i`: number of transitions (samples minus one).
    pub fn horizon(&self) -> usize {
        self.q.len().saturating_sub(1)
    }

    pub fn n_q(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    /// Measured position with stencil velocity at step `k`.
    pub fn state(&self, k: usize) -> StateVector<T> {
        StateVector::new(self.q[k].clone(), self.qdot_est[k].clone())
    }

    pub fn states(&self) -> Vec<StateVector<T>> {
        (0..self.len()).map(|k| self.state(k)).collect()
    }

    pub fn reached_equilibrium(&self) -> bool {
        self.kbar < self.horizon()
    }
}

/// Five-point stencil velocities for one coordinate.
///
/// Interior points use `(q_{k-2} - 8 q_{k-1} + 8 q_{k+1} - q_{k+2}) / (12 τ_s)`;
/// the two samples at each end use forward/backward two-point differences.
pub fn estimate_velocities<T: Scalar>(q: &[T], tau_s: T) -> Vec<T> {
    let n = q.len();
    assert!(n >= 5, "five-point stencil needs at least 5 samples");
    let denom = T::c(12.0) * tau_s;
    let eight = T::c(8.0);
    let mut v = vec![T::zero(); n];
    for k in 2..n - 2 {
        v[k] = (eight * (q[k + 1] - q[k - 1]) - (q[k + 2] - q[k - 2])) / denom;
    }
    for k in 0..2 {
        v[k] = (q[k + 1] - q[k]) / tau_s;
    }
    for k in n - 2..n {
        v[k] = (q[k] - q[k - 1]) / tau_s;
    }
    v
}

fn estimate_state_velocities<T: Scalar>(q: &[Vec<T>], tau_s: T) -> (Vec<Vec<T>>, Vec<bool>) {
    let n = q.len();
    let n_q = q[0].len();
    let per_coord: Vec<Vec<T>> = (0..n_q)
        .map(|j| {
            let col: Vec<T> = q.iter().map(|row| row[j]).collect();
            estimate_velocities(&col, tau_s)
        })
        .collect();
    let qdot = (0..n).map(|k| per_coord.iter().map(|c| c[k]).collect()).collect();
    let boundary = (0..n).map(|k| k < 2 || k + 2 >= n).collect();
    (qdot, boundary)
}

/// Smallest `k >= 2` such that `‖q̇_est‖∞ < speed_tol` on every step of
/// `[k, k + window)`. Returns the horizon `T_i` when no such `k` exists.
pub fn detect_equilibrium_entry<T: Scalar>(seq: &ExperimentSequence<T>, speed_tol: T, window: usize) -> Result<usize> {
    let horizon = seq.horizon();
    if window == 0 || window > horizon {
        return Err(Error::Config(format!(
            "equilibrium window {window} must lie in 1..={horizon}"
        )));
    }
    let quiet: Vec<bool> = seq
        .qdot_est
        .iter()
        .map(|v| v.iter().all(|x| x.abs() < speed_tol))
        .collect();
    // run[k] = number of consecutive quiet steps starting at k
    let mut run = vec![0usize; quiet.len() + 1];
    for k in (0..quiet.len()).rev() {
        run[k] = if quiet[k] { run[k + 1] + 1 } else { 0 };
    }
    Ok((FIRST_STENCIL_INDEX..seq.len())
        .find(|&k| run[k] >= window)
        .unwrap_or(horizon))
}

/// A `(x_0, u_{0:T}, x_{0:T})` training triple cut from an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsequenceSample<T> {
    pub source_id: usize,
    pub start: usize,
    pub x0: StateVector<T>,
    pub u_window: Vec<Vec<T>>,
    pub x_window: Vec<StateVector<T>>,
    pub window_len: usize,
}

impl<T: Scalar> SubsequenceSample<T> {
    pub fn cut(seq: &ExperimentSequence<T>, start: usize, window_len: usize) -> Self {
        let end = start + window_len;
        assert!(end < seq.len(), "window exceeds source sequence");
        let x_window: Vec<_> = (start..=end).map(|k| seq.state(k)).collect();
        Self {
            source_id: seq.id,
            start,
            x0: x_window[0].clone(),
            u_window: seq.u[start..=end].to_vec(),
            x_window,
            window_len,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SubsequenceDataset<T> {
    pub samples: Vec<SubsequenceSample<T>>,
    /// Ids of experiments that offered no valid start index.
    pub excluded: Vec<usize>,
}

/// Inclusive start range `[2, hi]` for one experiment, or `None` when empty.
fn start_range(lo: usize, hi: Option<usize>) -> Option<(usize, usize)> {
    hi.filter(|&h| h >= lo).map(|h| (lo, h))
}

fn draw_dataset<T: Scalar>(
    experiments: &[ExperimentSequence<T>],
    count: usize,
    window: usize,
    seed: u64,
    upper: impl Fn(&ExperimentSequence<T>) -> Option<usize>,
    stage: &str,
) -> Result<SubsequenceDataset<T>> {
    if window == 0 {
        return Err(Error::Config("subsequence length must be positive".into()));
    }
    let mut usable = Vec::new();
    let mut excluded = Vec::new();
    for (idx, seq) in experiments.iter().enumerate() {
        match start_range(FIRST_STENCIL_INDEX, upper(seq)) {
            Some(range) => usable.push((idx, range)),
            None => {
                warn!(
                    "{stage}: experiment {} (T = {}, kbar = {}) has no valid start for windows of length {window}; excluded",
                    seq.id,
                    seq.horizon(),
                    seq.kbar
                );
                excluded.push(seq.id);
            }
        }
    }
    if usable.is_empty() {
        return Err(Error::Dataset(format!(
            "{stage}: no experiment can host a window of length {window}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count)
        .map(|_| {
            let (idx, (lo, hi)) = usable[rng.gen_range(0..usable.len())];
            let start = rng.gen_range(lo..=hi);
            SubsequenceSample::cut(&experiments[idx], start, window)
        })
        .collect();
    Ok(SubsequenceDataset { samples, excluded })
}

/// Pre-training set: starts drawn from `U(2, min(kbar - 2, T_i - T1))`.
pub fn build_pretrain_dataset<T: Scalar>(
    experiments: &[ExperimentSequence<T>],
    n1: usize,
    t1: usize,
    seed: u64,
) -> Result<SubsequenceDataset<T>> {
    draw_dataset(
        experiments,
        n1,
        t1,
        seed,
        |seq| {
            let by_kbar = seq.kbar.checked_sub(2)?;
            let by_len = seq.horizon().checked_sub(t1)?;
            Some(by_kbar.min(by_len))
        },
        "pre-train dataset",
    )
}

/// Fine-tuning set: starts drawn from `U(2, T_i - T2 - 2)` over whole sequences.
pub fn build_finetune_dataset<T: Scalar>(
    experiments: &[ExperimentSequence<T>],
    n2: usize,
    t2: usize,
    seed: u64,
) -> Result<SubsequenceDataset<T>> {
    draw_dataset(
        experiments,
        n2,
        t2,
        seed,
        |seq| seq.horizon().checked_sub(t2 + 2),
        "fine-tune dataset",
    )
}

// ---------------------------------------------------------------------------
// CSV

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads an experiment CSV with header `t,theta,alpha,u`; lines starting with `#` are ignored.
pub fn load_experiment<T: Scalar>(
    path: &Path,
    expected_tau_s: T,
    id: usize,
    kind: ExperimentKind,
) -> Result<ExperimentSequence<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => format_err(path, format!("{other:?}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| format_err(path, e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(path, format!("missing column `{name}`")))
    };
    let (ct, cth, cal, cu) = (column("t")?, column("theta")?, column("alpha")?, column("u")?);

    let mut t = Vec::new();
    let mut q = Vec::new();
    let mut u = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let cell = |c: usize, name: &str| -> Result<f64> {
            let raw = record
                .get(c)
                .ok_or_else(|| format_err(path, format!("row {}: missing `{name}`", row + 1)))?;
            let v: f64 = raw
                .parse()
                .map_err(|_| format_err(path, format!("row {}: `{name}` = `{raw}` is not a number", row + 1)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format_err(path, format!("row {}: non-finite `{name}`", row + 1)))
            }
        };
        t.push(cell(ct, "t")?);
        q.push(vec![T::c(cell(cth, "theta")?), T::c(cell(cal, "alpha")?)]);
        u.push(cell(cu, "u")?);
    }
    if q.len() < 5 {
        return Err(Error::TooShort {
            path: path.to_path_buf(),
            rows: q.len(),
        });
    }
    let tau = expected_tau_s.as_f64();
    for k in 1..t.len() {
        let dt = t[k] - t[k - 1];
        if (dt - tau).abs() > GRID_TOLERANCE {
            return Err(Error::Grid {
                path: path.to_path_buf(),
                row: k + 1,
                dt,
            });
        }
    }
    if let Some(k) = u.iter().position(|v| v.abs() > VOLTAGE_LIMIT) {
        warn!(
            "{}: input exceeds the ±{VOLTAGE_LIMIT} V actuator limit at row {}",
            path.display(),
            k + 1
        );
    }
    ExperimentSequence::from_samples(
        id,
        kind,
        expected_tau_s,
        t.into_iter().map(T::c).collect(),
        q,
        u.into_iter().map(|v| vec![T::c(v)]).collect(),
    )
}

/// Writes the `t,theta,alpha,u` CSV; values use shortest round-trip formatting.
pub fn write_experiment_csv<T: Scalar>(path: &Path, seq: &ExperimentSequence<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => format_err(path, format!("{other:?}")),
    })?;
    let wrap = |e: csv::Error| format_err(path, e.to_string());
    w.write_record(["t", "theta", "alpha", "u"]).map_err(wrap)?;
    for k in 0..seq.len() {
        w.write_record([
            seq.t[k].as_f64().to_string(),
            seq.q[k][0].as_f64().to_string(),
            seq.q[k][1].as_f64().to_string(),
            seq.u[k][0].as_f64().to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: PathBuf,
    pub kind: ExperimentKind,
    pub split: Split,
}

/// Declarative list of experiment files and their train/validation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub tau_s: f64,
    #[serde(rename = "experiment")]
    pub experiments: Vec<ManifestEntry>,
}

#[derive(Clone, Debug)]
pub struct LoadedDataset<T> {
    pub train: Vec<ExperimentSequence<T>>,
    pub validation: Vec<ExperimentSequence<T>>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| format_err(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| format_err(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads every listed file; relative paths resolve against `base`.
    /// Experiment ids follow manifest order.
    pub fn load<T: Scalar>(&self, base: &Path) -> Result<LoadedDataset<T>> {
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for (id, entry) in self.experiments.iter().enumerate() {
            let path = if entry.file.is_absolute() {
                entry.file.clone()
            } else {
                base.join(&entry.file)
            };
            let seq = load_experiment(&path, T::c(self.tau_s), id, entry.kind)?;
            match entry.split {
                Split::Train => train.push(seq),
                Split::Validation => validation.push(seq),
            }
        }
        Ok(LoadedDataset { train, validation })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_experiment(id: usize, len: usize, tau: f64) -> ExperimentSequence<f64> {
        let t: Vec<f64> = (0..len).map(|k| k as f64 * tau).collect();
        let q = t.iter().map(|&x| vec![x, 0.0]).collect();
        ExperimentSequence::from_samples(id, ExperimentKind::FreeFall, tau, t, q, vec![vec![0.0]; len]).unwrap()
    }

    #[test]
    fn constant_positions_have_zero_velocity() {
        assert!(estimate_velocities(&[0.7; 9], 0.01).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_ramp_is_exact() {
        let tau = 0.01;
        let q: Vec<f64> = (0..50).map(|k| k as f64 * tau).collect();
        let v = estimate_velocities(&q, tau);
        for &vk in &v[2..48] {
            assert!((vk - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quartic_is_exact() {
        let tau = 0.01;
        let q: Vec<f64> = (0..100).map(|k| (k as f64 * tau).powi(4)).collect();
        let v = estimate_velocities(&q, tau);
        for k in 2..98 {
            let exact = 4.0 * (k as f64 * tau).powi(3);
            assert!((v[k] - exact).abs() <= 1e-10, "k={k}: {} vs {exact}", v[k]);
        }
    }

    #[test]
    fn quiet_sequence_enters_equilibrium_at_first_stencil_index() {
        let len = 200;
        let seq = ExperimentSequence::from_samples(
            0,
            ExperimentKind::FreeFall,
            0.01,
            (0..len).map(|k| k as f64 * 0.01).collect(),
            vec![vec![0.0, 0.0]; len],
            vec![vec![0.0]; len],
        )
        .unwrap();
        assert_eq!(detect_equilibrium_entry(&seq, 0.1, 50).unwrap(), 2);
        assert_eq!(seq.kbar, 2);
    }

    #[test]
    fn moving_sequence_never_enters_equilibrium() {
        let seq = ramp_experiment(0, 300, 0.01);
        assert_eq!(detect_equilibrium_entry(&seq, 0.1, 50).unwrap(), seq.horizon());
        assert!(matches!(detect_equilibrium_entry(&seq, 0.1, 1000), Err(Error::Config(_))));
    }

    #[test]
    fn finetune_starts_cover_printed_range() {
        let seq = ramp_experiment(3, 501, 0.01);
        assert_eq!(seq.horizon(), 500);
        let ds = build_finetune_dataset(std::slice::from_ref(&seq), 20_000, 75, 11).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for s in &ds.samples {
            seen.insert(s.start);
        }
        assert_eq!(*seen.first().unwrap(), 2);
        assert_eq!(*seen.last().unwrap(), 423);
        assert_eq!(seen.len(), 422);
    }

    #[test]
    fn short_kbar_excludes_experiment() {
        let mut quiet = ramp_experiment(0, 300, 0.01);
        quiet.kbar = 3;
        let busy = ramp_experiment(1, 300, 0.01);
        let ds = build_pretrain_dataset(&[quiet.clone(), busy], 100, 50, 1).unwrap();
        assert_eq!(ds.excluded, vec![0]);
        assert!(ds.samples.iter().all(|s| s.source_id == 1));
        assert!(matches!(
            build_pretrain_dataset(&[quiet], 10, 50, 1),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn builders_are_seed_deterministic() {
        let exps = vec![ramp_experiment(0, 400, 0.01), ramp_experiment(1, 250, 0.01)];
        let a = build_finetune_dataset(&exps, 64, 30, 5).unwrap();
        let b = build_finetune_dataset(&exps, 64, 30, 5).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = build_pretrain_dataset(&exps, 64, 30, 5).unwrap();
        let d = build_pretrain_dataset(&exps, 64, 30, 5).unwrap();
        assert_eq!(c.samples, d.samples);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let short = dir.path().join("short.csv");
        std::fs::write(&short, "t,theta,alpha,u\n0,0,0,0\n0.01,0,0,0\n0.02,0,0,0\n0.03,0,0,0\n").unwrap();
        assert!(matches!(
            load_experiment::<f64>(&short, 0.01, 0, ExperimentKind::FreeFall),
            Err(Error::TooShort { rows: 4, .. })
        ));

        let gap = dir.path().join("gap.csv");
        let mut text = String::from("# comment\nt,theta,alpha,u\n");
        for k in 0..10 {
            let t = if k >= 6 { (k + 1) as f64 * 0.01 } else { k as f64 * 0.01 };
            text.push_str(&format!("{t},0,0,0\n"));
        }
        std::fs::write(&gap, text).unwrap();
        match load_experiment::<f64>(&gap, 0.01, 0, ExperimentKind::FreeFall) {
            Err(Error::Grid { row, .. }) => assert_eq!(row, 7),
            other => panic!("expected grid error, got {other:?}"),
        }

        let missing = dir.path().join("missing.csv");
        std::fs::write(&missing, "t,theta,u\n0,0,0\n").unwrap();
        assert!(matches!(
            load_experiment::<f64>(&missing, 0.01, 0, ExperimentKind::FreeFall),
            Err(Error::Format { .. })
        ));

        let nan = dir.path().join("nan.csv");
        std::fs::write(&nan, "t,theta,alpha,u\n0,0,NaN,0\n0.01,0,0,0\n0.02,0,0,0\n0.03,0,0,0\n0.04,0,0,0\n").unwrap();
        assert!(matches!(
            load_experiment::<f64>(&nan, 0.01, 0, ExperimentKind::FreeFall),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn csv_loads_long_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ok.csv");
        let mut text = String::from("t,theta,alpha,u\n");
        for k in 0..1000 {
            text.push_str(&format!("{},{},{},{}\n", k as f64 * 0.01, 0.1, (k as f64 * 0.01).sin(), 1.0));
        }
        std::fs::write(&path, text).unwrap();
        let seq = load_experiment::<f64>(&path, 0.01, 7, ExperimentKind::NoiseExcited).unwrap();
        assert_eq!(seq.len(), 1000);
        assert_eq!(seq.id, 7);
        assert!(seq.qdot_boundary[0] && seq.qdot_boundary[999] && !seq.qdot_boundary[2]);
    }
}
