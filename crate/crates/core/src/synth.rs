//! Synthetic experiments from a planted parameter set.
//!
//! Free-fall runs start near the upright equilibrium with zero input;
//! noise-excited runs start near the hanging equilibrium and are driven by
//! i.i.d. uniform voltages held over each sample. Encoder quantization and
//! voltage saturation mimic the apparatus.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_experiment_csv, DatasetManifest, ExperimentKind, ExperimentSequence, ManifestEntry, Split, VOLTAGE_LIMIT};
use crate::error::{Error, Result};
use crate::euler_lagrange::{params_to_toml, saturate, simulate, ELParameters, SpringMode};
use crate::model::StateVector;

/// One encoder count.
pub const ENCODER_RESOLUTION: f64 = PI / 1024.0;

/// Rounds to the nearest encoder count, halves away from zero.
pub fn quantize_encoder(angle: f64) -> f64 {
    // + 0.0 folds -0 into 0 so files never show "-0"
    (angle / ENCODER_RESOLUTION).round() * ENCODER_RESOLUTION + 0.0
}

pub fn saturate_voltage(u: f64) -> f64 {
    saturate(u)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationSpec {
    pub theta: ELParameters<f64>,
    pub kind: ExperimentKind,
    pub duration: f64,
    pub tau_s: f64,
    pub noise_amplitude: f64,
    /// Bound on the initial pendulum offset from its equilibrium [rad].
    pub alpha_perturbation: f64,
    /// Bound on the initial arm angle [rad].
    pub theta_perturbation: f64,
    pub seed: u64,
    pub quantize: bool,
    pub id: usize,
}

fn steps_for(duration: f64, tau_s: f64) -> Result<usize> {
    if !(tau_s > 0.0) || !(duration > 0.0) {
        return Err(Error::Config("duration and tau_s must be positive".into()));
    }
    let n = duration / tau_s;
    let steps = n.round();
    if (n - steps).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "duration {duration} s is not a whole number of {tau_s} s samples"
        )));
    }
    Ok(steps as usize)
}

/// Initial state and input sequence of a run, before simulation.
pub fn initial_conditions(spec: &GenerationSpec) -> Result<(StateVector<f64>, Vec<f64>)> {
    let steps = steps_for(spec.duration, spec.tau_s)?;
    if !(spec.noise_amplitude >= 0.0 && spec.noise_amplitude <= VOLTAGE_LIMIT) {
        return Err(Error::Config(format!(
            "noise amplitude must lie in [0, {VOLTAGE_LIMIT}] V; got {}",
            spec.noise_amplitude
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let theta0 = if spec.theta_perturbation > 0.0 {
        rng.gen_range(-spec.theta_perturbation..=spec.theta_perturbation)
    } else {
        0.0
    };
    let offset = if spec.alpha_perturbation > 0.0 {
        rng.gen_range(-spec.alpha_perturbation..=spec.alpha_perturbation)
    } else {
        0.0
    };
    let (alpha0, u) = match spec.kind {
        ExperimentKind::FreeFall => {
            // keep clear of the exact upright state, which would never fall
            let floor = 0.25 * spec.alpha_perturbation;
            let a = if offset.abs() < floor { floor.copysign(offset) } else { offset };
            (a, vec![0.0; steps + 1])
        }
        ExperimentKind::NoiseExcited => {
            let amp = spec.noise_amplitude;
            let u = (0..=steps)
                .map(|_| if amp > 0.0 { saturate_voltage(rng.gen_range(-amp..=amp)) } else { 0.0 })
                .collect();
            (PI + offset, u)
        }
    };
    Ok((StateVector::new(vec![theta0, alpha0], vec![0.0, 0.0]), u))
}

pub fn generate(spec: &GenerationSpec) -> Result<ExperimentSequence<f64>> {
    let (x0, u) = initial_conditions(spec)?;
    let traj = simulate(&spec.theta, &x0, &u, spec.tau_s, SpringMode::WithSpring)
        .map_err(|e| Error::Dataset(format!("experiment {} failed to simulate: {e}", spec.id)))?;
    let q: Vec<Vec<f64>> = traj
        .states
        .iter()
        .map(|x| {
            if spec.quantize {
                x.q.iter().map(|&a| quantize_encoder(a)).collect()
            } else {
                x.q.clone()
            }
        })
        .collect();
    let t = (0..q.len()).map(|k| k as f64 * spec.tau_s).collect();
    ExperimentSequence::from_samples(spec.id, spec.kind, spec.tau_s, t, q, u.into_iter().map(|v| vec![v]).collect())
}

/// A full train/validation layout: durations per split and kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutConfig {
    pub theta: ELParameters<f64>,
    pub tau_s: f64,
    pub seed: u64,
    pub quantize: bool,
    pub noise_amplitude: f64,
    pub alpha_perturbation: f64,
    pub theta_perturbation: f64,
    pub train_free_fall: Vec<f64>,
    pub train_noise: Vec<f64>,
    pub validation_free_fall: Vec<f64>,
    pub validation_noise: Vec<f64>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            theta: ELParameters::default(),
            tau_s: 0.01,
            seed: 0,
            quantize: true,
            noise_amplitude: 5.0,
            alpha_perturbation: 0.1,
            theta_perturbation: 0.0,
            train_free_fall: vec![14.99, 10.25, 12.4, 11.1, 13.72, 10.8, 14.3, 12.05, 11.63, 13.18],
            train_noise: vec![14.6, 12.35, 13.9, 11.24, 10.57],
            validation_free_fall: vec![12.7, 10.5, 14.12, 11.4],
            validation_noise: vec![7.16, 8.9, 9.55, 8.15],
        }
    }
}

/// A generated experiment with its manifest placement.
#[derive(Clone, Debug)]
pub struct GeneratedExperiment {
    pub file: PathBuf,
    pub split: Split,
    pub sequence: ExperimentSequence<f64>,
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const PLANTED_FILE: &str = "planted_params.toml";

/// Generates every run of the layout; ids follow manifest order.
pub fn generate_layout(layout: &LayoutConfig) -> Result<Vec<GeneratedExperiment>> {
    let groups = [
        (Split::Train, ExperimentKind::FreeFall, &layout.train_free_fall, "train_free_fall"),
        (Split::Train, ExperimentKind::NoiseExcited, &layout.train_noise, "train_noise"),
        (Split::Validation, ExperimentKind::FreeFall, &layout.validation_free_fall, "validation_free_fall"),
        (Split::Validation, ExperimentKind::NoiseExcited, &layout.validation_noise, "validation_noise"),
    ];
    let mut out = Vec::new();
    for (split, kind, durations, stem) in groups {
        for (j, &duration) in durations.iter().enumerate() {
            let id = out.len();
            let spec = GenerationSpec {
                theta: layout.theta,
                kind,
                duration,
                tau_s: layout.tau_s,
                noise_amplitude: layout.noise_amplitude,
                alpha_perturbation: layout.alpha_perturbation,
                theta_perturbation: layout.theta_perturbation,
                seed: layout.seed.wrapping_mul(1000).wrapping_add(id as u64),
                quantize: layout.quantize,
                id,
            };
            out.push(GeneratedExperiment {
                file: PathBuf::from(format!("{stem}_{:02}.csv", j + 1)),
                split,
                sequence: generate(&spec)?,
            });
        }
    }
    Ok(out)
}

/// Writes CSVs, the manifest and the planted-parameter sidecar into `dir`.
pub fn write_layout(layout: &LayoutConfig, dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let runs = generate_layout(layout)?;
    for run in &runs {
        write_experiment_csv(&dir.join(&run.file), &run.sequence)?;
    }
    let manifest = DatasetManifest {
        tau_s: layout.tau_s,
        experiments: runs
            .iter()
            .map(|r| ManifestEntry {
                file: r.file.clone(),
                kind: r.sequence.kind,
                split: r.split,
            })
            .collect(),
    };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    let planted = dir.join(PLANTED_FILE);
    std::fs::write(&planted, params_to_toml(&layout.theta)).map_err(|e| Error::io(&planted, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantizer_examples() {
        assert_eq!(quantize_encoder(0.0), 0.0);
        assert_eq!(quantize_encoder(PI / 2048.0), PI / 1024.0);
        assert_eq!(quantize_encoder(-PI / 2048.0), -PI / 1024.0);
        assert!((quantize_encoder(0.0154) - 5.0 * PI / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn saturation_examples() {
        assert_eq!(saturate_voltage(3.0), 3.0);
        assert_eq!(saturate_voltage(20.0), 15.0);
        assert_eq!(saturate_voltage(-20.0), -15.0);
    }

    #[test]
    fn durations_must_be_whole_samples() {
        assert_eq!(steps_for(7.16, 0.01).unwrap(), 716);
        assert!(steps_for(7.165, 0.01).is_err());
    }
}
