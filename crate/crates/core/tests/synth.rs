use std::f64::consts::PI;

use proptest::prelude::*;

use tustin_core::data::{DatasetManifest, ExperimentKind, Split};
use tustin_core::euler_lagrange::{params_from_toml, simulate, SpringMode};
use tustin_core::synth::{
    generate, generate_layout, initial_conditions, quantize_encoder, write_layout, GenerationSpec, LayoutConfig,
    ENCODER_RESOLUTION, MANIFEST_FILE, PLANTED_FILE,
};

fn spec(kind: ExperimentKind, seed: u64) -> GenerationSpec {
    GenerationSpec {
        theta: Default::default(),
        kind,
        duration: 3.0,
        tau_s: 0.01,
        noise_amplitude: 5.0,
        alpha_perturbation: 0.1,
        theta_perturbation: 0.0,
        seed,
        quantize: true,
        id: 0,
    }
}

proptest! {
    #[test]
    fn quantization_error_is_at_most_half_a_count(a in -20.0f64..20.0) {
        let q = quantize_encoder(a);
        prop_assert!((q - a).abs() <= ENCODER_RESOLUTION / 2.0 + 1e-15);
        let counts = q / ENCODER_RESOLUTION;
        prop_assert!((counts - counts.round()).abs() < 1e-9);
    }
}

#[test]
fn same_seed_same_run_different_seed_different_run() {
    for kind in [ExperimentKind::FreeFall, ExperimentKind::NoiseExcited] {
        let a = generate(&spec(kind, 9)).unwrap();
        assert_eq!(a, generate(&spec(kind, 9)).unwrap());
        assert_ne!(a.q, generate(&spec(kind, 10)).unwrap().q);
    }
}

#[test]
fn noiseless_run_is_the_simulation() {
    let s = GenerationSpec {
        quantize: false,
        ..spec(ExperimentKind::NoiseExcited, 4)
    };
    let seq = generate(&s).unwrap();
    let (x0, u) = initial_conditions(&s).unwrap();
    let traj = simulate(&s.theta, &x0, &u, s.tau_s, SpringMode::WithSpring).unwrap();
    assert_eq!(seq.q, traj.outputs());
    assert_eq!(seq.len(), 301);
}

#[test]
fn noise_inputs_stay_within_the_amplitude() {
    let s = GenerationSpec {
        noise_amplitude: 2.5,
        ..spec(ExperimentKind::NoiseExcited, 5)
    };
    let seq = generate(&s).unwrap();
    assert!(seq.u.iter().all(|u| u[0].abs() <= 2.5));
    assert!(seq.u.iter().any(|u| u[0].abs() > 2.0));
    let ff = generate(&spec(ExperimentKind::FreeFall, 5)).unwrap();
    assert!(ff.u.iter().all(|u| u[0] == 0.0));
}

#[test]
fn initial_pendulum_offsets_respect_the_bound() {
    for seed in 0..50 {
        let (x, _) = initial_conditions(&spec(ExperimentKind::FreeFall, seed)).unwrap();
        assert!(x.q[1].abs() <= 0.1 && x.q[1].abs() >= 0.025, "{}", x.q[1]);
        let (x, _) = initial_conditions(&spec(ExperimentKind::NoiseExcited, seed)).unwrap();
        assert!((x.q[1] - PI).abs() <= 0.1);
    }
}

#[test]
fn ten_second_free_fall_reaches_equilibrium() {
    let s = GenerationSpec {
        duration: 10.0,
        ..spec(ExperimentKind::FreeFall, 1)
    };
    let seq = generate(&s).unwrap();
    assert!(seq.reached_equilibrium());
    assert!(seq.kbar > 100 && seq.kbar < seq.len());
}

#[test]
fn bad_specs_are_config_errors() {
    let odd = GenerationSpec {
        duration: 1.005,
        ..spec(ExperimentKind::FreeFall, 0)
    };
    assert!(generate(&odd).is_err());
    let loud = GenerationSpec {
        noise_amplitude: 20.0,
        ..spec(ExperimentKind::NoiseExcited, 0)
    };
    assert!(generate(&loud).is_err());
}

#[test]
fn default_layout_has_twenty_three_runs() {
    let layout = LayoutConfig {
        train_free_fall: vec![2.0; 10],
        train_noise: vec![2.0; 5],
        validation_free_fall: vec![2.0; 4],
        validation_noise: vec![2.0; 4],
        ..LayoutConfig::default()
    };
    let defaults = LayoutConfig::default();
    assert_eq!(defaults.train_free_fall.len(), layout.train_free_fall.len());
    assert_eq!(defaults.train_noise.len(), layout.train_noise.len());
    assert_eq!(defaults.validation_free_fall.len(), layout.validation_free_fall.len());
    assert_eq!(defaults.validation_noise.len(), layout.validation_noise.len());

    let runs = generate_layout(&layout).unwrap();
    assert_eq!(runs.len(), 23);
    assert_eq!(runs.iter().filter(|r| r.split == Split::Train).count(), 15);
    for (i, r) in runs.iter().enumerate() {
        assert_eq!(r.sequence.id, i);
    }
}

#[test]
fn written_layout_reads_back() {
    let layout = LayoutConfig {
        train_free_fall: vec![2.0, 3.0],
        train_noise: vec![2.0],
        validation_free_fall: vec![2.5],
        validation_noise: vec![1.5],
        theta_perturbation: 0.05,
        ..LayoutConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_layout(&layout, dir.path()).unwrap();
    let read = DatasetManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(read, manifest);
    let data = read.load::<f64>(dir.path()).unwrap();
    let runs = generate_layout(&layout).unwrap();
    assert_eq!(data.train.len(), 3);
    assert_eq!(data.validation[1].q, runs[4].sequence.q);
    let planted = std::fs::read_to_string(dir.path().join(PLANTED_FILE)).unwrap();
    assert_eq!(params_from_toml(&planted).unwrap(), layout.theta);
}
