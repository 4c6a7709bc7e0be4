use tustin_core::data::ExperimentSequence;
use tustin_core::error::Error;
use tustin_core::euler_lagrange::{ELParameters, SpringMode};
use tustin_core::identify::{
    identify_parameters, relative_errors, simulation_loss, IdentificationLoss, IdentifyConfig, IdentifyStage,
    ParamName, ParameterBox,
};
use tustin_core::synth::{generate_layout, LayoutConfig};

fn runs() -> Vec<ExperimentSequence<f64>> {
    let layout = LayoutConfig {
        quantize: false,
        theta_perturbation: 0.1,
        train_free_fall: vec![3.0],
        train_noise: vec![3.0],
        validation_free_fall: vec![],
        validation_noise: vec![],
        ..LayoutConfig::default()
    };
    generate_layout(&layout).unwrap().into_iter().map(|r| r.sequence).collect()
}

fn perturbed() -> ELParameters<f64> {
    let truth = ELParameters::default();
    ELParameters {
        j_r: truth.j_r * 1.2,
        b1: truth.b1 * 0.8,
        kappa_t: truth.kappa_t * 1.1,
        ..truth
    }
}

#[test]
fn zero_budget_returns_the_start() {
    let runs = runs();
    let theta0 = perturbed();
    let bounds = ParameterBox::around(&theta0, 10.0);
    let (theta, report) =
        identify_parameters(&runs, &bounds, &theta0, SpringMode::WithSpring, &IdentifyConfig::zero_budget()).unwrap();
    assert_eq!(theta, theta0);
    assert_eq!(report.initial_loss, report.final_loss);
    assert_eq!(report.evaluations, 1);
    let direct = simulation_loss(&runs, &theta0, SpringMode::WithSpring, IdentificationLoss::StateError);
    assert_eq!(direct, report.initial_loss);
}

#[test]
fn start_outside_the_box_is_a_constraint_error() {
    let theta0 = perturbed();
    let bounds = ParameterBox::around(&ELParameters::default(), 1.05);
    let err = identify_parameters(&runs(), &bounds, &theta0, SpringMode::WithSpring, &IdentifyConfig::zero_budget());
    assert!(matches!(err, Err(Error::Constraint(_))));
}

#[test]
fn empty_data_is_rejected() {
    let theta0 = ELParameters::default();
    let bounds = ParameterBox::around(&theta0, 10.0);
    assert!(identify_parameters(&[], &bounds, &theta0, SpringMode::WithSpring, &IdentifyConfig::default()).is_err());
}

#[test]
fn a_short_search_never_ends_worse_and_stays_in_the_box() {
    let runs = runs();
    let theta0 = perturbed();
    let bounds = ParameterBox::around(&theta0, 10.0);
    let cfg = IdentifyConfig {
        stages: vec![IdentifyStage {
            horizon: 60,
            nelder_mead_evals: 80,
            lm_iterations: 3,
        }],
        ..IdentifyConfig::default()
    };
    let (theta, report) = identify_parameters(&runs, &bounds, &theta0, SpringMode::WithSpring, &cfg).unwrap();
    assert!(report.final_loss < report.initial_loss, "{} -> {}", report.initial_loss, report.final_loss);
    assert!(bounds.contains(&theta, &cfg.free));
    let before = relative_errors(&theta0, &ELParameters::default(), &[ParamName::JR, ParamName::KappaT]);
    let after = relative_errors(&theta, &ELParameters::default(), &[ParamName::JR, ParamName::KappaT]);
    assert!(after.iter().map(|e| e.3).sum::<f64>() < before.iter().map(|e| e.3).sum::<f64>());
}

#[test]
fn dropping_the_spring_costs_accuracy_at_the_truth() {
    let runs = runs();
    let truth = ELParameters::default();
    let with = simulation_loss(&runs, &truth, SpringMode::WithSpring, IdentificationLoss::StateError);
    let without = simulation_loss(&runs, &truth, SpringMode::NoSpring, IdentificationLoss::StateError);
    assert!(with < without, "{with} vs {without}");
    let out = simulation_loss(&runs, &truth, SpringMode::WithSpring, IdentificationLoss::OutputError);
    // small but nonzero: each run starts from a stencil velocity estimate
    assert!(out < 1e-5, "{out}");
}
