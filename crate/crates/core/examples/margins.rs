//! Margin report: runs the cheap probes with the acceptance-suite seeds and
//! prints estimate vs threshold for each checked quantity, to show how much
//! headroom the release gates have.
//!
//! ```sh
//! cargo run -p levyflow --release --example margins
//! ```

use levyflow::model::{builtin_kinetic_model, free_model, PotentialKind};
use levyflow::subordinator::{JumpFamily, SubordinatorSpec};
use levyflow::verify::probes;
use nalgebra::DVector;

fn show(tag: &str, rep: &levyflow::verify::ProbeReport) {
    for it in &rep.items {
        println!(
            "{tag:<28} {:<44} est={:<13.6e} thr={:<13.6e} {}",
            it.label,
            it.estimate,
            it.threshold,
            it.verdict.as_str()
        );
    }
}

fn main() {
    let kin_clock = SubordinatorSpec::new(
        vec![0.0, 0.0],
        vec![JumpFamily::Zero, JumpFamily::tempered_unit(0.5, 1.0)],
    )
    .unwrap();

    // criterion 3 margins
    let model = builtin_kinetic_model(PotentialKind::Quartic, 1);
    let x0 = DVector::from_row_slice(&[0.7, 0.2]);
    let rep =
        probes::flow_consistency_probe(&model, &kin_clock, &x0, 0.5, 1e-3, 2, 10, 301).unwrap();
    show("flow_consistency", &rep);

    // criterion 4 margins
    let rep = probes::covariance_oracle_probe(401).unwrap();
    show("covariance_oracles", &rep);

    // criterion 5
    let rep = probes::time_change_probe(100, 501).unwrap();
    show("time_change", &rep);

    // criterion 6 margins per family
    for (name, sub) in [
        ("drift", SubordinatorSpec::pure_drift(vec![1.0]).unwrap()),
        (
            "stable",
            SubordinatorSpec::iid(1, JumpFamily::stable_unit(0.5)).unwrap(),
        ),
        (
            "tempered",
            SubordinatorSpec::iid(1, JumpFamily::tempered_unit(0.5, 1.0)).unwrap(),
        ),
    ] {
        let rep = probes::generator_eigen_probe(&sub, &[0.5, 1.0, 1.5, 2.0, 3.0], 0.3).unwrap();
        show(&format!("generator_eigen[{name}]"), &rep);
    }

    // criterion 8
    let sub = SubordinatorSpec::iid(1, JumpFamily::stable_unit(0.5)).unwrap();
    let rep = probes::small_deviation_probe(
        &sub,
        &|_s| DVector::from_row_slice(&[1.0]),
        1.0,
        0.01,
        &[0.01, 0.05, 0.1],
        0.9,
        10_000,
        801,
    )
    .unwrap();
    show("small_deviation", &rep);

    // criterion 10 slopes
    let rep = probes::covariance_scaling_probe(
        &free_model(1),
        &sub,
        &DVector::zeros(1),
        &probes::CovarianceScalingOpts {
            seed: 1001,
            ..Default::default()
        },
    )
    .unwrap();
    show("cov_scaling[stable]", &rep);
    let rep = probes::covariance_scaling_probe(
        &builtin_kinetic_model(PotentialKind::Quadratic, 1),
        &SubordinatorSpec::pure_drift(vec![1.0, 1.0]).unwrap(),
        &DVector::from_row_slice(&[1.0, 0.0]),
        &probes::CovarianceScalingOpts {
            seed: 1002,
            ..Default::default()
        },
    )
    .unwrap();
    show("cov_scaling[linear]", &rep);

    // criterion 9 ratios
    let model = builtin_kinetic_model(PotentialKind::Quadratic, 1);
    let base = DVector::from_row_slice(&[1.2, 0.6]);
    let x0s: Vec<DVector<f64>> = [0.6, 0.8, 1.0, 1.2, 1.4]
        .iter()
        .map(|s| &base * *s)
        .collect();
    let rep =
        probes::exp_moment_probe(&model, &kin_clock, &x0s, 0.5, 1e-3, 10_000, 1.0, 901).unwrap();
    show("exp_moment", &rep);
}
