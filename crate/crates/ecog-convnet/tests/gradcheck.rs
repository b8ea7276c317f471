//! Finite-difference gradient verification in f64.

#[test]
fn analytic_gradients_match_central_differences() {
    let report = ecog_convnet::gradcheck::run(11, 1e-5).unwrap();
    println!(
        "gradcheck: {} param grads (max rel err {:.3e}), {} input grads (max rel err {:.3e})",
        report.n_params_checked,
        report.max_param_error,
        report.n_inputs_checked,
        report.max_input_error
    );
    assert!(
        report.max_error() < 1e-4,
        "max relative error {:.3e}",
        report.max_error()
    );
}

#[test]
fn gradcheck_holds_for_other_seeds() {
    for seed in [3u64, 99] {
        let report = ecog_convnet::gradcheck::run(seed, 1e-5).unwrap();
        assert!(
            report.max_error() < 1e-4,
            "seed {seed}: max relative error {:.3e}",
            report.max_error()
        );
    }
}
