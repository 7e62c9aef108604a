//! Statistical checks of the scenario generators: variance contracts,
//! response-factor structure, and the fixed signal fraction.

mod common;


use tebfar::gauss;
use tebfar::rng::derive;
use tebfar::simgen::{
    generate, motivating_model, scenario1, scenario2, scenario3, Scenario, ScenarioSpec, Truth,
};

fn spec(scenario: Scenario, seed: u64) -> ScenarioSpec {
    ScenarioSpec { scenario, n_train: 40, n_test: 10, seed }
}

#[test]
fn generated_covariances_have_unit_diagonal_and_are_pd() {
    for seed in 0..10 {
        for scenario in [Scenario::One, Scenario::Two] {
            let data = generate(&spec(scenario, seed));
            let Truth::Model(m) = &data.truth else { panic!("factor-model truth") };
            let cov = m.implied_covariance();
            for j in 0..=m.p {
                assert!(
                    (cov.as_matrix()[(j, j)] - 1.0).abs() < 1e-12,
                    "diagonal {} at {j}",
                    cov.as_matrix()[(j, j)]
                );
            }
            assert!(gauss::cholesky(&cov).is_ok());
            assert_eq!(m.k, 10);
        }
    }
}

#[test]
fn scenario1_response_regresses_only_on_the_weak_factor() {
    // Regressing the response on the true scores has a nonzero coefficient
    // only at the last factor; equivalently the response row of the loadings
    // matrix is supported there.
    for seed in 0..10 {
        let data = scenario1(&spec(Scenario::One, seed));
        let Truth::Model(m) = &data.truth else { unreachable!() };
        for l in 0..9 {
            assert_eq!(m.lambda[(m.p, l)], 0.0);
        }
        assert!(m.lambda[(m.p, 9)] > 0.0);
    }
}

#[test]
fn scenario2_response_row_is_usually_not_the_unit_vector() {
    let mut nontrivial = 0;
    for seed in 0..10 {
        let data = scenario2(&spec(Scenario::Two, seed));
        let Truth::Model(m) = &data.truth else { unreachable!() };
        let row = m.lambda.row(m.p);
        let unit_like = (0..9).all(|l| row[l] == 0.0);
        if !unit_like {
            nontrivial += 1;
        }
    }
    assert!(nontrivial >= 9, "only {nontrivial}/10 seeds had a generated response row");
}

#[test]
fn scenario2_has_higher_signal_than_scenario1() {
    // The induced regression explains more response variance on average when
    // the response row arises from the sparse mechanism. With unit response
    // variance the explained share is 1 − σ²(induced).
    let mut r2_1 = 0.0;
    let mut r2_2 = 0.0;
    let seeds = 20;
    for seed in 0..seeds {
        let a = scenario1(&spec(Scenario::One, derive(7000, seed)));
        let b = scenario2(&spec(Scenario::Two, derive(8000, seed)));
        let Truth::Model(ma) = &a.truth else { unreachable!() };
        let Truth::Model(mb) = &b.truth else { unreachable!() };
        r2_1 += 1.0 - ma.induced_regression().sigma2;
        r2_2 += 1.0 - mb.induced_regression().sigma2;
    }
    r2_1 /= seeds as f64;
    r2_2 /= seeds as f64;
    assert!(
        r2_2 > r2_1,
        "scenario 2 mean explained share {r2_2} not above scenario 1's {r2_1}"
    );
}

#[test]
fn scenario3_signal_fraction_is_exact_and_sparse() {
    for seed in 0..10 {
        let data = scenario3(&spec(Scenario::Three, seed));
        let Truth::Regression { beta, noise_variance } = &data.truth else {
            panic!("regression truth")
        };
        assert_eq!(*noise_variance, 0.9);
        assert_eq!(beta.iter().filter(|&&b| b != 0.0).count(), 12);
    }
}

#[test]
fn scenario3_monte_carlo_r2_near_one_tenth() {
    // Var(βᵀx) = 0.1 analytically; check the realized R² over a million rows.
    let big = ScenarioSpec { scenario: Scenario::Three, n_train: 2, n_test: 1_000_000, seed: 99 };
    let data = scenario3(&big);
    let Truth::Regression { beta, .. } = &data.truth else { unreachable!() };
    let signal = &data.test.predictors * beta;
    let n = signal.len() as f64;
    let mean_s = signal.sum() / n;
    let var_signal = signal.iter().map(|v| (v - mean_s) * (v - mean_s)).sum::<f64>() / n;
    let y = &data.test.response;
    let mean_y = y.sum() / n;
    let var_y = y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum::<f64>() / n;
    let r2 = var_signal / var_y;
    assert!((0.095..=0.105).contains(&r2), "Monte Carlo R² = {r2}");
}

#[test]
fn motivating_data_covariance_matches_model() {
    let model = motivating_model();
    let data = generate(&ScenarioSpec {
        scenario: Scenario::Motivating,
        n_train: 200_000,
        n_test: 2,
        seed: 5,
    });
    let joined = data.train.joined_matrix();
    let n = joined.nrows() as f64;
    let sample = joined.tr_mul(&joined) / n;
    let truth = model.implied_covariance();
    let gap = (&sample - truth.as_matrix()).amax();
    assert!(gap < 0.6, "sample covariance far from model: {gap}");
    // response marginal variance target
    assert!((sample[(9, 9)] - 1.2).abs() < 0.05);
}
