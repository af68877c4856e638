//! Sparse linear regression with more features than observations.
//!
//! Run with `cargo run --release --example linear_fit`.

use harderlasso::losses::TaskSpec;
use harderlasso::network::Architecture;
use harderlasso::simlab::{generate, ScenarioKind, ScenarioSpec};
use harderlasso::trainer::{fit, predict, TrainConfig};

fn main() -> harderlasso::Result<()> {
    let scenario = ScenarioSpec {
        kind: ScenarioKind::Linear,
        n: 70,
        p: 250,
        s: 5,
        n_test: 1000,
        n_runs: 1,
        seed: 2024,
    };
    let data = generate(&scenario, 0)?;
    let arch = Architecture::linear(scenario.p, 1)?;
    let result = fit(
        data.x_train.view(),
        data.y_train.view(),
        &arch,
        &TaskSpec::regression(),
        &TrainConfig::default(),
    )?;

    println!("lambda_qut        = {:.4}", result.lambda_qut);
    println!("true support      = {:?}", data.true_support);
    println!("selected features = {:?}", result.selected_features);
    println!("status            = {:?}", result.status);
    for log in &result.phase_log {
        println!(
            "  {:?} lambda={:.3} nu={:.1} iterations={} converged={}",
            log.kind, log.lambda, log.nu, log.iterations, log.converged
        );
    }

    let fitted = predict(&result, data.x_test.view())?;
    let mse = fitted
        .column(0)
        .iter()
        .zip(&data.mu_test)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / data.mu_test.len() as f64;
    println!("test error against the true mean function: {mse:.4}");
    Ok(())
}
