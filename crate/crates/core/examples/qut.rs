//! Estimates the quantile universal threshold and compares it with the
//! zero-thresholding value of a response that has signal and one that has none.
//!
//! Run with `cargo run --release --example qut`.

use harderlasso::losses::TaskSpec;
use harderlasso::network::{Activation, Architecture};
use harderlasso::qut::{compute_qut, lambda0};
use harderlasso::simlab::{generate, ScenarioKind, ScenarioSpec};

fn main() -> harderlasso::Result<()> {
    let task = TaskSpec::regression();
    for s in [0, 3] {
        let scenario = ScenarioSpec {
            kind: ScenarioKind::Linear,
            n: 100,
            p: 200,
            s,
            n_test: 10,
            n_runs: 1,
            seed: 7,
        };
        let data = generate(&scenario, 0)?;
        for hidden in [vec![], vec![20], vec![20, 10]] {
            let arch = Architecture::new(200, hidden.clone(), 1, Activation::ReLU)?;
            let est = compute_qut(data.x_train.view(), data.y_train.view(), &arch, &task, 0.05, 1000, 11)?;
            let observed = lambda0(data.x_train.view(), data.y_train.view(), &arch, &task)?;
            println!(
                "s = {s}, hidden = {hidden:?}: lambda_qut = {:.3}, observed lambda0 = {:.3}{}",
                est.lambda_qut,
                observed,
                if observed > est.lambda_qut { "  (signal detected)" } else { "" }
            );
        }
    }
    Ok(())
}
