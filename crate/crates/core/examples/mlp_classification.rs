//! A sparse one-hidden-layer classifier whose classes depend on a nonlinear
//! function of two out of thirty inputs.
//!
//! Run with `cargo run --release --example mlp_classification`.

use harderlasso::losses::TaskSpec;
use harderlasso::network::{Activation, Architecture};
use harderlasso::trainer::{correct_predictions, fit, predict, TrainConfig};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn simulate(n: usize, p: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>) {
    let x: Array2<f64> = Array2::from_shape_fn((n, p), |_| StandardNormal.sample(rng));
    let mut y = Array2::zeros((n, 3));
    for i in 0..n {
        let z = x[[i, 0]] + 3.0 * x[[i, 1]].abs();
        let class = if z < 0.3 { 0 } else if z < 1.3 { 1 } else { 2 };
        y[[i, class]] = 1.0;
    }
    (x, y)
}

fn main() -> harderlasso::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, y) = simulate(600, 30, &mut rng);
    let (x_test, y_test) = simulate(2000, 30, &mut rng);

    let arch = Architecture::new(30, vec![20], 3, Activation::ReLU)?;
    let task = TaskSpec::classification(3)?;
    let result = fit(x.view(), y.view(), &arch, &task, &TrainConfig::default())?;

    println!("lambda_qut          = {:.3}", result.lambda_qut);
    println!("selected features   = {:?} (relevant: [0, 1])", result.selected_features);
    println!("hidden neurons kept = {:?}", result.arch.hidden_widths);
    let logits = predict(&result, x_test.view())?;
    let accuracy = correct_predictions(logits.view(), y_test.view()) as f64 / x_test.nrows() as f64;
    println!("test accuracy       = {accuracy:.3}");
    Ok(())
}
