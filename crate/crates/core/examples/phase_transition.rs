//! A small phase-transition sweep: exact support recovery as the number of
//! relevant features grows.
//!
//! Run with `cargo run --release --example phase_transition`.

use harderlasso::network::Activation;
use harderlasso::simlab::{rows_to_csv, sweep, ScenarioKind, SweepSpec};
use harderlasso::trainer::TrainConfig;

fn main() -> harderlasso::Result<()> {
    let spec = SweepSpec {
        kind: ScenarioKind::Linear,
        n: 70,
        p: 250,
        n_test: 1000,
        n_runs: 10,
        s_grid: vec![0, 2, 5, 10, 15, 20],
        hidden_widths: vec![],
        activation: Activation::ReLU,
        train: TrainConfig::default(),
        seed: 1,
    };
    let result = sweep(&spec, None)?;
    print!("{}", rows_to_csv(&result.rows));
    Ok(())
}
