//! The thresholding operator of the non-convex penalty for a few values of `nu`.
//!
//! Run with `cargo run --example thresholding`.

use harderlasso::penalty::{prox, rho, solve_threshold, PROX_TOL};

fn main() -> harderlasso::Result<()> {
    let lambda = 1.0;
    println!("lambda = {lambda}");
    println!("{:>5} {:>10} {:>10}", "nu", "threshold", "jump");
    for nu in [1.0, 0.7, 0.4, 0.1] {
        let spec = solve_threshold(lambda, nu)?;
        println!("{nu:>5} {:>10.5} {:>10.5}", spec.threshold(), spec.jump());
    }

    let spec = solve_threshold(lambda, 0.1)?;
    println!("\nprox for nu = 0.1 (outputs are 0 or at least the jump in size)");
    for y in [0.5, 1.0, spec.threshold() - 1e-6, spec.threshold() + 1e-6, 3.0, 10.0] {
        println!("  y = {y:>9.6}  ->  {:>9.6}", prox(y, &spec, PROX_TOL)?);
    }

    println!("\nrho_nu(theta) flattens as nu decreases:");
    for theta in [0.1, 1.0, 10.0, 100.0] {
        println!(
            "  theta = {theta:>6}: nu=1 {:.4}  nu=0.1 {:.4}",
            rho(theta, 1.0)?,
            rho(theta, 0.1)?
        );
    }
    Ok(())
}
