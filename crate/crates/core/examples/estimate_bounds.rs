//! Variance bounds and bound predictions on a simulated experiment.
//!
//! ```text
//! cargo run --example estimate_bounds
//! ```

use dr_predict::bounds::{neyman_bounds_empirical, sharp_bounds_empirical};
use dr_predict::covariance::estimate_sigma;
use dr_predict::simulation::{draw_sample, preset};
use dr_predict::solver::estimate_robust;
use dr_predict::{loadings, BoundMethod, SharpIntegration};

fn main() -> dr_predict::Result<()> {
    let case = preset(1, 2000)?;
    let sample = draw_sample(&case.dgp, 1)?;
    let sharp = sharp_bounds_empirical(&sample)?;
    let neyman = neyman_bounds_empirical(&sample)?;
    println!("n = {} ({} treated)", sample.n(), sample.n1());
    println!("sharp  V in [{:.4}, {:.4}]", sharp.v_o, sharp.v_p);
    println!("neyman V in [{:.4}, {:.4}]", neyman.v_o, neyman.v_p);

    let est = estimate_robust(&sample, &case.config, BoundMethod::Sharp)?;
    let sigma = estimate_sigma(&sample, BoundMethod::Sharp, SharpIntegration::default())?;
    let l = loadings(est.tau_star, &est.bounds, est.tau_p, est.tau_o, &case.config)?;
    let root_n = (sample.n() as f64).sqrt();
    println!("tau*  = {:.4} (se {:.4})", est.tau_star, sigma.tau_variance().sqrt() / root_n);
    println!("tau_p = {:.4} (se {:.4})", est.tau_p, l.sd_p(&sigma) / root_n);
    println!("tau_o = {:.4} (se {:.4})", est.tau_o, l.sd_o(&sigma) / root_n);
    Ok(())
}
