//! Population predictions as the radius grows. Under a homogeneous effect
//! the prediction stays at `tau*` until the threshold radius, then shrinks.
//!
//! ```text
//! cargo run --example delayed_shrinkage
//! ```

use dr_predict::solver::{homogeneous_threshold, sweep_delta};
use dr_predict::{BoundMethod, VarianceBounds};

fn main() -> dr_predict::Result<()> {
    let tau_star = 2.0;
    let q = 2.0;
    println!("threshold radius: {:.6}", homogeneous_threshold(tau_star, q)?);
    let deltas: Vec<f64> = (0..=30).map(|k| k as f64 * 0.1).collect();
    let homogeneous = VarianceBounds { v_o: 0.0, v_p: 0.0, method: BoundMethod::Sharp };
    let heterogeneous = VarianceBounds { v_o: 1.0, v_p: 9.0, method: BoundMethod::Sharp };
    let flat = sweep_delta(tau_star, &homogeneous, q, &deltas)?;
    let spread = sweep_delta(tau_star, &heterogeneous, q, &deltas)?;
    println!("delta,homogeneous,tau_p,tau_o");
    for (h, s) in flat.iter().zip(&spread) {
        println!("{:.1},{:.6},{:.6},{:.6}", h.delta, h.tau_o, s.tau_p, s.tau_o);
    }
    Ok(())
}
