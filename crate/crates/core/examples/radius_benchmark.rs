//! Scale for the radius from within-sample heterogeneity: split the sample
//! into two cells and measure the per-arm Wasserstein-2 distance.
//!
//! ```text
//! cargo run --release --example radius_benchmark
//! ```

use dr_predict::radius::{split_benchmark_with_null, SplitRule};
use dr_predict::simulation::{draw_sample, preset};

fn main() -> dr_predict::Result<()> {
    let case = preset(1, 2000)?;
    let sample = draw_sample(&case.dgp, 2)?;
    for rule in [SplitRule::Halves, SplitRule::MedianOutcome] {
        let b = split_benchmark_with_null(&sample, &rule, 200, 7)?;
        let null = b.permutation_null.map_or(f64::NAN, |p| p.quantile_95);
        println!(
            "{}: W2 treated {:.4}, control {:.4}, joint >= {:.4}, permutation 95% {:.4}",
            b.split_description, b.w2_y1, b.w2_y0, b.joint_lower_bound, null
        );
    }
    Ok(())
}
