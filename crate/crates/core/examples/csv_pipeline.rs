//! Round trip through a CSV file: write a simulated experiment, load it
//! back and estimate.
//!
//! ```text
//! cargo run --example csv_pipeline -- [path]
//! ```

use std::io::Write;

use dr_predict::simulation::{draw_sample, preset};
use dr_predict::solver::{estimate_robust, sweep_delta};
use dr_predict::{load_sample, BoundMethod};

fn main() -> dr_predict::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir().join("dr_predict_example.csv").to_string_lossy().into_owned()
    });
    let case = preset(2, 1500)?;
    let sample = draw_sample(&case.dgp, 11)?;
    let mut file = std::fs::File::create(&path)?;
    writeln!(file, "outcome,arm")?;
    for (y, t) in sample.outcomes().iter().zip(sample.treatments()) {
        writeln!(file, "{y},{}", u8::from(*t))?;
    }
    drop(file);

    let loaded = load_sample(&path, "outcome", "arm")?;
    let est = estimate_robust(&loaded, &case.config, BoundMethod::Sharp)?;
    println!("{path}: tau* {:.4}, tau_p {:.4}, tau_o {:.4}", est.tau_star, est.tau_p, est.tau_o);
    let deltas = [0.0, 0.5, 1.0, 2.0, 4.0];
    for row in sweep_delta(est.tau_star, &est.bounds, case.config.q, &deltas)? {
        println!("delta {:.1}: [{:.4}, {:.4}]", row.delta, row.tau_p, row.tau_o);
    }
    Ok(())
}
