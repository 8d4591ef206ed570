//! Plain and two-step confidence intervals for the bound predictions.
//!
//! ```text
//! cargo run --release --example two_step_inference
//! ```

use dr_predict::inference::{
    plain_im_interval, two_step_from_inputs, InferenceInputs, DEFAULT_ALPHA, DEFAULT_BETA,
    DEFAULT_GRID_POINTS,
};
use dr_predict::simulation::{draw_sample, population_truth, preset};
use dr_predict::{BoundMethod, SharpIntegration};

fn main() -> dr_predict::Result<()> {
    let case = preset(1, 1000)?;
    let truth = population_truth(&case.dgp, &case.config)?;
    let sample = draw_sample(&case.dgp, 5)?;
    let inputs =
        InferenceInputs::from_sample(&sample, &case.config, BoundMethod::Sharp, SharpIntegration::default())?;
    let plain = plain_im_interval(&inputs, DEFAULT_ALPHA)?;
    let two = two_step_from_inputs(&inputs, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_GRID_POINTS)?;
    println!("population prediction: {:.4}", truth.tau_dr);
    println!("IM:        [{:.4}, {:.4}]", plain.lower, plain.upper);
    println!(
        "first step: [{:.4}, {:.4}] rejects zero: {}",
        two.first_step.lower, two.first_step.upper, two.first_step.rejected
    );
    match two.interval {
        Some(ci) => println!("IM-Bonf:   [{:.4}, {:.4}]", ci.lower, ci.upper),
        None => println!("IM-Bonf:   not computed"),
    }
    Ok(())
}
