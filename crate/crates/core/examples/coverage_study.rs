//! Monte Carlo coverage of the plain and two-step intervals on the built-in
//! Gaussian designs.
//!
//! ```text
//! cargo run --release --example coverage_study -- [replications] [n] [support|grid]
//! ```

use std::time::Instant;

use dr_predict::simulation::{preset, run_case, write_table_csv, StudySettings};
use dr_predict::SharpIntegration;

fn main() -> dr_predict::Result<()> {
    let mut args = std::env::args().skip(1);
    let replications = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let n = args.next().and_then(|a| a.parse().ok()).unwrap_or(1000);
    let integration = match args.next().as_deref() {
        Some("support") => SharpIntegration::SupportGrid,
        _ => SharpIntegration::default(),
    };
    let settings = StudySettings { replications, integration, ..StudySettings::default() };

    let mut reports = Vec::new();
    for id in 1..=6 {
        let start = Instant::now();
        let report = run_case(&preset(id, n)?, &settings)?;
        println!(
            "case {id}: tau_dr {:.3}  IM {:.3} (all draws {:.3})  IM_Bonf {:.3}  ratio {:.3}  retained {}/{}  failed {}  ({:.1?})",
            report.truth.tau_dr,
            report.coverage_im,
            report.coverage_im_all,
            report.coverage_imbonf,
            report.mean_length_ratio,
            report.retained,
            report.completed,
            report.failed,
            start.elapsed(),
        );
        reports.push(report);
    }
    println!();
    write_table_csv(&reports, std::io::stdout())
}
