//! Runs one verification suite and writes its report as JSON. A report
//! with violations still gets written before the command fails, so the
//! evidence survives the nonzero exit.

use valdiv::theory::suites::run_suite;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{write_file, RunMetadata};

pub fn run(check: &str, instances: Option<usize>, config: &RunConfig) -> Result<(), CliError> {
    let report = run_suite(check, instances, config.seed)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_file(&config.out.join("verify.json"), &text)?;
    RunMetadata::new("verify", config).write(&config.out)?;
    println!(
        "{}: {} instances, {} violation(s), max slack {} (tolerance {})",
        report.check, report.instances, report.violations, report.max_slack, report.tolerance
    );
    if report.violations > 0 {
        return Err(CliError::Verification {
            check: report.check,
            violations: report.violations,
            max_slack: report.max_slack,
        });
    }
    Ok(())
}
