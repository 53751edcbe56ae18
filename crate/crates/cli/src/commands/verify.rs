use asr_core::verification::{ctc_oracle_suite, decode_oracle_suite, gradient_suite, SuiteReport};
use serde::Serialize;

use crate::args::Args;
use crate::commands::load_config;
use crate::CliError;

#[derive(Serialize)]
struct VerifyReport {
    suites: Vec<SuiteReport>,
    pass: bool,
}

pub fn run(argv: &[String]) -> Result<(), CliError> {
    let args = Args::parse(argv, &["config", "cases", "json"], &[])?;
    let cfg = load_config(&args)?;
    let ctc_cases: usize = match args.get("cases") {
        Some(v) => v.parse().map_err(|_| format!("bad --cases {v:?}"))?,
        None => 200,
    };
    // Test hook: lets the failure path be exercised end to end.
    let corrupt = std::env::var("ASR_VERIFY_CORRUPT_GRAD").is_ok_and(|v| v == "1");

    let mut suites = Vec::new();
    suites.push(ctc_oracle_suite(ctc_cases, cfg.seed));
    suites.push(decode_oracle_suite(20, cfg.seed ^ 0xdec0de));
    let (_, grad_summary) = gradient_suite(cfg.seed ^ 0x96ad, corrupt);
    suites.push(grad_summary);

    let report = VerifyReport {
        pass: suites.iter().all(|s| s.pass),
        suites,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{json}");
    if let Some(path) = args.get("json") {
        std::fs::write(path, &json).map_err(|e| CliError::Data(e.to_string()))?;
    }
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Verification(
            report
                .suites
                .iter()
                .filter(|s| !s.pass)
                .map(|s| s.suite.clone())
                .collect::<Vec<_>>()
                .join(", "),
        ))
    }
}
