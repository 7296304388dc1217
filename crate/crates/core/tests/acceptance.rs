//! One PASS/FAIL line per acceptance criterion, each at its stated tolerance.

use std::time::Instant;

use privlearn::harness::{criterion, run_experiment};

const NAMES: [&str; 9] = [
    "parity-A privacy on neighbor family",
    "exponential mechanism privacy, exhaustive",
    "amplified parity learner accuracy and sample-size scaling",
    "exponential mechanism accuracy, realizable and agnostic",
    "SQ query simulated by local randomizers",
    "local randomizers simulated by SQ, fidelity",
    "adaptive masked-parity learner recovers every concept",
    "nonadaptive strategies fail on masked parity",
    "GF(2), Fourier and tail-bound identities",
];

fn main() {
    let mut failed = Vec::new();
    for k in 1..=9 {
        let (experiment, params) = criterion(k).expect("criterion defined");
        let start = Instant::now();
        let outcome = run_experiment(experiment, &params);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(report) => {
                let verdict = if report.pass { "PASS" } else { "FAIL" };
                println!("criterion {k}: {verdict} {} [{experiment}, {secs:.1}s]", NAMES[k - 1]);
                println!("    {}", serde_json::Value::Object(report.summary));
                if !report.pass {
                    failed.push(k);
                }
            }
            Err(e) => {
                println!("criterion {k}: FAIL {} [{experiment}: error {e}]", NAMES[k - 1]);
                failed.push(k);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 9 criteria PASS");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
