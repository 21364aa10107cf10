use std::time::Instant;

use curvewalk::verify::{gradient_suite, target_names, TOLERANCE};
use serde::Serialize;

use crate::args::GradcheckArgs;
use crate::setup::{usage, CmdResult, Failure};

#[derive(Serialize)]
struct SuiteSummary {
    targets: usize,
    failed: Vec<String>,
    max_rel_error: f64,
    tolerance: f64,
    seconds: f64,
}

pub fn run(a: &GradcheckArgs) -> CmdResult {
    if a.list {
        for name in target_names() {
            println!("{name}");
        }
        return Ok(());
    }
    let t = Instant::now();
    let results = match gradient_suite(a.only.as_deref()) {
        Ok(r) => r,
        Err(unknown) => return usage(format!("unknown gradcheck target(s): {}", unknown.join(", "))),
    };
    for r in &results {
        println!("{}", json(r));
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.target.clone()).collect();
    let summary = SuiteSummary {
        targets: results.len(),
        max_rel_error: results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
        failed: failed.clone(),
        tolerance: TOLERANCE,
        seconds: t.elapsed().as_secs_f64(),
    };
    println!("{}", json(&summary));
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verify(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}
