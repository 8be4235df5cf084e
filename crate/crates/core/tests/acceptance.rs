//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//! Exits non-zero when any criterion fails.

mod common;

use common::criteria::{self, Outcome};

fn main() {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("gradient suite", criteria::gradient_suite),
        ("oracle suite", criteria::oracle_suite),
        ("encode/decode and checkpoint roundtrip", criteria::roundtrip),
        ("schedule conformance", criteria::schedule),
        ("evaluation harness", criteria::eval_harness),
        ("tiny overfit run", criteria::overfit),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = check();
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {name}: {}", outcome.detail);
        failed += usize::from(!outcome.passed);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
