//! Runs the acceptance suite and prints one PASS/FAIL line per criterion.
//! Known-unattainable criteria do not fail the run.

use itp_core::acceptance;

fn main() {
    let outcomes = acceptance::run(&[], |o| println!("{}", o.line()));
    let unexpected = acceptance::unexpected_failures(&outcomes);
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
