//! One pass/fail line per acceptance criterion; exits non-zero on any failure.

use sparse_scan::selftest::run_all;

fn main() {
    let outcomes = run_all(|o| println!("criterion {o}"));
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", outcomes.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
