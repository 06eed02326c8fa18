//! The numbered acceptance criteria, one line each.

use ssreg::verify::{run_all, CHECKS};

#[test]
fn acceptance() {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let reports = run_all(0, threads).expect("every check runs to completion");
    assert_eq!(reports.len(), CHECKS.len());
    for (i, r) in reports.iter().enumerate() {
        println!("criterion {:>2}: {}  [{:.2}s]", i + 1, r.summary(), r.seconds);
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
