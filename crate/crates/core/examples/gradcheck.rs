//! Runs the finite-difference gradient suite and prints the worst relative
//! error per operation.

use midframe::gradcheck::{run_suite, DEFAULT_EPSILON, DEFAULT_TOLERANCE};

fn main() -> midframe::Result<()> {
    let seeds: Vec<u64> = (0..10).collect();
    let report = run_suite(&seeds, DEFAULT_EPSILON, DEFAULT_TOLERANCE)?;
    for (op, worst, n) in report.worst_by_op() {
        println!("{op:<12} {n:>3} seeds   max rel err {worst:.2e}");
    }
    for f in report.failures() {
        println!("FAILED {} seed {}: {:?}", f.op, f.seed, f.report.worst);
    }
    println!("{}", if report.passed() { "all passed" } else { "failures present" });
    Ok(())
}
