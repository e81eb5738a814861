//! The built-in self-checks, first as shipped and then with a small bias
//! injected into the pulling term.

use guided_bridge::validate::{run_validation, ValidateOptions};

fn main() -> guided_bridge::Result<()> {
    let report = run_validation(&ValidateOptions { cases: 100, ..Default::default() })?;
    println!("{report}\n");
    let biased = run_validation(&ValidateOptions { cases: 100, guiding_bias: 1e-3, ..Default::default() })?;
    for c in biased.checks.iter().filter(|c| !c.passed) {
        println!("{c}");
    }
    Ok(())
}
