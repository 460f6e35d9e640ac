//! Render the analysis tables from the shipped fixture logs: overall
//! statistics, per-round and per-pattern breakdowns, the round-by-pattern
//! cross table, and a before/after prediction-shift table.
//!
//! Run with: cargo run --example report_tables

use std::path::Path;

use credit_loom::datastore::read_log;
use credit_loom::report::{render_shift, render_summary, report_shift, report_summary};

fn main() -> credit_loom::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");

    let records = read_log(&fixtures.join("optimized_run_500.jsonl"))?;
    println!("== run summary ({} records) ==\n", records.len());
    print!("{}", render_summary(&report_summary(&records)?));

    let before = read_log(&fixtures.join("shift_before.jsonl"))?;
    let after = read_log(&fixtures.join("shift_after.jsonl"))?;
    println!("\n== prediction shifts ({} pairs) ==\n", before.len());
    print!("{}", render_shift(&report_shift(&before, &after)?));
    Ok(())
}
