//! Acceptance suite: one sequential pass/fail line per criterion.
//!
//! Runs as a custom harness (no libtest) so criteria execute in a fixed
//! order, timing-sensitive checks run without sibling load, and the output
//! is one line per criterion:
//!
//! ```text
//! cargo test --test acceptance            # all criteria
//! cargo test --test acceptance -- 5 7    # a subset, by number
//! ```

use std::time::Instant;

mod criteria;
use criteria as imp;

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    type Criterion = (usize, &'static str, fn() -> Result<String, String>);
    let criteria: &[Criterion] = &[
        (1, "oracle equivalence: Viterbi vs brute force", imp::c1_viterbi_vs_brute_force),
        (2, "partition correctness vs enumeration", imp::c2_partition_vs_enumeration),
        (3, "gradient suite at 1e-5", imp::c3_gradient_suite),
        (4, "one-hot reduction to discrete energies", imp::c4_one_hot_reduction),
        (5, "amortization quality on the chain task", imp::c5_amortization_quality),
        (6, "complexity scaling in the label count", imp::c6_complexity_scaling),
        (7, "truncation ablation", imp::c7_truncation_ablation),
        (8, "hinge identities", imp::c8_hinge_identities),
        (9, "stacked-parameterization divergence", imp::c9_stacked_divergence),
        (10, "high-order benefit under token noise", imp::c10_high_order_under_noise),
        (11, "operator contracts", imp::c11_operator_contracts),
        (12, "multi-label trend vs local baseline", imp::c12_mlc_trend),
    ];

    let mut failures = 0usize;
    let suite_start = Instant::now();
    for (num, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(num) {
            continue;
        }
        let t0 = Instant::now();
        match run() {
            Ok(detail) => {
                println!(
                    "PASS criterion {num:>2} [{:>7.1}s] {name}: {detail}",
                    t0.elapsed().as_secs_f64()
                );
            }
            Err(detail) => {
                failures += 1;
                println!(
                    "FAIL criterion {num:>2} [{:>7.1}s] {name}: {detail}",
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }
    println!(
        "acceptance: {} failed, total {:.1}s",
        failures,
        suite_start.elapsed().as_secs_f64()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
