//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails or overruns its time budget.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// Outcome of one criterion: a short summary on success, the reason otherwise.
pub type Verdict = Result<String, String>;

/// Returns early with a failure message unless the condition holds.
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

mod algorithms;
mod gp;
mod protocol;
mod runs;

struct Criterion {
    id: &'static str,
    title: &'static str,
    budget: Duration,
    check: fn() -> Verdict,
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: "P1", title: "parameter-space laws", budget: secs(30), check: space::parameter_space_laws },
    Criterion { id: "P2", title: "grid exactness", budget: secs(10), check: space::grid_exactness },
    Criterion { id: "P3", title: "gaussian process correctness", budget: secs(120), check: gp::gp_correctness },
    Criterion { id: "P4", title: "bayesian optimization beats random", budget: secs(120), check: algorithms::bo_beats_random },
    Criterion { id: "P5", title: "successive halving promotion conservation", budget: secs(5), check: algorithms::promotion_conservation },
    Criterion { id: "P6", title: "successive halving efficiency", budget: secs(60), check: algorithms::halving_efficiency },
    Criterion { id: "P7", title: "population lineage and improvement", budget: secs(60), check: algorithms::population_training },
    Criterion { id: "P8", title: "local search hill climb", budget: secs(10), check: algorithms::local_search },
    Criterion { id: "P9", title: "repeat semantics", budget: secs(5), check: algorithms::repeat_semantics },
    Criterion { id: "P10", title: "end-to-end parallel run", budget: secs(60), check: runs::parallel_run },
    Criterion { id: "P11", title: "crash and stop handling", budget: secs(60), check: runs::crash_and_stop },
    Criterion { id: "P12", title: "protocol conformance", budget: secs(10), check: protocol::conformance },
];

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for c in CRITERIA {
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let elapsed = started.elapsed();
        let verdict = match verdict {
            Ok(detail) if elapsed > c.budget => {
                Err(format!("{detail}; took {:.1}s, budget {}s", elapsed.as_secs_f64(), c.budget.as_secs()))
            }
            other => other,
        };
        let (label, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{:<4} {label} {:<42} {:>6.2}s  {detail}", c.id, c.title, elapsed.as_secs_f64());
        failures += usize::from(verdict.is_err());
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failures, CRITERIA.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
