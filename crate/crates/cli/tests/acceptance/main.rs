//! Acceptance gates. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass name fragments as arguments to run a subset.

mod edit;
mod flow;
mod grads;
mod oracles;
mod rendering;
mod shared;
mod vae;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

pub type Outcome = anyhow::Result<String>;

struct Criterion {
    name: &'static str,
    /// Runtime bound, where the criterion states one.
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

const fn minutes(m: u64) -> Option<Duration> {
    Some(Duration::from_secs(60 * m))
}

fn criteria() -> Vec<Criterion> {
    vec![
        Criterion {
            name: "gradient-suite",
            budget: minutes(2),
            run: grads::run,
        },
        Criterion {
            name: "oracle-suite",
            budget: minutes(1),
            run: oracles::run,
        },
        Criterion {
            name: "rendering-suite",
            budget: minutes(1),
            run: rendering::run,
        },
        Criterion {
            name: "vae-overfit",
            budget: minutes(30),
            run: vae::run,
        },
        Criterion {
            name: "flow-sanity",
            budget: minutes(5),
            run: flow::sanity,
        },
        Criterion {
            name: "token-alignment-ablation",
            budget: None,
            run: flow::ablation,
        },
        Criterion {
            name: "edit-identity",
            budget: None,
            run: edit::identity,
        },
        Criterion {
            name: "determinism",
            budget: None,
            run: edit::determinism,
        },
    ]
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture may be forwarded; only bare words filter
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in criteria() {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(anyhow::anyhow!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let result = result.and_then(|detail| {
            if let Some(b) = c.budget {
                anyhow::ensure!(took <= b, "{detail}; took {took:.1?}, budget {b:?}");
            }
            Ok(detail)
        });
        match result {
            Ok(detail) => println!("PASS {:<26} {detail} [{took:.1?}]", c.name),
            Err(e) => {
                failed += 1;
                println!("FAIL {:<26} {e:#} [{took:.1?}]", c.name);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
