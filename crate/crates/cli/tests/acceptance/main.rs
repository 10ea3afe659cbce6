//! Acceptance criteria, one line per criterion. Each check also enforces its
//! time budget. Exits non-zero if any criterion fails.

mod ctc;
mod formats;
mod gradients;
mod metrics;
mod protocol;
mod smoke;
mod training;

use std::time::{Duration, Instant};

pub type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria = [
        Criterion { id: 1, name: "ctc-oracle", budget: Duration::from_secs(10), run: ctc::oracle },
        Criterion { id: 2, name: "gradient-suite", budget: Duration::from_secs(60), run: gradients::suite },
        Criterion { id: 3, name: "data-parallel-equivalence", budget: Duration::from_secs(120), run: training::data_parallel },
        Criterion { id: 4, name: "overfit", budget: Duration::from_secs(600), run: training::overfit },
        Criterion { id: 5, name: "beam-vs-exact", budget: Duration::from_secs(30), run: ctc::beam_vs_exact },
        Criterion { id: 6, name: "format-fidelity", budget: Duration::from_secs(30), run: formats::fidelity },
        Criterion { id: 7, name: "command-protocol-parsing", budget: Duration::from_secs(1), run: protocol::parsing },
        Criterion { id: 8, name: "metric-oracle", budget: Duration::from_secs(60), run: metrics::oracle },
        Criterion { id: 9, name: "end-to-end-smoke", budget: Duration::from_secs(900), run: smoke::pipeline },
    ];
    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        if filter.as_ref().is_some_and(|f| !c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over budget of {:?}", c.budget)),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {} {}: {detail} ({:.2}s)", c.id, c.name, elapsed.as_secs_f64());
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

/// `Err(msg)` unless `cond`.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}
