//! Acceptance run: every check of the suite plus a determinism check that
//! repeats the training checks and compares their serialised metrics.
//!
//! `cargo test -p emflow-core --test acceptance` runs everything (several
//! minutes). Pass check numbers to run a subset, e.g. `-- 1 3 11`.

use std::collections::BTreeMap;
use std::process::ExitCode;

use emflow_core::checks::{self, serialise_metrics, Outcome};
use emflow_core::Execution;

/// Checks whose metrics must repeat exactly.
const REPEATED: [u32; 4] = [6, 7, 8, 9];
const DETERMINISM_ID: u32 = 12;

fn line(id: u32, title: &str, o: &Outcome) {
    let tag = if o.passed { "PASS" } else { "FAIL" };
    println!("{tag} C{id} {title}: {} ({:.1} s)", o.detail, o.seconds);
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.trim_start_matches('C').parse().ok()).collect();
    let selected = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let suite = checks::suite();
    let exec = Execution::default();

    let mut failed = 0;
    let mut ran = 0;
    let mut first: BTreeMap<u32, Outcome> = BTreeMap::new();
    for c in suite.iter().filter(|c| selected(c.id) || (selected(DETERMINISM_ID) && REPEATED.contains(&c.id))) {
        let o = c.run(exec);
        if selected(c.id) {
            line(c.id, c.title, &o);
            ran += 1;
            failed += usize::from(!o.passed);
        }
        first.insert(c.id, o);
    }

    if selected(DETERMINISM_ID) {
        // the repeat runs single-threaded, so agreement also shows the
        // metrics do not depend on how work was split across threads
        let started = std::time::Instant::now();
        let mut notes = Vec::new();
        let mut ok = true;
        for c in suite.iter().filter(|c| REPEATED.contains(&c.id)) {
            let before = &first[&c.id];
            let again = c.run(Execution::Sequential);
            let (a, b) = (serialise_metrics(&before.metrics), serialise_metrics(&again.metrics));
            let same = !before.metrics.is_empty() && a == b;
            ok &= same;
            notes.push(format!("C{} {} ({} values)", c.id, if same { "identical" } else { "DIFFERS" }, before.metrics.len()));
            if !same {
                notes.push(format!("first {a}, repeat {b}"));
            }
        }
        let o = Outcome { passed: ok, detail: notes.join("; "), seconds: started.elapsed().as_secs_f64(), metrics: vec![] };
        line(DETERMINISM_ID, "repeated runs give identical metrics", &o);
        ran += 1;
        failed += usize::from(!o.passed);
    }

    println!("{} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
