//! Scoped worker pool capped by `GAPKIT_THREADS`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{config, CliResult};

pub const THREADS_VAR: &str = "GAPKIT_THREADS";

/// Worker count: `GAPKIT_THREADS` when set, otherwise the available
/// parallelism.
pub fn thread_count() -> CliResult<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(config(format!("{THREADS_VAR} must be a positive integer, got {s:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// `f(0), …, f(jobs − 1)` on up to `threads` workers. Results come back in
/// job order whatever the scheduling.
pub fn par_map<T: Send>(jobs: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = threads.clamp(1, jobs.max(1));
    if workers == 1 {
        return (0..jobs).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= jobs {
                    break;
                }
                let out = f(k);
                slots.lock().unwrap()[k] = Some(out);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|v| v.expect("every job ran")).collect()
}
