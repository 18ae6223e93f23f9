//! In-process worker pool. Jobs are closures of a job id; the id also fixes
//! every random stream the job uses, so results depend only on ids and the
//! pool is free to run them in any order on any number of threads.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;

/// Effective worker count: the request, floored at 1, capped by the
/// EMOBSIM_THREADS environment variable when set.
pub fn worker_count(requested: usize) -> usize {
    cap_workers(requested, std::env::var("EMOBSIM_THREADS").ok().as_deref())
}

fn cap_workers(requested: usize, env_cap: Option<&str>) -> usize {
    let req = requested.max(1);
    match env_cap.and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap >= 1 => req.min(cap),
        _ => req,
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}

/// Runs `n_jobs` jobs on up to `n_workers` threads. The queue is FIFO and
/// results are joined by job id: slot `i` of the output is always job `i`,
/// whatever order the workers finished in. A job that panics is requeued
/// once; a second panic aborts the whole batch.
pub fn run_jobs<T, F>(n_jobs: usize, n_workers: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let queue: Mutex<VecDeque<(usize, u32)>> = Mutex::new((0..n_jobs).map(|j| (j, 0)).collect());
    let slots: Vec<Mutex<Option<T>>> = (0..n_jobs).map(|_| Mutex::new(None)).collect();
    let fatal: Mutex<Option<String>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..n_workers.max(1).min(n_jobs.max(1)) {
            scope.spawn(|| loop {
                if fatal.lock().unwrap().is_some() {
                    return;
                }
                let next = queue.lock().unwrap().pop_front();
                let Some((id, attempt)) = next else { return };
                match catch_unwind(AssertUnwindSafe(|| job(id))) {
                    Ok(out) => *slots[id].lock().unwrap() = Some(out),
                    Err(payload) => {
                        let msg = panic_message(payload.as_ref());
                        if attempt == 0 {
                            log::warn!("job {id} panicked ({msg}); retrying once");
                            queue.lock().unwrap().push_back((id, 1));
                        } else {
                            *fatal.lock().unwrap() =
                                Some(format!("job {id} failed twice: {msg}"));
                        }
                    }
                }
            });
        }
    });

    if let Some(msg) = fatal.into_inner().unwrap() {
        panic!("worker pool aborted: {msg}");
    }
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every job ran"))
        .collect()
}
