//! Persistent worker pool behind the engine's threaded policy. Workers are
//! spawned once per process and park on their queues; a launch distributes
//! its block tasks round-robin and blocks until every task has signalled
//! completion, which is what makes handing borrowed closures to the workers
//! sound.

use std::any::Any;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::OnceLock;
use std::thread;

type Job = Box<dyn FnOnce() + Send + 'static>;

struct Pool {
    senders: Vec<Sender<Job>>,
    next: AtomicUsize,
}

fn pool() -> &'static Pool {
    static POOL: OnceLock<Pool> = OnceLock::new();
    POOL.get_or_init(|| {
        let workers = thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1);
        let mut senders = Vec::with_capacity(workers);
        for idx in 0..workers {
            let (tx, rx) = channel::<Job>();
            thread::Builder::new()
                .name(format!("portanet-worker-{idx}"))
                .spawn(move || {
                    while let Ok(job) = rx.recv() {
                        job();
                    }
                })
                .expect("failed to spawn engine worker");
            senders.push(tx);
        }
        Pool {
            senders,
            next: AtomicUsize::new(0),
        }
    })
}

/// Runs the tasks to completion on the shared workers. Blocks until every
/// task has finished; a panicking task is re-raised here after the barrier.
pub(crate) fn run_scoped(tasks: Vec<Box<dyn FnOnce() + Send + '_>>) {
    let pool = pool();
    let count = tasks.len();
    let (done_tx, done_rx) = channel::<thread::Result<()>>();
    let start = pool.next.fetch_add(1, Ordering::Relaxed);
    for (i, task) in tasks.into_iter().enumerate() {
        let done = done_tx.clone();
        let wrapped: Box<dyn FnOnce() + Send + '_> = Box::new(move || {
            let result = catch_unwind(AssertUnwindSafe(task));
            let _ = done.send(result);
        });
        // SAFETY: the barrier below does not return before every task has
        // sent its completion signal, so no borrow captured by `wrapped`
        // outlives this call; the transmute only erases the lifetime.
        let wrapped: Job = unsafe { std::mem::transmute(wrapped) };
        pool.senders[(start + i) % pool.senders.len()]
            .send(wrapped)
            .expect("engine worker hung up");
    }
    drop(done_tx);

    let mut panic_payload: Option<Box<dyn Any + Send>> = None;
    for _ in 0..count {
        match done_rx.recv().expect("engine worker dropped its barrier") {
            Ok(()) => {}
            Err(payload) => panic_payload = Some(payload),
        }
    }
    if let Some(payload) = panic_payload {
        resume_unwind(payload);
    }
}
