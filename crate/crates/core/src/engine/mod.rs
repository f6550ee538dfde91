//! The single-source portability seam: user kernels applied across index
//! ranges or container rows under a backend policy chosen at run
//! configuration, with identical numerical results across backends.
//!
//! Every output element is produced by exactly one kernel invocation whose
//! internal loop order is fixed, and there are no cross-invocation
//! floating-point reductions, so sequential and multithreaded execution are
//! bitwise equal by construction. Work is split into contiguous index blocks
//! of size ceil(n / threads); no work stealing. The engine owns all worker
//! threads (a lazily spawned persistent pool; see `pool`).

mod pool;

use crate::tensor::MatrixViewMut;

/// Environment variable consulted for the default thread count.
pub const THREADS_ENV: &str = "PORTANET_THREADS";

/// Execution backend for kernel launches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    Sequential,
    Multithreaded { threads: usize },
}

impl Default for Policy {
    fn default() -> Self {
        Policy::Sequential
    }
}

impl Policy {
    /// Multithreaded policy with `threads` workers; clamps 0 to 1.
    pub fn multithreaded(threads: usize) -> Self {
        Policy::Multithreaded {
            threads: threads.max(1),
        }
    }

    /// Thread count from `PORTANET_THREADS`, falling back to the hardware
    /// concurrency when the variable is absent or unparseable.
    pub fn threads_from_env() -> usize {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            })
    }

    pub fn threads(&self) -> usize {
        match self {
            Policy::Sequential => 1,
            Policy::Multithreaded { threads } => *threads,
        }
    }
}

/// Kernel launcher bound to a policy. Callers are single-threaded
/// orchestrators; the policy cannot change while a launch is in flight
/// because `set_policy` takes `&mut self`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Engine {
    policy: Policy,
}

impl Engine {
    pub fn new(policy: Policy) -> Self {
        Engine { policy }
    }

    pub fn sequential() -> Self {
        Engine {
            policy: Policy::Sequential,
        }
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn set_policy(&mut self, policy: Policy) {
        self.policy = policy;
    }

    /// Apply `kernel` exactly once for each index in [0, n). The kernel must
    /// only touch state it can share soundly across threads (e.g. atomics).
    pub fn for_each_index<K>(&self, n: usize, kernel: K)
    where
        K: Fn(usize) + Sync,
    {
        match self.partition(n) {
            None => {
                for i in 0..n {
                    kernel(i);
                }
            }
            Some(block) => {
                let kernel = &kernel;
                let mut tasks: Vec<Box<dyn FnOnce() + Send + '_>> = Vec::new();
                let mut start = 0;
                while start < n {
                    let end = (start + block).min(n);
                    tasks.push(Box::new(move || {
                        for i in start..end {
                            kernel(i);
                        }
                    }));
                    start = end;
                }
                pool::run_scoped(tasks);
            }
        }
    }

    /// `out[i] = kernel(i)` for every element: one write-disjoint output
    /// element per invocation.
    pub fn fill<K>(&self, out: &mut [f32], kernel: K)
    where
        K: Fn(usize) -> f32 + Sync,
    {
        let n = out.len();
        match self.partition(n) {
            None => {
                for (i, slot) in out.iter_mut().enumerate() {
                    *slot = kernel(i);
                }
            }
            Some(block) => {
                let kernel = &kernel;
                let tasks: Vec<Box<dyn FnOnce() + Send + '_>> = out
                    .chunks_mut(block)
                    .enumerate()
                    .map(|(chunk_idx, chunk)| {
                        let start = chunk_idx * block;
                        Box::new(move || {
                            for (j, slot) in chunk.iter_mut().enumerate() {
                                *slot = kernel(start + j);
                            }
                        }) as Box<dyn FnOnce() + Send + '_>
                    })
                    .collect();
                pool::run_scoped(tasks);
            }
        }
    }

    /// Split `out` into `n` equal disjoint regions and call
    /// `kernel(region_index, region)` once per region. `out.len()` must be a
    /// multiple of `n`; with n == 0 nothing runs.
    pub fn for_each_region<K>(&self, n: usize, out: &mut [f32], kernel: K)
    where
        K: Fn(usize, &mut [f32]) + Sync,
    {
        if n == 0 {
            return;
        }
        assert_eq!(
            out.len() % n,
            0,
            "output length {} does not split into {} regions",
            out.len(),
            n
        );
        let region = out.len() / n;
        assert!(region > 0, "cannot split an empty output into {n} regions");
        match self.partition(n) {
            None => {
                for (i, chunk) in out.chunks_mut(region).enumerate() {
                    kernel(i, chunk);
                }
            }
            Some(block) => {
                let kernel = &kernel;
                let tasks: Vec<Box<dyn FnOnce() + Send + '_>> = out
                    .chunks_mut(block * region)
                    .enumerate()
                    .map(|(block_idx, slab)| {
                        let first = block_idx * block;
                        Box::new(move || {
                            for (j, chunk) in slab.chunks_mut(region).enumerate() {
                                kernel(first + j, chunk);
                            }
                        }) as Box<dyn FnOnce() + Send + '_>
                    })
                    .collect();
                pool::run_scoped(tasks);
            }
        }
    }

    /// Like [`Engine::for_each_region`], but with two output buffers
    /// partitioned in lockstep (e.g. pooling writes the value plane and the
    /// origin mask).
    pub fn for_each_region2<K>(&self, n: usize, a: &mut [f32], b: &mut [f32], kernel: K)
    where
        K: Fn(usize, &mut [f32], &mut [f32]) + Sync,
    {
        if n == 0 {
            return;
        }
        assert_eq!(a.len() % n, 0, "first output does not split into {n} regions");
        assert_eq!(b.len() % n, 0, "second output does not split into {n} regions");
        let ra = a.len() / n;
        let rb = b.len() / n;
        assert!(
            ra > 0 && rb > 0,
            "cannot split an empty output into {n} regions"
        );
        match self.partition(n) {
            None => {
                for (i, (ca, cb)) in a.chunks_mut(ra).zip(b.chunks_mut(rb)).enumerate() {
                    kernel(i, ca, cb);
                }
            }
            Some(block) => {
                let kernel = &kernel;
                let tasks: Vec<Box<dyn FnOnce() + Send + '_>> = a
                    .chunks_mut(block * ra)
                    .zip(b.chunks_mut(block * rb))
                    .enumerate()
                    .map(|(block_idx, (slab_a, slab_b))| {
                        let first = block_idx * block;
                        Box::new(move || {
                            let pairs = slab_a.chunks_mut(ra).zip(slab_b.chunks_mut(rb));
                            for (j, (ca, cb)) in pairs.enumerate() {
                                kernel(first + j, ca, cb);
                            }
                        }) as Box<dyn FnOnce() + Send + '_>
                    })
                    .collect();
                pool::run_scoped(tasks);
            }
        }
    }

    /// Apply `kernel` once per matrix row.
    pub fn for_each_row<K>(&self, m: &mut MatrixViewMut<'_>, kernel: K)
    where
        K: Fn(usize, &mut [f32]) + Sync,
    {
        let rows = m.rows();
        self.for_each_region(rows, m.data_mut(), kernel);
    }

    /// Block size for the threaded path, or None for the sequential loop.
    fn partition(&self, n: usize) -> Option<usize> {
        match self.policy {
            Policy::Sequential => None,
            Policy::Multithreaded { threads } => {
                if n == 0 {
                    None
                } else {
                    Some(n.div_ceil(threads.max(1)))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn policies() -> Vec<Policy> {
        vec![
            Policy::Sequential,
            Policy::multithreaded(1),
            Policy::multithreaded(2),
            Policy::multithreaded(8),
        ]
    }

    #[test]
    fn default_policy_is_sequential() {
        assert_eq!(Policy::default(), Policy::Sequential);
        assert_eq!(Engine::default().policy(), Policy::Sequential);
    }

    #[test]
    fn zero_indices_no_calls() {
        for p in policies() {
            let eng = Engine::new(p);
            let calls = AtomicUsize::new(0);
            eng.for_each_index(0, |_| {
                calls.fetch_add(1, Ordering::Relaxed);
            });
            assert_eq!(calls.load(Ordering::Relaxed), 0);
            let mut out: [f32; 0] = [];
            eng.for_each_region(0, &mut out, |_, _| panic!("must not run"));
        }
    }

    #[test]
    fn fill_writes_index() {
        for p in policies() {
            let eng = Engine::new(p);
            let mut out = vec![0.0f32; 5];
            eng.fill(&mut out, |i| i as f32);
            assert_eq!(out, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn exactly_once_per_index() {
        for p in policies() {
            let eng = Engine::new(p);
            let n = 10_000;
            let calls = AtomicUsize::new(0);
            let sum = AtomicUsize::new(0);
            eng.for_each_index(n, |i| {
                calls.fetch_add(1, Ordering::Relaxed);
                sum.fetch_add(i, Ordering::Relaxed);
            });
            assert_eq!(calls.load(Ordering::Relaxed), n);
            assert_eq!(sum.load(Ordering::Relaxed), n * (n - 1) / 2);
        }
    }

    #[test]
    fn backends_bitwise_equal_large_fill() {
        let n = 1_000_000;
        let seq = Engine::sequential();
        let mut expected = vec![0.0f32; n];
        seq.fill(&mut expected, |i| (i as f32) * 1.000_1 + 0.5);
        for p in [
            Policy::multithreaded(1),
            Policy::multithreaded(2),
            Policy::multithreaded(8),
        ] {
            let eng = Engine::new(p);
            let mut got = vec![0.0f32; n];
            eng.fill(&mut got, |i| (i as f32) * 1.000_1 + 0.5);
            assert!(expected
                .iter()
                .zip(&got)
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn row_kernel_normalize_backends_equal() {
        use crate::tensor::Tensor;
        let rows = 64;
        let cols = 1000;
        let mut rng = crate::rng::Pcg32::new(5, 0);
        let data: Vec<f32> = (0..rows * cols).map(|_| rng.uniform(-2.0, 2.0)).collect();

        let run = |policy: Policy| {
            let eng = Engine::new(policy);
            let mut t = Tensor::from_vec(&[rows, cols], data.clone()).unwrap();
            let mut m = t.as_matrix_mut(rows, cols).unwrap();
            eng.for_each_row(&mut m, |_, row| {
                let mut norm = 0.0f32;
                for v in row.iter() {
                    norm += v * v;
                }
                let inv = 1.0 / norm.sqrt();
                for v in row.iter_mut() {
                    *v *= inv;
                }
            });
            t
        };

        let base = run(Policy::Sequential);
        for p in [
            Policy::multithreaded(1),
            Policy::multithreaded(2),
            Policy::multithreaded(8),
        ] {
            let other = run(p);
            assert!(base
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn zero_region_count_no_calls() {
        // A 0-row matrix cannot be constructed (extents >= 1); the region
        // form with n = 0 covers the degenerate launch instead.
        let eng = Engine::new(Policy::multithreaded(4));
        let mut out: [f32; 0] = [];
        let calls = AtomicUsize::new(0);
        eng.for_each_region(0, &mut out, |_, _| {
            calls.fetch_add(1, Ordering::Relaxed);
        });
        assert_eq!(calls.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn row_sum_example() {
        for p in policies() {
            let eng = Engine::new(p);
            let mut sums = vec![0.0f32; 2];
            let m = [1.0f32, 2.0, 3.0, 4.0];
            eng.fill(&mut sums, |i| m[i * 2] + m[i * 2 + 1]);
            assert_eq!(sums, vec![3.0, 7.0]);
        }
    }

    #[test]
    fn set_policy_switches_backend() {
        let mut eng = Engine::sequential();
        eng.set_policy(Policy::multithreaded(3));
        assert_eq!(eng.policy(), Policy::multithreaded(3));
        let mut out = vec![0.0f32; 7];
        eng.fill(&mut out, |i| i as f32 * 2.0);
        assert_eq!(out[6], 12.0);
    }

    #[test]
    fn region2_partitions_in_lockstep() {
        for p in policies() {
            let eng = Engine::new(p);
            let mut a = vec![0.0f32; 12];
            let mut b = vec![0.0f32; 6];
            eng.for_each_region2(3, &mut a, &mut b, |i, ra, rb| {
                assert_eq!(ra.len(), 4);
                assert_eq!(rb.len(), 2);
                for v in ra.iter_mut() {
                    *v = i as f32;
                }
                for v in rb.iter_mut() {
                    *v = -(i as f32);
                }
            });
            assert_eq!(a[4..8], [1.0, 1.0, 1.0, 1.0]);
            assert_eq!(b[4..6], [-2.0, -2.0]);
        }
    }

    #[test]
    fn kernel_panic_propagates() {
        let eng = Engine::new(Policy::multithreaded(2));
        let result = std::panic::catch_unwind(|| {
            let mut out = vec![0.0f32; 64];
            eng.fill(&mut out, |i| {
                if i == 17 {
                    panic!("kernel blew up");
                }
                i as f32
            });
        });
        assert!(result.is_err());
        // the pool survives a panicking kernel
        let mut out = vec![0.0f32; 8];
        eng.fill(&mut out, |i| i as f32);
        assert_eq!(out[7], 7.0);
    }
}
