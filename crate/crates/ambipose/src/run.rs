//! Multi-threaded helpers around the core library. Results never depend on
//! the thread count: every unit of work carries its own derived seed.

use std::thread;
use std::time::Instant;

use ambipose_core::eval::{mean_std, sample_queries, Timing};
use ambipose_core::geometry::Pose;
use ambipose_core::model::PoseRegressor;
use ambipose_core::scenes::LabeledSample;
use ambipose_core::seed;

use crate::error::Result;

/// Calls discarded before timing starts.
pub const WARMUP_CALLS: usize = 3;

/// Posterior samples for every query, split over `threads` workers.
pub fn sample_queries_parallel(
    model: &PoseRegressor,
    queries: &[LabeledSample],
    mc_samples: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<Vec<Pose>>> {
    let threads = threads.clamp(1, queries.len().max(1));
    if threads == 1 {
        return Ok(sample_queries(model, queries, mc_samples, seed)?);
    }
    let chunk = queries.len().div_ceil(threads);
    let results: Vec<Result<Vec<Vec<Pose>>>> = thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, q)| {
                            let qs = seed::derive(seed, seed::purpose::QUERY, (c * chunk + i) as u64);
                            Ok(model.predict_posterior(&q.obs, mc_samples, qs)?.poses)
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampling worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(queries.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Mean and sample standard deviation, in milliseconds, of `repeats` calls
/// to `predict_posterior` after [`WARMUP_CALLS`] untimed calls.
pub fn benchmark_inference(
    model: &PoseRegressor,
    obs: &[f64],
    mc_samples: usize,
    repeats: usize,
    seed: u64,
) -> Result<Timing> {
    for i in 0..WARMUP_CALLS {
        std::hint::black_box(model.predict_posterior(obs, mc_samples, seed.wrapping_add(i as u64))?);
    }
    let mut times = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(model.predict_posterior(obs, mc_samples, seed.wrapping_add((WARMUP_CALLS + i) as u64))?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let (mean_ms, std_ms) = mean_std(&times);
    Ok(Timing { mean_ms, std_ms })
}

/// Runs `jobs` on up to `threads` workers and returns results in job order.
pub fn parallel_map<T, R, F>(jobs: Vec<T>, threads: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let threads = threads.max(1);
    if threads == 1 {
        return jobs.into_iter().map(f).collect();
    }
    let queue = std::sync::Mutex::new(jobs.into_iter().enumerate().collect::<Vec<_>>().into_iter());
    let mut results: Vec<(usize, R)> = thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let next = queue.lock().expect("job queue poisoned").next();
                        match next {
                            Some((i, job)) => done.push((i, f(job))),
                            None => break done,
                        }
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}

/// Worker count from an explicit value or the available parallelism.
pub fn thread_count(requested: Option<usize>) -> usize {
    requested
        .filter(|&n| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
}
