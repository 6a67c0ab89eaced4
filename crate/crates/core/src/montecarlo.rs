//! Random streams, Monte Carlo accumulators and the parallel trajectory
//! driver shared by every solver.
//!
//! Trajectory `i` of a run seeded with `s` always draws from the same
//! stream, and chunk results are merged in index order, so estimates do not
//! depend on how many worker threads execute the run.

use nalgebra::SVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Random stream driving one trajectory.
pub type TrajectoryRng = ChaCha8Rng;

/// Trajectories per work unit. Fixed so that the reduction tree is the same
/// for every worker count.
pub const CHUNK: u64 = 4096;

/// Environment variable consulted for the default worker count.
pub const WORKERS_ENV: &str = "REFLECTWALK_WORKERS";

/// The stream of trajectory `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> TrajectoryRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Independent symmetric signs, one per component.
pub fn bernoulli_pm1<R: RngCore + ?Sized, const D: usize>(rng: &mut R) -> SVector<f64, D> {
    let mut bits = rng.next_u64();
    let mut xi = SVector::<f64, D>::zeros();
    for (i, v) in xi.iter_mut().enumerate() {
        if i > 0 && i % 64 == 0 {
            bits = rng.next_u64();
        }
        *v = if bits & 1 == 1 { 1.0 } else { -1.0 };
        bits >>= 1;
    }
    xi
}

/// Components in `{0, +sqrt 3, -sqrt 3}` with probabilities 2/3, 1/6, 1/6.
/// Matches the first five moments of a standard normal.
pub fn three_point<R: RngCore + ?Sized, const D: usize>(rng: &mut R) -> SVector<f64, D> {
    let s3 = 3f64.sqrt();
    SVector::<f64, D>::from_fn(|_, _| match rng.random_range(0..6u32) {
        4 => s3,
        5 => -s3,
        _ => 0.0,
    })
}

/// Anything that can be combined with a partial result from another chunk.
pub trait Merge: Default + Send {
    fn merge(&mut self, other: Self);
}

/// Running count, mean and centred second moment of a scalar sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct McAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

/// Mean of a sample together with the variance of that mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McSummary {
    pub mean: f64,
    /// `(1/M) * ((1/M) sum x^2 - mean^2)`.
    pub variance_of_mean: f64,
    /// Half-width `2 * sqrt(variance_of_mean)`.
    pub ci_halfwidth: f64,
    pub count: u64,
}

impl McAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `None` when empty.
    pub fn summary(&self) -> Option<McSummary> {
        if self.count == 0 {
            return None;
        }
        let m = self.count as f64;
        let variance_of_mean = (self.m2 / (m * m)).max(0.0);
        Some(McSummary {
            mean: self.mean,
            variance_of_mean,
            ci_halfwidth: 2.0 * variance_of_mean.sqrt(),
            count: self.count,
        })
    }
}

impl Merge for McAccumulator {
    fn merge(&mut self, other: Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other;
            return;
        }
        let n1 = self.count as f64;
        let n2 = other.count as f64;
        let n = n1 + n2;
        let delta = other.mean - self.mean;
        self.mean += delta * (n2 / n);
        self.m2 += other.m2 + delta * delta * (n1 * n2 / n);
        self.count += other.count;
    }
}

impl FromIterator<f64> for McAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// Worker count from the environment, if set to a positive integer.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::config(
                WORKERS_ENV,
                format!("expected a positive integer, got {v:?}"),
            )),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `m` trajectories. `body(acc, rng, index)` simulates trajectory
/// `index` on its own stream and folds the outcome into `acc`.
///
/// The first error aborts the run. `workers = None` uses rayon's global
/// pool; `Some(1)` runs on the calling thread.
pub fn run_trajectories<A, F>(m: u64, seed: u64, workers: Option<usize>, body: F) -> Result<A>
where
    A: Merge,
    F: Fn(&mut A, &mut TrajectoryRng, u64) -> Result<()> + Sync,
{
    let chunks = m.div_ceil(CHUNK);
    let run_chunk = |c: u64| -> Result<A> {
        let mut acc = A::default();
        let end = ((c + 1) * CHUNK).min(m);
        for i in c * CHUNK..end {
            let mut rng = stream(seed, i);
            body(&mut acc, &mut rng, i)?;
        }
        Ok(acc)
    };

    let parts: Vec<A> = match workers {
        Some(1) => (0..chunks).map(run_chunk).collect::<Result<_>>()?,
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Usage(format!("cannot start {n} workers: {e}")))?;
            pool.install(|| (0..chunks).into_par_iter().map(run_chunk).collect::<Result<_>>())?
        }
        None => (0..chunks).into_par_iter().map(run_chunk).collect::<Result<_>>()?,
    };

    let mut total = A::default();
    for p in parts {
        total.merge(p);
    }
    Ok(total)
}
