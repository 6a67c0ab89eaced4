//! Monte Carlo solvers for the boundary value problems attached to a
//! reflected diffusion: Robin parabolic, elliptic with decay, and
//! Neumann-Poisson on a shrinking-step schedule.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::models::RsdeProblem;
use crate::montecarlo::{bernoulli_pm1, run_trajectories, McAccumulator, McSummary, Merge};
use crate::stepper::{run_second_order, step_chain, step_poisson, ChainState};

/// Result of a Monte Carlo solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McResult {
    pub estimate: f64,
    /// Half-width `2 sqrt(D_M)`.
    pub mc_error: f64,
    #[serde(rename = "M")]
    pub m: u64,
    /// Step actually used, after snapping to the horizon.
    pub h: Option<f64>,
    pub steps: u64,
    pub seed: u64,
    pub wall_time: f64,
}

impl McResult {
    fn from_summary(s: McSummary, h: Option<f64>, steps: u64, seed: u64, started: Instant) -> Self {
        McResult {
            estimate: s.mean,
            mc_error: s.ci_halfwidth,
            m: s.count,
            h,
            steps,
            seed,
            wall_time: started.elapsed().as_secs_f64(),
        }
    }
}

/// Step snapped so that a whole number of steps covers `duration`.
/// Returns `(h_used, steps)` with `h_used <= h`.
pub fn snap_step(duration: f64, h: f64) -> Result<(f64, u64)> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config("h", format!("must be positive, got {h}")));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::config("T", format!("horizon must exceed the start time, duration is {duration}")));
    }
    let n = (duration / h - 1e-9).ceil().max(1.0);
    Ok((duration / n, n as u64))
}

fn check_run<const D: usize>(problem: &RsdeProblem<D>, x0: &Point<D>, m: u64) -> Result<()> {
    if m == 0 {
        return Err(Error::config("M", "must be at least 1"));
    }
    if !problem.domain.contains(x0) {
        return Err(Error::config("x0", format!("{:?} is outside the domain", x0.as_slice())));
    }
    Ok(())
}

/// Parabolic Robin problem at `(t0, x0)`: mean of `phi(X_N) Y_N + Z_N` over
/// `m` chains. A step that does not divide `horizon - t0` is reduced to
/// one that does; the step used is reported.
#[allow(clippy::too_many_arguments)]
pub fn solve_parabolic<const D: usize>(
    problem: &RsdeProblem<D>,
    t0: f64,
    x0: &Point<D>,
    horizon: f64,
    h: f64,
    m: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<McResult> {
    let started = Instant::now();
    check_run(problem, x0, m)?;
    let (h_used, n) = snap_step(horizon - t0, h)?;
    let acc: McAccumulator = run_trajectories(m, seed, workers, |acc: &mut McAccumulator, rng, _| {
        let mut s = ChainState::new(t0, *x0);
        for _ in 0..n {
            let xi: Point<D> = bernoulli_pm1(rng);
            s = step_chain(problem, &s, h_used, &xi)?.0;
        }
        acc.push((problem.phi)(&s.x) * s.y + s.z);
        Ok(())
    })?;
    Ok(McResult::from_summary(acc.summary().expect("m >= 1"), Some(h_used), n, seed, started))
}

/// Mean of `phi(X_T)` under the second-order scheme with homogeneous
/// Neumann data, with boundary layer width `layer_factor * h * |sigma|_F`.
/// `steps` in the result is the largest step count taken by any
/// trajectory, since the scheme shrinks steps near the boundary.
#[allow(clippy::too_many_arguments)]
pub fn solve_second_order<const D: usize>(
    problem: &RsdeProblem<D>,
    t0: f64,
    x0: &Point<D>,
    horizon: f64,
    h: f64,
    layer_factor: f64,
    m: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<McResult> {
    let started = Instant::now();
    check_run(problem, x0, m)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config("h", format!("must be positive, got {h}")));
    }
    let acc: SecondOrderSums = run_trajectories(m, seed, workers, |acc: &mut SecondOrderSums, rng, _| {
        let run = run_second_order(problem, t0, x0, horizon, h, layer_factor, rng)?;
        acc.values.push((problem.phi)(&run.x));
        acc.max_steps = acc.max_steps.max(run.steps as u64);
        Ok(())
    })?;
    Ok(McResult::from_summary(acc.values.summary().expect("m >= 1"), Some(h), acc.max_steps, seed, started))
}

#[derive(Default)]
struct SecondOrderSums {
    values: McAccumulator,
    max_steps: u64,
}

impl Merge for SecondOrderSums {
    fn merge(&mut self, other: Self) {
        self.values.merge(other.values);
        self.max_steps = self.max_steps.max(other.max_steps);
    }
}

/// Elliptic problem with decay at `x0`: mean of `Z_N` after running the
/// autonomous chain to `horizon`. Needs `c < 0` and `gamma <= 0`; both are
/// checked along the first trajectory.
pub fn solve_elliptic_decay<const D: usize>(
    problem: &RsdeProblem<D>,
    x0: &Point<D>,
    horizon: f64,
    h: f64,
    m: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<McResult> {
    let started = Instant::now();
    check_run(problem, x0, m)?;
    if !problem.autonomous {
        return Err(Error::Usage("the elliptic solver needs time-independent coefficients".into()));
    }
    let (h_used, n) = snap_step(horizon, h)?;
    let acc: McAccumulator = run_trajectories(m, seed, workers, |acc: &mut McAccumulator, rng, i| {
        let mut s = ChainState::new(0.0, *x0);
        for _ in 0..n {
            if i == 0 {
                let c = (problem.c)(0.0, &s.x);
                if !(c < 0.0) {
                    return Err(Error::Usage(format!(
                        "decay c = {c} at {:?} is not negative; use the Poisson solver for problems without decay",
                        s.x.as_slice()
                    )));
                }
            }
            let xi: Point<D> = bernoulli_pm1(rng);
            let (next, event) = step_chain(problem, &s, h_used, &xi)?;
            if i == 0 {
                if let Some(contact) = event.contact() {
                    let gamma = (problem.gamma)(0.0, &contact.x_pi);
                    if gamma > 0.0 {
                        return Err(Error::Usage(format!(
                            "boundary coefficient gamma = {gamma} is positive at {:?}",
                            contact.x_pi.as_slice()
                        )));
                    }
                }
            }
            s = next;
        }
        acc.push(s.z);
        Ok(())
    })?;
    Ok(McResult::from_summary(acc.summary().expect("m >= 1"), Some(h_used), n, seed, started))
}

/// One block of the Poisson schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleBlock {
    pub j: u32,
    pub h_j: f64,
    pub n_j: u64,
    /// Cumulative nominal time `T_j`.
    pub t_j: f64,
}

/// Blocks of shrinking steps `h_j = h / j^beta`, each running
/// `N_j = floor(upsilon / (h_j j^ell))` steps, until the nominal time
/// `T_j = T_{j-1} + upsilon / j^ell` reaches the horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub blocks: Vec<ScheduleBlock>,
    pub h: f64,
    pub ell: f64,
    pub beta: f64,
    pub upsilon: f64,
    pub horizon: f64,
}

impl Schedule {
    /// Number of blocks.
    pub fn lambda(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_steps(&self) -> u64 {
        self.blocks.iter().map(|b| b.n_j).sum()
    }

    /// Time actually simulated, `sum N_j h_j`.
    pub fn simulated_time(&self) -> f64 {
        self.blocks.iter().map(|b| b.n_j as f64 * b.h_j).sum()
    }
}

/// Builds the Poisson schedule. Requires `0 < ell <= 1`, `0 < beta <= 1`
/// and `ell / 2 + beta > 1`.
pub fn poisson_schedule(h: f64, ell: f64, beta: f64, upsilon: f64, horizon: f64) -> Result<Schedule> {
    let positive = |key: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::config(key, format!("must be positive, got {v}")))
        }
    };
    positive("h", h)?;
    positive("upsilon", upsilon)?;
    positive("T", horizon)?;
    if !(ell > 0.0 && ell <= 1.0) {
        return Err(Error::config("ell", format!("must lie in (0, 1], got {ell}")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::config("beta", format!("must lie in (0, 1], got {beta}")));
    }
    if ell / 2.0 + beta <= 1.0 {
        return Err(Error::config(
            "beta",
            format!("ell/2 + beta must exceed 1, got {}", ell / 2.0 + beta),
        ));
    }
    let mut blocks = Vec::new();
    let mut t = 0.0;
    let mut j = 1u32;
    while t < horizon {
        let jf = j as f64;
        let h_j = h / jf.powf(beta);
        let span = upsilon / jf.powf(ell);
        let n_j = (span / h_j * (1.0 + 1e-12)).floor();
        if n_j < 1.0 {
            return Err(Error::config(
                "h",
                format!("block {j} would hold no step (h_j = {h_j:.4} exceeds upsilon / j^ell = {span:.4}); reduce h or raise upsilon"),
            ));
        }
        t += span;
        blocks.push(ScheduleBlock {
            j,
            h_j,
            n_j: n_j as u64,
            t_j: t,
        });
        j += 1;
    }
    Ok(Schedule {
        blocks,
        h,
        ell,
        beta,
        upsilon,
        horizon,
    })
}

/// Neumann-Poisson problem: mean of `Z` after driving the chain through
/// `schedule`. Estimates `u(x0) - u_bar`, where `u_bar` is the mean of `u`
/// under the invariant density. The data must satisfy the compatibility
/// condition; this is the caller's responsibility.
pub fn solve_poisson<const D: usize>(
    problem: &RsdeProblem<D>,
    x0: &Point<D>,
    schedule: &Schedule,
    m: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<McResult> {
    let started = Instant::now();
    check_run(problem, x0, m)?;
    let acc: McAccumulator = run_trajectories(m, seed, workers, |acc: &mut McAccumulator, rng, _| {
        let mut s = ChainState::new(0.0, *x0);
        for block in &schedule.blocks {
            for _ in 0..block.n_j {
                let xi: Point<D> = bernoulli_pm1(rng);
                s = step_poisson(problem, &s, block.h_j, &xi)?.0;
            }
        }
        acc.push(s.z);
        Ok(())
    })?;
    Ok(McResult::from_summary(
        acc.summary().expect("m >= 1"),
        Some(schedule.h),
        schedule.total_steps(),
        seed,
        started,
    ))
}

#[derive(Default)]
struct Checkpoints(Vec<McAccumulator>);

impl Merge for Checkpoints {
    fn merge(&mut self, other: Self) {
        if self.0.is_empty() {
            *self = other;
            return;
        }
        for (a, b) in self.0.iter_mut().zip(other.0) {
            a.merge(b);
        }
    }
}

/// Diagnostic: the Poisson chain run with a constant step. Returns the mean
/// of `Z_N` at each of the (increasing) `checkpoints`. The bias of this
/// variant grows with `N`, which is why the solver shrinks its steps.
pub fn poisson_fixed_step<const D: usize>(
    problem: &RsdeProblem<D>,
    x0: &Point<D>,
    h: f64,
    checkpoints: &[u64],
    m: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<Vec<(u64, McSummary)>> {
    check_run(problem, x0, m)?;
    if !(h > 0.0) || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage("checkpoints must increase and h must be positive".into()));
    }
    let last = checkpoints.last().copied().unwrap_or(0);
    let acc: Checkpoints = run_trajectories(m, seed, workers, |acc: &mut Checkpoints, rng, _| {
        if acc.0.is_empty() {
            acc.0 = vec![McAccumulator::new(); checkpoints.len()];
        }
        let mut s = ChainState::new(0.0, *x0);
        let mut next = 0;
        for k in 1..=last {
            let xi: Point<D> = bernoulli_pm1(rng);
            s = step_poisson(problem, &s, h, &xi)?.0;
            if k == checkpoints[next] {
                acc.0[next].push(s.z);
                next += 1;
            }
        }
        Ok(())
    })?;
    Ok(checkpoints
        .iter()
        .zip(acc.0)
        .map(|(&n, a)| (n, a.summary().expect("m >= 1")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use crate::models::{catalog, CatalogProblem, Matrix};
    use nalgebra::Vector2;
    use std::sync::Arc;

    #[test]
    fn schedule_examples() {
        let s = poisson_schedule(0.5, 0.1, 1.0, 1.0, 5.0).unwrap();
        let b1 = s.blocks[0];
        assert_eq!((b1.j, b1.h_j, b1.n_j, b1.t_j), (1, 0.5, 2, 1.0));
        let b2 = s.blocks[1];
        assert_eq!((b2.h_j, b2.n_j), (0.25, 3));
        assert!((b2.t_j - 1.93304).abs() < 1e-5);
        let n = s.lambda();
        assert!(s.blocks[n - 2].t_j < 5.0 && s.blocks[n - 1].t_j >= 5.0);
        for b in &s.blocks {
            assert_eq!(b.h_j, 0.5 / b.j as f64);
        }
    }

    #[test]
    fn schedule_rejects_bad_parameters() {
        assert!(matches!(
            poisson_schedule(0.5, 1.0, 0.4, 1.0, 5.0),
            Err(Error::Config { key, .. }) if key == "beta"
        ));
        assert!(matches!(
            poisson_schedule(-0.5, 0.1, 1.0, 1.0, 5.0),
            Err(Error::Config { key, .. }) if key == "h"
        ));
        assert!(matches!(
            poisson_schedule(2.0, 0.1, 1.0, 1.0, 5.0),
            Err(Error::Config { key, .. }) if key == "h"
        ));
    }

    #[test]
    fn snapping() {
        assert_eq!(snap_step(1.0, 0.1).unwrap().1, 10);
        let (h, n) = snap_step(1.0, 0.3).unwrap();
        assert_eq!(n, 4);
        assert_eq!(h, 0.25);
    }

    fn quiet_problem() -> RsdeProblem<2> {
        RsdeProblem::new(
            Domain::centered_ball(1.0).unwrap(),
            Arc::new(|_, x: &Point<2>| -x),
            Arc::new(|_, _| Matrix::<2>::identity() * 0.7),
        )
    }

    #[test]
    fn trivial_parabolic_is_exact() {
        let p = quiet_problem().with_terminal(Arc::new(|_| 1.5));
        let r = solve_parabolic(&p, 0.0, &Vector2::new(0.2, 0.1), 1.0, 0.05, 500, 1, Some(1)).unwrap();
        assert_eq!(r.estimate, 1.5);
        assert_eq!(r.mc_error, 0.0);
    }

    #[test]
    fn trivial_elliptic_and_poisson_are_zero() {
        let p = quiet_problem().with_decay(Arc::new(|_, _| -1.0));
        let r = solve_elliptic_decay(&p, &Vector2::zeros(), 2.0, 0.1, 300, 1, Some(1)).unwrap();
        assert_eq!((r.estimate, r.mc_error), (0.0, 0.0));

        let s = poisson_schedule(0.2, 0.1, 1.0, 1.0, 3.0).unwrap();
        let r = solve_poisson(&quiet_problem(), &Vector2::zeros(), &s, 300, 1, Some(1)).unwrap();
        assert_eq!((r.estimate, r.mc_error), (0.0, 0.0));
    }

    #[test]
    fn elliptic_rejects_missing_decay() {
        let CatalogProblem::D2(e) = catalog("exp8_5").unwrap() else { panic!() };
        let r = solve_elliptic_decay(&e.problem, &Vector2::zeros(), 2.0, 0.1, 10, 1, Some(1));
        assert!(matches!(r, Err(Error::Usage(m)) if m.contains("Poisson")));
    }

    #[test]
    fn parabolic_quick_sanity() {
        let CatalogProblem::D2(e) = catalog("exp8_1").unwrap() else { panic!() };
        let r = solve_parabolic(&e.problem, 0.0, &e.defaults.x0, 1.0, 0.1, 20_000, 3, None).unwrap();
        assert!((r.estimate - 34.197).abs() < 4.0 * r.mc_error.max(0.05), "{r:?}");
    }
}
