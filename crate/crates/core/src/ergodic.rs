//! Ergodic limits of reflected diffusions, inside the domain and on its
//! boundary.
//!
//! Time averages follow one long trajectory; boundary quantities are
//! weighted by the reflection distance `r` divided by the co-normal weight
//! `alpha` at the contact point. Ensemble averages run many independent
//! trajectories for a fixed horizon.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::models::RsdeProblem;
use crate::montecarlo::{bernoulli_pm1, run_trajectories, stream, McAccumulator, McSummary, Merge, TrajectoryRng};
use crate::stepper::{step_position, ChainState, StepEvent};

/// Raw sums of one stretch of trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErgodicSums {
    pub n_steps: u64,
    pub sum_phi: f64,
    /// Sum of `r / alpha` over reflections.
    pub sum_w: f64,
    /// Sum of `(r / alpha) psi` over reflections.
    pub sum_wpsi: f64,
    pub sum_r: f64,
    pub sum_rpsi: f64,
}

impl ErgodicSums {
    fn minus(&self, earlier: &ErgodicSums) -> ErgodicSums {
        ErgodicSums {
            n_steps: self.n_steps - earlier.n_steps,
            sum_phi: self.sum_phi - earlier.sum_phi,
            sum_w: self.sum_w - earlier.sum_w,
            sum_wpsi: self.sum_wpsi - earlier.sum_wpsi,
            sum_r: self.sum_r - earlier.sum_r,
            sum_rpsi: self.sum_rpsi - earlier.sum_rpsi,
        }
    }

    fn estimates(&self, h: f64) -> [Option<f64>; 5] {
        let n = self.n_steps as f64;
        let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
        if self.n_steps == 0 {
            return [None; 5];
        }
        [
            Some(self.sum_phi / n),
            Some(2.0 * self.sum_w / (n * h)),
            Some(2.0 * self.sum_wpsi / (n * h)),
            ratio(self.sum_wpsi, self.sum_w),
            ratio(self.sum_rpsi, self.sum_r),
        ]
    }
}

/// Running sums of a time-averaging run, with per-block copies for the
/// batch-means error.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicAccumulator {
    pub h: f64,
    pub total: ErgodicSums,
    block_start: ErgodicSums,
    /// Sums restricted to each completed block.
    pub blocks: Vec<ErgodicSums>,
}

/// Time-averaged estimators with their batch-means errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeAverages {
    pub phi_hat: f64,
    pub kappa_hat: f64,
    pub psi_hat: f64,
    /// `psi_hat / kappa_hat`; absent without boundary contact.
    pub psi_prime_hat: Option<f64>,
    /// `sum r psi / sum r`; absent without boundary contact.
    pub psi_tilde_hat: Option<f64>,
    pub stat_err: StatErrors,
    pub n_steps: u64,
    pub blocks: usize,
}

/// `2 sqrt(J_L)` per estimator; absent with fewer than two blocks or when
/// some block leaves the estimator undefined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StatErrors {
    pub phi: Option<f64>,
    pub kappa: Option<f64>,
    pub psi: Option<f64>,
    pub psi_prime: Option<f64>,
    pub psi_tilde: Option<f64>,
}

/// Batch-means statistic
/// `J_L = (1/L) ((1/(L-1)) sum f_i^2 - ((1/L) sum f_i)^2)` of block
/// estimates `f_i`.
pub fn batch_means_variance(values: &[f64]) -> Option<f64> {
    let l = values.len();
    if l < 2 {
        return None;
    }
    let lf = l as f64;
    let sum: f64 = values.iter().sum();
    let sum_sq: f64 = values.iter().map(|v| v * v).sum();
    let mean = sum / lf;
    Some(((sum_sq / (lf - 1.0) - mean * mean) / lf).max(0.0))
}

impl ErgodicAccumulator {
    pub fn new(h: f64) -> Self {
        ErgodicAccumulator {
            h,
            total: ErgodicSums::default(),
            block_start: ErgodicSums::default(),
            blocks: Vec::new(),
        }
    }

    /// Folds in one step: `phi(x_k)` of the state the step started from
    /// and, on reflection, the boundary weight `r / alpha(x_pi)`.
    pub fn accumulate<const D: usize>(
        &mut self,
        event: &StepEvent<D>,
        x_k: &Point<D>,
        phi: impl Fn(&Point<D>) -> f64,
        psi: impl Fn(&Point<D>) -> f64,
        alpha: impl Fn(&Point<D>) -> Result<f64>,
    ) -> Result<()> {
        self.total.n_steps += 1;
        self.total.sum_phi += phi(x_k);
        if let Some(c) = event.contact() {
            let a = alpha(&c.x_pi)?;
            if !(a > 0.0) {
                return Err(Error::Model(format!("co-normal weight must be positive, got {a}")));
            }
            let w = c.r / a;
            let p = psi(&c.x_pi);
            self.total.sum_w += w;
            self.total.sum_wpsi += w * p;
            self.total.sum_r += c.r;
            self.total.sum_rpsi += c.r * p;
        }
        Ok(())
    }

    /// Closes the current block.
    pub fn end_block(&mut self) {
        self.blocks.push(self.total.minus(&self.block_start));
        self.block_start = self.total;
    }

    pub fn finalize(&self) -> Result<TimeAverages> {
        if self.total.n_steps == 0 {
            return Err(Error::Usage("no steps were accumulated".into()));
        }
        let est = self.total.estimates(self.h);
        let per_block: Vec<[Option<f64>; 5]> = self.blocks.iter().map(|b| b.estimates(self.h)).collect();
        let err = |i: usize| -> Option<f64> {
            let vals: Option<Vec<f64>> = per_block.iter().map(|e| e[i]).collect();
            batch_means_variance(&vals?).map(|j| 2.0 * j.sqrt())
        };
        Ok(TimeAverages {
            phi_hat: est[0].unwrap_or(f64::NAN),
            kappa_hat: est[1].unwrap_or(f64::NAN),
            psi_hat: est[2].unwrap_or(f64::NAN),
            psi_prime_hat: est[3],
            psi_tilde_hat: est[4],
            stat_err: StatErrors {
                phi: err(0),
                kappa: err(1),
                psi: err(2),
                psi_prime: err(3),
                psi_tilde: err(4),
            },
            n_steps: self.total.n_steps,
            blocks: self.blocks.len(),
        })
    }
}

/// Number of steps of size `h` covering `duration`, at least one.
pub fn steps_for(duration: f64, h: f64) -> u64 {
    ((duration / h) * (1.0 + 1e-12)).round().max(1.0) as u64
}

/// Runs `n_steps` position steps from `x0` on `rng`, calling
/// `visit(x_k, event)` after each.
pub fn walk<const D: usize>(
    problem: &RsdeProblem<D>,
    x0: &Point<D>,
    h: f64,
    n_steps: u64,
    rng: &mut TrajectoryRng,
    mut visit: impl FnMut(&Point<D>, &StepEvent<D>) -> Result<()>,
) -> Result<Point<D>> {
    let mut state = ChainState::new(0.0, *x0);
    for _ in 0..n_steps {
        let xi: Point<D> = bernoulli_pm1(rng);
        let (next, event) = step_position(problem, &state, h, &xi)?;
        visit(&state.x, &event)?;
        state = next;
    }
    Ok(state.x)
}

fn check_start<const D: usize>(problem: &RsdeProblem<D>, x0: &Point<D>, h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config("h", format!("must be positive, got {h}")));
    }
    if !problem.domain.contains(x0) {
        return Err(Error::config("x0", format!("{:?} is outside the domain", x0.as_slice())));
    }
    Ok(())
}

/// Time averages along one trajectory of `blocks * block_steps` steps,
/// drawn from stream 0 of `seed`. `phi` and `psi` come from the problem.
pub fn time_average<const D: usize>(
    problem: &RsdeProblem<D>,
    x0: &Point<D>,
    h: f64,
    blocks: usize,
    block_steps: u64,
    seed: u64,
) -> Result<TimeAverages> {
    check_start(problem, x0, h)?;
    if blocks == 0 || block_steps == 0 {
        return Err(Error::config("blocks", "need at least one block of at least one step"));
    }
    let mut acc = ErgodicAccumulator::new(h);
    let mut rng = stream(seed, 0);
    let mut x = *x0;
    let phi = |x: &Point<D>| (problem.phi)(x);
    let psi = |z: &Point<D>| (problem.psi)(0.0, z);
    let alpha = |z: &Point<D>| problem.alpha(0.0, z);
    for _ in 0..blocks {
        x = walk(problem, &x, h, block_steps, &mut rng, |xk, ev| {
            acc.accumulate(ev, xk, phi, psi, alpha)
        })?;
        acc.end_block();
    }
    acc.finalize()
}

/// Per-trajectory boundary sums of the ensemble estimators.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BoundaryMoments {
    m: u64,
    // ratio of means, last step excluded
    sum_a: f64,
    sum_b: f64,
    sum_aa: f64,
    sum_bb: f64,
    sum_ab: f64,
    zero_denominators: u64,
    ratios: McAccumulator,
}

impl Merge for BoundaryMoments {
    fn merge(&mut self, o: Self) {
        self.m += o.m;
        self.sum_a += o.sum_a;
        self.sum_b += o.sum_b;
        self.sum_aa += o.sum_aa;
        self.sum_bb += o.sum_bb;
        self.sum_ab += o.sum_ab;
        self.zero_denominators += o.zero_denominators;
        self.ratios.merge(o.ratios);
    }
}

/// Ensemble estimates of the normalised boundary mean of `psi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleBoundary {
    /// `E[sum (r/alpha) psi] / E[sum r/alpha]` over the first `N - 1` steps.
    pub ratio_of_means: Option<f64>,
    /// Delta-method half-width `2 sqrt(var)` of `ratio_of_means`.
    pub ratio_of_means_err: Option<f64>,
    /// Mean over trajectories of the per-trajectory ratio over all `N`
    /// steps. Trajectories that never touch the boundary are skipped.
    pub mean_of_ratios: Option<f64>,
    pub mean_of_ratios_err: Option<f64>,
    pub trajectories: u64,
    pub trajectories_without_contact: u64,
}

/// Runs `m` trajectories of `N = horizon / h` steps from `x0`.
pub fn ensemble_boundary<const D: usize>(
    problem: &RsdeProblem<D>,
    x0: &Point<D>,
    horizon: f64,
    h: f64,
    m: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<EnsembleBoundary> {
    check_start(problem, x0, h)?;
    let n = steps_for(horizon, h);
    let acc: BoundaryMoments = run_trajectories(m, seed, workers, |acc: &mut BoundaryMoments, rng, _| {
        let (mut a, mut b) = (0.0, 0.0);
        let (mut a_last, mut b_last) = (0.0, 0.0);
        let mut k = 0u64;
        walk(problem, x0, h, n, rng, |_, ev| {
            k += 1;
            if let Some(c) = ev.contact() {
                let w = c.r / problem.alpha(0.0, &c.x_pi)?;
                let p = (problem.psi)(0.0, &c.x_pi);
                if k == n {
                    a_last = w * p;
                    b_last = w;
                } else {
                    a += w * p;
                    b += w;
                }
            }
            Ok(())
        })?;
        acc.m += 1;
        acc.sum_a += a;
        acc.sum_b += b;
        acc.sum_aa += a * a;
        acc.sum_bb += b * b;
        acc.sum_ab += a * b;
        let (a_all, b_all) = (a + a_last, b + b_last);
        if b_all > 0.0 {
            acc.ratios.push(a_all / b_all);
        } else {
            acc.zero_denominators += 1;
        }
        Ok(())
    })?;
    let mf = acc.m as f64;
    let (ea, eb) = (acc.sum_a / mf, acc.sum_b / mf);
    let ratio = (eb > 0.0).then(|| ea / eb);
    let ratio_err = ratio.map(|r| {
        // variance of A - r B, population divisor
        let var = acc.sum_aa / mf - 2.0 * r * acc.sum_ab / mf + r * r * acc.sum_bb / mf
            - (ea - r * eb).powi(2);
        2.0 * (var.max(0.0) / mf).sqrt() / eb
    });
    let s = acc.ratios.summary();
    Ok(EnsembleBoundary {
        ratio_of_means: ratio,
        ratio_of_means_err: ratio_err,
        mean_of_ratios: s.map(|s| s.mean),
        mean_of_ratios_err: s.map(|s| s.ci_halfwidth),
        trajectories: acc.m,
        trajectories_without_contact: acc.zero_denominators,
    })
}

/// Monte Carlo mean of `phi(X_N)` over `m` trajectories of
/// `N = horizon / h` steps.
pub fn ensemble_phi<const D: usize>(
    problem: &RsdeProblem<D>,
    x0: &Point<D>,
    horizon: f64,
    h: f64,
    m: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<McSummary> {
    check_start(problem, x0, h)?;
    if m == 0 {
        return Err(Error::config("M", "must be at least 1"));
    }
    let n = steps_for(horizon, h);
    let acc: McAccumulator = run_trajectories(m, seed, workers, |acc: &mut McAccumulator, rng, _| {
        let x = walk(problem, x0, h, n, rng, |_, _| Ok(()))?;
        acc.push((problem.phi)(&x));
        Ok(())
    })?;
    Ok(acc.summary().expect("m >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundaryContact, Domain};
    use crate::models::{catalog, CatalogProblem, Matrix};
    use crate::stepper::EventKind;
    use nalgebra::Vector2;
    use std::sync::Arc;

    fn interior_event() -> StepEvent<2> {
        StepEvent {
            kind: EventKind::Interior,
            x_predict: Vector2::zeros(),
            h_used: 0.1,
        }
    }

    fn reflected_event(r: f64) -> StepEvent<2> {
        let z = Vector2::new(1.0, 0.0);
        StepEvent {
            kind: EventKind::Reflected {
                contact: BoundaryContact {
                    x_pi: z,
                    r,
                    nu: -z,
                    direction: -z,
                },
                folds: 0,
            },
            x_predict: z * (1.0 + r),
            h_used: 0.1,
        }
    }

    #[test]
    fn accumulate_examples() {
        let mut acc = ErgodicAccumulator::new(0.1);
        acc.accumulate(&interior_event(), &Vector2::zeros(), |_| 3.0, |_| 2.0, |_| Ok(1.0))
            .unwrap();
        assert_eq!(acc.total.sum_phi, 3.0);
        assert_eq!(acc.total.sum_w, 0.0);
        acc.accumulate(&reflected_event(0.1), &Vector2::zeros(), |_| 3.0, |_| 2.0, |_| Ok(1.0))
            .unwrap();
        assert!((acc.total.sum_w - 0.1).abs() < 1e-15);
        assert!((acc.total.sum_wpsi - 0.2).abs() < 1e-15);
        assert!(acc
            .accumulate(&reflected_event(0.1), &Vector2::zeros(), |_| 0.0, |_| 0.0, |_| Ok(0.0))
            .is_err());
    }

    #[test]
    fn no_contact_means_zero_kappa_and_absent_ratio() {
        let mut acc = ErgodicAccumulator::new(0.1);
        for _ in 0..10 {
            acc.accumulate(&interior_event(), &Vector2::zeros(), |_| 1.0, |_| 1.0, |_| Ok(1.0))
                .unwrap();
        }
        let t = acc.finalize().unwrap();
        assert_eq!(t.kappa_hat, 0.0);
        assert_eq!(t.psi_prime_hat, None);
        assert_eq!(t.psi_tilde_hat, None);
        assert_eq!(t.stat_err.phi, None);
    }

    #[test]
    fn batch_means_formula() {
        assert_eq!(batch_means_variance(&[1.0]), None);
        let j = batch_means_variance(&[1.0, 2.0, 3.0]).unwrap();
        // (1/3) * ((1 + 4 + 9) / 2 - 4)
        assert!((j - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_psi_gives_constant_ratio() {
        let CatalogProblem::D3(e) = catalog("exp8_3").unwrap() else { panic!() };
        let p = e.problem.clone().with_neumann(Arc::new(|_, _| 0.75));
        let t = time_average(&p, &e.defaults.x0, 0.1, 4, 500, 1).unwrap();
        assert!((t.psi_prime_hat.unwrap() - 0.75).abs() < 1e-14);
        assert!((t.psi_tilde_hat.unwrap() - 0.75).abs() < 1e-14);
        assert!(t.kappa_hat > 0.0);
        assert!((t.psi_prime_hat.unwrap() - t.psi_hat / t.kappa_hat).abs() < 1e-14);

        let b = ensemble_boundary(&p, &e.defaults.x0, 5.0, 0.1, 200, 4, Some(1)).unwrap();
        assert!((b.ratio_of_means.unwrap() - 0.75).abs() < 1e-14);
        assert!((b.mean_of_ratios.unwrap() - 0.75).abs() < 1e-14);
    }

    #[test]
    fn frozen_dynamics_ensemble_phi() {
        let p = RsdeProblem::new(
            Domain::<2>::centered_ball(1.0).unwrap(),
            Arc::new(|_, _| Point::<2>::zeros()),
            Arc::new(|_, _| Matrix::<2>::zeros()),
        )
        .with_terminal(Arc::new(|x| x[0] + 2.0));
        let x0 = Vector2::new(0.25, 0.0);
        let s = ensemble_phi(&p, &x0, 1.0, 0.1, 100, 0, Some(1)).unwrap();
        assert_eq!(s.mean, 2.25);
        assert_eq!(s.ci_halfwidth, 0.0);
    }

    #[test]
    fn phi_hat_stays_in_range() {
        let CatalogProblem::D2(e) = catalog("exp8_2").unwrap() else { panic!() };
        let t = time_average(&e.problem, &e.defaults.x0, 0.2, 10, 200, 5).unwrap();
        assert!(t.phi_hat >= 0.0 && t.phi_hat <= 4.0);
        assert_eq!(t.n_steps, 2000);
        assert_eq!(t.blocks, 10);
        assert!(t.stat_err.phi.unwrap() > 0.0);
    }

    #[test]
    fn rejects_bad_start() {
        let CatalogProblem::D2(e) = catalog("exp8_2").unwrap() else { panic!() };
        let outside = Vector2::new(3.0, 0.0);
        assert!(matches!(
            time_average(&e.problem, &outside, 0.1, 2, 10, 0),
            Err(Error::Config { .. })
        ));
    }
}
