//! Sampling from densities supported on a closed domain, and from their
//! normalised restriction to the boundary, with reflected gradient
//! dynamics.
//!
//! Interior samples are the chain's states after a burn-in. Boundary
//! samples are the contact points of reflections, weighted by `r / alpha`;
//! weighted averages of a boundary function then estimate its mean under
//! the boundary restriction of the density.

use std::sync::Arc;

use serde::Serialize;

use crate::ergodic::{steps_for, walk};
use crate::error::{Error, Result};
use crate::geometry::{Domain, Point};
use crate::models::{gradient_system, RsdeProblem};
use crate::montecarlo::{bernoulli_pm1, stream};
use crate::stepper::{step_position, ChainState};

/// Gradient of the log target density.
pub type LogDensityGradient<const D: usize> = Arc<dyn Fn(&Point<D>) -> Point<D> + Send + Sync>;

/// A boundary point with its weight `r / alpha` from one reflection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedBoundarySample<const D: usize> {
    pub z: Point<D>,
    pub weight: f64,
}

/// Chain settings shared by both samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainSettings {
    pub h: f64,
    pub seed: u64,
    /// Independent chains of one seed are told apart by this index.
    pub chain: u64,
}

impl ChainSettings {
    pub fn new(h: f64, seed: u64) -> Self {
        ChainSettings { h, seed, chain: 0 }
    }
}

/// Default burn-in, `10 / h` steps.
pub fn default_burn_in(h: f64) -> u64 {
    (10.0 / h).ceil() as u64
}

fn check<const D: usize>(problem: &RsdeProblem<D>, x0: &Point<D>, h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config("h", format!("must be positive, got {h}")));
    }
    if !problem.domain.contains(x0) {
        return Err(Error::config("x0", format!("{:?} is outside the domain", x0.as_slice())));
    }
    Ok(())
}

/// `n` consecutive states of `problem`'s reflected chain after `burn_in`
/// steps (default `10 / h`).
pub fn sample_interior_with<const D: usize>(
    problem: &RsdeProblem<D>,
    x0: &Point<D>,
    settings: ChainSettings,
    n: usize,
    burn_in: Option<u64>,
) -> Result<Vec<Point<D>>> {
    check(problem, x0, settings.h)?;
    let mut rng = stream(settings.seed, settings.chain);
    let burn = burn_in.unwrap_or_else(|| default_burn_in(settings.h));
    let mut state = ChainState::new(0.0, *x0);
    let mut out = Vec::with_capacity(n);
    for k in 0..burn + n as u64 {
        let xi: Point<D> = bernoulli_pm1(&mut rng);
        state = step_position(problem, &state, settings.h, &xi)?.0;
        if k >= burn {
            out.push(state.x);
        }
    }
    Ok(out)
}

/// Reflection contacts of `problem`'s chain over `[0, horizon]`, weighted
/// by `r / alpha`. No burn-in, so that weighted averages coincide with the
/// time-averaged boundary estimator on the same stream.
pub fn sample_boundary_with<const D: usize>(
    problem: &RsdeProblem<D>,
    x0: &Point<D>,
    settings: ChainSettings,
    horizon: f64,
) -> Result<Vec<WeightedBoundarySample<D>>> {
    check(problem, x0, settings.h)?;
    let mut rng = stream(settings.seed, settings.chain);
    let mut out = Vec::new();
    walk(problem, x0, settings.h, steps_for(horizon, settings.h), &mut rng, |_, ev| {
        if let Some(c) = ev.contact() {
            let a = problem.alpha(0.0, &c.x_pi)?;
            out.push(WeightedBoundarySample {
                z: c.x_pi,
                weight: c.r / a,
            });
        }
        Ok(())
    })?;
    Ok(out)
}

/// Interior samples of the density with log-gradient `target` on `domain`,
/// using reflected gradient dynamics with noise level `sigma`.
#[allow(clippy::too_many_arguments)]
pub fn sample_interior<const D: usize>(
    target: LogDensityGradient<D>,
    domain: Domain<D>,
    sigma: f64,
    x0: &Point<D>,
    h: f64,
    n: usize,
    burn_in: Option<u64>,
    seed: u64,
) -> Result<Vec<Point<D>>> {
    let problem = gradient_system(target, sigma, domain);
    sample_interior_with(&problem, x0, ChainSettings::new(h, seed), n, burn_in)
}

/// Weighted boundary samples of the density with log-gradient `target`.
pub fn sample_boundary<const D: usize>(
    target: LogDensityGradient<D>,
    domain: Domain<D>,
    sigma: f64,
    x0: &Point<D>,
    h: f64,
    horizon: f64,
    seed: u64,
) -> Result<Vec<WeightedBoundarySample<D>>> {
    let problem = gradient_system(target, sigma, domain);
    sample_boundary_with(&problem, x0, ChainSettings::new(h, seed), horizon)
}

/// `sum w f(z) / sum w`; `None` without samples.
pub fn weighted_mean<const D: usize>(
    samples: &[WeightedBoundarySample<D>],
    f: impl Fn(&Point<D>) -> f64,
) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for s in samples {
        num += s.weight * f(&s.z);
        den += s.weight;
    }
    (den > 0.0).then(|| num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ergodic::time_average;
    use crate::models::{catalog, CatalogProblem};
    use nalgebra::Vector2;

    #[test]
    fn frozen_chain_repeats_start() {
        let x0 = Vector2::new(0.3, -0.2);
        let s = sample_interior(
            Arc::new(|_: &Point<2>| Point::<2>::zeros()),
            Domain::centered_ball(1.0).unwrap(),
            0.0,
            &x0,
            0.1,
            50,
            Some(5),
            1,
        )
        .unwrap();
        assert_eq!(s.len(), 50);
        assert!(s.iter().all(|p| *p == x0));
    }

    #[test]
    fn interior_samples_follow_chain() {
        let CatalogProblem::D2(e) = catalog("exp8_2").unwrap() else { panic!() };
        let settings = ChainSettings::new(0.1, 4);
        let s = sample_interior_with(&e.problem, &e.defaults.x0, settings, 30, Some(7)).unwrap();
        let mut rng = stream(4, 0);
        let mut expected = Vec::new();
        walk(&e.problem, &e.defaults.x0, 0.1, 37, &mut rng, |_, _| Ok(())).unwrap();
        let mut rng = stream(4, 0);
        let mut k = 0;
        walk(&e.problem, &e.defaults.x0, 0.1, 37, &mut rng, |xk, _| {
            k += 1;
            if k > 8 {
                expected.push(*xk);
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(&s[..29], &expected[..]);
        assert_eq!(s.len(), 30);
    }

    #[test]
    fn boundary_weighted_mean_matches_time_average() {
        let CatalogProblem::D3(e) = catalog("exp8_3").unwrap() else { panic!() };
        let h = 0.05;
        let steps = 4000;
        let samples =
            sample_boundary_with(&e.problem, &e.defaults.x0, ChainSettings::new(h, 9), steps as f64 * h).unwrap();
        let t = time_average(&e.problem, &e.defaults.x0, h, 1, steps, 9).unwrap();
        let w = weighted_mean(&samples, |z| z.sum()).unwrap();
        assert_eq!(w, t.psi_prime_hat.unwrap());
        for s in &samples {
            assert!(e.problem.domain.signed_distance(&s.z).abs() <= 1e-10);
            assert!(s.weight >= 0.0);
        }
    }

    #[test]
    fn constant_boundary_function() {
        let CatalogProblem::D2(e) = catalog("von_mises").unwrap() else { panic!() };
        let s = sample_boundary_with(&e.problem, &e.defaults.x0, ChainSettings::new(0.05, 2), 50.0).unwrap();
        assert!((weighted_mean(&s, |_| 1.25).unwrap() - 1.25).abs() < 1e-14);
    }

    #[test]
    fn non_finite_gradient_is_a_model_error() {
        let r = sample_interior(
            Arc::new(|_: &Point<2>| Point::<2>::new(f64::NAN, 0.0)),
            Domain::centered_ball(1.0).unwrap(),
            1.0,
            &Vector2::zeros(),
            0.1,
            10,
            Some(0),
            0,
        );
        assert!(matches!(r, Err(Error::Model(_))));
    }
}
