//! One-step transition kernels for reflected diffusions.
//!
//! The first-order kernels share one pattern: a weak Euler predictor with
//! symmetric `+-1` noise, followed by a symmetric reflection through the
//! boundary when the predictor leaves the closed domain. On top of the
//! position they can carry the discount weight `Y` and the functional `Z`
//! of the Feynman-Kac representation.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::geometry::{BoundaryContact, Domain, Point};
use crate::models::{Matrix, RsdeProblem, SecondOrderData};
use crate::montecarlo::three_point;

/// Reflections applied to one predictor before giving up. More than one is
/// only needed when a step overshoots by more than the domain's width.
pub const MAX_FOLDS: u32 = 16;

/// Tolerance below which a mirrored point is treated as lying on the
/// boundary rather than outside it.
const FOLD_TOLERANCE: f64 = 1e-12;

/// One trajectory's state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainState<const D: usize> {
    pub t: f64,
    pub x: Point<D>,
    /// Discount weight, starts at 1.
    pub y: f64,
    /// Accumulated functional, starts at 0.
    pub z: f64,
}

impl<const D: usize> ChainState<D> {
    pub fn new(t: f64, x: Point<D>) -> Self {
        ChainState { t, x, y: 1.0, z: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind<const D: usize> {
    Interior,
    /// The predictor left the domain. `contact` is the first boundary
    /// contact; `folds` counts extra reflections needed to come back.
    Reflected { contact: BoundaryContact<D>, folds: u32 },
}

/// What happened during one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvent<const D: usize> {
    pub kind: EventKind<D>,
    /// The predictor `X'` before any reflection.
    pub x_predict: Point<D>,
    pub h_used: f64,
}

impl<const D: usize> StepEvent<D> {
    pub fn contact(&self) -> Option<&BoundaryContact<D>> {
        match &self.kind {
            EventKind::Interior => None,
            EventKind::Reflected { contact, .. } => Some(contact),
        }
    }

    pub fn is_reflected(&self) -> bool {
        matches!(self.kind, EventKind::Reflected { .. })
    }
}

/// `X' = X + h b(t, X) + sqrt(h) sigma(t, X) xi`.
pub fn euler_predict<const D: usize>(
    problem: &RsdeProblem<D>,
    t: f64,
    x: &Point<D>,
    h: f64,
    xi: &Point<D>,
) -> Point<D> {
    predict(problem, t, x, h, xi).0
}

/// Predictor together with a bound on how far it can land outside the
/// domain: twice the largest possible displacement from `x`.
fn predict<const D: usize>(
    problem: &RsdeProblem<D>,
    t: f64,
    x: &Point<D>,
    h: f64,
    xi: &Point<D>,
) -> (Point<D>, f64) {
    let b = (problem.b)(t, x);
    let s = (problem.sigma)(t, x);
    let sqrt_h = h.sqrt();
    let x_new = x + b * h + s * xi * sqrt_h;
    let reach = 2.0 * (h * b.norm() + (h * D as f64).sqrt() * s.norm());
    (x_new, reach)
}

/// Largest exterior distance a first-order predictor from `x` can reach,
/// up to the factor 2 safety margin used by the steppers.
pub fn displacement_bound<const D: usize>(problem: &RsdeProblem<D>, t: f64, x: &Point<D>, h: f64) -> f64 {
    let b = (problem.b)(t, x);
    let s = (problem.sigma)(t, x);
    h * b.norm() + (h * D as f64).sqrt() * s.norm()
}

fn check_point<const D: usize>(x: &Point<D>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Model(format!("non-finite {what} {:?}", x.as_slice())))
    }
}

/// Symmetric reflection of a predictor through its nearest boundary point.
///
/// Interior predictors are returned unchanged. `reach` bounds how far
/// outside the predictor may lie.
pub fn reflect<const D: usize>(
    domain: &Domain<D>,
    x_predict: &Point<D>,
    reach: f64,
    h_used: f64,
) -> Result<(Point<D>, StepEvent<D>)> {
    check_point(x_predict, "predictor")?;
    if domain.contains(x_predict) {
        return Ok((
            *x_predict,
            StepEvent {
                kind: EventKind::Interior,
                x_predict: *x_predict,
                h_used,
            },
        ));
    }
    let contact = domain.project_to_boundary(x_predict, reach)?;
    let mut x = contact.reflect(x_predict);
    let mut folds = 0;
    while domain.signed_distance(&x) < -FOLD_TOLERANCE {
        if folds == MAX_FOLDS {
            return Err(Error::ProjectionAmbiguity {
                distance: -domain.signed_distance(&x),
                reach,
            });
        }
        x = domain.project_to_boundary(&x, reach)?.reflect(&x);
        folds += 1;
    }
    Ok((
        x,
        StepEvent {
            kind: EventKind::Reflected { contact, folds },
            x_predict: *x_predict,
            h_used,
        },
    ))
}

/// Position-only step: weak Euler predictor plus normal reflection.
/// `Y` and `Z` pass through unchanged.
pub fn step_position<const D: usize>(
    problem: &RsdeProblem<D>,
    state: &ChainState<D>,
    h: f64,
    xi: &Point<D>,
) -> Result<(ChainState<D>, StepEvent<D>)> {
    let (x_pred, reach) = predict(problem, state.t, &state.x, h, xi);
    let (x, event) = reflect(&problem.domain, &x_pred, reach, h)?;
    Ok((
        ChainState {
            t: state.t + h,
            x,
            ..*state
        },
        event,
    ))
}

/// Full step of the `(t, X, Y, Z)` chain.
///
/// Interior: `Y += h c Y`, `Z += h g Y` with `c, g` at `(t_k, X_k)`. On
/// reflection with distance `r` at `x_pi` the boundary terms
/// `Y += (2 r gamma + 2 r^2 gamma^2) Y` and `Z -= (2 r psi + 2 r^2 psi gamma) Y`
/// are added, with `gamma, psi` at `(t_{k+1}, x_pi)`.
pub fn step_chain<const D: usize>(
    problem: &RsdeProblem<D>,
    state: &ChainState<D>,
    h: f64,
    xi: &Point<D>,
) -> Result<(ChainState<D>, StepEvent<D>)> {
    let (x_pred, reach) = predict(problem, state.t, &state.x, h, xi);
    let (x, event) = reflect(&problem.domain, &x_pred, reach, h)?;
    let c = (problem.c)(state.t, &state.x);
    let g = (problem.g)(state.t, &state.x);
    let t_next = state.t + h;
    let mut y = state.y + h * c * state.y;
    let mut z = state.z + h * g * state.y;
    if let Some(contact) = event.contact() {
        let r = contact.r;
        let gamma = (problem.gamma)(t_next, &contact.x_pi);
        let psi = (problem.psi)(t_next, &contact.x_pi);
        y += (2.0 * r * gamma + 2.0 * r * r * gamma * gamma) * state.y;
        z -= (2.0 * r * psi + 2.0 * r * r * psi * gamma) * state.y;
    }
    Ok((ChainState { t: t_next, x, y, z }, event))
}

/// Step of the Neumann-Poisson chain: `Z -= h phi1(X_k)`, and additionally
/// `Z -= 2 r phi2(x_pi)` on reflection. `Y` stays 1.
pub fn step_poisson<const D: usize>(
    problem: &RsdeProblem<D>,
    state: &ChainState<D>,
    h: f64,
    xi: &Point<D>,
) -> Result<(ChainState<D>, StepEvent<D>)> {
    let (x_pred, reach) = predict(problem, state.t, &state.x, h, xi);
    let (x, event) = reflect(&problem.domain, &x_pred, reach, h)?;
    let mut z = state.z - h * (problem.phi1)(&state.x);
    if let Some(contact) = event.contact() {
        z -= 2.0 * contact.r * (problem.phi2)(&contact.x_pi);
    }
    Ok((
        ChainState {
            t: state.t + h,
            x,
            y: state.y,
            z,
        },
        event,
    ))
}

/// Solver settings for oblique projections made by [`step_oblique`].
pub const OBLIQUE_TOLERANCE: f64 = 1e-13;
pub const OBLIQUE_MAX_ITER: usize = 100;

/// Position step with reflection along the oblique field `eta`:
/// `X = X' + 2 r eta(x_pi)` where `x_pi = X' + r eta(x_pi)`.
/// Only the position is updated.
pub fn step_oblique<const D: usize, F>(
    problem: &RsdeProblem<D>,
    eta: F,
    state: &ChainState<D>,
    h: f64,
    xi: &Point<D>,
) -> Result<(ChainState<D>, StepEvent<D>)>
where
    F: Fn(&Point<D>) -> Point<D>,
{
    let (x_pred, reach) = predict(problem, state.t, &state.x, h, xi);
    check_point(&x_pred, "predictor")?;
    let t_next = state.t + h;
    let domain = &problem.domain;
    if domain.contains(&x_pred) {
        return Ok((
            ChainState {
                t: t_next,
                x: x_pred,
                ..*state
            },
            StepEvent {
                kind: EventKind::Interior,
                x_predict: x_pred,
                h_used: h,
            },
        ));
    }
    if -domain.signed_distance(&x_pred) > reach.min(domain.uniqueness_reach()) {
        return Err(Error::ProjectionAmbiguity {
            distance: -domain.signed_distance(&x_pred),
            reach: reach.min(domain.uniqueness_reach()),
        });
    }
    let contact = domain.oblique_project(&eta, &x_pred, OBLIQUE_TOLERANCE, OBLIQUE_MAX_ITER)?;
    let mut x = contact.reflect(&x_pred);
    let mut folds = 0;
    while domain.signed_distance(&x) < -FOLD_TOLERANCE {
        if folds == MAX_FOLDS {
            return Err(Error::ProjectionAmbiguity {
                distance: -domain.signed_distance(&x),
                reach,
            });
        }
        x = domain
            .oblique_project(&eta, &x, OBLIQUE_TOLERANCE, OBLIQUE_MAX_ITER)?
            .reflect(&x);
        folds += 1;
    }
    Ok((
        ChainState {
            t: t_next,
            x,
            ..*state
        },
        StepEvent {
            kind: EventKind::Reflected { contact, folds },
            x_predict: x_pred,
            h_used: h,
        },
    ))
}

/// Outcome of one second-order trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondOrderRun<const D: usize> {
    pub x: Point<D>,
    pub steps: usize,
    /// Sum of the time steps taken.
    pub elapsed: f64,
    /// Steps that used a reduced step `theta` near the boundary.
    pub reduced_steps: usize,
    pub reflections: usize,
}

/// Pieces of the order-two one-step increment that do not depend on the
/// noise: `delta = a(theta) + B(theta) xi`.
struct Increment<const D: usize> {
    b: Point<D>,
    second: Point<D>,
    sigma: Matrix<D>,
    j_sigma: Matrix<D>,
}

impl<const D: usize> Increment<D> {
    fn new(data: &SecondOrderData<D>, problem: &RsdeProblem<D>, t: f64, x: &Point<D>) -> Self {
        let b = (problem.b)(t, x);
        let j = (data.jacobian)(t, x);
        let second = (data.time_derivative)(t, x) + j * b + (data.hessian_term)(t, x) * 0.5;
        Increment {
            b,
            second,
            sigma: data.sigma,
            j_sigma: j * data.sigma,
        }
    }

    /// Deterministic part and noise matrix for step `theta`.
    fn parts(&self, theta: f64) -> (Point<D>, Matrix<D>) {
        let drift = self.b * theta + self.second * (0.5 * theta * theta);
        let noise = self.sigma * theta.sqrt() + self.j_sigma * (0.5 * theta.powf(1.5));
        (drift, noise)
    }

    /// Largest exit excess `max(0, -sd(x + delta))` over all `3^D` noise
    /// realizations, with a cheap bound to skip enumeration deep inside.
    fn exit_excess(&self, domain: &Domain<D>, x: &Point<D>, sd_x: f64, theta: f64) -> f64 {
        let (drift, noise) = self.parts(theta);
        let bound = drift.norm() + noise.norm() * (3.0 * D as f64).sqrt();
        if sd_x > bound {
            return 0.0;
        }
        let s3 = 3f64.sqrt();
        let mut worst = 0.0f64;
        let mut xi = Point::<D>::zeros();
        for code in 0..3usize.pow(D as u32) {
            let mut c = code;
            for v in xi.iter_mut() {
                *v = match c % 3 {
                    0 => 0.0,
                    1 => s3,
                    _ => -s3,
                };
                c /= 3;
            }
            let y = x + drift + noise * xi;
            worst = worst.max(-domain.signed_distance(&y));
        }
        worst
    }
}

/// Bisection steps of the `theta` search.
pub const THETA_BISECTIONS: usize = 30;

/// Default layer width, in units of `h |sigma|_F`.
pub const DEFAULT_LAYER_FACTOR: f64 = 1.0;

/// Runs the adaptive second-order scheme from `(t0, x)` to `horizon`.
///
/// Away from the boundary layer every step is the order-two weak Taylor
/// increment with three-point noise. When some noise realization would
/// leave the domain, the step is shrunk to the largest `theta` in
/// `[h^2, h_k]` for which every realization stays within a layer of width
/// `layer_factor * h * |sigma|_F` outside the domain (or to `h^2` when none
/// does), and an exiting predictor is reflected symmetrically. Stops once
/// the elapsed time reaches `horizon - h^2`.
///
/// The reflection error grows with the square of the layer width, while
/// narrow layers force many short steps near the boundary.
#[allow(clippy::too_many_arguments)]
pub fn run_second_order<const D: usize, R: RngCore + ?Sized>(
    problem: &RsdeProblem<D>,
    t0: f64,
    x: &Point<D>,
    horizon: f64,
    h: f64,
    layer_factor: f64,
    rng: &mut R,
) -> Result<SecondOrderRun<D>> {
    let data = problem.second_order.as_ref().ok_or_else(|| {
        Error::Usage("the second-order scheme needs constant diffusion and drift derivatives".into())
    })?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Usage(format!("step must be positive, got {h}")));
    }
    if !(horizon > t0) {
        return Err(Error::Usage(format!("horizon {horizon} must exceed start time {t0}")));
    }
    let domain = &problem.domain;
    if !domain.contains(x) {
        return Err(Error::Usage(format!("start point {:?} is outside the domain", x.as_slice())));
    }
    let h2 = h * h;
    if !(layer_factor > 0.0 && layer_factor.is_finite()) {
        return Err(Error::Usage(format!("layer factor must be positive, got {layer_factor}")));
    }
    let width = layer_factor * h * data.sigma.norm();

    let mut tau = t0;
    let mut x = *x;
    let mut run = SecondOrderRun {
        x,
        steps: 0,
        elapsed: 0.0,
        reduced_steps: 0,
        reflections: 0,
    };
    loop {
        let h_k = if tau <= horizon - h { h } else { horizon - tau };
        let inc = Increment::new(data, problem, tau, &x);
        let sd_x = domain.signed_distance(&x);
        let (theta, in_layer) = if inc.exit_excess(domain, &x, sd_x, h_k) <= 0.0 {
            (h_k, false)
        } else {
            let ok = |theta: f64| inc.exit_excess(domain, &x, sd_x, theta) <= width;
            if ok(h_k) {
                (h_k, true)
            } else {
                let lo_theta = h2.min(h_k);
                if !ok(lo_theta) {
                    (lo_theta, true)
                } else {
                let (mut lo, mut hi) = (lo_theta, h_k);
                for _ in 0..THETA_BISECTIONS {
                    let mid = 0.5 * (lo + hi);
                    if ok(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                (lo, true)
                }
            }
        };

        let xi: Point<D> = three_point(rng);
        let (drift, noise) = inc.parts(theta);
        let x_pred = x + drift + noise * xi;
        if in_layer {
            run.reduced_steps += usize::from(theta < h_k);
            let (x_next, event) = reflect(domain, &x_pred, f64::INFINITY, theta)?;
            run.reflections += usize::from(event.is_reflected());
            x = x_next;
        } else {
            x = x_pred;
        }
        check_point(&x, "state")?;
        tau += theta;
        run.elapsed += theta;
        run.steps += 1;
        if tau >= horizon - h2 {
            break;
        }
    }
    run.x = x;
    Ok(run)
}
