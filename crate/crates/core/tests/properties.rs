//! Property tests of geometric, stepping and estimator invariants.

use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use reflectwalk::ergodic::{time_average, walk};
use reflectwalk::geometry::{Domain, Point};
use reflectwalk::models::{catalog, gradient_system, CatalogProblem, RsdeProblem};
use reflectwalk::montecarlo::{bernoulli_pm1, run_trajectories, stream, McAccumulator, Merge};
use reflectwalk::pde::{poisson_schedule, solve_parabolic, solve_poisson};
use reflectwalk::stepper::{displacement_bound, step_chain, step_position, ChainState};

fn d2(name: &str) -> reflectwalk::models::CatalogEntry<2> {
    match catalog(name).unwrap() {
        CatalogProblem::D2(e) => e,
        CatalogProblem::D3(_) => panic!("{name} is three-dimensional"),
    }
}

fn d3(name: &str) -> reflectwalk::models::CatalogEntry<3> {
    match catalog(name).unwrap() {
        CatalogProblem::D3(e) => e,
        CatalogProblem::D2(_) => panic!("{name} is two-dimensional"),
    }
}

fn unit2(angle: f64) -> Vector2<f64> {
    Vector2::new(angle.cos(), angle.sin())
}

fn unit3(a: f64, b: f64) -> Vector3<f64> {
    Vector3::new(b.cos() * a.cos(), b.cos() * a.sin(), b.sin())
}

/// Exterior point of the standard torus at depth `depth` in the meridian
/// direction `(phi, theta)`.
fn torus_exterior(phi: f64, theta: f64, depth: f64) -> Vector3<f64> {
    let spine = Vector3::new(4.0 * phi.cos(), 4.0 * phi.sin(), 0.0);
    spine + unit3(phi, theta) * (2.0 + depth)
}

/// Runs `n` steps with `check` after each.
fn fuzz<const D: usize>(
    problem: &RsdeProblem<D>,
    x0: &Point<D>,
    h: f64,
    n: u64,
    seed: u64,
    mut check: impl FnMut(&Point<D>, &reflectwalk::stepper::StepEvent<D>, &Point<D>),
) {
    let mut rng = stream(seed, 0);
    let mut s = ChainState::new(0.0, *x0);
    for _ in 0..n {
        let xi: Point<D> = bernoulli_pm1(&mut rng);
        let (next, ev) = step_position(problem, &s, h, &xi).unwrap();
        check(&s.x, &ev, &next.x);
        s = next;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn disk_reflection_symmetry(angle in 0.0..std::f64::consts::TAU, depth in 1e-9..1.5f64) {
        let disk = Domain::<2>::centered_ball(2.0).unwrap();
        let x = unit2(angle) * (2.0 + depth);
        let c = disk.project_to_boundary(&x, 2.0).unwrap();
        let y = c.reflect(&x);
        prop_assert!(disk.signed_distance(&y) >= -1e-10);
        prop_assert!(((y - c.x_pi).norm() - c.r).abs() <= 1e-10);
        prop_assert!((c.x_pi - (x + c.direction * c.r)).norm() <= 1e-10);
        prop_assert!(disk.signed_distance(&c.x_pi).abs() <= 1e-10);
        // mapping the reflected point back through the same contact
        let back = y - c.direction * (2.0 * c.r);
        prop_assert!((back - x).norm() <= 1e-10);
    }

    #[test]
    fn torus_reflection_symmetry(phi in 0.0..std::f64::consts::TAU, theta in 0.0..std::f64::consts::TAU, depth in 1e-9..1.5f64) {
        let torus = Domain::<3>::torus(4.0, 2.0).unwrap();
        let x = torus_exterior(phi, theta, depth);
        let c = torus.project_to_boundary(&x, 1.9).unwrap();
        let y = c.reflect(&x);
        prop_assert!(torus.signed_distance(&y) >= -1e-10);
        prop_assert!(((y - c.x_pi).norm() - c.r).abs() <= 1e-10);
        prop_assert!((c.nu.norm() - 1.0).abs() <= 1e-12);
        prop_assert!(((y - c.direction * (2.0 * c.r)) - x).norm() <= 1e-10);
    }

    #[test]
    fn projection_is_idempotent(angle in 0.0..std::f64::consts::TAU, b in -1.5..1.5f64, eps in 1e-8..1e-3f64) {
        let sphere = Domain::<3>::centered_ball(1.0).unwrap();
        let z = unit3(angle, b);
        let c = sphere.project_to_boundary(&(z * 1.3), 1.0).unwrap();
        let again = sphere.project_to_boundary(&(c.x_pi - c.nu * eps), 1.0).unwrap();
        prop_assert!((again.x_pi - c.x_pi).norm() <= 1e-9);

        let torus = Domain::<3>::torus(4.0, 2.0).unwrap();
        let c = torus.project_to_boundary(&torus_exterior(angle, b * 2.0, 0.4), 1.9).unwrap();
        let again = torus.project_to_boundary(&(c.x_pi - c.nu * eps), 1.9).unwrap();
        prop_assert!((again.x_pi - c.x_pi).norm() <= 1e-9);
    }

    #[test]
    fn signed_distance_examples_hold(angle in 0.0..std::f64::consts::TAU, r in 0.0..3.0f64) {
        let disk = Domain::<2>::centered_ball(2.0).unwrap();
        prop_assert!((disk.signed_distance(&(unit2(angle) * r)) - (2.0 - r)).abs() <= 1e-12);
        prop_assert!((disk.inward_normal(&(unit2(angle) * 2.0)).norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn scaled_psi_scales_boundary_estimators(seed in 0u64..1000, k in -4i32..5) {
        let base = d3("exp8_3");
        let c = 2f64.powi(k);
        let scaled = base.problem.clone().with_neumann(Arc::new(move |_, z: &Point<3>| c * z.sum()));
        let a = time_average(&base.problem, &base.defaults.x0, 0.05, 4, 500, seed).unwrap();
        let b = time_average(&scaled, &base.defaults.x0, 0.05, 4, 500, seed).unwrap();
        prop_assert_eq!(b.psi_hat, c * a.psi_hat);
        prop_assert_eq!(b.psi_prime_hat, a.psi_prime_hat.map(|v| c * v));
        prop_assert_eq!(b.psi_tilde_hat, a.psi_tilde_hat.map(|v| c * v));
        prop_assert_eq!(b.kappa_hat, a.kappa_hat);
    }

    #[test]
    fn estimator_consistency(seed in 0u64..1000, shift in -5.0..5.0f64, scale in 0.1..10.0f64) {
        let base = d3("exp8_3");
        let shifted = base.problem.clone().with_terminal(Arc::new(move |x: &Point<3>| x.sum() + shift));
        let scaled = base.problem.clone().with_neumann(Arc::new(move |_, z: &Point<3>| scale * z.sum()));
        let a = time_average(&base.problem, &base.defaults.x0, 0.05, 4, 500, seed).unwrap();
        let b = time_average(&shifted, &base.defaults.x0, 0.05, 4, 500, seed).unwrap();
        let s = time_average(&scaled, &base.defaults.x0, 0.05, 4, 500, seed).unwrap();
        prop_assert!((b.phi_hat - (a.phi_hat + shift)).abs() <= 1e-12);
        prop_assert!((s.psi_hat - scale * a.psi_hat).abs() <= 1e-12 * scale.max(1.0) * a.psi_hat.abs().max(1.0));
        // phi = x1 + x2 + x3 on the unit ball
        let lim = 3f64.sqrt();
        prop_assert!(a.phi_hat >= -lim && a.phi_hat <= lim);
        if let Some(pp) = a.psi_prime_hat {
            prop_assert!((pp - a.psi_hat / a.kappa_hat).abs() <= 1e-14);
            // additive noise: alpha is constant, so both ratios agree
            prop_assert!((a.psi_tilde_hat.unwrap() - pp).abs() <= 1e-14);
        }
    }

    #[test]
    fn merge_is_order_deterministic(values in proptest::collection::vec(-1e3..1e3f64, 1..200), cut in 0usize..200) {
        let cut = cut.min(values.len());
        let whole: McAccumulator = values.iter().copied().collect();
        let mut left: McAccumulator = values[..cut].iter().copied().collect();
        let right: McAccumulator = values[cut..].iter().copied().collect();
        left.merge(right);
        let (a, b) = (whole.summary().unwrap(), left.summary().unwrap());
        prop_assert_eq!(a.count, b.count);
        prop_assert!((a.mean - b.mean).abs() <= 1e-9 * (1.0 + a.mean.abs()));
        prop_assert!((a.variance_of_mean - b.variance_of_mean).abs() <= 1e-9 * (1.0 + a.variance_of_mean));
        let mut again: McAccumulator = values[..cut].iter().copied().collect();
        again.merge(values[cut..].iter().copied().collect());
        prop_assert_eq!(again, left);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn confinement_and_layer_bound_disk(seed in 0u64..u64::MAX) {
        for name in ["exp8_1", "exp8_2", "von_mises"] {
            let e = d2(name);
            let h = if name == "von_mises" { 0.025 } else { 0.1 };
            fuzz(&e.problem, &e.defaults.x0, h, 10_000, seed, |x, ev, next| {
                assert!(e.problem.domain.contains(next), "{name}: {next:?} left the domain");
                if let Some(c) = ev.contact() {
                    let bound = displacement_bound(&e.problem, 0.0, x, h);
                    assert!(c.r <= bound + 1e-12, "{name}: r {} above {bound}", c.r);
                }
            });
        }
    }

    #[test]
    fn confinement_and_layer_bound_3d(seed in 0u64..u64::MAX) {
        // the Fisher drift grows like 1/|x|, so its chain needs a finer step
        for (name, h) in [("exp8_3", 0.02), ("exp8_4", 0.1)] {
            let e = d3(name);
            fuzz(&e.problem, &e.defaults.x0, h, 10_000, seed, |x, ev, next| {
                assert!(e.problem.domain.contains(next), "{name}: {next:?} left the domain");
                if let Some(c) = ev.contact() {
                    assert!(c.r <= displacement_bound(&e.problem, 0.0, x, h) + 1e-12);
                }
            });
        }
    }

    #[test]
    fn y_stays_in_unit_interval(seed in 0u64..u64::MAX, h in 0.01..=0.1f64) {
        let e = d3("exp8_4");
        let mut rng = stream(seed, 0);
        let mut s = ChainState::new(0.0, e.defaults.x0);
        for _ in 0..(4.0 / h) as usize {
            let xi: Point<3> = bernoulli_pm1(&mut rng);
            s = step_chain(&e.problem, &s, h, &xi).unwrap().0;
            prop_assert!(s.y > 0.0 && s.y <= 1.0);
        }
    }

    #[test]
    fn worker_count_does_not_change_results(seed in 0u64..1000, m in 1u64..20_000) {
        let e = d2("exp8_1");
        let one = solve_parabolic(&e.problem, 0.0, &e.defaults.x0, 1.0, 0.1, m, seed, Some(1)).unwrap();
        for w in [4, 16] {
            let r = solve_parabolic(&e.problem, 0.0, &e.defaults.x0, 1.0, 0.1, m, seed, Some(w)).unwrap();
            prop_assert_eq!(r.estimate.to_bits(), one.estimate.to_bits());
            prop_assert_eq!(r.mc_error.to_bits(), one.mc_error.to_bits());
        }
    }
}

#[test]
fn trajectories_are_reproducible() {
    let e = d2("exp8_2");
    let path = |seed| {
        let mut rng = stream(seed, 3);
        let mut xs = Vec::new();
        walk(&e.problem, &e.defaults.x0, 0.1, 1000, &mut rng, |x, _| {
            xs.push(*x);
            Ok(())
        })
        .unwrap();
        xs
    };
    assert_eq!(path(8), path(8));
    assert_ne!(path(8), path(9));

    let poisson = d2("exp8_5");
    let schedule = poisson_schedule(0.3, 0.1, 1.0, 1.0, 5.0).unwrap();
    let a = solve_poisson(&poisson.problem, &poisson.defaults.x0, &schedule, 5000, 2, Some(1)).unwrap();
    let b = solve_poisson(&poisson.problem, &poisson.defaults.x0, &schedule, 5000, 2, Some(3)).unwrap();
    assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
}

#[test]
fn trajectory_stream_is_pure() {
    // regenerating trajectory i alone reproduces what the driver saw
    let e = d2("exp8_2");
    let finals: Vec<(u64, Point<2>)> = run_trajectories(9000, 5, Some(2), |acc: &mut Finals, rng, i| {
        let x = walk(&e.problem, &e.defaults.x0, 0.1, 50, rng, |_, _| Ok(()))?;
        acc.0.push((i, x));
        Ok(())
    })
    .unwrap()
    .0;
    assert_eq!(finals.len(), 9000);
    for &(i, x) in finals.iter().step_by(997) {
        let mut rng = stream(5, i);
        let y = walk(&e.problem, &e.defaults.x0, 0.1, 50, &mut rng, |_, _| Ok(())).unwrap();
        assert_eq!(x, y);
    }
}

#[derive(Default)]
struct Finals(Vec<(u64, Point<2>)>);

impl Merge for Finals {
    fn merge(&mut self, other: Self) {
        self.0.extend(other.0);
    }
}

#[test]
fn analytic_and_generic_projection_agree() {
    let mut rng = stream(77, 0);
    use rand::Rng;
    let disk = Domain::<2>::ball(Vector2::new(0.5, -1.0), 2.0).unwrap();
    let disk_generic = disk.as_implicit();
    let torus = Domain::<3>::torus(4.0, 2.0).unwrap();
    let torus_generic = torus.as_implicit();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let depth = 1e-6 + rng.random::<f64>();
        let x = Vector2::new(0.5, -1.0) + unit2(a) * (2.0 + depth);
        let p = disk.project_to_boundary(&x, 1.5).unwrap();
        let q = disk_generic.project_to_boundary(&x, 1.5).unwrap();
        worst = worst.max((p.x_pi - q.x_pi).norm()).max((p.r - q.r).abs());

        let (phi, theta): (f64, f64) = (rng.random::<f64>() * 6.3, rng.random::<f64>() * 6.3);
        let x = torus_exterior(phi, theta, depth);
        let p = torus.project_to_boundary(&x, 1.9).unwrap();
        let q = torus_generic.project_to_boundary(&x, 1.9).unwrap();
        worst = worst.max((p.x_pi - q.x_pi).norm()).max((p.r - q.r).abs());
    }
    assert!(worst <= 1e-10, "largest discrepancy {worst}");
}

#[test]
fn schedule_cost_is_nearly_linear() {
    // sum N_j against (1/h) |ln h|^(1 + beta/(1 - ell)) for the defaults
    let (ell, beta) = (0.1, 1.0);
    let ratio = |h: f64| {
        let s = poisson_schedule(h, ell, beta, 1.0, 5.0).unwrap();
        s.total_steps() as f64 * h / h.ln().abs().powf(1.0 + beta / (1.0 - ell))
    };
    let r: Vec<f64> = [0.5, 0.25, 0.125].into_iter().map(ratio).collect();
    let c = r[0];
    assert!(r.iter().all(|&v| v <= 1.05 * c), "{r:?}");
    let cost: Vec<u64> = [0.5, 0.25, 0.125]
        .into_iter()
        .map(|h| poisson_schedule(h, ell, beta, 1.0, 5.0).unwrap().total_steps())
        .collect();
    assert!(cost[1] > cost[0] && cost[2] > cost[1]);
}

#[test]
fn uniform_gradient_system_has_zero_drift() {
    let p = gradient_system(Arc::new(|_: &Point<2>| Point::<2>::zeros()), 1.3, Domain::centered_ball(1.0).unwrap());
    assert_eq!((p.b)(0.0, &Vector2::new(0.2, 0.1)), Vector2::zeros());
}
