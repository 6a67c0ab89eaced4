//! Coefficient bundles for reflected diffusions and the PDEs they solve,
//! plus a catalog of ready-made problems.
//!
//! A problem couples a domain with the generator
//! `L = (1/2) a : grad grad + b . grad`, `a = sigma sigma^T`, and the data of
//! the associated boundary value problems:
//!
//! * parabolic: `u_t + L u + c u + g = 0`, `grad u . nu + gamma u = psi` on
//!   the boundary, `u(T) = phi`;
//! * Neumann-Poisson: `L u = phi1`, `grad u . nu = phi2`.
//!
//! `nu` is always the inward normal.

use std::fmt;
use std::sync::Arc;

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, DomainKind, Point};

pub type Matrix<const D: usize> = SMatrix<f64, D, D>;
/// `(t, x) -> R^D`.
pub type VectorField<const D: usize> = Arc<dyn Fn(f64, &Point<D>) -> Point<D> + Send + Sync>;
/// `(t, x) -> R^{D x D}`.
pub type MatrixField<const D: usize> = Arc<dyn Fn(f64, &Point<D>) -> Matrix<D> + Send + Sync>;
/// `(t, x) -> R`.
pub type ScalarField<const D: usize> = Arc<dyn Fn(f64, &Point<D>) -> f64 + Send + Sync>;
/// `x -> R`.
pub type Observable<const D: usize> = Arc<dyn Fn(&Point<D>) -> f64 + Send + Sync>;

/// Drift derivatives needed by the second-order scheme. The diffusion must
/// be constant.
#[derive(Clone)]
pub struct SecondOrderData<const D: usize> {
    pub sigma: Matrix<D>,
    /// `J[i][j] = d b_i / d x_j`.
    pub jacobian: MatrixField<D>,
    /// `d b / d t`.
    pub time_derivative: VectorField<D>,
    /// `(a : grad grad) b`, component `i` is `sum_jk a_jk d^2 b_i / dx_j dx_k`.
    pub hessian_term: VectorField<D>,
}

/// One reflected diffusion together with its PDE data.
#[derive(Clone)]
pub struct RsdeProblem<const D: usize> {
    pub domain: Domain<D>,
    pub b: VectorField<D>,
    pub sigma: MatrixField<D>,
    pub c: ScalarField<D>,
    pub g: ScalarField<D>,
    pub gamma: ScalarField<D>,
    pub psi: ScalarField<D>,
    pub phi: Observable<D>,
    pub phi1: Observable<D>,
    pub phi2: Observable<D>,
    /// Coefficients do not depend on time.
    pub autonomous: bool,
    pub second_order: Option<SecondOrderData<D>>,
}

impl<const D: usize> fmt::Debug for RsdeProblem<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RsdeProblem")
            .field("domain", &self.domain)
            .field("autonomous", &self.autonomous)
            .field("second_order", &self.second_order.is_some())
            .finish_non_exhaustive()
    }
}

fn zero_scalar<const D: usize>() -> ScalarField<D> {
    Arc::new(|_, _| 0.0)
}

fn zero_observable<const D: usize>() -> Observable<D> {
    Arc::new(|_| 0.0)
}

impl<const D: usize> RsdeProblem<D> {
    /// Autonomous problem with the given dynamics and all PDE data zero.
    pub fn new(domain: Domain<D>, b: VectorField<D>, sigma: MatrixField<D>) -> Self {
        RsdeProblem {
            domain,
            b,
            sigma,
            c: zero_scalar(),
            g: zero_scalar(),
            gamma: zero_scalar(),
            psi: zero_scalar(),
            phi: zero_observable(),
            phi1: zero_observable(),
            phi2: zero_observable(),
            autonomous: true,
            second_order: None,
        }
    }

    pub fn time_dependent(mut self) -> Self {
        self.autonomous = false;
        self
    }

    pub fn with_decay(mut self, c: ScalarField<D>) -> Self {
        self.c = c;
        self
    }

    pub fn with_source(mut self, g: ScalarField<D>) -> Self {
        self.g = g;
        self
    }

    /// Robin data `grad u . nu + gamma u = psi`.
    pub fn with_robin(mut self, gamma: ScalarField<D>, psi: ScalarField<D>) -> Self {
        self.gamma = gamma;
        self.psi = psi;
        self
    }

    /// Boundary data only, `gamma = 0`.
    pub fn with_neumann(mut self, psi: ScalarField<D>) -> Self {
        self.gamma = zero_scalar();
        self.psi = psi;
        self
    }

    pub fn with_terminal(mut self, phi: Observable<D>) -> Self {
        self.phi = phi;
        self
    }

    pub fn with_poisson(mut self, phi1: Observable<D>, phi2: Observable<D>) -> Self {
        self.phi1 = phi1;
        self.phi2 = phi2;
        self
    }

    pub fn with_second_order(mut self, data: SecondOrderData<D>) -> Self {
        self.second_order = Some(data);
        self
    }

    pub fn with_domain(mut self, domain: Domain<D>) -> Self {
        self.domain = domain;
        self
    }

    /// `a = sigma sigma^T` at `(t, x)`.
    pub fn diffusion_matrix(&self, t: f64, x: &Point<D>) -> Matrix<D> {
        let s = (self.sigma)(t, x);
        s * s.transpose()
    }

    /// Co-normal weight `alpha(z) = (nu . a nu) / 2`.
    pub fn alpha(&self, t: f64, z: &Point<D>) -> Result<f64> {
        let nu = self.domain.inward_normal(z);
        let a = self.diffusion_matrix(t, z);
        let w = 0.5 * nu.dot(&(a * nu));
        if w > 0.0 && w.is_finite() {
            Ok(w)
        } else {
            Err(Error::Model(format!(
                "diffusion degenerate in the normal direction at {:?}: nu.a nu/2 = {w:.3e}",
                z.as_slice()
            )))
        }
    }
}

/// Reflected gradient dynamics `b = (sigma^2 / 2) grad log rho`,
/// diffusion `sigma I`, invariant density `rho`.
pub fn gradient_system<const D: usize>(
    log_density_gradient: Arc<dyn Fn(&Point<D>) -> Point<D> + Send + Sync>,
    sigma: f64,
    domain: Domain<D>,
) -> RsdeProblem<D> {
    let half_var = 0.5 * sigma * sigma;
    let sigma_matrix = Matrix::<D>::identity() * sigma;
    RsdeProblem::new(
        domain,
        Arc::new(move |_, x| log_density_gradient(x) * half_var),
        Arc::new(move |_, _| sigma_matrix),
    )
}

/// Known reference values of a catalog problem, where they exist.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExactValues {
    /// PDE solution at the default start point.
    pub solution: Option<f64>,
    /// Mean of `phi` under the invariant density.
    pub phi_bar: Option<f64>,
    /// Boundary mass of the invariant density.
    pub kappa: Option<f64>,
    /// Mean of `psi` under the normalised boundary restriction.
    pub psi_prime: Option<f64>,
    /// Mean of the Poisson solution under the invariant density.
    pub u_bar: Option<f64>,
}

/// Run settings a catalog problem is usually solved with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Defaults<const D: usize> {
    pub x0: Point<D>,
    pub t0: f64,
    pub horizon: f64,
    pub h: f64,
}

/// A named problem with its references.
#[derive(Clone)]
pub struct CatalogEntry<const D: usize> {
    pub name: String,
    pub problem: RsdeProblem<D>,
    pub exact: ExactValues,
    /// Closed-form PDE solution `u(t, x)`, when known.
    pub solution: Option<ScalarField<D>>,
    pub defaults: Defaults<D>,
}

impl<const D: usize> fmt::Debug for CatalogEntry<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CatalogEntry")
            .field("name", &self.name)
            .field("problem", &self.problem)
            .field("exact", &self.exact)
            .field("defaults", &self.defaults)
            .finish()
    }
}

impl<const D: usize> CatalogEntry<D> {
    /// Closed-form solution at `(t, x)`, if the problem has one.
    pub fn solution_at(&self, t: f64, x: &Point<D>) -> Option<f64> {
        self.solution.as_ref().map(|u| u(t, x))
    }
}

/// Geometry override for catalog problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainSpec {
    Ball { center: Vec<f64>, radius: f64 },
    Torus { major: f64, minor: f64 },
}

impl DomainSpec {
    fn ball<const D: usize>(&self) -> Result<Domain<D>> {
        match self {
            DomainSpec::Ball { center, radius } => {
                if center.len() != D {
                    return Err(Error::config(
                        "domain.center",
                        format!("expected {D} coordinates, got {}", center.len()),
                    ));
                }
                Domain::ball(Point::<D>::from_column_slice(center), *radius)
                    .map_err(|e| Error::config("domain.radius", e.to_string()))
            }
            DomainSpec::Torus { .. } => Err(Error::config(
                "domain.kind",
                "this problem needs a ball-shaped domain",
            )),
        }
    }

    fn torus(&self) -> Result<Domain<3>> {
        match self {
            DomainSpec::Torus { major, minor } => Domain::torus(*major, *minor)
                .map_err(|e| Error::config("domain", e.to_string())),
            DomainSpec::Ball { .. } => Err(Error::config(
                "domain.kind",
                "this problem needs a torus-shaped domain",
            )),
        }
    }
}

/// Radius of a ball centred at the origin.
fn centered_radius<const D: usize>(domain: &Domain<D>) -> Option<f64> {
    match domain.kind() {
        DomainKind::Ball { center, radius } if center.iter().all(|&c| c == 0.0) => Some(*radius),
        _ => None,
    }
}

/// Every catalog problem, in either dimension.
#[derive(Debug, Clone)]
pub enum CatalogProblem {
    D2(CatalogEntry<2>),
    D3(CatalogEntry<3>),
}

impl CatalogProblem {
    pub fn name(&self) -> &str {
        match self {
            CatalogProblem::D2(e) => &e.name,
            CatalogProblem::D3(e) => &e.name,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            CatalogProblem::D2(_) => 2,
            CatalogProblem::D3(_) => 3,
        }
    }

    pub fn exact(&self) -> ExactValues {
        match self {
            CatalogProblem::D2(e) => e.exact,
            CatalogProblem::D3(e) => e.exact,
        }
    }
}

/// Names accepted by [`catalog`]. `von_mises` also accepts a concentration,
/// as in `von_mises(2.5)`.
pub const CATALOG_NAMES: &[&str] = &[
    "exp8_1", "exp8_2", "exp8_3", "exp8_4", "exp8_5", "von_mises", "fisher3d",
];

/// Look up a problem by name with its default geometry and horizon.
pub fn catalog(name: &str) -> Result<CatalogProblem> {
    catalog_with(name, None, None)
}

/// Look up a problem, optionally replacing its domain and, for the
/// time-dependent problem, its horizon.
///
/// Boundary data defined through a closed-form solution follow the new
/// normal, so that solution stays exact. Reference values tied to the
/// default geometry are dropped when the domain changes.
pub fn catalog_with(
    name: &str,
    domain: Option<&DomainSpec>,
    horizon: Option<f64>,
) -> Result<CatalogProblem> {
    let name = name.trim();
    if let Some(beta) = parse_von_mises(name)? {
        let d = match domain {
            Some(shape) => shape.ball()?,
            None => Domain::centered_ball(1.0)?,
        };
        return Ok(CatalogProblem::D2(von_mises_on(beta, d)));
    }
    match name {
        "exp8_1" => {
            let d = match domain {
                Some(shape) => shape.ball()?,
                None => Domain::centered_ball(4.0)?,
            };
            let t = horizon.unwrap_or(1.0);
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config("T", format!("must be positive, got {t}")));
            }
            Ok(CatalogProblem::D2(exp8_1_on(d, t)))
        }
        "exp8_2" => {
            let d = match domain {
                Some(shape) => shape.ball()?,
                None => Domain::centered_ball(2.0)?,
            };
            Ok(CatalogProblem::D2(exp8_2_on(d)))
        }
        "exp8_3" | "fisher3d" => {
            let d = match domain {
                Some(shape) => shape.ball()?,
                None => Domain::centered_ball(1.0)?,
            };
            let mut e = exp8_3_on(d);
            e.name = name.into();
            Ok(CatalogProblem::D3(e))
        }
        "exp8_4" => {
            let d = match domain {
                Some(shape) => shape.torus()?,
                None => Domain::torus(4.0, 2.0)?,
            };
            Ok(CatalogProblem::D3(exp8_4_on(d)))
        }
        "exp8_5" => {
            let d = match domain {
                Some(shape) => shape.ball()?,
                None => Domain::centered_ball(2.0)?,
            };
            Ok(CatalogProblem::D2(exp8_5_on(d)))
        }
        _ => Err(Error::Usage(format!(
            "unknown problem {name:?}; available: {}",
            CATALOG_NAMES.join(", ")
        ))),
    }
}

fn parse_von_mises(name: &str) -> Result<Option<f64>> {
    let Some(rest) = name.strip_prefix("von_mises") else {
        return Ok(None);
    };
    if rest.is_empty() {
        return Ok(Some(1.0));
    }
    let inner = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .or_else(|| rest.strip_prefix(':'));
    match inner.map(|s| s.trim().parse::<f64>()) {
        Some(Ok(beta)) if beta >= 0.0 && beta.is_finite() => Ok(Some(beta)),
        _ => Err(Error::Usage(format!(
            "von_mises concentration must be a non-negative number, got {name:?}"
        ))),
    }
}

/// Time-dependent Robin problem with a rotating drift and anisotropic
/// noise, `u = (25 - |x|^2)(1 + e^{-(T - t)})`. Default: disk of radius 4,
/// `T = 1`.
pub fn exp8_1_on(domain: Domain<2>, horizon: f64) -> CatalogEntry<2> {
    let sigma = Matrix::<2>::new(1.0, 0.0, 0.0, 2.0);
    let decay = move |t: f64| (-(horizon - t)).exp();
    let u: ScalarField<2> = Arc::new(move |t, x| (25.0 - x.norm_squared()) * (1.0 + decay(t)));
    let grad_u = move |t: f64, x: &Point<2>| -x * (2.0 * (1.0 + decay(t)));
    let normal_domain = domain.clone();
    let problem = RsdeProblem::new(
        domain,
        Arc::new(|_, x| Point::<2>::new(-x[1], x[0])),
        Arc::new(move |_, _| sigma),
    )
    .time_dependent()
    .with_source(Arc::new(move |t, x| {
        let e = decay(t);
        5.0 * (1.0 + e) - (25.0 - x.norm_squared()) * e
    }))
    .with_neumann(Arc::new(move |t, z| grad_u(t, z).dot(&normal_domain.inward_normal(z))))
    .with_terminal(Arc::new(|x| 2.0 * (25.0 - x.norm_squared())))
    .with_second_order(SecondOrderData {
        sigma,
        jacobian: Arc::new(|_, _| Matrix::<2>::new(0.0, -1.0, 1.0, 0.0)),
        time_derivative: Arc::new(|_, _| Point::<2>::zeros()),
        hessian_term: Arc::new(|_, _| Point::<2>::zeros()),
    });
    let x0 = Point::<2>::zeros();
    CatalogEntry {
        name: "exp8_1".into(),
        exact: ExactValues {
            solution: Some(u(0.0, &x0)),
            ..Default::default()
        },
        solution: Some(u),
        problem,
        defaults: Defaults {
            x0,
            t0: 0.0,
            horizon,
            h: 0.05,
        },
    }
}

/// The rotating, anisotropic dynamics of [`exp8_1_on`] with zero boundary
/// flux, no source and the observable `phi`. Used for weak-order studies
/// of the second-order scheme.
pub fn exp8_1_neumann(domain: Domain<2>, phi: Observable<2>) -> RsdeProblem<2> {
    let mut p = exp8_1_on(domain, 1.0).problem;
    p.g = zero_scalar();
    p.psi = zero_scalar();
    p.gamma = zero_scalar();
    p.phi = phi;
    p.autonomous = true;
    p
}

/// `a = [[1, 1/2], [1/2, 1]]` realised by a state-dependent rotation.
fn exp8_2_sigma(x: &Point<2>) -> Matrix<2> {
    let s = x[0] + x[1];
    let t = s + std::f64::consts::FRAC_PI_3;
    Matrix::<2>::new(s.sin(), s.cos(), t.sin(), t.cos())
}

fn exp8_2_drift(x: &Point<2>) -> Point<2> {
    -Point::<2>::new(x[0] / 2.0 + x[1] / 4.0, x[0] / 4.0 + x[1] / 2.0)
}

/// `E|X|^2` for the density proportional to `exp(-|x|^2 / 2)` on a disk of
/// radius `r`.
pub fn gaussian_disk_second_moment(r: f64) -> f64 {
    let e = (-r * r / 2.0).exp();
    (2.0 - 2.0 * e - r * r * e) / (1.0 - e)
}

/// Ergodic problem whose invariant density is `exp(-|x|^2 / 2)`,
/// `phi = |x|^2`. Default: disk of radius 2.
pub fn exp8_2_on(domain: Domain<2>) -> CatalogEntry<2> {
    let phi_bar = centered_radius(&domain).map(gaussian_disk_second_moment);
    let problem = RsdeProblem::new(
        domain,
        Arc::new(|_, x| exp8_2_drift(x)),
        Arc::new(|_, x| exp8_2_sigma(x)),
    )
    .with_terminal(Arc::new(|x| x.norm_squared()));
    CatalogEntry {
        name: "exp8_2".into(),
        problem,
        exact: ExactValues {
            phi_bar,
            ..Default::default()
        },
        solution: None,
        defaults: Defaults {
            x0: Point::<2>::zeros(),
            t0: 0.0,
            horizon: 2.0e4,
            h: 0.1,
        },
    }
}

/// Mean direction of the target on the sphere.
fn fisher_direction() -> Point<3> {
    Point::<3>::new(0.5, 0.5, std::f64::consts::FRAC_1_SQRT_2)
}

/// Gradient of `log rho`, `rho(x) = exp(V . x / |x|)`.
fn fisher_log_gradient(x: &Point<3>) -> Point<3> {
    let v = fisher_direction();
    let n2 = x.norm_squared();
    let n = n2.sqrt();
    (v - x * (v.dot(x) / n2)) / n
}

/// Mean of `z1 + z2 + z3` under the von Mises-Fisher law on the unit
/// sphere with concentration 1 and mean direction `V`.
pub fn fisher_psi_prime() -> f64 {
    let a = 1.0 / 1f64.tanh() - 1.0;
    a * fisher_direction().sum()
}

/// Reflected gradient dynamics whose boundary restriction on the unit
/// sphere is a von Mises-Fisher law; `psi = z1 + z2 + z3`.
pub fn exp8_3_on(domain: Domain<3>) -> CatalogEntry<3> {
    let unit = centered_radius(&domain) == Some(1.0);
    let problem = gradient_system(Arc::new(fisher_log_gradient), 2f64.sqrt(), domain)
        .with_neumann(Arc::new(|_, z| z.sum()))
        .with_terminal(Arc::new(|x| x.sum()));
    CatalogEntry {
        name: "exp8_3".into(),
        problem,
        exact: if unit {
            ExactValues {
                kappa: Some(3.0),
                psi_prime: Some(fisher_psi_prime()),
                ..Default::default()
            }
        } else {
            ExactValues::default()
        },
        solution: None,
        defaults: Defaults {
            x0: Point::<3>::new(-0.5, -0.5, -0.5),
            t0: 0.0,
            horizon: 3.0e4,
            h: 0.05,
        },
    }
}

/// Elliptic problem with constant decay, `u = x1 + x2^2 + x3^3`. Default:
/// solid torus with radii 4 and 2.
pub fn exp8_4_on(domain: Domain<3>) -> CatalogEntry<3> {
    let sigma = Matrix::<3>::from_diagonal(&Point::<3>::new(1.0, 5f64.sqrt(), 2f64.sqrt()));
    let u: ScalarField<3> = Arc::new(|_, x| x[0] + x[1] * x[1] + x[2].powi(3));
    let grad_u = |x: &Point<3>| Point::<3>::new(1.0, 2.0 * x[1], 3.0 * x[2] * x[2]);
    let normal_domain = domain.clone();
    let problem = RsdeProblem::new(
        domain,
        Arc::new(|_, x| Point::<3>::new(-x[2], x[0], x[1])),
        Arc::new(move |_, _| sigma),
    )
    .with_decay(Arc::new(|_, _| -2.0))
    .with_source(Arc::new(|_, x| {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        2.0 * x3.powi(3) - 3.0 * x2 * x3 * x3 + 2.0 * x2 * x2 - 2.0 * x1 * x2 + 2.0 * x1
            - 5.0 * x3
            - 5.0
    }))
    .with_neumann(Arc::new(move |_, z| grad_u(z).dot(&normal_domain.inward_normal(z))));
    let x0 = Point::<3>::new(1.0, 2.0, 0.5);
    CatalogEntry {
        name: "exp8_4".into(),
        exact: ExactValues {
            solution: Some(u(0.0, &x0)),
            ..Default::default()
        },
        solution: Some(u),
        problem,
        defaults: Defaults {
            x0,
            t0: 0.0,
            horizon: 4.0,
            h: 0.1,
        },
    }
}

/// Neumann-Poisson problem with the dynamics of [`exp8_2_on`],
/// `u = |x|^2`. The solver recovers `u(x) - u_bar`.
pub fn exp8_5_on(domain: Domain<2>) -> CatalogEntry<2> {
    let radius = centered_radius(&domain);
    let base = exp8_2_on(domain);
    let normal_domain = base.problem.domain.clone();
    let problem = base.problem.with_poisson(
        Arc::new(|x| 2.0 - x.norm_squared() - x[0] * x[1]),
        Arc::new(move |z| (z * 2.0).dot(&normal_domain.inward_normal(z))),
    );
    let x0 = match radius {
        Some(r) => Point::<2>::new(1.0, 1.0) * (r / 2f64.sqrt()),
        None => Point::<2>::zeros(),
    };
    let u_bar = radius.map(gaussian_disk_second_moment);
    CatalogEntry {
        name: "exp8_5".into(),
        exact: ExactValues {
            solution: u_bar.map(|ub| x0.norm_squared() - ub),
            u_bar,
            ..Default::default()
        },
        solution: u_bar.map(|ub| -> ScalarField<2> { Arc::new(move |_, x| x.norm_squared() - ub) }),
        problem,
        defaults: Defaults {
            x0,
            t0: 0.0,
            horizon: 5.0,
            h: 0.2,
        },
    }
}

/// `I_1(beta) / I_0(beta)` from the power series of the modified Bessel
/// functions.
pub fn bessel_ratio_i1_i0(beta: f64) -> f64 {
    let q = beta * beta / 4.0;
    let (mut i0, mut i1) = (0.0, 0.0);
    let mut term0 = 1.0;
    let mut term1 = beta / 2.0;
    for k in 0..500 {
        i0 += term0;
        i1 += term1;
        let k = k as f64;
        term0 *= q / ((k + 1.0) * (k + 1.0));
        term1 *= q / ((k + 1.0) * (k + 2.0));
        if term0 < 1e-18 * i0 && term1 <= 1e-18 * i1 {
            break;
        }
    }
    i1 / i0
}

/// Gradient dynamics for `rho ~ |x|^2 exp(beta x1)`, whose restriction to
/// the unit circle is the von Mises law. `psi = z1`.
pub fn von_mises_on(beta: f64, domain: Domain<2>) -> CatalogEntry<2> {
    let unit = centered_radius(&domain) == Some(1.0);
    let problem = gradient_system(
        Arc::new(move |x: &Point<2>| x * (2.0 / x.norm_squared()) + Point::<2>::new(beta, 0.0)),
        2f64.sqrt(),
        domain,
    )
    .with_neumann(Arc::new(|_, z| z[0]))
    .with_terminal(Arc::new(|x| x[0]));
    CatalogEntry {
        name: if beta == 1.0 {
            "von_mises".into()
        } else {
            format!("von_mises({beta})")
        },
        problem,
        exact: ExactValues {
            psi_prime: unit.then(|| bessel_ratio_i1_i0(beta)),
            ..Default::default()
        },
        solution: None,
        defaults: Defaults {
            x0: Point::<2>::new(0.5, 0.0),
            t0: 0.0,
            horizon: 3.0e4,
            h: 0.025,
        },
    }
}
