//! Bounded domains described by implicit surfaces.
//!
//! Every domain exposes a signed distance that is positive inside, zero on
//! the boundary and negative outside, a nearest-point projection for
//! exterior points, the inward unit normal, and an oblique projection along
//! a user supplied direction field. Balls and the solid torus have closed
//! forms; anything else goes through [`LevelSet`] and an iterative foot-point
//! solver.

use std::fmt;
use std::sync::Arc;

use nalgebra::SVector;

use crate::error::{Error, Result};

/// A point (or vector) in `D`-dimensional space.
pub type Point<const D: usize> = SVector<f64, D>;

/// Default tolerance of the iterative projections.
pub const PROJECTION_TOLERANCE: f64 = 1e-12;
/// Default iteration cap of the iterative projections.
pub const PROJECTION_MAX_ITER: usize = 50;

/// A smooth level-set function, positive inside the domain.
pub trait LevelSet<const D: usize>: Send + Sync {
    fn value(&self, x: &Point<D>) -> f64;
    fn gradient(&self, x: &Point<D>) -> Point<D>;
}

/// Generic implicit boundary `{f = 0}` with its solver settings.
#[derive(Clone)]
pub struct ImplicitSurface<const D: usize> {
    level_set: Arc<dyn LevelSet<D>>,
    tolerance: f64,
    max_iter: usize,
    reach: f64,
}

#[derive(Clone)]
pub enum DomainKind<const D: usize> {
    Ball { center: Point<D>, radius: f64 },
    /// Solid torus around the `x3` axis. Only constructible for `D = 3`.
    Torus { major: f64, minor: f64 },
    Implicit(ImplicitSurface<D>),
}

/// A smooth bounded region `G`.
#[derive(Clone)]
pub struct Domain<const D: usize> {
    kind: DomainKind<D>,
}

/// Where an exterior point meets the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryContact<const D: usize> {
    /// The projection on the boundary.
    pub x_pi: Point<D>,
    /// Distance travelled from the exterior point to `x_pi`.
    pub r: f64,
    /// Inward unit normal at `x_pi`.
    pub nu: Point<D>,
    /// Unit direction of travel: `nu` for normal projection, the oblique
    /// field at `x_pi` otherwise.
    pub direction: Point<D>,
}

impl<const D: usize> BoundaryContact<D> {
    /// Mirror image of `x` through the contact along `direction`.
    pub fn reflect(&self, x: &Point<D>) -> Point<D> {
        x + self.direction * (2.0 * self.r)
    }
}

impl<const D: usize> fmt::Debug for Domain<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DomainKind::Ball { center, radius } => f
                .debug_struct("Ball")
                .field("center", &center.as_slice())
                .field("radius", radius)
                .finish(),
            DomainKind::Torus { major, minor } => f
                .debug_struct("Torus")
                .field("major", major)
                .field("minor", minor)
                .finish(),
            DomainKind::Implicit(s) => f
                .debug_struct("Implicit")
                .field("dimension", &D)
                .field("tolerance", &s.tolerance)
                .field("max_iter", &s.max_iter)
                .finish(),
        }
    }
}

fn check_finite<const D: usize>(x: &Point<D>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Usage(format!("non-finite point {:?}", x.as_slice())))
    }
}

impl<const D: usize> Domain<D> {
    pub fn ball(center: Point<D>, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Usage(format!("ball radius must be positive, got {radius}")));
        }
        check_finite(&center)?;
        Ok(Domain {
            kind: DomainKind::Ball { center, radius },
        })
    }

    /// Ball centred at the origin.
    pub fn centered_ball(radius: f64) -> Result<Self> {
        Self::ball(Point::zeros(), radius)
    }

    /// Domain bounded by the zero level set of `level_set`, using the default
    /// tolerance and iteration cap. The projection reach is unbounded until
    /// set with [`Domain::with_reach`].
    pub fn implicit(level_set: Arc<dyn LevelSet<D>>) -> Self {
        Domain {
            kind: DomainKind::Implicit(ImplicitSurface {
                level_set,
                tolerance: PROJECTION_TOLERANCE,
                max_iter: PROJECTION_MAX_ITER,
                reach: f64::INFINITY,
            }),
        }
    }

    /// Override solver settings of an implicit domain. No-op for analytic kinds.
    pub fn with_solver(mut self, tolerance: f64, max_iter: usize) -> Self {
        if let DomainKind::Implicit(s) = &mut self.kind {
            s.tolerance = tolerance;
            s.max_iter = max_iter;
        }
        self
    }

    /// Distance from the boundary within which exterior projections are
    /// known to be unique. Only meaningful for implicit domains.
    pub fn with_reach(mut self, reach: f64) -> Self {
        if let DomainKind::Implicit(s) = &mut self.kind {
            s.reach = reach;
        }
        self
    }

    pub fn kind(&self) -> &DomainKind<D> {
        &self.kind
    }

    pub fn dimension(&self) -> usize {
        D
    }

    /// The same region routed through the generic level-set machinery.
    /// Used to cross-check the closed-form backends.
    pub fn as_implicit(&self) -> Domain<D> {
        match &self.kind {
            DomainKind::Ball { center, radius } => Domain::implicit(Arc::new(BallLevelSet {
                center: *center,
                radius: *radius,
            })),
            DomainKind::Torus { major, minor } => Domain::implicit(Arc::new(TorusLevelSet {
                major: *major,
                minor: *minor,
            }))
            .with_reach(major - minor),
            DomainKind::Implicit(_) => self.clone(),
        }
    }

    /// A point known to lie inside, when the domain has one.
    pub fn interior_point(&self) -> Option<Point<D>> {
        match &self.kind {
            DomainKind::Ball { center, .. } => Some(*center),
            DomainKind::Torus { major, .. } => {
                let mut p = Point::zeros();
                p[0] = *major;
                Some(p)
            }
            DomainKind::Implicit(_) => None,
        }
    }

    /// Largest exterior distance for which nearest-point projection is
    /// unique.
    pub fn uniqueness_reach(&self) -> f64 {
        match &self.kind {
            DomainKind::Ball { .. } => f64::INFINITY,
            DomainKind::Torus { major, minor } => major - minor,
            DomainKind::Implicit(s) => s.reach,
        }
    }

    /// Signed distance to the boundary, positive inside.
    ///
    /// Exact for balls and tori. For implicit domains this is the first-order
    /// estimate `f / |grad f|`, which has the right sign everywhere and
    /// vanishes exactly on the boundary.
    pub fn signed_distance(&self, x: &Point<D>) -> f64 {
        match &self.kind {
            DomainKind::Ball { center, radius } => radius - (x - center).norm(),
            DomainKind::Torus { major, minor } => {
                let rho = x[0].hypot(x[1]);
                minor - (rho - major).hypot(x[2])
            }
            DomainKind::Implicit(s) => {
                let f = s.level_set.value(x);
                if f == 0.0 {
                    return 0.0;
                }
                f / s.level_set.gradient(x).norm()
            }
        }
    }

    /// `x` lies in the closed domain.
    #[inline]
    pub fn contains(&self, x: &Point<D>) -> bool {
        self.signed_distance(x) >= 0.0
    }

    /// Inward unit normal. On the boundary this is the normal of `G`; off
    /// the boundary it is the normal of the parallel surface through `x`.
    pub fn inward_normal(&self, x: &Point<D>) -> Point<D> {
        match &self.kind {
            DomainKind::Ball { center, .. } => {
                let v = center - x;
                v / v.norm()
            }
            DomainKind::Torus { major, .. } => {
                let v = torus_spine_point(x, *major) - x;
                v / v.norm()
            }
            DomainKind::Implicit(s) => {
                let g = s.level_set.gradient(x);
                g / g.norm()
            }
        }
    }

    /// Nearest boundary point of an exterior point `x`.
    ///
    /// `reach` is the caller's bound on how far outside `x` may be; both it
    /// and the domain's own uniqueness radius are enforced.
    pub fn project_to_boundary(&self, x: &Point<D>, reach: f64) -> Result<BoundaryContact<D>> {
        check_finite(x)?;
        let sd = self.signed_distance(x);
        if sd >= 0.0 {
            return Err(Error::Usage(format!(
                "projection requires an exterior point, signed distance is {sd:.3e}"
            )));
        }
        let limit = reach.min(self.uniqueness_reach());
        if -sd > limit {
            return Err(Error::ProjectionAmbiguity {
                distance: -sd,
                reach: limit,
            });
        }
        let x_pi = match &self.kind {
            DomainKind::Ball { center, radius } => {
                let v = x - center;
                center + v * (*radius / v.norm())
            }
            DomainKind::Torus { major, minor } => {
                let q = torus_spine_point(x, *major);
                let v = x - q;
                q + v * (*minor / v.norm())
            }
            DomainKind::Implicit(s) => s.foot_point(x)?,
        };
        let nu = self.inward_normal(&x_pi);
        Ok(BoundaryContact {
            x_pi,
            r: (x - x_pi).norm(),
            nu,
            direction: nu,
        })
    }

    /// Projection of an exterior point along an oblique inward field:
    /// solves `x_pi = x + r * eta(x_pi)` with `x_pi` on the boundary.
    ///
    /// Damped fixed-point iteration started from the normal projection. If
    /// the normal projection already satisfies the equation it is returned
    /// unchanged, so `eta = nu` reproduces [`Domain::project_to_boundary`].
    pub fn oblique_project<F>(
        &self,
        eta: F,
        x: &Point<D>,
        tol: f64,
        max_iter: usize,
    ) -> Result<BoundaryContact<D>>
    where
        F: Fn(&Point<D>) -> Point<D>,
    {
        let normal = self.project_to_boundary(x, f64::INFINITY)?;
        let mut z = normal.x_pi;
        let mut r = normal.r;
        let mut nu = normal.nu;
        let mut damping = 1.0;
        let mut direction = eta(&z);
        let mut last_update = f64::INFINITY;

        for _ in 0..max_iter {
            let d = unit(&direction);
            let cos = d.dot(&nu);
            if !(cos > 0.0) {
                return Err(Error::Model(format!(
                    "reflection field is not oblique at {:?}: eta.nu = {cos:.3e}",
                    z.as_slice()
                )));
            }
            let (r_hit, z_hit) = self.ray_hit(x, &d)?;
            let update = (z_hit - z).norm();
            if update <= tol {
                return Ok(BoundaryContact {
                    x_pi: z,
                    r,
                    nu,
                    direction: d,
                });
            }
            if update >= last_update {
                damping *= 0.5;
            }
            last_update = update;
            z = z_hit;
            r = r_hit;
            nu = self.inward_normal(&z);
            let target = unit(&eta(&z));
            direction = if damping == 1.0 {
                target
            } else {
                (d * (1.0 - damping) + target * damping).normalize()
            };
        }
        let residual = (z - x - unit(&eta(&z)) * r).norm();
        Err(Error::Numeric {
            what: "oblique projection",
            iterations: max_iter,
            residual,
        })
    }

    /// First boundary crossing of the ray `x + r d`, `r > 0`, from an
    /// exterior point.
    fn ray_hit(&self, x: &Point<D>, d: &Point<D>) -> Result<(f64, Point<D>)> {
        match &self.kind {
            DomainKind::Ball { center, radius } => {
                let p = x - center;
                let pd = p.dot(d);
                let disc = pd * pd - (p.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return Err(Error::Model("oblique ray misses the ball".into()));
                }
                let r = -pd - disc.sqrt();
                Ok((r, x + d * r))
            }
            DomainKind::Torus { .. } => {
                self.newton_along_ray(x, d, |p| (self.signed_distance(p), self.inward_normal(p)), 100)
            }
            DomainKind::Implicit(s) => self.newton_along_ray(
                x,
                d,
                |p| (s.level_set.value(p), s.level_set.gradient(p)),
                s.max_iter.max(100),
            ),
        }
    }

    fn newton_along_ray<F>(&self, x: &Point<D>, d: &Point<D>, f: F, max_iter: usize) -> Result<(f64, Point<D>)>
    where
        F: Fn(&Point<D>) -> (f64, Point<D>),
    {
        let mut r = 0.0;
        let mut value = f64::NAN;
        for _ in 0..max_iter {
            let p = x + d * r;
            let (v, grad) = f(&p);
            value = v;
            let slope = grad.dot(d);
            if !(slope > 0.0) {
                return Err(Error::Model("oblique ray does not enter the domain".into()));
            }
            let step = -v / slope;
            // a few ulps of the position is as close as Newton can get
            if v.abs() <= 8.0 * f64::EPSILON * p.norm().max(1.0) {
                return Ok((r, p));
            }
            r += step;
            if step.abs() <= 1e-15 * r.abs().max(1.0) {
                return Ok((r, x + d * r));
            }
        }
        Err(Error::Numeric {
            what: "ray intersection",
            iterations: max_iter,
            residual: value.abs(),
        })
    }
}

impl Domain<3> {
    /// Solid torus `(sqrt(x1^2 + x2^2) - major)^2 + x3^2 < minor^2`.
    pub fn torus(major: f64, minor: f64) -> Result<Self> {
        if !(minor > 0.0 && major > minor && major.is_finite()) {
            return Err(Error::Usage(format!(
                "torus radii must satisfy 0 < minor < major, got major={major}, minor={minor}"
            )));
        }
        Ok(Domain {
            kind: DomainKind::Torus { major, minor },
        })
    }
}

/// `v / |v|`, returning `v` untouched when it is already unit to rounding.
fn unit<const D: usize>(v: &Point<D>) -> Point<D> {
    let n = v.norm();
    if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
        *v
    } else {
        v / n
    }
}

/// Point of the torus core circle closest to `x`.
fn torus_spine_point<const D: usize>(x: &Point<D>, major: f64) -> Point<D> {
    let rho = x[0].hypot(x[1]);
    let mut q = Point::zeros();
    q[0] = major * x[0] / rho;
    q[1] = major * x[1] / rho;
    q
}

impl<const D: usize> ImplicitSurface<D> {
    /// Newton iteration onto `{f = 0}` along the gradient.
    fn onto_surface(&self, mut z: Point<D>) -> Result<Point<D>> {
        for _ in 0..self.max_iter {
            let f = self.level_set.value(&z);
            let g = self.level_set.gradient(&z);
            let step = g * (f / g.norm_squared());
            z -= step;
            if step.norm() <= self.tolerance * 1e-3 {
                return Ok(z);
            }
        }
        let residual = self.level_set.value(&z).abs();
        if residual <= self.tolerance {
            Ok(z)
        } else {
            Err(Error::Numeric {
                what: "level-set Newton",
                iterations: self.max_iter,
                residual,
            })
        }
    }

    /// Foot point of `x`: the boundary point `z` with `x - z` parallel to
    /// the normal at `z`. Alternates surface Newton with a tangential
    /// correction until the tangential residual drops below the tolerance.
    fn foot_point(&self, x: &Point<D>) -> Result<Point<D>> {
        let mut z = self.onto_surface(*x)?;
        let mut residual = f64::INFINITY;
        for _ in 0..self.max_iter {
            let g = self.level_set.gradient(&z);
            let n = g / g.norm();
            let d = x - z;
            let tangential = d - n * d.dot(&n);
            residual = tangential.norm();
            if residual <= self.tolerance {
                return Ok(z);
            }
            z = self.onto_surface(z + tangential)?;
        }
        Err(Error::Numeric {
            what: "foot-point projection",
            iterations: self.max_iter,
            residual,
        })
    }
}

struct BallLevelSet<const D: usize> {
    center: Point<D>,
    radius: f64,
}

impl<const D: usize> LevelSet<D> for BallLevelSet<D> {
    fn value(&self, x: &Point<D>) -> f64 {
        (self.radius * self.radius - (x - self.center).norm_squared()) / (2.0 * self.radius)
    }

    fn gradient(&self, x: &Point<D>) -> Point<D> {
        (self.center - x) / self.radius
    }
}

struct TorusLevelSet {
    major: f64,
    minor: f64,
}

impl<const D: usize> LevelSet<D> for TorusLevelSet {
    fn value(&self, x: &Point<D>) -> f64 {
        let rho = x[0].hypot(x[1]);
        let dist2 = (rho - self.major).powi(2) + x[2] * x[2];
        (self.minor * self.minor - dist2) / (2.0 * self.minor)
    }

    fn gradient(&self, x: &Point<D>) -> Point<D> {
        (torus_spine_point(x, self.major) - x) / self.minor
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3};

    fn disk(r: f64) -> Domain<2> {
        Domain::centered_ball(r).unwrap()
    }

    #[test]
    fn signed_distance_examples() {
        assert_eq!(disk(2.0).signed_distance(&Vector2::new(0.0, 0.0)), 2.0);
        assert_eq!(disk(2.0).signed_distance(&Vector2::new(2.0, 0.0)), 0.0);
        let torus = Domain::torus(4.0, 2.0).unwrap();
        assert!((torus.signed_distance(&Vector3::new(6.5, 0.0, 0.0)) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn project_disk_and_sphere() {
        let c = disk(2.0).project_to_boundary(&Vector2::new(2.1, 0.0), 0.5).unwrap();
        assert!((c.x_pi - Vector2::new(2.0, 0.0)).norm() < 1e-15);
        assert!((c.r - 0.1).abs() < 1e-15);
        assert!((c.nu - Vector2::new(-1.0, 0.0)).norm() < 1e-15);
        assert_eq!(c.direction, c.nu);

        let sphere = Domain::<3>::centered_ball(1.0).unwrap();
        let c = sphere.project_to_boundary(&Vector3::new(0.0, 0.0, 1.1), 0.5).unwrap();
        assert!((c.x_pi - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        assert!((c.r - 0.1).abs() < 1e-15);
        assert!((c.nu - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn project_torus_analytic_and_generic() {
        let torus = Domain::torus(4.0, 2.0).unwrap();
        let x = Vector3::new(6.5, 0.0, 0.0);
        let c = torus.project_to_boundary(&x, 1.0).unwrap();
        assert!((c.x_pi - Vector3::new(6.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((c.r - 0.5).abs() < 1e-15);
        assert!((c.nu - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);

        let g = torus.as_implicit().project_to_boundary(&x, 1.0).unwrap();
        assert!((g.x_pi - c.x_pi).norm() < 1e-10);
        assert!((g.r - c.r).abs() < 1e-10);
    }

    #[test]
    fn projection_rejects_interior_and_far_points() {
        let d = disk(2.0);
        assert!(matches!(
            d.project_to_boundary(&Vector2::new(1.9, 0.0), 0.5),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            d.project_to_boundary(&Vector2::new(3.0, 0.0), 0.5),
            Err(Error::ProjectionAmbiguity { .. })
        ));
        let torus = Domain::torus(4.0, 2.0).unwrap();
        assert!(matches!(
            torus.project_to_boundary(&Vector3::new(8.5, 0.0, 0.0), 10.0),
            Err(Error::ProjectionAmbiguity { .. })
        ));
    }

    #[test]
    fn oblique_with_normal_field_matches_projection() {
        let d = disk(2.0);
        let x = Vector2::new(2.1, 0.3);
        let normal = d.project_to_boundary(&x, 1.0).unwrap();
        let oblique = d
            .oblique_project(|z| d.inward_normal(z), &x, 1e-13, 50)
            .unwrap();
        assert_eq!(normal, oblique);
    }

    #[test]
    fn oblique_disk_residual() {
        let d = disk(2.0);
        let eta = |z: &Vector2<f64>| (-z / 2.0 + Vector2::new(0.0, 0.5)).normalize();
        let x = Vector2::new(2.1, 0.0);
        let c = d.oblique_project(eta, &x, 1e-14, 100).unwrap();
        let residual = (c.x_pi - x - eta(&c.x_pi) * c.r).norm();
        assert!(residual <= 1e-12, "residual {residual}");
        assert!(d.signed_distance(&c.x_pi).abs() <= 1e-12);
        assert!(c.x_pi[1] > 0.0);
    }

    #[test]
    fn oblique_rejects_interior_point() {
        let d = disk(2.0);
        let r = d.oblique_project(|z| d.inward_normal(z), &Vector2::new(1.9, 0.0), 1e-13, 50);
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn oblique_rejects_tangential_field() {
        let d = disk(2.0);
        let tangent = |z: &Vector2<f64>| Vector2::new(-z[1], z[0]).normalize();
        let r = d.oblique_project(tangent, &Vector2::new(2.1, 0.0), 1e-13, 50);
        assert!(matches!(r, Err(Error::Model(_))));
    }

    #[test]
    fn torus_rejects_bad_radii() {
        assert!(Domain::torus(1.0, 2.0).is_err());
        assert!(Domain::torus(1.0, 0.0).is_err());
    }
}
