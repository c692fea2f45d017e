//! The manifold `M = {ρ > 0}`, its extension `M̃ = {ρ > -ε}` and the
//! intermediate domain `M_½ = {ρ > -ε/2}`, plus boundary geometry.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::metric::{christoffel, inner, metric_at, Metric};

/// Defining function `ρ` of a star-shaped chart domain.
pub trait DefiningFunction: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn rho(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let h = 1e-6 * self.diameter().max(1e-3);
        let mut y = x.to_vec();
        DVector::from_iterator(
            x.len(),
            (0..x.len()).map(|k| {
                y[k] = x[k] + h;
                let p = self.rho(&y);
                y[k] = x[k] - h;
                let m = self.rho(&y);
                y[k] = x[k];
                (p - m) / (2.0 * h)
            }),
        )
    }

    /// A point from which every level set of interest is star-shaped.
    fn center(&self) -> Vec<f64>;
    fn diameter(&self) -> f64;
}

/// Euclidean ball in the chart with `ρ = (R² − |x − c|²)/(2R)`, so that
/// `|∇ρ| = 1` on the boundary and `ρ` approximates the distance to it.
#[derive(Debug, Clone)]
pub struct Disk {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl DefiningFunction for Disk {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn rho(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c).powi(2))
            .sum();
        (self.radius * self.radius - r2) / (2.0 * self.radius)
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(&self.center)
                .map(|(a, c)| -(a - c) / self.radius),
        )
    }

    fn center(&self) -> Vec<f64> {
        self.center.clone()
    }

    fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

/// Slab `lo < x^n < hi`, unbounded in the other coordinates.
#[derive(Debug, Clone)]
pub struct Slab {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
}

impl DefiningFunction for Slab {
    fn dim(&self) -> usize {
        self.n
    }

    fn rho(&self, x: &[f64]) -> f64 {
        let t = x[self.n - 1];
        (t - self.lo) * (self.hi - t) / (self.hi - self.lo)
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let t = x[self.n - 1];
        let mut g = DVector::zeros(self.n);
        g[self.n - 1] = (self.hi + self.lo - 2.0 * t) / (self.hi - self.lo);
        g
    }

    fn center(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n];
        c[self.n - 1] = 0.5 * (self.lo + self.hi);
        c
    }

    fn diameter(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `ρ` given as an expression; gradient is symbolic.
#[derive(Debug, Clone)]
pub struct ExpressionDomain {
    rho: Expr,
    grad: Vec<Expr>,
    center: Vec<f64>,
    diameter: f64,
}

impl ExpressionDomain {
    pub fn parse(n: usize, rho: &str, center: Option<Vec<f64>>) -> Result<Self> {
        let rho = expr::parse(rho, n)?;
        let grad = (0..n).map(|k| rho.differentiate(k)).collect();
        let center = center.unwrap_or_else(|| vec![0.0; n]);
        if center.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: center.len(),
            });
        }
        let mut d = ExpressionDomain {
            rho,
            grad,
            center,
            diameter: 1.0,
        };
        if d.rho(&d.center) <= 0.0 {
            return Err(Error::Config("domain center must satisfy rho > 0".into()));
        }
        // estimate the diameter from boundary hits along the coordinate axes
        let mut far = 0.0f64;
        for k in 0..n {
            for s in [-1.0, 1.0] {
                let mut dir = vec![0.0; n];
                dir[k] = s;
                if let Some(t) = ray_level_hit(&d, &d.center, &dir, 0.0, 1e3) {
                    far = far.max(t);
                }
            }
        }
        d.diameter = if far > 0.0 { 2.0 * far } else { 1.0 };
        Ok(d)
    }
}

impl DefiningFunction for ExpressionDomain {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn rho(&self, x: &[f64]) -> f64 {
        self.rho.eval(x)
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), self.grad.iter().map(|e| e.eval(x)))
    }

    fn center(&self) -> Vec<f64> {
        self.center.clone()
    }

    fn diameter(&self) -> f64 {
        self.diameter
    }
}

/// First `t > 0` with `ρ(c + t d) = level`, searching up to `t_max`.
fn ray_level_hit(
    d: &dyn DefiningFunction,
    c: &[f64],
    dir: &[f64],
    level: f64,
    t_max: f64,
) -> Option<f64> {
    let at = |t: f64| {
        let p: Vec<f64> = c.iter().zip(dir).map(|(a, b)| a + t * b).collect();
        d.rho(&p) - level
    };
    let mut t0 = 0.0;
    let mut f0 = at(0.0);
    if f0 <= 0.0 {
        return None;
    }
    let mut step = 1e-2;
    while t0 < t_max {
        let t1 = t0 + step;
        let f1 = at(t1);
        if f1 <= 0.0 {
            return Some(crate::roots::bisect_secant(&at, t0, t1, f0, f1, 1e-15));
        }
        t0 = t1;
        f0 = f1;
        step = (step * 1.5).min(0.05 * t1.max(0.2));
    }
    None
}

/// Which level surface a geodesic is stopped at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    /// `∂M`, `ρ = 0`.
    Boundary,
    /// `∂M_½`, `ρ = -ε/2`.
    Half,
    /// `∂M̃`, `ρ = -ε`.
    Extended,
}

/// `M` together with its extension margin.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub defining: Arc<dyn DefiningFunction>,
    pub extension_margin: f64,
    pub tol_boundary: f64,
}

impl DomainSpec {
    /// Defaults: `ε = 0.15 × diameter`, boundary band `1e-9 × diameter`.
    pub fn new(defining: Arc<dyn DefiningFunction>) -> Self {
        let d = defining.diameter();
        DomainSpec {
            defining,
            extension_margin: 0.15 * d,
            tol_boundary: 1e-9 * d,
        }
    }

    pub fn disk(radius: f64) -> Self {
        Self::new(Arc::new(Disk {
            center: vec![0.0, 0.0],
            radius,
        }))
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.extension_margin = margin;
        self
    }

    pub fn dim(&self) -> usize {
        self.defining.dim()
    }

    pub fn rho(&self, x: &[f64]) -> f64 {
        self.defining.rho(x)
    }

    pub fn diameter(&self) -> f64 {
        self.defining.diameter()
    }

    pub fn level(&self, s: Surface) -> f64 {
        match s {
            Surface::Boundary => 0.0,
            Surface::Half => -0.5 * self.extension_margin,
            Surface::Extended => -self.extension_margin,
        }
    }

    pub fn inside(&self, x: &[f64], s: Surface) -> bool {
        self.rho(x) > self.level(s)
    }

    /// Point of the level surface in the chart direction `dir` from the center.
    pub fn boundary_point(&self, s: Surface, dir: &[f64]) -> Option<Vec<f64>> {
        let c = self.defining.center();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let d: Vec<f64> = dir.iter().map(|v| v / norm).collect();
        let t = ray_level_hit(
            self.defining.as_ref(),
            &c,
            &d,
            self.level(s),
            100.0 * self.diameter(),
        )?;
        Some(c.iter().zip(&d).map(|(a, b)| a + t * b).collect())
    }

    /// Boundary point at polar angle `theta` about the center (n = 2).
    pub fn boundary_point_at_angle(&self, s: Surface, theta: f64) -> Option<Vec<f64>> {
        self.boundary_point(s, &[theta.cos(), theta.sin()])
    }

    /// Polar angle of a point about the center (n = 2).
    pub fn angle_of(&self, x: &[f64]) -> f64 {
        let c = self.defining.center();
        (x[1] - c[1]).atan2(x[0] - c[0])
    }
}

/// Outward unit normal at a boundary point, as (covector, vector).
pub fn boundary_normal(
    domain: &DomainSpec,
    metric: &dyn Metric,
    x: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let rho = domain.rho(x);
    if rho.abs() >= domain.tol_boundary {
        return Err(Error::NotOnBoundary {
            point: x.to_vec(),
            rho,
        });
    }
    normal_field(domain, metric, x)
}

/// Unit field `-∇ρ / |∇ρ|_g`, defined near the boundary.
fn normal_field(
    domain: &DomainSpec,
    metric: &dyn Metric,
    x: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let g = metric_at(metric, x)?;
    let ginv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NonPositiveDefinite { point: x.to_vec() })?;
    let dr = domain.defining.gradient(x);
    let norm = (dr.transpose() * &ginv * &dr)[(0, 0)].sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Invalid("vanishing gradient of rho".into()));
    }
    let cov = -dr / norm;
    let vec = &ginv * &cov;
    Ok((cov, vec))
}

/// `⟨∇_ξ ν, ξ⟩` with `ν` the extended outward unit normal field.
pub fn second_fundamental_form(
    domain: &DomainSpec,
    metric: &dyn Metric,
    x: &[f64],
    xi: &[f64],
) -> Result<f64> {
    let (_, nu) = boundary_normal(domain, metric, x)?;
    let g: DMatrix<f64> = metric_at(metric, x)?;
    let xi_norm = inner(&g, xi, xi).sqrt();
    let along = inner(&g, xi, nu.as_slice());
    if along.abs() > 1e-8 * xi_norm.max(1e-300) {
        return Err(Error::NotTangent { inner: along });
    }
    let n = x.len();
    let h = 1e-5 * domain.diameter();
    let mut y = x.to_vec();
    // ξ^j ∂_j N by central differences along ξ itself
    let scale = xi_norm.max(1e-300);
    let mut dn = vec![0.0; n];
    {
        for (s, sign) in [(h, 1.0), (-h, -1.0)] {
            for k in 0..n {
                y[k] = x[k] + s * xi[k] / scale;
            }
            let (_, nv) = normal_field(domain, metric, &y)?;
            for k in 0..n {
                dn[k] += sign * nv[k] * scale / (2.0 * h);
            }
        }
    }
    let c = christoffel(metric, x)?;
    let mut corr = vec![0.0; n];
    c.contract(xi, nu.as_slice(), &mut corr);
    let cov: Vec<f64> = (0..n).map(|k| dn[k] + corr[k]).collect();
    Ok(inner(&g, &cov, xi))
}

/// A `g`-unit tangent vector to the boundary at `x` (n = 2).
pub fn boundary_tangent(domain: &DomainSpec, metric: &dyn Metric, x: &[f64]) -> Result<Vec<f64>> {
    let (cov, _) = normal_field(domain, metric, x)?;
    // vectors annihilated by the normal covector
    let t = [-cov[1], cov[0]];
    let g = metric_at(metric, x)?;
    let len = inner(&g, &t, &t).sqrt();
    Ok(vec![t[0] / len, t[1] / len])
}
