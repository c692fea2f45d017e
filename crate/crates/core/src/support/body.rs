//! Closed bodies `K ⊂ M` given by a signed distance estimate.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::registry::{Params, Registry};
use crate::roots::bisect_secant;
use crate::simplicity::sphere_direction;

pub trait ConvexBody: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Negative inside, positive outside; exact for balls, a first-order
    /// estimate otherwise.
    fn signed_distance(&self, x: &[f64]) -> f64;
    fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x) <= 0.0
    }
    /// A point well inside the body.
    fn interior_point(&self) -> Vec<f64>;
    /// `count` points on `∂K`.
    fn boundary_sample(&self, count: usize) -> Vec<Vec<f64>>;
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn along(c: &[f64], dir: &[f64], t: f64) -> Vec<f64> {
    c.iter().zip(dir).map(|(a, b)| a + t * b).collect()
}

/// Coordinate ball.
#[derive(Debug, Clone)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl ConvexBody for Ball {
    fn name(&self) -> &str {
        "ball"
    }

    fn dim(&self) -> usize {
        self.center.len()
    }

    fn signed_distance(&self, x: &[f64]) -> f64 {
        dist(x, &self.center) - self.radius
    }

    fn interior_point(&self) -> Vec<f64> {
        self.center.clone()
    }

    fn boundary_sample(&self, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|i| {
                along(
                    &self.center,
                    &sphere_direction(self.dim(), i, count),
                    self.radius,
                )
            })
            .collect()
    }
}

/// Coordinate shell `inner ≤ |x − c| ≤ outer`; not convex, kept as a
/// negative control.
#[derive(Debug, Clone)]
pub struct Annulus {
    pub center: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
}

impl ConvexBody for Annulus {
    fn name(&self) -> &str {
        "annulus"
    }

    fn dim(&self) -> usize {
        self.center.len()
    }

    fn signed_distance(&self, x: &[f64]) -> f64 {
        let r = dist(x, &self.center);
        (self.inner - r).max(r - self.outer)
    }

    fn interior_point(&self) -> Vec<f64> {
        let mut p = self.center.clone();
        p[0] += 0.5 * (self.inner + self.outer);
        p
    }

    fn boundary_sample(&self, count: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        let half = count.div_ceil(2);
        (0..count)
            .map(|i| {
                let r = if i % 2 == 0 { self.outer } else { self.inner };
                along(&self.center, &sphere_direction(n, i / 2, half), r)
            })
            .collect()
    }
}

/// `K = {φ ≤ 0}` for an expression `φ`, star-shaped about `center`, with an
/// optional signed distance expression.
#[derive(Debug, Clone)]
pub struct ExpressionBody {
    indicator: Expr,
    grad: Vec<Expr>,
    distance: Option<Expr>,
    center: Vec<f64>,
    reach: f64,
}

impl ExpressionBody {
    pub fn parse(
        n: usize,
        indicator: &str,
        distance: Option<&str>,
        center: Option<Vec<f64>>,
    ) -> Result<Self> {
        let indicator = expr::parse(indicator, n)?;
        let grad = (0..n).map(|k| indicator.differentiate(k)).collect();
        let distance = distance.map(|d| expr::parse(d, n)).transpose()?;
        let center = center.unwrap_or_else(|| vec![0.0; n]);
        if center.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: center.len(),
            });
        }
        if indicator.eval(&center) >= 0.0 {
            return Err(Error::Config(
                "body center must satisfy indicator < 0".into(),
            ));
        }
        Ok(ExpressionBody {
            indicator,
            grad,
            distance,
            center,
            reach: 10.0,
        })
    }
}

impl ConvexBody for ExpressionBody {
    fn name(&self) -> &str {
        "expression"
    }

    fn dim(&self) -> usize {
        self.center.len()
    }

    fn signed_distance(&self, x: &[f64]) -> f64 {
        if let Some(d) = &self.distance {
            return d.eval(x);
        }
        let phi = self.indicator.eval(x);
        let g = self
            .grad
            .iter()
            .map(|e| e.eval(x).powi(2))
            .sum::<f64>()
            .sqrt();
        if g > 0.0 {
            phi / g
        } else {
            phi
        }
    }

    fn interior_point(&self) -> Vec<f64> {
        self.center.clone()
    }

    fn boundary_sample(&self, count: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..count)
            .filter_map(|i| {
                let dir = sphere_direction(n, i, count);
                let at = |t: f64| self.indicator.eval(&along(&self.center, &dir, t));
                let mut t0 = 0.0;
                let mut f0 = at(0.0);
                let step = 1e-2;
                while t0 < self.reach {
                    let t1 = t0 + step;
                    let f1 = at(t1);
                    if f1 >= 0.0 {
                        let t = bisect_secant(&at, t0, t1, f0, f1, 1e-15);
                        return Some(along(&self.center, &dir, t));
                    }
                    t0 = t1;
                    f0 = f1;
                }
                None
            })
            .collect()
    }
}

fn center_of(p: &Params) -> Vec<f64> {
    p.vec_f64("center").unwrap_or_else(|| vec![0.0, 0.0])
}

fn need(p: &Params, key: &str) -> Result<f64> {
    p.f64(key)
        .ok_or_else(|| Error::Config(format!("convex body needs `{key}`")))
}

fn build_ball(p: &Params) -> Result<Arc<dyn ConvexBody>> {
    Ok(Arc::new(Ball {
        center: center_of(p),
        radius: need(p, "radius")?,
    }))
}

fn build_annulus(p: &Params) -> Result<Arc<dyn ConvexBody>> {
    Ok(Arc::new(Annulus {
        center: center_of(p),
        inner: need(p, "inner")?,
        outer: need(p, "outer")?,
    }))
}

fn build_expression(p: &Params) -> Result<Arc<dyn ConvexBody>> {
    let ind = p
        .str("indicator")
        .ok_or_else(|| Error::Config("expression body needs `indicator`".into()))?;
    let n = p.usize_or("dim", 2);
    Ok(Arc::new(ExpressionBody::parse(
        n,
        ind,
        p.str("distance"),
        p.vec_f64("center"),
    )?))
}

/// `ball` (`center`, `radius`), `annulus` (`center`, `inner`, `outer`) and
/// `expression` (`indicator`, optional `distance`, `center`, `dim`).
pub fn body_registry() -> &'static Registry<dyn ConvexBody> {
    static R: OnceLock<Registry<dyn ConvexBody>> = OnceLock::new();
    R.get_or_init(|| {
        let mut r = Registry::new("convex body");
        r.register("ball", build_ball)
            .register("annulus", build_annulus)
            .register("expression", build_expression);
        r
    })
}
