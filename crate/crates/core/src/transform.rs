//! The geodesic ray transform, the endpoint identity for potential fields
//! and the partial-ray function `u(x, ξ)`.

use std::sync::Arc;

use serde::Serialize;

use crate::domain::{DefiningFunction, Surface};
use crate::error::Result;
use crate::field::{contract, eval_into, Divergence, SymDerivative, TensorField};
use crate::geodesic::{Direction, Flow, Geodesic};
use crate::metric::Metric;
use crate::quadrature::integrate_panels;
use crate::roots::bisect_secant;

/// Default absolute quadrature tolerance.
pub const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct RayTransformResult {
    pub value: f64,
    pub error: f64,
    pub entry: Vec<f64>,
    pub exit: Vec<f64>,
}

pub fn sym_derivative(metric: Arc<dyn Metric>, v: Arc<dyn TensorField>) -> Arc<dyn TensorField> {
    Arc::new(SymDerivative { metric, v })
}

pub fn divergence(metric: Arc<dyn Metric>, f: Arc<dyn TensorField>) -> Arc<dyn TensorField> {
    Arc::new(Divergence { metric, f })
}

/// Parameters in `[a, b]` where `ρ` changes sign along the geodesic.
fn crossings(rho: &dyn DefiningFunction, gam: &Geodesic, knots: &[f64]) -> Vec<f64> {
    let at = |t: f64| rho.rho(&gam.point_at(t));
    let mut out = Vec::new();
    for w in knots.windows(2) {
        let sub = 4;
        let mut tp = w[0];
        let mut fp = at(tp);
        for s in 1..=sub {
            let t = w[0] + (w[1] - w[0]) * s as f64 / sub as f64;
            let f = at(t);
            if (fp > 0.0) != (f > 0.0) && fp != 0.0 && f != 0.0 {
                out.push(bisect_secant(&at, tp, t, fp, f, 1e-15));
            }
            tp = t;
            fp = f;
        }
    }
    out
}

/// Integral of `f(γ̇, γ̇)` (or `f_i γ̇^i`, or `f`) along `γ` over its whole
/// parameter range, with Gauss–Kronrod panels on the integrator steps and
/// extra breaks where `f` is cut off at `∂M`.
pub fn integrate_along(f: &dyn TensorField, gam: &Geodesic, tol: f64) -> Result<(f64, f64)> {
    let (a, b) = gam.t_range();
    integrate_along_range(f, gam, a, b, tol)
}

fn integrate_along_range(
    f: &dyn TensorField,
    gam: &Geodesic,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    if gam.is_point() || b <= a {
        return Ok((0.0, 0.0));
    }
    let n = gam.dim();
    let mut panels: Vec<f64> = gam
        .knots()
        .into_iter()
        .filter(|&t| t > a && t < b)
        .collect();
    panels.insert(0, a);
    panels.push(b);
    if let Some(rho) = f.support() {
        panels.extend(crossings(rho.as_ref(), gam, &panels.clone()));
        panels.sort_by(f64::total_cmp);
        panels.dedup();
    }
    let rank = f.rank();
    let mut y = vec![0.0; 2 * n];
    let mut comps = vec![0.0; f.components()];
    let mut integrand = |t: f64| -> Result<f64> {
        gam.state_into(t, &mut y);
        eval_into(f, &y[..n], &mut comps)?;
        Ok(contract(rank, &comps, &y[n..], &y[n..]))
    };
    integrate_panels(&mut integrand, &panels, tol)
}

pub fn ray_transform(f: &dyn TensorField, gam: &Geodesic, tol: f64) -> Result<RayTransformResult> {
    let (value, error) = integrate_along(f, gam, tol)?;
    Ok(RayTransformResult {
        value,
        error,
        entry: gam.start(),
        exit: gam.end(),
    })
}

/// `|I(dv)(γ) − (⟨v, γ̇⟩(l) − ⟨v, γ̇⟩(0))|`.
pub fn endpoint_identity_check(
    metric: Arc<dyn Metric>,
    v: Arc<dyn TensorField>,
    gam: &Geodesic,
    tol: f64,
) -> Result<f64> {
    let dv = sym_derivative(metric, v.clone());
    let (lhs, _) = integrate_along(dv.as_ref(), gam, tol)?;
    let (a, b) = gam.t_range();
    let pair = |t: f64| -> Result<f64> {
        let (x, xi) = gam.state(t);
        let mut comps = vec![0.0; v.components()];
        eval_into(v.as_ref(), &x, &mut comps)?;
        Ok(contract(1, &comps, &xi, &xi))
    };
    Ok((lhs - (pair(b)? - pair(a)?)).abs())
}

/// `u(x, ξ) = ∫_{τ_-}^0 f(γ̇, γ̇) dt` along the geodesic with initial
/// velocity `ξ` (not normalized), traced backward to `∂M̃`. For fields
/// extended by zero this equals the integral from `∂M`.
pub fn u_function(
    flow: &Flow,
    f: &dyn TensorField,
    x: &[f64],
    xi: &[f64],
    tol: f64,
) -> Result<f64> {
    let gam = flow.shoot(x, xi, Surface::Extended, Direction::Backward)?;
    Ok(integrate_along(f, &gam, tol)?.0)
}
