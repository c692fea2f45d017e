//! Variational equations of the geodesic flow (Jacobi fields in coordinates)
//! and conjugate point detection.
//!
//! A variation `(δx, δξ)` of a geodesic satisfies
//! `δx' = δξ`, `δξ' = −∂_m(Γ^k_ij ξ^i ξ^j) δx^m − 2 Γ^k_ij ξ^i δξ^j`.
//! `δx` is the Jacobi field; its covariant derivative is `δξ + Γ(ξ, δx)`.

use nalgebra::DMatrix;

use crate::domain::Surface;
use crate::error::Result;
use crate::geodesic::Flow;
use crate::metric::{christoffel, ChristoffelAt, Metric};
use crate::ode::{integrate, Event, Solution};

/// Christoffel symbols at `x` and the matrix `∂_m(Γ^k_ij ξ^i ξ^j)` (row k,
/// column m), the latter by fourth-order central differences.
pub fn christoffel_jet(
    metric: &dyn Metric,
    x: &[f64],
    xi: &[f64],
    step: f64,
) -> Result<(ChristoffelAt, DMatrix<f64>)> {
    let n = x.len();
    let c = christoffel(metric, x)?;
    let mut jac = DMatrix::zeros(n, n);
    let mut y = x.to_vec();
    let mut q = vec![0.0; n];
    for m in 0..n {
        let mut acc = vec![0.0; n];
        for (s, w) in [(1.0, 8.0), (-1.0, -8.0), (2.0, -1.0), (-2.0, 1.0)] {
            y[m] = x[m] + s * step;
            christoffel(metric, &y)?.contract(xi, xi, &mut q);
            for k in 0..n {
                acc[k] += w * q[k];
            }
        }
        y[m] = x[m];
        for k in 0..n {
            jac[(k, m)] = acc[k] / (12.0 * step);
        }
    }
    Ok((c, jac))
}

/// Right-hand side for a geodesic carrying `k` variations. Layout:
/// `[x, ξ, δx_1, δξ_1, …, δx_k, δξ_k]`.
pub fn variational_rhs(metric: &dyn Metric, step: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
    let n = metric.dim();
    let (x, rest) = y.split_at(n);
    let xi = &rest[..n];
    let (c, jac) = christoffel_jet(metric, x, xi, step)?;
    let mut acc = vec![0.0; n];
    c.contract(xi, xi, &mut acc);
    dy[..n].copy_from_slice(xi);
    for k in 0..n {
        dy[n + k] = -acc[k];
    }
    let k_fields = (y.len() - 2 * n) / (2 * n);
    let mut tmp = vec![0.0; n];
    for f in 0..k_fields {
        let o = 2 * n + 2 * n * f;
        let dx = &y[o..o + n];
        let dxi = &y[o + n..o + 2 * n];
        c.contract(xi, dxi, &mut tmp);
        for k in 0..n {
            dy[o + k] = dxi[k];
            let mut s = 0.0;
            for m in 0..n {
                s += jac[(k, m)] * dx[m];
            }
            dy[o + n + k] = -s - 2.0 * tmp[k];
        }
    }
    Ok(())
}

/// Geodesic integrated together with a set of variations.
#[derive(Debug, Clone)]
pub struct JacobiRun {
    pub n: usize,
    pub fields: usize,
    pub sol: Solution,
}

impl JacobiRun {
    pub fn state(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let y = self.sol.eval(t);
        (y[..self.n].to_vec(), y[self.n..2 * self.n].to_vec())
    }

    /// `(δx, δξ)` of every carried variation at `t`.
    pub fn variations(&self, t: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let y = self.sol.eval(t);
        self.split(&y)
    }

    pub fn split(&self, y: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let n = self.n;
        (0..self.fields)
            .map(|f| {
                let o = 2 * n + 2 * n * f;
                (y[o..o + n].to_vec(), y[o + n..o + 2 * n].to_vec())
            })
            .collect()
    }
}

/// Integrate the geodesic from `(x, ξ)` with the given initial variations
/// up to parameter `t_end`, or until the stop surface is crossed.
pub fn integrate_with_variations(
    flow: &Flow,
    x: &[f64],
    xi: &[f64],
    inits: &[(Vec<f64>, Vec<f64>)],
    t_end: f64,
    stop: Option<Surface>,
) -> Result<JacobiRun> {
    let n = x.len();
    let mut y0 = Vec::with_capacity(2 * n * (1 + inits.len()));
    y0.extend_from_slice(x);
    y0.extend_from_slice(xi);
    for (a, b) in inits {
        y0.extend_from_slice(a);
        y0.extend_from_slice(b);
    }
    let metric = flow.metric.as_ref();
    let step = flow.jet_step();
    let level = stop.map(|s| flow.domain.level(s));
    let g = |_: f64, y: &[f64]| flow.domain.rho(&y[..n]) - level.unwrap_or(0.0);
    let ev = Event { g: &g };
    let sol = integrate(
        |_, y, dy| variational_rhs(metric, step, y, dy),
        0.0,
        &y0,
        t_end,
        &flow.ode,
        &[],
        level.map(|_| &ev),
    )?;
    Ok(JacobiRun {
        n,
        fields: inits.len(),
        sol,
    })
}

/// `det[J_1, …, J_{n−1}, γ̇]` from a state vector.
fn normal_determinant(run: &JacobiRun, y: &[f64]) -> f64 {
    let n = run.n;
    let mut m = DMatrix::zeros(n, n);
    for (c, (dx, _)) in run.split(y).iter().enumerate() {
        for r in 0..n {
            m[(r, c)] = dx[r];
        }
    }
    for r in 0..n {
        m[(r, n - 1)] = y[n + r];
    }
    m.determinant()
}

/// g-orthonormal basis of the complement of `ξ` (unit) at `x`, oriented so
/// that `det[e_1, …, e_{n−1}, ξ] > 0`.
pub fn normal_frame(g: &DMatrix<f64>, xi: &[f64]) -> Vec<Vec<f64>> {
    let n = xi.len();
    let mut basis: Vec<Vec<f64>> = vec![xi.to_vec()];
    for k in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        for b in &basis {
            let p = crate::metric::inner(g, &v, b) / crate::metric::inner(g, b, b);
            for i in 0..n {
                v[i] -= p * b[i];
            }
        }
        let len = crate::metric::inner(g, &v, &v).sqrt();
        if len > 1e-8 {
            basis.push(v.iter().map(|a| a / len).collect());
        }
    }
    let mut frame: Vec<Vec<f64>> = basis.split_off(1);
    let mut m = DMatrix::zeros(n, n);
    for (c, e) in frame
        .iter()
        .chain(std::iter::once(&xi.to_vec()))
        .enumerate()
    {
        for r in 0..n {
            m[(r, c)] = e[r];
        }
    }
    if m.determinant() < 0.0 {
        for a in frame[0].iter_mut() {
            *a = -*a;
        }
    }
    frame
}

/// First parameter `t ∈ (0, length]` at which a Jacobi field with `J(0) = 0`
/// normal to the geodesic from `(x, ξ)` vanishes, refined to `1e-8`.
pub fn first_conjugate(flow: &Flow, x: &[f64], xi: &[f64], length: f64) -> Result<Option<f64>> {
    let n = x.len();
    let g = crate::metric::metric_at(flow.metric.as_ref(), x)?;
    let speed = crate::metric::inner(&g, xi, xi).sqrt();
    let unit: Vec<f64> = xi.iter().map(|a| a / speed).collect();
    let inits: Vec<_> = normal_frame(&g, &unit)
        .into_iter()
        .map(|e| (vec![0.0; n], e))
        .collect();
    let run = integrate_with_variations(flow, x, &unit, &inits, length, None)?;
    let knots = run.sol.knots();
    // J(t) ≈ t e, so the determinant starts positive; scan sub-samples of
    // every step for the first sign change
    let det_at = |t: f64| normal_determinant(&run, &run.sol.eval(t));
    let t_min = 1e-6 * length.max(1.0);
    let mut prev: Option<(f64, f64)> = None;
    for w in knots.windows(2) {
        for s in 0..4 {
            let t = w[0] + (w[1] - w[0]) * (s + 1) as f64 / 4.0;
            if t < t_min {
                continue;
            }
            let d = det_at(t);
            if let Some((tp, dp)) = prev {
                if dp > 0.0 && d <= 0.0 {
                    let mut lo = tp;
                    let mut hi = t;
                    while hi - lo > 1e-9 {
                        let mid = 0.5 * (lo + hi);
                        if det_at(mid) > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    return Ok(Some(0.5 * (lo + hi)));
                }
            }
            prev = Some((t, d));
        }
    }
    Ok(None)
}
