//! Geodesic flow: shooting to boundary surfaces, maximal geodesics and the
//! two-point problem.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::domain::{DomainSpec, Surface};
use crate::error::{Error, Result};
use crate::jacobi::integrate_with_variations;
use crate::metric::{christoffel, inner, metric_at, Metric};
use crate::ode::{integrate, Event, OdeOptions, Solution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Phase velocity `(ξ, −Γ^k_ij ξ^i ξ^j)` of the geodesic flow.
pub fn flow_field(metric: &dyn Metric, x: &[f64], xi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = christoffel(metric, x)?;
    let mut acc = vec![0.0; x.len()];
    c.contract(xi, xi, &mut acc);
    Ok((xi.to_vec(), acc.into_iter().map(|a| -a).collect()))
}

/// A geodesic with dense output. The flow is always integrated forward in
/// an internal parameter `s`; a backward geodesic is stored with `t = −s`
/// and reversed velocity.
#[derive(Debug, Clone)]
pub struct Geodesic {
    n: usize,
    sol: Solution,
    reversed: bool,
    speed: f64,
    /// Surface the geodesic was stopped at, if any.
    pub stop: Option<Surface>,
}

impl Geodesic {
    /// The constant geodesic `γ_[x,x]`.
    pub fn point(x: &[f64]) -> Self {
        let n = x.len();
        let mut y = x.to_vec();
        y.extend(std::iter::repeat(0.0).take(n));
        Geodesic {
            n,
            sol: Solution::constant(0.0, y),
            reversed: false,
            speed: 0.0,
            stop: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_point(&self) -> bool {
        self.speed == 0.0 || self.sol.t_end() == self.sol.t_start()
    }

    pub fn t_range(&self) -> (f64, f64) {
        if self.reversed {
            (-self.sol.t_end(), -self.sol.t_start())
        } else {
            (self.sol.t_start(), self.sol.t_end())
        }
    }

    /// `|ξ|_g`, constant along the flow.
    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// Riemannian length.
    pub fn length(&self) -> f64 {
        let (a, b) = self.t_range();
        self.speed * (b - a)
    }

    pub fn state(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut y = vec![0.0; 2 * n];
        self.state_into(t, &mut y);
        (y[..n].to_vec(), y[n..].to_vec())
    }

    /// `[x, ξ]` at `t` into a buffer of length `2n`.
    pub fn state_into(&self, t: f64, y: &mut [f64]) {
        if self.reversed {
            self.sol.eval_into(-t, y);
            for v in &mut y[self.n..] {
                *v = -*v;
            }
        } else {
            self.sol.eval_into(t, y);
        }
    }

    pub fn point_at(&self, t: f64) -> Vec<f64> {
        self.state(t).0
    }

    pub fn start(&self) -> Vec<f64> {
        self.point_at(self.t_range().0)
    }

    pub fn end(&self) -> Vec<f64> {
        self.point_at(self.t_range().1)
    }

    /// Integrator step boundaries in ascending `t`.
    pub fn knots(&self) -> Vec<f64> {
        let mut k = self.sol.knots();
        if self.reversed {
            k.reverse();
            for t in &mut k {
                *t = -*t;
            }
        }
        k
    }

    /// `(t, x, ξ)` at every step boundary.
    pub fn samples(&self) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
        self.knots()
            .into_iter()
            .map(|t| {
                let (x, v) = self.state(t);
                (t, x, v)
            })
            .collect()
    }

    /// Points at `count` equally spaced parameters.
    pub fn sample_points(&self, count: usize) -> Vec<Vec<f64>> {
        let (a, b) = self.t_range();
        (0..count)
            .map(|i| self.point_at(a + (b - a) * i as f64 / (count.max(2) - 1) as f64))
            .collect()
    }
}

/// Geodesic flow of a metric on a domain, with integration settings.
#[derive(Debug, Clone)]
pub struct Flow {
    pub metric: Arc<dyn Metric>,
    pub domain: DomainSpec,
    pub ode: OdeOptions,
    /// Arc length after which a geodesic is declared trapped.
    pub length_bound: f64,
}

impl Flow {
    pub fn new(metric: Arc<dyn Metric>, domain: DomainSpec) -> Self {
        let d = domain.diameter();
        Flow {
            metric,
            ode: OdeOptions::default().with_h_max(0.1 * d),
            length_bound: 50.0 * d,
            domain,
        }
    }

    pub fn with_ode(mut self, ode: OdeOptions) -> Self {
        self.ode = ode;
        self
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Step for differentiating Christoffel symbols.
    pub fn jet_step(&self) -> f64 {
        1e-3 * self.domain.diameter().min(1.0).max(0.1)
    }

    pub fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        metric_at(self.metric.as_ref(), x)
    }

    pub fn norm(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        Ok(inner(&self.metric_at(x)?, v, v).sqrt())
    }

    pub fn normalize(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let s = self.norm(x, v)?;
        Ok(v.iter().map(|a| a / s).collect())
    }

    /// Integrate from `(x, ξ)` until `ρ` drops to the level of `stop`.
    /// Backward geodesics carry the (negative) exit parameter `τ_-` as the
    /// lower end of [`Geodesic::t_range`].
    pub fn shoot(&self, x: &[f64], xi: &[f64], stop: Surface, dir: Direction) -> Result<Geodesic> {
        let n = x.len();
        if xi.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: xi.len(),
            });
        }
        let speed = self.norm(x, xi)?;
        if speed == 0.0 {
            return Ok(Geodesic::point(x));
        }
        let sign = if dir == Direction::Forward { 1.0 } else { -1.0 };
        let mut y0 = x.to_vec();
        y0.extend(xi.iter().map(|v| sign * v));
        let level = self.domain.level(stop);
        let g = |_: f64, y: &[f64]| self.domain.rho(&y[..n]) - level;
        let ev = Event { g: &g };
        let metric = self.metric.as_ref();
        let opts = OdeOptions {
            h_max: self.ode.h_max / speed,
            ..self.ode
        };
        let s_max = self.length_bound / speed;
        let sol = integrate(
            |_, y, dy| {
                let (x, xi) = y.split_at(n);
                let c = christoffel(metric, x)?;
                dy[..n].copy_from_slice(xi);
                c.contract(xi, xi, &mut dy[n..]);
                for v in &mut dy[n..] {
                    *v = -*v;
                }
                Ok(())
            },
            0.0,
            &y0,
            s_max,
            &opts,
            &[],
            Some(&ev),
        )?;
        if !sol.event {
            return Err(Error::NoExit {
                length: self.length_bound,
            });
        }
        Ok(Geodesic {
            n,
            sol,
            reversed: dir == Direction::Backward,
            speed,
            stop: Some(stop),
        })
    }

    /// Geodesic of fixed parameter length `t_end` from `(x, ξ)`, no stop.
    pub fn run(&self, x: &[f64], xi: &[f64], t_end: f64) -> Result<Geodesic> {
        let n = x.len();
        let speed = self.norm(x, xi)?;
        if speed == 0.0 || t_end <= 0.0 {
            return Ok(Geodesic::point(x));
        }
        let mut y0 = x.to_vec();
        y0.extend_from_slice(xi);
        let metric = self.metric.as_ref();
        let opts = OdeOptions {
            h_max: self.ode.h_max / speed,
            ..self.ode
        };
        let sol = integrate(
            |_, y, dy| {
                let (x, xi) = y.split_at(n);
                let c = christoffel(metric, x)?;
                dy[..n].copy_from_slice(xi);
                c.contract(xi, xi, &mut dy[n..]);
                for v in &mut dy[n..] {
                    *v = -*v;
                }
                Ok(())
            },
            0.0,
            &y0,
            t_end,
            &opts,
            &[],
            None,
        )?;
        Ok(Geodesic {
            n,
            sol,
            reversed: false,
            speed,
            stop: None,
        })
    }

    /// The maximal unit-speed geodesic through `x` in direction `ξ`,
    /// parametrized from its entry point on `stop` (t = 0) to its exit.
    pub fn maximal(&self, x: &[f64], xi: &[f64], stop: Surface) -> Result<Geodesic> {
        let unit = self.normalize(x, xi)?;
        let back = self.shoot(x, &unit, stop, Direction::Backward)?;
        let (t0, _) = back.t_range();
        let (p, v) = back.state(t0);
        self.shoot(&p, &v, stop, Direction::Forward)
    }

    /// `exp_x(ξ)` together with its differential `∂exp_x(ξ)/∂ξ`.
    pub fn exp_with_jacobian(&self, x: &[f64], xi: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let n = x.len();
        let inits: Vec<_> = (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                (vec![0.0; n], e)
            })
            .collect();
        let run = integrate_with_variations(self, x, xi, &inits, 1.0, None)?;
        let y = run.sol.y_end();
        let mut jac = DMatrix::zeros(n, n);
        for (c, (dx, _)) in run.split(y).iter().enumerate() {
            for r in 0..n {
                jac[(r, c)] = dx[r];
            }
        }
        Ok((y[..n].to_vec(), jac))
    }

    /// Initial velocity `ξ` with `exp_x(ξ) = y`, by damped Newton iteration.
    pub fn exp_inverse(&self, x: &[f64], y: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = x.len();
        let tol = 1e-12 * self.domain.diameter();
        let mut xi: Vec<f64> = match guess {
            Some(g) => g.to_vec(),
            None => x.iter().zip(y).map(|(a, b)| b - a).collect(),
        };
        let residual = |p: &[f64]| -> f64 {
            p.iter()
                .zip(y)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let (mut p, mut jac) = self.exp_with_jacobian(x, &xi)?;
        let mut r = residual(&p);
        for _ in 0..60 {
            if r <= tol {
                return Ok(xi);
            }
            let rhs = DVector::from_iterator(n, (0..n).map(|i| y[i] - p[i]));
            let delta = jac
                .clone()
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::SingularSystem("exp map differential".into()))?;
            let mut lambda = 1.0;
            loop {
                let cand: Vec<f64> = (0..n).map(|i| xi[i] + lambda * delta[i]).collect();
                match self.exp_with_jacobian(x, &cand) {
                    Ok((pc, jc)) => {
                        let rc = residual(&pc);
                        if rc < r || lambda < 1e-3 {
                            xi = cand;
                            p = pc;
                            jac = jc;
                            r = rc;
                            break;
                        }
                    }
                    Err(e) if lambda < 1e-3 => return Err(e),
                    Err(_) => {}
                }
                lambda *= 0.5;
            }
        }
        if r <= 1e3 * tol {
            return Ok(xi);
        }
        Err(Error::NoConvergence {
            iterations: 60,
            residual: r,
        })
    }

    /// Unit-speed geodesic `γ_[x,y]` from `x` to `y`. Coincident points give
    /// the constant geodesic.
    pub fn connect(&self, x: &[f64], y: &[f64]) -> Result<Geodesic> {
        let dist: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        if dist < self.domain.tol_boundary {
            return Ok(Geodesic::point(x));
        }
        let xi = match self.exp_inverse(x, y, None) {
            Ok(xi) => xi,
            Err(e) => {
                if x.len() == 2 {
                    self.connect_by_angle(x, y)?
                } else {
                    return Err(e);
                }
            }
        };
        let len = self.norm(x, &xi)?;
        let unit: Vec<f64> = xi.iter().map(|a| a / len).collect();
        self.run(x, &unit, len)
    }

    /// Two-dimensional fallback: bisection on the launch angle, using the
    /// side of the geodesic on which `y` lies.
    fn connect_by_angle(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let g = self.metric_at(x)?;
        let e1 = self.normalize(x, &[1.0, 0.0])?;
        let e2 = crate::jacobi::normal_frame(&g, &e1).remove(0);
        let chord = [y[0] - x[0], y[1] - x[1]];
        // chord direction in the orthonormal frame
        let a = inner(&g, &chord, &e1);
        let b = inner(&g, &chord, &e2);
        let theta0 = b.atan2(a);
        let dir = |th: f64| -> Vec<f64> {
            (0..2)
                .map(|i| th.cos() * e1[i] + th.sin() * e2[i])
                .collect()
        };
        // side of y relative to the ray at angle th: positive to the left
        let side = |th: f64| -> Result<f64> {
            let d = dir(th);
            let gam = self.shoot(x, &d, Surface::Extended, Direction::Forward)?;
            let (t0, t1) = gam.t_range();
            let mut best = (f64::INFINITY, 0.0);
            let m = 400;
            for i in 0..=m {
                let t = t0 + (t1 - t0) * i as f64 / m as f64;
                let (p, v) = gam.state(t);
                let dx = y[0] - p[0];
                let dy = y[1] - p[1];
                let dd = dx * dx + dy * dy;
                if dd < best.0 {
                    best = (dd, v[0] * dy - v[1] * dx);
                }
            }
            Ok(best.1)
        };
        let half = 0.5 * std::f64::consts::PI;
        let (mut lo, mut hi) = (theta0 - half, theta0 + half);
        let (mut slo, shi) = (side(lo)?, side(hi)?);
        if slo * shi > 0.0 {
            return Err(Error::NoConvergence {
                iterations: 0,
                residual: slo.abs().min(shi.abs()),
            });
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let s = side(mid)?;
            if (s > 0.0) == (slo > 0.0) {
                lo = mid;
                slo = s;
            } else {
                hi = mid;
            }
        }
        let d = dir(0.5 * (lo + hi));
        // refine the length by Newton from the bisection direction
        let gam = self.shoot(x, &d, Surface::Extended, Direction::Forward)?;
        let (t0, t1) = gam.t_range();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=1000 {
            let t = t0 + (t1 - t0) * i as f64 / 1000.0;
            let p = gam.point_at(t);
            let dd = (p[0] - y[0]).powi(2) + (p[1] - y[1]).powi(2);
            if dd < best.0 {
                best = (dd, t);
            }
        }
        let guess: Vec<f64> = d.iter().map(|v| v * best.1).collect();
        self.exp_inverse(x, y, Some(&guess))
    }
}
