//! Recovery of the potential `v` from `f = dv` inside a semi-geodesic chart.
//!
//! Phase 1 integrates `∂_r v_n = f_nn` along every line. Phase 2 solves the
//! tangential system `∂_r v_α − 2 Γ^β_{nα} v_β = 2 f_{αn} − ∂_α v_n` with the
//! cross-section derivative of `v_n` taken from neighboring lines. Both start
//! from zero before the entry face, where `f` vanishes.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::SemiGeodesicChart;
use crate::error::{Error, Result};
use crate::field::TensorField;
use crate::metric::{christoffel, inner, metric_at};
use crate::ode::{integrate, OdeOptions, Solution};
use crate::registry::{Params, Registry};
use crate::transform::u_function;

/// Fourth-order centered first-derivative weights at offsets −2..=2.
const D1: [(i64, f64); 4] = [(-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)];

/// `(A(r), w(r))` of a linear system `y' = A y + w`.
pub type LinearSystem<'a> = dyn Fn(f64) -> Result<(DMatrix<f64>, DVector<f64>)> + Sync + 'a;

/// Solution of a linear system started from `y(r0) = 0`.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub k: usize,
    sol: Solution,
    /// State holds `(Ψ, q)` with `y = Ψ q` instead of `y` itself.
    fundamental: bool,
}

impl LinearSolution {
    pub fn eval(&self, r: f64) -> Vec<f64> {
        let y = self.sol.eval(r);
        if !self.fundamental {
            return y;
        }
        let k = self.k;
        let psi = DMatrix::from_column_slice(k, k, &y[..k * k]);
        let q = DVector::from_column_slice(&y[k * k..]);
        (psi * q).iter().copied().collect()
    }

    pub fn r_range(&self) -> (f64, f64) {
        (self.sol.t_start(), self.sol.t_end())
    }
}

pub trait TangentialSolver: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn solve(
        &self,
        system: &LinearSystem,
        k: usize,
        r0: f64,
        r1: f64,
        breakpoints: &[f64],
        opts: &OdeOptions,
    ) -> Result<LinearSolution>;
}

/// Integrates `y' = A y + w` directly.
#[derive(Debug, Clone, Copy)]
pub struct DirectSolver;

impl TangentialSolver for DirectSolver {
    fn name(&self) -> &str {
        "direct"
    }

    fn solve(
        &self,
        system: &LinearSystem,
        k: usize,
        r0: f64,
        r1: f64,
        breakpoints: &[f64],
        opts: &OdeOptions,
    ) -> Result<LinearSolution> {
        let sol = integrate(
            |r, y, dy| {
                let (a, w) = system(r)?;
                let yv = DVector::from_column_slice(y);
                let d = a * yv + w;
                dy.copy_from_slice(d.as_slice());
                Ok(())
            },
            r0,
            &vec![0.0; k],
            r1,
            opts,
            breakpoints,
            None,
        )?;
        Ok(LinearSolution {
            k,
            sol,
            fundamental: false,
        })
    }
}

/// Variation of constants: `Ψ' = A Ψ`, `Ψ(r0) = I`, and
/// `y = Ψ ∫ Ψ^{-1} w`.
#[derive(Debug, Clone, Copy)]
pub struct DuhamelSolver;

impl TangentialSolver for DuhamelSolver {
    fn name(&self) -> &str {
        "duhamel"
    }

    fn solve(
        &self,
        system: &LinearSystem,
        k: usize,
        r0: f64,
        r1: f64,
        breakpoints: &[f64],
        opts: &OdeOptions,
    ) -> Result<LinearSolution> {
        let mut y0 = DMatrix::<f64>::identity(k, k).as_slice().to_vec();
        y0.extend(std::iter::repeat(0.0).take(k));
        let sol = integrate(
            |r, y, dy| {
                let (a, w) = system(r)?;
                let psi = DMatrix::from_column_slice(k, k, &y[..k * k]);
                let dpsi = &a * &psi;
                dy[..k * k].copy_from_slice(dpsi.as_slice());
                let q = psi
                    .lu()
                    .solve(&w)
                    .ok_or_else(|| Error::SingularSystem("fundamental matrix".into()))?;
                dy[k * k..].copy_from_slice(q.as_slice());
                Ok(())
            },
            r0,
            &y0,
            r1,
            opts,
            breakpoints,
            None,
        )?;
        Ok(LinearSolution {
            k,
            sol,
            fundamental: true,
        })
    }
}

fn build_direct(_: &Params) -> Result<Arc<dyn TangentialSolver>> {
    Ok(Arc::new(DirectSolver))
}

fn build_duhamel(_: &Params) -> Result<Arc<dyn TangentialSolver>> {
    Ok(Arc::new(DuhamelSolver))
}

pub fn solver_registry() -> &'static Registry<dyn TangentialSolver> {
    static R: OnceLock<Registry<dyn TangentialSolver>> = OnceLock::new();
    R.get_or_init(|| {
        let mut r = Registry::new("tangential solver");
        r.register("direct", build_direct)
            .register("duhamel", build_duhamel);
        r
    })
}

/// Solve `y' = A(r) y + w(r)`, `y(r0) = 0` by variation of constants.
pub fn duhamel_solve(
    system: &LinearSystem,
    k: usize,
    r0: f64,
    r1: f64,
    breakpoints: &[f64],
    opts: &OdeOptions,
) -> Result<LinearSolution> {
    DuhamelSolver.solve(system, k, r0, r1, breakpoints, opts)
}

#[derive(Debug, Clone)]
pub struct ExtractionOptions {
    pub ode: OdeOptions,
    pub solver: Arc<dyn TangentialSolver>,
}

impl Default for ExtractionOptions {
    fn default() -> Self {
        ExtractionOptions {
            ode: OdeOptions::default().with_tol(1e-11, 1e-13),
            solver: Arc::new(DirectSolver),
        }
    }
}

impl ExtractionOptions {
    fn ode_for(&self, chart: &SemiGeodesicChart) -> OdeOptions {
        let cap = 0.05 * (chart.r_end - chart.r_start);
        self.ode.with_h_max(self.ode.h_max.min(cap))
    }
}

fn faces_in_range(chart: &SemiGeodesicChart, lines: &[usize]) -> Vec<f64> {
    let mut out: Vec<f64> = lines
        .iter()
        .filter_map(|&j| chart.faces(j))
        .flat_map(|(a, b)| [a, b])
        .filter(|&t| t > chart.r_start && t < chart.r_end)
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

fn check_rank2(f: &dyn TensorField, chart: &SemiGeodesicChart) -> Result<()> {
    if f.rank() != 2 || f.dim() != chart.n {
        return Err(Error::Invalid(format!(
            "extraction needs a rank-2 field in dimension {}, got rank {} in dimension {}",
            chart.n,
            f.rank(),
            f.dim()
        )));
    }
    Ok(())
}

/// `v_n` on every line, on the common range `[r_start, r_end]`.
pub fn extract_vn(
    chart: &SemiGeodesicChart,
    f: &dyn TensorField,
    opts: &ExtractionOptions,
) -> Result<Vec<Solution>> {
    check_rank2(f, chart)?;
    let n = chart.n;
    let ode = opts.ode_for(chart);
    (0..chart.line_count())
        .into_par_iter()
        .map(|j| {
            let bps = faces_in_range(chart, &[j]);
            integrate(
                |r, _, dy| {
                    dy[0] = chart.pull_back(f, j, r)?[n * n - 1];
                    Ok(())
                },
                chart.r_start,
                &[0.0],
                chart.r_end,
                &ode,
                &bps,
                None,
            )
        })
        .collect()
}

/// Lines `j ± 1, j ± 2` along every cross-section axis, or `StencilBoundary`.
fn stencil(chart: &SemiGeodesicChart, j: usize) -> Result<Vec<Vec<usize>>> {
    (0..chart.n - 1)
        .map(|axis| {
            D1.iter()
                .map(|&(o, _)| {
                    chart
                        .neighbor(j, axis, o)
                        .ok_or(Error::StencilBoundary { line: j })
                })
                .collect()
        })
        .collect()
}

/// Cross-section derivative `∂_α` of a per-line scalar at `r`.
fn cross_derivative(
    chart: &SemiGeodesicChart,
    lines: &[usize],
    value: impl Fn(usize) -> f64,
) -> f64 {
    let s: f64 = lines.iter().zip(D1).map(|(&l, (_, w))| w * value(l)).sum();
    s / (12.0 * chart.spacing)
}

/// Tangential components `v_α` on line `j`.
pub fn extract_tangential(
    chart: &SemiGeodesicChart,
    f: &dyn TensorField,
    vn: &[Solution],
    j: usize,
    opts: &ExtractionOptions,
) -> Result<LinearSolution> {
    check_rank2(f, chart)?;
    let n = chart.n;
    let k = n - 1;
    let st = stencil(chart, j)?;
    let mut involved: Vec<usize> = st.iter().flatten().copied().collect();
    involved.push(j);
    let bps = faces_in_range(chart, &involved);
    let system = |r: f64| -> Result<(DMatrix<f64>, DVector<f64>)> {
        let frame = chart.frame(j, r)?;
        let fc = chart.pull_back_at(f, j, r, &frame)?;
        let gam = chart.gamma_normal(j, r)?;
        let a = gam.transpose() * 2.0;
        let w = DVector::from_fn(k, |al, _| {
            let dvn = cross_derivative(chart, &st[al], |l| vn[l].eval(r)[0]);
            2.0 * fc[al * n + (n - 1)] - dvn
        });
        Ok((a, w))
    };
    opts.solver.solve(
        &system,
        k,
        chart.r_start,
        chart.r_end,
        &bps,
        &opts.ode_for(chart),
    )
}

/// Potential recovered on a whole chart.
#[derive(Debug, Clone)]
pub struct Extraction<'c> {
    pub chart: &'c SemiGeodesicChart,
    pub vn: Vec<Solution>,
    /// `None` on lines too close to the tube edge for the stencil.
    pub vt: Vec<Option<LinearSolution>>,
}

pub fn extract<'c>(
    chart: &'c SemiGeodesicChart,
    f: &dyn TensorField,
    opts: &ExtractionOptions,
) -> Result<Extraction<'c>> {
    let vn = extract_vn(chart, f, opts)?;
    let vt = (0..chart.line_count())
        .into_par_iter()
        .map(|j| match extract_tangential(chart, f, &vn, j, opts) {
            Ok(s) => Ok(Some(s)),
            Err(Error::StencilBoundary { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Extraction { chart, vn, vt })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ResidualReport {
    /// `max |f_nn − ∂_n v_n|`.
    pub max_h_nn: f64,
    /// `max |h_{nα}|` over lines with a tangential solution.
    pub max_h_ni: f64,
    /// `max |h(e_α, e_β)|` for the unit vectors `e_α = ∂_α X / |∂_α X|_g`,
    /// inside `M`, where second cross-section stencils fit.
    pub max_h_tangential: f64,
    pub points: usize,
}

impl ResidualReport {
    pub fn from_samples(pts: &[ResidualSample]) -> Self {
        let mut rep = ResidualReport {
            points: pts.len(),
            ..Default::default()
        };
        for p in pts {
            rep.max_h_nn = rep.max_h_nn.max(p.h_nn);
            rep.max_h_ni = rep.max_h_ni.max(p.h_ni.unwrap_or(0.0));
            rep.max_h_tangential = rep.max_h_tangential.max(p.h_tangential.unwrap_or(0.0));
        }
        rep
    }
}

/// Residual components at one chart point; `None` where the stencil for
/// that component does not fit.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualSample {
    pub line: usize,
    pub r: f64,
    pub x: Vec<f64>,
    pub h_nn: f64,
    /// `max_α |h_{nα}|`.
    pub h_ni: Option<f64>,
    pub h_tangential: Option<f64>,
}

impl Extraction<'_> {
    /// Chart components `(v_1, …, v_{n−1}, v_n)`.
    pub fn v_chart(&self, j: usize, r: f64) -> Option<Vec<f64>> {
        let mut v = self.vt[j].as_ref()?.eval(r);
        v.push(self.vn[j].eval(r)[0]);
        Some(v)
    }

    /// Original components of `v` at chart point `(j, r)`.
    pub fn v_original(&self, j: usize, r: f64) -> Result<Option<Vec<f64>>> {
        let Some(vc) = self.v_chart(j, r) else {
            return Ok(None);
        };
        let frame = self.chart.frame(j, r)?;
        Ok(Some(self.chart.covector_from_chart(&frame, &vc)?))
    }

    /// The residual `h = f − dv` at `samples` parameters per line, skipping
    /// parameters within a few difference steps of a face.
    pub fn residual(&self, f: &dyn TensorField, samples: usize) -> Result<ResidualReport> {
        Ok(ResidualReport::from_samples(
            &self.residual_samples(f, samples)?,
        ))
    }

    /// Pointwise residual components behind [`Extraction::residual`].
    pub fn residual_samples(
        &self,
        f: &dyn TensorField,
        samples: usize,
    ) -> Result<Vec<ResidualSample>> {
        let chart = self.chart;
        let n = chart.n;
        let k = n - 1;
        let span = chart.r_end - chart.r_start;
        let hr = 1e-3 * span;
        let lo = chart.r_start + 3.0 * hr;
        let hi = chart.r_end - 3.0 * hr;
        let d_r = |g: &dyn Fn(f64) -> Vec<f64>, r: f64| -> Vec<f64> {
            let mut acc = vec![0.0; n];
            for (o, w) in D1 {
                for (a, v) in acc.iter_mut().zip(g(r + o as f64 * hr)) {
                    *a += w * v;
                }
            }
            acc.iter().map(|a| a / (12.0 * hr)).collect()
        };
        let per_line: Vec<Vec<ResidualSample>> = (0..chart.line_count())
            .into_par_iter()
            .map(|j| -> Result<Vec<ResidualSample>> {
                let mut out = Vec::new();
                let st = stencil(chart, j).ok();
                let mut involved = vec![j];
                if let Some(st) = &st {
                    involved.extend(st.iter().flatten());
                }
                let faces = faces_in_range(chart, &involved);
                // second stencils: every neighbor along every axis carries v_α
                let full = st
                    .as_ref()
                    .is_some_and(|st| st.iter().flatten().all(|&l| self.vt[l].is_some()));
                for s in 0..samples {
                    let r = lo + (hi - lo) * (s as f64 + 0.5) / samples as f64;
                    if faces.iter().any(|&t| (t - r).abs() < 3.0 * hr) {
                        continue;
                    }
                    let frame = chart.frame(j, r)?;
                    let fc = chart.pull_back_at(f, j, r, &frame)?;
                    let dvn = d_r(&|t| vec![self.vn[j].eval(t)[0]; n], r)[0];
                    let mut sample = ResidualSample {
                        line: j,
                        r,
                        x: frame.x.clone(),
                        h_nn: (fc[n * n - 1] - dvn).abs(),
                        h_ni: None,
                        h_tangential: None,
                    };
                    let (Some(st), Some(vt)) = (&st, &self.vt[j]) else {
                        out.push(sample);
                        continue;
                    };
                    let gam = chart.gamma_normal(j, r)?;
                    let v = vt.eval(r);
                    let dv_r = d_r(
                        &|t| {
                            let mut e = vt.eval(t);
                            e.push(0.0);
                            e
                        },
                        r,
                    );
                    let mut worst = 0.0f64;
                    for al in 0..k {
                        let dvn_a = cross_derivative(chart, &st[al], |l| self.vn[l].eval(r)[0]);
                        let mut h = fc[al * n + k] - 0.5 * (dv_r[al] + dvn_a);
                        for b in 0..k {
                            h += gam[(b, al)] * v[b];
                        }
                        worst = worst.max(h.abs());
                    }
                    sample.h_ni = Some(worst);
                    if full && chart.flow.domain.rho(&frame.x) > 0.0 {
                        let mut vc = v.clone();
                        vc.push(self.vn[j].eval(r)[0]);
                        sample.h_tangential = self.tangential_block(j, r, st, &fc, &vc, &frame)?;
                    }
                    out.push(sample);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok(per_line.into_iter().flatten().collect())
    }

    /// `max_{αβ} |f_αβ − ½(∂_α v_β + ∂_β v_α) + Γ^c_{αβ} v_c|` with
    /// `Γ^c_{αβ} = E^{-1}(∂_α ∂_β X + Γ(∂_α X, ∂_β X))`. `None` when the
    /// stencil reaches across `∂M`, where `v` may be only finitely smooth.
    fn tangential_block(
        &self,
        j: usize,
        r: f64,
        st: &[Vec<usize>],
        fc: &[f64],
        vc: &[f64],
        frame: &crate::chart::Frame,
    ) -> Result<Option<f64>> {
        let chart = self.chart;
        let n = chart.n;
        let k = n - 1;
        let frames: Vec<Vec<crate::chart::Frame>> = st
            .iter()
            .map(|ls| ls.iter().map(|&l| chart.frame(l, r)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let domain = &chart.flow.domain;
        if frames.iter().flatten().any(|fr| domain.rho(&fr.x) <= 0.0) {
            return Ok(None);
        }
        let vts: Vec<Vec<Vec<f64>>> = st
            .iter()
            .map(|ls| {
                ls.iter()
                    .map(|&l| self.vt[l].as_ref().unwrap().eval(r))
                    .collect()
            })
            .collect();
        let c = christoffel(chart.flow.metric.as_ref(), &frame.x)?;
        let e_inv = frame
            .matrix()
            .try_inverse()
            .ok_or_else(|| Error::ChartDegenerate(format!("singular frame on line {j}")))?;
        let g = metric_at(chart.flow.metric.as_ref(), &frame.x)?;
        let lengths: Vec<f64> = frame.e.iter().map(|e| inner(&g, e, e).sqrt()).collect();
        let mut worst: f64 = 0.0;
        let mut tmp = vec![0.0; n];
        for a in 0..k {
            for b in a..k {
                // ∂_a ∂_b X as the cross derivative of ∂_b X along axis a
                let mut d2x = DVector::zeros(n);
                for (q, (_, w)) in D1.iter().enumerate() {
                    for i in 0..n {
                        d2x[i] += w * frames[a][q].e[b][i];
                    }
                }
                d2x /= 12.0 * chart.spacing;
                c.contract(&frame.e[a], &frame.e[b], &mut tmp);
                for i in 0..n {
                    d2x[i] += tmp[i];
                }
                let gam = &e_inv * d2x;
                let dab: f64 = D1
                    .iter()
                    .enumerate()
                    .map(|(q, (_, w))| w * vts[a][q][b])
                    .sum::<f64>()
                    / (12.0 * chart.spacing);
                let dba: f64 = D1
                    .iter()
                    .enumerate()
                    .map(|(q, (_, w))| w * vts[b][q][a])
                    .sum::<f64>()
                    / (12.0 * chart.spacing);
                let mut h = fc[a * n + b] - 0.5 * (dab + dba);
                for cc in 0..n {
                    h += gam[cc] * vc[cc];
                }
                worst = worst.max(h.abs() / (lengths[a] * lengths[b]));
            }
        }
        Ok(Some(worst))
    }
}

/// `v` at chart point `(j, r)` as `∂_ξ u(x, ξ)` at `ξ = ∂_r X`, by
/// central differences with one Richardson level. Chart components.
pub fn extract_via_u(
    chart: &SemiGeodesicChart,
    f: &dyn TensorField,
    j: usize,
    r: f64,
    step: f64,
) -> Result<Vec<f64>> {
    let flow = chart
        .flow
        .clone()
        .with_ode(chart.flow.ode.with_tol(1e-12, 1e-14));
    let frame = chart.frame(j, r)?;
    let n = chart.n;
    let xi = &frame.e[n - 1];
    let tol = 1e-13;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let central = |h: f64| -> Result<f64> {
            let mut p = xi.clone();
            p[i] += h;
            let up = u_function(&flow, f, &frame.x, &p, tol)?;
            p[i] -= 2.0 * h;
            let um = u_function(&flow, f, &frame.x, &p, tol)?;
            Ok((up - um) / (2.0 * h))
        };
        let d1 = central(step)?;
        let d2 = central(0.5 * step)?;
        grad[i] = (4.0 * d2 - d1) / 3.0;
    }
    Ok(chart.covector_to_chart(&frame, &grad))
}
