//! Semi-geodesic charts `(x', x^n)` over a tube of coordinate lines.
//!
//! Each line `x' = const` is a unit-speed geodesic with `x^n = r` its arc
//! length. Along it we carry the frame `∂_a X` (the velocity for `a = n` and
//! Jacobi fields for the cross-section directions) and their covariant
//! `r`-derivatives, from which the in-chart metric `g'_ab = g(∂_a X, ∂_b X)`
//! and the symbols `Γ'^β_{nα}` follow without assuming the Gauss lemma.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::domain::Surface;
use crate::error::{Error, Result};
use crate::field::{component_count, TensorField};
use crate::geodesic::Flow;
use crate::jacobi::{integrate_with_variations, normal_frame, JacobiRun};
use crate::metric::{christoffel, inner, metric_at};
use crate::registry::{Params, Registry};
use crate::roots::bisect_secant;

/// Position, frame `∂_a X` (last entry is `∂_r X`) and covariant
/// derivatives `D_r ∂_α X` of the cross-section vectors at one chart point.
#[derive(Debug, Clone)]
pub struct Frame {
    pub x: Vec<f64>,
    pub e: Vec<Vec<f64>>,
    pub de: Vec<Vec<f64>>,
}

impl Frame {
    /// Matrix with columns `∂_a X`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.x.len();
        DMatrix::from_fn(n, n, |i, a| self.e[a][i])
    }
}

pub trait ChartLine: Send + Sync + fmt::Debug {
    fn r_min(&self) -> f64;
    fn r_max(&self) -> f64;
    fn frame(&self, r: f64) -> Result<Frame>;
    /// Integrator step boundaries, if the line is integrated numerically.
    fn knots(&self) -> Vec<f64>;
}

/// How the lines of a chart are generated and how points are located.
pub trait ChartGeometry: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn base(&self) -> &[f64];
    fn line(&self, flow: &Flow, xp: &[f64]) -> Result<Arc<dyn ChartLine>>;
    /// Chart coordinates `(x', r)` of an original point.
    fn locate(&self, flow: &Flow, x: &[f64]) -> Result<(Vec<f64>, f64)>;
}

/// Radial geodesics from a base point `x0`. The cross-section coordinate is
/// the normal coordinate on the unit sphere of `T_{x0}` about the axis:
/// `u(x') = cos|x'| e_n + sin|x'| x'/|x'|`.
#[derive(Debug, Clone)]
pub struct PolarGeometry {
    base: Vec<f64>,
    /// g-orthonormal frame at the base; last vector is the axis.
    frame: Vec<Vec<f64>>,
}

impl PolarGeometry {
    pub fn new(flow: &Flow, base: &[f64], axis: &[f64]) -> Result<Self> {
        let g = flow.metric_at(base)?;
        let e_n = flow.normalize(base, axis)?;
        let mut frame = normal_frame(&g, &e_n);
        frame.push(e_n);
        Ok(PolarGeometry {
            base: base.to_vec(),
            frame,
        })
    }

    /// Base point `x0` and axis aimed at the geodesic from `x0` to `target`.
    pub fn aimed(flow: &Flow, base: &[f64], target: &[f64]) -> Result<Self> {
        let xi = flow.exp_inverse(base, target, None)?;
        Self::new(flow, base, &xi)
    }

    pub fn direction(&self, xp: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.base.len();
        let k = n - 1;
        let s = xp.iter().map(|a| a * a).sum::<f64>().sqrt();
        // sin(s)/s and its derivative divided by s, with series near 0
        let (sinc, dsinc_over_s) = if s < 1e-4 {
            (1.0 - s * s / 6.0, -1.0 / 3.0 + s * s / 30.0)
        } else {
            (s.sin() / s, (s * s.cos() - s.sin()) / (s * s * s))
        };
        let en = &self.frame[k];
        let mut u = vec![0.0; n];
        for i in 0..n {
            u[i] = s.cos() * en[i];
            for a in 0..k {
                u[i] += sinc * xp[a] * self.frame[a][i];
            }
        }
        let mut du = Vec::with_capacity(k);
        for a in 0..k {
            let mut d = vec![0.0; n];
            for i in 0..n {
                // ∂_a cos s = −sinc · x'_a
                d[i] = -sinc * xp[a] * en[i] + sinc * self.frame[a][i];
                for b in 0..k {
                    d[i] += dsinc_over_s * xp[a] * xp[b] * self.frame[b][i];
                }
            }
            du.push(d);
        }
        (u, du)
    }
}

impl ChartGeometry for PolarGeometry {
    fn name(&self) -> &str {
        "polar"
    }

    fn base(&self) -> &[f64] {
        &self.base
    }

    fn line(&self, flow: &Flow, xp: &[f64]) -> Result<Arc<dyn ChartLine>> {
        let n = self.base.len();
        let (u, du) = self.direction(xp);
        let inits: Vec<_> = du.into_iter().map(|d| (vec![0.0; n], d)).collect();
        let run = integrate_with_variations(
            flow,
            &self.base,
            &u,
            &inits,
            flow.length_bound,
            Some(Surface::Extended),
        )?;
        if !run.sol.event {
            return Err(Error::NoExit {
                length: flow.length_bound,
            });
        }
        Ok(Arc::new(GeodesicLine {
            run,
            flow: flow.clone(),
        }))
    }

    fn locate(&self, flow: &Flow, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let xi = flow.exp_inverse(&self.base, x, None)?;
        let g = flow.metric_at(&self.base)?;
        let r = inner(&g, &xi, &xi).sqrt();
        let n = x.len();
        let c: Vec<f64> = self.frame.iter().map(|e| inner(&g, &xi, e) / r).collect();
        let s = c[n - 1].clamp(-1.0, 1.0).acos();
        let scale = if s < 1e-8 { 1.0 } else { s / s.sin() };
        Ok((c[..n - 1].iter().map(|a| a * scale).collect(), r))
    }
}

#[derive(Debug, Clone)]
struct GeodesicLine {
    run: JacobiRun,
    flow: Flow,
}

impl ChartLine for GeodesicLine {
    fn r_min(&self) -> f64 {
        0.0
    }

    fn r_max(&self) -> f64 {
        self.run.sol.t_end()
    }

    fn frame(&self, r: f64) -> Result<Frame> {
        let n = self.run.n;
        let y = self.run.sol.eval(r);
        let x = y[..n].to_vec();
        let xi = y[n..2 * n].to_vec();
        let c = christoffel(self.flow.metric.as_ref(), &x)?;
        let mut e = Vec::with_capacity(n);
        let mut de = Vec::with_capacity(n - 1);
        let mut tmp = vec![0.0; n];
        for (dx, dxi) in self.run.split(&y) {
            c.contract(&xi, &dx, &mut tmp);
            de.push((0..n).map(|i| dxi[i] + tmp[i]).collect());
            e.push(dx);
        }
        e.push(xi);
        Ok(Frame { x, e, de })
    }

    fn knots(&self) -> Vec<f64> {
        self.run.sol.knots()
    }
}

/// Cartesian chart for flat metrics: line `x'` is `X(r) = (x', r)`.
#[derive(Debug, Clone)]
pub struct SlabGeometry {
    base: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
}

impl SlabGeometry {
    pub fn new(n: usize, r_min: f64, r_max: f64) -> Self {
        let mut base = vec![0.0; n];
        base[n - 1] = r_min;
        SlabGeometry { base, r_min, r_max }
    }
}

#[derive(Debug, Clone)]
struct StraightLine {
    xp: Vec<f64>,
    r_min: f64,
    r_max: f64,
}

impl ChartLine for StraightLine {
    fn r_min(&self) -> f64 {
        self.r_min
    }

    fn r_max(&self) -> f64 {
        self.r_max
    }

    fn frame(&self, r: f64) -> Result<Frame> {
        let n = self.xp.len() + 1;
        let mut x = self.xp.clone();
        x.push(r);
        let e = (0..n)
            .map(|a| {
                let mut v = vec![0.0; n];
                v[a] = 1.0;
                v
            })
            .collect();
        Ok(Frame {
            x,
            e,
            de: vec![vec![0.0; n]; n - 1],
        })
    }

    fn knots(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl ChartGeometry for SlabGeometry {
    fn name(&self) -> &str {
        "slab"
    }

    fn base(&self) -> &[f64] {
        &self.base
    }

    fn line(&self, flow: &Flow, xp: &[f64]) -> Result<Arc<dyn ChartLine>> {
        if flow.metric.name() != "euclidean" {
            return Err(Error::Config(
                "slab charts need the euclidean metric".into(),
            ));
        }
        Ok(Arc::new(StraightLine {
            xp: xp.to_vec(),
            r_min: self.r_min,
            r_max: self.r_max,
        }))
    }

    fn locate(&self, _flow: &Flow, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = x.len();
        Ok((x[..n - 1].to_vec(), x[n - 1]))
    }
}

/// Builds a chart geometry once the flow (metric and domain) is known.
pub trait ChartFactory: Send + Sync {
    fn geometry(&self, flow: &Flow) -> Result<Arc<dyn ChartGeometry>>;
}

struct PolarFactory {
    base: Vec<f64>,
    axis: Option<Vec<f64>>,
    target: Option<Vec<f64>>,
}

impl ChartFactory for PolarFactory {
    fn geometry(&self, flow: &Flow) -> Result<Arc<dyn ChartGeometry>> {
        let geo = match (&self.axis, &self.target) {
            (Some(axis), _) => PolarGeometry::new(flow, &self.base, axis)?,
            (None, Some(t)) => PolarGeometry::aimed(flow, &self.base, t)?,
            _ => return Err(Error::Config("polar chart needs `axis` or `target`".into())),
        };
        Ok(Arc::new(geo))
    }
}

struct SlabFactory {
    r_min: f64,
    r_max: f64,
}

impl ChartFactory for SlabFactory {
    fn geometry(&self, flow: &Flow) -> Result<Arc<dyn ChartGeometry>> {
        Ok(Arc::new(SlabGeometry::new(
            flow.dim(),
            self.r_min,
            self.r_max,
        )))
    }
}

fn build_polar(p: &Params) -> Result<Arc<dyn ChartFactory>> {
    let base = p
        .vec_f64("base")
        .ok_or_else(|| Error::Config("polar chart needs `base`".into()))?;
    Ok(Arc::new(PolarFactory {
        base,
        axis: p.vec_f64("axis"),
        target: p.vec_f64("target"),
    }))
}

fn build_slab(p: &Params) -> Result<Arc<dyn ChartFactory>> {
    Ok(Arc::new(SlabFactory {
        r_min: p.f64_or("r_min", -0.5),
        r_max: p.f64_or("r_max", 1.5),
    }))
}

/// `polar` reads `base` and either `axis` or `target` (a point the axis
/// geodesic passes through); `slab` reads `r_min`, `r_max`.
pub fn chart_registry() -> &'static Registry<dyn ChartFactory> {
    static R: OnceLock<Registry<dyn ChartFactory>> = OnceLock::new();
    R.get_or_init(|| {
        let mut r = Registry::new("chart");
        r.register("polar", build_polar)
            .register("slab", build_slab);
        r
    })
}

pub fn geometry_from(name: &str, flow: &Flow, p: &Params) -> Result<Arc<dyn ChartGeometry>> {
    chart_registry().build(name, p)?.geometry(flow)
}

#[derive(Debug, Clone, Copy)]
pub struct TubeOptions {
    /// Lines per half-width along each cross-section axis.
    pub m: usize,
    /// Half-width of the cross-section.
    pub eps_tube: f64,
}

impl Default for TubeOptions {
    fn default() -> Self {
        TubeOptions {
            m: 20,
            eps_tube: 0.15,
        }
    }
}

/// A tube of coordinate lines with entry/exit faces `a(x') < b(x')`.
#[derive(Debug, Clone)]
pub struct SemiGeodesicChart {
    pub n: usize,
    pub m: usize,
    pub spacing: f64,
    pub geometry: Arc<dyn ChartGeometry>,
    pub flow: Flow,
    lines: Vec<Arc<dyn ChartLine>>,
    faces: Vec<Option<(f64, f64)>>,
    /// Common parameter range on which every line is defined.
    pub r_start: f64,
    pub r_end: f64,
}

/// Zeros of `ρ∘X` along a line, entering then leaving.
fn line_faces(flow: &Flow, line: &dyn ChartLine) -> Result<Option<(f64, f64)>> {
    let (lo, hi) = (line.r_min(), line.r_max());
    let rho = |r: f64| -> f64 {
        line.frame(r)
            .map(|f| flow.domain.rho(&f.x))
            .unwrap_or(f64::NAN)
    };
    let mut knots = line.knots();
    if knots.len() < 2 {
        knots = vec![lo, hi];
    }
    let mut ts = Vec::new();
    for w in knots.windows(2) {
        for s in 0..8 {
            ts.push(w[0] + (w[1] - w[0]) * s as f64 / 8.0);
        }
    }
    ts.push(hi);
    let mut entry = None;
    let mut exit = None;
    let mut prev = (ts[0], rho(ts[0]));
    for &t in &ts[1..] {
        let v = rho(t);
        if entry.is_none() && prev.1 <= 0.0 && v > 0.0 {
            entry = Some(bisect_secant(&|r| -rho(r), prev.0, t, -prev.1, -v, 1e-15));
        } else if entry.is_some() && prev.1 > 0.0 && v <= 0.0 {
            exit = Some(bisect_secant(&rho, prev.0, t, prev.1, v, 1e-15));
            break;
        }
        prev = (t, v);
    }
    Ok(match (entry, exit) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    })
}

impl SemiGeodesicChart {
    pub fn build(
        flow: &Flow,
        geometry: Arc<dyn ChartGeometry>,
        opts: &TubeOptions,
    ) -> Result<Self> {
        let n = flow.dim();
        let k = n - 1;
        let side = 2 * opts.m + 1;
        let count = side.pow(k as u32);
        let spacing = opts.eps_tube / opts.m as f64;
        let lines: Vec<Arc<dyn ChartLine>> = (0..count)
            .into_par_iter()
            .map(|idx| {
                let xp = cross_section_of(idx, opts.m, k, spacing);
                geometry.line(flow, &xp)
            })
            .collect::<Result<_>>()?;
        let faces: Vec<Option<(f64, f64)>> = lines
            .par_iter()
            .map(|l| line_faces(flow, l.as_ref()))
            .collect::<Result<_>>()?;
        let a_min = faces
            .iter()
            .flatten()
            .map(|f| f.0)
            .fold(f64::INFINITY, f64::min);
        if !a_min.is_finite() {
            return Err(Error::ChartDegenerate(
                "no tube line meets the domain".into(),
            ));
        }
        let r_lo = lines
            .iter()
            .map(|l| l.r_min())
            .fold(f64::NEG_INFINITY, f64::max);
        let r_end = lines
            .iter()
            .map(|l| l.r_max())
            .fold(f64::INFINITY, f64::min);
        let delta = (0.02 * flow.domain.diameter()).min(0.5 * (a_min - r_lo));
        let chart = SemiGeodesicChart {
            n,
            m: opts.m,
            spacing,
            geometry,
            flow: flow.clone(),
            lines,
            faces,
            r_start: a_min - delta,
            r_end,
        };
        chart.check_folds()?;
        Ok(chart)
    }

    /// Determinant of the frame keeps one sign along every line.
    fn check_folds(&self) -> Result<()> {
        let samples = 64;
        (0..self.lines.len()).into_par_iter().try_for_each(|j| {
            let mut sign = 0.0;
            for s in 0..=samples {
                let r = self.r_start + (self.r_end - self.r_start) * s as f64 / samples as f64;
                let d = self.frame(j, r)?.matrix().determinant();
                if sign == 0.0 {
                    sign = d.signum();
                }
                if d == 0.0 || d.signum() != sign {
                    return Err(Error::ChartDegenerate(format!(
                        "frame determinant changes sign on line {j} near r = {r:.6}"
                    )));
                }
            }
            Ok(())
        })
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn side(&self) -> usize {
        2 * self.m + 1
    }

    /// Per-axis grid indices of a line.
    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        let side = self.side();
        let mut rem = idx;
        (0..self.n - 1)
            .map(|_| {
                let v = rem % side;
                rem /= side;
                v
            })
            .collect()
    }

    pub fn cross_section(&self, idx: usize) -> Vec<f64> {
        cross_section_of(idx, self.m, self.n - 1, self.spacing)
    }

    /// Neighbor `offset` steps along cross-section axis `axis`.
    pub fn neighbor(&self, idx: usize, axis: usize, offset: i64) -> Option<usize> {
        let side = self.side() as i64;
        let stride = side.pow(axis as u32);
        let pos = (idx as i64 / stride) % side;
        let np = pos + offset;
        if np < 0 || np >= side {
            return None;
        }
        Some((idx as i64 + offset * stride) as usize)
    }

    /// Whether a centered stencil of half-width `w` fits along every axis.
    pub fn interior(&self, idx: usize, w: usize) -> bool {
        self.multi_index(idx)
            .iter()
            .all(|&p| p >= w && p + w < self.side())
    }

    pub fn line(&self, idx: usize) -> &Arc<dyn ChartLine> {
        &self.lines[idx]
    }

    pub fn faces(&self, idx: usize) -> Option<(f64, f64)> {
        self.faces[idx]
    }

    pub fn frame(&self, idx: usize, r: f64) -> Result<Frame> {
        self.lines[idx].frame(r)
    }

    pub fn point(&self, idx: usize, r: f64) -> Result<Vec<f64>> {
        Ok(self.frame(idx, r)?.x)
    }

    /// `g'_ab` at a chart point.
    pub fn metric_in_chart(&self, idx: usize, r: f64) -> Result<DMatrix<f64>> {
        let f = self.frame(idx, r)?;
        let g = metric_at(self.flow.metric.as_ref(), &f.x)?;
        let n = self.n;
        Ok(DMatrix::from_fn(n, n, |a, b| inner(&g, &f.e[a], &f.e[b])))
    }

    /// `Γ'^β_{nα}` as a `(n−1) × (n−1)` matrix indexed `(β, α)`:
    /// `½ g'^{βγ} ∂_r g'_{αγ}` with `∂_r g'_{αγ} = g(DJ_α, J_γ) + g(J_α, DJ_γ)`.
    pub fn gamma_normal(&self, idx: usize, r: f64) -> Result<DMatrix<f64>> {
        let f = self.frame(idx, r)?;
        let g = metric_at(self.flow.metric.as_ref(), &f.x)?;
        let k = self.n - 1;
        let gt = DMatrix::from_fn(k, k, |a, b| inner(&g, &f.e[a], &f.e[b]));
        let dg = DMatrix::from_fn(k, k, |a, b| {
            inner(&g, &f.de[a], &f.e[b]) + inner(&g, &f.e[a], &f.de[b])
        });
        let inv = gt.try_inverse().ok_or_else(|| {
            Error::ChartDegenerate(format!("singular frame on line {idx} at r = {r}"))
        })?;
        Ok(inv * dg * 0.5)
    }

    /// Chart components `f(∂_a X, ∂_b X)` (or `f(∂_a X)`, or `f`), with the
    /// field cut off outside `[a(x'), b(x')]` when it is extended by zero.
    pub fn pull_back(&self, f: &dyn TensorField, idx: usize, r: f64) -> Result<Vec<f64>> {
        let frame = self.frame(idx, r)?;
        self.pull_back_at(f, idx, r, &frame)
    }

    pub fn pull_back_at(
        &self,
        f: &dyn TensorField,
        idx: usize,
        r: f64,
        frame: &Frame,
    ) -> Result<Vec<f64>> {
        let n = self.n;
        let nc = component_count(f.rank(), n);
        if f.support().is_some() {
            match self.faces[idx] {
                Some((a, b)) if r >= a && r <= b => {}
                _ => return Ok(vec![0.0; nc]),
            }
        }
        let mut raw = vec![0.0; nc];
        f.eval_raw(&frame.x, &mut raw)?;
        Ok(match f.rank() {
            0 => raw,
            1 => (0..n)
                .map(|a| (0..n).map(|i| raw[i] * frame.e[a][i]).sum())
                .collect(),
            _ => {
                let mut out = vec![0.0; n * n];
                for a in 0..n {
                    for b in a..n {
                        let mut s = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                s += raw[i * n + j] * frame.e[a][i] * frame.e[b][j];
                            }
                        }
                        out[a * n + b] = s;
                        out[b * n + a] = s;
                    }
                }
                out
            }
        })
    }

    /// Chart components `v'_a = v_i ∂_a X^i` of a covector.
    pub fn covector_to_chart(&self, frame: &Frame, v: &[f64]) -> Vec<f64> {
        frame
            .e
            .iter()
            .map(|e| e.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Original components of a chart covector.
    pub fn covector_from_chart(&self, frame: &Frame, vc: &[f64]) -> Result<Vec<f64>> {
        let m = frame.matrix().transpose();
        let sol = m
            .lu()
            .solve(&DVector::from_column_slice(vc))
            .ok_or_else(|| Error::ChartDegenerate("singular frame".into()))?;
        Ok(sol.iter().copied().collect())
    }

    /// `a(x')` or `b(x')` by degree-6 Lagrange interpolation of the line
    /// samples, for `x'` inside the tube.
    pub fn face_at(&self, xp: &[f64], exit: bool) -> Option<f64> {
        let k = self.n - 1;
        let side = self.side() as i64;
        let mut starts = Vec::with_capacity(k);
        for a in 0..k {
            let pos = xp[a] / self.spacing + self.m as f64;
            let s = (pos.round() as i64 - 3).clamp(0, side - 7);
            starts.push(s);
        }
        // tensor product over 7^k lines
        let total = 7usize.pow(k as u32);
        let mut acc = 0.0;
        for t in 0..total {
            let mut rem = t;
            let mut idx = 0i64;
            let mut w = 1.0;
            let mut stride = 1i64;
            for a in 0..k {
                let o = (rem % 7) as i64;
                rem /= 7;
                let node = starts[a] + o;
                idx += node * stride;
                stride *= side;
                let nodes: Vec<f64> = (0..7)
                    .map(|q| (starts[a] + q - self.m as i64) as f64 * self.spacing)
                    .collect();
                w *= lagrange_weight(&nodes, o as usize, xp[a]);
            }
            let (fa, fb) = self.faces[idx as usize]?;
            acc += w * if exit { fb } else { fa };
        }
        Some(acc)
    }

    /// Chart coordinates of an original point.
    pub fn locate(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.geometry.locate(&self.flow, x)
    }
}

fn cross_section_of(idx: usize, m: usize, k: usize, spacing: f64) -> Vec<f64> {
    let side = 2 * m + 1;
    let mut rem = idx;
    (0..k)
        .map(|_| {
            let v = rem % side;
            rem /= side;
            (v as f64 - m as f64) * spacing
        })
        .collect()
}

/// Lagrange basis polynomial `j` on `nodes`, evaluated at `x`.
pub fn lagrange_weight(nodes: &[f64], j: usize, x: f64) -> f64 {
    let mut w = 1.0;
    for (q, &xq) in nodes.iter().enumerate() {
        if q != j {
            w *= (x - xq) / (nodes[j] - xq);
        }
    }
    w
}
