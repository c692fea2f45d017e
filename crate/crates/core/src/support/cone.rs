//! Thin cones of geodesics around the members of a deformation family, each
//! carrying an extraction of `v`.

use std::sync::Arc;

use serde::Serialize;

use crate::chart::{lagrange_weight, ChartGeometry, PolarGeometry, SemiGeodesicChart, TubeOptions};
use crate::domain::{boundary_normal, Surface};
use crate::error::{Error, Result};
use crate::extraction::{extract, Extraction, ExtractionOptions, LinearSolution, ResidualReport};
use crate::field::TensorField;
use crate::geodesic::{Direction, Flow, Geodesic};
use crate::metric::inner;
use crate::ode::Solution;

use super::body::ConvexBody;
use super::geometry::{clearance, GeodesicFamily};

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Initial angular half-width of a cone.
    pub epsilon: f64,
    /// Halvings of `epsilon` tried before a member is skipped.
    pub halvings: usize,
    /// Target spacing between lines; the line count per half-width is
    /// clamped to `m_range`.
    pub line_spacing: f64,
    pub m_range: (usize, usize),
    pub clearance_min: f64,
    /// Largest admissible `h_nn`, `h_nα` and exit value of `v`.
    pub residual_tol: f64,
    /// Largest admissible tangential block of `h`; it is estimated by
    /// cross-section difference quotients and carries their error.
    pub tangential_tol: f64,
    pub overlap_tol: f64,
    /// Smallest `|cos|` of the angle between a ray and the normal where the
    /// ray crosses `∂M`.
    pub transversality: f64,
    pub extraction: ExtractionOptions,
    /// Residual samples per line.
    pub residual_samples: usize,
    /// Smallest launch-angle gap between consecutive swept members.
    pub member_spacing: f64,
    /// A flagged cone is solved again this many times, each with the ODE
    /// tolerances scaled by `refine_factor`, before the flag stands.
    pub refinements: usize,
    pub refine_factor: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            epsilon: 0.08,
            halvings: 4,
            line_spacing: 0.004,
            m_range: (10, 20),
            clearance_min: 0.02,
            residual_tol: 1e-5,
            tangential_tol: 1e-4,
            overlap_tol: 1e-4,
            transversality: 0.05,
            extraction: ExtractionOptions::default(),
            residual_samples: 12,
            member_spacing: 0.06,
            refinements: 1,
            refine_factor: 1e-2,
        }
    }
}

/// Extraction on one cone.
#[derive(Debug, Clone)]
pub struct Cone {
    pub member: usize,
    pub epsilon: f64,
    pub chart: SemiGeodesicChart,
    geometry: PolarGeometry,
    vn: Vec<Solution>,
    vt: Vec<Option<LinearSolution>>,
    /// Lines carrying both components, in cross-section order.
    usable: Vec<usize>,
    outline: Vec<Vec<f64>>,
    pub residual: f64,
    pub report: ResidualReport,
    pub exit_mismatch: f64,
    pub flagged: bool,
}

fn point_in_polygon(poly: &[Vec<f64>], x: &[f64]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (&poly[i], &poly[(i + 1) % n]);
        if (a[1] > x[1]) != (b[1] > x[1]) {
            let t = (x[1] - a[1]) / (b[1] - a[1]);
            if x[0] < a[0] + t * (b[0] - a[0]) {
                inside = !inside;
            }
        }
    }
    inside
}

impl Cone {
    fn v_at_line(&self, j: usize, r: f64) -> Result<Vec<f64>> {
        let mut vc = self.vt[j].as_ref().expect("usable line").eval(r);
        vc.push(self.vn[j].eval(r)[0]);
        let frame = self.chart.frame(j, r)?;
        self.chart.covector_from_chart(&frame, &vc)
    }

    fn line_offset(&self, j: usize) -> f64 {
        self.chart.cross_section(j)[0]
    }

    /// Lines and Lagrange weights interpolating at cross-section `s`.
    fn window(&self, s: f64) -> (&[usize], [f64; 4]) {
        let lo = self.line_offset(self.usable[0]);
        let pos = ((s - lo) / self.chart.spacing).floor() as i64 - 1;
        let start = pos.clamp(0, self.usable.len() as i64 - 4) as usize;
        let lines = &self.usable[start..start + 4];
        let nodes: Vec<f64> = lines.iter().map(|&j| self.line_offset(j)).collect();
        let mut w = [0.0; 4];
        for (q, wq) in w.iter_mut().enumerate() {
            *wq = lagrange_weight(&nodes, q, s);
        }
        (lines, w)
    }

    /// Chart coordinates `(s, r)` of `x` by Newton iteration on the
    /// interpolated lines, started from the flat guess at the vertex.
    fn locate(&self, x: &[f64]) -> Result<Option<(f64, f64)>> {
        let base = self.chart.geometry.base().to_vec();
        let g = self.chart.flow.metric_at(&base)?;
        let (axis, _) = self.geometry.direction(&[0.0]);
        let (side, _) = self.geometry.direction(&[std::f64::consts::FRAC_PI_2]);
        let d: Vec<f64> = x.iter().zip(&base).map(|(a, b)| a - b).collect();
        let mut s = inner(&g, &d, &side).atan2(inner(&g, &d, &axis));
        let mut r = inner(&g, &d, &d).sqrt();
        let lo = self.line_offset(self.usable[0]);
        let hi = self.line_offset(*self.usable.last().expect("nonempty"));
        let (r0, r1) = (self.chart.r_start, self.chart.r_end);
        let tol = 1e-13 * self.chart.flow.domain.diameter();
        for _ in 0..30 {
            s = s.clamp(lo - self.chart.spacing, hi + self.chart.spacing);
            r = r.clamp(r0, r1);
            let (lines, w) = self.window(s);
            let mut p = [0.0; 2];
            let mut ds = [0.0; 2];
            let mut dr = [0.0; 2];
            for (q, &j) in lines.iter().enumerate() {
                let fr = self.chart.frame(j, r)?;
                for i in 0..2 {
                    p[i] += w[q] * fr.x[i];
                    ds[i] += w[q] * fr.e[0][i];
                    dr[i] += w[q] * fr.e[1][i];
                }
            }
            let (ex, ey) = (x[0] - p[0], x[1] - p[1]);
            if ex.hypot(ey) < tol {
                break;
            }
            let det = ds[0] * dr[1] - ds[1] * dr[0];
            if det.abs() < 1e-300 {
                return Ok(None);
            }
            s += (ex * dr[1] - ey * dr[0]) / det;
            r += (ds[0] * ey - ds[1] * ex) / det;
        }
        if s < lo || s > hi || r < r0 || r > r1 {
            return Ok(None);
        }
        Ok(Some((s, r)))
    }

    /// `v` at a point covered by the cone.
    pub fn eval(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        if self.usable.len() < 4 || !point_in_polygon(&self.outline, x) {
            return Ok(None);
        }
        let Some((s, r)) = self.locate(x)? else {
            return Ok(None);
        };
        let (lines, w) = self.window(s);
        let mut acc = vec![0.0; x.len()];
        for (q, &j) in lines.iter().enumerate() {
            for (a, v) in acc.iter_mut().zip(self.v_at_line(j, r)?) {
                *a += w[q] * v;
            }
        }
        Ok(Some(acc))
    }
}

/// Ray from the cone vertex at angle `s` from the axis admissible: it
/// crosses `∂M` transversally at both ends and stays clear of `K`.
fn ray_admissible(
    flow: &Flow,
    geometry: &PolarGeometry,
    body: &dyn ConvexBody,
    s: f64,
    opts: &SweepOptions,
) -> Result<bool> {
    let base = geometry.base().to_vec();
    let (dir, _) = geometry.direction(&[s]);
    let out = match flow.shoot(&base, &dir, Surface::Boundary, Direction::Forward) {
        Ok(g) if !g.is_point() => g,
        Ok(_) | Err(Error::NoExit { .. }) => return Ok(false),
        Err(e) => return Err(e),
    };
    if clearance(body, &out).0 <= opts.clearance_min {
        return Ok(false);
    }
    let (_, t1) = out.t_range();
    let (exit, v) = out.state(t1);
    let back: Vec<f64> = v.iter().map(|a| -a).collect();
    let through = match flow.shoot(&exit, &back, Surface::Boundary, Direction::Forward) {
        Ok(g) if !g.is_point() => g,
        Ok(_) | Err(Error::NoExit { .. }) => return Ok(false),
        Err(e) => return Err(e),
    };
    let (_, t2) = through.t_range();
    let (entry, w) = through.state(t2);
    for (p, vel) in [(exit, v), (entry, w)] {
        let Ok((_, nu)) = boundary_normal(&flow.domain, flow.metric.as_ref(), &p) else {
            return Ok(false);
        };
        let g = flow.metric_at(&p)?;
        let nu: Vec<f64> = nu.iter().copied().collect();
        let c = inner(&g, &vel, &nu) / inner(&g, &vel, &vel).sqrt();
        if c.abs() < opts.transversality {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Vertex on `∂M_½` behind the anchor and the axis pointing into `M`.
fn vertex(flow: &Flow, member: &Geodesic) -> Result<(Vec<f64>, Vec<f64>)> {
    let (t0, _) = member.t_range();
    let (a, xi) = member.state(t0);
    let back = flow.shoot(&a, &xi, Surface::Half, Direction::Backward)?;
    let (s0, _) = back.t_range();
    Ok(back.state(s0))
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedMember {
    pub member: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ConeSweep {
    pub cones: Vec<Cone>,
    pub skipped: Vec<SkippedMember>,
    pub max_residual: f64,
    pub max_exit_mismatch: f64,
    pub max_overlap: f64,
    pub epsilon_range: (f64, f64),
}

impl ConeSweep {
    pub fn flagged(&self) -> usize {
        self.cones.iter().filter(|c| c.flagged).count()
    }

    /// Values of every cone covering `x`.
    pub fn eval_all(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for c in &self.cones {
            if let Some(v) = c.eval(x)? {
                out.push(v);
            }
        }
        Ok(out)
    }
}

fn build_cone(
    flow: &Flow,
    family: &GeodesicFamily,
    index: usize,
    f: &dyn TensorField,
    body: &dyn ConvexBody,
    opts: &SweepOptions,
) -> Result<std::result::Result<Cone, String>> {
    let member = &family.members[index].geodesic;
    if member.is_point() {
        return Ok(Err("point geodesic".into()));
    }
    let (base, axis) = vertex(flow, member)?;
    let geometry = PolarGeometry::new(flow, &base, &axis)?;
    let mut eps = opts.epsilon;
    let mut found = false;
    for _ in 0..=opts.halvings {
        let mut ok = true;
        for s in [0.0, eps, -eps, 2.0 * eps, -2.0 * eps] {
            if !ray_admissible(flow, &geometry, body, s, opts)? {
                ok = false;
                break;
            }
        }
        if ok {
            found = true;
            break;
        }
        eps *= 0.5;
    }
    if !found {
        return Ok(Err("no admissible cone width".into()));
    }
    let m = ((eps / opts.line_spacing).round() as usize).clamp(opts.m_range.0, opts.m_range.1);
    // integration noise in the residual stencils grows as the lines close up
    let spacing = eps / m as f64;
    let mut scale = (spacing / opts.line_spacing).powi(2).min(1.0).max(1e-3);
    let tube = TubeOptions { m, eps_tube: eps };
    let mut chart = match SemiGeodesicChart::build(flow, Arc::new(geometry.clone()), &tube) {
        Ok(c) => c,
        Err(Error::ChartDegenerate(msg)) => return Ok(Err(msg)),
        Err(e) => return Err(e),
    };
    let mut attempt = 0;
    loop {
        let mut extraction = opts.extraction.clone();
        extraction.ode = extraction
            .ode
            .with_tol(extraction.ode.rtol * scale, extraction.ode.atol * scale);
        let ex = extract(&chart, f, &extraction)?;
        let rep = ex.residual(f, opts.residual_samples)?;
        let residual = rep.max_h_nn.max(rep.max_h_ni).max(rep.max_h_tangential);
        let Extraction { vn, vt, .. } = ex;
        let usable: Vec<usize> = (0..chart.line_count())
            .filter(|&j| vt[j].is_some())
            .collect();
        let mut cone = Cone {
            member: index,
            epsilon: eps,
            chart,
            geometry: geometry.clone(),
            vn,
            vt,
            usable,
            outline: Vec::new(),
            residual,
            report: rep.clone(),
            exit_mismatch: 0.0,
            flagged: false,
        };
        if cone.usable.len() < 4 {
            return Ok(Err("too few lines with tangential components".into()));
        }
        let r_end = cone.chart.r_end;
        for &j in &cone.usable {
            let v = cone.v_at_line(j, r_end)?;
            let g = flow.metric_at(&cone.chart.point(j, r_end)?)?;
            let ginv = g
                .try_inverse()
                .ok_or_else(|| Error::SingularSystem("metric".into()))?;
            cone.exit_mismatch = cone.exit_mismatch.max(inner(&ginv, &v, &v).sqrt());
        }
        // outline: first usable line out, last usable line back
        let samples = 48;
        let (r0, r1) = (cone.chart.r_start, cone.chart.r_end);
        let first = cone.usable[0];
        let last = *cone.usable.last().expect("nonempty");
        let mut outline = Vec::with_capacity(2 * samples + 2);
        for i in 0..=samples {
            outline.push(
                cone.chart
                    .point(first, r0 + (r1 - r0) * i as f64 / samples as f64)?,
            );
        }
        for i in (0..=samples).rev() {
            outline.push(
                cone.chart
                    .point(last, r0 + (r1 - r0) * i as f64 / samples as f64)?,
            );
        }
        cone.outline = outline;
        cone.flagged = rep.max_h_nn.max(rep.max_h_ni) > opts.residual_tol
            || rep.max_h_tangential > opts.tangential_tol
            || cone.exit_mismatch > opts.residual_tol;
        // integration noise clears under tighter tolerances, If ≠ 0 does not
        if cone.flagged && attempt < opts.refinements {
            chart = cone.chart;
            scale *= opts.refine_factor;
            attempt += 1;
            continue;
        }
        return Ok(Ok(cone));
    }
}

/// Extraction on a cone around each swept member of the family, with
/// consistency checks between consecutive cones.
pub fn cone_sweep(
    flow: &Flow,
    family: &GeodesicFamily,
    f: &dyn TensorField,
    body: &dyn ConvexBody,
    opts: &SweepOptions,
) -> Result<ConeSweep> {
    if flow.dim() != 2 {
        return Err(Error::Invalid(
            "cone sweeps are implemented for n = 2 only".into(),
        ));
    }
    let mut chosen = Vec::new();
    let mut last_angle = f64::NAN;
    for (i, m) in family.members.iter().enumerate() {
        let far_enough = !((m.angle - last_angle).abs() < opts.member_spacing);
        if far_enough || i + 1 == family.members.len() {
            chosen.push(i);
            last_angle = m.angle;
        }
    }
    let mut cones = Vec::new();
    let mut skipped = Vec::new();
    for i in chosen {
        match build_cone(flow, family, i, f, body, opts)? {
            Ok(c) => cones.push(c),
            Err(reason) => skipped.push(SkippedMember { member: i, reason }),
        }
    }
    let mut max_overlap: f64 = 0.0;
    for w in cones.windows(2) {
        let member = &family.members[w[1].member].geodesic;
        for p in member.sample_points(14) {
            if !flow.domain.inside(&p, Surface::Boundary) {
                continue;
            }
            if let (Some(a), Some(b)) = (w[0].eval(&p)?, w[1].eval(&p)?) {
                let d = a
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                max_overlap = max_overlap.max(d);
            }
        }
    }
    let fold = |g: fn(&Cone) -> f64| cones.iter().map(g).fold(0.0, f64::max);
    let sweep = ConeSweep {
        max_residual: fold(|c| c.residual),
        max_exit_mismatch: fold(|c| c.exit_mismatch),
        epsilon_range: (
            cones
                .iter()
                .map(|c| c.epsilon)
                .fold(f64::INFINITY, f64::min),
            fold(|c| c.epsilon),
        ),
        max_overlap,
        cones,
        skipped,
    };
    if sweep.max_overlap > opts.overlap_tol && sweep.flagged() == 0 {
        return Err(Error::OverlapMismatch {
            discrepancy: sweep.max_overlap,
        });
    }
    Ok(sweep)
}
