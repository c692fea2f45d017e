//! Geodesics relative to a body `K`: clearance, convexity sampling,
//! avoiding geodesics, deformation to the boundary and the boundary
//! projection from a point of `K`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::Surface;
use crate::error::{Error, Result};
use crate::geodesic::{Direction, Flow, Geodesic};
use crate::metric::inner;
use crate::simplicity::{inward_frame, sphere_direction};

use super::body::ConvexBody;

/// Minimum signed distance to `K` along a geodesic and where it occurs.
pub fn clearance(body: &dyn ConvexBody, gam: &Geodesic) -> (f64, Vec<f64>) {
    if gam.is_point() {
        let p = gam.start();
        return (body.signed_distance(&p), p);
    }
    let (a, b) = gam.t_range();
    let count = 128;
    let at = |t: f64| body.signed_distance(&gam.point_at(t));
    let ts: Vec<f64> = (0..=count)
        .map(|i| a + (b - a) * i as f64 / count as f64)
        .collect();
    let vals: Vec<f64> = ts.iter().map(|&t| at(t)).collect();
    let (imin, _) =
        vals.iter().enumerate().fold(
            (0, f64::INFINITY),
            |best, (i, &v)| if v < best.1 { (i, v) } else { best },
        );
    // golden section on the bracketing samples
    let mut lo = ts[imin.saturating_sub(1)];
    let mut hi = ts[(imin + 1).min(count)];
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut fc, mut fd) = (at(c), at(d));
    for _ in 0..60 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = at(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = at(d);
        }
        if hi - lo < 1e-12 * (b - a).max(1e-300) {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    let best = at(t).min(vals[imin]);
    let tb = if at(t) <= vals[imin] { t } else { ts[imin] };
    (best, gam.point_at(tb))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityWitness {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Point of the connecting geodesic farthest outside `K`.
    pub point: Vec<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityReport {
    pub convex: bool,
    pub pairs: usize,
    pub witness: Option<ConvexityWitness>,
}

/// Samples pairs of points of `K`, mostly on `∂K`, connects them and checks
/// that the geodesics stay in `K` up to `tol`. The pair sequence for a
/// given seed is a prefix of the sequence for any larger count.
pub fn is_geodesically_convex(
    flow: &Flow,
    body: &dyn ConvexBody,
    samples: usize,
    seed: u64,
) -> Result<ConvexityReport> {
    let tol = 1e-6 * flow.domain.diameter();
    let ring = body.boundary_sample(64);
    if ring.is_empty() {
        return Err(Error::Invalid("convex body has no boundary samples".into()));
    }
    let inside = body.interior_point();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let p = &ring[rng.gen_range(0..ring.len())];
        if rng.gen_bool(0.75) {
            p.clone()
        } else {
            let s: f64 = rng.gen_range(0.0..1.0);
            inside.iter().zip(p).map(|(c, q)| c + s * (q - c)).collect()
        }
    };
    for i in 0..samples {
        let a = pick(&mut rng);
        let b = pick(&mut rng);
        let gam = flow.connect(&a, &b)?;
        // the geodesic must stay inside: the largest signed distance matters
        let mut worst = (f64::NEG_INFINITY, a.clone());
        for p in gam.sample_points(96) {
            let d = body.signed_distance(&p);
            if d > worst.0 {
                worst = (d, p);
            }
        }
        if worst.0 > tol {
            return Ok(ConvexityReport {
                convex: false,
                pairs: i + 1,
                witness: Some(ConvexityWitness {
                    a,
                    b,
                    point: worst.1,
                    distance: worst.0,
                }),
            });
        }
    }
    Ok(ConvexityReport {
        convex: true,
        pairs: samples,
        witness: None,
    })
}

/// Half-ray from `x` in direction `ξ` up to `∂M` meets `K`.
pub fn half_ray_meets(flow: &Flow, body: &dyn ConvexBody, x: &[f64], xi: &[f64]) -> Result<bool> {
    let ray = flow.shoot(x, xi, Surface::Boundary, Direction::Forward)?;
    Ok(clearance(body, &ray).0 <= 0.0)
}

/// Whether at most one of the two half-rays through `x ∉ K` meets `K`.
pub fn dichotomy_holds(flow: &Flow, body: &dyn ConvexBody, x: &[f64], xi: &[f64]) -> Result<bool> {
    let back: Vec<f64> = xi.iter().map(|v| -v).collect();
    Ok(!(half_ray_meets(flow, body, x, xi)? && half_ray_meets(flow, body, x, &back)?))
}

#[derive(Debug, Clone)]
pub struct Avoiding {
    pub geodesic: Geodesic,
    pub direction: Vec<f64>,
    pub clearance: f64,
}

/// Maximal geodesic through `x` with the largest clearance from `K` among a
/// scan of directions, refined by golden section in two dimensions.
pub fn avoiding_geodesic_through(
    flow: &Flow,
    body: &dyn ConvexBody,
    x: &[f64],
    clearance_min: f64,
) -> Result<Avoiding> {
    let n = flow.dim();
    if body.contains(x) {
        return Err(Error::Invalid(format!("{x:?} lies in the body")));
    }
    let g = flow.metric_at(x)?;
    let e1 = flow.normalize(x, &sphere_direction(n, 0, 1))?;
    let mut frame = crate::jacobi::normal_frame(&g, &e1);
    frame.insert(0, e1);
    let dir_of = |u: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (0..n).map(|a| u[a] * frame[a][i]).sum())
            .collect()
    };
    let score = |xi: &[f64]| -> Result<(f64, Geodesic)> {
        let gam = flow.maximal(x, xi, Surface::Boundary)?;
        Ok((clearance(body, &gam).0, gam))
    };
    let count = if n == 2 { 48 } else { 400 };
    let mut best: Option<(f64, Vec<f64>, Geodesic, f64)> = None;
    for i in 0..count {
        // lines through x: half the sphere suffices in the plane
        let (u, angle) = if n == 2 {
            let th = std::f64::consts::PI * i as f64 / count as f64;
            (vec![th.cos(), th.sin()], th)
        } else {
            (sphere_direction(n, i, count), 0.0)
        };
        let xi = dir_of(&u);
        let (c, gam) = score(&xi)?;
        if best.as_ref().is_none_or(|b| c > b.0) {
            best = Some((c, xi, gam, angle));
        }
    }
    let (mut c, mut xi, mut gam, angle) = best.expect("nonempty scan");
    if n == 2 {
        let step = std::f64::consts::PI / count as f64;
        let (mut lo, mut hi) = (angle - step, angle + step);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let eval = |th: f64| -> Result<(f64, Vec<f64>, Geodesic)> {
            let xi = dir_of(&[th.cos(), th.sin()]);
            let (c, gam) = score(&xi)?;
            Ok((c, xi, gam))
        };
        let mut p = hi - phi * (hi - lo);
        let mut q = lo + phi * (hi - lo);
        let mut fp = eval(p)?;
        let mut fq = eval(q)?;
        for _ in 0..24 {
            if fp.0 > fq.0 {
                hi = q;
                q = p;
                fq = fp;
                p = hi - phi * (hi - lo);
                fp = eval(p)?;
            } else {
                lo = p;
                p = q;
                fp = fq;
                q = lo + phi * (hi - lo);
                fq = eval(q)?;
            }
        }
        for cand in [fp, fq] {
            if cand.0 > c {
                (c, xi, gam) = cand;
            }
        }
    }
    if c <= clearance_min {
        return Err(Error::NotFound { point: x.to_vec() });
    }
    Ok(Avoiding {
        geodesic: gam,
        direction: xi,
        clearance: c,
    })
}

#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub t: f64,
    /// Launch angle at the anchor, from the inward normal toward the
    /// boundary tangent.
    pub angle: f64,
    pub geodesic: Geodesic,
    pub clearance: f64,
}

/// Geodesics `γ_[α(t), β(t)]` with `α(t)` fixed at the anchor on `∂M` and
/// `β(t)` sliding along `∂M` away from `K` until it reaches the anchor.
#[derive(Debug, Clone)]
pub struct GeodesicFamily {
    pub anchor: Vec<f64>,
    pub inward: Vec<f64>,
    pub tangent: Vec<f64>,
    pub members: Vec<FamilyMember>,
    pub min_clearance: f64,
    /// `dist(α(1), β(1))`.
    pub end_gap: f64,
}

impl GeodesicFamily {
    pub fn alpha(&self, _t: f64) -> Vec<f64> {
        self.anchor.clone()
    }

    pub fn beta(&self, i: usize) -> Vec<f64> {
        self.members[i].geodesic.end()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DeformOptions {
    pub clearance_min: f64,
    /// Largest launch-angle step between members.
    pub max_step: f64,
    /// Bisections allowed where the clearance dips.
    pub refinements: usize,
}

fn member(
    flow: &Flow,
    anchor: &[f64],
    inward: &[f64],
    tangent: &[f64],
    angle: f64,
) -> Result<Geodesic> {
    let (c, s) = (angle.cos(), angle.sin());
    if c < 1e-9 {
        return Ok(Geodesic::point(anchor));
    }
    let xi: Vec<f64> = inward
        .iter()
        .zip(tangent)
        .map(|(a, b)| c * a + s * b)
        .collect();
    match flow.shoot(anchor, &xi, Surface::Boundary, Direction::Forward) {
        Ok(g) => Ok(g),
        // grazing launches may never re-enter the interior numerically
        Err(Error::NoExit { .. }) if c < 1e-3 => Ok(Geodesic::point(anchor)),
        Err(e) => Err(e),
    }
}

/// Deformation of an avoiding geodesic to a point of `∂M` (n = 2): the
/// start point stays fixed and the launch angle turns away from `K` until
/// the geodesic grazes the boundary.
pub fn deform_to_boundary(
    flow: &Flow,
    gam: &Geodesic,
    body: &dyn ConvexBody,
    opts: &DeformOptions,
) -> Result<GeodesicFamily> {
    if flow.dim() != 2 {
        return Err(Error::Invalid(
            "deformation to the boundary is implemented for n = 2 only".into(),
        ));
    }
    let (t0, _) = gam.t_range();
    let (anchor, vel) = gam.state(t0);
    let (inward, frame) = inward_frame(flow, &anchor)?;
    let tangent = frame[0].clone();
    let g = flow.metric_at(&anchor)?;
    let angle_of = |xi: &[f64]| inner(&g, xi, &tangent).atan2(inner(&g, xi, &inward));
    let start = angle_of(&vel);
    // side of K as seen from the anchor
    let mut probes = body.boundary_sample(16);
    probes.push(body.interior_point());
    let mut side = 0.0;
    for p in &probes {
        let xi = flow.exp_inverse(&anchor, p, None)?;
        let s = (angle_of(&xi) - start).signum();
        if side == 0.0 {
            side = s;
        } else if s != side {
            let (c, at) = clearance(body, gam);
            return Err(Error::DeformationStuck {
                location: at,
                clearance: c,
            });
        }
    }
    let end = -side * std::f64::consts::FRAC_PI_2;
    let steps = ((end - start).abs() / opts.max_step).ceil().max(1.0) as usize;
    let build = |t: f64| -> Result<FamilyMember> {
        let angle = start + t * (end - start);
        let geodesic = if t == 0.0 {
            gam.clone()
        } else {
            member(flow, &anchor, &inward, &tangent, angle)?
        };
        let (c, _) = if geodesic.is_point() {
            (body.signed_distance(&anchor), anchor.clone())
        } else {
            clearance(body, &geodesic)
        };
        Ok(FamilyMember {
            t,
            angle,
            geodesic,
            clearance: c,
        })
    };
    let mut members: Vec<FamilyMember> = (0..=steps)
        .map(|i| build(i as f64 / steps as f64))
        .collect::<Result<_>>()?;
    for _ in 0..opts.refinements {
        let mut added = Vec::new();
        for w in members.windows(2) {
            if w[0].clearance.min(w[1].clearance) < 2.0 * opts.clearance_min {
                added.push(build(0.5 * (w[0].t + w[1].t))?);
            }
        }
        if added.is_empty() {
            break;
        }
        members.extend(added);
        members.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    let worst = members
        .iter()
        .min_by(|a, b| a.clearance.total_cmp(&b.clearance))
        .expect("nonempty family");
    if worst.clearance <= opts.clearance_min {
        let (c, at) = clearance(body, &worst.geodesic);
        return Err(Error::DeformationStuck {
            location: at,
            clearance: c,
        });
    }
    let min_clearance = worst.clearance;
    let last = members.last().expect("nonempty family");
    let end_pt = last.geodesic.end();
    let end_gap = anchor
        .iter()
        .zip(&end_pt)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(GeodesicFamily {
        anchor,
        inward,
        tangent,
        members,
        min_clearance,
        end_gap,
    })
}

/// Exit point on `∂M` of the geodesic from `p` through `x`, continued past
/// `x`.
pub fn boundary_projection(flow: &Flow, p: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let xi = flow.exp_inverse(p, x, None)?;
    Ok(flow
        .shoot(p, &xi, Surface::Boundary, Direction::Forward)?
        .end())
}

/// Largest jump of `proj_p` between consecutive points of a path, and the
/// largest path step.
pub fn projection_jumps(flow: &Flow, p: &[f64], path: &[Vec<f64>]) -> Result<(f64, f64)> {
    let d = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let proj: Vec<Vec<f64>> = path
        .iter()
        .map(|x| boundary_projection(flow, p, x))
        .collect::<Result<_>>()?;
    let mut jump: f64 = 0.0;
    let mut step: f64 = 0.0;
    for i in 1..path.len() {
        jump = jump.max(d(&proj[i], &proj[i - 1]));
        step = step.max(d(&path[i], &path[i - 1]));
    }
    Ok((jump, step))
}
