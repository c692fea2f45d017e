//! End-to-end check that a field with vanishing ray transform off `K` is
//! potential outside `K`, with `v` recovered by stitched cone sweeps.

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::Surface;
use crate::error::{Error, Result};
use crate::field::TensorField;
use crate::geodesic::{Direction, Flow};
use crate::simplicity::inward_frame;
use crate::transform::integrate_along;

use super::body::ConvexBody;
use super::cone::{cone_sweep, ConeSweep, SweepOptions};
use super::geometry::{
    avoiding_geodesic_through, clearance, deform_to_boundary, is_geodesically_convex, DeformOptions,
};

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Defaults to `0.01 · diameter`.
    pub clearance_min: Option<f64>,
    pub convexity_samples: usize,
    /// Boundary angles and launch angles of the chord scan.
    pub chord_grid: (usize, usize),
    /// Largest `|If|` accepted on chords avoiding `K`.
    pub transform_tol: f64,
    pub quadrature_tol: f64,
    /// Seeds must clear `K` by this multiple of `clearance_min`.
    pub seed_clearance: f64,
    pub max_families: usize,
    /// Evaluation points per axis over `M̃`.
    pub eval_grid: usize,
    pub deform_step: f64,
    pub sweep: SweepOptions,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            clearance_min: None,
            convexity_samples: 200,
            chord_grid: (128, 64),
            transform_tol: 1e-6,
            quadrature_tol: 1e-11,
            seed_clearance: 1.25,
            max_families: 60,
            eval_grid: 41,
            deform_step: 0.04,
            sweep: SweepOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    InBody,
    Outside,
    Collar,
}

#[derive(Debug, Clone, Serialize)]
pub struct StitchedPoint {
    pub x: Vec<f64>,
    pub class: PointClass,
    /// Mean over the covering cones.
    pub v: Option<Vec<f64>>,
    pub cones: usize,
    /// Largest spread between covering cones.
    pub spread: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub convexity_pairs: usize,
    pub chords: usize,
    pub max_transform: f64,
    pub clearance_min: f64,
    pub families: usize,
    pub cones: usize,
    pub skipped_members: usize,
    pub flagged_cones: usize,
    pub seeds_without_family: usize,
    pub epsilon_range: (f64, f64),
    pub max_extraction_residual: f64,
    pub max_exit_mismatch: f64,
    pub max_overlap: f64,
    pub max_stitch_spread: f64,
    /// Covered fraction of evaluation points in `M ∖ K`.
    pub coverage: f64,
    pub v_outside_max: f64,
    pub grid_samples: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct SupportVerification {
    pub certificate: Certificate,
    pub points: Vec<StitchedPoint>,
    pub sweeps: Vec<ConeSweep>,
}

/// Largest `|If|` over a grid of chords clearing `K` by `clearance_min`.
fn chord_scan(
    flow: &Flow,
    f: &dyn TensorField,
    body: &dyn ConvexBody,
    clearance_min: f64,
    opts: &VerifyOptions,
) -> Result<(usize, f64, Vec<f64>, Vec<f64>)> {
    let (angles, launches) = opts.chord_grid;
    let rows: Vec<(usize, f64, Vec<f64>, Vec<f64>)> = (0..angles)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let th = std::f64::consts::TAU * i as f64 / angles as f64;
            let x = flow
                .domain
                .boundary_point_at_angle(Surface::Boundary, th)
                .ok_or_else(|| Error::Invalid("boundary point".into()))?;
            let (inward, frame) = inward_frame(flow, &x)?;
            let mut best = (0usize, 0.0, x.clone(), x.clone());
            for j in 0..launches {
                let s = -1.0 + (2.0 * j as f64 + 1.0) / launches as f64;
                let c = (1.0 - s * s).sqrt();
                let xi: Vec<f64> = inward
                    .iter()
                    .zip(&frame[0])
                    .map(|(a, b)| c * a + s * b)
                    .collect();
                let gam = match flow.shoot(&x, &xi, Surface::Boundary, Direction::Forward) {
                    Ok(g) => g,
                    Err(Error::NoExit { .. }) => continue,
                    Err(e) => return Err(e),
                };
                if gam.is_point() || clearance(body, &gam).0 <= clearance_min {
                    continue;
                }
                best.0 += 1;
                let v = integrate_along(f, &gam, opts.quadrature_tol)?.0.abs();
                if v > best.1 {
                    best = (best.0, v, gam.start(), gam.end());
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let count = rows.iter().map(|r| r.0).sum();
    let worst = rows
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty scan");
    Ok((count, worst.1, worst.2, worst.3))
}

fn bounding_box(flow: &Flow, s: Surface) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lo = vec![f64::INFINITY; 2];
    let mut hi = vec![f64::NEG_INFINITY; 2];
    for i in 0..256 {
        let th = std::f64::consts::TAU * i as f64 / 256.0;
        let p = flow
            .domain
            .boundary_point_at_angle(s, th)
            .ok_or_else(|| Error::Invalid("boundary point".into()))?;
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Ok((lo, hi))
}

fn grid(lo: &[f64], hi: &[f64], count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count * count);
    for j in 0..count {
        for i in 0..count {
            let t = |k: usize, a: usize| lo[k] + (hi[k] - lo[k]) * (a as f64 + 0.5) / count as f64;
            out.push(vec![t(0, i), t(1, j)]);
        }
    }
    out
}

fn covered(sweeps: &[ConeSweep], x: &[f64]) -> Result<bool> {
    for s in sweeps {
        for c in &s.cones {
            if c.eval(x)?.is_some() {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Runs the whole harness (n = 2). Fails with `NotConvex` or
/// `HypothesisViolated` when the premises do not hold.
pub fn verify_support_theorem(
    flow: &Flow,
    f: &dyn TensorField,
    body: &dyn ConvexBody,
    opts: &VerifyOptions,
) -> Result<SupportVerification> {
    if flow.dim() != 2 || body.dim() != 2 {
        return Err(Error::Invalid(
            "the support harness is implemented for n = 2 only".into(),
        ));
    }
    let clearance_min = opts.clearance_min.unwrap_or(0.01 * flow.domain.diameter());
    let convexity = is_geodesically_convex(flow, body, opts.convexity_samples, opts.seed)?;
    if let Some(w) = convexity.witness {
        return Err(Error::NotConvex {
            a: w.a,
            b: w.b,
            point: w.point,
        });
    }
    let (chords, max_transform, entry, exit) = chord_scan(flow, f, body, clearance_min, opts)?;
    if max_transform > opts.transform_tol {
        return Err(Error::HypothesisViolated {
            value: max_transform,
            entry,
            exit,
        });
    }

    let sweep_opts = SweepOptions {
        clearance_min,
        ..opts.sweep.clone()
    };
    let deform = DeformOptions {
        clearance_min,
        max_step: opts.deform_step,
        refinements: 3,
    };
    let (elo, ehi) = bounding_box(flow, Surface::Extended)?;
    let samples: Vec<Vec<f64>> = grid(&elo, &ehi, opts.eval_grid)
        .into_iter()
        .filter(|x| flow.domain.inside(x, Surface::Extended))
        .collect();
    // uncovered evaluation points seed new families, nearest to K first:
    // their avoiding chords are the longest and sweep the largest caps
    let mut seeds: Vec<(f64, &Vec<f64>)> = samples
        .iter()
        .filter(|x| flow.domain.inside(x, Surface::Boundary))
        .map(|x| (body.signed_distance(x), x))
        .filter(|(d, _)| *d > opts.seed_clearance * clearance_min)
        .collect();
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut sweeps: Vec<ConeSweep> = Vec::new();
    let mut seeds_without_family = 0;
    for (_, x) in seeds {
        if sweeps.len() >= opts.max_families {
            break;
        }
        if covered(&sweeps, x)? {
            continue;
        }
        let family = match avoiding_geodesic_through(flow, body, x, clearance_min)
            .and_then(|a| deform_to_boundary(flow, &a.geodesic, body, &deform))
        {
            Ok(fam) => fam,
            Err(Error::NotFound { .. }) | Err(Error::DeformationStuck { .. }) => {
                seeds_without_family += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        sweeps.push(cone_sweep(flow, &family, f, body, &sweep_opts)?);
    }

    let points: Vec<StitchedPoint> = samples
        .into_par_iter()
        .map(|x| -> Result<StitchedPoint> {
            let class = if body.contains(&x) {
                PointClass::InBody
            } else if flow.domain.inside(&x, Surface::Boundary) {
                PointClass::Outside
            } else {
                PointClass::Collar
            };
            let vals: Vec<Vec<f64>> = if class == PointClass::InBody {
                Vec::new()
            } else {
                let mut all = Vec::new();
                for s in &sweeps {
                    all.extend(s.eval_all(&x)?);
                }
                all
            };
            let mut spread: f64 = 0.0;
            for a in &vals {
                for b in &vals {
                    for (p, q) in a.iter().zip(b) {
                        spread = spread.max((p - q).abs());
                    }
                }
            }
            let v = (!vals.is_empty()).then(|| {
                let mut m = vec![0.0; 2];
                for a in &vals {
                    for (s, t) in m.iter_mut().zip(a) {
                        *s += t / vals.len() as f64;
                    }
                }
                m
            });
            Ok(StitchedPoint {
                x,
                class,
                v,
                cones: vals.len(),
                spread,
            })
        })
        .collect::<Result<_>>()?;

    let outside: Vec<&StitchedPoint> = points
        .iter()
        .filter(|p| p.class == PointClass::Outside)
        .collect();
    let coverage =
        outside.iter().filter(|p| p.v.is_some()).count() as f64 / outside.len().max(1) as f64;
    let v_outside_max = points
        .iter()
        .filter(|p| p.class == PointClass::Collar)
        .filter_map(|p| p.v.as_ref())
        .flat_map(|v| v.iter().map(|a| a.abs()))
        .fold(0.0, f64::max);
    let max_stitch_spread = points.iter().map(|p| p.spread).fold(0.0, f64::max);
    let fold = |g: fn(&ConeSweep) -> f64| sweeps.iter().map(g).fold(0.0, f64::max);
    let flagged_cones = sweeps.iter().map(|s| s.flagged()).sum();
    let max_overlap = fold(|s| s.max_overlap);
    let sw = &opts.sweep;
    let certificate = Certificate {
        convexity_pairs: convexity.pairs,
        chords,
        max_transform,
        clearance_min,
        families: sweeps.len(),
        cones: sweeps.iter().map(|s| s.cones.len()).sum(),
        skipped_members: sweeps.iter().map(|s| s.skipped.len()).sum(),
        flagged_cones,
        seeds_without_family,
        epsilon_range: (
            sweeps
                .iter()
                .map(|s| s.epsilon_range.0)
                .fold(f64::INFINITY, f64::min),
            fold(|s| s.epsilon_range.1),
        ),
        max_extraction_residual: fold(|s| s.max_residual),
        max_exit_mismatch: fold(|s| s.max_exit_mismatch),
        max_overlap,
        max_stitch_spread,
        coverage,
        v_outside_max,
        grid_samples: points.len(),
        passed: flagged_cones == 0
            && max_overlap <= sw.overlap_tol
            && max_stitch_spread <= sw.overlap_tol
            && v_outside_max <= sw.residual_tol,
    };
    Ok(SupportVerification {
        certificate,
        points,
        sweeps,
    })
}
