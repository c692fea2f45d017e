//! Sampled test of simplicity: strict convexity of the boundary, absence of
//! conjugate points and injectivity of the boundary exit map.

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{boundary_normal, second_fundamental_form, Surface};
use crate::error::{Error, Result};
use crate::geodesic::{Direction, Flow};
use crate::jacobi::{first_conjugate, normal_frame};

#[derive(Debug, Clone, Copy)]
pub struct SimplicityOptions {
    /// Boundary points for the convexity sample.
    pub boundary_points: usize,
    /// Boundary points from which geodesics are launched.
    pub launch_points: usize,
    /// Launch directions per point for the conjugate scan.
    pub conjugate_directions: usize,
    /// Launch directions per point for the fold scan.
    pub fold_directions: usize,
}

impl Default for SimplicityOptions {
    fn default() -> Self {
        SimplicityOptions {
            boundary_points: 64,
            launch_points: 12,
            conjugate_directions: 7,
            fold_directions: 41,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimplicityReport {
    pub min_convexity: f64,
    pub conjugate_found: bool,
    /// Smallest parameter of a first conjugate point over the sample.
    pub first_conjugate: Option<f64>,
    pub fold_detected: bool,
    /// Launches that never left the domain within the length bound.
    pub trapped: usize,
    pub verdict: String,
}

impl SimplicityReport {
    pub fn is_simple(&self) -> bool {
        self.verdict == "simple"
    }
}

/// Boundary points: equally spaced angles for n = 2, a fixed spiral of
/// directions otherwise.
pub fn boundary_sample(flow: &Flow, count: usize) -> Vec<Vec<f64>> {
    let n = flow.dim();
    (0..count)
        .filter_map(|i| {
            let dir = sphere_direction(n, i, count);
            flow.domain.boundary_point(Surface::Boundary, &dir)
        })
        .collect()
}

/// Deterministic, roughly uniform direction `i` of `count` on `S^{n−1}`.
pub fn sphere_direction(n: usize, i: usize, count: usize) -> Vec<f64> {
    let u = (i as f64 + 0.5) / count as f64;
    if n == 2 {
        let th = std::f64::consts::TAU * u;
        return vec![th.cos(), th.sin()];
    }
    // generalized spiral: first coordinate uniform, the rest by golden angles
    let z = 1.0 - 2.0 * u;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let mut v = vec![0.0; n];
    v[0] = z;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut rem = r;
    for k in 1..n - 1 {
        let a = golden * (i as f64 + 1.0) * k as f64;
        v[k] = rem * a.cos();
        rem *= a.sin();
    }
    v[n - 1] = rem;
    v
}

/// Unit inward normal and a unit boundary tangent at a boundary point.
pub(crate) fn inward_frame(flow: &Flow, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (_, nu) = boundary_normal(&flow.domain, flow.metric.as_ref(), x)?;
    let inward: Vec<f64> = nu.iter().map(|a| -a).collect();
    let g = flow.metric_at(x)?;
    Ok((inward.clone(), normal_frame(&g, &inward)))
}

pub fn check_simple(flow: &Flow, opts: &SimplicityOptions) -> Result<SimplicityReport> {
    let pts = boundary_sample(flow, opts.boundary_points);
    let metric = flow.metric.as_ref();

    // (a) second fundamental form on unit tangents
    let min_convexity = pts
        .par_iter()
        .map(|x| -> Result<f64> {
            let (_, tangents) = inward_frame(flow, x)?;
            let mut m = f64::INFINITY;
            for t in &tangents {
                m = m.min(second_fundamental_form(&flow.domain, metric, x, t)?);
            }
            Ok(m)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);

    let launch = boundary_sample(flow, opts.launch_points);
    let fan = |x: &[f64], count: usize| -> Result<Vec<Vec<f64>>> {
        let (inward, tangents) = inward_frame(flow, x)?;
        let t = &tangents[0];
        Ok((0..count)
            .map(|k| {
                let th = -0.5 * std::f64::consts::PI
                    + std::f64::consts::PI * (k as f64 + 0.5) / count as f64;
                (0..x.len())
                    .map(|i| th.cos() * inward[i] + th.sin() * t[i])
                    .collect()
            })
            .collect())
    };

    // (b) conjugate points along geodesics launched from the boundary
    let scans: Vec<(Option<f64>, bool)> = launch
        .par_iter()
        .map(|x| -> Result<Vec<(Option<f64>, bool)>> {
            let mut out = Vec::new();
            for d in fan(x, opts.conjugate_directions)? {
                let (len, trapped) = match flow.shoot(x, &d, Surface::Boundary, Direction::Forward)
                {
                    Ok(g) => (g.length(), false),
                    Err(Error::NoExit { length }) => (length, true),
                    Err(e) => return Err(e),
                };
                out.push((first_conjugate(flow, x, &d, len)?, trapped));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let first_conj = scans
        .iter()
        .filter_map(|s| s.0)
        .fold(None, |acc: Option<f64>, t| {
            Some(acc.map_or(t, |a| a.min(t)))
        });
    let mut trapped = scans.iter().filter(|s| s.1).count();

    // (c) monotone exit angle along a fan of launch directions
    let center = flow.domain.defining.center();
    let folds: Vec<(bool, usize)> = launch
        .par_iter()
        .map(|x| -> Result<(bool, usize)> {
            let (_, tangents) = inward_frame(flow, x)?;
            let t = &tangents[0];
            let radial: Vec<f64> = x.iter().zip(&center).map(|(a, c)| a - c).collect();
            let rn = radial.iter().map(|a| a * a).sum::<f64>().sqrt();
            let tn = t.iter().map(|a| a * a).sum::<f64>().sqrt();
            let angle = |p: &[f64]| -> f64 {
                let q: Vec<f64> = p.iter().zip(&center).map(|(a, c)| a - c).collect();
                let a: f64 = q.iter().zip(&radial).map(|(u, v)| u * v).sum::<f64>() / rn;
                let b: f64 = q.iter().zip(t).map(|(u, v)| u * v).sum::<f64>() / tn;
                b.atan2(a)
            };
            let mut angles = Vec::new();
            let mut stuck = 0;
            for d in fan(x, opts.fold_directions)? {
                match flow.shoot(x, &d, Surface::Boundary, Direction::Forward) {
                    Ok(g) => angles.push(angle(&g.end()).rem_euclid(std::f64::consts::TAU)),
                    Err(Error::NoExit { .. }) => stuck += 1,
                    Err(e) => return Err(e),
                }
            }
            let inc = angles.windows(2).all(|w| w[1] > w[0]);
            let dec = angles.windows(2).all(|w| w[1] < w[0]);
            Ok((!(inc || dec), stuck))
        })
        .collect::<Result<Vec<_>>>()?;
    let fold_detected = folds.iter().any(|f| f.0);
    trapped += folds.iter().map(|f| f.1).sum::<usize>();

    let conjugate_found = first_conj.is_some();
    let simple = min_convexity > 0.0 && !conjugate_found && !fold_detected && trapped == 0;
    Ok(SimplicityReport {
        min_convexity,
        conjugate_found,
        first_conjugate: first_conj,
        fold_detected,
        trapped,
        verdict: if simple { "simple" } else { "non-simple" }.to_string(),
    })
}
