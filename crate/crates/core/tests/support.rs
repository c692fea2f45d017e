mod common;

use std::sync::Arc;

use common::{euclidean_flow, poincare_flow, rng, Potential};
use geotomo::domain::Surface;
use geotomo::error::Error;
use geotomo::field::{Combination, FnField, TensorField};
use geotomo::support::{
    avoiding_geodesic_through, boundary_projection, cone_sweep, deform_to_boundary,
    dichotomy_holds, is_geodesically_convex, projection_jumps, verify_support_theorem, Annulus,
    Ball, ConeSweep, DeformOptions, SweepOptions, VerifyOptions,
};
use rand::Rng;

fn ball(r: f64) -> Ball {
    Ball {
        center: vec![0.0, 0.0],
        radius: r,
    }
}

#[test]
fn convexity_of_balls_and_annulus() {
    let e = euclidean_flow();
    assert!(
        is_geodesically_convex(&e, &ball(0.4), 200, 1)
            .unwrap()
            .convex
    );
    let ring = Annulus {
        center: vec![0.0, 0.0],
        inner: 0.2,
        outer: 0.4,
    };
    let rep = is_geodesically_convex(&e, &ring, 200, 1).unwrap();
    let w = rep.witness.expect("witness");
    assert!(!rep.convex && w.distance > 0.0);
    let p = poincare_flow();
    assert!(
        is_geodesically_convex(&p, &ball(0.2), 100, 2)
            .unwrap()
            .convex
    );
}

#[test]
fn witnesses_persist_with_more_samples() {
    let e = euclidean_flow();
    let ring = Annulus {
        center: vec![0.0, 0.0],
        inner: 0.2,
        outer: 0.4,
    };
    let first = is_geodesically_convex(&e, &ring, 50, 7).unwrap();
    let more = is_geodesically_convex(&e, &ring, 400, 7).unwrap();
    assert!(!first.convex && !more.convex);
    assert_eq!(first.pairs, more.pairs);
}

#[test]
fn avoiding_geodesics() {
    let e = euclidean_flow();
    let k = ball(0.5);
    let a = avoiding_geodesic_through(&e, &k, &[0.8, 0.0], 0.02).unwrap();
    assert!((a.clearance - 0.3).abs() < 1e-6, "{}", a.clearance);
    assert!(a.direction[0].abs() < 1e-4 * a.direction[1].abs());
    let b = avoiding_geodesic_through(&e, &k, &[0.51, 0.0], 0.0).unwrap();
    assert!(b.clearance > 0.0);
}

#[test]
fn deformation_keeps_clearance() {
    let e = euclidean_flow();
    let k = ball(0.5);
    let a = avoiding_geodesic_through(&e, &k, &[0.8, 0.0], 0.02).unwrap();
    let opts = DeformOptions {
        clearance_min: 0.02,
        max_step: 0.04,
        refinements: 3,
    };
    let fam = deform_to_boundary(&e, &a.geodesic, &k, &opts).unwrap();
    assert!(fam.min_clearance >= 0.3 - 1e-6, "{}", fam.min_clearance);
    assert!(fam.end_gap < 1e-6);
    for m in &fam.members {
        assert!(m.clearance > opts.clearance_min);
    }

    let p = poincare_flow();
    let k = ball(0.2);
    let a = avoiding_geodesic_through(&p, &k, &[0.35, 0.0], 0.01).unwrap();
    let fam = deform_to_boundary(
        &p,
        &a.geodesic,
        &k,
        &DeformOptions {
            clearance_min: 0.01,
            ..opts
        },
    )
    .unwrap();
    assert!(fam.min_clearance > 0.0 && fam.end_gap < 1e-6);
}

#[test]
fn projection_from_the_center() {
    let e = euclidean_flow();
    let q = boundary_projection(&e, &[0.0, 0.0], &[0.3, 0.4]).unwrap();
    assert!(
        (q[0] - 0.6).abs() < 1e-8 && (q[1] - 0.8).abs() < 1e-8,
        "{q:?}"
    );
    let again = boundary_projection(&e, &[0.0, 0.0], &q).unwrap_or(q.clone());
    assert!((again[0] - q[0]).abs() < 1e-6 && (again[1] - q[1]).abs() < 1e-6);
    let path: Vec<Vec<f64>> = (0..=60)
        .map(|i| {
            let t = i as f64 / 60.0 * std::f64::consts::PI;
            vec![0.2 + 0.5 * t.cos(), 0.5 * t.sin()]
        })
        .collect();
    let (jump, step) = projection_jumps(&e, &[0.0, 0.0], &path).unwrap();
    assert!(jump <= 10.0 * step, "{jump} {step}");
}

#[test]
fn at_most_one_half_ray_meets_a_convex_body() {
    let mut r = rng(11);
    for (flow, k) in [(euclidean_flow(), ball(0.3)), (poincare_flow(), ball(0.2))] {
        let mut count = 0;
        while count < 50 {
            let x = [r.gen_range(-0.48..0.48), r.gen_range(-0.48..0.48)];
            if x[0] * x[0] + x[1] * x[1] < 0.32f64.powi(2)
                || !flow.domain.inside(&x, Surface::Boundary)
            {
                continue;
            }
            let th: f64 = r.gen_range(0.0..std::f64::consts::TAU);
            assert!(dichotomy_holds(&flow, &k, &x, &[th.cos(), th.sin()]).unwrap());
            count += 1;
        }
    }
}

fn smooth_bump(center: [f64; 2], radius: f64, skew: bool) -> Arc<dyn TensorField> {
    Arc::new(FnField::new(2, 2, move |x, out| {
        let d2 = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)) / (radius * radius);
        let s = (1.0 - d2).max(0.0).powi(4);
        if skew {
            out.copy_from_slice(&[
                s * (1.0 + x[0]),
                s * x[1],
                s * x[1],
                s * (2.0 - x[0] * x[1]),
            ]);
        } else {
            out.copy_from_slice(&[s, 0.0, 0.0, s]);
        }
    }))
}

fn euclidean_family() -> (
    geotomo::geodesic::Flow,
    Ball,
    geotomo::support::GeodesicFamily,
) {
    let e = euclidean_flow();
    let k = ball(0.5);
    let a = avoiding_geodesic_through(&e, &k, &[0.8, 0.0], 0.02).unwrap();
    let opts = DeformOptions {
        clearance_min: 0.02,
        max_step: 0.04,
        refinements: 3,
    };
    let fam = deform_to_boundary(&e, &a.geodesic, &k, &opts).unwrap();
    (e, k, fam)
}

fn sweep_error(
    sw: &ConeSweep,
    fam: &geotomo::support::GeodesicFamily,
    pot: &Potential,
) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut hits = 0;
    for c in &sw.cones {
        for p in fam.members[c.member].geodesic.sample_points(7) {
            for v in sw.eval_all(&p).unwrap() {
                let tv = pot.value(&p);
                worst = worst.max((v[0] - tv[0]).abs().max((v[1] - tv[1]).abs()));
                hits += 1;
            }
        }
    }
    (worst, hits)
}

#[test]
fn sweep_recovers_potential_fields() {
    let (e, k, fam) = euclidean_family();
    let pot = Potential::random(3, &[0.0, 0.0], 1.0, 3, 2);
    let dv = pot.dv(e.metric.clone(), true);
    let w = smooth_bump([0.0, 0.0], 0.45, true);
    let with_w: Arc<dyn TensorField> =
        Arc::new(Combination::new(vec![(1.0, dv.clone()), (1.0, w)]).unwrap());
    let opts = SweepOptions::default();
    for f in [dv, with_w] {
        let sw = cone_sweep(&e, &fam, f.as_ref(), &k, &opts).unwrap();
        assert!(sw.cones.len() >= 5);
        assert_eq!(sw.flagged(), 0);
        for c in &sw.cones {
            assert!(
                c.report
                    .max_h_nn
                    .max(c.report.max_h_ni)
                    .max(c.report.max_h_tangential)
                    < 1e-5,
                "{:?}",
                c.report
            );
        }
        assert!(sw.max_overlap < 1e-5, "{}", sw.max_overlap);
        assert!(sw.max_overlap < 10.0 * opts.residual_tol);
        let (err, hits) = sweep_error(&sw, &fam, &pot);
        assert!(hits > 20 && err < 1e-4, "{err} over {hits}");
    }
}

#[test]
fn sweep_flags_fields_with_nonzero_transform() {
    let (e, k, fam) = euclidean_family();
    // straddles the members near the start of the family
    let f = smooth_bump([0.8, 0.0], 0.15, false);
    let sw = cone_sweep(&e, &fam, f.as_ref(), &k, &SweepOptions::default()).unwrap();
    let worst = sw
        .cones
        .iter()
        .map(|c| c.residual.max(c.exit_mismatch))
        .fold(0.0, f64::max);
    assert!(sw.flagged() > 0 && worst > 1e-3, "{worst}");
}

fn light() -> VerifyOptions {
    VerifyOptions {
        chord_grid: (48, 24),
        eval_grid: 15,
        max_families: 6,
        ..Default::default()
    }
}

#[test]
fn verify_sees_nothing_outside_the_body() {
    let e = euclidean_flow();
    let k = ball(0.3);
    let f = smooth_bump([0.0, 0.0], 0.3, true);
    let out = verify_support_theorem(&e, f.as_ref(), &k, &light()).unwrap();
    let c = &out.certificate;
    assert!(c.max_transform < 1e-10 && c.passed, "{c:?}");
    let vmax = out
        .points
        .iter()
        .filter_map(|p| p.v.as_ref())
        .flat_map(|v| v.iter().map(|a| a.abs()))
        .fold(0.0, f64::max);
    assert!(vmax < 1e-6, "{vmax}");
    assert!(out.points.iter().any(|p| p.v.is_some()));
}

#[test]
fn verify_rejects_bumps_outside_the_body() {
    let e = euclidean_flow();
    let k = ball(0.3);
    let f = smooth_bump([0.0, 0.6], 0.2, false);
    match verify_support_theorem(&e, f.as_ref(), &k, &light()) {
        Err(Error::HypothesisViolated { value, .. }) => assert!(value > 1e-3),
        other => panic!("{:?}", other.map(|o| o.certificate)),
    }
}

#[test]
fn verify_rejects_nonconvex_bodies() {
    let e = euclidean_flow();
    let ring = Annulus {
        center: vec![0.0, 0.0],
        inner: 0.2,
        outer: 0.4,
    };
    let f = smooth_bump([0.0, 0.0], 0.3, true);
    assert!(matches!(
        verify_support_theorem(&e, f.as_ref(), &ring, &light()),
        Err(Error::NotConvex { .. })
    ));
}
