mod common;

use std::sync::Arc;

use common::{poincare_flow, Potential};
use geotomo::chart::{PolarGeometry, SemiGeodesicChart, SlabGeometry, TubeOptions};
use geotomo::domain::{DomainSpec, Slab};
use geotomo::extraction::{extract, extract_vn, DuhamelSolver, ExtractionOptions};
use geotomo::field::{ExprField, FnField, SymDerivative, TensorField};
use geotomo::geodesic::Flow;
use geotomo::metric::{Euclidean, Metric};

fn slab_flow() -> Flow {
    let slab = Arc::new(Slab {
        n: 2,
        lo: 0.0,
        hi: 1.0,
    });
    Flow::new(Arc::new(Euclidean { n: 2 }), DomainSpec::new(slab))
}

fn slab_chart(flow: &Flow, m: usize, eps: f64) -> SemiGeodesicChart {
    let geo = Arc::new(SlabGeometry::new(2, -0.5, 1.5));
    SemiGeodesicChart::build(flow, geo, &TubeOptions { m, eps_tube: eps }).unwrap()
}

fn expr(flow: &Flow, rank: usize, comps: &[&str]) -> ExprField {
    let c: Vec<String> = comps.iter().map(|s| s.to_string()).collect();
    ExprField::parse(rank, 2, &c)
        .unwrap()
        .extended_by_zero(flow.domain.defining.clone())
}

#[test]
fn slab_unit_normal_component_integrates_to_arc_length() {
    let flow = slab_flow();
    let chart = slab_chart(&flow, 4, 0.2);
    let f = expr(&flow, 2, &["0", "0", "1"]);
    let vn = extract_vn(&chart, &f, &ExtractionOptions::default()).unwrap();
    for j in 0..chart.line_count() {
        for t in [-0.01f64, 0.0, 0.25, 0.5, 1.0, 1.2, 1.45] {
            let want = t.clamp(0.0, 1.0);
            assert!((vn[j].eval(t)[0] - want).abs() < 1e-9, "line {j} t {t}");
        }
    }
}

#[test]
fn slab_normal_potential_is_recovered() {
    let flow = slab_flow();
    let chart = slab_chart(&flow, 4, 0.2);
    let f = expr(&flow, 2, &["0", "0", "1 - 2*x2"]);
    let ex = extract(&chart, &f, &ExtractionOptions::default()).unwrap();
    let j = chart.m;
    for t in [0.1, 0.5, 0.9] {
        let v = ex.v_original(j, t).unwrap().unwrap();
        assert!(v[0].abs() < 1e-9);
        assert!((v[1] - t * (1.0 - t)).abs() < 1e-9);
    }
}

#[test]
fn slab_tangential_potential_is_recovered() {
    let flow = slab_flow();
    let chart = slab_chart(&flow, 4, 0.2);
    // v = (x1² x2, 0)
    let f = expr(&flow, 2, &["2*x1*x2", "x1^2/2", "0"]);
    let ex = extract(&chart, &f, &ExtractionOptions::default()).unwrap();
    for j in 2..chart.line_count() - 2 {
        let x1 = chart.cross_section(j)[0];
        for t in [0.2, 0.7, 1.0] {
            let v = ex.v_original(j, t).unwrap().unwrap();
            assert!((v[0] - x1 * x1 * t).abs() < 1e-7, "{j} {t} {v:?}");
            assert!(v[1].abs() < 1e-9);
        }
    }
    // edge lines have no stencil for the tangential system
    assert!(ex.vt[0].is_none() && ex.vt[1].is_none());
}

fn poincare_chart(flow: &Flow) -> SemiGeodesicChart {
    let base = [0.0, -(0.325f64).sqrt()];
    let geo = Arc::new(PolarGeometry::new(flow, &base, &[0.0, 1.0]).unwrap());
    SemiGeodesicChart::build(flow, geo, &TubeOptions::default()).unwrap()
}

#[test]
fn poincare_round_trip_and_residual() {
    let flow = poincare_flow();
    let chart = poincare_chart(&flow);
    let pot = Potential::random(7, &[0.0, 0.0], 0.5, 3, 3);
    let f = pot.dv(flow.metric.clone(), true);
    let ex = extract(&chart, f.as_ref(), &ExtractionOptions::default()).unwrap();
    let mut worst: f64 = 0.0;
    let mut beyond: f64 = 0.0;
    for j in 0..chart.line_count() {
        if ex.vt[j].is_none() {
            continue;
        }
        let (a, b) = chart.faces(j).unwrap();
        for s in 0..=40 {
            let r = chart.r_start + (chart.r_end - chart.r_start) * s as f64 / 40.0;
            let v = ex.v_original(j, r).unwrap().unwrap();
            let x = chart.point(j, r).unwrap();
            let want = if r > a && r < b {
                pot.value(&x)
            } else {
                vec![0.0, 0.0]
            };
            let err = (v[0] - want[0]).abs().max((v[1] - want[1]).abs());
            worst = worst.max(err);
            if r > b {
                beyond = beyond.max(v[0].abs().max(v[1].abs()));
            }
        }
    }
    assert!(worst < 1e-5, "round trip error {worst:e}");
    assert!(beyond < 1e-5, "beyond exit {beyond:e}");
    let rep = ex.residual(f.as_ref(), 60).unwrap();
    assert!(rep.max_h_ni < 1e-6, "{rep:?}");
    assert!(rep.max_h_nn < 1e-6, "{rep:?}");
    assert!(rep.max_h_tangential < 1e-5, "{rep:?}");
}

#[test]
fn duhamel_agrees_with_direct() {
    let flow = poincare_flow();
    let chart = poincare_chart(&flow);
    let pot = Potential::random(11, &[0.0, 0.0], 0.5, 3, 2);
    let f = pot.dv(flow.metric.clone(), true);
    let direct = extract(&chart, f.as_ref(), &ExtractionOptions::default()).unwrap();
    let opts = ExtractionOptions {
        solver: Arc::new(DuhamelSolver),
        ..Default::default()
    };
    let duh = extract(&chart, f.as_ref(), &opts).unwrap();
    for j in (2..chart.line_count() - 2).step_by(5) {
        for s in 0..10 {
            let r = chart.r_start + (chart.r_end - chart.r_start) * s as f64 / 9.0;
            let a = direct.v_chart(j, r).unwrap();
            let b = duh.v_chart(j, r).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-7, "{j} {r}");
        }
    }
}

#[test]
fn non_potential_field_leaves_tangential_residual() {
    let flow = poincare_flow();
    let chart = poincare_chart(&flow);
    let bump = FnField::new(2, 2, |x, out| {
        let s = (1.0 - (x[0] * x[0] + (x[1] - 0.1).powi(2)) / 0.04)
            .max(0.0)
            .powi(4);
        out.copy_from_slice(&[s, 0.3 * s, 0.3 * s, 0.5 * s]);
    });
    let ex = extract(&chart, &bump, &ExtractionOptions::default()).unwrap();
    let rep = ex.residual(&bump, 60).unwrap();
    assert!(rep.max_h_nn < 1e-6 && rep.max_h_ni < 1e-5, "{rep:?}");
    assert!(rep.max_h_tangential > 1e-2, "{rep:?}");
}

#[test]
fn tangential_error_converges_at_fourth_order() {
    let flow = slab_flow();
    let metric: Arc<dyn Metric> = flow.metric.clone();
    // v = (sin(x1) x2³, cos(x1) x2³)
    let v = FnField::new(1, 2, |x, out| {
        out[0] = x[0].sin() * x[1].powi(3);
        out[1] = x[0].cos() * x[1].powi(3);
    })
    .with_gradient(|x, out| {
        let c = x[1].powi(3);
        let d = 3.0 * x[1] * x[1];
        out.copy_from_slice(&[
            x[0].cos() * c,
            -x[0].sin() * c,
            x[0].sin() * d,
            x[0].cos() * d,
        ]);
    })
    .extended_by_zero(flow.domain.defining.clone());
    let f: Arc<dyn TensorField> = Arc::new(SymDerivative {
        metric,
        v: Arc::new(v),
    });
    let err = |m: usize| {
        let chart = slab_chart(&flow, m, 0.8);
        let ex = extract(&chart, f.as_ref(), &ExtractionOptions::default()).unwrap();
        let j = chart.m + m / 2;
        let x1 = chart.cross_section(j)[0];
        let v = ex.v_original(j, 0.9).unwrap().unwrap();
        (v[0] - x1.sin() * 0.9f64.powi(3)).abs()
    };
    let (e1, e2) = (err(4), err(8));
    let slope = (e1 / e2).log2();
    assert!((slope - 4.0).abs() < 0.8, "slope {slope} ({e1:e}, {e2:e})");
}
