mod common;

use std::sync::Arc;
use std::time::Instant;

use common::{euclidean_flow, poincare_flow, rng, Potential};
use geotomo::decomposition::{
    assemble_operator, decompose, solenoidal_residual, DecomposeOptions, DeltaD, Grid, GridField,
};
use geotomo::field::{Combination, ExprField, FnField, TensorField};
use geotomo::geodesic::Flow;
use rand::Rng;

fn operator(flow: &Flow, nodes: usize) -> DeltaD {
    let grid = Arc::new(Grid::over_half(&flow.domain, nodes));
    assemble_operator(flow.metric.clone(), grid).unwrap()
}

/// Potential vanishing to third order on `∂M_½` of a centered disk.
fn half_potential(flow: &Flow, seed: u64) -> Potential {
    let r = 0.5 * flow.domain.diameter();
    let half = (r * r + flow.domain.extension_margin * r).sqrt();
    Potential::random(seed, &[0.0, 0.0], half, 3, 2)
}

/// `max |∂²f|` from second differences of the grid samples.
fn second_derivative_scale(f: &GridField) -> f64 {
    let g = &f.grid;
    let nc = f.nc();
    let mut worst: f64 = 0.0;
    for i in 0..g.node_count() {
        if !g.deep_inside(i, 1) {
            continue;
        }
        for k in 0..g.n {
            let (p, m) = (g.neighbor(i, k, 1).unwrap(), g.neighbor(i, k, -1).unwrap());
            for c in 0..nc {
                let d2 = (f.at(p)[c] - 2.0 * f.at(i)[c] + f.at(m)[c]) / (g.h * g.h);
                worst = worst.max(d2.abs());
            }
        }
    }
    worst
}

fn random_unknowns(op: &DeltaD, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..op.unknown_count())
        .map(|_| r.gen_range(-1.0..1.0))
        .collect()
}

#[test]
fn operator_is_symmetric_and_semidefinite() {
    let flow = poincare_flow();
    let op = operator(&flow, 61);
    for s in 0..20 {
        let u = random_unknowns(&op, 100 + s);
        let w = random_unknowns(&op, 200 + s);
        let (lu, lw) = (op.apply(&u), op.apply(&w));
        let a: f64 = lu.iter().zip(&w).map(|(x, y)| x * y).sum();
        let b: f64 = lw.iter().zip(&u).map(|(x, y)| x * y).sum();
        assert!((a - b).abs() <= 1e-8 * a.abs().max(b.abs()));
        let q: f64 = lu.iter().zip(&u).map(|(x, y)| x * y).sum();
        assert!(q >= -1e-10);
    }
}

#[test]
fn potential_fields_have_vanishing_solenoidal_part() {
    let flow = poincare_flow();
    let pot = half_potential(&flow, 4);
    let f = pot.dv(flow.metric.clone(), false);
    let mut errs = Vec::new();
    for nodes in [81, 161] {
        let op = operator(&flow, nodes);
        let fg = op.sample(f.as_ref()).unwrap();
        let out = decompose(&op, &fg, &DecomposeOptions::default()).unwrap();
        let (fs, rep) = (out.fs, out.report);
        let h = op.nodes.h;
        let scale = second_derivative_scale(&op.tensor_on_cells(&fg));
        assert!(
            fs.max_abs() < 5.0 * h * h * scale,
            "{} vs {}",
            fs.max_abs(),
            h * h * scale
        );
        assert!(rep.orthogonality < 1e-6, "{rep:?}");
        errs.push(fs.max_abs());
    }
    let ratio = errs[0] / errs[1];
    assert!((ratio - 4.0).abs() < 1.2, "ratio {ratio}");
}

fn bump(flow: &Flow) -> Arc<dyn TensorField> {
    let r = 0.5 * flow.domain.diameter();
    Arc::new(FnField::new(2, 2, move |x, out| {
        let s = (1.0 - (x[0] * x[0] + x[1] * x[1]) / (r * r))
            .max(0.0)
            .powi(4);
        out.copy_from_slice(&[
            s * (1.0 + x[0]),
            s * x[1],
            s * x[1],
            s * (2.0 - x[0] * x[1]),
        ]);
    }))
}

#[test]
fn decomposition_of_a_general_field() {
    let flow = poincare_flow();
    let f = bump(&flow);
    let mut res = Vec::new();
    for nodes in [81, 161] {
        let op = operator(&flow, nodes);
        let fg = op.sample(f.as_ref()).unwrap();
        let t = Instant::now();
        let out = decompose(&op, &fg, &DecomposeOptions::default()).unwrap();
        let rep = &out.report;
        if nodes == 161 {
            assert!(t.elapsed().as_secs_f64() < 120.0);
        }
        assert!(rep.orthogonality < 1e-6, "{rep:?}");
        assert!(rep.band_residual < 1e-8, "{rep:?}");
        let h = op.nodes.h;
        let scale = second_derivative_scale(&op.tensor_on_cells(&fg));
        assert!(
            rep.solenoidal_residual < 10.0 * h * h * scale,
            "{rep:?} scale {scale}"
        );
        res.push(rep.solenoidal_residual);
        // idempotence: f^s has no potential part left
        let again = decompose(&op, &out.fs, &DecomposeOptions::default()).unwrap();
        let change = again.fs.axpy(-1.0, &out.fs).max_abs();
        assert!(change < 1e-7 * out.fs.max_abs(), "{change:e}");
        assert!(again.v_max() < 1e-7 * out.v_max().max(1.0));
    }
    // at least second order; the decaying staircase layer makes it faster
    let ratio = res[0] / res[1];
    assert!(ratio > 2.8, "ratio {ratio}");
}

#[test]
fn solenoidal_fields_come_back_unchanged() {
    let flow = euclidean_flow();
    // ψ = (1 − |x|²)⁴, supported in M
    let s = |v: &str| v.to_string();
    let psi_xx = "(1 - x1^2 - x2^2)^2 * (48*x1^2 - 8*(1 - x1^2 - x2^2))";
    let psi_yy = "(1 - x1^2 - x2^2)^2 * (48*x2^2 - 8*(1 - x1^2 - x2^2))";
    let psi_xy = "48 * x1 * x2 * (1 - x1^2 - x2^2)^2";
    let f = ExprField::parse(2, 2, &[s(psi_yy), format!("-({psi_xy})"), s(psi_xx)])
        .unwrap()
        .extended_by_zero(flow.domain.defining.clone());
    let op = operator(&flow, 161);
    let fg = op.sample(&f).unwrap();
    // the input is divergence free up to discretization
    let h = op.nodes.h;
    let cells = op.tensor_on_cells(&fg);
    let scale = second_derivative_scale(&cells);
    assert!(solenoidal_residual(flow.metric.as_ref(), &cells).unwrap() < 10.0 * h * h * scale);
    let fs = decompose(&op, &fg, &DecomposeOptions::default())
        .unwrap()
        .fs;
    assert!(fs.axpy(-1.0, &fg).max_abs() < 5.0 * h * h * scale);
}

#[test]
fn decomposition_is_linear() {
    let flow = poincare_flow();
    let op = operator(&flow, 61);
    let f1 = bump(&flow);
    let f2 = half_potential(&flow, 9).dv(flow.metric.clone(), false);
    let comb = Combination::new(vec![(1.5, f1.clone()), (-2.0, f2.clone())]).unwrap();
    let run = |f: &dyn TensorField| {
        let g = op.sample(f).unwrap();
        decompose(
            &op,
            &g,
            &DecomposeOptions {
                tol: 1e-13,
                ..Default::default()
            },
        )
        .unwrap()
        .fs
    };
    let (a, b, c) = (run(f1.as_ref()), run(f2.as_ref()), run(&comb));
    let lin = a.axpy(1.5 - 1.0, &a).axpy(-2.0, &b);
    assert!(lin.axpy(-1.0, &c).max_abs() < 1e-8 * c.max_abs());
}
