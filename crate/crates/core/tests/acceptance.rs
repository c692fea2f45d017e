//! Acceptance run: one line per criterion, nonzero exit if any fails.
//! `cargo test --test acceptance -- 3 9` runs a subset.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use common::{euclidean_flow, poincare_flow, random_maximal, rng, Potential};
use geotomo::chart::{PolarGeometry, SemiGeodesicChart, TubeOptions};
use geotomo::config::{derivative_check, sample_points, ConfigFile, ExperimentConfig};
use geotomo::decomposition::{assemble_operator, decompose, DecomposeOptions, Grid, Staggered};
use geotomo::domain::{DomainSpec, Surface};
use geotomo::error::Error;
use geotomo::expr::{parse, ExprError};
use geotomo::extraction::{extract, extract_via_u, ExtractionOptions};
use geotomo::field::{eval, ExprField, TensorField};
use geotomo::geodesic::{Direction, Flow};
use geotomo::metric::ConstantCurvature;
use geotomo::simplicity::{check_simple, SimplicityOptions};
use geotomo::support::{dichotomy_holds, verify_support_theorem, Ball, PointClass};
use geotomo::transform::{endpoint_identity_check, integrate_along, u_function, QUAD_TOL};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Tube of 41 lines along the vertical diameter, vertex on `∂M_½` below it.
fn vertical_tube(flow: &Flow) -> SemiGeodesicChart {
    let r = 0.5 * flow.domain.diameter();
    let entry = [0.0, -r];
    let back = flow
        .shoot(&entry, &[0.0, 1.0], Surface::Half, Direction::Backward)
        .unwrap();
    let base = back.point_at(back.t_range().0);
    let geo = PolarGeometry::aimed(flow, &base, &[0.0, 0.0]).unwrap();
    SemiGeodesicChart::build(flow, Arc::new(geo), &TubeOptions::default()).unwrap()
}

fn kernel() -> Outcome {
    let mut line = Vec::new();
    for (name, flow, seed) in [
        ("euclidean", euclidean_flow(), 1u64),
        ("poincare", poincare_flow(), 2),
    ] {
        let c = flow.domain.defining.center();
        let r = 0.5 * flow.domain.diameter();
        let mut g = rng(seed);
        let mut worst: f64 = 0.0;
        for k in 0..100 {
            let f = Potential::random(seed * 1000 + k, &c, r, 1, 3).dv(flow.metric.clone(), false);
            let gam = random_maximal(&flow, &mut g);
            worst = worst.max(
                integrate_along(f.as_ref(), &gam, QUAD_TOL)
                    .map_err(|e| e.to_string())?
                    .0
                    .abs(),
            );
        }
        ensure!(worst < 1e-8, "{name}: max |I(dv)| = {worst:.2e}");
        line.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("max |I(dv)|: {}", line.join(", ")))
}

fn endpoint_identity() -> Outcome {
    let comps: Vec<String> = ["sin(3*x1) + x2^2", "exp(x1*x2) - cos(x2)"]
        .map(String::from)
        .to_vec();
    let v: Arc<dyn TensorField> = Arc::new(ExprField::parse(1, 2, &comps).unwrap());
    let mut line = Vec::new();
    for (name, flow, seed) in [
        ("euclidean", euclidean_flow(), 8u64),
        ("poincare", poincare_flow(), 9),
    ] {
        let mut g = rng(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let gam = random_maximal(&flow, &mut g);
            let res = endpoint_identity_check(flow.metric.clone(), v.clone(), &gam, QUAD_TOL)
                .map_err(|e| e.to_string())?;
            worst = worst.max(res);
        }
        ensure!(worst < 1e-8, "{name}: residual {worst:.2e}");
        line.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("residual: {}", line.join(", ")))
}

struct TubeRun {
    inside: f64,
    beyond: f64,
    h_ni: f64,
}

/// `f = dv` with `v` vanishing on `∂M`, extended by zero.
fn tube_run(flow: &Flow, seed: u64) -> TubeRun {
    let chart = vertical_tube(flow);
    let r = 0.5 * flow.domain.diameter();
    let pot = Potential::random(seed, &flow.domain.defining.center(), r, 3, 3);
    let f = pot.dv(flow.metric.clone(), true);
    let ex = extract(&chart, f.as_ref(), &ExtractionOptions::default()).unwrap();
    let (mut inside, mut beyond): (f64, f64) = (0.0, 0.0);
    for j in 0..chart.line_count() {
        if ex.vt[j].is_none() {
            continue;
        }
        let (a, b) = chart.faces(j).unwrap();
        for s in 0..=40 {
            let t = chart.r_start + (chart.r_end - chart.r_start) * s as f64 / 40.0;
            let v = ex.v_original(j, t).unwrap().unwrap();
            let x = chart.point(j, t).unwrap();
            if t > a && t < b {
                inside = inside.max(max_abs(&v, &pot.value(&x)));
            } else {
                inside = inside.max(max_abs(&v, &[0.0, 0.0]));
            }
            if t > b {
                beyond = beyond.max(max_abs(&v, &[0.0, 0.0]));
            }
        }
    }
    let rep = ex.residual(f.as_ref(), 60).unwrap();
    TubeRun {
        inside,
        beyond,
        h_ni: rep.max_h_ni,
    }
}

fn round_trip() -> Outcome {
    let mut line = Vec::new();
    for (name, flow, seed) in [
        ("euclidean", euclidean_flow(), 5u64),
        ("poincare", poincare_flow(), 7),
    ] {
        let run = tube_run(&flow, seed);
        ensure!(
            run.inside < 1e-5,
            "{name}: |v - v_true| = {:.2e}",
            run.inside
        );
        ensure!(run.h_ni < 1e-6, "{name}: max |h_ni| = {:.2e}", run.h_ni);
        line.push(format!(
            "{name} |v - v_true| {:.1e} |h_ni| {:.1e}",
            run.inside, run.h_ni
        ));
    }
    Ok(line.join(", "))
}

fn cross_construction() -> Outcome {
    let flow = poincare_flow();
    let chart = vertical_tube(&flow);
    let pot = Potential::random(13, &[0.0, 0.0], 0.5, 3, 2);
    let f = pot.dv(flow.metric.clone(), true);
    let ex = extract(&chart, f.as_ref(), &ExtractionOptions::default()).unwrap();
    let mut g = rng(14);
    let (mut worst, mut count): (f64, usize) = (0.0, 0);
    while count < 50 {
        let j = g.gen_range(2..chart.line_count() - 2);
        let Some((a, b)) = chart.faces(j) else {
            continue;
        };
        let t = g.gen_range(a..b);
        let Some(ode) = ex.v_chart(j, t) else {
            continue;
        };
        let via_u = extract_via_u(&chart, f.as_ref(), j, t, 1e-4).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs(&ode, &via_u));
        count += 1;
    }
    ensure!(worst < 1e-5, "max difference {worst:.2e}");
    Ok(format!("max difference over {count} points {worst:.1e}"))
}

fn vanishing_beyond_exit() -> Outcome {
    let mut line = Vec::new();
    for (name, flow, seed) in [
        ("euclidean", euclidean_flow(), 15u64),
        ("poincare", poincare_flow(), 16),
    ] {
        let run = tube_run(&flow, seed);
        ensure!(
            run.beyond < 1e-5,
            "{name}: |v| beyond exit {:.2e}",
            run.beyond
        );
        line.push(format!("{name} {:.1e}", run.beyond));
    }
    Ok(format!("max |v| beyond exit: {}", line.join(", ")))
}

fn homogeneity() -> Outcome {
    let flow = poincare_flow();
    let pot = Potential::random(17, &[0.0, 0.0], 0.5, 3, 3);
    let f = pot.dv(flow.metric.clone(), true);
    let mut g = rng(18);
    let (mut hom, mut odd): (f64, f64) = (0.0, 0.0);
    let mut count = 0;
    while count < 100 {
        let x = [g.gen_range(-0.5..0.5), g.gen_range(-0.5..0.5)];
        if !flow.domain.inside(&x, Surface::Boundary) {
            continue;
        }
        let th: f64 = g.gen_range(0.0..std::f64::consts::TAU);
        let len: f64 = g.gen_range(0.5..2.0);
        let xi = [len * th.cos(), len * th.sin()];
        let s: f64 = g.gen_range(0.2..5.0);
        let u = |d: &[f64]| u_function(&flow, f.as_ref(), &x, d, 1e-13).map_err(|e| e.to_string());
        let base = u(&xi)?;
        let scaled = u(&[s * xi[0], s * xi[1]])?;
        let back = u(&[-xi[0], -xi[1]])?;
        // u is continuous through 0, so compare against the scale of the problem
        let scale = base.abs().max(1e-3);
        hom = hom.max((scaled - s * base).abs() / scale);
        odd = odd.max((base + back).abs());
        count += 1;
    }
    ensure!(hom < 1e-8, "homogeneity {hom:.2e}");
    ensure!(odd < 1e-8, "oddness {odd:.2e}");
    Ok(format!("relative homogeneity {hom:.1e}, oddness {odd:.1e}"))
}

fn simplicity() -> Outcome {
    let opts = SimplicityOptions::default();
    for (name, flow) in [
        ("euclidean", euclidean_flow()),
        ("poincare", poincare_flow()),
    ] {
        let r = check_simple(&flow, &opts).map_err(|e| e.to_string())?;
        ensure!(r.verdict == "simple", "{name}: {r:?}");
    }
    let cap = Flow::new(
        Arc::new(ConstantCurvature::sphere(2)),
        DomainSpec::disk(1.0f64.tan()),
    );
    let r = check_simple(&cap, &opts).map_err(|e| e.to_string())?;
    ensure!(r.verdict == "non-simple", "cap: {r:?}");
    let t = r.first_conjugate.ok_or("cap: no conjugate point")?;
    let miss = (t - std::f64::consts::PI).abs();
    ensure!(miss < 1e-3, "cap: first conjugate at {t}");
    Ok(format!(
        "disks simple, cap non-simple with first conjugate {t:.6} (|t - pi| {miss:.1e})"
    ))
}

fn idempotence_change(op: &geotomo::decomposition::DeltaD, fs: &Staggered) -> f64 {
    let again = decompose(op, fs, &DecomposeOptions::default()).unwrap();
    again.fs.axpy(-1.0, fs).max_abs() / fs.max_abs().max(f64::MIN_POSITIVE)
}

fn decomposition() -> Outcome {
    let flow = poincare_flow();
    let r = 0.5 * flow.domain.diameter();
    let half = (r * r + flow.domain.extension_margin * r).sqrt();
    let f = Potential::random(4, &[0.0, 0.0], half, 3, 2).dv(flow.metric.clone(), false);
    let mut sizes = Vec::new();
    let mut line = Vec::new();
    for nodes in [81, 161] {
        let grid = Arc::new(Grid::over_half(&flow.domain, nodes));
        let op = assemble_operator(flow.metric.clone(), grid).unwrap();
        let fg = op.sample(f.as_ref()).unwrap();
        let t = Instant::now();
        let out = decompose(&op, &fg, &DecomposeOptions::default()).map_err(|e| e.to_string())?;
        let secs = t.elapsed().as_secs_f64();
        ensure!(nodes < 161 || secs < 120.0, "161 nodes took {secs:.0} s");
        ensure!(
            out.report.orthogonality < 1e-6,
            "orthogonality {:.2e}",
            out.report.orthogonality
        );
        let change = idempotence_change(&op, &out.fs);
        ensure!(change < 1e-6, "idempotence change {change:.2e}");
        sizes.push(out.fs.max_abs());
        line.push(format!(
            "{nodes}: |f^s| {:.2e} orth {:.1e} idem {:.1e}",
            out.fs.max_abs(),
            out.report.orthogonality,
            change
        ));
    }
    let ratio = sizes[0] / sizes[1];
    ensure!((ratio - 4.0).abs() <= 1.2, "refinement ratio {ratio:.2}");
    Ok(format!("ratio {ratio:.2}; {}", line.join("; ")))
}

fn support_run(file: &str) -> Outcome {
    let cfg = ExperimentConfig::load(&configs().join(file)).map_err(|e| e.to_string())?;
    let flow = cfg.flow().map_err(|e| e.to_string())?;
    let f = cfg.field(&flow, Some("f")).map_err(|e| e.to_string())?;
    let v0 = cfg.field(&flow, Some("v")).map_err(|e| e.to_string())?;
    let body = cfg
        .body
        .as_ref()
        .ok_or("no body")?
        .build()
        .map_err(|e| e.to_string())?;
    let out = verify_support_theorem(&flow, f.as_ref(), body.as_ref(), &cfg.verify_options())
        .map_err(|e| e.to_string())?;
    let c = &out.certificate;
    ensure!(c.passed, "{file}: certificate failed: {c:?}");
    ensure!(
        c.max_transform < 1e-8,
        "{file}: max |If| {:.2e}",
        c.max_transform
    );
    ensure!(c.coverage > 0.95, "{file}: coverage {:.3}", c.coverage);
    ensure!(
        c.v_outside_max < 1e-5,
        "{file}: |v| outside M {:.2e}",
        c.v_outside_max
    );
    let mut err: f64 = 0.0;
    for p in &out.points {
        if let (PointClass::Outside, Some(v)) = (p.class, &p.v) {
            err = err.max(max_abs(
                v,
                &eval(v0.as_ref(), &p.x).map_err(|e| e.to_string())?,
            ));
        }
    }
    ensure!(err < 1e-4, "{file}: |v - v0| {err:.2e}");
    Ok(format!(
        "{file}: |If| {:.1e} coverage {:.3} |v - v0| {err:.1e} |v| outside M {:.1e}",
        c.max_transform, c.coverage, c.v_outside_max
    ))
}

fn support() -> Outcome {
    let a = support_run("euclidean_support.toml")?;
    let b = support_run("poincare_support.toml")?;
    Ok(format!("{a}; {b}"))
}

fn negative_controls() -> Outcome {
    let load = |file: &str| {
        let cfg = ExperimentConfig::load(&configs().join(file)).unwrap();
        let flow = cfg.flow().unwrap();
        let body = cfg.body.as_ref().unwrap().build().unwrap();
        (cfg, flow, body)
    };
    let (cfg, flow, body) = load("negative_bump.toml");
    let f = cfg.field(&flow, Some("f")).map_err(|e| e.to_string())?;
    let value =
        match verify_support_theorem(&flow, f.as_ref(), body.as_ref(), &cfg.verify_options()) {
            Err(Error::HypothesisViolated { value, .. }) => value,
            Err(e) => return Err(format!("bump: {e}")),
            Ok(o) => return Err(format!("bump accepted: {:?}", o.certificate)),
        };
    ensure!(value > 1e-3, "offending |If| = {value:.2e}");
    let (cfg, flow, body) = load("nonconvex_annulus.toml");
    let zero = ExprField::parse(2, 2, &["0".into(), "0".into(), "0".into()]).unwrap();
    let witness = match verify_support_theorem(&flow, &zero, body.as_ref(), &cfg.verify_options()) {
        Err(Error::NotConvex { point, .. }) => point,
        Err(e) => return Err(format!("annulus: {e}")),
        Ok(_) => return Err("annulus accepted".into()),
    };
    Ok(format!(
        "offending |If| {value:.2e}; annulus leaves at {witness:.3?}"
    ))
}

fn dichotomy() -> Outcome {
    let mut g = rng(19);
    let mut line = Vec::new();
    for (name, flow, radius) in [
        ("euclidean", euclidean_flow(), 0.3),
        ("poincare", poincare_flow(), 0.2),
    ] {
        let k = Ball {
            center: vec![0.0, 0.0],
            radius,
        };
        let r = 0.5 * flow.domain.diameter();
        let mut count = 0;
        while count < 100 {
            let x = [g.gen_range(-r..r), g.gen_range(-r..r)];
            if x[0].hypot(x[1]) <= radius || !flow.domain.inside(&x, Surface::Boundary) {
                continue;
            }
            let th: f64 = g.gen_range(0.0..std::f64::consts::TAU);
            ensure!(
                dichotomy_holds(&flow, &k, &x, &[th.cos(), th.sin()]).map_err(|e| e.to_string())?,
                "{name}: both half-rays from {x:?} meet K"
            );
            count += 1;
        }
        line.push(format!("{name} {count}"));
    }
    Ok(format!("points checked: {}", line.join(", ")))
}

fn parser() -> Outcome {
    let val = |s: &str| {
        parse(s, 2)
            .map_err(|e| format!("{s}: {e}"))?
            .evaluate(&[3.0, 0.5])
            .map_err(|e| e.to_string())
    };
    let cases = [
        ("4/(1 - (x2^2))^2", 64.0 / 9.0),
        ("x1*x2 + 1", 2.5),
        ("2+3*4", 14.0),
        ("-2^2", -4.0),
        ("2^3^2", 512.0),
        ("(2^3)^2", 64.0),
        ("2^-1", 0.5),
        ("-x1^2", -9.0),
        ("8/4/2", 1.0),
        ("8-4-2", 2.0),
        ("2*-3", -6.0),
        ("pow(2, 10) + atan2(0, 1)", 1024.0),
    ];
    for (s, want) in cases {
        let got = val(s)?;
        ensure!(got == want, "{s} = {got}, expected {want}");
    }
    ensure!(
        matches!(
            parse("sin(x1) *", 2),
            Err(ExprError::Syntax { column: 10, .. })
        ),
        "trailing operator not rejected at column 10"
    );
    ensure!(
        matches!(parse("x3", 2), Err(ExprError::UnknownIdentifier { .. })),
        "x3 accepted in two dimensions"
    );
    let mut files = Vec::new();
    let mut stack = vec![configs()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    let (mut worst, mut total): (f64, usize) = (0.0, 0);
    for path in &files {
        let file = ConfigFile::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let domain = file.domain().unwrap_or_else(|| DomainSpec::disk(0.5));
        let pts = sample_points(&domain, 30, 9);
        for lab in file.expressions() {
            let e = lab.parse().map_err(|e| e.to_string())?;
            let err = derivative_check(&e, &pts);
            ensure!(err < 1e-7, "{} {}: {err:.2e}", path.display(), lab.label);
            worst = worst.max(err);
            total += 1;
        }
    }
    Ok(format!(
        "{} cases; {total} expressions in {} configs, worst derivative mismatch {worst:.1e}",
        cases.len() + 2,
        files.len()
    ))
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 12] = [
        ("kernel of the transform", 10.0, kernel),
        ("endpoint identity", 10.0, endpoint_identity),
        ("extraction round trip", 30.0, round_trip),
        (
            "ODE vs derivative-of-u extraction",
            60.0,
            cross_construction,
        ),
        (
            "vanishing beyond the exit face",
            30.0,
            vanishing_beyond_exit,
        ),
        ("homogeneity and oddness of u", 30.0, homogeneity),
        ("simplicity detection", 60.0, simplicity),
        ("solenoidal decomposition", 120.0, decomposition),
        ("support pipeline", 600.0, support),
        ("negative controls", 60.0, negative_controls),
        ("half-ray dichotomy", 10.0, dichotomy),
        ("expression parser", 5.0, parser),
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    let mut err = std::io::stderr();
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(d) if secs > *limit => Err(format!("{d} (over the {limit} s limit)")),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        writeln!(
            err,
            "criterion {id:>2} {tag} [{secs:.1} s] {name}: {detail}"
        )
        .unwrap();
    }
    if failed > 0 {
        writeln!(err, "{failed} criteria failed").unwrap();
        std::process::exit(1);
    }
}
