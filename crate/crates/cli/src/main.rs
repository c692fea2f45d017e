//! `geotomo`: command-line front end. Every numeric output is a CSV file
//! with a JSON sidecar of the same stem.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use geotomo::chart::{PolarGeometry, SemiGeodesicChart};
use geotomo::config::{
    load_metric_file, BodySpec, DomainConfig, ExperimentConfig, FieldSpec, RaySpec,
};
use geotomo::decomposition::{assemble_operator, decompose, Grid, GridField};
use geotomo::domain::Surface;
use geotomo::extraction::{extract, ResidualReport};
use geotomo::geodesic::{Direction, Flow, Geodesic};
use geotomo::simplicity::{check_simple, SimplicityOptions};
use geotomo::support::verify_support_theorem;
use geotomo::transform::ray_transform;
use geotomo::Error;

#[derive(Parser)]
#[command(
    name = "geotomo",
    version,
    about = "Geodesic ray transforms of tensor fields"
)]
struct Cli {
    /// Experiment file; the per-command file flags replace its sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for all random sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Tolerance overrides, `key=val[,key=val...]`; repeatable.
    #[arg(long = "tol-overrides", global = true, value_name = "KEY=VAL")]
    tol_overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Inputs {
    /// Metric file (`[metric]` and `[domain]`).
    #[arg(long)]
    metric: Option<PathBuf>,
    /// Field file.
    #[arg(long)]
    field: Option<PathBuf>,
    /// Which field of a multi-field file to use.
    #[arg(long = "field-name")]
    field_name: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sampled simplicity test of the metric on its domain.
    CheckSimple {
        #[arg(long)]
        metric: Option<PathBuf>,
    },
    /// Integrals of a field along maximal geodesics.
    Transform {
        #[command(flatten)]
        inputs: Inputs,
        /// Ray CSV (`x1..xn,xi1..xin`), a generator file, or `random:N` / `fan:PxD`.
        #[arg(long)]
        rays: Option<String>,
    },
    /// Potential extraction in a tube of radial geodesics.
    Extract {
        #[command(flatten)]
        inputs: Inputs,
        /// Chart base point `x1,...,xn` outside `M`; by default the axis
        /// geodesic continued backward to `∂M_½`.
        #[arg(long = "base-point")]
        base_point: Option<String>,
        /// Two boundary points joined by the tube axis.
        #[arg(long, num_args = 2, value_names = ["ENTRY", "EXIT"], required = true)]
        axis: Vec<String>,
        /// Parameters per line in the output grid.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Solenoidal decomposition on a uniform grid.
    Decompose {
        #[command(flatten)]
        inputs: Inputs,
        /// Nodes along the longest side of the grid.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Runs the support-theorem verification pipeline.
    SupportVerify {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long = "convex-body")]
        convex_body: Option<PathBuf>,
        /// Initial cone half-angle.
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .with_context(|| format!("bad coordinate in `{s}`"))
        })
        .collect()
}

/// The experiment after file flags, seed, output and tolerance overrides.
fn resolve(cli: &Cli, inputs: &Inputs, body: Option<&Path>) -> Result<ExperimentConfig> {
    let base = match &cli.config {
        Some(p) => {
            Some(ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?)
        }
        None => None,
    };
    let mut cfg = match (&inputs.metric, base) {
        (Some(m), base) => {
            let (metric, domain) =
                load_metric_file(m).with_context(|| format!("loading {}", m.display()))?;
            let domain = match (domain, &base) {
                (Some(d), _) => d,
                (None, Some(b)) => b.domain.clone(),
                (None, None) => bail!(
                    "{} has no [domain] section and no --config was given",
                    m.display()
                ),
            };
            let mut c = base
                .unwrap_or_else(|| ExperimentConfig::new(metric.clone(), DomainConfig::disk(1.0)));
            c.metric = metric;
            c.domain = domain;
            c
        }
        (None, Some(b)) => b,
        (None, None) => bail!("give --metric or --config"),
    };
    if let Some(f) = &inputs.field {
        cfg.fields = FieldSpec::load_all(f).with_context(|| format!("loading {}", f.display()))?;
    }
    if let Some(b) = body {
        cfg.body = Some(BodySpec::load(b).with_context(|| format!("loading {}", b.display()))?);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    for o in &cli.tol_overrides {
        cfg.tolerances.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Output<'a> {
    cfg: &'a ExperimentConfig,
    command: &'static str,
}

impl Output<'_> {
    fn meta(&self, extra: Value) -> Value {
        let mut m = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "metric": self.cfg.metric.kind,
            "dimension": self.cfg.dim(),
            "seed": self.cfg.seed,
            "tolerances": serde_json::to_value(&self.cfg.tolerances).unwrap_or(Value::Null),
            "grid": serde_json::to_value(&self.cfg.grid).unwrap_or(Value::Null),
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut m, extra) {
            m.extend(e);
        }
        m
    }

    fn path(&self, suffix: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.cfg.output.dir)
            .with_context(|| format!("creating {}", self.cfg.output.dir.display()))?;
        Ok(self.cfg.output.file(suffix))
    }

    fn json(&self, name: &str, body: &Value) -> Result<PathBuf> {
        let p = self.path(&format!("{name}.json"))?;
        std::fs::write(&p, serde_json::to_string_pretty(body)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    /// Writes `rows` under `header` plus the sidecar.
    fn table(
        &self,
        name: &str,
        header: &[String],
        rows: &[Vec<String>],
        extra: Value,
    ) -> Result<PathBuf> {
        let p = self.path(&format!("{name}.csv"))?;
        let mut w =
            csv::Writer::from_path(&p).with_context(|| format!("writing {}", p.display()))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        let mut meta = self.meta(extra);
        meta["columns"] = json!(header);
        meta["rows"] = json!(rows.len());
        self.json(name, &meta)?;
        Ok(p)
    }
}

/// Summary on stdout; a closed pipe is not an error.
fn print_json(v: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).unwrap_or_default();
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn nums(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| format!("{x:e}")).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

fn check_simple_cmd(cli: &Cli, metric: &Option<PathBuf>) -> Result<()> {
    let inputs = Inputs {
        metric: metric.clone(),
        ..Default::default()
    };
    let cfg = resolve(cli, &inputs, None)?;
    let flow = cfg.flow()?;
    let report = check_simple(&flow, &SimplicityOptions::default())?;
    let out = Output {
        cfg: &cfg,
        command: "check-simple",
    };
    let body = out.meta(
        serde_json::to_value(&report)?
            .as_object()
            .cloned()
            .map(Value::Object)
            .unwrap_or_default(),
    );
    let p = out.json("simplicity", &body)?;
    print_json(&serde_json::to_value(&report)?);
    eprintln!("wrote {}", p.display());
    Ok(())
}

fn launch(flow: &Flow, x: &[f64], xi: &[f64]) -> geotomo::Result<Geodesic> {
    if flow.domain.rho(x).abs() <= flow.domain.tol_boundary {
        let unit = flow.normalize(x, xi)?;
        return flow.shoot(x, &unit, Surface::Boundary, Direction::Forward);
    }
    flow.maximal(x, xi, Surface::Boundary)
}

fn transform_cmd(cli: &Cli, inputs: &Inputs, rays: &Option<String>) -> Result<()> {
    let cfg = resolve(cli, inputs, None)?;
    let flow = cfg.flow()?;
    let f = cfg.field(&flow, inputs.field_name.as_deref())?;
    let spec = match rays {
        Some(s) => match RaySpec::parse_inline(s) {
            Some(r) => r,
            None => RaySpec::load(Path::new(s))?,
        },
        None => cfg
            .rays
            .clone()
            .context("give --rays or a [rays] section")?,
    };
    let launches = spec.generate(&flow, cfg.seed)?;
    let tol = cfg.tolerances.quadrature;
    let results: Vec<Result<(Vec<f64>, Vec<f64>, f64, f64), String>> = {
        use rayon::prelude::*;
        launches
            .par_iter()
            .map(|(x, xi)| {
                let g = launch(&flow, x, xi).map_err(|e| e.to_string())?;
                let r = ray_transform(f.as_ref(), &g, tol).map_err(|e| e.to_string())?;
                Ok((r.entry, r.exit, r.value, r.error))
            })
            .collect()
    };
    let n = flow.dim();
    let mut header = labels("entry_x", n);
    header.extend(labels("exit_x", n));
    header.extend(["value".to_string(), "error".to_string()]);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((a, b, v, e)) => {
                let mut row = nums(&a);
                row.extend(nums(&b));
                row.extend(nums(&[v, e]));
                rows.push(row);
            }
            Err(e) => failures.push(json!({"ray": i, "launch": launches[i], "error": e})),
        }
    }
    let out = Output {
        cfg: &cfg,
        command: "transform",
    };
    let p = out.table("transform", &header, &rows, json!({"failures": failures}))?;
    eprintln!(
        "wrote {} ({} rays, {} failed)",
        p.display(),
        rows.len(),
        failures.len()
    );
    Ok(())
}

fn extract_cmd(
    cli: &Cli,
    inputs: &Inputs,
    base_point: &Option<String>,
    axis: &[String],
    samples: Option<usize>,
) -> Result<()> {
    let cfg = resolve(cli, inputs, None)?;
    let flow = cfg.flow()?;
    let f = cfg.field(&flow, inputs.field_name.as_deref())?;
    let p = parse_point(&axis[0])?;
    let q = parse_point(&axis[1])?;
    let band = 1e-6 * flow.domain.diameter();
    for pt in [&p, &q] {
        if flow.domain.rho(pt).abs() > band {
            bail!(
                "axis point {pt:?} is not on the boundary (rho = {:e})",
                flow.domain.rho(pt)
            );
        }
    }
    let axis_geo = flow.connect(&p, &q)?;
    let (t0, t1) = axis_geo.t_range();
    let mid = axis_geo.point_at(0.5 * (t0 + t1));
    let base = match base_point {
        Some(b) => parse_point(b)?,
        None => {
            let (x, v) = axis_geo.state(t0);
            let back = flow.shoot(&x, &v, Surface::Half, Direction::Backward)?;
            back.point_at(back.t_range().0)
        }
    };
    let geometry = PolarGeometry::aimed(&flow, &base, &mid)?;
    let chart = SemiGeodesicChart::build(&flow, Arc::new(geometry), &cfg.tube_options())?;
    let ex = extract(&chart, f.as_ref(), &cfg.extraction_options())?;
    let samples = samples.unwrap_or(cfg.grid.residual_samples);
    let pts = ex.residual_samples(f.as_ref(), samples)?;
    let report = ResidualReport::from_samples(&pts);

    let n = flow.dim();
    let mut header = vec!["line".to_string()];
    header.extend(labels("s", n - 1));
    header.push("r".into());
    header.extend(labels("x", n));
    header.extend(labels("v", n));
    header.extend(["h_nn", "h_ni", "h_tangential"].map(String::from));
    let mut rows = Vec::new();
    for s in &pts {
        let mut row = vec![s.line.to_string()];
        row.extend(nums(&chart.cross_section(s.line)));
        row.push(format!("{:e}", s.r));
        row.extend(nums(&s.x));
        match ex.v_original(s.line, s.r)? {
            Some(v) => row.extend(nums(&v)),
            None => row.extend(std::iter::repeat_n(String::new(), n)),
        }
        row.extend([format!("{:e}", s.h_nn), opt(s.h_ni), opt(s.h_tangential)]);
        rows.push(row);
    }
    let out = Output {
        cfg: &cfg,
        command: "extract",
    };
    let extra = json!({
        "residual": report,
        "lines": chart.line_count(),
        "spacing": chart.spacing,
        "r_range": [chart.r_start, chart.r_end],
        "axis": [p, q],
    });
    let path = out.table("extract", &header, &rows, extra)?;
    print_json(&serde_json::to_value(&report)?);
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn grid_rows(field: &GridField, prefix: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let grid = &field.grid;
    let n = grid.n;
    let mut header = labels("x", n);
    if field.rank == 2 {
        for i in 1..=n {
            for j in 1..=n {
                header.push(format!("{prefix}_{i}{j}"));
            }
        }
    } else {
        header.extend(labels(&format!("{prefix}_"), field.nc()));
    }
    let rows = (0..grid.node_count())
        .filter(|&i| grid.mask[i])
        .map(|i| {
            let mut row = nums(&grid.point(i));
            row.extend(nums(field.at(i)));
            row
        })
        .collect();
    (header, rows)
}

fn decompose_cmd(cli: &Cli, inputs: &Inputs, nodes: Option<usize>) -> Result<()> {
    let mut cfg = resolve(cli, inputs, None)?;
    if let Some(n) = nodes {
        cfg.grid.decomposition = n;
        cfg.grid.validate()?;
    }
    let flow = cfg.flow()?;
    let f = cfg.field(&flow, inputs.field_name.as_deref())?;
    if f.rank() != 2 {
        bail!("decompose takes a rank-2 field");
    }
    let grid = Arc::new(Grid::over_half(&flow.domain, cfg.grid.decomposition));
    let op = assemble_operator(flow.metric.clone(), grid)?;
    let fstag = op.sample(f.as_ref())?;
    let dec = decompose(&op, &fstag, &cfg.decompose_options())?;
    let fs = op.tensor_on_cells(&dec.fs);
    let v = op.potential_on_nodes(&dec.v);
    let out = Output {
        cfg: &cfg,
        command: "decompose",
    };
    let report = json!({
        "report": dec.report,
        "fs_max": dec.fs.max_abs(),
        "f_max": fstag.max_abs(),
        "v_max": dec.v_max(),
        "nodes": cfg.grid.decomposition,
    });
    let (h, rows) = grid_rows(&fs, "fs");
    let a = out.table("solenoidal", &h, &rows, report.clone())?;
    let (h, rows) = grid_rows(&v, "v");
    let b = out.table("potential", &h, &rows, report.clone())?;
    out.json("decompose", &out.meta(report))?;
    print_json(&serde_json::to_value(&dec.report)?);
    eprintln!("wrote {} and {}", a.display(), b.display());
    Ok(())
}

/// Exit status 2: the pipeline ran and the hypothesis or certificate failed.
fn support_verify_cmd(
    cli: &Cli,
    inputs: &Inputs,
    body: &Option<PathBuf>,
    epsilon: Option<f64>,
) -> Result<ExitCode> {
    let cfg = resolve(cli, inputs, body.as_deref())?;
    let flow = cfg.flow()?;
    let f = cfg.field(&flow, inputs.field_name.as_deref())?;
    let body = cfg
        .body
        .as_ref()
        .context("give --convex-body or a [body] section")?
        .build()?;
    let mut opts = cfg.verify_options();
    if let Some(e) = epsilon {
        if !(e > 0.0 && e < std::f64::consts::FRAC_PI_2) {
            bail!("--epsilon must lie in (0, pi/2)");
        }
        opts.sweep.epsilon = e;
    }
    let out = Output {
        cfg: &cfg,
        command: "support-verify",
    };
    let result = match verify_support_theorem(&flow, f.as_ref(), body.as_ref(), &opts) {
        Ok(r) => r,
        Err(e @ (Error::HypothesisViolated { .. } | Error::NotConvex { .. })) => {
            let detail = match &e {
                Error::HypothesisViolated { value, entry, exit } => {
                    json!({"kind": "hypothesis_violated", "value": value, "entry": entry, "exit": exit})
                }
                Error::NotConvex { a, b, point } => {
                    json!({"kind": "not_convex", "a": a, "b": b, "point": point})
                }
                _ => unreachable!(),
            };
            let body =
                out.meta(json!({"passed": false, "failure": detail, "message": e.to_string()}));
            let p = out.json("certificate", &body)?;
            print_json(&body["failure"]);
            eprintln!("{e}\nwrote {}", p.display());
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };
    let cert = &result.certificate;
    let n = flow.dim();
    let mut header = labels("x", n);
    header.extend(["class", "cones", "spread"].map(String::from));
    header.extend(labels("v", n));
    let rows: Vec<Vec<String>> = result
        .points
        .iter()
        .map(|p| {
            let mut row = nums(&p.x);
            let class = serde_json::to_value(p.class)
                .ok()
                .and_then(|v| v.as_str().map(String::from));
            row.push(class.unwrap_or_default());
            row.push(p.cones.to_string());
            row.push(format!("{:e}", p.spread));
            match &p.v {
                Some(v) => row.extend(nums(v)),
                None => row.extend(std::iter::repeat_n(String::new(), n)),
            }
            row
        })
        .collect();
    let extra = json!({"certificate": cert, "epsilon": opts.sweep.epsilon});
    let csv = out.table("stitched", &header, &rows, extra)?;
    let body = out.meta(
        serde_json::to_value(cert)?
            .as_object()
            .cloned()
            .map(Value::Object)
            .unwrap_or_default(),
    );
    let p = out.json("certificate", &body)?;
    print_json(&serde_json::to_value(cert)?);
    eprintln!("wrote {} and {}", p.display(), csv.display());
    Ok(if cert.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn run(cli: &Cli) -> Result<ExitCode> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::CheckSimple { metric } => check_simple_cmd(cli, metric)?,
        Command::Transform { inputs, rays } => transform_cmd(cli, inputs, rays)?,
        Command::Extract {
            inputs,
            base_point,
            axis,
            samples,
        } => extract_cmd(cli, inputs, base_point, axis, *samples)?,
        Command::Decompose { inputs, grid } => decompose_cmd(cli, inputs, *grid)?,
        Command::SupportVerify {
            inputs,
            convex_body,
            epsilon,
        } => return support_verify_cmd(cli, inputs, convex_body, *epsilon),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
