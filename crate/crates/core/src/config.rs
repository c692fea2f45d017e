//! Experiment files: one TOML document with sections for the metric, the
//! domain, the fields, the convex body, rays, tolerances, grid sizes and
//! outputs. Each section can also live in a file of its own, either under
//! its section header or at the top level.
//!
//! ```toml
//! [metric]
//! kind = "poincare"
//!
//! [domain]
//! kind = "disk"
//! radius = 0.5
//!
//! [[field]]
//! name = "f"
//! form = "potential"
//! components = ["x1*x2*(0.25 - x1^2 - x2^2)^3", "0"]
//!
//! [body]
//! kind = "ball"
//! radius = 0.2
//!
//! [tolerances]
//! quadrature = 1e-11
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart::TubeOptions;
use crate::decomposition::DecomposeOptions;
use crate::domain::{DefiningFunction, Disk, DomainSpec, ExpressionDomain, Slab, Surface};
use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::extraction::ExtractionOptions;
use crate::field::{Combination, ExprField, SymDerivative, TensorField};
use crate::geodesic::Flow;
use crate::metric::{metric_registry, Metric};
use crate::ode::OdeOptions;
use crate::registry::Params;
use crate::support::{body_registry, ConvexBody, SweepOptions, VerifyOptions};

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn read(path: &Path) -> Result<toml::Table> {
    let text =
        std::fs::read_to_string(path).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| cfg(format!("{}: {e}", path.display())))
}

/// The `section` table of a document, or the whole document when it has no
/// such section.
fn section_or_root(doc: toml::Table, section: &str) -> Result<toml::Table> {
    match doc.get(section) {
        Some(toml::Value::Table(t)) => Ok(t.clone()),
        Some(_) => Err(cfg(format!("`{section}` must be a table"))),
        None => Ok(doc),
    }
}

fn take_kind(t: &toml::Table, what: &str) -> Result<(String, Params)> {
    let kind = t
        .get("kind")
        .and_then(|v| v.as_str())
        .ok_or_else(|| cfg(format!("{what} needs `kind`")))?
        .to_string();
    let mut rest = t.clone();
    rest.remove("kind");
    Ok((kind, Params(rest)))
}

fn strings(v: &toml::Value) -> Option<Vec<String>> {
    v.as_array()?
        .iter()
        .map(|s| s.as_str().map(str::to_string))
        .collect()
}

/// Metric by registry name plus its parameters (`dimension`, `g`, `dg`, ...).
#[derive(Debug, Clone)]
pub struct MetricSpec {
    pub kind: String,
    pub params: Params,
}

impl MetricSpec {
    pub fn from_table(t: &toml::Table) -> Result<Self> {
        let (kind, params) = take_kind(t, "metric")?;
        Ok(MetricSpec { kind, params })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(&section_or_root(read(path)?, "metric")?)
    }

    pub fn named(kind: &str) -> Self {
        MetricSpec {
            kind: kind.to_string(),
            params: Params::new(),
        }
    }

    pub fn dim(&self) -> usize {
        if let Some(g) = self.params.get("g").and_then(|v| v.as_array()) {
            return self.params.usize_or("dimension", g.len());
        }
        self.params.usize_or("dimension", 2)
    }

    pub fn build(&self) -> Result<Arc<dyn Metric>> {
        let m = metric_registry().build(&self.kind, &self.params)?;
        if m.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: m.dim(),
            });
        }
        Ok(m)
    }

    fn expressions(&self, out: &mut Vec<Labeled>) {
        let n = self.dim();
        if let Some(g) = self.params.get("g").and_then(|v| v.as_array()) {
            for (i, row) in g.iter().enumerate() {
                for (j, s) in strings(row).unwrap_or_default().into_iter().enumerate() {
                    out.push(Labeled::new(
                        format!("metric.g[{}][{}]", i + 1, j + 1),
                        s,
                        n,
                    ));
                }
            }
        }
        if let Some(dg) = self.params.get("dg").and_then(|v| v.as_array()) {
            for (i, plane) in dg.iter().enumerate() {
                for (j, row) in plane.as_array().into_iter().flatten().enumerate() {
                    for (k, s) in strings(row).unwrap_or_default().into_iter().enumerate() {
                        out.push(Labeled::new(
                            format!("metric.dg[{}][{}][{}]", i + 1, j + 1, k + 1),
                            s,
                            n,
                        ));
                    }
                }
            }
        }
    }
}

/// A metric file: `[metric]` with an optional `[domain]`, or bare metric
/// keys at the top level.
pub fn load_metric_file(path: &Path) -> Result<(MetricSpec, Option<DomainConfig>)> {
    let doc = read(path)?;
    match (doc.get("metric"), doc.get("domain")) {
        (Some(toml::Value::Table(m)), d) => {
            let domain = match d {
                Some(toml::Value::Table(d)) => Some(DomainConfig::from_table(d)?),
                Some(_) => return Err(cfg("`domain` must be a table")),
                None => None,
            };
            Ok((MetricSpec::from_table(m)?, domain))
        }
        (Some(_), _) => Err(cfg("`metric` must be a table")),
        (None, _) => Ok((MetricSpec::from_table(&doc)?, None)),
    }
}

/// The chart domain `M` and its extension margin.
#[derive(Debug, Clone)]
pub enum DomainConfig {
    Disk {
        center: Option<Vec<f64>>,
        radius: f64,
        margin: Option<f64>,
    },
    Slab {
        lo: f64,
        hi: f64,
        margin: Option<f64>,
    },
    Expression {
        rho: String,
        center: Option<Vec<f64>>,
        margin: Option<f64>,
    },
}

impl DomainConfig {
    pub fn from_table(t: &toml::Table) -> Result<Self> {
        let (kind, p) = take_kind(t, "domain")?;
        let margin = p.f64("margin");
        let need = |k: &str| {
            p.f64(k)
                .ok_or_else(|| cfg(format!("{kind} domain needs `{k}`")))
        };
        Ok(match kind.as_str() {
            "disk" => DomainConfig::Disk {
                center: p.vec_f64("center"),
                radius: need("radius")?,
                margin,
            },
            "slab" => DomainConfig::Slab {
                lo: need("lo")?,
                hi: need("hi")?,
                margin,
            },
            "expression" => DomainConfig::Expression {
                rho: p
                    .str("rho")
                    .ok_or_else(|| cfg("expression domain needs `rho`"))?
                    .to_string(),
                center: p.vec_f64("center"),
                margin,
            },
            other => {
                return Err(cfg(format!(
                    "unknown domain `{other}` (known: disk, expression, slab)"
                )))
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(&section_or_root(read(path)?, "domain")?)
    }

    pub fn disk(radius: f64) -> Self {
        DomainConfig::Disk {
            center: None,
            radius,
            margin: None,
        }
    }

    pub fn build(&self, n: usize) -> Result<DomainSpec> {
        let (defining, margin): (Arc<dyn DefiningFunction>, _) = match self {
            DomainConfig::Disk {
                center,
                radius,
                margin,
            } => {
                if *radius <= 0.0 {
                    return Err(cfg("disk radius must be positive"));
                }
                let center = center.clone().unwrap_or_else(|| vec![0.0; n]);
                if center.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: center.len(),
                    });
                }
                (
                    Arc::new(Disk {
                        center,
                        radius: *radius,
                    }),
                    *margin,
                )
            }
            DomainConfig::Slab { lo, hi, margin } => {
                if hi <= lo {
                    return Err(cfg("slab needs lo < hi"));
                }
                (
                    Arc::new(Slab {
                        n,
                        lo: *lo,
                        hi: *hi,
                    }),
                    *margin,
                )
            }
            DomainConfig::Expression {
                rho,
                center,
                margin,
            } => (
                Arc::new(ExpressionDomain::parse(n, rho, center.clone())?),
                *margin,
            ),
        };
        let d = DomainSpec::new(defining);
        Ok(match margin {
            Some(m) if m <= 0.0 => return Err(cfg("domain margin must be positive")),
            Some(m) => d.with_margin(m),
            None => d,
        })
    }

    fn expressions(&self, n: usize, out: &mut Vec<Labeled>) {
        if let DomainConfig::Expression { rho, .. } = self {
            out.push(Labeled::new("domain.rho".into(), rho.clone(), n));
        }
    }
}

/// `tensor`: the components are the field itself. `potential`: they are a
/// covector `v` and the field is its symmetrized covariant derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldForm {
    Tensor,
    Potential,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSpec {
    #[serde(default = "default_field_name")]
    pub name: String,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_form")]
    pub form: FieldForm,
    pub components: Vec<String>,
    /// Multiply by the indicator of `M` so the field vanishes outside it.
    #[serde(default = "default_true")]
    pub extend_by_zero: bool,
    /// Components of a field of the final rank added to the result.
    #[serde(default)]
    pub plus: Vec<String>,
}

fn default_field_name() -> String {
    "f".into()
}
fn default_rank() -> usize {
    2
}
fn default_form() -> FieldForm {
    FieldForm::Tensor
}
fn default_true() -> bool {
    true
}

impl FieldSpec {
    pub fn from_table(t: &toml::Table) -> Result<Self> {
        toml::Value::Table(t.clone())
            .try_into()
            .map_err(|e| cfg(format!("field: {e}")))
    }

    /// Every field in a file: `[[field]]` entries, a single `[field]`, or a
    /// top-level spec.
    pub fn load_all(path: &Path) -> Result<Vec<Self>> {
        let doc = read(path)?;
        fields_of(&doc)
    }

    /// Rank of the field handed to the transform.
    pub fn tensor_rank(&self) -> usize {
        match self.form {
            FieldForm::Tensor => self.rank,
            FieldForm::Potential => self.rank + 1,
        }
    }

    pub fn build(
        &self,
        metric: &Arc<dyn Metric>,
        domain: &DomainSpec,
    ) -> Result<Arc<dyn TensorField>> {
        let n = metric.dim();
        let base = ExprField::parse(self.rank, n, &self.components)?;
        let base = if self.extend_by_zero {
            base.extended_by_zero(domain.defining.clone())
        } else {
            base
        };
        let main: Arc<dyn TensorField> = match self.form {
            FieldForm::Tensor => Arc::new(base),
            FieldForm::Potential => {
                if self.rank != 1 {
                    return Err(cfg("potential fields take rank-1 components"));
                }
                Arc::new(SymDerivative {
                    metric: metric.clone(),
                    v: Arc::new(base),
                })
            }
        };
        if self.plus.is_empty() {
            return Ok(main);
        }
        let extra = ExprField::parse(self.tensor_rank(), n, &self.plus)?;
        let extra: Arc<dyn TensorField> = if self.extend_by_zero {
            Arc::new(extra.extended_by_zero(domain.defining.clone()))
        } else {
            Arc::new(extra)
        };
        Ok(Arc::new(Combination::new(vec![(1.0, main), (1.0, extra)])?))
    }

    fn expressions(&self, n: usize, out: &mut Vec<Labeled>) {
        for (c, s) in self.components.iter().enumerate() {
            out.push(Labeled::new(
                format!("field.{}[{}]", self.name, c + 1),
                s.clone(),
                n,
            ));
        }
        for (c, s) in self.plus.iter().enumerate() {
            out.push(Labeled::new(
                format!("field.{}.plus[{}]", self.name, c + 1),
                s.clone(),
                n,
            ));
        }
    }
}

fn fields_of(doc: &toml::Table) -> Result<Vec<FieldSpec>> {
    match doc.get("field") {
        Some(toml::Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_table()
                    .ok_or_else(|| cfg("`[[field]]` entries must be tables"))
                    .and_then(FieldSpec::from_table)
            })
            .collect(),
        Some(toml::Value::Table(t)) => Ok(vec![FieldSpec::from_table(t)?]),
        Some(_) => Err(cfg("`field` must be a table or an array of tables")),
        None if doc.contains_key("components") => Ok(vec![FieldSpec::from_table(doc)?]),
        None => Ok(Vec::new()),
    }
}

/// Convex body by registry name (`ball`, `annulus`, `expression`).
#[derive(Debug, Clone)]
pub struct BodySpec {
    pub kind: String,
    pub params: Params,
}

impl BodySpec {
    pub fn from_table(t: &toml::Table) -> Result<Self> {
        let (kind, params) = take_kind(t, "body")?;
        Ok(BodySpec { kind, params })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(&section_or_root(read(path)?, "body")?)
    }

    pub fn build(&self) -> Result<Arc<dyn ConvexBody>> {
        body_registry().build(&self.kind, &self.params)
    }

    fn expressions(&self, n: usize, out: &mut Vec<Labeled>) {
        for key in ["indicator", "distance"] {
            if let Some(s) = self.params.str(key) {
                out.push(Labeled::new(format!("body.{key}"), s.to_string(), n));
            }
        }
    }
}

/// Rays, listed (`x1..xn, xi1..xin` per row in a CSV file) or generated.
#[derive(Debug, Clone, PartialEq)]
pub enum RaySpec {
    List(Vec<(Vec<f64>, Vec<f64>)>),
    /// Uniform interior points and directions.
    Random {
        count: usize,
    },
    /// `count` launch points on `∂M`, `directions` inward directions each.
    Fan {
        count: usize,
        directions: usize,
    },
}

impl RaySpec {
    pub fn from_table(t: &toml::Table) -> Result<Self> {
        let p = Params(t.clone());
        match p.str("kind").unwrap_or("random") {
            "random" => Ok(RaySpec::Random {
                count: p.usize_or("count", 100),
            }),
            "fan" => Ok(RaySpec::Fan {
                count: p.usize_or("count", 16),
                directions: p.usize_or("directions", 9),
            }),
            "list" => {
                let rows = t
                    .get("rays")
                    .and_then(|v| v.as_array())
                    .ok_or_else(|| cfg("ray list needs `rays = [[x..., xi...], ...]`"))?;
                let mut out = Vec::new();
                for row in rows {
                    let v: Vec<f64> =
                        Params(toml::Table::from_iter([("r".to_string(), row.clone())]))
                            .vec_f64("r")
                            .ok_or_else(|| cfg("ray rows must be numeric arrays"))?;
                    out.push(split_ray(&v)?);
                }
                Ok(RaySpec::List(out))
            }
            other => Err(cfg(format!(
                "unknown ray generator `{other}` (known: fan, list, random)"
            ))),
        }
    }

    /// A CSV file of rays, or a TOML generator spec.
    pub fn load(path: &Path) -> Result<Self> {
        let is_csv = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            let text = std::fs::read_to_string(path)
                .map_err(|e| cfg(format!("{}: {e}", path.display())))?;
            return Self::parse_csv(&text);
        }
        Self::from_table(&section_or_root(read(path)?, "rays")?)
    }

    /// Inline generator: `random:100` or `fan:16x9`.
    pub fn parse_inline(s: &str) -> Option<Self> {
        let (kind, arg) = s.split_once(':')?;
        match kind {
            "random" => Some(RaySpec::Random {
                count: arg.parse().ok()?,
            }),
            "fan" => {
                let (a, b) = arg.split_once('x')?;
                Some(RaySpec::Fan {
                    count: a.parse().ok()?,
                    directions: b.parse().ok()?,
                })
            }
            _ => None,
        }
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut out = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| cfg(format!("rays: {e}")))?;
            let parsed: std::result::Result<Vec<f64>, _> =
                rec.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(v) => out.push(split_ray(&v)?),
                // a header row
                Err(_) if i == 0 => continue,
                Err(e) => return Err(cfg(format!("rays record {}: {e}", i + 1))),
            }
        }
        Ok(RaySpec::List(out))
    }

    /// Launch states `(x, ξ)`.
    pub fn generate(&self, flow: &Flow, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let n = flow.dim();
        match self {
            RaySpec::List(rays) => {
                for (x, xi) in rays {
                    if x.len() != n || xi.len() != n {
                        return Err(Error::Dimension {
                            expected: n,
                            got: x.len(),
                        });
                    }
                }
                Ok(rays.clone())
            }
            RaySpec::Random { count } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let c = flow.domain.defining.center();
                let r = 0.5 * flow.domain.diameter();
                let mut out = Vec::with_capacity(*count);
                while out.len() < *count {
                    let x: Vec<f64> = c.iter().map(|c| c + rng.gen_range(-r..r)).collect();
                    if flow.domain.rho(&x) <= 0.0 {
                        continue;
                    }
                    let mut xi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let norm = xi.iter().map(|a| a * a).sum::<f64>().sqrt();
                    if norm < 1e-3 {
                        continue;
                    }
                    xi.iter_mut().for_each(|a| *a /= norm);
                    out.push((x, xi));
                }
                Ok(out)
            }
            RaySpec::Fan { count, directions } => {
                let mut out = Vec::new();
                for x in crate::simplicity::boundary_sample(flow, *count) {
                    let (inward, tangents) = crate::simplicity::inward_frame(flow, &x)?;
                    for k in 0..*directions {
                        let th = -0.5 * std::f64::consts::PI
                            + std::f64::consts::PI * (k as f64 + 0.5) / *directions as f64;
                        let xi = (0..n)
                            .map(|i| th.cos() * inward[i] + th.sin() * tangents[0][i])
                            .collect();
                        out.push((x.clone(), xi));
                    }
                }
                Ok(out)
            }
        }
    }
}

fn split_ray(v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if v.len() < 4 || v.len() % 2 != 0 {
        return Err(cfg(format!("a ray row needs 2n numbers, got {}", v.len())));
    }
    let n = v.len() / 2;
    Ok((v[..n].to_vec(), v[n..].to_vec()))
}

/// Every tolerance a run uses. Overridable by name from the command line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub geodesic_rtol: f64,
    pub geodesic_atol: f64,
    /// Integrators of the extraction systems.
    pub extraction_rtol: f64,
    pub extraction_atol: f64,
    /// Adaptive quadrature along geodesics.
    pub quadrature: f64,
    /// Maximal `|If|` accepted on rays avoiding the body.
    pub hypothesis: f64,
    /// Per-cone residual `h_nn`, `h_ni` and exit mismatch.
    pub extraction_residual: f64,
    pub tangential_residual: f64,
    /// Agreement of overlapping cones and stitched values.
    pub overlap: f64,
    /// Relative residual of the decomposition solve.
    pub decomposition: f64,
    /// Symbolic vs finite-difference derivatives.
    pub derivative_check: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            geodesic_rtol: 1e-10,
            geodesic_atol: 1e-12,
            extraction_rtol: 1e-11,
            extraction_atol: 1e-13,
            quadrature: 1e-11,
            hypothesis: 1e-6,
            extraction_residual: 1e-5,
            tangential_residual: 1e-4,
            overlap: 1e-4,
            decomposition: 1e-10,
            derivative_check: 1e-7,
        }
    }
}

impl Tolerances {
    fn table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("tolerances serialize")
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in self.table() {
            let v = v.as_float().unwrap_or(f64::NAN);
            if !(v > 0.0 && v.is_finite()) {
                return Err(cfg(format!("tolerance `{k}` must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Applies `key=value`; several may be joined by commas.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let mut t = self.table();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, val) = item
                .split_once('=')
                .ok_or_else(|| cfg(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            if !t.contains_key(key) {
                let known: Vec<_> = t.keys().cloned().collect();
                return Err(cfg(format!(
                    "unknown tolerance `{key}` (known: {})",
                    known.join(", ")
                )));
            }
            let val: f64 = val
                .trim()
                .parse()
                .map_err(|_| cfg(format!("override `{item}`: not a number")))?;
            t.insert(key.to_string(), toml::Value::Float(val));
        }
        let next: Tolerances = toml::Value::Table(t)
            .try_into()
            .map_err(|e| cfg(format!("tolerances: {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridSizes {
    /// Lines per half-width of an extraction tube.
    pub tube_lines: usize,
    /// Half-width of an extraction tube.
    pub tube_width: f64,
    /// Nodes per axis of the decomposition grid.
    pub decomposition: usize,
    /// Points per axis of the support evaluation grid.
    pub evaluation: usize,
    /// Boundary angles and launches per angle for the chord scan.
    pub chord_angles: usize,
    pub chord_launches: usize,
    /// Sample parameters per line for residual reports.
    pub residual_samples: usize,
}

impl Default for GridSizes {
    fn default() -> Self {
        GridSizes {
            tube_lines: 20,
            tube_width: 0.15,
            decomposition: 81,
            evaluation: 41,
            chord_angles: 128,
            chord_launches: 64,
            residual_samples: 12,
        }
    }
}

impl GridSizes {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("tube_lines", self.tube_lines),
            ("decomposition", self.decomposition),
            ("evaluation", self.evaluation),
            ("chord_angles", self.chord_angles),
            ("chord_launches", self.chord_launches),
            ("residual_samples", self.residual_samples),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(cfg(format!("grid size `{k}` must be positive")));
            }
        }
        if self.decomposition < 5 {
            return Err(cfg("decomposition grid needs at least 5 nodes per axis"));
        }
        if !(self.tube_width > 0.0) {
            return Err(cfg("tube_width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub dir: PathBuf,
    /// File name stem for every output of a run.
    pub prefix: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            dir: PathBuf::from("out"),
            prefix: "run".into(),
        }
    }
}

impl OutputPaths {
    pub fn file(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}_{suffix}", self.prefix))
    }
}

/// An expression string with its place in the config.
#[derive(Debug, Clone)]
pub struct Labeled {
    pub label: String,
    pub text: String,
    pub dim: usize,
}

impl Labeled {
    fn new(label: String, text: String, dim: usize) -> Self {
        Labeled { label, text, dim }
    }

    pub fn parse(&self) -> Result<Expr> {
        expr::parse(&self.text, self.dim).map_err(|e| cfg(format!("{}: {e}", self.label)))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub metric: MetricSpec,
    pub domain: DomainConfig,
    pub fields: Vec<FieldSpec>,
    pub body: Option<BodySpec>,
    pub rays: Option<RaySpec>,
    pub tolerances: Tolerances,
    pub grid: GridSizes,
    pub output: OutputPaths,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(metric: MetricSpec, domain: DomainConfig) -> Self {
        ExperimentConfig {
            metric,
            domain,
            fields: Vec::new(),
            body: None,
            rays: None,
            tolerances: Tolerances::default(),
            grid: GridSizes::default(),
            output: OutputPaths::default(),
            seed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Self::from_table(&read(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e| cfg(format!("{e}")))?;
        let c = Self::from_table(&doc)?;
        c.validate()?;
        Ok(c)
    }

    fn from_table(doc: &toml::Table) -> Result<Self> {
        const KNOWN: [&str; 9] = [
            "metric",
            "domain",
            "field",
            "body",
            "rays",
            "tolerances",
            "grid",
            "output",
            "seed",
        ];
        if let Some(k) = doc.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(cfg(format!("unknown section `{k}`")));
        }
        let table = |k: &str| -> Result<Option<&toml::Table>> {
            match doc.get(k) {
                None => Ok(None),
                Some(toml::Value::Table(t)) => Ok(Some(t)),
                Some(_) => Err(cfg(format!("`{k}` must be a table"))),
            }
        };
        let metric =
            MetricSpec::from_table(table("metric")?.ok_or_else(|| cfg("missing [metric]"))?)?;
        let domain =
            DomainConfig::from_table(table("domain")?.ok_or_else(|| cfg("missing [domain]"))?)?;
        let typed = |k: &str| -> Result<Option<toml::Value>> {
            Ok(table(k)?.map(|t| toml::Value::Table(t.clone())))
        };
        let seed = match doc.get("seed") {
            None => 0,
            Some(toml::Value::Integer(s)) if *s >= 0 => *s as u64,
            Some(_) => return Err(cfg("`seed` must be a nonnegative integer")),
        };
        Ok(ExperimentConfig {
            metric,
            domain,
            fields: fields_of(doc)?,
            body: table("body")?.map(BodySpec::from_table).transpose()?,
            rays: table("rays")?.map(RaySpec::from_table).transpose()?,
            tolerances: typed("tolerances")?
                .map(|v| v.try_into().map_err(|e| cfg(format!("tolerances: {e}"))))
                .transpose()?
                .unwrap_or_default(),
            grid: typed("grid")?
                .map(|v| v.try_into().map_err(|e| cfg(format!("grid: {e}"))))
                .transpose()?
                .unwrap_or_default(),
            output: typed("output")?
                .map(|v| v.try_into().map_err(|e| cfg(format!("output: {e}"))))
                .transpose()?
                .unwrap_or_default(),
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    /// Builds everything once, reporting the first inconsistency.
    pub fn validate(&self) -> Result<()> {
        for e in self.expressions() {
            e.parse()?;
        }
        let metric = self.metric.build()?;
        let domain = self.domain.build(self.dim())?;
        if domain.dim() != metric.dim() {
            return Err(Error::Dimension {
                expected: metric.dim(),
                got: domain.dim(),
            });
        }
        let mut names = std::collections::BTreeSet::new();
        for f in &self.fields {
            if !names.insert(f.name.as_str()) {
                return Err(cfg(format!("field `{}` defined twice", f.name)));
            }
            f.build(&metric, &domain)?;
        }
        if let Some(b) = &self.body {
            let body = b.build()?;
            if body.dim() != metric.dim() {
                return Err(Error::Dimension {
                    expected: metric.dim(),
                    got: body.dim(),
                });
            }
            if !domain.inside(&body.interior_point(), Surface::Boundary) {
                return Err(cfg("convex body lies outside the domain"));
            }
        }
        self.tolerances.validate()?;
        self.grid.validate()
    }

    pub fn flow(&self) -> Result<Flow> {
        let metric = self.metric.build()?;
        let domain = self.domain.build(metric.dim())?;
        let flow = Flow::new(metric, domain);
        let t = &self.tolerances;
        let ode = flow.ode.with_tol(t.geodesic_rtol, t.geodesic_atol);
        Ok(flow.with_ode(ode))
    }

    pub fn extraction_options(&self) -> ExtractionOptions {
        let t = &self.tolerances;
        ExtractionOptions {
            ode: OdeOptions::default().with_tol(t.extraction_rtol, t.extraction_atol),
            ..Default::default()
        }
    }

    pub fn tube_options(&self) -> TubeOptions {
        TubeOptions {
            m: self.grid.tube_lines,
            eps_tube: self.grid.tube_width,
        }
    }

    pub fn decompose_options(&self) -> DecomposeOptions {
        DecomposeOptions {
            tol: self.tolerances.decomposition,
            ..Default::default()
        }
    }

    pub fn verify_options(&self) -> VerifyOptions {
        let t = &self.tolerances;
        let d = VerifyOptions::default();
        VerifyOptions {
            chord_grid: (self.grid.chord_angles, self.grid.chord_launches),
            transform_tol: t.hypothesis,
            quadrature_tol: t.quadrature,
            eval_grid: self.grid.evaluation,
            sweep: SweepOptions {
                residual_tol: t.extraction_residual,
                tangential_tol: t.tangential_residual,
                overlap_tol: t.overlap,
                extraction: self.extraction_options(),
                residual_samples: self.grid.residual_samples,
                ..d.sweep
            },
            seed: self.seed,
            ..d
        }
    }

    /// The named field, or the first one when `name` is `None`.
    pub fn field(&self, flow: &Flow, name: Option<&str>) -> Result<Arc<dyn TensorField>> {
        let spec = match name {
            Some(n) => self.fields.iter().find(|f| f.name == n),
            None => self.fields.first(),
        }
        .ok_or_else(|| cfg(format!("no field `{}`", name.unwrap_or("<first>"))))?;
        spec.build(&flow.metric, &flow.domain)
    }

    /// Every expression string the config references.
    pub fn expressions(&self) -> Vec<Labeled> {
        let n = self.dim();
        let mut out = Vec::new();
        self.metric.expressions(&mut out);
        self.domain.expressions(n, &mut out);
        for f in &self.fields {
            f.expressions(n, &mut out);
        }
        if let Some(b) = &self.body {
            b.expressions(n, &mut out);
        }
        out
    }
}

/// Any shipped document, recognized by its keys.
#[derive(Debug, Clone)]
pub enum ConfigFile {
    /// Has `[metric]`; metric files with a `[domain]` are experiments
    /// without fields.
    Experiment(ExperimentConfig),
    Fields(Vec<FieldSpec>),
    Body(BodySpec),
    Rays(RaySpec),
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        {
            return Ok(ConfigFile::Rays(RaySpec::load(path)?));
        }
        let doc = read(path)?;
        if doc.contains_key("metric") {
            return Ok(ConfigFile::Experiment(ExperimentConfig::load(path)?));
        }
        if doc.contains_key("field") || doc.contains_key("components") {
            return Ok(ConfigFile::Fields(fields_of(&doc)?));
        }
        let t = section_or_root(doc.clone(), "body")?;
        if t.get("kind")
            .and_then(|k| k.as_str())
            .is_some_and(|k| body_registry().names().any(|n| n == k))
        {
            return Ok(ConfigFile::Body(BodySpec::from_table(&t)?));
        }
        Ok(ConfigFile::Rays(RaySpec::from_table(&section_or_root(
            doc, "rays",
        )?)?))
    }

    /// Expressions over the plane unless the file fixes the dimension.
    pub fn expressions(&self) -> Vec<Labeled> {
        let mut out = Vec::new();
        match self {
            ConfigFile::Experiment(c) => out = c.expressions(),
            ConfigFile::Fields(fs) => fs.iter().for_each(|f| f.expressions(2, &mut out)),
            ConfigFile::Body(b) => b.expressions(b.params.usize_or("dim", 2), &mut out),
            ConfigFile::Rays(_) => {}
        }
        out
    }

    pub fn domain(&self) -> Option<DomainSpec> {
        match self {
            ConfigFile::Experiment(c) => c.domain.build(c.dim()).ok(),
            _ => None,
        }
    }
}

/// Worst relative disagreement between symbolic partial derivatives and
/// central differences at `points`, skipping points where the expression or
/// its derivative is not finite. The scale floor keeps near-zero
/// derivatives from dominating.
pub fn derivative_check(e: &Expr, points: &[Vec<f64>]) -> f64 {
    let n = points.first().map_or(0, |p| p.len());
    let mut worst = 0.0f64;
    for k in 0..n {
        let d = e.differentiate(k);
        for x in points {
            let exact = match d.evaluate(x) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let h = 1e-4 * (1.0 + x[k].abs());
            let at = |t: f64| {
                let mut y = x.clone();
                y[k] = t;
                e.evaluate(&y)
            };
            // fourth-order central difference with one Richardson level
            let fd = |h: f64| -> Option<f64> {
                let (a, b, c, d) = (
                    at(x[k] + h).ok()?,
                    at(x[k] - h).ok()?,
                    at(x[k] + 2.0 * h).ok()?,
                    at(x[k] - 2.0 * h).ok()?,
                );
                Some((8.0 * (a - b) - (c - d)) / (12.0 * h))
            };
            let (Some(f1), Some(f2)) = (fd(h), fd(0.5 * h)) else {
                continue;
            };
            let approx = (16.0 * f2 - f1) / 15.0;
            let scale = exact.abs().max(approx.abs()).max(1.0);
            worst = worst.max((exact - approx).abs() / scale);
        }
    }
    worst
}

/// `count` seeded points of `M`, for derivative checks.
pub fn sample_points(domain: &DomainSpec, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = domain.defining.center();
    let r = 0.5 * domain.diameter();
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 1000 * count {
        tries += 1;
        let x: Vec<f64> = c.iter().map(|c| c + rng.gen_range(-r..r)).collect();
        if domain.rho(&x) > 0.02 * r {
            out.push(x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 7

[metric]
kind = "expression"
g = [["4/(1 - (x1^2 + x2^2))^2", "0"], ["0", "4/(1 - (x1^2 + x2^2))^2"]]
derivatives = "symbolic"

[domain]
kind = "disk"
radius = 0.5

[[field]]
name = "dv"
form = "potential"
rank = 1
components = ["x2*(0.25 - x1^2 - x2^2)^2", "x1*x2"]
plus = ["0", "0", "x1"]

[[field]]
name = "w"
components = ["x1^2", "x1*x2", "1"]

[body]
kind = "ball"
radius = 0.2

[tolerances]
quadrature = 1e-10

[grid]
decomposition = 41
"#;

    #[test]
    fn loads_and_validates_a_full_config() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.fields.len(), 2);
        assert_eq!(c.fields[0].tensor_rank(), 2);
        assert_eq!(c.tolerances.quadrature, 1e-10);
        assert_eq!(
            c.tolerances.geodesic_rtol,
            Tolerances::default().geodesic_rtol
        );
        assert_eq!(c.grid.decomposition, 41);
        assert_eq!(c.expressions().len(), 4 + 5 + 3);
        let flow = c.flow().unwrap();
        let f = c.field(&flow, Some("w")).unwrap();
        assert_eq!(f.rank(), 2);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let bad_tol = SAMPLE.replace("quadrature = 1e-10", "quadrature = -1.0");
        assert!(ExperimentConfig::parse(&bad_tol).is_err());
        let bad_key = SAMPLE.replace("quadrature = 1e-10", "quadrature_typo = 1e-10");
        assert!(ExperimentConfig::parse(&bad_key).is_err());
        let bad_expr = SAMPLE.replace("\"x1*x2\"]", "\"x3\"]");
        assert!(ExperimentConfig::parse(&bad_expr).is_err());
        let bad_dim = SAMPLE.replace("radius = 0.2", "radius = 0.2\ncenter = [0, 0, 0]");
        assert!(ExperimentConfig::parse(&bad_dim).is_err());
        let dup = SAMPLE.replace("name = \"w\"", "name = \"dv\"");
        assert!(ExperimentConfig::parse(&dup).is_err());
    }

    #[test]
    fn overrides_by_name() {
        let mut t = Tolerances::default();
        t.apply_override("hypothesis=1e-8, overlap=2e-4").unwrap();
        assert_eq!(t.hypothesis, 1e-8);
        assert_eq!(t.overlap, 2e-4);
        assert!(t.apply_override("nope=1").is_err());
        assert!(t.apply_override("overlap=0").is_err());
        assert!(t.apply_override("overlap").is_err());
    }

    #[test]
    fn rays_from_csv_and_generators() {
        let r = RaySpec::parse_csv("x1,x2,xi1,xi2\n0,0,1,0\n0.1,0.2,0,1\n").unwrap();
        assert_eq!(
            r,
            RaySpec::List(vec![
                (vec![0.0, 0.0], vec![1.0, 0.0]),
                (vec![0.1, 0.2], vec![0.0, 1.0])
            ])
        );
        assert!(RaySpec::parse_csv("0,0,1\n").is_err());
        assert_eq!(
            RaySpec::parse_inline("fan:4x3"),
            Some(RaySpec::Fan {
                count: 4,
                directions: 3
            })
        );
        let flow = Flow::new(
            Arc::new(crate::metric::Euclidean { n: 2 }),
            DomainSpec::disk(1.0),
        );
        assert_eq!(
            RaySpec::Fan {
                count: 4,
                directions: 3
            }
            .generate(&flow, 0)
            .unwrap()
            .len(),
            12
        );
        let a = RaySpec::Random { count: 5 }.generate(&flow, 3).unwrap();
        assert_eq!(a, RaySpec::Random { count: 5 }.generate(&flow, 3).unwrap());
    }
}
