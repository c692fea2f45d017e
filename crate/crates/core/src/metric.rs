//! Riemannian metrics on a single chart and their Christoffel symbols.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::registry::{Params, Registry};

/// A metric `g_ij(x)` on a chart domain in `R^n`.
pub trait Metric: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Raw components; no positive-definiteness check.
    fn components(&self, x: &[f64]) -> DMatrix<f64>;

    /// `∂_k g_ij`, one matrix per `k`. Defaults to fourth-order central
    /// differences with step [`Metric::fd_step`].
    fn derivatives(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        fd_derivatives(self, x, self.fd_step())
    }

    fn fd_step(&self) -> f64 {
        1e-4
    }

    fn name(&self) -> &str;
}

/// Fourth-order central differences of the metric components.
pub fn fd_derivatives<M: Metric + ?Sized>(metric: &M, x: &[f64], h: f64) -> Vec<DMatrix<f64>> {
    let n = metric.dim();
    let mut y = x.to_vec();
    (0..n)
        .map(|k| {
            let mut eval = |s: f64| {
                y[k] = x[k] + s * h;
                let g = metric.components(&y);
                y[k] = x[k];
                g
            };
            let (p1, m1, p2, m2) = (eval(1.0), eval(-1.0), eval(2.0), eval(-2.0));
            ((p1 - m1) * 8.0 - (p2 - m2)) / (12.0 * h)
        })
        .collect()
}

/// `g(x)`, checked symmetric positive definite.
pub fn metric_at(metric: &dyn Metric, x: &[f64]) -> Result<DMatrix<f64>> {
    let g = metric.components(x);
    if g.iter().any(|v| !v.is_finite()) || g.clone().cholesky().is_none() {
        return Err(Error::NonPositiveDefinite { point: x.to_vec() });
    }
    Ok(g)
}

/// Christoffel symbols of the second kind at a point.
#[derive(Debug, Clone)]
pub struct ChristoffelAt {
    pub point: Vec<f64>,
    n: usize,
    /// `Γ^k_ij` stored at `k*n*n + i*n + j`.
    gamma: Vec<f64>,
    pub inverse: DMatrix<f64>,
    pub metric: DMatrix<f64>,
}

impl ChristoffelAt {
    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma[(k * self.n + i) * self.n + j]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `Γ^k_ij a^i b^j` for each `k`.
    pub fn contract(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (k, o) in out.iter_mut().enumerate().take(n) {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += self.gamma[(k * n + i) * n + j] * a[i] * b[j];
                }
            }
            *o = s;
        }
    }
}

pub fn christoffel(metric: &dyn Metric, x: &[f64]) -> Result<ChristoffelAt> {
    let n = metric.dim();
    let g = metric_at(metric, x)?;
    let inverse = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NonPositiveDefinite { point: x.to_vec() })?;
    let dg = metric.derivatives(x);
    // first kind: Γ_lij = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
    let mut first = vec![0.0; n * n * n];
    for l in 0..n {
        for i in 0..n {
            for j in i..n {
                let v = 0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                first[(l * n + i) * n + j] = v;
                first[(l * n + j) * n + i] = v;
            }
        }
    }
    let mut gamma = vec![0.0; n * n * n];
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += inverse[(k, l)] * first[(l * n + i) * n + j];
                }
                gamma[(k * n + i) * n + j] = s;
                gamma[(k * n + j) * n + i] = s;
            }
        }
    }
    Ok(ChristoffelAt {
        point: x.to_vec(),
        n,
        gamma,
        inverse,
        metric: g,
    })
}

/// `g(a, b)` at a point.
pub fn inner(g: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += g[(i, j)] * a[i] * b[j];
        }
    }
    s
}

/// Flat metric.
#[derive(Debug, Clone)]
pub struct Euclidean {
    pub n: usize,
}

impl Metric for Euclidean {
    fn dim(&self) -> usize {
        self.n
    }

    fn components(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }

    fn derivatives(&self, _x: &[f64]) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(self.n, self.n); self.n]
    }

    fn name(&self) -> &str {
        "euclidean"
    }
}

/// `g = 4 δ / (1 + κ |x|²)²`, of constant sectional curvature `κ`: the
/// Poincaré ball for `κ = -1` and the stereographic round sphere for `κ = 1`.
#[derive(Debug, Clone)]
pub struct ConstantCurvature {
    pub n: usize,
    pub kappa: f64,
}

impl ConstantCurvature {
    pub fn poincare(n: usize) -> Self {
        ConstantCurvature { n, kappa: -1.0 }
    }

    pub fn sphere(n: usize) -> Self {
        ConstantCurvature { n, kappa: 1.0 }
    }

    pub fn factor(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        4.0 / (1.0 + self.kappa * r2).powi(2)
    }
}

impl Metric for ConstantCurvature {
    fn dim(&self) -> usize {
        self.n
    }

    fn components(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n) * self.factor(x)
    }

    fn derivatives(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let c = -16.0 * self.kappa / (1.0 + self.kappa * r2).powi(3);
        (0..self.n)
            .map(|k| DMatrix::identity(self.n, self.n) * (c * x[k]))
            .collect()
    }

    fn name(&self) -> &str {
        if self.kappa < 0.0 {
            "poincare"
        } else {
            "sphere"
        }
    }
}

/// How an [`ExpressionMetric`] obtains `∂_k g_ij`.
#[derive(Debug, Clone)]
pub enum DerivativeOracle {
    /// Expressions supplied in the metric file, `dg[i][j][k]`.
    Supplied(Vec<Vec<Vec<Expr>>>),
    /// Symbolic derivatives of the component expressions.
    Symbolic(Vec<Vec<Vec<Expr>>>),
    FiniteDifference {
        step: f64,
    },
}

/// Metric given by closed-form component expressions over `x1..xn`.
#[derive(Debug, Clone)]
pub struct ExpressionMetric {
    n: usize,
    g: Vec<Vec<Expr>>,
    oracle: DerivativeOracle,
}

impl ExpressionMetric {
    /// Builds a metric from `g[i][j]` expression strings. Symmetry is checked
    /// on the parsed trees.
    pub fn parse(n: usize, g: &[Vec<String>]) -> Result<Self> {
        if g.len() != n || g.iter().any(|row| row.len() != n) {
            return Err(Error::Config(format!("metric must be {n}x{n}")));
        }
        let parsed: Vec<Vec<Expr>> = g
            .iter()
            .map(|row| row.iter().map(|s| expr::parse(s, n)).collect())
            .collect::<std::result::Result<_, _>>()?;
        for i in 0..n {
            for j in 0..i {
                if parsed[i][j] != parsed[j][i] {
                    return Err(Error::Config(format!(
                        "metric is not symmetric: g[{i}][{j}] != g[{j}][{i}]"
                    )));
                }
            }
        }
        Ok(ExpressionMetric {
            n,
            g: parsed,
            oracle: DerivativeOracle::FiniteDifference { step: 1e-4 },
        })
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        self.oracle = DerivativeOracle::FiniteDifference { step };
        self
    }

    pub fn with_symbolic_derivatives(mut self) -> Self {
        let d = (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| (0..self.n).map(|k| self.g[i][j].differentiate(k)).collect())
                    .collect()
            })
            .collect();
        self.oracle = DerivativeOracle::Symbolic(d);
        self
    }

    pub fn with_supplied_derivatives(mut self, dg: &[Vec<Vec<String>>]) -> Result<Self> {
        let n = self.n;
        if dg.len() != n
            || dg
                .iter()
                .any(|r| r.len() != n || r.iter().any(|c| c.len() != n))
        {
            return Err(Error::Config(format!("dg must be {n}x{n}x{n}")));
        }
        let parsed = dg
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| c.iter().map(|s| expr::parse(s, n)).collect())
                    .collect()
            })
            .collect::<std::result::Result<_, _>>()?;
        self.oracle = DerivativeOracle::Supplied(parsed);
        Ok(self)
    }

    pub fn oracle(&self) -> &DerivativeOracle {
        &self.oracle
    }

    pub fn expressions(&self) -> &[Vec<Expr>] {
        &self.g
    }
}

impl Metric for ExpressionMetric {
    fn dim(&self) -> usize {
        self.n
    }

    fn components(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.g[i][j].eval(x);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn derivatives(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let n = self.n;
        match &self.oracle {
            DerivativeOracle::Supplied(d) | DerivativeOracle::Symbolic(d) => (0..n)
                .map(|k| {
                    let mut m = DMatrix::zeros(n, n);
                    for i in 0..n {
                        for j in i..n {
                            let v = d[i][j][k].eval(x);
                            m[(i, j)] = v;
                            m[(j, i)] = v;
                        }
                    }
                    m
                })
                .collect(),
            DerivativeOracle::FiniteDifference { step } => fd_derivatives(self, x, *step),
        }
    }

    fn fd_step(&self) -> f64 {
        match self.oracle {
            DerivativeOracle::FiniteDifference { step } => step,
            _ => 1e-4,
        }
    }

    fn name(&self) -> &str {
        "expression"
    }
}

fn dimension(p: &Params) -> usize {
    p.usize_or("dimension", 2)
}

fn string_matrix(v: &toml::Value) -> Option<Vec<Vec<String>>> {
    v.as_array()?
        .iter()
        .map(|row| {
            row.as_array()?
                .iter()
                .map(|s| s.as_str().map(str::to_string))
                .collect()
        })
        .collect()
}

fn string_cube(v: &toml::Value) -> Option<Vec<Vec<Vec<String>>>> {
    v.as_array()?.iter().map(string_matrix).collect()
}

fn build_expression(p: &Params) -> Result<Arc<dyn Metric>> {
    let n = dimension(p);
    let g = p
        .get("g")
        .and_then(string_matrix)
        .ok_or_else(|| Error::Config("expression metric needs `g = [[...]]`".into()))?;
    let mut m = ExpressionMetric::parse(n, &g)?;
    if let Some(dg) = p.get("dg") {
        let dg = string_cube(dg).ok_or_else(|| Error::Config("malformed `dg`".into()))?;
        m = m.with_supplied_derivatives(&dg)?;
    } else if p.str("derivatives") == Some("symbolic") {
        m = m.with_symbolic_derivatives();
    } else {
        m = m.with_fd_step(p.f64_or("fd_step", 1e-4));
    }
    Ok(Arc::new(m))
}

/// Registry of metric families selectable by name.
pub fn metric_registry() -> &'static Registry<dyn Metric> {
    static REG: OnceLock<Registry<dyn Metric>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn Metric> = Registry::new("metric");
        r.register("euclidean", |p| Ok(Arc::new(Euclidean { n: dimension(p) })))
            .register("poincare", |p| {
                Ok(Arc::new(ConstantCurvature::poincare(dimension(p))))
            })
            .register("sphere", |p| {
                Ok(Arc::new(ConstantCurvature::sphere(dimension(p))))
            })
            .register("expression", build_expression);
        r
    })
}

/// Inverse-metric norm of a covector.
pub fn covector_norm(inverse: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    (w.transpose() * inverse * w)[(0, 0)].sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn euclidean_identity_and_zero_christoffel() {
        let m = Euclidean { n: 2 };
        let g = metric_at(&m, &[0.3, -0.1]).unwrap();
        assert_eq!(g, DMatrix::identity(2, 2));
        let c = christoffel(&m, &[0.4, 0.2]).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(c.get(k, i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn poincare_values() {
        let m = ConstantCurvature::poincare(2);
        let g0 = metric_at(&m, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(g0[(0, 0)], 4.0);
        assert_relative_eq!(g0[(0, 1)], 0.0);
        let g = metric_at(&m, &[0.5, 0.0]).unwrap();
        // 4 / 0.75^2
        assert_relative_eq!(g[(0, 0)], 7.111_111_111_111_111, max_relative = 1e-14);
        assert_relative_eq!(g[(1, 1)], 64.0 / 9.0, max_relative = 1e-14);
    }

    #[test]
    fn conformal_christoffel_closed_form() {
        // λ = log(2/(1-|x|²)), Γ^1_11 = ∂_1 λ = 2 x1 / (1 - |x|²)
        let m = ConstantCurvature::poincare(2);
        let c = christoffel(&m, &[0.5, 0.0]).unwrap();
        assert_relative_eq!(c.get(0, 0, 0), 4.0 / 3.0, max_relative = 1e-13);
        let x = [0.2, -0.3];
        let c = christoffel(&m, &x).unwrap();
        let s = 1.0 - (0.04 + 0.09);
        let dl = [2.0 * x[0] / s, 2.0 * x[1] / s];
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                    let want = d(i, k) * dl[j] + d(j, k) * dl[i] - d(i, j) * dl[k];
                    assert_relative_eq!(c.get(k, i, j), want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn closed_form_vs_fd_derivatives() {
        let m = ConstantCurvature::poincare(2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let r: f64 = rng.gen_range(0.0..0.6);
            let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let x = [r * t.cos(), r * t.sin()];
            let a = christoffel(&m, &x).unwrap();
            let fd = fd_derivatives(&m, &x, 1e-4);
            let exact = m.derivatives(&x);
            for k in 0..2 {
                for (u, v) in fd[k].iter().zip(exact[k].iter()) {
                    assert!((u - v).abs() <= 1e-6 * v.abs().max(1.0));
                }
            }
            let e = ExpressionMetric::parse(
                2,
                &[
                    vec!["4/(1-(x1^2+x2^2))^2".into(), "0".into()],
                    vec!["0".into(), "4/(1-(x1^2+x2^2))^2".into()],
                ],
            )
            .unwrap();
            let b = christoffel(&e, &x).unwrap();
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let (u, v) = (a.get(k, i, j), b.get(k, i, j));
                        assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0), "{u} vs {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn christoffel_symmetric_in_lower_indices() {
        let e = ExpressionMetric::parse(
            2,
            &[
                vec!["1 + x1^2".into(), "0.1*x1*x2".into()],
                vec!["0.1*x1*x2".into(), "2 + sin(x2)".into()],
            ],
        )
        .unwrap()
        .with_symbolic_derivatives();
        let c = christoffel(&e, &[0.3, 0.7]).unwrap();
        for k in 0..2 {
            assert_eq!(c.get(k, 0, 1), c.get(k, 1, 0));
        }
    }

    #[test]
    fn rejects_indefinite_metric() {
        let e = ExpressionMetric::parse(
            2,
            &[vec!["1".into(), "0".into()], vec!["0".into(), "-1".into()]],
        )
        .unwrap();
        assert!(matches!(
            metric_at(&e, &[0.0, 0.0]),
            Err(Error::NonPositiveDefinite { .. })
        ));
    }

    #[test]
    fn rejects_asymmetric_metric() {
        let e = ExpressionMetric::parse(
            2,
            &[vec!["1".into(), "x1".into()], vec!["0".into(), "1".into()]],
        );
        assert!(e.is_err());
    }

    #[test]
    fn registry_builds_presets() {
        let r = metric_registry();
        let m = r.build("sphere", &Params::new()).unwrap();
        assert_eq!(m.name(), "sphere");
        assert!(r.build("nonsense", &Params::new()).is_err());
    }
}
