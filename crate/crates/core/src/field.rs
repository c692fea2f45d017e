//! Symmetric tensor fields of rank 0, 1 and 2.
//!
//! Components are packed as `[f]`, `[f_1 … f_n]` or the full row-major
//! `n × n` matrix. Rank-2 expression fields store only `i ≤ j` and mirror,
//! so symmetry is exact.

use std::fmt;
use std::sync::Arc;

use crate::domain::DefiningFunction;
use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::metric::{christoffel, Metric};

pub fn component_count(rank: usize, n: usize) -> usize {
    match rank {
        0 => 1,
        1 => n,
        _ => n * n,
    }
}

pub trait TensorField: Send + Sync + fmt::Debug {
    fn rank(&self) -> usize;
    fn dim(&self) -> usize;

    /// Components ignoring any extension by zero.
    fn eval_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// `∂_k` of every component, stored at `k * components + c`. Defaults to
    /// fourth-order central differences.
    fn gradient_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        fd_gradient(self, x, self.fd_step(), out)
    }

    fn fd_step(&self) -> f64 {
        1e-3
    }

    /// Defining function of `M` when the field is extended by zero outside.
    fn support(&self) -> Option<&Arc<dyn DefiningFunction>> {
        None
    }

    fn components(&self) -> usize {
        component_count(self.rank(), self.dim())
    }
}

pub fn fd_gradient<F: TensorField + ?Sized>(
    f: &F,
    x: &[f64],
    h: f64,
    out: &mut [f64],
) -> Result<()> {
    let nc = f.components();
    let mut y = x.to_vec();
    let mut buf = vec![0.0; nc];
    for k in 0..x.len() {
        let o = &mut out[k * nc..(k + 1) * nc];
        o.fill(0.0);
        for (s, w) in [(1.0, 8.0), (-1.0, -8.0), (2.0, -1.0), (-2.0, 1.0)] {
            y[k] = x[k] + s * h;
            f.eval_raw(&y, &mut buf)?;
            for c in 0..nc {
                o[c] += w * buf[c];
            }
        }
        y[k] = x[k];
        for v in o.iter_mut() {
            *v /= 12.0 * h;
        }
    }
    Ok(())
}

fn outside<F: TensorField + ?Sized>(f: &F, x: &[f64]) -> bool {
    f.support().is_some_and(|rho| rho.rho(x) < 0.0)
}

/// Components with extension by zero applied.
pub fn eval_into(f: &dyn TensorField, x: &[f64], out: &mut [f64]) -> Result<()> {
    if outside(f, x) {
        out.fill(0.0);
        return Ok(());
    }
    f.eval_raw(x, out)
}

pub fn eval(f: &dyn TensorField, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; f.components()];
    eval_into(f, x, &mut out)?;
    Ok(out)
}

pub fn gradient(f: &dyn TensorField, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; f.components() * f.dim()];
    if outside(f, x) {
        return Ok(out);
    }
    f.gradient_raw(x, &mut out)?;
    Ok(out)
}

/// `f(a, b)` style contraction of a packed field with the given vectors:
/// the value for rank 0, `f_i a^i` for rank 1, `f_ij a^i b^j` for rank 2.
pub fn contract(rank: usize, comps: &[f64], a: &[f64], b: &[f64]) -> f64 {
    match rank {
        0 => comps[0],
        1 => comps.iter().zip(a).map(|(f, v)| f * v).sum(),
        _ => {
            let n = a.len();
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += comps[i * n + j] * a[i] * b[j];
                }
            }
            s
        }
    }
}

/// Field given by closed-form expressions with symbolic gradients.
#[derive(Debug, Clone)]
pub struct ExprField {
    rank: usize,
    n: usize,
    /// One expression per stored component (`i ≤ j` for rank 2).
    exprs: Vec<Expr>,
    grads: Vec<Vec<Expr>>,
    support: Option<Arc<dyn DefiningFunction>>,
}

impl ExprField {
    /// Rank-2 input may list the full `n × n` matrix (checked symmetric) or
    /// the `n(n+1)/2` upper-triangular entries row by row.
    pub fn parse(rank: usize, n: usize, comps: &[String]) -> Result<Self> {
        let parsed: Vec<Expr> = comps
            .iter()
            .map(|s| expr::parse(s, n))
            .collect::<std::result::Result<_, _>>()?;
        let exprs = match rank {
            0 | 1 => {
                let want = component_count(rank, n);
                if parsed.len() != want {
                    return Err(Error::Dimension {
                        expected: want,
                        got: parsed.len(),
                    });
                }
                parsed
            }
            2 => {
                if parsed.len() == n * n {
                    let mut up = Vec::new();
                    for i in 0..n {
                        for j in i..n {
                            if i != j && parsed[i * n + j] != parsed[j * n + i] {
                                return Err(Error::Config(format!(
                                    "rank-2 field is not symmetric in entry ({}, {})",
                                    i + 1,
                                    j + 1
                                )));
                            }
                            up.push(parsed[i * n + j].clone());
                        }
                    }
                    up
                } else if parsed.len() == n * (n + 1) / 2 {
                    parsed
                } else {
                    return Err(Error::Dimension {
                        expected: n * n,
                        got: parsed.len(),
                    });
                }
            }
            r => return Err(Error::Config(format!("unsupported rank {r}"))),
        };
        let grads = (0..n)
            .map(|k| exprs.iter().map(|e| e.differentiate(k)).collect())
            .collect();
        Ok(ExprField {
            rank,
            n,
            exprs,
            grads,
            support: None,
        })
    }

    pub fn extended_by_zero(mut self, rho: Arc<dyn DefiningFunction>) -> Self {
        self.support = Some(rho);
        self
    }

    fn unpack(&self, vals: impl Fn(usize) -> f64, out: &mut [f64]) {
        if self.rank < 2 {
            for (c, o) in out.iter_mut().enumerate() {
                *o = vals(c);
            }
            return;
        }
        let n = self.n;
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                let v = vals(idx);
                out[i * n + j] = v;
                out[j * n + i] = v;
                idx += 1;
            }
        }
    }
}

impl TensorField for ExprField {
    fn rank(&self) -> usize {
        self.rank
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn eval_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.unpack(|c| self.exprs[c].eval(x), out);
        Ok(())
    }

    fn gradient_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let nc = self.components();
        for k in 0..self.n {
            self.unpack(|c| self.grads[k][c].eval(x), &mut out[k * nc..(k + 1) * nc]);
        }
        Ok(())
    }

    fn support(&self) -> Option<&Arc<dyn DefiningFunction>> {
        self.support.as_ref()
    }
}

type FieldFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Field given by a closure; gradients by finite differences unless
/// supplied.
#[derive(Clone)]
pub struct FnField {
    rank: usize,
    n: usize,
    f: Arc<FieldFn>,
    grad: Option<Arc<FieldFn>>,
    support: Option<Arc<dyn DefiningFunction>>,
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnField")
            .field("rank", &self.rank)
            .field("n", &self.n)
            .finish_non_exhaustive()
    }
}

impl FnField {
    pub fn new(
        rank: usize,
        n: usize,
        f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        FnField {
            rank,
            n,
            f: Arc::new(f),
            grad: None,
            support: None,
        }
    }

    pub fn with_gradient(mut self, g: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(g));
        self
    }

    pub fn extended_by_zero(mut self, rho: Arc<dyn DefiningFunction>) -> Self {
        self.support = Some(rho);
        self
    }
}

impl TensorField for FnField {
    fn rank(&self) -> usize {
        self.rank
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn eval_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(x, out);
        Ok(())
    }

    fn gradient_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.grad {
            Some(g) => {
                g(x, out);
                Ok(())
            }
            None => fd_gradient(self, x, self.fd_step(), out),
        }
    }

    fn support(&self) -> Option<&Arc<dyn DefiningFunction>> {
        self.support.as_ref()
    }
}

/// `dv` for a 1-form `v`: `½(∂_i v_j + ∂_j v_i) − Γ^k_ij v_k`. Inherits the
/// support of `v`.
#[derive(Debug, Clone)]
pub struct SymDerivative {
    pub metric: Arc<dyn Metric>,
    pub v: Arc<dyn TensorField>,
}

impl TensorField for SymDerivative {
    fn rank(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        self.v.dim()
    }

    fn eval_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        let mut v = vec![0.0; n];
        let mut dv = vec![0.0; n * n];
        self.v.eval_raw(x, &mut v)?;
        self.v.gradient_raw(x, &mut dv)?;
        let c = christoffel(self.metric.as_ref(), x)?;
        for i in 0..n {
            for j in i..n {
                let mut s = 0.5 * (dv[i * n + j] + dv[j * n + i]);
                for k in 0..n {
                    s -= c.get(k, i, j) * v[k];
                }
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        Ok(())
    }

    fn support(&self) -> Option<&Arc<dyn DefiningFunction>> {
        self.v.support()
    }
}

/// `(δf)_i = g^{jk} ∇_k f_ij` for a rank-2 field.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub metric: Arc<dyn Metric>,
    pub f: Arc<dyn TensorField>,
}

impl TensorField for Divergence {
    fn rank(&self) -> usize {
        1
    }

    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn eval_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        let mut f = vec![0.0; n * n];
        let mut df = vec![0.0; n * n * n];
        self.f.eval_raw(x, &mut f)?;
        self.f.gradient_raw(x, &mut df)?;
        let c = christoffel(self.metric.as_ref(), x)?;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    // ∇_k f_ij = ∂_k f_ij − Γ^l_ki f_lj − Γ^l_kj f_il
                    let mut cov = df[k * n * n + i * n + j];
                    for l in 0..n {
                        cov -= c.get(l, k, i) * f[l * n + j] + c.get(l, k, j) * f[i * n + l];
                    }
                    s += c.inverse[(j, k)] * cov;
                }
            }
            out[i] = s;
        }
        Ok(())
    }

    fn support(&self) -> Option<&Arc<dyn DefiningFunction>> {
        self.f.support()
    }
}

/// Linear combination `Σ c_k f_k` of fields of equal rank.
#[derive(Debug, Clone)]
pub struct Combination {
    pub terms: Vec<(f64, Arc<dyn TensorField>)>,
}

impl Combination {
    pub fn new(terms: Vec<(f64, Arc<dyn TensorField>)>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Invalid("empty combination".into()))?;
        let (r, n) = (first.1.rank(), first.1.dim());
        if terms.iter().any(|t| t.1.rank() != r || t.1.dim() != n) {
            return Err(Error::Invalid(
                "combined fields differ in rank or dimension".into(),
            ));
        }
        Ok(Combination { terms })
    }
}

impl TensorField for Combination {
    fn rank(&self) -> usize {
        self.terms[0].1.rank()
    }

    fn dim(&self) -> usize {
        self.terms[0].1.dim()
    }

    /// Each term keeps its own extension by zero.
    fn eval_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        let mut buf = vec![0.0; out.len()];
        for (c, f) in &self.terms {
            eval_into(f.as_ref(), x, &mut buf)?;
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += c * b;
            }
        }
        Ok(())
    }

    fn gradient_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        for (c, f) in &self.terms {
            let g = gradient(f.as_ref(), x)?;
            for (o, b) in out.iter_mut().zip(&g) {
                *o += c * b;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Disk;
    use crate::metric::{ConstantCurvature, Euclidean};

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn sym_derivative_examples() {
        let e: Arc<dyn Metric> = Arc::new(Euclidean { n: 2 });
        let v = ExprField::parse(1, 2, &strings(&["x2", "0"])).unwrap();
        let dv = SymDerivative {
            metric: e.clone(),
            v: Arc::new(v),
        };
        let f = eval(&dv, &[0.3, -0.7]).unwrap();
        assert_eq!(f, vec![0.0, 0.5, 0.5, 0.0]);

        let v = ExprField::parse(1, 2, &strings(&["x1", "x2"])).unwrap();
        let dv = SymDerivative {
            metric: e,
            v: Arc::new(v),
        };
        assert_eq!(eval(&dv, &[0.1, 0.2]).unwrap(), vec![1.0, 0.0, 0.0, 1.0]);

        let p: Arc<dyn Metric> = Arc::new(ConstantCurvature::poincare(2));
        let v = ExprField::parse(1, 2, &strings(&["1", "0"])).unwrap();
        let dv = SymDerivative {
            metric: p,
            v: Arc::new(v),
        };
        let f = eval(&dv, &[0.5, 0.0]).unwrap();
        assert!((f[0] + 4.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn divergence_examples() {
        let e: Arc<dyn Metric> = Arc::new(Euclidean { n: 2 });
        let f = ExprField::parse(2, 2, &strings(&["x1", "0", "0"])).unwrap();
        let d = Divergence {
            metric: e.clone(),
            f: Arc::new(f),
        };
        let r = eval(&d, &[0.2, 0.4]).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-14 && r[1].abs() < 1e-14);

        let v = ExprField::parse(1, 2, &strings(&["x2", "0"])).unwrap();
        let dv = Arc::new(SymDerivative {
            metric: e.clone(),
            v: Arc::new(v),
        });
        let d = Divergence { metric: e, f: dv };
        let r = eval(&d, &[0.2, 0.4]).unwrap();
        assert!(r.iter().all(|a| a.abs() < 1e-10));
    }

    #[test]
    fn extension_by_zero() {
        let disk: Arc<dyn DefiningFunction> = Arc::new(Disk {
            center: vec![0.0, 0.0],
            radius: 1.0,
        });
        let f = ExprField::parse(0, 2, &strings(&["1 + x1"]))
            .unwrap()
            .extended_by_zero(disk);
        assert_eq!(eval(&f, &[0.5, 0.0]).unwrap(), vec![1.5]);
        assert_eq!(eval(&f, &[1.5, 0.0]).unwrap(), vec![0.0]);
        assert_eq!(gradient(&f, &[1.5, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rank2_symmetry_enforced() {
        assert!(ExprField::parse(2, 2, &strings(&["x1", "x2", "x1", "0"])).is_err());
        let f = ExprField::parse(2, 2, &strings(&["x1", "x2", "x2", "0"])).unwrap();
        let v = eval(&f, &[1.0, 2.0]).unwrap();
        assert_eq!(v[1], v[2]);
    }

    #[test]
    fn fd_gradient_matches_symbolic() {
        let f = ExprField::parse(1, 2, &strings(&["sin(x1) * x2^2", "exp(x1 - x2)"])).unwrap();
        let x = [0.3, -0.2];
        let mut a = vec![0.0; 4];
        let mut b = vec![0.0; 4];
        f.gradient_raw(&x, &mut a).unwrap();
        fd_gradient(&f, &x, 1e-3, &mut b).unwrap();
        for k in 0..4 {
            assert!((a[k] - b[k]).abs() < 1e-10);
        }
    }
}
