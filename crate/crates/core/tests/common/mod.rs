//! Shared fixtures: flows, random polynomial potentials and random geodesics.
#![allow(dead_code)]

use std::sync::Arc;

use geotomo::domain::{Disk, DomainSpec, Surface};
use geotomo::field::{FnField, SymDerivative, TensorField};
use geotomo::geodesic::{Flow, Geodesic};
use geotomo::metric::{ConstantCurvature, Euclidean, Metric};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn euclidean_flow() -> Flow {
    Flow::new(Arc::new(Euclidean { n: 2 }), DomainSpec::disk(1.0))
}

pub fn poincare_flow() -> Flow {
    Flow::new(
        Arc::new(ConstantCurvature::poincare(2)),
        DomainSpec::disk(0.5),
    )
}

/// `Σ c_a x^a` over monomials of total degree at most `degree`.
#[derive(Debug, Clone)]
pub struct Poly {
    terms: Vec<(Vec<i32>, f64)>,
}

impl Poly {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, degree: i32) -> Self {
        let mut terms = Vec::new();
        let mut exps = vec![vec![]];
        for _ in 0..n {
            exps = exps
                .into_iter()
                .flat_map(|e: Vec<i32>| {
                    (0..=degree).map(move |p| {
                        let mut e = e.clone();
                        e.push(p);
                        e
                    })
                })
                .collect();
        }
        for e in exps {
            if e.iter().sum::<i32>() <= degree {
                terms.push((e, rng.gen_range(-1.0..1.0)));
            }
        }
        Poly { terms }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(&p, &v)| v.powi(p)).product::<f64>())
            .sum()
    }

    pub fn grad(&self, x: &[f64], k: usize) -> f64 {
        self.terms
            .iter()
            .filter(|(e, _)| e[k] > 0)
            .map(|(e, c)| {
                c * e
                    .iter()
                    .zip(x)
                    .enumerate()
                    .map(|(i, (&p, &v))| {
                        if i == k {
                            p as f64 * v.powi(p - 1)
                        } else {
                            v.powi(p)
                        }
                    })
                    .product::<f64>()
            })
            .sum()
    }
}

/// Covector `v_c = s^p P_c` with `s = 1 − |x − c|²/R²`.
#[derive(Debug, Clone)]
pub struct Potential {
    pub center: Vec<f64>,
    pub radius: f64,
    pub power: i32,
    pub comps: Vec<Poly>,
}

impl Potential {
    pub fn random(seed: u64, center: &[f64], radius: f64, power: i32, degree: i32) -> Self {
        let mut r = rng(seed);
        let n = center.len();
        Potential {
            center: center.to_vec(),
            radius,
            power,
            comps: (0..n).map(|_| Poly::random(&mut r, n, degree)).collect(),
        }
    }

    fn s(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c).powi(2))
            .sum();
        1.0 - r2 / (self.radius * self.radius)
    }

    pub fn value(&self, x: &[f64]) -> Vec<f64> {
        let s = self.s(x).powi(self.power);
        self.comps.iter().map(|p| s * p.eval(x)).collect()
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let s = self.s(x);
        let sp = s.powi(self.power);
        let dsp = self.power as f64 * s.powi(self.power - 1);
        for k in 0..n {
            let ds = -2.0 * (x[k] - self.center[k]) / (self.radius * self.radius);
            for (c, p) in self.comps.iter().enumerate() {
                out[k * n + c] = dsp * ds * p.eval(x) + sp * p.grad(x, k);
            }
        }
    }

    pub fn field(&self, extend: bool) -> Arc<dyn TensorField> {
        let a = self.clone();
        let b = self.clone();
        let n = self.center.len();
        let f = FnField::new(1, n, move |x, out| out.copy_from_slice(&a.value(x)))
            .with_gradient(move |x, out| b.gradient(x, out));
        if extend {
            Arc::new(f.extended_by_zero(Arc::new(Disk {
                center: self.center.clone(),
                radius: self.radius,
            })))
        } else {
            Arc::new(f)
        }
    }

    pub fn dv(&self, metric: Arc<dyn Metric>, extend: bool) -> Arc<dyn TensorField> {
        Arc::new(SymDerivative {
            metric,
            v: self.field(extend),
        })
    }
}

/// Maximal geodesic through a random interior point in a random direction.
pub fn random_maximal(flow: &Flow, rng: &mut ChaCha8Rng) -> Geodesic {
    let c = flow.domain.defining.center();
    let r = 0.5 * flow.domain.diameter();
    loop {
        let x: Vec<f64> = c.iter().map(|c| c + rng.gen_range(-r..r)).collect();
        if flow.domain.rho(&x) <= 0.05 * r {
            continue;
        }
        let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        return flow
            .maximal(&x, &[th.cos(), th.sin()], Surface::Boundary)
            .unwrap();
    }
}
