//! Gauss–Kronrod 7/15 panels with adaptive bisection.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// Gauss weights at the odd-indexed Kronrod nodes `XGK[1], XGK[3], XGK[5]`
/// and the center.
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One panel: Kronrod estimate and `|K15 − G7|`.
pub fn gk15<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx)? + f(c + dx)?;
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    Ok((k * h, ((k - g) * h).abs()))
}

/// Adaptive integral over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: FnMut(f64) -> Result<f64>>(
    f: &mut F,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
) -> Result<(f64, f64)> {
    let (v, e) = gk15(f, a, b)?;
    if e <= tol || max_depth == 0 || b - a <= 1e-14 * (1.0 + a.abs()) {
        return Ok((v, e));
    }
    let m = 0.5 * (a + b);
    let (v1, e1) = integrate(f, a, m, 0.5 * tol, max_depth - 1)?;
    let (v2, e2) = integrate(f, m, b, 0.5 * tol, max_depth - 1)?;
    Ok((v1 + v2, e1 + e2))
}

/// Integral over consecutive panels `[p_k, p_{k+1}]`, each refined to its
/// share of `tol`. Fails when the total estimate exceeds `tol`.
pub fn integrate_panels<F: FnMut(f64) -> Result<f64>>(
    f: &mut F,
    panels: &[f64],
    tol: f64,
) -> Result<(f64, f64)> {
    let total = panels.last().copied().unwrap_or(0.0) - panels.first().copied().unwrap_or(0.0);
    let mut value = 0.0;
    let mut err = 0.0;
    if total <= 0.0 {
        return Ok((0.0, 0.0));
    }
    for w in panels.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let share = tol * (w[1] - w[0]) / total;
        let (v, e) = integrate(f, w[0], w[1], share, 12)?;
        value += v;
        err += e;
    }
    if err > tol {
        return Err(Error::QuadratureFailure { estimate: err, tol });
    }
    Ok((value, err))
}
