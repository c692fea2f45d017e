//! Scalar root bracketing helpers.

/// Root of `f` in `[a, b]` given `f(a) > 0 >= f(b)` (or the reverse sign
/// pattern). Illinois-style regula falsi with a bisection safeguard.
pub fn bisect_secant<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    tol: f64,
) -> f64 {
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let mut side = 0i8;
    for it in 0..200 {
        let width = (b - a).abs();
        if width <= tol * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        let mut c = if it % 4 == 3 {
            0.5 * (a + b)
        } else {
            (a * fb - b * fa) / (fb - fa)
        };
        if !c.is_finite() || (c - a) * (c - b) > 0.0 {
            c = 0.5 * (a + b);
        }
        let fc = f(c);
        if fc == 0.0 {
            return c;
        }
        if (fc > 0.0) == (fa > 0.0) {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
    }
    // endpoint with the smaller residual
    if fa.abs() < fb.abs() {
        a
    } else {
        b
    }
}
