//! Dormand–Prince 5(4) with continuous extension, event location and
//! breakpoints at known discontinuities of the right-hand side.

use crate::error::{Error, Result};
use crate::roots::bisect_secant;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub h_init: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            h_max: f64::INFINITY,
            h_init: None,
            max_steps: 200_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }
}

/// One accepted step with its interpolation polynomial.
#[derive(Debug, Clone)]
pub struct Segment {
    pub t0: f64,
    pub h: f64,
    rc: Vec<f64>,
}

impl Segment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    fn eval_into(&self, t: f64, out: &mut [f64]) {
        let d = out.len();
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let (r1, rest) = self.rc.split_at(d);
        let (r2, rest) = rest.split_at(d);
        let (r3, rest) = rest.split_at(d);
        let (r4, r5) = rest.split_at(d);
        for i in 0..d {
            out[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
        }
    }
}

/// Dense solution on `[t_start, t_end]`.
#[derive(Debug, Clone)]
pub struct Solution {
    dim: usize,
    t_start: f64,
    y_start: Vec<f64>,
    t_end: f64,
    y_end: Vec<f64>,
    segments: Vec<Segment>,
    /// Whether integration stopped at an event rather than at `t_end`.
    pub event: bool,
}

impl Solution {
    /// Solution of zero length (a single state).
    pub fn constant(t: f64, y: Vec<f64>) -> Self {
        Solution {
            dim: y.len(),
            t_start: t,
            y_start: y.clone(),
            t_end: t,
            y_end: y,
            segments: Vec::new(),
            event: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn y_start(&self) -> &[f64] {
        &self.y_start
    }

    pub fn y_end(&self) -> &[f64] {
        &self.y_end
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Step boundaries, clipped to `[t_start, t_end]`.
    pub fn knots(&self) -> Vec<f64> {
        let mut k = vec![self.t_start];
        for s in &self.segments {
            let t = s.t1().min(self.t_end);
            if t > *k.last().unwrap() {
                k.push(t);
            }
        }
        if self.t_end > *k.last().unwrap() {
            k.push(self.t_end);
        }
        k
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if self.segments.is_empty() || t <= self.t_start {
            out.copy_from_slice(&self.y_start);
            return;
        }
        if t >= self.t_end {
            out.copy_from_slice(&self.y_end);
            return;
        }
        let i = self
            .segments
            .partition_point(|s| s.t1() < t)
            .min(self.segments.len() - 1);
        self.segments[i].eval_into(t, out);
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.eval_into(t, &mut y);
        y
    }
}

/// Terminal event: integration stops where `g` first passes from positive
/// to non-positive. Until `g` has been positive once the event is disarmed,
/// so trajectories may start on the event surface.
pub struct Event<'a> {
    pub g: &'a dyn Fn(f64, &[f64]) -> f64,
}

fn scaled_norm(err: &[f64], y0: &[f64], y1: &[f64], o: &OdeOptions) -> f64 {
    let mut s = 0.0;
    for i in 0..err.len() {
        let sc = o.atol + o.rtol * y0[i].abs().max(y1[i].abs());
        s += (err[i] / sc).powi(2);
    }
    (s / err.len() as f64).sqrt()
}

/// Integrate `y' = f(t, y)` forward from `t0` to `t_end`.
///
/// Steps never cross an entry of `breakpoints`; the stage cache is reset at
/// each one, so right-hand sides with jumps there are integrated at full
/// order.
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
    breakpoints: &[f64],
    event: Option<&Event>,
) -> Result<Solution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let d = y0.len();
    if t_end <= t0 {
        return Ok(Solution::constant(t0, y0.to_vec()));
    }
    let mut stops: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&b| b > t0 && b < t_end)
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.push(t_end);
    let mut next_stop = 0usize;

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; d]; 7];
    let mut ytmp = vec![0.0; d];
    let mut y = y0.to_vec();
    let mut y1 = vec![0.0; d];
    let mut err = vec![0.0; d];
    let mut t = t0;
    f(t, &y, &mut k[0])?;

    let span = t_end - t0;
    let mut h = match opts.h_init {
        Some(h) => h,
        None => initial_step(&mut f, t, &y, &k[0], opts)?,
    }
    .min(opts.h_max)
    .min(span);

    let mut segments = Vec::new();
    let mut armed = event.map(|e| (e.g)(t, &y) > 0.0).unwrap_or(false);
    let mut g_prev = event.map(|e| (e.g)(t, &y)).unwrap_or(0.0);
    let mut steps = 0usize;
    let mut rejected_last = false;

    loop {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepFailure {
                t,
                reason: format!("exceeded {} steps", opts.max_steps),
            });
        }
        let target = stops[next_stop];
        let mut lands = false;
        if t + h >= target - 1e-14 * target.abs().max(1.0) {
            h = target - t;
            lands = true;
        }
        if !(h > 1e-15 * t.abs().max(1.0)) && !lands {
            return Err(Error::StepFailure {
                t,
                reason: "step size underflow".into(),
            });
        }

        // stages
        macro_rules! stage {
            ($dst:expr, $c:expr, $($a:expr, $j:expr),+) => {{
                for i in 0..d {
                    ytmp[i] = y[i] + h * (0.0 $(+ $a * k[$j][i])+);
                }
                let (lo, hi) = k.split_at_mut($dst);
                let _ = lo;
                let ts = if lands && $c == 1.0 { target.next_down() } else { t + $c * h };
                f(ts, &ytmp, &mut hi[0])?;
            }};
        }
        stage!(1, C2, A21, 0);
        stage!(2, C3, A31, 0, A32, 1);
        stage!(3, C4, A41, 0, A42, 1, A43, 2);
        stage!(4, C5, A51, 0, A52, 1, A53, 2, A54, 3);
        stage!(5, 1.0, A61, 0, A62, 1, A63, 2, A64, 3, A65, 4);
        for i in 0..d {
            y1[i] = y[i]
                + h * (A71 * k[0][i]
                    + A73 * k[2][i]
                    + A74 * k[3][i]
                    + A75 * k[4][i]
                    + A76 * k[5][i]);
        }
        let t_new = if lands { target } else { t + h };
        {
            let (lo, hi) = k.split_at_mut(6);
            let _ = lo;
            // left limit when landing on a breakpoint
            let te = if lands { t_new.next_down() } else { t_new };
            f(te, &y1, &mut hi[0])?;
        }
        for i in 0..d {
            err[i] = h
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * k[6][i]);
        }
        let en = scaled_norm(&err, &y, &y1, opts);
        if !en.is_finite() || y1.iter().any(|v| !v.is_finite()) {
            h *= 0.25;
            rejected_last = true;
            continue;
        }
        if en > 1.0 {
            let fac = (0.9 * en.powf(-0.2)).max(0.2);
            h *= fac;
            rejected_last = true;
            continue;
        }

        // accepted: build the continuous extension
        let mut rc = vec![0.0; 5 * d];
        for i in 0..d {
            let dy = y1[i] - y[i];
            let bspl = h * k[0][i] - dy;
            rc[i] = y[i];
            rc[d + i] = dy;
            rc[2 * d + i] = bspl;
            rc[3 * d + i] = dy - h * k[6][i] - bspl;
            rc[4 * d + i] = h
                * (D1 * k[0][i]
                    + D3 * k[2][i]
                    + D4 * k[3][i]
                    + D5 * k[4][i]
                    + D6 * k[5][i]
                    + D7 * k[6][i]);
        }
        let seg = Segment { t0: t, h, rc };

        if let Some(ev) = event {
            let g1 = (ev.g)(t_new, &y1);
            let mut hit: Option<(f64, f64, f64, f64)> = None;
            if armed {
                if g1 <= 0.0 {
                    hit = Some((t, g_prev, t_new, g1));
                }
            } else {
                // look inside the step for the surface being entered and left
                let nsub = 16;
                let mut tp = t;
                let mut gp = g_prev;
                for s in 1..=nsub {
                    let ts = if s == nsub {
                        t_new
                    } else {
                        t + h * s as f64 / nsub as f64
                    };
                    let gs = if s == nsub {
                        g1
                    } else {
                        seg.eval_into(ts, &mut ytmp);
                        (ev.g)(ts, &ytmp)
                    };
                    if armed && gs <= 0.0 {
                        hit = Some((tp, gp, ts, gs));
                        break;
                    }
                    if gs > 0.0 {
                        armed = true;
                    }
                    tp = ts;
                    gp = gs;
                }
            }
            if let Some((ta, ga, tb, gb)) = hit {
                let mut buf = vec![0.0; d];
                let gfun = |s: f64| {
                    let mut yy = vec![0.0; d];
                    seg.eval_into(s, &mut yy);
                    (ev.g)(s, &yy)
                };
                let ts = bisect_secant(&gfun, ta, tb, ga, gb, 1e-15);
                seg.eval_into(ts, &mut buf);
                segments.push(seg);
                return Ok(Solution {
                    dim: d,
                    t_start: t0,
                    y_start: y0.to_vec(),
                    t_end: ts,
                    y_end: buf,
                    segments,
                    event: true,
                });
            }
            g_prev = g1;
        }

        segments.push(seg);
        t = t_new;
        std::mem::swap(&mut y, &mut y1);
        if lands {
            if next_stop + 1 == stops.len() {
                return Ok(Solution {
                    dim: d,
                    t_start: t0,
                    y_start: y0.to_vec(),
                    t_end: t,
                    y_end: y,
                    segments,
                    event: false,
                });
            }
            next_stop += 1;
            // right-hand side may jump here
            f(t.next_up(), &y, &mut k[0])?;
        } else {
            k.swap(0, 6);
        }
        let fac = (0.9 * en.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
        let fac = if rejected_last { fac.min(1.0) } else { fac };
        rejected_last = false;
        h = (h * fac).min(opts.h_max);
    }
}

fn initial_step<F>(f: &mut F, t: f64, y: &[f64], f0: &[f64], o: &OdeOptions) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let d = y.len();
    let sc: Vec<f64> = y.iter().map(|v| o.atol + o.rtol * v.abs()).collect();
    let rms = |v: &dyn Fn(usize) -> f64| {
        ((0..d).map(|i| (v(i) / sc[i]).powi(2)).sum::<f64>() / d as f64).sqrt()
    };
    let d0 = rms(&|i| y[i]);
    let d1 = rms(&|i| f0[i]);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(o.h_max);
    let y1: Vec<f64> = (0..d).map(|i| y[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; d];
    f(t + h0, &y1, &mut f1)?;
    let d2 = rms(&|i| f1[i] - f0[i]) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1))
}
