//! Quadrature, finite differences, interpolation, root finding and ODE steppers
//! on uniform and non-uniform one-dimensional grids.

use crate::error::{Error, Result};

/// Composite Simpson rule on a uniform grid. An even number of samples is
/// handled with a 3/8 panel at the end.
pub fn simpson(f: &[f64], h: f64) -> f64 {
    let n = f.len();
    match n {
        0 | 1 => 0.0,
        2 => 0.5 * h * (f[0] + f[1]),
        3 => h / 3.0 * (f[0] + 4.0 * f[1] + f[2]),
        _ if n % 2 == 1 => simpson_odd(f, h),
        4 => 3.0 * h / 8.0 * (f[0] + 3.0 * f[1] + 3.0 * f[2] + f[3]),
        _ => {
            let k = n - 3;
            simpson_odd(&f[..k], h)
                + 3.0 * h / 8.0 * (f[k - 1] + 3.0 * f[k] + 3.0 * f[k + 1] + f[k + 2])
        }
    }
}

fn simpson_odd(f: &[f64], h: f64) -> f64 {
    let n = f.len();
    let mut s = f[0] + f[n - 1];
    for (i, v) in f.iter().enumerate().take(n - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

/// Running integral `F[i] = ∫_{x_0}^{x_i} f` on a uniform grid.
///
/// Even nodes use composite Simpson; odd nodes add the half-panel rule
/// `h/12 (5 f_0 + 8 f_1 - f_2)` to the preceding even node. Fourth order
/// at even nodes, third order at odd ones.
pub fn cumulative_simpson(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * h * (f[0] + f[1]);
        return out;
    }
    let mut i = 0;
    while i + 2 < n {
        out[i + 1] = out[i] + h / 12.0 * (5.0 * f[i] + 8.0 * f[i + 1] - f[i + 2]);
        out[i + 2] = out[i] + h / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2]);
        i += 2;
    }
    if i + 1 < n {
        // last odd node: backward half panel
        out[i + 1] = out[i] + h / 12.0 * (-f[i - 1] + 8.0 * f[i] + 5.0 * f[i + 1]);
    }
    out
}

/// Trapezoid rule on arbitrary abscissae.
pub fn trapezoid(x: &[f64], f: &[f64]) -> f64 {
    x.windows(2)
        .zip(f.windows(2))
        .map(|(xs, fs)| 0.5 * (xs[1] - xs[0]) * (fs[0] + fs[1]))
        .sum()
}

/// Fourth-order first derivative on a uniform grid (one-sided five-point
/// stencils at the two nodes nearest each end).
pub fn derivative(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 5, "derivative needs at least five samples");
    let mut d = vec![0.0; n];
    for i in 2..n - 2 {
        d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h);
    }
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h);
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h);
    d[n - 1] = (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4]
        + 3.0 * f[n - 5])
        / (12.0 * h);
    d[n - 2] = (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4]
        - f[n - 5])
        / (12.0 * h);
    d
}

/// Second-order first derivative on a uniform grid.
pub fn derivative2(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 3, "derivative needs at least three samples");
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
    d
}

/// Three-point Lagrange derivative on non-uniform abscissae.
pub fn derivative_nonuniform(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 3 && f.len() == n);
    let lagrange = |i0: usize, at: usize| {
        let (x0, x1, x2) = (x[i0], x[i0 + 1], x[i0 + 2]);
        let t = x[at];
        let l0 = (2.0 * t - x1 - x2) / ((x0 - x1) * (x0 - x2));
        let l1 = (2.0 * t - x0 - x2) / ((x1 - x0) * (x1 - x2));
        let l2 = (2.0 * t - x0 - x1) / ((x2 - x0) * (x2 - x1));
        l0 * f[i0] + l1 * f[i0 + 1] + l2 * f[i0 + 2]
    };
    let mut d = vec![0.0; n];
    d[0] = lagrange(0, 0);
    for (i, di) in d.iter_mut().enumerate().take(n - 1).skip(1) {
        *di = lagrange(i - 1, i);
    }
    d[n - 1] = lagrange(n - 3, n - 1);
    d
}

/// Four-point Lagrange interpolation on a uniform grid starting at `x0`.
pub fn interpolate_cubic(x0: f64, h: f64, f: &[f64], x: f64) -> f64 {
    let n = f.len();
    assert!(n >= 4);
    let s = (x - x0) / h;
    let j = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let t = s - j as f64;
    let w0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
    let w1 = t * (t - 2.0) * (t - 3.0) / 2.0;
    let w2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
    let w3 = t * (t - 1.0) * (t - 2.0) / 6.0;
    w0 * f[j] + w1 * f[j + 1] + w2 * f[j + 2] + w3 * f[j + 3]
}

/// Bisection for a sign change of `f` on `[lo, hi]`, stopping when the
/// bracket is narrower than `xtol` or `|f| <= ftol`.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64, ftol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Bracket { lo, hi, f_lo, f_hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        if f_mid.abs() <= ftol || (hi - lo) <= xtol {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn power_law_exponent(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// One classical Runge-Kutta step for `y' = f(t, y)`.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let k1 = f(t, y);
    let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = f(t + 0.5 * h, &y2);
    let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
    let k3 = f(t + 0.5 * h, &y3);
    let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
    let k4 = f(t + h, &y4);
    (0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Adaptive Dormand-Prince 5(4) integrator.
#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

impl Dopri5 {
    pub fn new(rtol: f64) -> Self {
        Self {
            rtol,
            atol: rtol * 1e-4,
            ..Self::default()
        }
    }

    /// Integrates from `t0` to `t1`. When `stops` is given (increasing, within
    /// `(t0, t1]`), steps are shortened to land on every stop and the state
    /// there is returned.
    pub fn integrate<F>(
        &self,
        mut f: F,
        t0: f64,
        y0: &[f64],
        t1: f64,
        stops: &[f64],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
    where
        F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    {
        let dim = y0.len();
        let mut t = t0;
        let mut y = y0.to_vec();
        let mut out = Vec::with_capacity(stops.len());
        let mut next_stop = 0;
        let span = t1 - t0;
        let mut h = span * 1e-3;
        let mut k1 = f(t, &y)?;
        let mut tmp = vec![0.0; dim];
        let mut steps = 0;
        while t < t1 {
            steps += 1;
            if steps > self.max_steps {
                return Err(Error::Integration {
                    t,
                    reason: "step budget exhausted",
                });
            }
            let target = if next_stop < stops.len() {
                stops[next_stop]
            } else {
                t1
            };
            let mut landing = false;
            if t + h >= target - 1e-14 * span {
                h = target - t;
                landing = true;
            }
            let stage = |tmp: &mut Vec<f64>, coeffs: &[(f64, &Vec<f64>)]| {
                for i in 0..dim {
                    let mut s = y[i];
                    for (c, k) in coeffs {
                        s += h * c * k[i];
                    }
                    tmp[i] = s;
                }
            };
            stage(&mut tmp, &[(A21, &k1)]);
            let k2 = f(t + h / 5.0, &tmp)?;
            stage(&mut tmp, &[(A31, &k1), (A32, &k2)]);
            let k3 = f(t + 3.0 * h / 10.0, &tmp)?;
            stage(&mut tmp, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
            let k4 = f(t + 4.0 * h / 5.0, &tmp)?;
            stage(&mut tmp, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
            let k5 = f(t + 8.0 * h / 9.0, &tmp)?;
            stage(
                &mut tmp,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            );
            let k6 = f(t + h, &tmp)?;
            let mut y_new = vec![0.0; dim];
            for i in 0..dim {
                y_new[i] =
                    y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            let k7 = f(t + h, &y_new)?;
            let mut err = 0.0_f64;
            for i in 0..dim {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                h *= 0.25;
                if h.abs() < 1e-16 * span {
                    return Err(Error::Integration {
                        t,
                        reason: "non-finite derivative",
                    });
                }
                continue;
            }
            if err <= 1.0 {
                t = if landing { target } else { t + h };
                y = y_new;
                k1 = k7;
                if landing && next_stop < stops.len() {
                    out.push(y.clone());
                    next_stop += 1;
                }
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h *= fac;
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                if h.abs() < 1e-16 * span {
                    return Err(Error::Integration {
                        t,
                        reason: "step size underflow",
                    });
                }
            }
        }
        Ok((y, out))
    }
}
