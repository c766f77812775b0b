//! Explicit Runge–Kutta integrators on flat state vectors.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Integrator choice shared by all flows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Integrator {
    /// Classical fourth-order Runge–Kutta; `dt = None` selects `min(1e-3, ε/10)`.
    Rk4Fixed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dt: Option<f64>,
    },
    /// Dormand–Prince 5(4) with mixed relative/absolute error control.
    Rk45Adaptive { rtol: f64, atol: f64 },
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::Rk4Fixed { dt: None }
    }
}

impl Integrator {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Integrator::Rk4Fixed { dt: Some(dt) } if !(dt > 0.0 && dt.is_finite()) => {
                Err(Error::Config(format!("rk4_fixed: dt must be positive, got {dt}")))
            }
            Integrator::Rk45Adaptive { rtol, atol } if !(rtol > 0.0 && atol > 0.0) => {
                Err(Error::Config("rk45_adaptive: tolerances must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Fixed step for `rk4_fixed` at the given ε.
    pub fn rk4_step(&self, epsilon: f64) -> f64 {
        match *self {
            Integrator::Rk4Fixed { dt: Some(dt) } => dt,
            _ => {
                if epsilon > 0.0 {
                    (epsilon / 10.0).min(1e-3)
                } else {
                    1e-3
                }
            }
        }
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` with classical RK4.
/// The observer sees every accepted step, including the initial state.
pub fn rk4<F, O>(mut f: F, t0: f64, y0: &[f64], t1: f64, dt: f64, mut observe: O) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64]),
{
    let mut f = |t: f64, y: &[f64], dy: &mut [f64]| f(t, y, dy).map_err(|e| e.at_time(t));
    let n = y0.len();
    let mut y = y0.to_vec();
    observe(t0, &y);
    if t1 == t0 {
        return Ok(y);
    }
    let steps = ((t1 - t0).abs() / dt).ceil().max(1.0) as usize;
    let h = (t1 - t0) / steps as f64;
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        f(t, &y, &mut k1)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        f(t + h, &tmp, &mut k4)?;
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let tn = if s + 1 == steps { t1 } else { t0 + (s + 1) as f64 * h };
        observe(tn, &y);
    }
    Ok(y)
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

/// Dormand–Prince 5(4) with first-same-as-last stages.
pub fn dopri5<F, O>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    rtol: f64,
    atol: f64,
    mut observe: O,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64]),
{
    let mut f = |t: f64, y: &[f64], dy: &mut [f64]| f(t, y, dy).map_err(|e| e.at_time(t));
    let n = y0.len();
    let mut y = y0.to_vec();
    observe(t0, &y);
    if t1 == t0 {
        return Ok(y);
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut t = t0;
    f(t, &y, &mut k[0])?;
    // Initial step from the usual norm heuristic.
    let sc = |y: &[f64], i: usize| atol + rtol * y[i].abs();
    let d0 = (y.iter().enumerate().map(|(i, v)| (v / sc(&y, i)).powi(2)).sum::<f64>() / n as f64).sqrt();
    let d1 = (k[0].iter().enumerate().map(|(i, v)| (v / sc(&y, i)).powi(2)).sum::<f64>() / n as f64).sqrt();
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(span);
    let mut steps = 0usize;
    while (t1 - t) * dir > 0.0 {
        steps += 1;
        if steps > 1_000_000 {
            return Err(Error::StepFailure { time: t, step: h });
        }
        let last = h >= (t1 - t).abs();
        let hs = if last { t1 - t } else { dir * h };
        let stage = |coeffs: &[(usize, f64)], y: &[f64], k: &[Vec<f64>], out: &mut [f64]| {
            for i in 0..n {
                out[i] = y[i] + hs * coeffs.iter().map(|&(j, a)| a * k[j][i]).sum::<f64>();
            }
        };
        stage(&[(0, A21)], &y, &k, &mut tmp);
        f(t + hs / 5.0, &tmp, &mut k[1])?;
        stage(&[(0, A31), (1, A32)], &y, &k, &mut tmp);
        f(t + 0.3 * hs, &tmp, &mut k[2])?;
        stage(&[(0, A41), (1, A42), (2, A43)], &y, &k, &mut tmp);
        f(t + 0.8 * hs, &tmp, &mut k[3])?;
        stage(&[(0, A51), (1, A52), (2, A53), (3, A54)], &y, &k, &mut tmp);
        f(t + 8.0 / 9.0 * hs, &tmp, &mut k[4])?;
        stage(&[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)], &y, &k, &mut tmp);
        f(t + hs, &tmp, &mut k[5])?;
        stage(&[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)], &y, &k, &mut ynew);
        f(t + hs, &ynew, &mut k[6])?;
        let mut err = 0.0;
        for i in 0..n {
            let e = hs
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            let s = atol + rtol * y[i].abs().max(ynew[i].abs());
            err += (e / s).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if err <= 1.0 {
            t = if last { t1 } else { t + hs };
            std::mem::swap(&mut y, &mut ynew);
            k.swap(0, 6);
            observe(t, &y);
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (hs.abs() * fac).min(span);
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepFailure { time: t, step: h });
        }
    }
    Ok(y)
}

/// Dispatches to the configured integrator.
pub fn solve<F, O>(integrator: &Integrator, epsilon: f64, f: F, t0: f64, y0: &[f64], t1: f64, observe: O) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64]),
{
    match *integrator {
        Integrator::Rk4Fixed { .. } => rk4(f, t0, y0, t1, integrator.rk4_step(epsilon), observe),
        Integrator::Rk45Adaptive { rtol, atol } => dopri5(f, t0, y0, t1, rtol, atol, observe),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn osc(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = y[1];
        dy[1] = -y[0];
        Ok(())
    }

    #[test]
    fn rk4_rotation() {
        let y = rk4(osc, 0.0, &[1.0, 0.0], std::f64::consts::FRAC_PI_2, 1e-3, |_, _| {}).unwrap();
        assert!(y[0].abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let exact = (2.0f64.cos(), -(2.0f64.sin()));
        let err = |dt: f64| {
            let y = rk4(osc, 0.0, &[1.0, 0.0], 2.0, dt, |_, _| {}).unwrap();
            ((y[0] - exact.0).powi(2) + (y[1] - exact.1).powi(2)).sqrt()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio.log2() - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn dopri_meets_tolerance_forward_and_backward() {
        let y = dopri5(osc, 0.0, &[1.0, 0.0], 3.0, 1e-11, 1e-12, |_, _| {}).unwrap();
        assert!((y[0] - 3f64.cos()).abs() < 1e-9 && (y[1] + 3f64.sin()).abs() < 1e-9);
        let back = dopri5(osc, 3.0, &y, 0.0, 1e-11, 1e-12, |_, _| {}).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-9 && back[1].abs() < 1e-9);
    }

    #[test]
    fn observer_sees_strictly_increasing_times() {
        let mut ts = vec![];
        dopri5(osc, 0.0, &[1.0, 0.0], 1.0, 1e-8, 1e-10, |t, _| ts.push(t)).unwrap();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*ts.last().unwrap(), 1.0);
    }

    #[test]
    fn failures_carry_time() {
        let r = rk4(
            |t, _y, _dy| {
                if t > 0.5 {
                    Err(Error::GapViolation {
                        gap: 0.0,
                        gap_min: 0.1,
                        at: Default::default(),
                    })
                } else {
                    Ok(())
                }
            },
            0.0,
            &[0.0],
            1.0,
            0.1,
            |_, _| {},
        );
        match r {
            Err(Error::GapViolation { at, .. }) => assert!(at.time.unwrap() > 0.5),
            other => panic!("{other:?}"),
        }
    }
}
