//! Explicit Runge-Kutta integration with dense output.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::DomainBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("right-hand side is not finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("right-hand side failed at t = {t}: {message}")]
    Rhs { t: f64, message: String },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Method {
    /// Classical fourth-order Runge-Kutta with a fixed step.
    Rk4 { step: f64 },
    /// Runge-Kutta-Fehlberg 4(5), advancing with the fifth-order solution.
    Rkf45 {
        abs_tol: f64,
        rel_tol: f64,
        max_steps: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    pub method: Method,
    /// Box the state must stay in; leaving it ends the integration early.
    pub guard_box: Option<DomainBox>,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig {
            method: Method::Rkf45 {
                abs_tol: 1e-10,
                rel_tol: 1e-10,
                max_steps: 1_000_000,
            },
            guard_box: None,
        }
    }
}

impl OdeConfig {
    pub fn rk4(step: f64) -> Self {
        OdeConfig {
            method: Method::Rk4 { step },
            guard_box: None,
        }
    }

    pub fn with_guard(mut self, guard: DomainBox) -> Self {
        self.guard_box = Some(guard);
        self
    }

    fn validate(&self) -> Result<(), OdeError> {
        match self.method {
            Method::Rk4 { step } if !(step > 0.0 && step.is_finite()) => {
                Err(OdeError::Config("step must be positive"))
            }
            Method::Rkf45 {
                abs_tol,
                rel_tol,
                max_steps,
            } => {
                if !(abs_tol > 0.0 && rel_tol > 0.0) {
                    Err(OdeError::Config("tolerances must be positive"))
                } else if max_steps == 0 {
                    Err(OdeError::Config("max_steps must be at least 1"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum Termination {
    Completed,
    /// The state left the guard box; `t` is the interpolated exit time.
    LeftGuardBox {
        t: f64,
    },
    StepLimit {
        t: f64,
    },
}

/// Accepted steps of an integration.
///
/// Times run in the integration direction and start at `t0` with the
/// initial state stored bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn completed(&self) -> bool {
        self.termination == Termination::Completed
    }

    pub fn t_end(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory has its initial sample")
    }

    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory has its initial sample")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn forward(&self) -> bool {
        self.times.len() < 2 || self.times[1] > self.times[0]
    }

    /// Cubic Hermite interpolation between accepted steps.
    /// `None` outside the covered time range.
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        let (first, last) = (self.times[0], self.t_end());
        let (lo, hi) = if first <= last {
            (first, last)
        } else {
            (last, first)
        };
        if t < lo || t > hi {
            return None;
        }
        if t == first {
            return Some(self.states[0].clone());
        }
        let k = if self.forward() {
            self.times.partition_point(|&s| s < t)
        } else {
            self.times.partition_point(|&s| s > t)
        };
        let k = k.clamp(1, self.times.len() - 1);
        Some(hermite(
            self.times[k - 1],
            &self.states[k - 1],
            &self.derivs[k - 1],
            self.times[k],
            &self.states[k],
            &self.derivs[k],
            t,
        ))
    }

    /// Per-coordinate minimum and maximum over the stored samples.
    pub fn range(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.states[0].len();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for s in &self.states {
            for i in 0..d {
                lo[i] = lo[i].min(s[i]);
                hi[i] = hi[i].max(s[i]);
            }
        }
        (lo, hi)
    }

    /// `t,y1,...,yd` rows with a header line.
    pub fn to_csv(&self) -> String {
        let d = self.states.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 1..=d {
            let _ = write!(out, ",y{i}");
        }
        out.push('\n');
        for (t, y) in self.times.iter().zip(&self.states) {
            let _ = write!(out, "{t}");
            for v in y {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn hermite(ta: f64, ya: &[f64], fa: &[f64], tb: f64, yb: &[f64], fb: &[f64], t: f64) -> Vec<f64> {
    let h = tb - ta;
    let s = (t - ta) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    (0..ya.len())
        .map(|i| h00 * ya[i] + h10 * h * fa[i] + h01 * yb[i] + h11 * h * fb[i])
        .collect()
}

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    (0..y.len())
        .map(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
        .collect()
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t1`.
///
/// `t1 < t0` runs in reverse. A right-hand side that fails inside an
/// adaptive step makes the step shrink; a failure that persists down to
/// step underflow is returned.
pub fn integrate<F, E>(
    rhs: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    cfg: &OdeConfig,
) -> Result<Trajectory, OdeError>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>, E>,
    E: std::fmt::Display,
{
    cfg.validate()?;
    if !(t0.is_finite() && t1.is_finite()) || !finite(y0) {
        return Err(OdeError::Config("non-finite initial data"));
    }
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let call = |t: f64, y: &[f64]| -> Result<Vec<f64>, OdeError> {
        let v = rhs(t, y).map_err(|e| OdeError::Rhs {
            t,
            message: e.to_string(),
        })?;
        if finite(&v) {
            Ok(v)
        } else {
            Err(OdeError::NonFinite { t })
        }
    };
    let f0 = call(t0, y0)?;
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![y0.to_vec()],
        derivs: vec![f0],
        termination: Termination::Completed,
    };
    if t1 == t0 {
        return Ok(traj);
    }
    let span = (t1 - t0).abs();
    match cfg.method {
        Method::Rk4 { step } => {
            let steps = (span / step).ceil().max(1.0) as usize;
            for k in 0..steps {
                let t = traj.t_end();
                let tn = if k + 1 == steps {
                    t1
                } else {
                    t0 + dir * step * (k + 1) as f64
                };
                let h = tn - t;
                let y = traj.final_state().to_vec();
                let k1 = traj.derivs.last().unwrap().clone();
                let k2 = call(t + 0.5 * h, &axpy(&y, h, &[(0.5, &k1)]))?;
                let k3 = call(t + 0.5 * h, &axpy(&y, h, &[(0.5, &k2)]))?;
                let k4 = call(t + h, &axpy(&y, h, &[(1.0, &k3)]))?;
                let yn = axpy(
                    &y,
                    h,
                    &[
                        (1.0 / 6.0, &k1),
                        (1.0 / 3.0, &k2),
                        (1.0 / 3.0, &k3),
                        (1.0 / 6.0, &k4),
                    ],
                );
                if !finite(&yn) {
                    return Err(OdeError::NonFinite { t: tn });
                }
                if accept(&mut traj, cfg, tn, yn, &call)? {
                    return Ok(traj);
                }
            }
            Ok(traj)
        }
        Method::Rkf45 {
            abs_tol,
            rel_tol,
            max_steps,
        } => {
            let mut h = dir * (0.01 * span).min(0.1_f64.max(1e-3 * span));
            let mut attempts = 0usize;
            loop {
                let t = traj.t_end();
                if t == t1 {
                    return Ok(traj);
                }
                if attempts >= max_steps {
                    traj.termination = Termination::StepLimit { t };
                    return Ok(traj);
                }
                attempts += 1;
                let remaining = t1 - t;
                let last = h.abs() >= remaining.abs();
                if last {
                    h = remaining;
                }
                let min_h = 1e-14 * t.abs().max(span).max(1.0);
                if h.abs() < min_h {
                    return Err(OdeError::StepUnderflow { t });
                }
                let y = traj.final_state().to_vec();
                let k1 = traj.derivs.last().unwrap().clone();
                let stages = fehlberg_stages(&call, t, &y, &k1, h);
                let (y5, err) = match stages {
                    Ok(v) => v,
                    Err(e @ OdeError::Rhs { .. }) | Err(e @ OdeError::NonFinite { .. }) => {
                        h *= 0.25;
                        if h.abs() < min_h {
                            return Err(e);
                        }
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let scale = |i: usize| abs_tol + rel_tol * y[i].abs().max(y5[i].abs());
                let ratio = err
                    .iter()
                    .enumerate()
                    .map(|(i, e)| e.abs() / scale(i))
                    .fold(0.0, f64::max);
                if !ratio.is_finite() {
                    h *= 0.25;
                    continue;
                }
                let factor = if ratio == 0.0 {
                    5.0
                } else {
                    (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
                };
                if ratio <= 1.0 {
                    let tn = if last { t1 } else { t + h };
                    if accept(&mut traj, cfg, tn, y5, &call)? {
                        return Ok(traj);
                    }
                }
                h *= factor;
            }
        }
    }
}

fn fehlberg_stages<C>(
    call: &C,
    t: f64,
    y: &[f64],
    k1: &[f64],
    h: f64,
) -> Result<(Vec<f64>, Vec<f64>), OdeError>
where
    C: Fn(f64, &[f64]) -> Result<Vec<f64>, OdeError>,
{
    let k2 = call(t + h / 4.0, &axpy(y, h, &[(1.0 / 4.0, k1)]))?;
    let k3 = call(
        t + 3.0 * h / 8.0,
        &axpy(y, h, &[(3.0 / 32.0, k1), (9.0 / 32.0, &k2)]),
    )?;
    let k4 = call(
        t + 12.0 * h / 13.0,
        &axpy(
            y,
            h,
            &[
                (1932.0 / 2197.0, k1),
                (-7200.0 / 2197.0, &k2),
                (7296.0 / 2197.0, &k3),
            ],
        ),
    )?;
    let k5 = call(
        t + h,
        &axpy(
            y,
            h,
            &[
                (439.0 / 216.0, k1),
                (-8.0, &k2),
                (3680.0 / 513.0, &k3),
                (-845.0 / 4104.0, &k4),
            ],
        ),
    )?;
    let k6 = call(
        t + h / 2.0,
        &axpy(
            y,
            h,
            &[
                (-8.0 / 27.0, k1),
                (2.0, &k2),
                (-3544.0 / 2565.0, &k3),
                (1859.0 / 4104.0, &k4),
                (-11.0 / 40.0, &k5),
            ],
        ),
    )?;
    let y5 = axpy(
        y,
        h,
        &[
            (16.0 / 135.0, k1),
            (6656.0 / 12825.0, &k3),
            (28561.0 / 56430.0, &k4),
            (-9.0 / 50.0, &k5),
            (2.0 / 55.0, &k6),
        ],
    );
    // difference between the fifth- and fourth-order weights
    let err: Vec<f64> = (0..y.len())
        .map(|i| {
            h * ((16.0 / 135.0 - 25.0 / 216.0) * k1[i]
                + (6656.0 / 12825.0 - 1408.0 / 2565.0) * k3[i]
                + (28561.0 / 56430.0 - 2197.0 / 4104.0) * k4[i]
                + (-9.0 / 50.0 + 1.0 / 5.0) * k5[i]
                + (2.0 / 55.0) * k6[i])
        })
        .collect();
    if !finite(&y5) {
        return Err(OdeError::NonFinite { t: t + h });
    }
    Ok((y5, err))
}

/// Stores an accepted step. Returns `true` when integration must stop
/// because the guard box was left.
fn accept<C>(
    traj: &mut Trajectory,
    cfg: &OdeConfig,
    tn: f64,
    yn: Vec<f64>,
    call: &C,
) -> Result<bool, OdeError>
where
    C: Fn(f64, &[f64]) -> Result<Vec<f64>, OdeError>,
{
    if let Some(guard) = &cfg.guard_box {
        if !guard.contains_closed(&yn) {
            let t_exit = exit_time(traj, guard, tn, &yn);
            traj.termination = Termination::LeftGuardBox { t: t_exit };
            return Ok(true);
        }
    }
    let fnew = call(tn, &yn)?;
    traj.times.push(tn);
    traj.states.push(yn);
    traj.derivs.push(fnew);
    Ok(false)
}

fn exit_time(traj: &Trajectory, guard: &DomainBox, tn: f64, yn: &[f64]) -> f64 {
    // linear interpolation in the state is enough to locate the crossing
    let (ta, ya) = (traj.t_end(), traj.final_state());
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let y: Vec<f64> = ya.iter().zip(yn).map(|(a, b)| a + mid * (b - a)).collect();
        if guard.contains_closed(&y) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    ta + hi * (tn - ta)
}
