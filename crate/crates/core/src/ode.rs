//! Dormand-Prince 5(4) stepper with a PI step-size controller.
//!
//! The stepper only advances one step at a time; drivers own the loop so they
//! can rewind, resize the state, or stop at output times.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepControl {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    /// Steps below this size abort the integration.
    pub min_step: f64,
    pub safety: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            max_step: f64::INFINITY,
            min_step: 1e-14,
            safety: 0.9,
            alpha: 0.17,
            beta: 0.04,
        }
    }
}

/// Step-size memory of the controller; enough to resume deterministically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub h: f64,
    pub err_prev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Accepted { t: f64, h_used: f64 },
    Rejected { h_next: f64 },
}

#[derive(Debug, Clone, Default)]
pub struct StepStats {
    pub rhs_calls: usize,
    pub accepted: usize,
    pub rejected: usize,
}

pub struct Dopri5 {
    ctl: StepControl,
    mem: ControllerState,
    k: [Vec<f64>; 7],
    /// `k[0]` holds f(t, y) for the current `(t, y)`.
    fsal_valid: bool,
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    pub stats: StepStats,
}

impl Dopri5 {
    pub fn new(ctl: StepControl, h0: f64) -> Self {
        Self {
            ctl,
            mem: ControllerState { h: h0, err_prev: 1e-4 },
            k: Default::default(),
            fsal_valid: false,
            ytmp: Vec::new(),
            ynew: Vec::new(),
            stats: StepStats::default(),
        }
    }

    pub fn control(&self) -> &StepControl {
        &self.ctl
    }

    pub fn memory(&self) -> ControllerState {
        self.mem
    }

    pub fn restore(&mut self, mem: ControllerState) {
        self.mem = mem;
        self.fsal_valid = false;
    }

    /// Must be called whenever the caller changes `y` between steps.
    pub fn invalidate(&mut self) {
        self.fsal_valid = false;
    }

    /// Derivative at the end of the last accepted step (the FSAL stage).
    pub fn last_derivative(&self) -> Option<&[f64]> {
        self.fsal_valid.then(|| self.k[0].as_slice())
    }

    /// Standard starting-step heuristic from two derivative evaluations.
    pub fn initial_step<F>(&mut self, f: &mut F, t: f64, y: &[f64], span: f64) -> Result<f64>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        let mut f0 = vec![0.0; n];
        f(t, y, &mut f0)?;
        self.stats.rhs_calls += 1;
        let sc: Vec<f64> = y.iter().map(|v| self.ctl.abs_tol + self.ctl.rel_tol * v.abs()).collect();
        let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
        let (d0, d1) = (rms(y), rms(&f0));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let mut h0 = h0.min(span.abs()).min(self.ctl.max_step);
        let mut f1 = vec![0.0; n];
        // the probe point may leave the domain of `f`; shrink until it does not
        let mut tries = 0;
        loop {
            let y1: Vec<f64> = y.iter().zip(&f0).map(|(a, b)| a + h0 * b).collect();
            self.stats.rhs_calls += 1;
            match f(t + h0, &y1, &mut f1) {
                Ok(()) => break,
                Err(e) if tries >= 30 => return Err(e),
                Err(_) => {
                    h0 *= 0.1;
                    tries += 1;
                }
            }
        }
        let diff: Vec<f64> = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
        let d2 = rms(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        let h = (100.0 * h0).min(h1).min(self.ctl.max_step).min(span.abs());
        self.k[0] = f0;
        self.fsal_valid = true;
        self.mem.h = h;
        Ok(h)
    }

    /// Attempts one step from `(t, y)` no further than `t_stop`. On
    /// acceptance `y` is overwritten with the new state. An error from `f`
    /// counts as a rejection with a strong step reduction.
    pub fn step<F>(&mut self, f: &mut F, t: f64, y: &mut Vec<f64>, t_stop: f64) -> Result<StepOutcome>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        for k in self.k.iter_mut() {
            k.resize(n, 0.0);
        }
        self.ytmp.resize(n, 0.0);
        self.ynew.resize(n, 0.0);
        let remaining = t_stop - t;
        if remaining <= 0.0 {
            return Err(Error::InvalidArgument(format!("step requested past stop time {t_stop} from {t}")));
        }
        let mut h = self.mem.h.min(self.ctl.max_step);
        // land exactly on t_stop, avoiding a sliver step afterwards
        let aligned = 1.01 * h >= remaining;
        if aligned {
            h = remaining;
        }
        if h < self.ctl.min_step && !aligned {
            return Err(Error::StepUnderflow { t, h });
        }

        if !self.fsal_valid {
            f(t, y, &mut self.k[0])?;
            self.stats.rhs_calls += 1;
            self.fsal_valid = true;
        }

        let mut failed = None;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, a) in A[s].iter().enumerate().take(s) {
                    if *a != 0.0 {
                        acc += a * self.k[j][i];
                    }
                }
                self.ytmp[i] = y[i] + h * acc;
            }
            self.stats.rhs_calls += 1;
            if let Err(e) = f(t + C[s] * h, &self.ytmp, &mut self.k[s]) {
                failed = Some(e);
                break;
            }
            if s == 6 {
                self.ynew.copy_from_slice(&self.ytmp);
            }
        }
        if let Some(e) = failed {
            self.stats.rejected += 1;
            let h_next = 0.25 * h;
            if h_next < self.ctl.min_step {
                return Err(e);
            }
            self.mem.h = h_next;
            return Ok(StepOutcome::Rejected { h_next });
        }

        let mut acc = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (j, c) in E.iter().enumerate() {
                if *c != 0.0 {
                    e += c * self.k[j][i];
                }
            }
            let sc = self.ctl.abs_tol + self.ctl.rel_tol * y[i].abs().max(self.ynew[i].abs());
            acc += (h * e / sc).powi(2);
        }
        let err = (acc / n.max(1) as f64).sqrt();

        if err.is_finite() && err <= 1.0 {
            let err = err.max(1e-10);
            let fac = self.ctl.safety * err.powf(-self.ctl.alpha) * self.mem.err_prev.powf(self.ctl.beta);
            let h_next = h * fac.clamp(0.2, 10.0);
            // a step cut short for alignment should not shrink the next one
            self.mem.h = if aligned { h_next.max(self.mem.h) } else { h_next };
            self.mem.err_prev = err.max(1e-4);
            std::mem::swap(y, &mut self.ynew);
            self.k.swap(0, 6);
            self.stats.accepted += 1;
            let t_new = if aligned { t_stop } else { t + h };
            Ok(StepOutcome::Accepted { t: t_new, h_used: h })
        } else {
            self.stats.rejected += 1;
            let fac = if err.is_finite() {
                (self.ctl.safety * err.powf(-0.2)).clamp(0.1, 1.0)
            } else {
                0.1
            };
            let h_next = h * fac;
            if h_next < self.ctl.min_step {
                return Err(Error::StepUnderflow { t, h: h_next });
            }
            self.mem.h = h_next;
            Ok(StepOutcome::Rejected { h_next })
        }
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t1`, stopping exactly at each of
/// `outputs` (sorted, inside the span) and handing the state to `observe`.
pub fn solve<F, O>(
    f: &mut F,
    t0: f64,
    t1: f64,
    y0: Vec<f64>,
    ctl: StepControl,
    outputs: &[f64],
    mut observe: O,
) -> Result<(Vec<f64>, StepStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64]) -> Result<()>,
{
    let mut y = y0;
    let mut stepper = Dopri5::new(ctl, 0.0);
    stepper.initial_step(f, t0, &y, t1 - t0)?;
    let mut t = t0;
    let mut targets: Vec<f64> = outputs.iter().copied().filter(|&s| s > t0 && s <= t1).collect();
    if targets.last().map_or(true, |&l| l < t1) {
        targets.push(t1);
    }
    if outputs.first() == Some(&t0) {
        observe(t0, &y)?;
    }
    for &target in &targets {
        while t < target {
            if let StepOutcome::Accepted { t: tn, .. } = stepper.step(f, t, &mut y, target)? {
                t = tn;
            }
        }
        if outputs.contains(&target) {
            observe(target, &y)?;
        }
    }
    Ok((y, stepper.stats))
}
