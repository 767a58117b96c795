//! Fixed-step fourth-order Runge–Kutta simulation of LPV trajectories.
//!
//! The integrator is deliberately plain: a fixed step keeps runs exactly
//! reproducible, and the classical RK4 error model (global error `O(dt⁴)`)
//! is easy to verify against matrix-exponential references.

use crate::error::{LpvError, Result};
use crate::model::GridLpvModel;
use crate::Vec64;

/// State magnitude beyond which a simulation is declared divergent.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// Sampled simulation output.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub t: Vec<f64>,
    pub y: Vec<Vec64>,
    /// Time at which the state magnitude crossed [`DIVERGENCE_GUARD`],
    /// if it did; samples stop there.
    pub diverged: Option<f64>,
}

impl SimOutput {
    /// Discrete L2 norm `sqrt(Σ ‖y_i‖² dt)`.
    pub fn l2_norm(&self, dt: f64) -> f64 {
        self.y.iter().map(|y| y.norm_squared()).sum::<f64>().sqrt() * dt.sqrt()
    }
}

/// Relative L2 discrepancy `‖y_a − y_b‖ / ‖y_a‖` between two runs sampled
/// on the same time base (compared over the shorter run).
pub fn relative_l2_discrepancy(a: &SimOutput, b: &SimOutput, dt: f64) -> f64 {
    let n = a.y.len().min(b.y.len());
    let mut diff = 0.0;
    let mut base = 0.0;
    for i in 0..n {
        diff += (&a.y[i] - &b.y[i]).norm_squared();
        base += a.y[i].norm_squared();
    }
    let _ = dt;
    if base == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff / base).sqrt()
    }
}

/// Integrates `ẋ = deriv(t, x)` with classical RK4, sampling
/// `output(t, x)` at every step (including `t = 0`).
pub fn rk4<F, G>(deriv: F, output: G, x0: Vec64, t_end: f64, dt: f64) -> SimOutput
where
    F: Fn(f64, &Vec64) -> Vec64,
    G: Fn(f64, &Vec64) -> Vec64,
{
    let steps = (t_end / dt).ceil() as usize;
    let mut t = Vec::with_capacity(steps + 1);
    let mut y = Vec::with_capacity(steps + 1);
    let mut x = x0;
    let mut time = 0.0;
    t.push(time);
    y.push(output(time, &x));
    for _ in 0..steps {
        let k1 = deriv(time, &x);
        let k2 = deriv(time + 0.5 * dt, &(&x + &k1 * (0.5 * dt)));
        let k3 = deriv(time + 0.5 * dt, &(&x + &k2 * (0.5 * dt)));
        let k4 = deriv(time + dt, &(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        time += dt;
        if x.iter().any(|v| !v.is_finite()) || x.norm() > DIVERGENCE_GUARD {
            return SimOutput { t, y, diverged: Some(time) };
        }
        t.push(time);
        y.push(output(time, &x));
    }
    SimOutput { t, y, diverged: None }
}

/// Triangular scheduling sweep between `lo` and `hi` at slope `±rate`,
/// the worst-case trajectory admitted by the rate bound.
#[derive(Debug, Clone, Copy)]
pub struct TriangleWave {
    pub lo: f64,
    pub hi: f64,
    pub rate: f64,
    /// Start at `lo` moving up (true) or at `hi` moving down.
    pub ascending: bool,
}

impl TriangleWave {
    /// Scheduling value and rate at time `t`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let span = self.hi - self.lo;
        if span <= 0.0 || self.rate <= 0.0 {
            return (self.lo, 0.0);
        }
        let half = span / self.rate;
        let period = 2.0 * half;
        let mut tau = t % period;
        if !self.ascending {
            tau = (tau + half) % period;
        }
        if tau < half {
            (self.lo + self.rate * tau, self.rate)
        } else {
            (self.hi - self.rate * (tau - half), -self.rate)
        }
    }

    /// Time of one full up-down period (infinite when degenerate).
    pub fn period(&self) -> f64 {
        let span = self.hi - self.lo;
        if span <= 0.0 || self.rate <= 0.0 {
            f64::INFINITY
        } else {
            2.0 * span / self.rate
        }
    }
}

/// Unit step on one input channel.
pub fn step_signal(n_u: usize, channel: usize) -> impl Fn(f64) -> Vec64 {
    move |_t| {
        let mut u = Vec64::zeros(n_u);
        u[channel] = 1.0;
        u
    }
}

/// Linear chirp `sin(2π(f0 t + (f1−f0)t²/(2T)))` on one input channel.
pub fn chirp_signal(n_u: usize, channel: usize, f0: f64, f1: f64, t_end: f64) -> impl Fn(f64) -> Vec64 {
    move |t| {
        let mut u = Vec64::zeros(n_u);
        let phase = 2.0 * std::f64::consts::PI * (f0 * t + 0.5 * (f1 - f0) * t * t / t_end);
        u[channel] = phase.sin();
        u
    }
}

/// Simulates a grid LPV model under an input signal and a scheduling
/// trajectory (`sched(t) -> ρ`, clipped to the grid range).
pub fn simulate_grid_model(
    model: &GridLpvModel,
    input: &dyn Fn(f64) -> Vec64,
    sched: &dyn Fn(f64) -> f64,
    x0: Vec64,
    t_end: f64,
    dt: f64,
) -> Result<SimOutput> {
    if !(dt > 0.0 && dt.is_finite() && t_end > 0.0 && t_end.is_finite()) {
        return Err(LpvError::InvalidConfig(format!(
            "simulation needs positive finite t_end and dt, got t_end={t_end}, dt={dt}"
        )));
    }
    let lo = model.rho_grid[0];
    let hi = *model.rho_grid.last().unwrap();
    let snap = |t: f64| -> Result<crate::model::LtiSnapshot> {
        let rho = sched(t).clamp(lo, hi);
        model.interpolate(rho)
    };
    // Grid interpolation cannot fail once the schedule is clamped, so the
    // closure below unwraps; probe once up front to surface config errors.
    snap(0.0)?;
    let deriv = |t: f64, x: &Vec64| {
        let s = snap(t).expect("clamped schedule stays on the grid");
        &s.a * x + &s.b * input(t)
    };
    let output = |t: f64, x: &Vec64| {
        let s = snap(t).expect("clamped schedule stays on the grid");
        &s.c * x + &s.d * input(t)
    };
    Ok(rk4(deriv, output, x0, t_end, dt))
}
