//! Samplers for the coupled process `(X_t, A_t)`.
//!
//! With `X_0 = 0` the process has the product form `X_t = sqrt(2 A_t) W_t`
//! with `A_t = Phi_{a0}(L_t^W)`, so a fixed-horizon marginal can be drawn
//! exactly from one joint sample of `(W_t, L_t^W)` — no time
//! discretization. Absorption inside the horizon is decided by the event
//! `{L_t >= l*}`, exact because local time is nondecreasing.
//!
//! The discrete scheme couples a simple random walk to a per-zero-visit
//! Euler update of the diffusivity; its product identity
//! `Xhat_k = sqrt(2 Ahat_k t/n) Y_k` holds bit-for-bit by construction.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::erf::erf;
use thiserror::Error;

use crate::brownian::{sample_joint_wl, BrownianError};
use crate::flow::{
    FlowError, FlowResult, LocalTimeFlow, PowerFlow, PowerLawDrive, HIGH_GUARD_FACTOR,
    LOW_GUARD_FACTOR,
};
use crate::rng::RngStream;

#[derive(Debug, Error, PartialEq)]
pub enum ProcessError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Brownian(#[from] BrownianError),
    #[error("starting point x0 must be nonzero here; use sample_exact for x0 = 0")]
    ZeroStart,
    #[error("survival probability requires sigma = -1 and gamma < 3/2 (it is identically 1 for gamma >= 3/2), got gamma = {0}")]
    SurvivalRegime(f64),
    #[error("step count must be >= 1")]
    NoSteps,
}

/// Liveness of the coupled process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Alive,
    /// Absorbed at `(0, 0)`.
    Trapped,
    /// Absorbed at `(0, inf)`.
    Exploded,
}

/// State of `(X_t, A_t)` at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessPoint {
    pub x: f64,
    pub a: f64,
    pub status: Status,
    pub t: f64,
}

impl ProcessPoint {
    pub fn alive(x: f64, a: f64, t: f64) -> Self {
        debug_assert!(a > 0.0 && a.is_finite());
        Self {
            x,
            a,
            status: Status::Alive,
            t,
        }
    }

    pub fn trapped(t: f64) -> Self {
        Self {
            x: 0.0,
            a: 0.0,
            status: Status::Trapped,
            t,
        }
    }

    pub fn exploded(t: f64) -> Self {
        Self {
            x: 0.0,
            a: f64::INFINITY,
            status: Status::Exploded,
            t,
        }
    }
}

/// Draw `(X_t, A_t)` exactly for `X_0 = 0` under a power drive.
pub fn sample_exact(
    drive: &PowerLawDrive,
    a0: f64,
    t: f64,
    rng: &mut impl Rng,
) -> Result<ProcessPoint, ProcessError> {
    let flow = PowerFlow::new(*drive, a0)?;
    sample_exact_flow(&flow, t, rng)
}

/// Draw `(X_t, A_t)` exactly for `X_0 = 0` under an arbitrary local-time
/// flow (e.g. [`crate::flow::ZeroFlow`] to freeze the diffusivity).
pub fn sample_exact_flow(
    flow: &impl LocalTimeFlow,
    t: f64,
    rng: &mut impl Rng,
) -> Result<ProcessPoint, ProcessError> {
    let joint = sample_joint_wl(t, rng)?;
    point_from_joint(flow, joint.w, joint.l, t)
}

fn point_from_joint(
    flow: &impl LocalTimeFlow,
    w: f64,
    l: f64,
    t: f64,
) -> Result<ProcessPoint, ProcessError> {
    if l >= flow.exit_local_time() {
        // Local time is nondecreasing, so crossing l* inside the horizon
        // is exactly the event {L_t >= l*}.
        return Ok(match flow.at(flow.exit_local_time()) {
            FlowResult::ExhaustedHigh => ProcessPoint::exploded(t),
            _ => ProcessPoint::trapped(t),
        });
    }
    match flow.at(l) {
        FlowResult::Alive(a) => Ok(ProcessPoint::alive((2.0 * a).sqrt() * w, a, t)),
        FlowResult::ExhaustedLow => Ok(ProcessPoint::trapped(t)),
        FlowResult::ExhaustedHigh => Ok(ProcessPoint::exploded(t)),
    }
}

/// Parallel ensemble of exact draws, one substream per sample.
pub fn exact_ensemble(
    drive: &PowerLawDrive,
    a0: f64,
    t: f64,
    m: usize,
    stream: RngStream,
) -> Result<Vec<ProcessPoint>, ProcessError> {
    let flow = PowerFlow::new(*drive, a0)?;
    Ok((0..m as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream.substream(k).rng();
            sample_exact_flow(&flow, t, &mut rng).expect("inputs validated")
        })
        .collect())
}

/// Update rule of the discrete scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeMode {
    /// `Ahat += f(Ahat)/sqrt(2 Ahat) * sqrt(t/n)` at each zero — converges
    /// to the canonical flow of the stochastic system. Default.
    SdeConsistent,
    /// `Ahat += f(Ahat) * sqrt(t/n)` at each zero — the unnormalized
    /// update, which converges to the flow of `y' = f(y)` instead.
    Unnormalized,
}

/// One trajectory of the discrete scheme.
#[derive(Debug, Clone)]
pub struct DiscreteTrajectory {
    /// `xs[k] = Xhat_k = sqrt(2 Ahat_k t/n) Y_k`.
    pub xs: Vec<f64>,
    /// `a_path[k] = Ahat_k` (0 after trapping, `inf` after explosion).
    pub a_path: Vec<f64>,
    /// Underlying walk positions `Y_k`.
    pub ys: Vec<i64>,
    pub t: f64,
    pub n: usize,
    pub mode: SchemeMode,
    pub status: Status,
    /// Step index at which the diffusivity left the guards, if any.
    pub absorbed_at: Option<usize>,
}

impl DiscreteTrajectory {
    pub fn endpoint(&self) -> ProcessPoint {
        match self.status {
            Status::Alive => {
                ProcessPoint::alive(*self.xs.last().unwrap(), *self.a_path.last().unwrap(), self.t)
            }
            Status::Trapped => ProcessPoint::trapped(self.t),
            Status::Exploded => ProcessPoint::exploded(self.t),
        }
    }
}

#[inline]
fn scheme_update(f: &impl Fn(f64) -> f64, mode: SchemeMode, a: f64, sqrt_dt: f64) -> f64 {
    match mode {
        SchemeMode::SdeConsistent => a + f(a) / (2.0 * a).sqrt() * sqrt_dt,
        SchemeMode::Unnormalized => a + f(a) * sqrt_dt,
    }
}

/// Simulate the discrete scheme for a general drive `f`.
pub fn simulate_discrete(
    f: impl Fn(f64) -> f64,
    a0: f64,
    t: f64,
    n: usize,
    mode: SchemeMode,
    rng: &mut impl Rng,
) -> Result<DiscreteTrajectory, ProcessError> {
    if n == 0 {
        return Err(ProcessError::NoSteps);
    }
    if !(a0 > 0.0) {
        return Err(FlowError::NonPositiveStart(a0).into());
    }
    if !(t > 0.0) {
        return Err(BrownianError::NonPositiveHorizon(t).into());
    }
    let dt = t / n as f64;
    let sqrt_dt = dt.sqrt();
    let low = LOW_GUARD_FACTOR * a0;
    let high = HIGH_GUARD_FACTOR * a0;

    let mut ys = Vec::with_capacity(n + 1);
    let mut a_path = Vec::with_capacity(n + 1);
    let mut xs = Vec::with_capacity(n + 1);
    ys.push(0i64);
    a_path.push(a0);
    xs.push(0.0);

    let mut y = 0i64;
    let mut a = a0;
    let mut status = Status::Alive;
    let mut absorbed_at = None;
    let mut bits: u64 = 0;
    for k in 0..n {
        if status == Status::Alive {
            if k % 64 == 0 {
                bits = rng.random();
            }
            y += if bits & 1 == 1 { 1 } else { -1 };
            bits >>= 1;
            if y == 0 {
                a = scheme_update(&f, mode, a, sqrt_dt);
                if !(a > low) || !a.is_finite() {
                    status = if a.is_finite() && a >= high {
                        Status::Exploded
                    } else {
                        Status::Trapped
                    };
                    absorbed_at = Some(k + 1);
                } else if a >= high {
                    status = Status::Exploded;
                    absorbed_at = Some(k + 1);
                }
            }
        }
        match status {
            Status::Alive => {
                ys.push(y);
                a_path.push(a);
                xs.push((2.0 * a * dt).sqrt() * y as f64);
            }
            Status::Trapped => {
                ys.push(y);
                a_path.push(0.0);
                xs.push(0.0);
            }
            Status::Exploded => {
                ys.push(y);
                a_path.push(f64::INFINITY);
                xs.push(0.0);
            }
        }
    }
    Ok(DiscreteTrajectory {
        xs,
        a_path,
        ys,
        t,
        n,
        mode,
        status,
        absorbed_at,
    })
}

/// Discrete scheme under a power drive.
pub fn simulate_discrete_power(
    drive: &PowerLawDrive,
    a0: f64,
    t: f64,
    n: usize,
    mode: SchemeMode,
    rng: &mut impl Rng,
) -> Result<DiscreteTrajectory, ProcessError> {
    let d = *drive;
    simulate_discrete(move |a| d.eval(a), a0, t, n, mode, rng)
}

/// Parallel ensemble of discrete-scheme endpoints.
pub fn discrete_endpoint_ensemble(
    drive: &PowerLawDrive,
    a0: f64,
    t: f64,
    n: usize,
    mode: SchemeMode,
    m: usize,
    stream: RngStream,
) -> Result<Vec<ProcessPoint>, ProcessError> {
    // Validate once up front so the parallel workers cannot fail.
    if n == 0 {
        return Err(ProcessError::NoSteps);
    }
    if !(a0 > 0.0) {
        return Err(FlowError::NonPositiveStart(a0).into());
    }
    if !(t > 0.0) {
        return Err(BrownianError::NonPositiveHorizon(t).into());
    }
    Ok((0..m as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream.substream(k).rng();
            simulate_discrete_power(drive, a0, t, n, mode, &mut rng)
                .expect("validated above")
                .endpoint()
        })
        .collect())
}

/// Streaming discrete run that only reports `Xhat` at `back_steps` steps
/// before the trapping step, for paths trapped in
/// `(back_steps, max_steps]`. Used by the reversed-time samplers.
pub fn discrete_x_before_trap(
    f: impl Fn(f64) -> f64,
    mode: SchemeMode,
    a0: f64,
    dt: f64,
    max_steps: usize,
    back_steps: usize,
    rng: &mut impl Rng,
) -> Option<f64> {
    let sqrt_dt = dt.sqrt();
    let low = LOW_GUARD_FACTOR * a0;
    let high = HIGH_GUARD_FACTOR * a0;
    // Ring buffer of the last back_steps + 1 positions.
    let len = back_steps + 1;
    let mut ring = vec![0.0f64; len];
    let mut y = 0i64;
    let mut a = a0;
    let mut bits: u64 = 0;
    for k in 1..=max_steps {
        if (k - 1) % 64 == 0 {
            bits = rng.random();
        }
        y += if bits & 1 == 1 { 1 } else { -1 };
        bits >>= 1;
        if y == 0 {
            a = scheme_update(&f, mode, a, sqrt_dt);
            if !(a > low) || !a.is_finite() || a >= high {
                return if k > back_steps {
                    Some(ring[(k - back_steps) % len])
                } else {
                    None
                };
            }
        }
        ring[k % len] = (2.0 * a * dt).sqrt() * y as f64;
    }
    None
}

/// Draw `(X_t, A_t)` exactly from a general start `x0 != 0`.
///
/// The first passage of `x0 + sqrt(2 a0) W` to 0 is
/// `zeta = x0^2 / (2 a0 N^2)` with `N` standard normal. If `zeta >= t` the
/// bridge has not hit the origin: the position is drawn from the no-hit
/// law by meander rejection (propose `N(x0, 2 a0 t)` restricted to the
/// starting side, accept with probability `1 - exp(-2 x0 y / (2 a0 t))` in
/// origin-shifted coordinates; the acceptance rate is about
/// `erf(|x0| / sqrt(4 a0 t)) / Phi(|x0| / sqrt(2 a0 t))`). Otherwise the
/// process restarts from `(0, a0)` over the remaining horizon.
pub fn sample_from_general_start(
    drive: &PowerLawDrive,
    x0: f64,
    a0: f64,
    t: f64,
    rng: &mut impl Rng,
) -> Result<ProcessPoint, ProcessError> {
    let flow = PowerFlow::new(*drive, a0)?;
    sample_from_general_start_flow(&flow, x0, t, rng)
}

/// General-start sampler for an arbitrary local-time flow.
pub fn sample_from_general_start_flow(
    flow: &impl LocalTimeFlow,
    x0: f64,
    t: f64,
    rng: &mut impl Rng,
) -> Result<ProcessPoint, ProcessError> {
    if x0 == 0.0 {
        return Err(ProcessError::ZeroStart);
    }
    if !(t > 0.0) {
        return Err(BrownianError::NonPositiveHorizon(t).into());
    }
    let a0 = flow.a0();
    let scale = (2.0 * a0).sqrt();
    let w0 = x0.abs() / scale;
    let n: f64 = rng.sample(StandardNormal);
    let zeta = w0 * w0 / (n * n);
    if zeta >= t {
        let y = crate::brownian::meander_value(w0, t, rng);
        Ok(ProcessPoint::alive(x0.signum() * scale * y, a0, t))
    } else {
        let restarted = sample_exact_flow(flow, t - zeta, rng)?;
        Ok(ProcessPoint { t, ..restarted })
    }
}

/// Survival probability `S(t) = P(L_t < l*) = erf(1/((3/2-gamma) sqrt(t)))`
/// for the decelerating drive with `a0 = 1` and `gamma < 3/2`.
pub fn survival_probability(drive: &PowerLawDrive, t: f64) -> Result<f64, ProcessError> {
    if drive.sigma() > 0.0 || drive.gamma() >= 1.5 {
        return Err(ProcessError::SurvivalRegime(drive.gamma()));
    }
    if !(t > 0.0) {
        return Err(BrownianError::NonPositiveHorizon(t).into());
    }
    Ok(erf(1.0 / ((1.5 - drive.gamma()) * t.sqrt())))
}

/// Long-time behavior classes of the coupled process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// sigma = -1, gamma < 3/2: absorbed at (0,0) in finite time.
    TrappedFiniteTime,
    /// sigma = -1, 3/2 <= gamma < 2: X -> 0 but keeps moving forever.
    DecaysNeverTrapped,
    /// sigma = -1, gamma >= 2: recurrent in R.
    Recurrent,
    /// sigma = +1, gamma >= 2: A explodes in finite time with X -> 0.
    ExplodesXToZero,
    /// sigma = +1, 3/2 < gamma < 2: A explodes with unbounded oscillation.
    ExplodesOscillating,
    /// sigma = +1, gamma <= 3/2: A grows forever, X spreads polynomially.
    GrowsForever,
}

/// Classification of a drive, with the rescaling exponent where the
/// rescaled limit laws apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeReport {
    pub drive: PowerLawDrive,
    pub regime: Regime,
    pub tau_finite: bool,
    /// `(2-gamma)/(3-2gamma)`, present for deceleration with gamma > 3/2
    /// and acceleration with gamma < 1.
    pub rate_exponent: Option<f64>,
}

pub fn classify_regime(drive: &PowerLawDrive) -> RegimeReport {
    let g = drive.gamma();
    let decel = drive.sigma() < 0.0;
    let regime = if decel {
        if g < 1.5 {
            Regime::TrappedFiniteTime
        } else if g < 2.0 {
            Regime::DecaysNeverTrapped
        } else {
            Regime::Recurrent
        }
    } else if g >= 2.0 {
        Regime::ExplodesXToZero
    } else if g > 1.5 {
        Regime::ExplodesOscillating
    } else {
        Regime::GrowsForever
    };
    let rate_exponent = if (decel && g > 1.5) || (!decel && g < 1.0) {
        Some((2.0 - g) / (3.0 - 2.0 * g))
    } else {
        None
    };
    RegimeReport {
        drive: *drive,
        regime,
        tau_finite: drive.sigma() * (1.5 - g) < 0.0,
        rate_exponent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::ZeroFlow;
    use crate::limits::ks_two_sample;
    use statrs::function::erf::erfc;

    #[test]
    fn frozen_drive_marginal_is_gaussian() {
        // f = 0: X_1 ~ N(0, 2). KS against scaled normal draws.
        let m = 100_000;
        let flow = ZeroFlow::new(1.0).unwrap();
        let s = RngStream::new(104, 0);
        let xs: Vec<f64> = (0..m)
            .map(|k| {
                let mut rng = s.substream(k).rng();
                sample_exact_flow(&flow, 1.0, &mut rng).unwrap().x
            })
            .collect();
        let mut rng = RngStream::new(104, 1).rng();
        let gauss: Vec<f64> = (0..m)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * 2f64.sqrt()
            })
            .collect();
        let r = ks_two_sample(&xs, &gauss).unwrap();
        assert!(r.d_statistic < r.critical_5pct, "KS {}", r.d_statistic);
    }

    #[test]
    fn trapped_fraction_matches_survival() {
        // sigma = -1, gamma = 0, t = 4: trapped fraction erfc(1/3).
        let drive = PowerLawDrive::deceleration(0.0).unwrap();
        let m = 100_000;
        let pts = exact_ensemble(&drive, 1.0, 4.0, m, RngStream::new(7, 0)).unwrap();
        let trapped = pts.iter().filter(|p| p.status == Status::Trapped).count() as f64 / m as f64;
        let p = erfc(1.0 / 3.0);
        let se = (p * (1.0 - p) / m as f64).sqrt();
        assert!(
            (trapped - p).abs() < 3.0 * se,
            "trapped {trapped} vs {p} (3se {})",
            3.0 * se
        );
        // Consistency with the survival formula.
        let s = survival_probability(&drive, 4.0).unwrap();
        assert!((s - (1.0 - p)).abs() < 1e-12);
    }

    #[test]
    fn short_horizon_stays_near_start() {
        let drive = PowerLawDrive::deceleration(1.0).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        for _ in 0..100 {
            let p = sample_exact(&drive, 1.0, 1e-12, &mut rng).unwrap();
            assert_eq!(p.status, Status::Alive);
            assert!(p.x.abs() < 1e-4);
            assert!((p.a - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn exploding_drive_reaches_absorbing_point() {
        // sigma = +1, gamma = 2: l* = 2 sqrt(2); large horizons explode
        // with probability erfc(l*/sqrt(2t)).
        let drive = PowerLawDrive::acceleration(2.0).unwrap();
        let m = 20_000;
        let t = 100.0;
        let pts = exact_ensemble(&drive, 1.0, t, m, RngStream::new(9, 0)).unwrap();
        let exploded = pts.iter().filter(|p| p.status == Status::Exploded).count() as f64 / m as f64;
        let p = erfc(2.0 * std::f64::consts::SQRT_2 / (2.0 * t).sqrt());
        let se = (p * (1.0 - p) / m as f64).sqrt();
        assert!(
            (exploded - p).abs() < 3.0 * se,
            "exploded {exploded} vs {p}"
        );
        assert!(pts
            .iter()
            .all(|p| p.status != Status::Exploded || (p.x == 0.0 && p.a.is_infinite())));
    }

    #[test]
    fn single_step_scheme_takes_sqrt2_steps() {
        let drive = PowerLawDrive::deceleration(1.0).unwrap();
        let m = 2000;
        let s = RngStream::new(21, 0);
        let mut plus = 0;
        for k in 0..m {
            let mut rng = s.substream(k).rng();
            let traj =
                simulate_discrete_power(&drive, 1.0, 1.0, 1, SchemeMode::SdeConsistent, &mut rng)
                    .unwrap();
            let x = traj.xs[1];
            assert!(
                (x.abs() - std::f64::consts::SQRT_2).abs() < 1e-12,
                "got {x}"
            );
            if x > 0.0 {
                plus += 1;
            }
        }
        let frac = plus as f64 / m as f64;
        assert!((frac - 0.5).abs() < 3.0 * 0.5 / (m as f64).sqrt());
    }

    #[test]
    fn frozen_drive_keeps_diffusivity() {
        let mut rng = RngStream::new(4, 0).rng();
        let traj =
            simulate_discrete(|_| 0.0, 2.0, 1.0, 500, SchemeMode::SdeConsistent, &mut rng).unwrap();
        assert!(traj.a_path.iter().all(|&a| a == 2.0));
    }

    #[test]
    fn product_form_holds_bitwise() {
        let drive = PowerLawDrive::deceleration(0.5).unwrap();
        let mut rng = RngStream::new(8, 0).rng();
        let traj =
            simulate_discrete_power(&drive, 1.0, 2.0, 4000, SchemeMode::SdeConsistent, &mut rng)
                .unwrap();
        let dt = traj.t / traj.n as f64;
        let absorbed = traj.absorbed_at.unwrap_or(usize::MAX);
        for k in 0..=traj.n {
            if k < absorbed {
                let expect = (2.0 * traj.a_path[k] * dt).sqrt() * traj.ys[k] as f64;
                assert_eq!(traj.xs[k], expect, "mismatch at step {k}");
                // Zero coupling both ways.
                assert_eq!(traj.xs[k] == 0.0, traj.ys[k] == 0);
            } else {
                assert_eq!(traj.xs[k], 0.0);
            }
        }
    }

    #[test]
    fn unnormalized_diffusivity_is_euler_flow_at_discrete_local_time() {
        // In the unnormalized mode, Ahat_k equals the plain Euler
        // recursion for y' = f(y) with step sqrt(t/n), evaluated at the
        // number of zeros so far — bit for bit.
        let drive = PowerLawDrive::deceleration(1.0).unwrap();
        let mut rng = RngStream::new(19, 0).rng();
        let (t, n) = (2.0, 3000);
        let traj =
            simulate_discrete_power(&drive, 1.0, t, n, SchemeMode::Unnormalized, &mut rng)
                .unwrap();
        let sqrt_dt = (t / n as f64).sqrt();
        let mut zeros = 0usize;
        for k in 1..=traj.n {
            if traj.absorbed_at.is_some_and(|at| k >= at) {
                break;
            }
            zeros += (traj.ys[k] == 0) as usize;
            let expect = crate::flow::euler_flow(|a| drive.eval(a), sqrt_dt, zeros, 1.0)
                .unwrap()
                .value()
                .unwrap();
            assert_eq!(traj.a_path[k], expect, "step {k}");
        }
    }

    #[test]
    fn diffusivity_changes_only_at_zeros() {
        let drive = PowerLawDrive::acceleration(1.0).unwrap();
        let mut rng = RngStream::new(12, 0).rng();
        let traj =
            simulate_discrete_power(&drive, 1.0, 1.0, 2000, SchemeMode::SdeConsistent, &mut rng)
                .unwrap();
        for k in 1..=traj.n {
            if traj.ys[k] != 0 {
                assert_eq!(traj.a_path[k], traj.a_path[k - 1]);
            }
        }
    }

    #[test]
    fn absorbing_state_is_permanent() {
        let drive = PowerLawDrive::deceleration(0.0).unwrap();
        let s = RngStream::new(33, 0);
        let mut seen_trap = false;
        for k in 0..200 {
            let mut rng = s.substream(k).rng();
            let traj =
                simulate_discrete_power(&drive, 1.0, 8.0, 2000, SchemeMode::SdeConsistent, &mut rng)
                    .unwrap();
            if let Some(at) = traj.absorbed_at {
                seen_trap = true;
                assert_eq!(traj.status, Status::Trapped);
                for k in at..=traj.n {
                    assert_eq!(traj.xs[k], 0.0);
                    assert_eq!(traj.a_path[k], 0.0);
                }
            }
        }
        assert!(seen_trap, "expected some trapped paths at t = 8");
    }

    #[test]
    fn discrete_trapped_fraction_matches_exact() {
        // sigma = -1, gamma = 0, t = 4, n = 1e4: the scheme's trapped
        // fraction sits within 3 binomial standard errors of erfc(1/3).
        let drive = PowerLawDrive::deceleration(0.0).unwrap();
        let m = 10_000;
        let pts = discrete_endpoint_ensemble(
            &drive,
            1.0,
            4.0,
            10_000,
            SchemeMode::SdeConsistent,
            m,
            RngStream::new(14, 0),
        )
        .unwrap();
        let trapped = pts.iter().filter(|p| p.status == Status::Trapped).count() as f64 / m as f64;
        let p = erfc(1.0 / 3.0);
        let se = (p * (1.0 - p) / m as f64).sqrt();
        assert!(
            (trapped - p).abs() < 3.0 * se,
            "trapped {trapped} vs {p} (3se {})",
            3.0 * se
        );
    }

    #[test]
    fn general_start_keeps_diffusivity_before_first_hit() {
        // t << x0^2/(2 a0): the origin is almost never reached.
        let drive = PowerLawDrive::deceleration(0.0).unwrap();
        let s = RngStream::new(40, 0);
        let m = 5000;
        let mut alive_at_a0 = 0;
        for k in 0..m {
            let mut rng = s.substream(k).rng();
            let p = sample_from_general_start(&drive, 4.0, 1.0, 1e-3, &mut rng).unwrap();
            if p.status == Status::Alive && p.a == 1.0 {
                alive_at_a0 += 1;
            }
        }
        assert_eq!(alive_at_a0, m);
    }

    #[test]
    fn general_start_frozen_marginal() {
        // f = 0 from x0: X_t ~ N(x0, 2 a0 t).
        let flow = ZeroFlow::new(0.5).unwrap();
        let s = RngStream::new(41, 0);
        let m = 30_000;
        let (x0, t) = (0.7, 2.0);
        let xs: Vec<f64> = (0..m)
            .map(|k| {
                let mut rng = s.substream(k).rng();
                sample_from_general_start_flow(&flow, x0, t, &mut rng).unwrap().x
            })
            .collect();
        let mut rng = RngStream::new(41, 1).rng();
        let gauss: Vec<f64> = (0..m)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                x0 + z * (2.0 * 0.5 * t).sqrt()
            })
            .collect();
        let r = ks_two_sample(&xs, &gauss).unwrap();
        assert!(r.d_statistic < r.critical_5pct, "KS {}", r.d_statistic);
    }

    #[test]
    fn general_start_trapping_matches_pathwise_discrete() {
        // Long horizon: trapped fraction from x0 = 1 against a discrete
        // pathwise run started at the nearest walk lattice point.
        let drive = PowerLawDrive::deceleration(0.0).unwrap();
        let (x0, a0, t) = (1.0f64, 1.0f64, 16.0f64);
        let m = 8000;
        let s = RngStream::new(42, 0);
        let exact_trapped = (0..m)
            .filter(|&k| {
                let mut rng = s.substream(k).rng();
                sample_from_general_start(&drive, x0, a0, t, &mut rng).unwrap().status
                    == Status::Trapped
            })
            .count() as f64
            / m as f64;

        // Test-side oracle: step the walk from the lattice point nearest
        // x0/sqrt(2 a0 dt), updating the diffusivity at zero visits.
        let n = 10_000usize;
        let dt = t / n as f64;
        let sqrt_dt = dt.sqrt();
        let s2 = RngStream::new(42, 1);
        let discrete_trapped = (0..m)
            .filter(|&kk| {
                let mut rng = s2.substream(kk).rng();
                let mut y = (x0 / (2.0 * a0 * dt).sqrt()).round() as i64;
                let mut a = a0;
                let mut bits = 0u64;
                for k in 0..n {
                    if k % 64 == 0 {
                        bits = rng.random();
                    }
                    y += if bits & 1 == 1 { 1 } else { -1 };
                    bits >>= 1;
                    if y == 0 {
                        a -= 1.0 / (2.0 * a).sqrt() * sqrt_dt;
                        if a <= 0.0 {
                            return true;
                        }
                    }
                }
                false
            })
            .count() as f64
            / m as f64;
        let se = (exact_trapped * (1.0 - exact_trapped) / m as f64).sqrt();
        assert!(
            (exact_trapped - discrete_trapped).abs() < 5.0 * se + 0.01,
            "exact {exact_trapped} vs discrete {discrete_trapped}"
        );
    }

    #[test]
    fn survival_limits_and_values() {
        let drive = PowerLawDrive::deceleration(0.5).unwrap();
        assert!((survival_probability(&drive, 1e-8).unwrap() - 1.0).abs() < 1e-12);
        // erf(1) against a Simpson quadrature of the normal density.
        let s1 = survival_probability(&drive, 1.0).unwrap();
        let oracle = normal_prob_within(1.0 * std::f64::consts::SQRT_2);
        assert!((s1 - oracle).abs() < 1e-9, "{s1} vs {oracle}");
        // Large-time asymptotics for gamma = 0.
        let d0 = PowerLawDrive::deceleration(0.0).unwrap();
        let s = survival_probability(&d0, 1e4).unwrap();
        let asym = 2.0 / (1.5 * (std::f64::consts::PI * 1e4).sqrt());
        assert!(((s - asym) / s).abs() < 1e-3, "{s} vs {asym}");
        // Out of regime.
        assert!(survival_probability(&PowerLawDrive::deceleration(1.5).unwrap(), 1.0).is_err());
        assert!(survival_probability(&PowerLawDrive::acceleration(0.5).unwrap(), 1.0).is_err());
    }

    /// P(|Z| <= z) for standard normal Z by Simpson quadrature.
    fn normal_prob_within(z: f64) -> f64 {
        let f = |x: f64| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let n = 4096;
        let h = 2.0 * z / n as f64;
        let mut acc = f(-z) + f(z);
        for i in 1..n {
            let x = -z + i as f64 * h;
            acc += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn regime_table() {
        use Regime::*;
        let cases: Vec<(i8, f64, Regime, bool)> = vec![
            (-1, 1.0, TrappedFiniteTime, true),
            (-1, 0.0, TrappedFiniteTime, true),
            (-1, 1.5, DecaysNeverTrapped, false),
            (-1, 1.75, DecaysNeverTrapped, false),
            (-1, 2.0, Recurrent, false),
            (1, 2.0, ExplodesXToZero, true),
            (1, 1.75, ExplodesOscillating, true),
            (1, 1.5, GrowsForever, false),
            (1, 0.0, GrowsForever, false),
        ];
        for (sigma, gamma, regime, tau_finite) in cases {
            let r = classify_regime(&PowerLawDrive::new(sigma, gamma).unwrap());
            assert_eq!(r.regime, regime, "sigma {sigma} gamma {gamma}");
            assert_eq!(r.tau_finite, tau_finite, "sigma {sigma} gamma {gamma}");
        }
        let r = classify_regime(&PowerLawDrive::acceleration(0.0).unwrap());
        assert!((r.rate_exponent.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let r = classify_regime(&PowerLawDrive::deceleration(1.0).unwrap());
        assert!(r.rate_exponent.is_none());
    }
}
