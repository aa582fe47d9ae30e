//! Deterministic flows driven by local time.
//!
//! The diffusivity process is `A_t = Phi_{A_0}(L_t^W)` where `Phi_x` is
//! the flow of the canonical law `y' = f(y)/sqrt(2y)`. For the power
//! drive `f(a) = sigma a^gamma` the flow is closed-form:
//!
//! ```text
//! Phi_{a0}(l) = a0 exp(sigma l / sqrt(2))                                   gamma = 3/2,
//! Phi_{a0}(l) = (a0^{3/2-gamma} + sigma (3/2-gamma) l / sqrt(2))^{1/(3/2-gamma)}  otherwise,
//! ```
//!
//! which exits `(0, inf)` at the finite local time `l* = sqrt(2)
//! a0^{3/2-gamma} / (sigma (gamma - 3/2))` exactly when
//! `sigma (3/2 - gamma) < 0`. The unnormalized law `y' = f(y)` is exposed
//! as an explicit mode ([`FlowLaw::Unnormalized`]); all quantitative
//! thresholds here are derived from the canonical law.

use thiserror::Error;

/// Numeric "exhausted" guards, relative to the starting point.
pub const LOW_GUARD_FACTOR: f64 = 1e-12;
pub const HIGH_GUARD_FACTOR: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("sigma must be +1 or -1, got {0}")]
    BadSigma(i8),
    #[error("gamma must be nonnegative and finite, got {0}")]
    BadGamma(f64),
    #[error("starting point must be positive, got {0}")]
    NonPositiveStart(f64),
    #[error("local time span must be nonnegative, got {0}")]
    NegativeLocalTime(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("drive evaluated to a non-finite value at y = {y}")]
    NonFiniteEval { y: f64 },
    #[error("integrator stalled at y = {y} with vanishing step")]
    Stalled { y: f64 },
}

/// The power-law drive `f(a) = sigma a^gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawDrive {
    sigma: i8,
    gamma: f64,
}

impl PowerLawDrive {
    pub fn new(sigma: i8, gamma: f64) -> Result<Self, FlowError> {
        if sigma != 1 && sigma != -1 {
            return Err(FlowError::BadSigma(sigma));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(FlowError::BadGamma(gamma));
        }
        Ok(Self { sigma, gamma })
    }

    /// Deceleration drive `f(a) = -a^gamma`.
    pub fn deceleration(gamma: f64) -> Result<Self, FlowError> {
        Self::new(-1, gamma)
    }

    /// Acceleration drive `f(a) = a^gamma`.
    pub fn acceleration(gamma: f64) -> Result<Self, FlowError> {
        Self::new(1, gamma)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma as f64
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Evaluate `f(a) = sigma a^gamma`.
    pub fn eval(&self, a: f64) -> f64 {
        self.sigma() * a.powf(self.gamma)
    }
}

/// Outcome of evaluating a flow: still inside `(0, inf)`, or exhausted
/// through one of the ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowResult {
    Alive(f64),
    /// The flow reached 0 (within the numeric guard).
    ExhaustedLow,
    /// The flow diverged to infinity (within the numeric guard).
    ExhaustedHigh,
}

impl FlowResult {
    pub fn value(&self) -> Option<f64> {
        match self {
            FlowResult::Alive(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_alive(&self) -> bool {
        matches!(self, FlowResult::Alive(_))
    }
}

fn guard(value: f64, a0: f64) -> FlowResult {
    if !value.is_finite() || value >= HIGH_GUARD_FACTOR * a0 {
        FlowResult::ExhaustedHigh
    } else if value <= LOW_GUARD_FACTOR * a0 {
        FlowResult::ExhaustedLow
    } else {
        FlowResult::Alive(value)
    }
}

/// Closed-form flow `Phi_{a0}(l)` of `y' = f(y)/sqrt(2y)` for a power
/// drive.
pub fn phi_power(drive: &PowerLawDrive, a0: f64, l: f64) -> Result<FlowResult, FlowError> {
    if !(a0 > 0.0) {
        return Err(FlowError::NonPositiveStart(a0));
    }
    if !(l >= 0.0) {
        return Err(FlowError::NegativeLocalTime(l));
    }
    let p = 1.5 - drive.gamma();
    if p == 0.0 {
        return Ok(guard(a0 * (drive.sigma() * l / std::f64::consts::SQRT_2).exp(), a0));
    }
    // Branch on the exit local time itself so that phi_power and
    // blowup_threshold agree to the last ulp.
    if l >= blowup_threshold(drive, a0)? {
        // Exit is downward for decelerating drives (p > 0 here), upward
        // for accelerating ones.
        return Ok(if p > 0.0 {
            FlowResult::ExhaustedLow
        } else {
            FlowResult::ExhaustedHigh
        });
    }
    let base = a0.powf(p) + drive.sigma() * p * l / std::f64::consts::SQRT_2;
    if base <= 0.0 {
        return Ok(if p > 0.0 {
            FlowResult::ExhaustedLow
        } else {
            FlowResult::ExhaustedHigh
        });
    }
    Ok(guard(base.powf(1.0 / p), a0))
}

/// Local time `l*` at which the power flow exits `(0, inf)`; `+inf` when
/// `sigma (3/2 - gamma) >= 0`.
pub fn blowup_threshold(drive: &PowerLawDrive, a0: f64) -> Result<f64, FlowError> {
    if !(a0 > 0.0) {
        return Err(FlowError::NonPositiveStart(a0));
    }
    let p = 1.5 - drive.gamma();
    if drive.sigma() * p >= 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(std::f64::consts::SQRT_2 * a0.powf(p) / (drive.sigma() * (drive.gamma() - 1.5)))
    }
}

/// Which ordinary differential equation a general flow integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowLaw {
    /// `y' = f(y) / sqrt(2y)` — the law the diffusivity actually follows.
    Canonical,
    /// `y' = f(y)` — the plain law, used by the unnormalized discrete
    /// scheme and by the similarity variable of the closed-form density.
    Unnormalized,
}

/// Adaptive integration of the canonical law `y' = f(y)/sqrt(2y)` from
/// `a0` over a local-time span `l`, with exit detection at the numeric
/// guards.
pub fn flow_general(
    f: impl Fn(f64) -> f64,
    a0: f64,
    l: f64,
    tol: f64,
) -> Result<FlowResult, FlowError> {
    flow_ode(FlowLaw::Canonical, f, a0, l, tol)
}

/// Adaptive Cash-Karp RK45 for either flow law.
pub fn flow_ode(
    law: FlowLaw,
    f: impl Fn(f64) -> f64,
    a0: f64,
    l: f64,
    tol: f64,
) -> Result<FlowResult, FlowError> {
    if !(a0 > 0.0) {
        return Err(FlowError::NonPositiveStart(a0));
    }
    if !(l >= 0.0) {
        return Err(FlowError::NegativeLocalTime(l));
    }
    if !(tol > 0.0) {
        return Err(FlowError::BadTolerance(tol));
    }
    let low = LOW_GUARD_FACTOR * a0;
    let high = HIGH_GUARD_FACTOR * a0;
    let rhs = |y: f64| -> Result<f64, FlowError> {
        let fy = f(y);
        if !fy.is_finite() {
            return Err(FlowError::NonFiniteEval { y });
        }
        let v = match law {
            FlowLaw::Canonical => fy / (2.0 * y).sqrt(),
            FlowLaw::Unnormalized => fy,
        };
        if !v.is_finite() {
            return Err(FlowError::NonFiniteEval { y });
        }
        Ok(v)
    };

    let mut y = a0;
    let mut s = 0.0; // integrated local time
    let mut h = (l / 64.0).max(f64::MIN_POSITIVE);
    if l == 0.0 {
        return Ok(FlowResult::Alive(a0));
    }
    let h_floor = l * 1e-14;
    loop {
        if y <= low {
            return Ok(FlowResult::ExhaustedLow);
        }
        if y >= high {
            return Ok(FlowResult::ExhaustedHigh);
        }
        if s >= l {
            return Ok(FlowResult::Alive(y));
        }
        h = h.min(l - s);
        match cash_karp_step(&rhs, y, h)? {
            StepOutcome::Accept { y_new, err } => {
                let scale = tol * y.abs().max(1e-300);
                if err <= scale {
                    s += h;
                    y = y_new;
                    let grow = if err > 0.0 {
                        0.9 * (scale / err).powf(0.2)
                    } else {
                        5.0
                    };
                    h *= grow.clamp(0.2, 5.0);
                } else {
                    h *= (0.9 * (scale / err).powf(0.25)).clamp(0.1, 0.9);
                    if h < h_floor {
                        // The step collapsed: the trajectory is leaving the
                        // domain faster than it can be resolved.
                        let dir = rhs(y)?;
                        return Ok(if dir < 0.0 {
                            FlowResult::ExhaustedLow
                        } else {
                            FlowResult::ExhaustedHigh
                        });
                    }
                }
            }
            StepOutcome::LeftDomain => {
                h *= 0.5;
                if h < h_floor {
                    return Ok(FlowResult::ExhaustedLow);
                }
            }
        }
    }
}

enum StepOutcome {
    Accept { y_new: f64, err: f64 },
    LeftDomain,
}

fn cash_karp_step(
    rhs: &impl Fn(f64) -> Result<f64, FlowError>,
    y: f64,
    h: f64,
) -> Result<StepOutcome, FlowError> {
    macro_rules! stage {
        ($v:expr) => {{
            let yv = $v;
            if yv <= 0.0 {
                return Ok(StepOutcome::LeftDomain);
            }
            rhs(yv)?
        }};
    }
    let k1 = rhs(y)?;
    let k2 = stage!(y + h * (k1 / 5.0));
    let k3 = stage!(y + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2));
    let k4 = stage!(y + h * (3.0 / 10.0 * k1 - 9.0 / 10.0 * k2 + 6.0 / 5.0 * k3));
    let k5 = stage!(y + h * (-11.0 / 54.0 * k1 + 5.0 / 2.0 * k2 - 70.0 / 27.0 * k3 + 35.0 / 27.0 * k4));
    let k6 = stage!(
        y + h * (1631.0 / 55296.0 * k1
            + 175.0 / 512.0 * k2
            + 575.0 / 13824.0 * k3
            + 44275.0 / 110592.0 * k4
            + 253.0 / 4096.0 * k5)
    );
    let y5 = y + h * (37.0 / 378.0 * k1 + 250.0 / 621.0 * k3 + 125.0 / 594.0 * k4 + 512.0 / 1771.0 * k6);
    let y4 = y + h
        * (2825.0 / 27648.0 * k1
            + 18575.0 / 48384.0 * k3
            + 13525.0 / 55296.0 * k4
            + 277.0 / 14336.0 * k5
            + 1.0 / 4.0 * k6);
    if y5 <= 0.0 {
        return Ok(StepOutcome::LeftDomain);
    }
    Ok(StepOutcome::Accept {
        y_new: y5,
        err: (y5 - y4).abs(),
    })
}

/// Forward Euler for `y' = f(y)`: `y_{k+1} = y_k + delta f(y_k)`, stopping
/// early when the iterate leaves the numeric guards.
pub fn euler_flow(
    f: impl Fn(f64) -> f64,
    delta: f64,
    n_steps: usize,
    y0: f64,
) -> Result<FlowResult, FlowError> {
    if !(y0 > 0.0) {
        return Err(FlowError::NonPositiveStart(y0));
    }
    if !(delta > 0.0) {
        return Err(FlowError::BadTolerance(delta));
    }
    let low = LOW_GUARD_FACTOR * y0;
    let high = HIGH_GUARD_FACTOR * y0;
    let mut y = y0;
    for _ in 0..n_steps {
        let fy = f(y);
        if !fy.is_finite() {
            return Err(FlowError::NonFiniteEval { y });
        }
        y += delta * fy;
        if y <= low {
            return Ok(FlowResult::ExhaustedLow);
        }
        if y >= high {
            return Ok(FlowResult::ExhaustedHigh);
        }
    }
    Ok(FlowResult::Alive(y))
}

/// A diffusivity trajectory as a function of accumulated local time.
pub trait LocalTimeFlow {
    fn a0(&self) -> f64;
    fn at(&self, l: f64) -> FlowResult;
    /// Local time at which the flow exits `(0, inf)`; `+inf` if never.
    fn exit_local_time(&self) -> f64;
}

/// The closed-form power flow.
#[derive(Debug, Clone, Copy)]
pub struct PowerFlow {
    pub drive: PowerLawDrive,
    a0: f64,
    threshold: f64,
}

impl PowerFlow {
    pub fn new(drive: PowerLawDrive, a0: f64) -> Result<Self, FlowError> {
        let threshold = blowup_threshold(&drive, a0)?;
        Ok(Self { drive, a0, threshold })
    }
}

impl LocalTimeFlow for PowerFlow {
    fn a0(&self) -> f64 {
        self.a0
    }

    fn at(&self, l: f64) -> FlowResult {
        phi_power(&self.drive, self.a0, l).expect("validated at construction")
    }

    fn exit_local_time(&self) -> f64 {
        self.threshold
    }
}

/// The frozen flow of `f = 0`: the diffusivity never changes.
#[derive(Debug, Clone, Copy)]
pub struct ZeroFlow {
    a0: f64,
}

impl ZeroFlow {
    pub fn new(a0: f64) -> Result<Self, FlowError> {
        if !(a0 > 0.0) {
            return Err(FlowError::NonPositiveStart(a0));
        }
        Ok(Self { a0 })
    }
}

impl LocalTimeFlow for ZeroFlow {
    fn a0(&self) -> f64 {
        self.a0
    }

    fn at(&self, _l: f64) -> FlowResult {
        FlowResult::Alive(self.a0)
    }

    fn exit_local_time(&self) -> f64 {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Fixed-step RK4 for y' = rhs(y), independent of the adaptive
    /// integrator it cross-checks.
    fn rk4(rhs: impl Fn(f64) -> f64, y0: f64, span: f64, n: usize) -> f64 {
        let h = span / n as f64;
        let mut y = y0;
        for _ in 0..n {
            let k1 = rhs(y);
            let k2 = rhs(y + h / 2.0 * k1);
            let k3 = rhs(y + h / 2.0 * k2);
            let k4 = rhs(y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        y
    }

    #[test]
    fn phi_power_exponential_case() {
        let d = PowerLawDrive::acceleration(1.5).unwrap();
        let v = phi_power(&d, 1.0, std::f64::consts::SQRT_2)
            .unwrap()
            .value()
            .unwrap();
        assert!((v - std::f64::consts::E).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn phi_power_zero_local_time_is_identity() {
        let d = PowerLawDrive::deceleration(0.5).unwrap();
        let v = phi_power(&d, 1.0, 0.0).unwrap().value().unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn phi_power_linear_decay_case() {
        // gamma = 1/2, sigma = -1: y' = -1/sqrt(2), so y(l) = 1 - l/sqrt(2).
        // Cross-checked against an independent RK4 oracle.
        let d = PowerLawDrive::deceleration(0.5).unwrap();
        let l = std::f64::consts::SQRT_2 / 2.0;
        let v = phi_power(&d, 1.0, l).unwrap().value().unwrap();
        assert!((v - 0.5).abs() < 1e-12, "got {v}");
        let oracle = rk4(|y| -y.powf(0.5) / (2.0 * y).sqrt(), 1.0, l, 1000);
        assert!((v - oracle).abs() < 1e-9, "closed form {v} vs rk4 {oracle}");
    }

    #[test]
    fn phi_power_rejects_bad_start() {
        let d = PowerLawDrive::deceleration(0.0).unwrap();
        assert!(phi_power(&d, 0.0, 1.0).is_err());
        assert!(phi_power(&d, -1.0, 1.0).is_err());
    }

    #[test]
    fn threshold_values() {
        let d = PowerLawDrive::deceleration(0.0).unwrap();
        let l = blowup_threshold(&d, 1.0).unwrap();
        assert!((l - 2.0 * std::f64::consts::SQRT_2 / 3.0).abs() < 1e-14);

        let d = PowerLawDrive::acceleration(1.0).unwrap();
        assert_eq!(blowup_threshold(&d, 1.0).unwrap(), f64::INFINITY);

        let d = PowerLawDrive::acceleration(2.0).unwrap();
        let l = blowup_threshold(&d, 1.0).unwrap();
        assert!((l - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-14);
    }

    #[test]
    fn threshold_matches_ode_divergence() {
        // Integrating y' = y^2/sqrt(2y) blows past the high guard just
        // before l* = 2 sqrt(2) and stays finite well inside.
        let lstar = 2.0 * std::f64::consts::SQRT_2;
        let inside = flow_general(|a| a * a, 1.0, 0.9 * lstar, 1e-10).unwrap();
        assert!(inside.is_alive());
        let outside = flow_general(|a| a * a, 1.0, lstar, 1e-10).unwrap();
        assert_eq!(outside, FlowResult::ExhaustedHigh);
    }

    #[test]
    fn flow_general_constant_drive() {
        for l in [0.0, 0.5, 3.0] {
            let v = flow_general(|_| 0.0, 2.5, l, 1e-10).unwrap().value().unwrap();
            assert_eq!(v, 2.5);
        }
    }

    #[test]
    fn flow_general_matches_linear_decay() {
        let l = std::f64::consts::SQRT_2 / 2.0;
        let v = flow_general(|a| -a.sqrt(), 1.0, l, 1e-10).unwrap().value().unwrap();
        assert!((v - 0.5).abs() < 1e-8, "got {v}");
    }

    #[test]
    fn flow_general_rejects_non_finite_drive() {
        let r = flow_general(|a| (a - 2.0).ln(), 1.0, 1.0, 1e-8);
        assert!(matches!(r, Err(FlowError::NonFiniteEval { .. })));
    }

    #[test]
    fn euler_flow_examples() {
        let v = euler_flow(|y| y, 0.1, 2, 1.0).unwrap().value().unwrap();
        assert!((v - 1.21).abs() < 1e-12);
        let v = euler_flow(|_| 0.0, 0.3, 17, 4.2).unwrap().value().unwrap();
        assert_eq!(v, 4.2);
    }

    #[test]
    fn euler_flow_converges_to_exponential() {
        // y' = y over [0, t]: error O(1/n) against e^t.
        let t = 1.0;
        let mut prev_err = f64::INFINITY;
        for n in [100usize, 200, 400, 800] {
            let v = euler_flow(|y| y, t / n as f64, n, 1.0).unwrap().value().unwrap();
            let err = (v - t.exp()).abs();
            assert!(err < prev_err);
            assert!(err < 3.0 * t.exp() / n as f64, "n = {n}, err = {err}");
            prev_err = err;
        }
    }

    #[test]
    fn agreement_between_closed_form_and_integrator() {
        // flow_general at tol 1e-10 matches phi_power to 8 significant
        // digits strictly inside the alive region, including general
        // starting points (the closed form away from a0 = 1 is a derived
        // extension and is cross-validated here).
        for &gamma in &[0.0, 0.5, 1.0, 1.5, 1.75, 2.0, 2.5] {
            for &sigma in &[-1i8, 1] {
                for &a0 in &[0.5, 1.0, 2.0] {
                    let d = PowerLawDrive::new(sigma, gamma).unwrap();
                    let lstar = blowup_threshold(&d, a0).unwrap();
                    for &frac in &[0.1, 0.4, 0.8] {
                        let l = if lstar.is_finite() { frac * lstar } else { frac * 2.0 };
                        let exact = phi_power(&d, a0, l).unwrap().value().unwrap();
                        let num = flow_general(|a| d.eval(a), a0, l, 1e-10)
                            .unwrap()
                            .value()
                            .unwrap();
                        let rel = ((num - exact) / exact).abs();
                        assert!(
                            rel < 1e-8,
                            "gamma={gamma} sigma={sigma} a0={a0} l={l}: {num} vs {exact} (rel {rel})"
                        );
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn semigroup_property(
            gamma in 0.0f64..2.5,
            sigma in prop::sample::select(vec![-1i8, 1]),
            a0 in 0.3f64..3.0,
            f1 in 0.01f64..0.45,
            f2 in 0.01f64..0.45,
        ) {
            // Exclude a small neighborhood of the exponent branch point
            // gamma = 3/2, where the 1/(3/2-gamma) power amplifies
            // rounding past the 10-digit bar being asserted.
            prop_assume!((gamma - 1.5).abs() > 1e-2);
            let d = PowerLawDrive::new(sigma, gamma).unwrap();
            let lstar = blowup_threshold(&d, a0).unwrap();
            let cap = if lstar.is_finite() { lstar } else { 4.0 };
            let l1 = f1 * cap;
            let l2 = f2 * cap;
            prop_assume!(l1 + l2 < 0.95 * cap);
            let direct = phi_power(&d, a0, l1 + l2).unwrap().value();
            let mid = phi_power(&d, a0, l1).unwrap().value();
            if let (Some(direct), Some(mid)) = (direct, mid) {
                if let Some(two_step) = phi_power(&d, mid, l2).unwrap().value() {
                    let rel = ((two_step - direct) / direct).abs();
                    prop_assert!(rel < 1e-10, "semigroup violated: {two_step} vs {direct}");
                }
            }
        }

        #[test]
        fn monotone_in_local_time(
            gamma in 0.0f64..2.5,
            sigma in prop::sample::select(vec![-1i8, 1]),
            l in 0.0f64..0.9,
        ) {
            let d = PowerLawDrive::new(sigma, gamma).unwrap();
            let lstar = blowup_threshold(&d, 1.0).unwrap();
            let cap = if lstar.is_finite() { 0.99 * lstar } else { 2.0 };
            let la = l * cap;
            let lb = (l + 0.005) * cap;
            if let (Some(va), Some(vb)) = (
                phi_power(&d, 1.0, la).unwrap().value(),
                phi_power(&d, 1.0, lb).unwrap().value(),
            ) {
                if sigma == 1 {
                    prop_assert!(vb >= va);
                } else {
                    prop_assert!(vb <= va);
                }
            }
        }

        #[test]
        fn threshold_consistency(
            gamma in 0.0f64..3.0,
            sigma in prop::sample::select(vec![-1i8, 1]),
            a0 in 0.2f64..4.0,
            frac in 0.01f64..0.999,
        ) {
            let d = PowerLawDrive::new(sigma, gamma).unwrap();
            let lstar = blowup_threshold(&d, a0).unwrap();
            if lstar.is_finite() {
                // At or above the exit local time the flow is never alive.
                prop_assert!(!phi_power(&d, a0, lstar).unwrap().is_alive());
                prop_assert!(!phi_power(&d, a0, 1.5 * lstar).unwrap().is_alive());
                // Below it the flow is alive unless the value has already
                // crossed the numeric guards that define exhaustion.
                let p = 1.5 - gamma;
                let raw = (a0.powf(p) + d.sigma() * p * frac * lstar
                    / std::f64::consts::SQRT_2)
                    .powf(1.0 / p);
                if raw > 10.0 * LOW_GUARD_FACTOR * a0 && raw < 0.1 * HIGH_GUARD_FACTOR * a0 {
                    prop_assert!(phi_power(&d, a0, frac * lstar).unwrap().is_alive());
                }
            } else {
                prop_assert!(phi_power(&d, a0, 5.0).unwrap().is_alive());
            }
        }
    }
}
