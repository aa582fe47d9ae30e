//! Simple random walks with discrete local time, and exact joint samples
//! of a Brownian motion and its local time at the origin.
//!
//! The walk `Y_n = sum_{k<=n} U_k` with fair `U_k = ±1` steps carries the
//! discrete local time `Λ_n = #{k <= n : Y_k = 0}`, and
//! `(sqrt(t/n) Y_n, sqrt(t/n) Λ_n)` converges in distribution to
//! `(W_t, L_t^W)`. For the continuum pair we sample exactly from the joint
//! density
//!
//! ```text
//! rho_t(w, l) = (l + |w|) / sqrt(2 pi t^3) * exp(-(l + |w|)^2 / (2t)),   l > 0,
//! ```
//!
//! by drawing `S = l + |w|` from its Maxwell-type marginal (the norm of a
//! 3-vector of centered Gaussians) and `w` uniformly on `[-S, S]`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::rng::RngStream;

/// Step count of the random-walk estimator used by
/// [`occupation_identity_check`].
pub const OCCUPATION_WALK_STEPS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum BrownianError {
    #[error("walk increments must be +1 or -1, got {0}")]
    BadIncrement(i64),
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("samples must be nonempty")]
    EmptySample,
}

/// A simple random-walk path `Y_0 = 0, Y_k - Y_{k-1} = ±1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkPath {
    pub increments: Vec<i8>,
    /// `positions[k] = Y_k`; length `n_steps + 1`.
    pub positions: Vec<i64>,
}

impl WalkPath {
    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }
}

/// Discrete local time `Λ_k = #{1 <= j <= k : Y_j = 0}` of a walk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteLocalTime {
    /// `lambda[k] = Λ_k`; same length as the walk's `positions`.
    pub lambda: Vec<u64>,
}

/// An exact joint sample of `(W_t, L_t^W)` for a Brownian motion started
/// at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSample {
    pub w: f64,
    pub l: f64,
    pub t: f64,
}

/// Build a walk from explicit ±1 increments (positions are the partial
/// sums).
pub fn walk_from_increments(increments: &[i8]) -> Result<WalkPath, BrownianError> {
    let mut positions = Vec::with_capacity(increments.len() + 1);
    positions.push(0i64);
    let mut y = 0i64;
    for &u in increments {
        if u != 1 && u != -1 {
            return Err(BrownianError::BadIncrement(u as i64));
        }
        y += u as i64;
        positions.push(y);
    }
    Ok(WalkPath {
        increments: increments.to_vec(),
        positions,
    })
}

/// Sample a fair ±1 walk of `n_steps` steps.
pub fn sample_walk(n_steps: usize, rng: &mut impl Rng) -> WalkPath {
    let mut increments = Vec::with_capacity(n_steps);
    let mut positions = Vec::with_capacity(n_steps + 1);
    positions.push(0i64);
    let mut y = 0i64;
    let mut bits: u64 = 0;
    for k in 0..n_steps {
        if k % 64 == 0 {
            bits = rng.random();
        }
        let u: i8 = if bits & 1 == 1 { 1 } else { -1 };
        bits >>= 1;
        y += u as i64;
        increments.push(u);
        positions.push(y);
    }
    WalkPath {
        increments,
        positions,
    }
}

/// Walk endpoint `(Y_n, Λ_n)` without storing the path.
pub fn sample_walk_endpoint(n_steps: usize, rng: &mut impl Rng) -> (i64, u64) {
    let mut y = 0i64;
    let mut lambda = 0u64;
    let mut bits: u64 = 0;
    for k in 0..n_steps {
        if k % 64 == 0 {
            bits = rng.random();
        }
        y += if bits & 1 == 1 { 1 } else { -1 };
        bits >>= 1;
        lambda += (y == 0) as u64;
    }
    (y, lambda)
}

/// Discrete local time of a walk: `Λ_k` counts the zeros among `Y_1..Y_k`.
pub fn discrete_local_time(path: &WalkPath) -> DiscreteLocalTime {
    let mut lambda = Vec::with_capacity(path.positions.len());
    lambda.push(0u64);
    let mut count = 0u64;
    for &y in &path.positions[1..] {
        count += (y == 0) as u64;
        lambda.push(count);
    }
    DiscreteLocalTime { lambda }
}

/// Draw `(W_t, L_t^W)` exactly for `W_0 = 0`.
///
/// `S = L + |W|` has density `2 s^2 / sqrt(2 pi t^3) exp(-s^2/(2t))` on
/// `s > 0`; conditionally on `S`, `W` is uniform on `[-S, S]`.
pub fn sample_joint_wl(t: f64, rng: &mut impl Rng) -> Result<JointSample, BrownianError> {
    if !(t > 0.0) {
        return Err(BrownianError::NonPositiveHorizon(t));
    }
    let (n1, n2, n3): (f64, f64, f64) = (
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    let s = (t * (n1 * n1 + n2 * n2 + n3 * n3)).sqrt();
    let w = rng.random_range(-s..=s);
    Ok(JointSample {
        w,
        l: s - w.abs(),
        t,
    })
}

/// Draw `m` joint samples in parallel, one substream per sample.
pub fn joint_ensemble(t: f64, m: usize, stream: RngStream) -> Result<Vec<JointSample>, BrownianError> {
    if !(t > 0.0) {
        return Err(BrownianError::NonPositiveHorizon(t));
    }
    Ok((0..m as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream.substream(k).rng();
            sample_joint_wl(t, &mut rng).expect("t > 0 checked above")
        })
        .collect())
}

/// Value at time `t` of a Brownian motion from `w0 > 0` conditioned to
/// stay positive on `[0, t]`.
///
/// Rejection from the unconditioned endpoint: propose `y ~ N(w0, t)`
/// restricted to `y > 0`, accept with probability `1 - exp(-2 w0 y / t)`
/// (the reflection-principle likelihood ratio).
pub(crate) fn meander_value(w0: f64, t: f64, rng: &mut impl Rng) -> f64 {
    let sqrt_t = t.sqrt();
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let y = w0 + sqrt_t * z;
        if y <= 0.0 {
            continue;
        }
        if rng.random::<f64>() < 1.0 - (-2.0 * w0 * y / t).exp() {
            return y;
        }
    }
}

/// Draw `(W_t, L_t^W)` exactly for a Brownian motion started at `w0`.
///
/// Decomposes at the first passage to 0: `zeta = w0^2 / N^2`. If
/// `zeta >= t` the local time is still 0 and the value is a meander
/// endpoint; otherwise the pair restarts afresh from the origin over the
/// remaining horizon.
pub fn sample_wl_from(w0: f64, t: f64, rng: &mut impl Rng) -> Result<JointSample, BrownianError> {
    if !(t > 0.0) {
        return Err(BrownianError::NonPositiveHorizon(t));
    }
    if w0 == 0.0 {
        return sample_joint_wl(t, rng);
    }
    let n: f64 = rng.sample(StandardNormal);
    let zeta = w0 * w0 / (n * n);
    if zeta >= t {
        Ok(JointSample {
            w: w0.signum() * meander_value(w0.abs(), t, rng),
            l: 0.0,
            t,
        })
    } else {
        let fresh = sample_joint_wl(t - zeta, rng)?;
        Ok(JointSample {
            w: fresh.w,
            l: fresh.l,
            t,
        })
    }
}

/// Quadrature rule over Brownian starting points, used by
/// [`occupation_identity_check`].
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// Composite trapezoid rule on `[-half_width, half_width]` with an odd
    /// node count, so 0 is a node.
    pub fn trapezoid(half_width: f64, n_nodes: usize) -> Self {
        assert!(n_nodes >= 3 && n_nodes % 2 == 1, "need an odd node count >= 3");
        let h = 2.0 * half_width / (n_nodes - 1) as f64;
        let nodes: Vec<f64> = (0..n_nodes)
            .map(|i| -half_width + i as f64 * h)
            .collect();
        let weights = (0..n_nodes)
            .map(|i| if i == 0 || i == n_nodes - 1 { h / 2.0 } else { h })
            .collect();
        Self { nodes, weights }
    }
}

/// Quadrature over starting points `w` of the Monte Carlo estimate of
/// `E[L_1^W | W_0 = w]`; the occupation-time identity makes the result 1.
///
/// Each node estimates `E[Λ_n]/sqrt(n)` for the walk started at the lattice
/// point nearest `w sqrt(n)`, with `n` = [`OCCUPATION_WALK_STEPS`]. Zero
/// counts are sampled by excursion decomposition (first-passage and
/// first-return tables), which has the exact distribution of stepping the
/// walk at a fraction of the cost.
pub fn occupation_identity_check(n_samples: usize, grid: &Quadrature, stream: RngStream) -> f64 {
    occupation_identity_check_with_steps(n_samples, grid, OCCUPATION_WALK_STEPS, stream)
}

/// Same as [`occupation_identity_check`] with an explicit walk length.
pub fn occupation_identity_check_with_steps(
    n_samples: usize,
    grid: &Quadrature,
    n_steps: usize,
    stream: RngStream,
) -> f64 {
    let sqrt_n = (n_steps as f64).sqrt();
    let return_table = excursion::FirstReturnTable::new(n_steps);
    grid.nodes
        .par_iter()
        .zip(grid.weights.par_iter())
        .enumerate()
        .map(|(i, (&w, &weight))| {
            if weight == 0.0 || n_samples == 0 {
                return 0.0;
            }
            let m0 = (w.abs() * sqrt_n).round() as u64;
            let passage_table = excursion::FirstPassageTable::new(m0, n_steps);
            let mut rng = stream.substream(i as u64).rng();
            let mut total = 0u64;
            for _ in 0..n_samples {
                total += excursion::sample_zero_count(&passage_table, &return_table, n_steps, &mut rng);
            }
            weight * (total as f64 / n_samples as f64) / sqrt_n
        })
        .sum()
}

/// Zero-count sampling by excursion decomposition.
///
/// The zeros of a walk from `m0` occur at `H + R_1 + R_2 + ...` where `H`
/// is the first-passage time to 0 and the `R_i` are independent
/// first-return times. Both laws are tabulated exactly:
/// `P(H_m = k) = (m/k) C(k, (k+m)/2) 2^{-k}` (hitting-time theorem) and
/// `P(R = 2k) = C(2k, k) / ((2k-1) 2^{2k})`.
pub(crate) mod excursion {
    use rand::Rng;
    use statrs::function::gamma::ln_gamma;

    fn ln_binomial(n: u64, k: u64) -> f64 {
        ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
    }

    /// Inverse-CDF table over support values; `u` beyond the table means
    /// "later than the horizon".
    pub struct CdfTable {
        values: Vec<u64>,
        cdf: Vec<f64>,
    }

    impl CdfTable {
        fn from_pmf(values: Vec<u64>, pmf: &[f64]) -> Self {
            let mut cdf = Vec::with_capacity(pmf.len());
            let mut acc = 0.0;
            for &p in pmf {
                acc += p;
                cdf.push(acc);
            }
            Self { values, cdf }
        }

        /// Draw a value, or `None` if the event falls past the horizon.
        pub fn sample(&self, rng: &mut impl Rng) -> Option<u64> {
            let u: f64 = rng.random();
            let idx = self.cdf.partition_point(|&c| c < u);
            self.values.get(idx).copied()
        }
    }

    /// First return time to 0 of the walk started at 0, truncated at the
    /// horizon.
    pub struct FirstReturnTable(pub CdfTable);

    impl FirstReturnTable {
        pub fn new(horizon: usize) -> Self {
            let kmax = horizon / 2;
            let mut values = Vec::with_capacity(kmax);
            let mut pmf = Vec::with_capacity(kmax);
            // P(R = 2) = 1/2, then P(R = 2(k+1)) = P(R = 2k) (2k-1)/(2(k+1)).
            let mut p = 0.5;
            for k in 1..=kmax {
                values.push(2 * k as u64);
                pmf.push(p);
                p *= (2.0 * k as f64 - 1.0) / (2.0 * (k as f64 + 1.0));
            }
            Self(CdfTable::from_pmf(values, &pmf))
        }
    }

    /// First passage time to 0 from level `m`, truncated at the horizon.
    /// `m = 0` is a sentinel: passage is immediate.
    pub struct FirstPassageTable {
        table: Option<CdfTable>,
    }

    impl FirstPassageTable {
        pub fn new(m: u64, horizon: usize) -> Self {
            if m == 0 {
                return Self { table: None };
            }
            let mut values = Vec::new();
            let mut pmf = Vec::new();
            let mut k = m;
            while k <= horizon as u64 {
                let h = (k + m) / 2;
                let ln_p = (m as f64 / k as f64).ln() + ln_binomial(k, h)
                    - k as f64 * std::f64::consts::LN_2;
                values.push(k);
                pmf.push(ln_p.exp());
                k += 2;
            }
            Self {
                table: Some(CdfTable::from_pmf(values, &pmf)),
            }
        }
    }

    /// Sample `Λ_n`, the number of zeros up to `horizon` of a walk started
    /// at `passage.m`.
    pub fn sample_zero_count(
        passage: &FirstPassageTable,
        ret: &FirstReturnTable,
        horizon: usize,
        rng: &mut impl Rng,
    ) -> u64 {
        let mut time: u64;
        let mut count: u64;
        match &passage.table {
            None => {
                time = 0;
                count = 0;
            }
            Some(t) => match t.sample(rng) {
                None => return 0,
                Some(h) => {
                    time = h;
                    count = 1;
                }
            },
        }
        loop {
            match ret.0.sample(rng) {
                None => return count,
                Some(r) => {
                    time += r;
                    if time > horizon as u64 {
                        return count;
                    }
                    count += 1;
                }
            }
        }
    }
}
