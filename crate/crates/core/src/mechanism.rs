//! Designed mechanism tables and the interpolated (I-MVU) mechanism.
//!
//! A [`MechanismTable`] holds the discrete MVU design: a uniform grid
//! `x_1 = 0 < … < x_{B_in} = 1`, an ascending output alphabet `a_1 … a_{B_out}`
//! and one row of output log-probabilities per grid point. Two ways of
//! extending the table to inputs between grid points live here:
//!
//! * MVU dithering, which mixes the neighbouring probability rows
//!   ([`mvu_dither_pmf`]) and stays unbiased on `[0, 1]`;
//! * I-MVU, which mixes the neighbouring *natural parameters* `η_i = log p_i`
//!   ([`InterpolatedMechanism::interpolate_eta`]) and samples from the
//!   resulting exponential-family distribution. I-MVU is defined for every
//!   real input.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designer::{self, ValidationReport};
use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on row sums of `exp(log_probs)`.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Slack on the log-space metric-DP constraint.
pub const METRIC_DP_TOL: f64 = 1e-9;
/// Tolerance on unbiasedness at grid points.
pub const UNBIASED_TOL: f64 = 1e-6;
/// Tolerance on grid placement.
pub const GRID_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    L2,
}

impl NormKind {
    pub fn norm(self, u: &[f64]) -> f64 {
        match self {
            NormKind::L1 => u.iter().map(|v| v.abs()).sum(),
            NormKind::L2 => u.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(NormKind::L1),
            "l2" => Ok(NormKind::L2),
            other => Err(Error::input(format!("unknown norm `{other}` (expected l1 or l2)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub norm: NormKind,
    pub clip_c: f64,
}

impl ClipConfig {
    pub fn new(norm: NormKind, clip_c: f64) -> Result<Self> {
        if !(clip_c > 0.0 && clip_c.is_finite()) {
            return Err(Error::input(format!("clip norm bound must be positive, got {clip_c}")));
        }
        Ok(Self { norm, clip_c })
    }
}

/// A validated MVU design.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanismTable {
    grid: Vec<f64>,
    alphabet: Vec<f64>,
    log_probs: Vec<Vec<f64>>,
    design_eps: f64,
    metric: Metric,
}

impl MechanismTable {
    /// Builds a table and checks every table invariant.
    pub fn new(
        grid: Vec<f64>,
        alphabet: Vec<f64>,
        log_probs: Vec<Vec<f64>>,
        design_eps: f64,
    ) -> Result<Self> {
        if log_probs.iter().flatten().any(|l| !l.is_finite()) {
            return Err(Error::invariant(
                "positivity",
                "log-probabilities must be finite (probabilities strictly positive)",
            ));
        }
        let probs: Vec<Vec<f64>> = log_probs
            .iter()
            .map(|row| row.iter().map(|l| l.exp()).collect())
            .collect();
        let report = designer::validate_parts(&grid, &alphabet, &probs, Some(&log_probs), design_eps);
        report.require(|name| match name {
            "simplex" => ROW_SUM_TOL,
            "unbiasedness" => UNBIASED_TOL,
            "metric_dp" => METRIC_DP_TOL,
            "grid_uniformity" => GRID_TOL,
            _ => 0.0,
        })?;
        Ok(Self {
            grid,
            alphabet,
            log_probs,
            design_eps,
            metric: Metric::L1,
        })
    }

    /// Uniform grid on `[0, 1]` with `b_in` points.
    pub fn uniform_grid(b_in: usize) -> Vec<f64> {
        let last = (b_in - 1) as f64;
        (0..b_in).map(|i| i as f64 / last).collect()
    }

    pub fn b_in(&self) -> usize {
        self.grid.len()
    }

    pub fn b_out(&self) -> usize {
        self.alphabet.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn alphabet(&self) -> &[f64] {
        &self.alphabet
    }

    pub fn log_probs(&self) -> &[Vec<f64>] {
        &self.log_probs
    }

    pub fn design_eps(&self) -> f64 {
        self.design_eps
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Grid spacing `Δ = 1/(B_in − 1)`.
    pub fn spacing(&self) -> f64 {
        1.0 / (self.b_in() - 1) as f64
    }

    /// Number of output bits per coordinate, `⌈log2 B_out⌉`.
    pub fn bits(&self) -> u32 {
        (self.b_out() as u64).next_power_of_two().trailing_zeros()
    }

    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.log_probs
            .iter()
            .map(|row| row.iter().map(|l| l.exp()).collect())
            .collect()
    }

    /// Natural parameters `η_i = log p_i`, one row per grid point.
    pub fn natural_params(&self) -> &[Vec<f64>] {
        &self.log_probs
    }

    pub fn validate(&self, tol: f64) -> ValidationReport {
        designer::validate_table(self, tol)
    }

    /// Interval index and interpolation weights `(w_i, w_{i+1})` for `x`.
    /// Inputs outside `[0, 1]` use the boundary interval's affine rule.
    pub(crate) fn bracket(&self, x: f64) -> (usize, f64, f64) {
        let grid = &self.grid;
        let last = grid.len() - 2;
        let i = grid.partition_point(|g| *g <= x).saturating_sub(1).min(last);
        let width = grid[i + 1] - grid[i];
        (i, (grid[i + 1] - x) / width, (x - grid[i]) / width)
    }

    /// I-MVU natural parameters at `x`; see
    /// [`InterpolatedMechanism::interpolate_eta`].
    pub fn interpolate_eta(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() {
            return Err(Error::input(format!("input must be finite, got {x}")));
        }
        Ok(self.eta_unchecked(x))
    }

    pub(crate) fn eta_unchecked(&self, x: f64) -> Vec<f64> {
        let (i, w_lo, w_hi) = self.bracket(x);
        let lo = &self.log_probs[i];
        let hi = &self.log_probs[i + 1];
        lo.iter().zip(hi).map(|(a, b)| w_lo * a + w_hi * b).collect()
    }

    /// I-MVU output distribution at `x`.
    pub fn imvu_pmf(&self, x: f64) -> Result<Vec<f64>> {
        Ok(softmax(&self.interpolate_eta(x)?))
    }
}

/// MVU dithering: `p(x) = ((x_{i+1} − x)/Δ) p_i + ((x − x_i)/Δ) p_{i+1}`.
pub fn mvu_dither_pmf(table: &MechanismTable, x: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::input(format!("MVU dithering needs x in [0, 1], got {x}")));
    }
    let (i, w_lo, w_hi) = table.bracket(x);
    let lo = &table.log_probs[i];
    let hi = &table.log_probs[i + 1];
    Ok(lo
        .iter()
        .zip(hi)
        .map(|(a, b)| w_lo * a.exp() + w_hi * b.exp())
        .collect())
}

/// `(mean, variance)` of the alphabet under `pmf`.
pub fn alphabet_moments(alphabet: &[f64], pmf: &[f64]) -> (f64, f64) {
    let mean: f64 = alphabet.iter().zip(pmf).map(|(a, p)| a * p).sum();
    let var: f64 = alphabet
        .iter()
        .zip(pmf)
        .map(|(a, p)| p * (a - mean) * (a - mean))
        .sum();
    (mean, var)
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|e| (e - m).exp()).sum::<f64>().ln()
}

/// `η − A(η)` with `A = logsumexp`.
pub fn log_softmax(eta: &[f64]) -> Vec<f64> {
    let a = log_sum_exp(eta);
    eta.iter().map(|e| e - a).collect()
}

pub fn softmax(eta: &[f64]) -> Vec<f64> {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = eta.iter().map(|e| (e - m).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// Inverse-CDF draw. Returns the first index whose cumulative mass strictly
/// exceeds a uniform variate in `[0, 1)`.
pub fn sample_index<R: Rng + ?Sized>(pmf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (j, p) in pmf.iter().enumerate() {
        cum += p;
        if u < cum {
            return j;
        }
    }
    pmf.iter().rposition(|p| *p > 0.0).unwrap_or(pmf.len() - 1)
}

pub fn clip(u: &[f64], cfg: &ClipConfig) -> Vec<f64> {
    let n = cfg.norm.norm(u);
    if n <= cfg.clip_c {
        return u.to_vec();
    }
    let s = cfg.clip_c / n;
    u.iter().map(|v| v * s).collect()
}

/// `x = 1/2 + βu/(2C)`.
pub fn scale_input(u: f64, clip_c: f64, beta: f64) -> f64 {
    0.5 + beta * u / (2.0 * clip_c)
}

/// Server-side inverse of [`scale_input`].
pub fn decode(a: f64, clip_c: f64, beta: f64) -> f64 {
    (2.0 * clip_c / beta) * (a - 0.5)
}

/// Result of privatizing one vector. `indices` is the wire form.
#[derive(Clone, Debug, PartialEq)]
pub struct Privatized {
    pub indices: Vec<u32>,
    pub decoded: Vec<f64>,
}

/// I-MVU: an MVU table extended to real inputs by natural-parameter
/// interpolation, plus the client-side input scaling and accounting state.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolatedMechanism {
    table: MechanismTable,
    beta: f64,
    clip: ClipConfig,
    eps_prime: Option<f64>,
    fisher_m: Option<f64>,
}

impl InterpolatedMechanism {
    pub fn new(table: MechanismTable, beta: f64, clip: ClipConfig) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::input(format!("beta must be positive, got {beta}")));
        }
        Ok(Self {
            table,
            beta,
            clip,
            eps_prime: None,
            fisher_m: None,
        })
    }

    /// Computes and caches `ε′` over the β-scaled input domain and, when
    /// `B_in = 2`, the Fisher-information bound `M`.
    pub fn with_accounting(mut self) -> Result<Self> {
        let domain = crate::accountant::scaled_domain(self.beta);
        self.eps_prime = Some(crate::accountant::eps_prime(&self.table, domain)?.value);
        if self.table.b_in() == 2 {
            let eta = self.table.natural_params();
            self.fisher_m =
                Some(crate::accountant::fisher_sup(&eta[0], &eta[1], crate::accountant::FISHER_TOL)?.m);
        }
        Ok(self)
    }

    /// Attaches previously computed constants after checking that they match
    /// a fresh computation for this table.
    pub fn with_constants(self, eps_prime: Option<f64>, fisher_m: Option<f64>) -> Result<Self> {
        if eps_prime.is_none() && fisher_m.is_none() {
            return Ok(self);
        }
        if fisher_m.is_some() && self.table.b_in() != 2 {
            return Err(Error::invariant("accounting", "fisher_m is only defined for b_in = 2"));
        }
        let fresh = self.with_accounting()?;
        let close = |stored: Option<f64>, fresh: Option<f64>| match (stored, fresh) {
            (Some(s), Some(f)) => (s - f).abs() <= 1e-9 * f.abs().max(1.0),
            (None, _) => true,
            (Some(_), None) => false,
        };
        if !close(eps_prime, fresh.eps_prime) {
            return Err(Error::invariant(
                "accounting",
                format!("stored eps_prime {eps_prime:?} does not match recomputed {:?}", fresh.eps_prime),
            ));
        }
        if !close(fisher_m, fresh.fisher_m) {
            return Err(Error::invariant(
                "accounting",
                format!("stored fisher_m {fisher_m:?} does not match recomputed {:?}", fresh.fisher_m),
            ));
        }
        Ok(Self {
            eps_prime: eps_prime.and(fresh.eps_prime),
            fisher_m: fisher_m.and(fresh.fisher_m),
            ..fresh
        })
    }

    pub fn table(&self) -> &MechanismTable {
        &self.table
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn clip_config(&self) -> &ClipConfig {
        &self.clip
    }

    pub fn eps_prime(&self) -> Option<f64> {
        self.eps_prime
    }

    pub fn fisher_m(&self) -> Option<f64> {
        self.fisher_m
    }

    /// `η(x) = ((x_{i+1} − x)/Δ) η_i + ((x − x_i)/Δ) η_{i+1}`, extended
    /// affinely past the boundary intervals.
    pub fn interpolate_eta(&self, x: f64) -> Result<Vec<f64>> {
        self.table.interpolate_eta(x)
    }

    /// Log-probabilities of every output at input `x`.
    pub fn log_pmf(&self, x: f64) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.interpolate_eta(x)?))
    }

    pub fn pmf(&self, x: f64) -> Result<Vec<f64>> {
        Ok(softmax(&self.interpolate_eta(x)?))
    }

    /// Draws an output index and its alphabet value.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<(usize, f64)> {
        let p = self.pmf(x)?;
        let j = sample_index(&p, rng);
        Ok((j, self.table.alphabet[j]))
    }

    pub fn moments(&self, x: f64) -> Result<(f64, f64)> {
        Ok(alphabet_moments(&self.table.alphabet, &self.pmf(x)?))
    }

    /// Clip, scale, sample each coordinate independently, and decode.
    ///
    /// One `u64` is drawn from `rng` as the root of per-block substreams, so
    /// the output depends only on that draw and `u`, never on how many
    /// worker threads rayon uses.
    pub fn privatize_vector<R: Rng + ?Sized>(&self, u: &[f64], rng: &mut R) -> Result<Privatized> {
        if u.is_empty() {
            return Err(Error::input("cannot privatize a zero-dimensional vector"));
        }
        if let Some(bad) = u.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("input must be finite, got {bad}")));
        }
        let root: u64 = rng.random();
        let clipped = clip(u, &self.clip);
        let c = self.clip.clip_c;
        let beta = self.beta;
        let alphabet = &self.table.alphabet;
        let indices: Vec<u32> = clipped
            .par_chunks(rng::BLOCK_LEN)
            .enumerate()
            .flat_map_iter(|(block, chunk)| {
                let mut stream = rng::substream(root, block as u64);
                chunk
                    .iter()
                    .map(|v| {
                        let x = scale_input(*v, c, beta);
                        let p = softmax(&self.table.eta_unchecked(x));
                        sample_index(&p, &mut stream) as u32
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let decoded = indices
            .iter()
            .map(|j| decode(alphabet[*j as usize], c, beta))
            .collect();
        Ok(Privatized { indices, decoded })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn rr_table() -> MechanismTable {
        MechanismTable::new(
            vec![0.0, 1.0],
            vec![-0.5, 1.5],
            vec![vec![0.75f64.ln(), 0.25f64.ln()], vec![0.25f64.ln(), 0.75f64.ln()]],
            3f64.ln(),
        )
        .unwrap()
    }

    fn rr() -> InterpolatedMechanism {
        InterpolatedMechanism::new(rr_table(), 1.0, ClipConfig::new(NormKind::L2, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn natural_params_are_log_probs() {
        let t = rr_table();
        assert_abs_diff_eq!(t.natural_params()[0][0], -0.28768, epsilon = 1e-5);
        assert_abs_diff_eq!(t.natural_params()[0][1], -1.38629, epsilon = 1e-5);
        let uniform = log_softmax(&[0.5f64.ln(), 0.5f64.ln()]);
        assert_abs_diff_eq!(uniform[0], -(2f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(uniform[1], -(2f64.ln()), epsilon = 1e-15);
    }

    #[test]
    fn rejects_zero_probability() {
        let err = MechanismTable::new(
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![vec![0.0, f64::NEG_INFINITY], vec![f64::NEG_INFINITY, 0.0]],
            50.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invariant { ref check, .. } if check == "positivity"));
    }

    #[test]
    fn interpolation_endpoints_and_extrapolation() {
        let m = rr();
        let eta = m.table().natural_params().to_vec();
        assert_eq!(m.interpolate_eta(0.0).unwrap(), eta[0]);
        assert_eq!(m.interpolate_eta(1.0).unwrap(), eta[1]);
        let mid = m.interpolate_eta(0.5).unwrap();
        let left = m.interpolate_eta(-1.0).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(mid[j], (eta[0][j] + eta[1][j]) / 2.0, epsilon = 1e-15);
            assert_abs_diff_eq!(left[j], 2.0 * eta[0][j] - eta[1][j], epsilon = 1e-15);
        }
        assert!(m.interpolate_eta(f64::NAN).is_err());
        assert!(m.interpolate_eta(f64::INFINITY).is_err());
    }

    #[test]
    fn pmf_matches_hand_evaluation() {
        let m = rr();
        let p = m.pmf(0.6).unwrap();
        assert_abs_diff_eq!(p[0], 0.44529, epsilon = 1e-5);
        assert_abs_diff_eq!(p[1], 0.55471, epsilon = 1e-5);
        let q = m.pmf(0.0).unwrap();
        assert_abs_diff_eq!(q[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn moments_of_randomized_response() {
        let (mean, var) = rr().moments(0.0).unwrap();
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn dithering_is_linear_in_probabilities() {
        let t = rr_table();
        let p = mvu_dither_pmf(&t, 0.3).unwrap();
        assert_abs_diff_eq!(p[0], 0.7 * 0.75 + 0.3 * 0.25, epsilon = 1e-12);
        assert!(mvu_dither_pmf(&t, 1.2).is_err());
        assert!(mvu_dither_pmf(&t, -0.1).is_err());
    }

    #[test]
    fn clip_cases() {
        let cfg = ClipConfig::new(NormKind::L2, 1.0).unwrap();
        let out = clip(&[2.0, 0.0], &cfg);
        assert_abs_diff_eq!(NormKind::L2.norm(&out), 1.0, epsilon = 1e-12);
        let inside = [0.3, -0.4];
        assert_eq!(clip(&inside, &cfg), inside.to_vec());
        assert_eq!(clip(&[0.0, 0.0], &cfg), vec![0.0, 0.0]);
        let l1 = ClipConfig::new(NormKind::L1, 1.0).unwrap();
        assert!(NormKind::L1.norm(&clip(&[3.0, -4.0], &l1)) <= 1.0 + 1e-12);
        assert!(ClipConfig::new(NormKind::L1, 0.0).is_err());
    }

    #[test]
    fn scaling_and_decoding() {
        assert_eq!(scale_input(0.0, 1.0, 1.0), 0.5);
        assert_eq!(scale_input(1.0, 1.0, 1.0), 1.0);
        assert_eq!(scale_input(-1.0, 1.0, 8.0), -3.5);
        assert_eq!(decode(0.5, 1.0, 3.0), 0.0);
        assert_eq!(decode(1.0, 1.0, 1.0), 1.0);
    }

    #[test]
    fn sample_degenerate_and_deterministic() {
        let mut r = rng::seeded(3);
        for _ in 0..1000 {
            assert_eq!(sample_index(&[1.0 - 1e-17, 1e-17, 0.0], &mut r), 0);
        }
        let m = rr();
        let a: Vec<usize> = {
            let mut r = rng::seeded(11);
            (0..100).map(|_| m.sample(0.3, &mut r).unwrap().0).collect()
        };
        let b: Vec<usize> = {
            let mut r = rng::seeded(11);
            (0..100).map(|_| m.sample(0.3, &mut r).unwrap().0).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn privatize_zero_vector_samples_at_half() {
        let m = rr();
        assert!(m.privatize_vector(&[], &mut rng::seeded(0)).is_err());
        let out = m.privatize_vector(&[0.0; 3], &mut rng::seeded(5)).unwrap();
        assert_eq!(out.indices.len(), 3);
        for (j, d) in out.indices.iter().zip(&out.decoded) {
            let a = m.table().alphabet()[*j as usize];
            assert_eq!(*d, decode(a, 1.0, 1.0));
        }
    }

    #[test]
    fn privatize_single_coordinate_matches_scalar_path() {
        let m = rr();
        let u = 0.37;
        let mut r1 = rng::seeded(9);
        let out = m.privatize_vector(&[u], &mut r1).unwrap();
        let mut r2 = rng::seeded(9);
        let root: u64 = r2.random();
        let mut stream = rng::substream(root, 0);
        let (j, _) = m.sample(scale_input(u, 1.0, 1.0), &mut stream).unwrap();
        assert_eq!(out.indices, vec![j as u32]);
    }
}
