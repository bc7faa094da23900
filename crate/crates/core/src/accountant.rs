//! Privacy accounting for I-MVU.
//!
//! Pure DP (L1-bounded inputs): the mechanism is `(ε + ε′)·C`-DP where `ε` is
//! the table's design epsilon and
//! `ε′ = (B_in − 1) · max_i sup_ξ |σ(η(ξ))ᵀ(η_{i+1} − η_i)|`.
//!
//! Rényi DP (L2-bounded inputs, `B_in = 2`): the mechanism is
//! `(α, α M C² / 2)`-RDP where `M = sup_x I_Z(x)` bounds the Fisher
//! information `I_Z(x) = θᵀ(diag σ − σσᵀ)θ`, `θ = η_2 − η_1`.
//!
//! Both constants are *upper bounds*: every grid search below adds a
//! Lipschitz pad so that the reported value dominates the true supremum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{softmax, InterpolatedMechanism, MechanismTable};

pub const DEFAULT_DELTA: f64 = 1e-5;
pub const DEFAULT_ALPHAS: [f64; 12] = [1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 16.0, 32.0, 64.0];
pub const EPS_PRIME_POINTS_PER_INTERVAL: usize = 10_000;
/// Relative slack of the certified Fisher supremum.
pub const FISHER_TOL: f64 = 1e-8;
const FISHER_INITIAL_CELLS: usize = 10_000;

/// Input range reached by β-scaled clipped inputs, widened to cover `[0, 1]`.
pub fn scaled_domain(beta: f64) -> (f64, f64) {
    (((1.0 - beta) / 2.0).min(0.0), ((1.0 + beta) / 2.0).max(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub grid_points: usize,
    pub pad: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpsPrime {
    /// Certified `ε′`.
    pub value: f64,
    /// `(B_in − 1) · max h` over the evaluation grid, before padding.
    pub grid_value: f64,
    pub grid_points_per_interval: usize,
    /// Largest padding applied to any interval (in units of `h`).
    pub lipschitz_pad: f64,
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Certified `ε′` over `domain`, which must contain `[0, 1]`. Inputs left of
/// the grid use the first interval's rule and inputs right of it the last.
pub fn eps_prime(table: &MechanismTable, domain: (f64, f64)) -> Result<EpsPrime> {
    eps_prime_with(table, domain, EPS_PRIME_POINTS_PER_INTERVAL)
}

pub fn eps_prime_with(
    table: &MechanismTable,
    domain: (f64, f64),
    points_per_interval: usize,
) -> Result<EpsPrime> {
    let (lo, hi) = domain;
    if !(lo.is_finite() && hi.is_finite() && lo <= 0.0 && hi >= 1.0) {
        return Err(Error::input(format!("accounting domain [{lo}, {hi}] must contain [0, 1]")));
    }
    if points_per_interval < 2 {
        return Err(Error::input("need at least two grid points per interval"));
    }
    let eta = table.natural_params();
    if eta.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::input("natural parameters must be finite"));
    }
    let grid = table.grid();
    let b_in = table.b_in();
    let scale = (b_in - 1) as f64;
    let mut best_bound = 0.0f64;
    let mut best_raw = 0.0f64;
    let mut max_pad = 0.0f64;
    for i in 0..b_in - 1 {
        let theta = diff(&eta[i + 1], &eta[i]);
        let start = if i == 0 { lo } else { grid[i] };
        let end = if i == b_in - 2 { hi } else { grid[i + 1] };
        let width = grid[i + 1] - grid[i];
        let units = ((end - start) / width).ceil().max(1.0) as usize;
        let n = points_per_interval * units;
        let step = (end - start) / (n - 1) as f64;
        let (tmin, tmax) = theta
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(*t), b.max(*t)));
        let lipschitz = scale * (tmax - tmin).powi(2) / 4.0;
        let pad = lipschitz * step / 2.0;
        let mut raw = 0.0f64;
        for k in 0..n {
            let xi = if k == n - 1 { end } else { start + step * k as f64 };
            let w_hi = (xi - grid[i]) / width;
            let w_lo = (grid[i + 1] - xi) / width;
            let eta_x: Vec<f64> = eta[i]
                .iter()
                .zip(&eta[i + 1])
                .map(|(a, b)| w_lo * a + w_hi * b)
                .collect();
            let sigma = softmax(&eta_x);
            let h: f64 = sigma.iter().zip(&theta).map(|(s, t)| s * t).sum::<f64>().abs();
            raw = raw.max(h);
        }
        best_raw = best_raw.max(raw);
        best_bound = best_bound.max(raw + pad);
        max_pad = max_pad.max(pad);
    }
    Ok(EpsPrime {
        value: scale * best_bound,
        grid_value: scale * best_raw,
        grid_points_per_interval: points_per_interval,
        lipschitz_pad: max_pad,
    })
}

/// Per-round pure-DP cost `(ε + ε′)·C₁`.
pub fn l1_round_eps(mech: &InterpolatedMechanism, c1_sens: f64) -> Result<f64> {
    let eps_prime = mech
        .eps_prime()
        .ok_or_else(|| Error::State("eps_prime has not been computed for this mechanism".into()))?;
    if !(c1_sens >= 0.0 && c1_sens.is_finite()) {
        return Err(Error::input(format!("sensitivity must be non-negative, got {c1_sens}")));
    }
    Ok((mech.table().design_eps() + eps_prime) * c1_sens)
}

/// `I_Z(x) = Σ_j θ_j² σ_j − (Σ_j θ_j σ_j)²` at `η(x) = (1 − x)η_1 + xη_2`,
/// evaluated as a centred second moment so it is never negative.
pub fn fisher_info(eta1: &[f64], eta2: &[f64], x: f64) -> f64 {
    let eta: Vec<f64> = eta1
        .iter()
        .zip(eta2)
        .map(|(a, b)| (1.0 - x) * a + x * b)
        .collect();
    let sigma = softmax(&eta);
    fisher_from_sigma(&sigma, eta1, eta2)
}

fn fisher_from_sigma(sigma: &[f64], eta1: &[f64], eta2: &[f64]) -> f64 {
    let mean: f64 = sigma
        .iter()
        .zip(eta1.iter().zip(eta2))
        .map(|(s, (a, b))| s * (b - a))
        .sum();
    sigma
        .iter()
        .zip(eta1.iter().zip(eta2))
        .map(|(s, (a, b))| {
            let c = (b - a) - mean;
            s * c * c
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FisherSup {
    /// Certified `M ≥ sup_x I_Z(x)`.
    pub m: f64,
    /// `I_Z(1/2)`.
    pub i_star: f64,
    /// Beyond `x_max` (and below `1 − x_max`) the tail bound keeps
    /// `I_Z ≤ I*`.
    pub x_max: f64,
    pub j_plus: usize,
    /// Largest value found by evaluation.
    pub grid_max: f64,
    /// Evaluations spent in the line search.
    pub evaluations: usize,
    /// Lipschitz constant `6‖θ‖∞³` used for padding.
    pub lipschitz: f64,
}

/// Certified `M = sup_{x∈ℝ} I_Z(x)` for an anadromic pair `(η_1, η_2)`.
///
/// The search exploits the symmetry `I_Z(x) = I_Z(1 − x)` and the tail bound
/// `I_Z(x) ≤ 4θ_{j⁺}² s(1 − s)` for `s = σ(η(x))_{j⁺} ≥ 1/2`: beyond the point
/// where `s` reaches `(1 + √(1 − I*/θ_{j⁺}²))/2` the information cannot
/// exceed `I* = I_Z(1/2)`. The bounded range `[1/2, x_max]` is then searched
/// by Lipschitz branch-and-bound (`|I_Z′| ≤ 6‖θ‖∞³`) until the certified bound
/// is within a factor `1 + tol` of the best evaluation.
pub fn fisher_sup(eta1: &[f64], eta2: &[f64], tol: f64) -> Result<FisherSup> {
    if eta1.len() != eta2.len() || eta1.is_empty() {
        return Err(Error::input("natural parameter vectors must have equal, non-zero length"));
    }
    if eta1.iter().chain(eta2).any(|v| !v.is_finite()) {
        return Err(Error::input("natural parameters must be finite"));
    }
    if !(tol > 0.0) {
        return Err(Error::input(format!("tolerance must be positive, got {tol}")));
    }
    let b = eta1.len();
    let asym = (0..b)
        .map(|j| (eta1[j] - eta2[b - 1 - j]).abs())
        .fold(0.0f64, f64::max);
    if asym > 1e-9 {
        return Err(Error::Symmetry(format!(
            "natural parameters are not anadromic (max mismatch {asym:.3e}); apply enforce_anadromic first"
        )));
    }
    let theta = diff(eta2, eta1);
    let theta_inf = theta.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if theta_inf == 0.0 {
        return Ok(FisherSup {
            m: 0.0,
            i_star: 0.0,
            x_max: 0.5,
            j_plus: 0,
            grid_max: 0.0,
            evaluations: 0,
            lipschitz: 0.0,
        });
    }
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|x, y| theta[*y].total_cmp(&theta[*x]));
    let j_plus = order[0];
    if b > 1 && theta[order[0]] - theta[order[1]] <= 1e-12 {
        return Err(Error::Uniqueness(format!(
            "argmax of θ is not unique (θ[{}] = {}, θ[{}] = {})",
            order[0], theta[order[0]], order[1], theta[order[1]]
        )));
    }
    let t2 = theta[j_plus] * theta[j_plus];
    let fisher = |x: f64| fisher_info(eta1, eta2, x);
    let sigma_plus = |x: f64| {
        let eta: Vec<f64> = eta1.iter().zip(eta2).map(|(a, c)| (1.0 - x) * a + x * c).collect();
        softmax(&eta)[j_plus]
    };

    let i_star = fisher(0.5);
    let s_target = (1.0 + (1.0 - i_star / t2).max(0.0).sqrt()) / 2.0;

    // σ_{j⁺}(η(x)) increases monotonically towards 1.
    let mut lo = 0.5;
    let mut span = 1.0;
    while sigma_plus(0.5 + span) < s_target {
        lo = 0.5 + span;
        span *= 2.0;
        if span > 1e12 {
            return Err(Error::State(
                "could not bracket the tail point of the Fisher information".into(),
            ));
        }
    }
    let mut hi = 0.5 + span;
    while hi - lo > 1e-12 * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if sigma_plus(mid) >= s_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let x_max = hi;

    let lipschitz = 6.0 * theta_inf.powi(3);
    let n0 = FISHER_INITIAL_CELLS;
    let width0 = (x_max - 0.5) / n0 as f64;
    let xs: Vec<f64> = (0..=n0)
        .map(|k| if k == n0 { x_max } else { 0.5 + width0 * k as f64 })
        .collect();
    let vals: Vec<f64> = xs.iter().map(|x| fisher(*x)).collect();
    let mut evaluations = vals.len();
    let mut best = vals.iter().copied().fold(i_star, f64::max);
    let mut cells: Vec<(f64, f64, f64, f64)> = (0..n0)
        .map(|k| (xs[k], xs[k + 1], vals[k], vals[k + 1]))
        .collect();
    let mut certified = best;
    while let Some((a, c, fa, fc)) = cells.pop() {
        let bound = 0.5 * (fa + fc) + lipschitz * (c - a) / 2.0;
        if bound <= best * (1.0 + tol) || c - a <= 1e-14 * c.abs().max(1.0) {
            certified = certified.max(bound);
            continue;
        }
        let m = 0.5 * (a + c);
        let fm = fisher(m);
        evaluations += 1;
        best = best.max(fm);
        cells.push((a, m, fa, fm));
        cells.push((m, c, fm, fc));
    }
    Ok(FisherSup {
        m: certified.max(best),
        i_star,
        x_max,
        j_plus,
        grid_max: best,
        evaluations,
        lipschitz,
    })
}

/// Per-round RDP cost `ε_α = α·M·C₂²/2`.
pub fn l2_round_rdp(m: f64, c2_sens: f64, alphas: &[f64]) -> Result<Vec<f64>> {
    if !(m >= 0.0 && m.is_finite()) {
        return Err(Error::input(format!("Fisher bound must be non-negative, got {m}")));
    }
    if !(c2_sens >= 0.0 && c2_sens.is_finite()) {
        return Err(Error::input(format!("sensitivity must be non-negative, got {c2_sens}")));
    }
    check_alphas(alphas)?;
    Ok(alphas.iter().map(|a| a * m * c2_sens * c2_sens / 2.0).collect())
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::input("empty alpha grid"));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 1.0 && a.is_finite())) {
        return Err(Error::input(format!("RDP orders must exceed 1, got {a}")));
    }
    Ok(())
}

/// `(ε, α*)` minimizing `ε_α + ln((α−1)/α) − (ln δ + ln α)/(α−1)` over the grid.
pub fn rdp_to_dp(eps_alphas: &[f64], alphas: &[f64], delta: f64) -> Result<(f64, f64)> {
    check_alphas(alphas)?;
    if eps_alphas.len() != alphas.len() {
        return Err(Error::input("one RDP epsilon is needed per order"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::input(format!("delta must lie in (0, 1), got {delta}")));
    }
    let ln_delta = delta.ln();
    let mut best = (f64::INFINITY, alphas[0]);
    for (e, a) in eps_alphas.iter().zip(alphas) {
        let eps = e + ((a - 1.0) / a).ln() - (ln_delta + a.ln()) / (a - 1.0);
        if eps < best.0 {
            best = (eps, *a);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaselineBudget {
    /// Gaussian noise with standard deviation `σ·C` at sensitivity `C`.
    GaussianRdp { sigma: f64 },
    /// Laplace noise with scale `C₁/ε` at sensitivity `C₁`.
    LaplacePure { eps: f64 },
}

/// Per-round cost of a non-compressed baseline: `α/(2σ²)` per order for the
/// Gaussian mechanism, `ε` for Laplace.
pub fn baseline_budgets(kind: BaselineBudget, alphas: &[f64]) -> Result<Vec<f64>> {
    match kind {
        BaselineBudget::GaussianRdp { sigma } => {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::input(format!("noise multiplier must be positive, got {sigma}")));
            }
            check_alphas(alphas)?;
            Ok(alphas.iter().map(|a| a / (2.0 * sigma * sigma)).collect())
        }
        BaselineBudget::LaplacePure { eps } => {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::input(format!("epsilon must be positive, got {eps}")));
            }
            Ok(vec![eps])
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerMode {
    Pure,
    Rdp,
}

/// Per-round costs and their composition. Consecutive rounds with identical
/// cost share one entry, so a constant-cost history composes to exactly
/// `cost × T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub mode: LedgerMode,
    pub alphas: Vec<f64>,
    pub delta: f64,
    entries: Vec<(Vec<f64>, u64)>,
}

impl PrivacyLedger {
    pub fn pure(delta: f64) -> Result<Self> {
        Self::build(LedgerMode::Pure, Vec::new(), delta)
    }

    pub fn rdp(alphas: Vec<f64>, delta: f64) -> Result<Self> {
        check_alphas(&alphas)?;
        if alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("RDP orders must be strictly ascending"));
        }
        Self::build(LedgerMode::Rdp, alphas, delta)
    }

    fn build(mode: LedgerMode, alphas: Vec<f64>, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::input(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self {
            mode,
            alphas,
            delta,
            entries: Vec::new(),
        })
    }

    fn cost_len(&self) -> usize {
        match self.mode {
            LedgerMode::Pure => 1,
            LedgerMode::Rdp => self.alphas.len(),
        }
    }

    /// Records `rounds` rounds at `cost` (a single ε in pure mode, one ε_α per
    /// order in RDP mode).
    pub fn record(&mut self, cost: &[f64], rounds: u64) -> Result<()> {
        if cost.len() != self.cost_len() {
            return Err(Error::input(format!(
                "expected {} per-round costs, got {}",
                self.cost_len(),
                cost.len()
            )));
        }
        if let Some(c) = cost.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
            return Err(Error::input(format!("per-round cost must be non-negative, got {c}")));
        }
        if rounds == 0 {
            return Ok(());
        }
        match self.entries.last_mut() {
            Some((c, n)) if c.as_slice() == cost => *n += rounds,
            _ => self.entries.push((cost.to_vec(), rounds)),
        }
        Ok(())
    }

    pub fn rounds(&self) -> u64 {
        self.entries.iter().map(|(_, n)| n).sum()
    }

    pub fn entries(&self) -> &[(Vec<f64>, u64)] {
        &self.entries
    }

    /// Total cost: `Σ cost × rounds`, per order in RDP mode.
    pub fn compose(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.cost_len()];
        for (cost, n) in &self.entries {
            for (t, c) in total.iter_mut().zip(cost) {
                *t += c * *n as f64;
            }
        }
        total
    }

    /// `(ε, α*)` of the composed cost. Pure mode reports the composed ε
    /// (valid for every δ) and no order.
    pub fn epsilon(&self) -> Result<(f64, Option<f64>)> {
        let total = self.compose();
        match self.mode {
            LedgerMode::Pure => Ok((total[0], None)),
            LedgerMode::Rdp => {
                let (e, a) = rdp_to_dp(&total, &self.alphas, self.delta)?;
                Ok((e, Some(a)))
            }
        }
    }
}

/// Accounting report document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountingReport {
    pub mechanism_file: String,
    pub mode: LedgerMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_prime: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fisher_m: Option<f64>,
    pub c_sens: f64,
    pub rounds: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    pub per_round: Vec<f64>,
    pub composed: Vec<f64>,
    pub delta: f64,
    pub eps_dp: f64,
    pub argmin_alpha: Option<f64>,
    pub certification: Certification,
}
