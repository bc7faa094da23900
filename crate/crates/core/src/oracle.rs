//! Exact divergences by enumeration over the finite output space.
//!
//! These routines are the ground truth the accountant's bounds are checked
//! against. They work in the log domain throughout and share no code with the
//! accountant's bound computations.

use crate::error::{Error, Result};
use crate::mechanism::{log_sum_exp, InterpolatedMechanism};

/// Largest joint outcome space [`joint_divergence_bruteforce`] enumerates.
pub const MAX_JOINT_OUTCOMES: usize = 4096;

fn check_logs(lp: &[f64], lq: &[f64]) -> Result<()> {
    if lp.len() != lq.len() || lp.is_empty() {
        return Err(Error::input("distributions must have equal, non-zero support"));
    }
    if lp.iter().chain(lq).any(|v| !v.is_finite()) {
        return Err(Error::input("probabilities must be strictly positive"));
    }
    Ok(())
}

fn logs_of(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = p.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::input(format!("probabilities must be strictly positive, got {v}")));
    }
    Ok(p.iter().map(|v| v.ln()).collect())
}

/// `max_j |ln p_j − ln q_j|`.
pub fn exact_max_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    max_divergence_log(&logs_of(p)?, &logs_of(q)?)
}

pub fn max_divergence_log(lp: &[f64], lq: &[f64]) -> Result<f64> {
    check_logs(lp, lq)?;
    Ok(lp.iter().zip(lq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// `D_α(p‖q) = ln(Σ_j p_j^α q_j^{1−α}) / (α − 1)`.
pub fn exact_renyi(p: &[f64], q: &[f64], alpha: f64) -> Result<f64> {
    renyi_log(&logs_of(p)?, &logs_of(q)?, alpha)
}

pub fn renyi_log(lp: &[f64], lq: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::input(format!("Rényi order must exceed 1, got {alpha}")));
    }
    check_logs(lp, lq)?;
    let terms: Vec<f64> = lp
        .iter()
        .zip(lq)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    Ok((log_sum_exp(&terms) / (alpha - 1.0)).max(0.0))
}

/// Order of a divergence query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Order {
    Alpha(f64),
    Infinity,
}

/// Divergence between the product distributions of the vector mechanism at
/// `x` and `x_prime`, computed over every joint outcome without using
/// independence.
pub fn joint_divergence_bruteforce(
    mech: &InterpolatedMechanism,
    x: &[f64],
    x_prime: &[f64],
    order: Order,
) -> Result<f64> {
    let d = x.len();
    if d == 0 || d != x_prime.len() {
        return Err(Error::input("input vectors must have equal, non-zero length"));
    }
    let b = mech.table().b_out();
    let outcomes = b
        .checked_pow(d as u32)
        .filter(|n| *n <= MAX_JOINT_OUTCOMES && d <= 3)
        .ok_or_else(|| {
            Error::Size(format!("joint space {b}^{d} exceeds {MAX_JOINT_OUTCOMES} outcomes or d > 3"))
        })?;
    let lp: Vec<Vec<f64>> = x.iter().map(|v| mech.log_pmf(*v)).collect::<Result<_>>()?;
    let lq: Vec<Vec<f64>> = x_prime.iter().map(|v| mech.log_pmf(*v)).collect::<Result<_>>()?;
    let mut joint_p = Vec::with_capacity(outcomes);
    let mut joint_q = Vec::with_capacity(outcomes);
    for code in 0..outcomes {
        let mut rest = code;
        let (mut a, mut c) = (0.0, 0.0);
        for k in 0..d {
            let j = rest % b;
            rest /= b;
            a += lp[k][j];
            c += lq[k][j];
        }
        joint_p.push(a);
        joint_q.push(c);
    }
    match order {
        Order::Alpha(alpha) => renyi_log(&joint_p, &joint_q, alpha),
        Order::Infinity => max_divergence_log(&joint_p, &joint_q),
    }
}

/// Maximum of the Fisher information over `n` uniform points of `range`.
pub fn fisher_grid_max(eta1: &[f64], eta2: &[f64], range: (f64, f64), n: usize) -> Result<f64> {
    if n < 10_000 {
        return Err(Error::input(format!("need at least 10^4 grid points, got {n}")));
    }
    if eta1.len() != eta2.len() {
        return Err(Error::input("natural parameter vectors must have equal length"));
    }
    let (lo, hi) = range;
    let step = (hi - lo) / (n - 1) as f64;
    let theta: Vec<f64> = eta2.iter().zip(eta1).map(|(a, b)| a - b).collect();
    let mut best = 0.0f64;
    let mut eta = vec![0.0; eta1.len()];
    for k in 0..n {
        let x = lo + step * k as f64;
        for (e, (a, b)) in eta.iter_mut().zip(eta1.iter().zip(eta2)) {
            *e = (1.0 - x) * a + x * b;
        }
        let a = log_sum_exp(&eta);
        // E[θ²] − E[θ]², both under softmax(η).
        let (mut m1, mut m2) = (0.0, 0.0);
        for (e, t) in eta.iter().zip(&theta) {
            let s = (e - a).exp();
            m1 += s * t;
            m2 += s * t * t;
        }
        best = best.max(m2 - m1 * m1);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{ClipConfig, MechanismTable, NormKind};
    use approx::assert_abs_diff_eq;

    const RR_P: [f64; 2] = [0.75, 0.25];
    const RR_Q: [f64; 2] = [0.25, 0.75];

    fn rr() -> InterpolatedMechanism {
        let t = MechanismTable::new(
            vec![0.0, 1.0],
            vec![-0.5, 1.5],
            vec![RR_P.iter().map(|v| v.ln()).collect(), RR_Q.iter().map(|v| v.ln()).collect()],
            3f64.ln(),
        )
        .unwrap();
        InterpolatedMechanism::new(t, 1.0, ClipConfig::new(NormKind::L2, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn max_divergence_values() {
        assert_eq!(exact_max_divergence(&RR_P, &RR_P).unwrap(), 0.0);
        assert_abs_diff_eq!(exact_max_divergence(&RR_P, &RR_Q).unwrap(), 3f64.ln(), epsilon = 1e-15);
        assert_eq!(
            exact_max_divergence(&[0.2, 0.8], &[0.6, 0.4]).unwrap(),
            exact_max_divergence(&[0.6, 0.4], &[0.2, 0.8]).unwrap()
        );
        assert!(exact_max_divergence(&[1.0, 0.0], &RR_P).is_err());
    }

    #[test]
    fn renyi_values() {
        for a in [1.5, 2.0, 10.0] {
            assert_abs_diff_eq!(exact_renyi(&RR_P, &RR_P, a).unwrap(), 0.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(exact_renyi(&RR_P, &RR_Q, 2.0).unwrap(), 0.847_297_860_387_203_7, epsilon = 1e-12);
        let m = rr();
        let p = m.pmf(0.5).unwrap();
        let q = m.pmf(0.6).unwrap();
        assert_abs_diff_eq!(exact_renyi(&p, &q, 2.0).unwrap(), 0.012_045_288_701_641_29, epsilon = 1e-12);
        assert!(exact_renyi(&RR_P, &RR_Q, 1.0).is_err());
    }

    #[test]
    fn renyi_tends_to_max_divergence() {
        let big = exact_renyi(&RR_P, &RR_Q, 1e6).unwrap();
        assert_abs_diff_eq!(big, exact_max_divergence(&RR_P, &RR_Q).unwrap(), epsilon = 1e-3);
        // For an asymmetric pair the limit is the one-sided max log ratio.
        let (p, q): ([f64; 3], [f64; 3]) = ([0.5, 0.3, 0.2], [0.2, 0.5, 0.3]);
        let one_sided = (0..3).map(|j| (p[j] / q[j]).ln()).fold(f64::MIN, f64::max);
        assert_abs_diff_eq!(exact_renyi(&p, &q, 1e6).unwrap(), one_sided, epsilon = 1e-3);
        assert!(exact_max_divergence(&p, &q).unwrap() >= one_sided - 1e-15);
    }

    #[test]
    fn joint_reduces_and_adds() {
        let m = rr();
        let single = joint_divergence_bruteforce(&m, &[0.2], &[0.9], Order::Alpha(2.0)).unwrap();
        let direct = exact_renyi(&m.pmf(0.2).unwrap(), &m.pmf(0.9).unwrap(), 2.0).unwrap();
        assert_abs_diff_eq!(single, direct, epsilon = 1e-14);
        let double = joint_divergence_bruteforce(&m, &[0.2, 0.2], &[0.9, 0.9], Order::Alpha(2.0)).unwrap();
        assert_abs_diff_eq!(double, 2.0 * single, epsilon = 1e-12);
        let xs = [0.1, -0.4, 1.3];
        let ys = [0.7, 0.2, 0.9];
        let joint = joint_divergence_bruteforce(&m, &xs, &ys, Order::Alpha(2.0)).unwrap();
        let sum: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(a, b)| exact_renyi(&m.pmf(*a).unwrap(), &m.pmf(*b).unwrap(), 2.0).unwrap())
            .sum();
        assert_abs_diff_eq!(joint, sum, epsilon = 1e-9);
        assert!(matches!(
            joint_divergence_bruteforce(&m, &[0.0; 4], &[0.0; 4], Order::Alpha(2.0)),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn grid_max_on_rr() {
        let e1: Vec<f64> = RR_P.iter().map(|v| v.ln()).collect();
        let e2: Vec<f64> = RR_Q.iter().map(|v| v.ln()).collect();
        let m = fisher_grid_max(&e1, &e2, (-20.0, 21.0), 1_000_000).unwrap();
        assert_abs_diff_eq!(m, 1.206_948_96, epsilon = 1e-5);
        assert_eq!(fisher_grid_max(&e1, &e1, (-20.0, 21.0), 10_000).unwrap(), 0.0);
        assert!(fisher_grid_max(&e1, &e2, (0.0, 1.0), 10).is_err());
    }
}
