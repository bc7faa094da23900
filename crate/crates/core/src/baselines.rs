//! Reference mechanisms: Laplace and Gaussian (uncompressed) and SignSGD
//! (one bit per coordinate).
//!
//! Skellam is not implemented. Its noise scale follows the convention
//! `μ = (σC)²` for a Gaussian-equivalent noise multiplier `σ`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::accountant::{baseline_budgets, BaselineBudget};
use crate::error::{Error, Result};
use crate::mechanism::{clip, ClipConfig, NormKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Laplace,
    Gaussian,
    SignSgd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub clip: ClipConfig,
    /// `ε` for Laplace, noise multiplier `σ` for Gaussian and SignSGD.
    pub noise: f64,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, clip: ClipConfig, noise: f64) -> Result<Self> {
        let expected = match kind {
            BaselineKind::Laplace => NormKind::L1,
            BaselineKind::Gaussian | BaselineKind::SignSgd => NormKind::L2,
        };
        if clip.norm != expected {
            return Err(Error::input(format!("{kind:?} needs {expected:?} clipping")));
        }
        if !(noise > 0.0) {
            return Err(Error::input(format!("noise parameter must be positive, got {noise}")));
        }
        Ok(Self { kind, clip, noise })
    }

    /// Per-round ledger cost. SignSGD is post-processing of the Gaussian
    /// mechanism and is charged identically.
    pub fn round_cost(&self, alphas: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            BaselineKind::Laplace => baseline_budgets(BaselineBudget::LaplacePure { eps: self.noise }, alphas),
            BaselineKind::Gaussian | BaselineKind::SignSgd => {
                baseline_budgets(BaselineBudget::GaussianRdp { sigma: self.noise }, alphas)
            }
        }
    }
}

/// Laplace(0, b) by inverse CDF.
fn laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let mut raw: f64 = rng.random();
    while raw == 0.0 {
        raw = rng.random();
    }
    let u = raw - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn require(cfg: &BaselineConfig, kind: BaselineKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::input(format!("expected a {kind:?} config, got {:?}", cfg.kind)));
    }
    Ok(())
}

/// Clipped input plus iid Laplace noise of scale `C₁/ε`.
pub fn laplace_mech<R: Rng + ?Sized>(u: &[f64], cfg: &BaselineConfig, rng: &mut R) -> Result<Vec<f64>> {
    require(cfg, BaselineKind::Laplace)?;
    let scale = cfg.clip.clip_c / cfg.noise;
    Ok(clip(u, &cfg.clip)
        .into_iter()
        .map(|v| if scale == 0.0 { v } else { v + laplace(scale, rng) })
        .collect())
}

fn gaussian_noise<R: Rng + ?Sized>(u: &[f64], cfg: &BaselineConfig, rng: &mut R) -> Result<Vec<f64>> {
    let std = cfg.noise * cfg.clip.clip_c;
    let normal = Normal::new(0.0, std).map_err(|e| Error::input(e.to_string()))?;
    Ok(clip(u, &cfg.clip)
        .into_iter()
        .map(|v| v + normal.sample(rng))
        .collect())
}

/// Clipped input plus iid `N(0, (σC₂)²)` noise.
pub fn gaussian_mech<R: Rng + ?Sized>(u: &[f64], cfg: &BaselineConfig, rng: &mut R) -> Result<Vec<f64>> {
    require(cfg, BaselineKind::Gaussian)?;
    gaussian_noise(u, cfg, rng)
}

/// Signs of the Gaussian-mechanism output; an exact zero maps to `+1`.
pub fn signsgd<R: Rng + ?Sized>(u: &[f64], cfg: &BaselineConfig, rng: &mut R) -> Result<Vec<i8>> {
    require(cfg, BaselineKind::SignSgd)?;
    Ok(gaussian_noise(u, cfg, rng)?
        .into_iter()
        .map(|v| if v < 0.0 { -1 } else { 1 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn cfg(kind: BaselineKind, noise: f64) -> BaselineConfig {
        let norm = if kind == BaselineKind::Laplace { NormKind::L1 } else { NormKind::L2 };
        BaselineConfig::new(kind, ClipConfig::new(norm, 1.0).unwrap(), noise).unwrap()
    }

    fn var(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn config_norm_rules() {
        let l2 = ClipConfig::new(NormKind::L2, 1.0).unwrap();
        assert!(BaselineConfig::new(BaselineKind::Laplace, l2, 1.0).is_err());
        assert!(BaselineConfig::new(BaselineKind::Gaussian, l2, 0.0).is_err());
    }

    #[test]
    fn laplace_limits_and_variance() {
        let c = cfg(BaselineKind::Laplace, f64::INFINITY);
        let out = laplace_mech(&[3.0, -1.0], &c, &mut seeded(0)).unwrap();
        assert_eq!(out, vec![0.75, -0.25]);

        let c = cfg(BaselineKind::Laplace, 5.0);
        let mut rng = seeded(1);
        let draws: Vec<f64> = (0..1_000_000).map(|_| laplace_mech(&[0.0], &c, &mut rng).unwrap()[0]).collect();
        let v = var(&draws);
        assert!((v / 0.08 - 1.0).abs() < 0.02, "variance {v}");
    }

    #[test]
    fn gaussian_std_and_mean() {
        let c = cfg(BaselineKind::Gaussian, 0.7);
        let mut rng = seeded(2);
        let draws: Vec<f64> = (0..1_000_000).map(|_| gaussian_mech(&[0.3], &c, &mut rng).unwrap()[0]).collect();
        let sd = var(&draws).sqrt();
        assert!((sd / 0.7 - 1.0).abs() < 0.01, "std {sd}");
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.3).abs() < 5.0 * 0.7 / 1000.0);

        let tiny = cfg(BaselineKind::Gaussian, 1e-300);
        assert_eq!(gaussian_mech(&[0.25], &tiny, &mut rng).unwrap(), vec![0.25]);
    }

    #[test]
    fn signsgd_behaviour() {
        let c = cfg(BaselineKind::SignSgd, 1e-6);
        let out = signsgd(&[0.9, -0.1], &c, &mut seeded(3)).unwrap();
        assert_eq!(out, vec![1, -1]);

        let c = cfg(BaselineKind::SignSgd, 1.0);
        let mut rng = seeded(4);
        let n = 100_000;
        let pos = (0..n).filter(|_| signsgd(&[0.0], &c, &mut rng).unwrap()[0] == 1).count();
        let frac = pos as f64 / n as f64;
        assert!((frac - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt(), "{frac}");
    }

    #[test]
    fn signsgd_charged_like_gaussian() {
        let alphas = [1.5, 2.0, 8.0];
        let g = cfg(BaselineKind::Gaussian, 1.3).round_cost(&alphas).unwrap();
        let s = cfg(BaselineKind::SignSgd, 1.3).round_cost(&alphas).unwrap();
        assert_eq!(g, s);
    }

    #[test]
    fn deterministic_under_seed() {
        let c = cfg(BaselineKind::Gaussian, 1.0);
        let a = gaussian_mech(&[0.1; 8], &c, &mut seeded(9)).unwrap();
        let b = gaussian_mech(&[0.1; 8], &c, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }
}
