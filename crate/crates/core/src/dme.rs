//! Distributed mean estimation harness and the bias/variance sweep comparing
//! I-MVU against MVU dithering.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::baselines::{gaussian_mech, laplace_mech, signsgd, BaselineConfig, BaselineKind};
use crate::error::{Error, Result};
use crate::mechanism::{alphabet_moments, mvu_dither_pmf, InterpolatedMechanism, MechanismTable};

/// Number of x values in the default sweep grid.
pub const SWEEP_POINTS: usize = 201;

/// Bits charged per coordinate for an uncompressed float.
pub const FLOAT_BITS: f64 = 32.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SweepMechanism {
    Imvu,
    Mvu,
}

impl SweepMechanism {
    pub fn id(self) -> &'static str {
        match self {
            SweepMechanism::Imvu => "imvu",
            SweepMechanism::Mvu => "mvu",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub mechanism: SweepMechanism,
    pub b_in: usize,
    pub x: f64,
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Variance `2/ε²` of the Laplace mechanism at unit sensitivity.
    pub laplace_variance: f64,
}

impl SweepReport {
    pub fn rows_for(&self, mechanism: SweepMechanism, b_in: usize) -> impl Iterator<Item = &SweepRow> {
        self.rows
            .iter()
            .filter(move |r| r.mechanism == mechanism && r.b_in == b_in)
    }

    pub fn max_abs_bias(&self, mechanism: SweepMechanism, b_in: usize) -> f64 {
        self.rows_for(mechanism, b_in).map(|r| r.bias.abs()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mechanism,b_in,x,mean,bias,variance,laplace_ref\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.mechanism.id(),
                r.b_in,
                r.x,
                r.mean,
                r.bias,
                r.variance,
                self.laplace_variance
            );
        }
        out
    }
}

/// `n` uniform points on `[0, 1]`.
pub fn uniform_points(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|k| k as f64 / (n - 1) as f64).collect(),
    }
}

/// Closed-form mean and variance of I-MVU and MVU dithering at every x for
/// every table. Rows are ordered by table, then mechanism (I-MVU first),
/// then x.
pub fn sweep_bias_variance(tables: &[MechanismTable], x_grid: &[f64], eps: f64) -> Result<SweepReport> {
    let Some(first) = tables.first() else {
        return Err(Error::input("sweep needs at least one table"));
    };
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::input(format!("epsilon must be positive, got {eps}")));
    }
    for t in tables {
        if t.b_out() != first.b_out() {
            return Err(Error::input(format!(
                "tables disagree on output size: {} vs {}",
                t.b_out(),
                first.b_out()
            )));
        }
        if (t.design_eps() - eps).abs() > 1e-12 * eps {
            return Err(Error::input(format!(
                "table with b_in={} was designed at eps={}, sweep uses eps={eps}",
                t.b_in(),
                t.design_eps()
            )));
        }
    }
    if let Some(x) = x_grid.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::input(format!("sweep points must lie in [0, 1], got {x}")));
    }

    let jobs: Vec<(&MechanismTable, SweepMechanism, f64)> = tables
        .iter()
        .flat_map(|t| {
            [SweepMechanism::Imvu, SweepMechanism::Mvu]
                .into_iter()
                .flat_map(move |m| x_grid.iter().map(move |x| (t, m, *x)))
        })
        .collect();
    let rows = jobs
        .par_iter()
        .map(|(t, m, x)| {
            let pmf = match m {
                SweepMechanism::Imvu => t.imvu_pmf(*x)?,
                SweepMechanism::Mvu => mvu_dither_pmf(t, *x)?,
            };
            let (mean, variance) = alphabet_moments(t.alphabet(), &pmf);
            Ok(SweepRow {
                mechanism: *m,
                b_in: t.b_in(),
                x: *x,
                mean,
                bias: mean - x,
                variance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        rows,
        laplace_variance: 2.0 / (eps * eps),
    })
}

/// Per-coordinate distribution of client vectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InputDist {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl InputDist {
    fn draw<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<Vec<f64>> {
        Ok(match *self {
            InputDist::Constant(v) => vec![v; d],
            InputDist::Uniform { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::input(format!("empty uniform range [{lo}, {hi})")));
                }
                (0..d).map(|_| rng.random_range(lo..hi)).collect()
            }
            InputDist::Gaussian { mean, std } => {
                let n = Normal::new(mean, std).map_err(|e| Error::input(e.to_string()))?;
                (0..d).map(|_| n.sample(rng)).collect()
            }
        })
    }
}

/// What each client sends.
#[derive(Clone, Copy, Debug)]
pub enum DmeMechanism<'a> {
    /// Exact values, no privacy. For checking the plumbing.
    Identity,
    Imvu(&'a InterpolatedMechanism),
    Baseline(BaselineConfig),
}

impl DmeMechanism<'_> {
    pub fn bits_per_coord(&self) -> f64 {
        match self {
            DmeMechanism::Imvu(m) => m.table().bits() as f64,
            DmeMechanism::Baseline(c) if c.kind == BaselineKind::SignSgd => 1.0,
            _ => FLOAT_BITS,
        }
    }

    /// Server-side decode of one client's message. SignSGD signs are scaled
    /// by `C/√d`, the per-coordinate magnitude of a vector of norm `C`.
    fn encode_decode<R: Rng + ?Sized>(&self, u: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self {
            DmeMechanism::Identity => Ok(u.to_vec()),
            DmeMechanism::Imvu(m) => Ok(m.privatize_vector(u, rng)?.decoded),
            DmeMechanism::Baseline(c) => match c.kind {
                BaselineKind::Laplace => laplace_mech(u, c, rng),
                BaselineKind::Gaussian => gaussian_mech(u, c, rng),
                BaselineKind::SignSgd => {
                    let unit = c.clip.clip_c / (u.len() as f64).sqrt();
                    Ok(signsgd(u, c, rng)?.into_iter().map(|s| s as f64 * unit).collect())
                }
            },
        }
    }
}

/// Mean squared error per coordinate, `‖estimate − mean‖² / d`, of the
/// server's average of decoded messages against the true mean of the
/// clients' raw vectors, averaged over `trials`. Also returns the wire cost
/// in bits per coordinate.
pub fn dme_mse<R: Rng + ?Sized>(
    n_clients: usize,
    d: usize,
    input_dist: InputDist,
    mechanism: DmeMechanism<'_>,
    rng: &mut R,
    trials: usize,
) -> Result<(f64, f64)> {
    if n_clients == 0 || trials == 0 || d == 0 {
        return Err(Error::input("n_clients, trials and d must be positive"));
    }
    let mut total = 0.0;
    for _ in 0..trials {
        let mut truth = vec![0.0; d];
        let mut estimate = vec![0.0; d];
        for _ in 0..n_clients {
            let u = input_dist.draw(d, rng)?;
            let msg = mechanism.encode_decode(&u, rng)?;
            for k in 0..d {
                truth[k] += u[k];
                estimate[k] += msg[k];
            }
        }
        let n = n_clients as f64;
        total += truth
            .iter()
            .zip(&estimate)
            .map(|(t, e)| (e / n - t / n).powi(2))
            .sum::<f64>()
            / d as f64;
    }
    Ok((total / trials as f64, mechanism.bits_per_coord()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designer::{design_mvu, DesignSpec};
    use crate::mechanism::{ClipConfig, NormKind};
    use crate::rng::seeded;

    fn tables(eps: f64) -> Vec<MechanismTable> {
        [2, 4, 8]
            .iter()
            .map(|b| design_mvu(&DesignSpec::new(*b, 8, eps)).unwrap())
            .collect()
    }

    #[test]
    fn sweep_covers_grid_and_orders_rows() {
        let ts = tables(5.0);
        let xs = uniform_points(SWEEP_POINTS);
        let r = sweep_bias_variance(&ts, &xs, 5.0).unwrap();
        assert_eq!(r.rows.len(), 3 * 2 * SWEEP_POINTS);
        assert_eq!(r.laplace_variance, 0.08);
        assert_eq!(r.rows[0].mechanism, SweepMechanism::Imvu);
        assert_eq!(r.rows[SWEEP_POINTS].mechanism, SweepMechanism::Mvu);
        assert_eq!(r.rows[2 * SWEEP_POINTS].b_in, 4);
        for row in &r.rows {
            assert_eq!(row.bias, row.mean - row.x);
        }
        for b in [2, 4, 8] {
            assert!(r.max_abs_bias(SweepMechanism::Mvu, b) <= 1e-6);
            assert_eq!(r.rows_for(SweepMechanism::Imvu, b).count(), SWEEP_POINTS);
        }
        let csv = r.to_csv();
        assert!(csv.starts_with("mechanism,b_in,x,mean,bias,variance,laplace_ref\nimvu,2,0,"));
        assert_eq!(csv.lines().count(), 1 + r.rows.len());
    }

    #[test]
    fn sweep_rejects_mismatched_tables() {
        let mut ts = tables(5.0);
        ts.push(design_mvu(&DesignSpec::new(2, 4, 5.0)).unwrap());
        assert!(matches!(sweep_bias_variance(&ts, &[0.5], 5.0), Err(Error::Input(_))));
        assert!(matches!(sweep_bias_variance(&tables(5.0), &[0.5], 1.0), Err(Error::Input(_))));
        assert!(sweep_bias_variance(&[], &[0.5], 1.0).is_err());
    }

    #[test]
    fn identity_has_zero_error() {
        let mut rng = seeded(0);
        let dist = InputDist::Uniform { lo: -1.0, hi: 1.0 };
        let (mse, bits) = dme_mse(50, 16, dist, DmeMechanism::Identity, &mut rng, 3).unwrap();
        assert!(mse < 1e-28, "{mse}");
        assert_eq!(bits, 32.0);
    }

    #[test]
    fn wire_cost() {
        let t = design_mvu(&DesignSpec::new(2, 2, 1.0)).unwrap();
        let m = InterpolatedMechanism::new(t, 1.0, ClipConfig::new(NormKind::L2, 1.0).unwrap()).unwrap();
        assert_eq!(DmeMechanism::Imvu(&m).bits_per_coord(), 1.0);
        let c = ClipConfig::new(NormKind::L2, 1.0).unwrap();
        let s = BaselineConfig::new(BaselineKind::SignSgd, c, 1.0).unwrap();
        assert_eq!(DmeMechanism::Baseline(s).bits_per_coord(), 1.0);
        let g = BaselineConfig::new(BaselineKind::Gaussian, c, 1.0).unwrap();
        assert_eq!(DmeMechanism::Baseline(g).bits_per_coord(), 32.0);
    }

    #[test]
    fn gaussian_mse_scales_inversely_with_clients() {
        // Inputs stay inside the clip ball, so the error is pure noise with
        // per-coordinate variance (σC)²/n.
        let c = ClipConfig::new(NormKind::L2, 1.0).unwrap();
        let cfg = BaselineConfig::new(BaselineKind::Gaussian, c, 0.8).unwrap();
        let dist = InputDist::Uniform { lo: -0.1, hi: 0.1 };
        let mut rng = seeded(11);
        for n in [10, 100, 1000] {
            let (mse, _) = dme_mse(n, 8, dist, DmeMechanism::Baseline(cfg), &mut rng, 200).unwrap();
            let expected = 0.64 / n as f64;
            assert!((mse / expected - 1.0).abs() < 0.2, "n={n}: {mse} vs {expected}");
        }
    }
}
