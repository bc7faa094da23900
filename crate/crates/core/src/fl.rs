//! Client-level DP federated training on synthetic data.
//!
//! Every client holds one sample. Each round a cohort is drawn without
//! replacement, every member computes a logistic-loss gradient on the
//! current model, privatizes it, and the server averages the decoded
//! messages and takes a momentum step.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::accountant::{l1_round_eps, l2_round_rdp, LedgerMode, PrivacyLedger, DEFAULT_ALPHAS, DEFAULT_DELTA};
use crate::baselines::{gaussian_mech, laplace_mech, signsgd, BaselineConfig, BaselineKind};
use crate::error::{Error, Result};
use crate::mechanism::{clip, ClipConfig, InterpolatedMechanism, NormKind};
use crate::rng;

/// Labelled feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Balanced Gaussian clusters with identity covariance. Class `k` is centred
/// at `(separation/√2)·e_k`, so every pair of class means is `separation`
/// apart.
pub fn generate_synthetic(n: usize, d: usize, n_classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n_classes < 2 || n < n_classes {
        return Err(Error::input(format!("need n >= n_classes >= 2, got n={n}, n_classes={n_classes}")));
    }
    if d < n_classes {
        return Err(Error::input(format!("need d >= n_classes, got d={d}, n_classes={n_classes}")));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::input(format!("separation must be non-negative, got {separation}")));
    }
    let mut rng = rng::named(seed, "synthetic");
    let offset = separation / 2f64.sqrt();
    let mut labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    let features = labels
        .iter()
        .map(|&k| {
            (0..d)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if j == k { z + offset } else { z }
                })
                .collect()
        })
        .collect();
    Ok(Dataset {
        features,
        labels,
        n_classes,
    })
}

/// Multinomial logistic regression. Parameters are stored class-major, each
/// class owning `d` weights followed by a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub params: Vec<f64>,
    pub d: usize,
    pub n_classes: usize,
}

impl LinearModel {
    pub fn zeros(d: usize, n_classes: usize) -> Self {
        Self {
            params: vec![0.0; n_classes * (d + 1)],
            d,
            n_classes,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.params
            .chunks(self.d + 1)
            .map(|w| w[..self.d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[self.d])
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let z = self.logits(x);
        (0..z.len()).fold(0, |best, k| if z[k] > z[best] { k } else { best })
    }

    /// Cross-entropy of one sample.
    pub fn loss(&self, x: &[f64], label: usize) -> f64 {
        let z = self.logits(x);
        crate::mechanism::log_sum_exp(&z) - z[label]
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .features
            .iter()
            .zip(&data.labels)
            .filter(|(x, y)| self.predict(x) == **y)
            .count();
        hits as f64 / data.len() as f64
    }
}

/// Gradient of the cross-entropy loss at one sample: for class `k` the
/// weights receive `(p_k − y_k)·x` and the bias `p_k − y_k`.
pub fn client_update(model: &LinearModel, x: &[f64], label: usize) -> Result<Vec<f64>> {
    if x.len() != model.d {
        return Err(Error::input(format!("sample has {} features, model expects {}", x.len(), model.d)));
    }
    if label >= model.n_classes {
        return Err(Error::input(format!("label {label} out of range for {} classes", model.n_classes)));
    }
    let p = crate::mechanism::softmax(&model.logits(x));
    let mut g = Vec::with_capacity(model.n_params());
    for (k, pk) in p.iter().enumerate() {
        let r = pk - if k == label { 1.0 } else { 0.0 };
        g.extend(x.iter().map(|v| r * v));
        g.push(r);
    }
    Ok(g)
}

/// Client-side message mechanism.
#[derive(Clone, Debug, PartialEq)]
pub enum FlMechanism {
    /// Clipped gradients sent exactly. No privacy cost is recorded.
    Identity,
    Imvu(InterpolatedMechanism),
    Baseline(BaselineConfig),
}

impl FlMechanism {
    fn clip_config(&self, fallback: ClipConfig) -> ClipConfig {
        match self {
            FlMechanism::Identity => fallback,
            FlMechanism::Imvu(m) => *m.clip_config(),
            FlMechanism::Baseline(c) => c.clip,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlConfig {
    pub rounds: usize,
    pub cohort: usize,
    /// Samples per client. Only 1 (client-level DP) is supported.
    pub client_samples: usize,
    /// Feature dimension of the synthetic data.
    pub d: usize,
    pub n_clients: usize,
    pub n_classes: usize,
    pub separation: f64,
    pub test_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Server learning rate used in place of `lr` for SignSGD.
    pub signsgd_lr: f64,
    /// Clipping for the identity mechanism; other mechanisms carry their own.
    pub clip: ClipConfig,
    pub mechanism: FlMechanism,
    pub seed: u64,
    pub delta: f64,
    pub alphas: Vec<f64>,
}

impl FlConfig {
    /// Defaults for a binary task with 600 clients of dimension 20.
    pub fn new(mechanism: FlMechanism) -> Self {
        Self {
            rounds: 50,
            cohort: 100,
            client_samples: 1,
            d: 20,
            n_clients: 600,
            n_classes: 2,
            separation: 6.0,
            test_size: 2000,
            lr: 0.5,
            momentum: 0.5,
            signsgd_lr: 0.01,
            clip: ClipConfig { norm: NormKind::L2, clip_c: 1.0 },
            mechanism,
            seed: 0,
            delta: DEFAULT_DELTA,
            alphas: DEFAULT_ALPHAS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.cohort == 0 || self.d == 0 || self.test_size == 0 {
            return Err(Error::input("rounds, cohort, d and test_size must be positive"));
        }
        if self.client_samples != 1 {
            return Err(Error::input("client-level training uses exactly one sample per client"));
        }
        if self.cohort > self.n_clients {
            return Err(Error::input(format!(
                "cohort {} exceeds the number of clients {}",
                self.cohort, self.n_clients
            )));
        }
        for (name, v) in [("lr", self.lr), ("signsgd_lr", self.signsgd_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::input(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    /// The ledger for this mechanism and its per-round cost.
    fn accounting(&self) -> Result<Option<(PrivacyLedger, Vec<f64>)>> {
        match &self.mechanism {
            FlMechanism::Identity => Ok(None),
            FlMechanism::Imvu(m) => {
                let sens = m.beta();
                match m.clip_config().norm {
                    NormKind::L1 => {
                        let cost = l1_round_eps(m, sens)?;
                        Ok(Some((PrivacyLedger::pure(self.delta)?, vec![cost])))
                    }
                    NormKind::L2 => {
                        let fisher = m.fisher_m().ok_or_else(|| {
                            Error::State("L2 accounting needs the Fisher bound, which is missing for this mechanism".into())
                        })?;
                        let cost = l2_round_rdp(fisher, sens, &self.alphas)?;
                        Ok(Some((PrivacyLedger::rdp(self.alphas.clone(), self.delta)?, cost)))
                    }
                }
            }
            FlMechanism::Baseline(c) => {
                let ledger = match c.kind {
                    BaselineKind::Laplace => PrivacyLedger::pure(self.delta)?,
                    _ => PrivacyLedger::rdp(self.alphas.clone(), self.delta)?,
                };
                let cost = c.round_cost(&self.alphas)?;
                Ok(Some((ledger, cost)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub accuracy: f64,
    /// Spent ε after this round; infinite for the identity mechanism.
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub rounds: Vec<RoundRecord>,
    pub final_accuracy: f64,
    pub ledger: Option<PrivacyLedger>,
    pub model: LinearModel,
}

/// Summary document written beside the per-round CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub rounds: usize,
    pub final_accuracy: f64,
    pub final_eps: Option<f64>,
    pub delta: f64,
    pub ledger_mode: Option<LedgerMode>,
    pub argmin_alpha: Option<f64>,
}

impl TrainResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,accuracy,eps\n");
        for r in &self.rounds {
            out.push_str(&format!("{},{},{}\n", r.round, r.accuracy, r.eps));
        }
        out
    }

    pub fn summary(&self, delta: f64) -> Result<TrainSummary> {
        let (final_eps, argmin_alpha) = match &self.ledger {
            Some(l) => {
                let (e, a) = l.epsilon()?;
                (Some(e), a)
            }
            None => (None, None),
        };
        Ok(TrainSummary {
            rounds: self.rounds.len(),
            final_accuracy: self.final_accuracy,
            final_eps,
            delta,
            ledger_mode: self.ledger.as_ref().map(|l| l.mode),
            argmin_alpha,
        })
    }
}

fn privatize<R: Rng + ?Sized>(mech: &FlMechanism, clip_cfg: &ClipConfig, g: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    match mech {
        FlMechanism::Identity => Ok(clip(g, clip_cfg)),
        FlMechanism::Imvu(m) => Ok(m.privatize_vector(g, rng)?.decoded),
        FlMechanism::Baseline(c) => match c.kind {
            BaselineKind::Laplace => laplace_mech(g, c, rng),
            BaselineKind::Gaussian => gaussian_mech(g, c, rng),
            BaselineKind::SignSgd => Ok(signsgd(g, c, rng)?.into_iter().map(f64::from).collect()),
        },
    }
}

/// Runs `cfg.rounds` rounds of private federated training.
///
/// The server step is `v ← μv + mean(decoded)`, `w ← w − lr·v`, with
/// `signsgd_lr` in place of `lr` for SignSGD. The ledger records the full
/// per-round cost at sensitivity `β` for I-MVU and at the clip norm for the
/// baselines.
pub fn train_fl(cfg: &FlConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let mut accounting = cfg.accounting()?;
    let train = generate_synthetic(cfg.n_clients, cfg.d, cfg.n_classes, cfg.separation, cfg.seed)?;
    let test = generate_synthetic(
        cfg.test_size.max(cfg.n_classes),
        cfg.d,
        cfg.n_classes,
        cfg.separation,
        cfg.seed ^ 0x7e57_7e57_7e57_7e57,
    )?;
    let clip_cfg = cfg.mechanism.clip_config(cfg.clip);
    let step = match &cfg.mechanism {
        FlMechanism::Baseline(c) if c.kind == BaselineKind::SignSgd => cfg.signsgd_lr,
        _ => cfg.lr,
    };

    let mut model = LinearModel::zeros(cfg.d, cfg.n_classes);
    let mut velocity = vec![0.0; model.n_params()];
    let mut cohort_rng = rng::named(cfg.seed, "cohort");
    let client_root: u64 = rng::named(cfg.seed, "clients").random();
    let mut records = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let members = sample_indices(&mut cohort_rng, cfg.n_clients, cfg.cohort).into_vec();
        let round_root = rng::substream(client_root, round as u64).random::<u64>();
        let messages = members
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let g = client_update(&model, &train.features[i], train.labels[i])?;
                let mut stream = rng::substream(round_root, slot as u64);
                privatize(&cfg.mechanism, &clip_cfg, &g, &mut stream)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut mean = vec![0.0; model.n_params()];
        for m in &messages {
            for (a, v) in mean.iter_mut().zip(m) {
                *a += v;
            }
        }
        let n = messages.len() as f64;
        for ((w, v), a) in model.params.iter_mut().zip(velocity.iter_mut()).zip(&mean) {
            *v = cfg.momentum * *v + a / n;
            *w -= step * *v;
        }

        let eps = match &mut accounting {
            Some((ledger, cost)) => {
                ledger.record(cost, 1)?;
                ledger.epsilon()?.0
            }
            None => f64::INFINITY,
        };
        records.push(RoundRecord {
            round: round + 1,
            accuracy: model.accuracy(&test),
            eps,
        });
    }

    Ok(TrainResult {
        final_accuracy: records.last().map_or(0.0, |r| r.accuracy),
        rounds: records,
        ledger: accounting.map(|(l, _)| l),
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designer::{design_mvu, DesignSpec};
    use approx::assert_relative_eq;

    #[test]
    fn synthetic_is_balanced_and_deterministic() {
        let a = generate_synthetic(600, 20, 2, 6.0, 3).unwrap();
        let b = generate_synthetic(600, 20, 2, 6.0, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels.iter().filter(|l| **l == 0).count(), 300);
        assert_ne!(a, generate_synthetic(600, 20, 2, 6.0, 4).unwrap());
        assert!(generate_synthetic(1, 20, 2, 1.0, 0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = generate_synthetic(10, 5, 3, 2.0, 1).unwrap();
        let mut model = LinearModel::zeros(5, 3);
        for (k, p) in model.params.iter_mut().enumerate() {
            *p = ((k * 7 % 11) as f64 - 5.0) / 10.0;
        }
        let (x, y) = (&data.features[0], data.labels[0]);
        let g = client_update(&model, x, y).unwrap();
        let h = 1e-5;
        for k in 0..model.n_params() {
            let mut up = model.clone();
            let mut down = model.clone();
            up.params[k] += h;
            down.params[k] -= h;
            let fd = (up.loss(x, y) - down.loss(x, y)) / (2.0 * h);
            assert_relative_eq!(g[k], fd, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn saturated_sample_has_tiny_gradient() {
        let mut model = LinearModel::zeros(2, 2);
        model.params = vec![50.0, 0.0, 0.0, -50.0, 0.0, 0.0];
        let g = client_update(&model, &[1.0, 0.0], 0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-40));
        assert!(client_update(&model, &[1.0], 0).is_err());
    }

    #[test]
    fn missing_fisher_bound_fails_before_training() {
        let t = design_mvu(&DesignSpec::new(2, 2, 1.0)).unwrap();
        let m = InterpolatedMechanism::new(t, 1.0, ClipConfig::new(NormKind::L2, 1.0).unwrap()).unwrap();
        let cfg = FlConfig::new(FlMechanism::Imvu(m));
        assert!(matches!(train_fl(&cfg), Err(Error::State(_))));
    }

    #[test]
    fn identity_run_learns_and_repeats() {
        let mut cfg = FlConfig::new(FlMechanism::Identity);
        cfg.rounds = 20;
        let a = train_fl(&cfg).unwrap();
        assert!(a.final_accuracy >= 0.95, "{}", a.final_accuracy);
        assert!(a.ledger.is_none());
        assert_eq!(a, train_fl(&cfg).unwrap());
        assert!(a.to_csv().starts_with("round,accuracy,eps\n1,"));
    }
}
