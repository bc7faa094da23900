//! Mechanism file: a JSON document carrying the designed table and the
//! accounting state of an [`InterpolatedMechanism`].
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "b_in": 2, "b_out": 2, "metric": "l1", "design_eps": 1.0986,
//!   "grid": [0.0, 1.0],
//!   "alphabet": [-0.5, 1.5],
//!   "log_probs": [[-0.2877, -1.3863], [-1.3863, -0.2877]],
//!   "accounting": {"eps_prime": 0.5493, "fisher_m": 1.2069,
//!                  "beta": 1.0, "clip_norm": "l2", "clip_c": 1.0}
//! }
//! ```
//!
//! Loading re-runs every table invariant and recomputes any stored
//! accounting constant.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{ClipConfig, InterpolatedMechanism, MechanismTable, Metric, NormKind};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountingSection {
    pub eps_prime: Option<f64>,
    pub fisher_m: Option<f64>,
    pub beta: f64,
    pub clip_norm: NormKind,
    pub clip_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismFile {
    pub format_version: u32,
    pub b_in: usize,
    pub b_out: usize,
    pub metric: Metric,
    pub design_eps: f64,
    pub grid: Vec<f64>,
    pub alphabet: Vec<f64>,
    pub log_probs: Vec<Vec<f64>>,
    pub accounting: AccountingSection,
}

impl MechanismFile {
    pub fn from_mechanism(mech: &InterpolatedMechanism) -> Self {
        let t = mech.table();
        Self {
            format_version: FORMAT_VERSION,
            b_in: t.b_in(),
            b_out: t.b_out(),
            metric: t.metric(),
            design_eps: t.design_eps(),
            grid: t.grid().to_vec(),
            alphabet: t.alphabet().to_vec(),
            log_probs: t.log_probs().to_vec(),
            accounting: AccountingSection {
                eps_prime: mech.eps_prime(),
                fisher_m: mech.fisher_m(),
                beta: mech.beta(),
                clip_norm: mech.clip_config().norm,
                clip_c: mech.clip_config().clip_c,
            },
        }
    }

    /// Rebuilds the mechanism, checking every invariant.
    pub fn into_mechanism(self) -> Result<InterpolatedMechanism> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::invariant(
                "format_version",
                format!("unsupported format version {} (expected {FORMAT_VERSION})", self.format_version),
            ));
        }
        if self.grid.len() != self.b_in
            || self.alphabet.len() != self.b_out
            || self.log_probs.len() != self.b_in
            || self.log_probs.iter().any(|r| r.len() != self.b_out)
        {
            return Err(Error::invariant(
                "shape",
                format!(
                    "declared b_in={} b_out={} do not match grid/alphabet/log_probs dimensions",
                    self.b_in, self.b_out
                ),
            ));
        }
        let table = MechanismTable::new(self.grid, self.alphabet, self.log_probs, self.design_eps)?;
        let acc = self.accounting;
        let clip = ClipConfig::new(acc.clip_norm, acc.clip_c)?;
        InterpolatedMechanism::new(table, acc.beta, clip)?.with_constants(acc.eps_prime, acc.fisher_m)
    }
}

pub fn to_json(mech: &InterpolatedMechanism) -> Result<String> {
    Ok(serde_json::to_string_pretty(&MechanismFile::from_mechanism(mech))?)
}

pub fn from_json(text: &str) -> Result<InterpolatedMechanism> {
    let file: MechanismFile = serde_json::from_str(text)
        .map_err(|e| Error::invariant("document", format!("malformed mechanism file: {e}")))?;
    file.into_mechanism()
}

pub fn save(mech: &InterpolatedMechanism, path: &Path) -> Result<()> {
    fs::write(path, to_json(mech)? + "\n")?;
    Ok(())
}

pub fn load(path: &Path) -> Result<InterpolatedMechanism> {
    from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rr() -> InterpolatedMechanism {
        let t = MechanismTable::new(
            vec![0.0, 1.0],
            vec![-0.5, 1.5],
            vec![vec![0.75f64.ln(), 0.25f64.ln()], vec![0.25f64.ln(), 0.75f64.ln()]],
            3f64.ln(),
        )
        .unwrap();
        InterpolatedMechanism::new(t, 1.0, ClipConfig::new(NormKind::L2, 1.0).unwrap())
            .unwrap()
            .with_accounting()
            .unwrap()
    }

    #[test]
    fn round_trip() {
        let m = rr();
        let text = to_json(&m).unwrap();
        assert!(text.contains("\"metric\": \"l1\""));
        assert!(text.contains("\"clip_norm\": \"l2\""));
        assert_eq!(from_json(&text).unwrap(), m);
    }

    #[test]
    fn rejects_tampered_constants_and_tables() {
        let mut f = MechanismFile::from_mechanism(&rr());
        f.accounting.fisher_m = Some(0.5);
        let err = f.into_mechanism().unwrap_err();
        assert!(matches!(err, Error::Invariant { ref check, .. } if check == "accounting"));

        let mut f = MechanismFile::from_mechanism(&rr());
        f.log_probs[0][0] = -0.1;
        let err = f.into_mechanism().unwrap_err();
        assert!(matches!(err, Error::Invariant { ref check, .. } if check == "simplex"), "{err}");

        let mut f = MechanismFile::from_mechanism(&rr());
        f.b_out = 3;
        assert!(f.into_mechanism().is_err());

        let mut f = MechanismFile::from_mechanism(&rr());
        f.format_version = 2;
        assert!(f.into_mechanism().is_err());

        assert!(from_json("{\"format_version\": 1}").is_err());
    }
}
