//! TOML model files.
//!
//! ```toml
//! k = 2              # optional, inferred from alpha
//! m = 1              # optional, inferred from delta
//! alpha = [1.0, 1.0]
//! beta = [1.0, 2.0]
//! delta = [[1.0, 1.0]]
//! gamma_a = [1.0, 1.0]
//! gamma_y = 1.0
//! var_u = 1.0        # every var_* defaults to 1
//!
//! [acid]
//! kind = "instrument_tuned"  # gaussian | natural | instrument_tuned | partial | counterexample
//! instrument = 1             # 1-based
//! scale = 1.0
//! ```
//!
//! A file holding `beta_prime`, `delta_a_prime`, ... instead describes an
//! exclusion-violating model, the format written by `aggiv equivalence`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::acid::{
    instrument_tuned_acid, natural_acid, partially_instrument_tuned_acid, GaussianAcid,
    InterventionSampler, UniformCounterexampleAcid,
};
use crate::equivalence::ExclusionViolationScm;
use crate::error::{Error, Result};
use crate::scm::AggregateIvScm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScm {
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    delta: Vec<Vec<f64>>,
    gamma_a: Vec<f64>,
    gamma_y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    var_u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    var_i: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    var_a: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    var_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acid: Option<AcidSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AcidSpec {
    Gaussian {
        c: Vec<f64>,
        d: Vec<f64>,
        sigma: Vec<Vec<f64>>,
    },
    Natural,
    InstrumentTuned {
        #[serde(default = "first")]
        instrument: usize,
        #[serde(default = "unit")]
        scale: f64,
    },
    Partial {
        #[serde(default = "first")]
        instrument: usize,
        proportional_set: Vec<usize>,
        #[serde(default = "unit")]
        scale: f64,
    },
    Counterexample,
}

fn first() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

/// A built interventional distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Acid {
    Gaussian(GaussianAcid),
    Counterexample(UniformCounterexampleAcid),
}

impl Acid {
    pub fn sampler(&self) -> &dyn InterventionSampler {
        match self {
            Acid::Gaussian(g) => g,
            Acid::Counterexample(c) => c,
        }
    }
}

fn zero_based(index: usize, what: &str) -> Result<usize> {
    index
        .checked_sub(1)
        .ok_or_else(|| Error::Config(format!("{what} indices are 1-based, got 0")))
}

impl AcidSpec {
    /// Builds the ACID for `scm`. Gaussian specs are checked against the constraints.
    pub fn build(&self, scm: &AggregateIvScm) -> Result<Acid> {
        Ok(match self {
            AcidSpec::Gaussian { c, d, sigma } => {
                let k = scm.k;
                if sigma.len() != k || sigma.iter().any(|r| r.len() != k) {
                    return Err(Error::Dimension(format!("sigma must be {k} x {k}")));
                }
                let sigma = DMatrix::from_fn(k, k, |r, col| sigma[r][col]);
                let acid = GaussianAcid::new(scm.alpha.clone(), c.clone(), d.clone(), sigma);
                acid.ensure_valid()?;
                Acid::Gaussian(acid)
            }
            AcidSpec::Natural => Acid::Gaussian(natural_acid(scm)?),
            AcidSpec::InstrumentTuned { instrument, scale } => Acid::Gaussian(
                instrument_tuned_acid(scm, zero_based(*instrument, "instrument")?, *scale)?,
            ),
            AcidSpec::Partial {
                instrument,
                proportional_set,
                scale,
            } => {
                let set = proportional_set
                    .iter()
                    .map(|&j| zero_based(j, "component"))
                    .collect::<Result<Vec<_>>>()?;
                Acid::Gaussian(partially_instrument_tuned_acid(
                    scm,
                    &set,
                    zero_based(*instrument, "instrument")?,
                    *scale,
                )?)
            }
            AcidSpec::Counterexample => {
                if scm.k != 2 {
                    return Err(Error::Dimension("the counterexample ACID has k = 2".into()));
                }
                Acid::Counterexample(UniformCounterexampleAcid)
            }
        })
    }
}

/// Contents of a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Aggregate {
        scm: AggregateIvScm,
        acid: Option<AcidSpec>,
    },
    ExclusionViolation(ExclusionViolationScm),
}

impl ModelConfig {
    pub fn aggregate(&self) -> Result<(&AggregateIvScm, Option<&AcidSpec>)> {
        match self {
            ModelConfig::Aggregate { scm, acid } => Ok((scm, acid.as_ref())),
            ModelConfig::ExclusionViolation(_) => Err(Error::Config(
                "expected an aggregate SCM, found an exclusion-violating model".into(),
            )),
        }
    }
}

fn toml_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string().trim_end().to_string())
}

/// Parses a model file. Structural problems (lengths, variances, zero
/// aggregation weights) are left to [`AggregateIvScm::validate`].
pub fn parse_model(text: &str) -> Result<ModelConfig> {
    let table: toml::Table = toml::from_str(text).map_err(toml_error)?;
    if table.contains_key("beta_prime") {
        let eq: ExclusionViolationScm = toml::from_str(text).map_err(toml_error)?;
        return Ok(ModelConfig::ExclusionViolation(eq));
    }
    let raw: RawScm = toml::from_str(text).map_err(toml_error)?;
    let k = raw.k.unwrap_or(raw.alpha.len());
    let m = raw.m.unwrap_or(raw.delta.len());
    let scm = AggregateIvScm {
        k,
        m,
        var_u: raw.var_u.unwrap_or(1.0),
        var_i: raw.var_i.unwrap_or_else(|| vec![1.0; m]),
        var_a: raw.var_a.unwrap_or_else(|| vec![1.0; k]),
        var_y: raw.var_y.unwrap_or(1.0),
        alpha: raw.alpha,
        beta: raw.beta,
        delta: raw.delta,
        gamma_a: raw.gamma_a,
        gamma_y: raw.gamma_y,
    };
    Ok(ModelConfig::Aggregate {
        scm,
        acid: raw.acid,
    })
}

pub fn read_model(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_model(&text)
}

pub fn scm_to_toml(scm: &AggregateIvScm, acid: Option<&AcidSpec>) -> String {
    let raw = RawScm {
        k: Some(scm.k),
        m: Some(scm.m),
        alpha: scm.alpha.clone(),
        beta: scm.beta.clone(),
        delta: scm.delta.clone(),
        gamma_a: scm.gamma_a.clone(),
        gamma_y: scm.gamma_y,
        var_u: Some(scm.var_u),
        var_i: Some(scm.var_i.clone()),
        var_a: Some(scm.var_a.clone()),
        var_y: Some(scm.var_y),
        acid: acid.cloned(),
    };
    toml::to_string(&raw).expect("model serializes to TOML")
}

pub fn exclusion_violation_to_toml(eq: &ExclusionViolationScm) -> String {
    toml::to_string(eq).expect("model serializes to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
alpha = [1.0, 1.0]
beta = [1.0, 2.0]
delta = [[1.0, 1.0]]
gamma_a = [1.0, 1.0]
gamma_y = 1.0
"#;

    #[test]
    fn defaults_fill_unit_variances() {
        let ModelConfig::Aggregate { scm, acid } = parse_model(BASE).unwrap() else {
            panic!("aggregate expected")
        };
        assert_eq!(
            scm,
            AggregateIvScm::unit_variance(
                vec![1.0, 1.0],
                vec![1.0, 2.0],
                vec![vec![1.0, 1.0]],
                vec![1.0, 1.0],
                1.0
            )
        );
        assert!(acid.is_none());
    }

    #[test]
    fn round_trip_with_acid() {
        let mut scm = AggregateIvScm::unit_variance(
            vec![1.0, 2.0],
            vec![0.1, -3.5],
            vec![vec![1.0, 0.5]],
            vec![0.2, 0.3],
            -1.25,
        );
        scm.var_a = vec![0.3, 2.0];
        let acid = AcidSpec::Partial {
            instrument: 1,
            proportional_set: vec![2],
            scale: 0.5,
        };
        let text = scm_to_toml(&scm, Some(&acid));
        let ModelConfig::Aggregate {
            scm: back,
            acid: back_acid,
        } = parse_model(&text).unwrap()
        else {
            panic!("aggregate expected")
        };
        assert_eq!(back, scm);
        assert_eq!(back_acid, Some(acid));
    }

    #[test]
    fn acid_kinds_build() {
        let ModelConfig::Aggregate { scm, .. } = parse_model(BASE).unwrap() else {
            unreachable!()
        };
        for (spec, d0) in [
            ("kind = \"instrument_tuned\"", 0.5),
            ("kind = \"natural\"", 0.5),
            ("kind = \"gaussian\"\nc = [0.0, 0.0]\nd = [2.0, -1.0]\nsigma = [[0.0, 0.0], [0.0, 0.0]]", 2.0),
        ] {
            let text = format!("{BASE}\n[acid]\n{spec}\n");
            let ModelConfig::Aggregate { acid: Some(acid), .. } = parse_model(&text).unwrap() else { unreachable!() };
            match acid.build(&scm).unwrap() {
                Acid::Gaussian(g) => assert!((g.d[0] - d0).abs() < 1e-12, "{spec}"),
                Acid::Counterexample(_) => panic!(),
            }
        }
    }

    #[test]
    fn invalid_gaussian_acid_is_rejected() {
        let text = format!("{BASE}\n[acid]\nkind = \"gaussian\"\nc = [1.0, 0.0]\nd = [2.0, -1.0]\nsigma = [[0.0, 0.0], [0.0, 0.0]]\n");
        let ModelConfig::Aggregate {
            scm,
            acid: Some(acid),
        } = parse_model(&text).unwrap()
        else {
            unreachable!()
        };
        assert!(matches!(acid.build(&scm), Err(Error::InvalidAcid(r)) if !r.passed()));
    }

    #[test]
    fn malformed_input_is_a_config_error() {
        assert!(matches!(
            parse_model("alpha = [1.0,"),
            Err(Error::Config(_))
        ));
        assert!(
            matches!(parse_model(&format!("{BASE}\nbogus = 1\n")), Err(Error::Config(m)) if m.contains("bogus"))
        );
        let zero = format!("{BASE}\n[acid]\nkind = \"instrument_tuned\"\ninstrument = 0\n");
        let ModelConfig::Aggregate {
            scm,
            acid: Some(acid),
        } = parse_model(&zero).unwrap()
        else {
            unreachable!()
        };
        assert!(matches!(acid.build(&scm), Err(Error::Config(_))));
    }

    #[test]
    fn exclusion_violation_round_trip() {
        let eq = ExclusionViolationScm {
            beta_prime: 0.2,
            delta_a_prime: 1.5,
            gamma_a_prime: -1.3,
            delta_y_prime: 1.4,
            gamma_y_prime: 3.46,
            var_eps_a_prime: 5.0,
            var_eps_y_prime: 10.8,
        };
        let back = parse_model(&exclusion_violation_to_toml(&eq)).unwrap();
        assert_eq!(back, ModelConfig::ExclusionViolation(eq));
    }
}
