//! JSON run configuration shared by every command.

use serde::{Deserialize, Serialize};

use crate::continuous::CtModel;
use crate::error::{Error, Result};
use crate::forward::{backward_from_forward, RecombinationModel};
use crate::matrix::DenseMatrix;
use crate::measure::{Distribution, Metapopulation, TypeSpace};
use crate::partition::Partition;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Discrete,
    Continuous,
}

/// One recombination entry; `p` is a probability in discrete mode and a rate in continuous mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecombinationEntry {
    pub blocks: Vec<Vec<usize>>,
    #[serde(alias = "rate")]
    pub p: f64,
}

/// Exactly one of `backward`, `forward` (with `sizes`) or `generator`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MigrationSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backward: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Vec<Vec<f64>>>,
}

/// Exactly one of `dense` weights or `product` of per-site marginals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    pub sites: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locations: Option<Vec<String>>,
    pub recombination: Vec<RecombinationEntry>,
    pub migration: MigrationSpec,
    pub initial: Vec<InitialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    /// RK4 step for `ct-integrate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

/// Validated model of either time regime.
#[derive(Clone, Debug)]
pub enum Model {
    Discrete(RecombinationModel),
    Continuous(CtModel),
}

/// A model together with its initial population.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub model: Model,
    pub initial: Metapopulation,
}

/// Parses and validates a JSON document; schema errors name the offending field.
pub fn parse_config(document: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })?;
    cfg.build()?;
    Ok(cfg)
}

fn at<T>(field: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(format!("{field}: {other}")),
    })
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DenseMatrix> {
    at(field, DenseMatrix::from_rows(rows))
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Builds the model and initial population.
    pub fn build(&self) -> Result<Scenario> {
        let space = at("sites", TypeSpace::new(self.sites.clone()))?;
        let l = self.initial.len();
        let names = match &self.locations {
            Some(names) => {
                if names.len() != l {
                    return Err(Error::Config(format!(
                        "locations: {} names for {l} initial distributions",
                        names.len()
                    )));
                }
                names.clone()
            }
            None => (0..l).map(|i| i.to_string()).collect(),
        };
        let mut recomb = Vec::with_capacity(self.recombination.len());
        for (k, entry) in self.recombination.iter().enumerate() {
            let field = format!("recombination[{k}].blocks");
            let p = at(&field, Partition::from_one_based(&entry.blocks))?;
            if p.base() != space.full_set() {
                return Err(Error::Config(format!("{field}: blocks must cover sites 1..{}", space.num_sites())));
            }
            recomb.push((p, entry.p));
        }
        let mig = &self.migration;
        let model = match self.mode {
            Mode::Discrete => {
                if mig.generator.is_some() {
                    return Err(Error::Config("migration.generator: only valid in continuous mode".into()));
                }
                let m = match (&mig.backward, &mig.forward, &mig.sizes) {
                    (Some(b), None, None) => matrix("migration.backward", b)?,
                    (None, Some(f), Some(c)) => {
                        at("migration.forward", backward_from_forward(&matrix("migration.forward", f)?, c))?
                    }
                    (None, Some(_), None) => return Err(Error::Config("migration.sizes: required with forward".into())),
                    _ => {
                        return Err(Error::Config(
                            "migration: give either backward or forward with sizes".into(),
                        ))
                    }
                };
                Model::Discrete(at("model", RecombinationModel::new(space.clone(), recomb, m, names))?)
            }
            Mode::Continuous => {
                let g = match (&mig.generator, &mig.backward, &mig.forward) {
                    (Some(g), None, None) if mig.sizes.is_none() => matrix("migration.generator", g)?,
                    _ => return Err(Error::Config("migration: continuous mode takes only generator".into())),
                };
                Model::Continuous(at("model", CtModel::new(space.clone(), recomb, g, names))?)
            }
        };
        let mut dists = Vec::with_capacity(l);
        for (k, spec) in self.initial.iter().enumerate() {
            let d = match (&spec.dense, &spec.product) {
                (Some(w), None) => at(&format!("initial[{k}].dense"), Distribution::new(&space, space.full_set(), w.clone()))?,
                (None, Some(m)) => at(&format!("initial[{k}].product"), Distribution::product_of(&space, m))?,
                _ => return Err(Error::Config(format!("initial[{k}]: give exactly one of dense or product"))),
            };
            dists.push(d);
        }
        let initial = at("initial", Metapopulation::new(dists))?;
        if let Some(t) = self.t {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::Config(format!("t: {t} must be non-negative")));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::Config(format!("dt: {dt} must be positive")));
            }
        }
        Ok(Scenario { model, initial })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::iterate;

    const MINIMAL: &str = r#"{
        "sites": [2, 2],
        "recombination": [{"blocks": [[1, 2]], "p": 0.6}, {"blocks": [[1], [2]], "p": 0.4}],
        "migration": {"backward": [[0.9, 0.1], [0.2, 0.8]]},
        "initial": [{"dense": [0.4, 0.1, 0.2, 0.3]}, {"product": [[0.5, 0.5], [0.1, 0.9]]}],
        "t": 5
    }"#;

    #[test]
    fn minimal_round_trip() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.mode, Mode::Discrete);
        let again = parse_config(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        let v1: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        let v2: serde_json::Value = serde_json::from_str(&again.to_json()).unwrap();
        assert_eq!(v1, v2);
        let sc = cfg.build().unwrap();
        assert_eq!(sc.initial.get(1).weights(), &[0.05, 0.45, 0.05, 0.45]);
    }

    #[test]
    fn missing_probability_names_field() {
        let doc = MINIMAL.replace(r#", "p": 0.4"#, "");
        let err = parse_config(&doc).unwrap_err().to_string();
        assert!(err.contains("recombination[1]"), "{err}");
        assert!(err.contains("missing field `p`"), "{err}");
    }

    #[test]
    fn invariant_failures_name_fields() {
        let doc = MINIMAL.replace("0.4, 0.1, 0.2, 0.3", "0.4, 0.1, 0.2, 0.2");
        assert!(parse_config(&doc).unwrap_err().to_string().contains("initial[0].dense"));
        let doc = MINIMAL.replace(r#"[[1], [2]]"#, r#"[[1], [3]]"#);
        assert!(parse_config(&doc).unwrap_err().to_string().contains("recombination[1].blocks"));
        let doc = MINIMAL.replace(r#""p": 0.6"#, r#""p": 0.7"#);
        assert!(parse_config(&doc).unwrap_err().to_string().contains("model"));
        let doc = MINIMAL.replace(r#""t": 5"#, r#""t": 5, "extra": 1"#);
        assert!(parse_config(&doc).unwrap_err().to_string().contains("extra"));
    }

    #[test]
    fn forward_matrix_equivalent_to_backward() {
        // sizes (2, 1) and forward [[.9,.1],[.2,.8]] give backward [[.9,.1],[.2,.8]]
        let doc = MINIMAL.replace(
            r#"{"backward": [[0.9, 0.1], [0.2, 0.8]]}"#,
            r#"{"forward": [[0.9, 0.1], [0.2, 0.8]], "sizes": [2, 1]}"#,
        );
        let a = parse_config(MINIMAL).unwrap().build().unwrap();
        let b = parse_config(&doc).unwrap().build().unwrap();
        let (Model::Discrete(ma), Model::Discrete(mb)) = (&a.model, &b.model) else {
            panic!("discrete")
        };
        let ta = iterate(&a.initial, ma, 5).unwrap();
        let tb = iterate(&b.initial, mb, 5).unwrap();
        assert!(ta[5].max_abs_diff(&tb[5]) < 1e-15);
        let bad = doc.replace("[2, 1]", "[1, 1]");
        assert!(parse_config(&bad).unwrap_err().to_string().contains("not stationary"));
    }

    #[test]
    fn continuous_mode_with_rates() {
        let doc = r#"{
            "mode": "continuous",
            "sites": [2, 2],
            "recombination": [{"blocks": [[1], [2]], "rate": 0.8}],
            "migration": {"generator": [[-0.3, 0.3], [0.5, -0.5]]},
            "initial": [{"dense": [0.4, 0.1, 0.2, 0.3]}, {"dense": [0.25, 0.25, 0.25, 0.25]}],
            "t": 1.5, "dt": 0.001
        }"#;
        let cfg = parse_config(doc).unwrap();
        assert!(matches!(cfg.build().unwrap().model, Model::Continuous(_)));
        assert_eq!(parse_config(&cfg.to_json()).unwrap(), cfg);
        let bad = doc.replace("generator", "backward");
        assert!(parse_config(&bad).is_err());
    }
}
