//! JSON files for datasets and trained models.
//!
//! A dataset stores the sampled inputs `x = [V; θ_diff]` (plus the nodal
//! angles they were drawn from) and the exact targets. A model stores the
//! trainable weights and the anchor point; the anchor terms and the fixed
//! layers are rebuilt from the case on load and checked against the stored
//! SHA-256 of the fixed matrices.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gridpwl_core::acflow::{common_terms, flow_jacobian, jacobian, branch_flows, CommonTerms, OperatingPoint, PowerVariables};
use gridpwl_core::linalg::Matrix;
use gridpwl_core::network::{FixedMatrices, Network, FLOW_ORDER};
use gridpwl_core::pwlnet::{DirectModel, PwlModel};
use gridpwl_core::sampler::SampleSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// SHA-256 (hex) of the fixed layers, in a fixed byte layout: the shape of
/// each matrix followed by its row-major entries as little-endian `f64`.
pub fn fixed_hash(fixed: &FixedMatrices) -> String {
    let mut h = Sha256::new();
    for m in [&fixed.w_gamma, &fixed.w_rho, &fixed.w_pi, &fixed.w_psi] {
        h.update((m.rows() as u64).to_le_bytes());
        h.update((m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn from_rows(name: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> Result<Matrix> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        bail!("`{name}` must be {}×{}", shape.0, shape.1);
    }
    Ok(Matrix::from_row_major(shape.0, shape.1, rows.concat()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// `[V; θ_diff]`
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    pub pi: Vec<f64>,
    pub flows: Vec<f64>,
    pub injections: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub case_id: String,
    pub seed: u64,
    pub inputs: Vec<Sample>,
    pub targets: Vec<Targets>,
}

impl DatasetFile {
    pub fn from_samples(case_id: &str, set: &SampleSet) -> Self {
        let inputs = set
            .inputs
            .iter()
            .map(|x| Sample {
                x: x.input(),
                theta: x.theta.clone(),
            })
            .collect();
        let targets = set
            .targets_common
            .iter()
            .zip(&set.targets_power)
            .map(|(c, p)| Targets {
                gamma: c.gamma.clone(),
                rho: c.rho.clone(),
                pi: c.pi.clone(),
                flows: p.z_pf.clone(),
                injections: p.z_inj.clone(),
            })
            .collect();
        Self {
            case_id: case_id.to_string(),
            seed: set.seed,
            inputs,
            targets,
        }
    }

    /// Rebuilds the sample set, checking every entry against the case.
    pub fn to_samples(&self, net: &Network) -> Result<SampleSet> {
        let (n, l) = (net.bus_count(), net.branch_count());
        if self.inputs.len() != self.targets.len() {
            bail!("dataset has {} inputs but {} targets", self.inputs.len(), self.targets.len());
        }
        let mut inputs = Vec::with_capacity(self.inputs.len());
        let mut common = Vec::with_capacity(self.inputs.len());
        let mut power = Vec::with_capacity(self.inputs.len());
        for (i, (s, t)) in self.inputs.iter().zip(&self.targets).enumerate() {
            if s.x.len() != n + l || s.theta.len() != n {
                bail!("sample {i} does not match the case dimensions (n = {n}, branches = {l})");
            }
            if t.gamma.len() != n || t.rho.len() != l || t.pi.len() != l || t.flows.len() != 4 * l || t.injections.len() != 2 * n {
                bail!("targets of sample {i} do not match the case dimensions");
            }
            let x = OperatingPoint {
                v: s.x[..n].to_vec(),
                theta: s.theta.clone(),
                theta_diff: s.x[n..].to_vec(),
            };
            inputs.push(x);
            common.push(CommonTerms {
                gamma: t.gamma.clone(),
                rho: t.rho.clone(),
                pi: t.pi.clone(),
            });
            power.push(PowerVariables {
                z_pf: t.flows.clone(),
                z_inj: t.injections.clone(),
            });
        }
        Ok(SampleSet {
            inputs,
            targets_common: common,
            targets_power: power,
            seed: self.seed,
            split: 0.9,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Common terms through the fixed flow layers.
    Generative,
    /// Flows predicted directly.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub case_id: String,
    pub kind: ModelKind,
    pub q: usize,
    /// Anchor `[V; θ_diff]`.
    pub x_o: Vec<f64>,
    /// Nodal angles of the anchor.
    pub theta_o: Vec<f64>,
    #[serde(rename = "W1")]
    pub w1: Vec<Vec<f64>>,
    #[serde(rename = "W2")]
    pub w2: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub fixed_hash: String,
    pub flow_order: String,
}

/// Either kind of trained model.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Generative(PwlModel),
    Direct(DirectModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Generative(_) => ModelKind::Generative,
            Model::Direct(_) => ModelKind::Direct,
        }
    }
}

impl ModelFile {
    pub fn from_model(case_id: &str, model: &Model) -> Self {
        let (w1, w2, b, anchor, fixed, q) = match model {
            Model::Generative(m) => (&m.w1, &m.w2, &m.bias, &m.anchor, &m.fixed, m.q),
            Model::Direct(m) => (&m.w1, &m.w2, &m.bias, &m.anchor, &m.fixed, m.q),
        };
        Self {
            case_id: case_id.to_string(),
            kind: model.kind(),
            q,
            x_o: anchor.input(),
            theta_o: anchor.theta.clone(),
            w1: rows(w1),
            w2: rows(w2),
            b: b.clone(),
            fixed_hash: fixed_hash(fixed),
            flow_order: FLOW_ORDER.to_string(),
        }
    }

    /// Rebuilds the model on `net`, failing if the case does not match.
    pub fn to_model(&self, net: &Network) -> Result<Model> {
        let (n, l) = (net.bus_count(), net.branch_count());
        let fixed = FixedMatrices::build(net);
        if fixed_hash(&fixed) != self.fixed_hash {
            bail!("model was trained on a different case (fixed-matrix hash mismatch)");
        }
        if self.x_o.len() != n + l || self.theta_o.len() != n {
            bail!("anchor does not match the case dimensions");
        }
        if self.b.len() != self.q {
            bail!("`b` must have q = {} entries", self.q);
        }
        let anchor = OperatingPoint {
            v: self.x_o[..n].to_vec(),
            theta: self.theta_o.clone(),
            theta_diff: self.x_o[n..].to_vec(),
        };
        let w1 = from_rows("W1", &self.w1, (n + l, self.q))?;
        let values = self.w1.iter().chain(&self.w2).flatten().chain(&self.b).chain(&self.x_o);
        if values.into_iter().any(|v| !v.is_finite()) {
            bail!("model contains non-finite values");
        }
        Ok(match self.kind {
            ModelKind::Generative => Model::Generative(PwlModel {
                w1,
                w2: from_rows("W2", &self.w2, (2 * l, self.q))?,
                bias: self.b.clone(),
                f_anchor: common_terms(net, &anchor).rho_pi(),
                jac_anchor: jacobian(net, &anchor),
                anchor,
                fixed,
                q: self.q,
            }),
            ModelKind::Direct => Model::Direct(DirectModel {
                w1,
                w2: from_rows("W2", &self.w2, (4 * l, self.q))?,
                bias: self.b.clone(),
                flows_anchor: branch_flows(&anchor, net).z_pf,
                jac_anchor: flow_jacobian(net, &anchor),
                anchor,
                fixed,
                q: self.q,
            }),
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn save_model(path: &Path, case_id: &str, model: &Model) -> Result<()> {
    write_json(path, &ModelFile::from_model(case_id, model))
}

pub fn load_model(path: &Path, net: &Network) -> Result<Model> {
    read_json::<ModelFile>(path)?.to_model(net)
}

pub fn save_dataset(path: &Path, case_id: &str, set: &SampleSet) -> Result<()> {
    write_json(path, &DatasetFile::from_samples(case_id, set))
}

pub fn load_dataset(path: &Path, net: &Network) -> Result<(String, SampleSet)> {
    let file: DatasetFile = read_json(path)?;
    let set = file.to_samples(net)?;
    Ok((file.case_id, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{parse_case, CASE14};
    use gridpwl_core::pwlnet::{forward, forward_direct};
    use gridpwl_core::sampler::generate;

    fn case14() -> Network {
        parse_case(CASE14).unwrap().network
    }

    #[test]
    fn model_round_trip_is_exact() {
        let net = case14();
        let m = Model::Generative(PwlModel::init(&net, 5, 4));
        let text = serde_json::to_string(&ModelFile::from_model("case14", &m)).unwrap();
        let back = serde_json::from_str::<ModelFile>(&text).unwrap().to_model(&net).unwrap();
        assert_eq!(back, m);
        let d = Model::Direct(DirectModel::init(&net, 3, 4));
        let back = ModelFile::from_model("case14", &d).to_model(&net).unwrap();
        assert_eq!(back, d);
        let x = &generate(&net, 1, 2).inputs[0];
        let (Model::Direct(a), Model::Direct(b)) = (&d, &back) else { unreachable!() };
        assert_eq!(forward_direct(a, x).unwrap(), forward_direct(b, x).unwrap());
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let net = case14();
        let set = generate(&net, 7, 11);
        let text = serde_json::to_string(&DatasetFile::from_samples("case14", &set)).unwrap();
        let back = serde_json::from_str::<DatasetFile>(&text).unwrap().to_samples(&net).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn mismatched_case_is_rejected() {
        let net = case14();
        let file = ModelFile::from_model("case14", &Model::Generative(PwlModel::init(&net, 2, 1)));
        let mut other = net.clone().with_demand_scale(&vec![1.0; net.bus_count()]);
        assert!(file.to_model(&other).is_ok(), "demand does not enter the fixed layers");
        let mut branches = net.branches().to_vec();
        branches[3].b *= 1.01;
        other = Network::new(net.buses().to_vec(), branches, net.generators().to_vec()).unwrap();
        assert!(file.to_model(&other).is_err());
        let mut bad = file.clone();
        bad.w1.pop();
        assert!(bad.to_model(&net).is_err());
    }

    #[test]
    fn trained_weights_reproduce_forward_pass() {
        let net = case14();
        let m = PwlModel::init(&net, 4, 9);
        let Model::Generative(back) = ModelFile::from_model("c", &Model::Generative(m.clone())).to_model(&net).unwrap() else {
            unreachable!()
        };
        for x in &generate(&net, 5, 3).inputs {
            assert_eq!(forward(&m, x).unwrap(), forward(&back, x).unwrap());
        }
    }
}
