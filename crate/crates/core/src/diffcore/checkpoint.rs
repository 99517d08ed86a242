//! JSON checkpoints for maps.
//!
//! Document layout: `{kind, input_shape, output_shape, seed, parameters}`
//! plus the structural fields a kind needs to be rebuilt (`hidden` for MLP
//! scorers, `channels` for toy backbones, `children` for compositions and
//! pair adapters). Doubles are written in shortest round-trip form, so
//! save → load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::map::{compose, Body, DifferentiableMap, MapKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: MapKind,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub seed: u64,
    /// Flat parameters. Empty for composite kinds, whose children carry them.
    pub parameters: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hidden: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    /// `[outer, inner]` for compositions, `[backbone]` for pair adapters.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Checkpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_map(map: &DifferentiableMap) -> Self {
        let mut ck = Checkpoint {
            kind: map.kind(),
            input_shape: map.input_shape().to_vec(),
            output_shape: map.output_shape().to_vec(),
            seed: map.seed(),
            parameters: Vec::new(),
            hidden: map.hidden_widths(),
            channels: None,
            children: Vec::new(),
            reference: None,
        };
        match &map.body {
            Body::Composition { outer, inner } => {
                ck.children = vec![Checkpoint::from_map(outer), Checkpoint::from_map(inner)];
            }
            Body::PairAdapter { backbone, reference } => {
                ck.children = vec![Checkpoint::from_map(backbone)];
                ck.reference = reference.clone();
            }
            Body::ToyBackbone(_) => {
                ck.channels = Some(map.channels());
                ck.parameters = map.parameters();
            }
            _ => ck.parameters = map.parameters(),
        }
        ck
    }

    pub fn into_map(self) -> Result<DifferentiableMap> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut map = match self.kind {
            MapKind::Linear => {
                let inp: usize = self.input_shape.iter().product();
                let out: usize = self.output_shape.iter().product();
                if self.parameters.len() != inp * out + out {
                    return Err(bad(format!(
                        "linear checkpoint needs {} parameters, found {}",
                        inp * out + out,
                        self.parameters.len()
                    )));
                }
                let (w, b) = self.parameters.split_at(inp * out);
                let mut m = DifferentiableMap::linear_with_shapes(
                    self.input_shape.clone(),
                    self.output_shape.clone(),
                    w.to_vec(),
                    b.to_vec(),
                )?;
                m.set_seed(self.seed);
                return Ok(m);
            }
            MapKind::AffineSigmoid => {
                let (i, o) = vector_dims(&self)?;
                let mut m = DifferentiableMap::affine_sigmoid_zeros(i, o)?;
                m.set_seed(self.seed);
                m
            }
            MapKind::ToyBackbone => {
                let shape: [usize; 3] = self
                    .input_shape
                    .as_slice()
                    .try_into()
                    .map_err(|_| bad(format!("toy backbone input must be rank 3, got {:?}", self.input_shape)))?;
                let channels = self.channels.ok_or_else(|| bad("toy backbone checkpoint lacks channels".into()))?;
                let out = single_dim(&self.output_shape)?;
                DifferentiableMap::toy_backbone(shape, channels, out, self.seed)?
            }
            MapKind::MlpScorer => {
                let i = single_dim(&self.input_shape)?;
                DifferentiableMap::mlp_scorer(i, &self.hidden, self.seed)?
            }
            MapKind::Composition => {
                let [outer, inner]: [Checkpoint; 2] = self
                    .children
                    .try_into()
                    .map_err(|_| bad("composition checkpoint needs exactly two children".into()))?;
                return compose(outer.into_map()?, inner.into_map()?);
            }
            MapKind::PairAdapter => {
                let [backbone]: [Checkpoint; 1] = self
                    .children
                    .try_into()
                    .map_err(|_| bad("pair adapter checkpoint needs exactly one child".into()))?;
                let pair = DifferentiableMap::pair_adapter(backbone.into_map()?)?;
                return match &self.reference {
                    Some(r) => pair.with_fixed_reference(r),
                    None => Ok(pair),
                };
            }
        };
        if map.input_shape() != self.input_shape || map.output_shape() != self.output_shape {
            return Err(bad(format!(
                "{} checkpoint shapes {:?} -> {:?} do not match its structure",
                self.kind, self.input_shape, self.output_shape
            )));
        }
        map.set_parameters(&self.parameters).map_err(|e| bad(e.to_string()))?;
        Ok(map)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn single_dim(shape: &[usize]) -> Result<usize> {
    match shape {
        [d] => Ok(*d),
        _ => Err(Error::Checkpoint(format!("expected a vector shape, got {shape:?}"))),
    }
}

fn vector_dims(ck: &Checkpoint) -> Result<(usize, usize)> {
    Ok((single_dim(&ck.input_shape)?, single_dim(&ck.output_shape)?))
}

pub fn save_map(map: &DifferentiableMap, path: &Path) -> Result<()> {
    let json = Checkpoint::from_map(map).to_json()?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_map(path: &Path) -> Result<DifferentiableMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)?.into_map()
}

/// SHA-256 over the little-endian bytes of the flat parameter vector.
pub fn parameter_checksum(map: &DifferentiableMap) -> String {
    let mut h = Sha256::new();
    for p in map.parameters() {
        h.update(p.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
