use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::layers::Parameters;
use super::network::{Network, NetworkConfig};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered named tensors: kernels, biases and batch-norm scale, shift and
/// running statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkWeights {
    pub tensors: Vec<NamedTensor>,
}

impl NetworkWeights {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Bitwise equality of every payload, treating NaNs by bit pattern.
    pub fn bitwise_eq(&self, other: &NetworkWeights) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.name == b.name
                    && a.dims == b.dims
                    && a.data.len() == b.data.len()
                    && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

impl Network {
    pub fn to_weights(&self) -> NetworkWeights {
        let mut tensors = Vec::new();
        self.visit("", &mut |name, p| {
            tensors.push(NamedTensor {
                name: name.to_string(),
                dims: p.dims.clone(),
                data: p.value.iter().map(|&v| v as f32).collect(),
            });
        });
        NetworkWeights { tensors }
    }

    /// Builds the `cfg` topology and fills it from `weights`. Every topology
    /// tensor must appear exactly once with matching dims; the error names
    /// the first offending tensor in topology order.
    pub fn from_weights(cfg: NetworkConfig, weights: &NetworkWeights) -> Result<Self> {
        let mut net = Network::zeroed(cfg)?;
        let mut by_name: BTreeMap<&str, &NamedTensor> = BTreeMap::new();
        for t in &weights.tensors {
            if by_name.insert(&t.name, t).is_some() {
                return Err(topology(&t.name, "appears more than once"));
            }
            let len: usize = t.dims.iter().product();
            if t.data.len() != len {
                return Err(topology(&t.name, "payload length does not match its dims"));
            }
        }
        let mut first_error: Option<Error> = None;
        net.visit_mut("", &mut |name, p| {
            if first_error.is_some() {
                return;
            }
            match by_name.remove(name) {
                None => first_error = Some(topology(name, "missing from weights")),
                Some(t) if t.dims != p.dims => {
                    first_error = Some(topology(name, &alloc::format!("dims {:?}, expected {:?}", t.dims, p.dims)))
                }
                Some(t) => p.value.iter_mut().zip(&t.data).for_each(|(d, &s)| *d = s as Scalar),
            }
        });
        if let Some(e) = first_error {
            return Err(e);
        }
        if let Some(extra) = weights.tensors.iter().find(|t| by_name.contains_key(t.name.as_str())) {
            return Err(topology(&extra.name, "is not part of this topology"));
        }
        Ok(net)
    }
}

fn topology(layer: &str, reason: &str) -> Error {
    Error::Topology { layer: layer.to_string(), reason: reason.to_string() }
}
