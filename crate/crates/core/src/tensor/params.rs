use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

use super::Tensor;

pub const CHECKPOINT_FORMAT: &str = "sdm-ckpt-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named trainable tensors with gradient accumulators.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Contract(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::new(value.shape().to_vec(), vec![0.0; value.numel()])?;
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.iter() {
            let p = self
                .params
                .get_mut(id.0)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {}", id.0)))?;
            if p.grad.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "gradient shape {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    p.name,
                    p.grad.shape()
                )));
            }
            for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    /// `Σ‖w‖²` over every parameter.
    pub fn squared_norm(&self) -> f64 {
        self.params.iter().map(|p| p.value.squared_norm()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            tensors: self
                .params
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    /// Overwrites values from a checkpoint. Every parameter must be present
    /// with a matching shape, and the checkpoint may not carry extras.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for p in &mut self.params {
            let t = ckpt
                .tensors
                .get(&p.name)
                .ok_or_else(|| Error::Contract(format!("checkpoint lacks parameter {:?}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Contract(format!(
                    "checkpoint parameter {:?} has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        if let Some(extra) = ckpt.tensors.keys().find(|k| self.find(k).is_none()) {
            return Err(Error::Contract(format!(
                "checkpoint parameter {extra:?} does not belong to this model"
            )));
        }
        Ok(())
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub(crate) fn with_len(len: usize) -> Self {
        Self {
            slots: vec![None; len],
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: Tensor) {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Elementwise sum, in a fixed order so parallel reductions stay reproducible.
    pub fn merge(&mut self, other: &Gradients) {
        for (id, g) in other.iter() {
            self.accumulate(id, g.clone());
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Name → tensor map serialized as `sdm-ckpt-v1` JSON.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let mut map = Map::new();
        map.insert("format".into(), Value::String(CHECKPOINT_FORMAT.into()));
        for (name, t) in &self.tensors {
            let record = TensorRecord {
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            };
            let v = serde_json::to_value(record).map_err(|e| Error::json("serializing checkpoint", e))?;
            map.insert(name.clone(), v);
        }
        serde_json::to_string_pretty(&Value::Object(map)).map_err(|e| Error::json("serializing checkpoint", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::json("parsing checkpoint", e))?;
        let Value::Object(map) = value else {
            return Err(Error::Data("checkpoint must be a JSON object".into()));
        };
        match map.get("format") {
            Some(Value::String(f)) if f == CHECKPOINT_FORMAT => {}
            other => {
                return Err(Error::Data(format!(
                    "expected checkpoint format {CHECKPOINT_FORMAT}, found {other:?}"
                )))
            }
        }
        let mut tensors = BTreeMap::new();
        for (name, v) in map {
            if name == "format" {
                continue;
            }
            let record: TensorRecord = serde_json::from_value(v)
                .map_err(|e| Error::json(format!("checkpoint tensor {name:?}"), e))?;
            tensors.insert(name, Tensor::new(record.shape, record.data)?);
        }
        Ok(Self { tensors })
    }
}
