//! The full detector: per-snapshot hypergraph convolution, a stack of
//! graph-coupled SSM blocks run over the snapshots latest first, and a
//! per-node readout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::feature_width;
use crate::layers::{hgnn_forward, Activation, GraphOperators, HgnnLayer, Linear};
use crate::rng::derived_rng;
use crate::ssm::{graph_scan, Coupling, SsmBlock, SsmBlockConfig};
use crate::tensor::{Checkpoint, Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hgnn_width: usize,
    pub pe_width: usize,
    pub blocks: usize,
    pub d_state: usize,
    pub channels: usize,
    pub head_hidden: usize,
    pub selective: bool,
    pub coupling: Coupling,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hgnn_width: 32,
            pe_width: crate::features::DEFAULT_PE_WIDTH,
            blocks: 2,
            d_state: 16,
            channels: 8,
            head_hidden: 64,
            selective: true,
            coupling: Coupling::Weighted,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            epochs: 200,
            batch_size: 1,
            patience: 30,
            seed: 0,
            train_fraction: 0.8,
            val_fraction: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("hgnn_width", self.hgnn_width),
            ("blocks", self.blocks),
            ("d_state", self.d_state),
            ("channels", self.channels),
            ("head_hidden", self.head_hidden),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Validation(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Validation(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Validation(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SourceDetModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub hgnn: HgnnLayer,
    pub input: Linear,
    pub blocks: Vec<SsmBlock>,
    pub readout: Linear,
}

impl SourceDetModel {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = derived_rng(config.seed, "model-init", 0);
        let mut params = ParamStore::new();
        let hgnn = HgnnLayer::new(
            &mut params,
            "hgnn",
            feature_width(config.pe_width),
            config.hgnn_width,
            Activation::Relu,
            &mut rng,
        )?;
        let input = Linear::new(&mut params, "input", config.hgnn_width, config.channels, &mut rng)?;
        let block_config = SsmBlockConfig {
            channels: config.channels,
            d_state: config.d_state,
            selective: config.selective,
            coupling: config.coupling,
            head_hidden: config.head_hidden,
        };
        let blocks = (0..config.blocks)
            .map(|i| SsmBlock::new(&mut params, &format!("block{i}"), block_config, &mut rng))
            .collect::<Result<_>>()?;
        let readout = Linear::new(&mut params, "readout", config.channels, 1, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            params,
            hgnn,
            input,
            blocks,
            readout,
        })
    }

    pub fn from_checkpoint(config: &ModelConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(config)?;
        model.params.load_checkpoint(ckpt)?;
        Ok(model)
    }

    /// Scores as an `n × 1` column on `g`, using `store` for parameter values.
    /// `features` are in capture order, earliest first.
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, ops: &GraphOperators, features: &[Tensor]) -> Result<Var> {
        if features.is_empty() {
            return Err(Error::Contract("forward needs at least one snapshot".into()));
        }
        let width = feature_width(self.config.pe_width);
        let mut xs = Vec::with_capacity(features.len());
        for f in features.iter().rev() {
            if f.shape() != [ops.n, width] {
                return Err(Error::Contract(format!(
                    "snapshot features have shape {:?}, model expects {}×{width}",
                    f.shape(),
                    ops.n
                )));
            }
            let x = g.constant(f.clone())?;
            let h = hgnn_forward(g, store, &self.hgnn, ops, x)?;
            xs.push(self.input.forward(g, store, h)?);
        }
        for block in &self.blocks {
            let out = graph_scan(g, store, block, ops, &xs)?;
            xs = xs
                .iter()
                .zip(&out.outputs)
                .map(|(&x, &y)| g.add(x, y))
                .collect::<Result<_>>()?;
        }
        let last = *xs.last().expect("nonempty sequence");
        let logits = self.readout.forward(g, store, last)?;
        g.sigmoid(logits)
    }

    pub fn forward(&self, g: &mut Graph, ops: &GraphOperators, features: &[Tensor]) -> Result<Var> {
        self.forward_with(g, &self.params, ops, features)
    }

    /// Source scores in `(0, 1)`, one per node.
    pub fn predict(&self, ops: &GraphOperators, features: &[Tensor]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let s = self.forward(&mut g, ops, features)?;
        Ok(g.value(s).data().to_vec())
    }
}
