//! Realized parameter tensors.
//!
//! `DeformerParams::init` walks the spec inventory from the audit module in
//! order, drawing each tensor from its own derived RNG stream, so adding or
//! removing a parameter never reshuffles the values of the others. The
//! registry and the structured fields share storage (tensor handles are
//! reference counted), which keeps checkpointing and the optimizer in sync
//! with the forward pass by construction.

use std::cell::RefCell;
use std::collections::HashMap;

use super::audit::{parameter_specs, Init, ParamSpec};
use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{BatchNormState, Mode, Scalar, Tensor};

/// Affine batch-norm parameters plus the running statistics they normalize
/// with in eval mode. The statistics sit behind a `RefCell` because train
/// forwards update them while the rest of the model is shared immutably.
pub struct BatchNormLayer<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub state: RefCell<BatchNormState<T>>,
}

impl<T: Scalar> BatchNormLayer<T> {
    fn new(gamma: Tensor<T>, beta: Tensor<T>) -> Self {
        let features = gamma.numel();
        BatchNormLayer {
            gamma,
            beta,
            state: RefCell::new(BatchNormState::new(features)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode, feature_axis: usize) -> Result<Tensor<T>> {
        x.batchnorm(
            &self.gamma,
            &self.beta,
            &mut self.state.borrow_mut(),
            mode,
            feature_axis,
        )
    }
}

pub struct EncoderParams<T: Scalar> {
    pub temporal_weight: Tensor<T>,
    pub temporal_bias: Tensor<T>,
    pub spatial_direction: Tensor<T>,
    pub spatial_gain: Tensor<T>,
    pub spatial_bias: Tensor<T>,
    pub bn: BatchNormLayer<T>,
    pub position: Tensor<T>,
}

/// Fine-grained temporal-learning branch of one HCT block.
pub struct FtlParams<T: Scalar> {
    pub conv_weight: Tensor<T>,
    pub conv_bias: Tensor<T>,
    pub bn: BatchNormLayer<T>,
}

pub struct BlockParams<T: Scalar> {
    pub w_qkv: Tensor<T>,
    pub w_out: Tensor<T>,
    pub ln_gamma: Tensor<T>,
    pub ln_beta: Tensor<T>,
    pub ffn_w1: Tensor<T>,
    pub ffn_b1: Tensor<T>,
    pub ffn_w2: Tensor<T>,
    pub ffn_b2: Tensor<T>,
    pub ftl: Option<FtlParams<T>>,
}

pub struct DeformerParams<T: Scalar> {
    registry: Vec<(String, Tensor<T>)>,
    pub encoder: EncoderParams<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
}

fn realize<T: Scalar>(
    spec: &ParamSpec,
    rng: &RngState,
    label: u64,
    done: &HashMap<String, Tensor<T>>,
) -> Result<Tensor<T>> {
    let n = spec.numel();
    let data: Vec<T> = match spec.init {
        Init::Zeros => vec![T::ZERO; n],
        Init::Ones => vec![T::ONE; n],
        Init::UniformFanIn(fan_in) => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut stream = rng.derive(label);
            (0..n)
                .map(|_| T::from_f64(stream.uniform(-bound, bound)))
                .collect()
        }
        Init::Normal { std } => {
            let mut stream = rng.derive(label);
            (0..n).map(|_| T::from_f64(stream.normal(0.0, std))).collect()
        }
        Init::DirectionNorm => {
            let base = spec.name.strip_suffix(".gain").ok_or_else(|| {
                Error::Config(format!("direction-norm init on non-gain tensor {}", spec.name))
            })?;
            let dir = done.get(&format!("{base}.direction")).ok_or_else(|| {
                Error::Config(format!("{base}.direction must precede {}", spec.name))
            })?;
            let rows = dir.shape()[0];
            let row_len = dir.numel() / rows;
            let values = dir.data();
            (0..rows)
                .map(|j| {
                    let row = &values[j * row_len..(j + 1) * row_len];
                    let sq: f64 = row.iter().map(|v| v.to_f64() * v.to_f64()).sum();
                    T::from_f64(sq.sqrt())
                })
                .collect()
        }
    };
    Tensor::param(data, &spec.shape)
}

impl<T: Scalar> DeformerParams<T> {
    /// Draws every tensor of the inventory. Child streams are derived per
    /// spec index from `rng`, which itself is left untouched.
    pub fn init(config: &ModelConfig, rng: &RngState) -> Result<Self> {
        let specs = parameter_specs(config)?;
        let mut by_name: HashMap<String, Tensor<T>> = HashMap::with_capacity(specs.len());
        let mut registry = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let tensor = realize(spec, rng, i as u64, &by_name)?;
            by_name.insert(spec.name.clone(), tensor.clone());
            registry.push((spec.name.clone(), tensor));
        }

        let take = |name: String| -> Tensor<T> {
            by_name
                .get(&name)
                .unwrap_or_else(|| panic!("parameter inventory is missing {name}"))
                .clone()
        };

        let encoder = EncoderParams {
            temporal_weight: take("encoder.temporal.weight".into()),
            temporal_bias: take("encoder.temporal.bias".into()),
            spatial_direction: take("encoder.spatial.direction".into()),
            spatial_gain: take("encoder.spatial.gain".into()),
            spatial_bias: take("encoder.spatial.bias".into()),
            bn: BatchNormLayer::new(take("encoder.bn.gamma".into()), take("encoder.bn.beta".into())),
            position: take("encoder.position".into()),
        };

        let blocks = (0..config.depth)
            .map(|i| {
                let b = format!("block{}", i + 1);
                BlockParams {
                    w_qkv: take(format!("{b}.attn.w_qkv")),
                    w_out: take(format!("{b}.attn.w_out")),
                    ln_gamma: take(format!("{b}.ln.gamma")),
                    ln_beta: take(format!("{b}.ln.beta")),
                    ffn_w1: take(format!("{b}.ffn.w1")),
                    ffn_b1: take(format!("{b}.ffn.b1")),
                    ffn_w2: take(format!("{b}.ffn.w2")),
                    ffn_b2: take(format!("{b}.ffn.b2")),
                    ftl: config.ftl_enabled.then(|| FtlParams {
                        conv_weight: take(format!("{b}.ftl.conv.weight")),
                        conv_bias: take(format!("{b}.ftl.conv.bias")),
                        bn: BatchNormLayer::new(
                            take(format!("{b}.ftl.bn.gamma")),
                            take(format!("{b}.ftl.bn.beta")),
                        ),
                    }),
                }
            })
            .collect();

        Ok(DeformerParams {
            registry,
            encoder,
            blocks,
            head_weight: take("head.weight".into()),
            head_bias: take("head.bias".into()),
        })
    }

    /// Every trainable tensor in canonical order; handles alias the tensors
    /// used by the forward pass.
    pub fn named(&self) -> &[(String, Tensor<T>)] {
        &self.registry
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.registry
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.registry {
            t.zero_grad();
        }
    }

    /// Batch-norm layers in canonical order, keyed by their name prefix.
    pub fn bn_layers(&self) -> Vec<(String, &BatchNormLayer<T>)> {
        let mut layers = vec![("encoder.bn".to_string(), &self.encoder.bn)];
        for (i, block) in self.blocks.iter().enumerate() {
            if let Some(ftl) = &block.ftl {
                layers.push((format!("block{}.ftl.bn", i + 1), &ftl.bn));
            }
        }
        layers
    }

    /// Running statistics as named vectors, for checkpointing.
    pub fn bn_stats(&self) -> Vec<(String, Vec<T>)> {
        let mut stats = Vec::new();
        for (prefix, layer) in self.bn_layers() {
            let state = layer.state.borrow();
            stats.push((format!("{prefix}.running_mean"), state.running_mean.clone()));
            stats.push((format!("{prefix}.running_var"), state.running_var.clone()));
        }
        stats
    }

    pub fn set_bn_stat(&self, name: &str, values: &[T]) -> Result<()> {
        for (prefix, layer) in self.bn_layers() {
            let mut state = layer.state.borrow_mut();
            let slot = if name == format!("{prefix}.running_mean") {
                &mut state.running_mean
            } else if name == format!("{prefix}.running_var") {
                &mut state.running_var
            } else {
                continue;
            };
            if slot.len() != values.len() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected {} values, got {}",
                    slot.len(),
                    values.len()
                )));
            }
            slot.copy_from_slice(values);
            return Ok(());
        }
        Err(Error::Lookup {
            kind: "batchnorm statistic",
            name: name.to_string(),
        })
    }
}
