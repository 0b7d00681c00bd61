//! Static shape algebra, parameter inventory, and MACs estimate.
//!
//! Everything here is computed from the configuration alone, before any
//! tensor exists. The forward pass asserts its live shapes against this
//! audit in debug builds, and checkpoints validate stored tensors against
//! the same parameter inventory, so the three views cannot drift apart.

use super::config::{IpMode, ModelConfig};
use crate::error::{Error, Result};

/// One named stage of the per-sample dataflow (no batch axis).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeAudit {
    pub stages: Vec<Stage>,
    /// Temporal/fine-branch kernel length κ.
    pub kernel_len: usize,
    /// Token lengths L_1..L_{n+1}: encoder output, then each block halves.
    pub token_lens: Vec<usize>,
    /// Length of the flattened final feature map (kernels · L_{n+1}).
    pub flat_len: usize,
    /// Length of the purification bypass appended to the flattened features.
    pub bypass_len: usize,
    /// flat_len + bypass_len.
    pub embedding_len: usize,
}

impl ShapeAudit {
    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }
}

/// Block indices whose activations feed the classifier bypass: all of them
/// when dense purification is on, otherwise only the last. With the
/// purification transform *and* the dense connection both ablated there is
/// no bypass at all; the embedding is exactly the flattened final map.
pub(crate) fn tap_blocks(config: &ModelConfig) -> std::ops::Range<usize> {
    if matches!(config.ip_mode, IpMode::None) && !config.dense_enabled {
        0..0
    } else if config.dense_enabled {
        0..config.depth
    } else {
        config.depth - 1..config.depth
    }
}

/// Walks the dataflow symbolically, checking feasibility of every pooling
/// step and recording the shape of each stage.
pub fn shape_audit(config: &ModelConfig) -> Result<ShapeAudit> {
    let kappa = config.kernel_len()?;
    let (c, l, k) = (config.channels, config.segment_len, config.kernels);
    let (h, d) = (config.n_heads, config.attn_dim());

    let mut stages = vec![
        Stage {
            name: "input".into(),
            shape: vec![c, l],
        },
        Stage {
            name: "encoder.temporal".into(),
            shape: vec![k, c, l],
        },
        Stage {
            name: "encoder.spatial".into(),
            shape: vec![k, 1, l],
        },
    ];
    if l < 2 {
        return Err(Error::Config(format!(
            "encoder pooling needs segment_len >= 2, got {l}"
        )));
    }
    let mut token_len = l / 2;
    stages.push(Stage {
        name: "encoder.tokens".into(),
        shape: vec![k, token_len],
    });

    let mut token_lens = vec![token_len];
    for i in 0..config.depth {
        let block = format!("block{}", i + 1);
        if token_len < 2 {
            return Err(Error::Config(format!(
                "{block}: token length {token_len} cannot be halved; \
                 reduce depth or use longer segments"
            )));
        }
        let pooled = token_len / 2;
        stages.push(Stage {
            name: format!("{block}.pooled"),
            shape: vec![k, pooled],
        });
        stages.push(Stage {
            name: format!("{block}.qkv"),
            shape: vec![k, 3 * h * d],
        });
        stages.push(Stage {
            name: format!("{block}.attention"),
            shape: vec![h, k, d],
        });
        stages.push(Stage {
            name: format!("{block}.msa"),
            shape: vec![k, pooled],
        });
        stages.push(Stage {
            name: format!("{block}.coarse"),
            shape: vec![k, pooled],
        });
        if config.ftl_enabled {
            stages.push(Stage {
                name: format!("{block}.fine"),
                shape: vec![k, pooled],
            });
        }
        stages.push(Stage {
            name: format!("{block}.output"),
            shape: vec![k, pooled],
        });
        token_len = pooled;
        token_lens.push(token_len);
    }

    let flat_len = k * token_len;
    let mut bypass_len = 0usize;
    for i in tap_blocks(config) {
        let tapped = match config.ip_mode {
            IpMode::None => k * token_lens[i + 1],
            _ => k,
        };
        if !matches!(config.ip_mode, IpMode::None) {
            stages.push(Stage {
                name: format!("block{}.ip", i + 1),
                shape: vec![k],
            });
        }
        bypass_len += tapped;
    }
    let embedding_len = flat_len + bypass_len;
    stages.push(Stage {
        name: "embedding".into(),
        shape: vec![embedding_len],
    });
    stages.push(Stage {
        name: "logits".into(),
        shape: vec![config.n_classes],
    });

    Ok(ShapeAudit {
        stages,
        kernel_len: kappa,
        token_lens,
        flat_len,
        bypass_len,
        embedding_len,
    })
}

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in ±1/√fan_in.
    UniformFanIn(usize),
    Normal {
        std: f64,
    },
    /// Set to the L2 norm of the matching direction rows (weight-norm gain),
    /// making the reparameterization an identity at initialization.
    DirectionNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered inventory of every trainable tensor. This order is the canonical
/// one: initialization streams, checkpoints, and the optimizer all key off
/// it.
pub fn parameter_specs(config: &ModelConfig) -> Result<Vec<ParamSpec>> {
    let audit = shape_audit(config)?;
    let kappa = audit.kernel_len;
    let (c, k) = (config.channels, config.kernels);
    let (h, d, e) = (config.n_heads, config.attn_dim(), config.ffn_expansion);

    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| {
        specs.push(ParamSpec { name, shape, init });
    };

    push(
        "encoder.temporal.weight".into(),
        vec![k, 1, 1, kappa],
        Init::UniformFanIn(kappa),
    );
    push("encoder.temporal.bias".into(), vec![k], Init::Zeros);
    push(
        "encoder.spatial.direction".into(),
        vec![k, k, c, 1],
        Init::UniformFanIn(k * c),
    );
    push("encoder.spatial.gain".into(), vec![k], Init::DirectionNorm);
    push("encoder.spatial.bias".into(), vec![k], Init::Zeros);
    push("encoder.bn.gamma".into(), vec![k], Init::Ones);
    push("encoder.bn.beta".into(), vec![k], Init::Zeros);
    push(
        "encoder.position".into(),
        vec![k, audit.token_lens[0]],
        Init::Normal { std: 0.02 },
    );

    for i in 0..config.depth {
        let b = format!("block{}", i + 1);
        let p = audit.token_lens[i + 1];
        push(
            format!("{b}.attn.w_qkv"),
            vec![p, 3 * h * d],
            Init::UniformFanIn(p),
        );
        push(
            format!("{b}.attn.w_out"),
            vec![h * d, p],
            Init::UniformFanIn(h * d),
        );
        push(format!("{b}.ln.gamma"), vec![p], Init::Ones);
        push(format!("{b}.ln.beta"), vec![p], Init::Zeros);
        push(
            format!("{b}.ffn.w1"),
            vec![p, e * p],
            Init::UniformFanIn(p),
        );
        push(format!("{b}.ffn.b1"), vec![e * p], Init::Zeros);
        push(
            format!("{b}.ffn.w2"),
            vec![e * p, p],
            Init::UniformFanIn(e * p),
        );
        push(format!("{b}.ffn.b2"), vec![p], Init::Zeros);
        if config.ftl_enabled {
            push(
                format!("{b}.ftl.conv.weight"),
                vec![k, k, kappa],
                Init::UniformFanIn(k * kappa),
            );
            push(format!("{b}.ftl.conv.bias"), vec![k], Init::Zeros);
            push(format!("{b}.ftl.bn.gamma"), vec![k], Init::Ones);
            push(format!("{b}.ftl.bn.beta"), vec![k], Init::Zeros);
        }
    }

    push(
        "head.weight".into(),
        vec![audit.embedding_len, config.n_classes],
        Init::UniformFanIn(audit.embedding_len),
    );
    push("head.bias".into(), vec![config.n_classes], Init::Zeros);
    Ok(specs)
}

/// Total trainable scalars.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(parameter_specs(config)?.iter().map(ParamSpec::numel).sum())
}

/// Multiply-accumulate count for one forward pass of one sample, covering
/// convolutions, linear projections, and attention products. Normalization,
/// activations, pooling, and the purification statistics are excluded; they
/// are linear-time in the activations and negligible against these terms.
pub fn macs_estimate(config: &ModelConfig) -> Result<u64> {
    let audit = shape_audit(config)?;
    let kappa = audit.kernel_len as u64;
    let (c, l, k) = (
        config.channels as u64,
        config.segment_len as u64,
        config.kernels as u64,
    );
    let (h, d, e) = (
        config.n_heads as u64,
        config.attn_dim() as u64,
        config.ffn_expansion as u64,
    );

    // Encoder: κ MACs per output element, then a dense map over (kernel,
    // channel) pairs per time step.
    let mut macs = k * c * l * kappa + k * k * c * l;
    for i in 0..config.depth {
        let len = audit.token_lens[i] as u64;
        let p = audit.token_lens[i + 1] as u64;
        macs += k * p * 3 * h * d; // QKV projection
        macs += 2 * h * k * k * d; // scores and context
        macs += k * h * d * p; // output projection
        macs += 2 * e * k * p * p; // FFN both layers
        if config.ftl_enabled {
            macs += k * k * kappa * len; // fine-branch convolution
        }
    }
    macs += audit.embedding_len as u64 * config.n_classes as u64;
    Ok(macs)
}
