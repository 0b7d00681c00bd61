//! EEG-Deformer model: shallow encoder, HCT blocks, information purification.

mod audit;
mod config;
mod forward;
mod gradcheck;
mod params;

pub use audit::{
    macs_estimate, param_count, parameter_specs, shape_audit, Init, ParamSpec, ShapeAudit, Stage,
};
pub use config::{odd_kernel_length, IpMode, IpSource, ModelConfig};
pub use forward::{attention, ip_unit, project_qkv, BlockTrace, Deformer, ForwardTrace};
pub use gradcheck::{gradcheck, GradCheckGroup, GradCheckReport};
pub use params::{BatchNormLayer, BlockParams, DeformerParams, EncoderParams, FtlParams};
