//! The five-layer convnet used to measure preprocessing overhead, and a
//! harness that times forward passes with on-the-fly spectrograms against
//! the same network fed precomputed spectrograms.

mod harness;
mod net;

pub use harness::{run_benchmark, BenchConfig, BenchRecord, BenchReport, DepthSummary};
pub use net::{
    build_depth_net, build_paper_net, param_count, Activation, ConvNet, ConvNetSpec, LayerSpec,
    NET_CLASSES, NET_FILTERS, FULL_CLIP_FRAMES,
};
