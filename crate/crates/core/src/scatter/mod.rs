//! Deformable wavelet scattering.

pub mod bank;
pub mod bridge;
pub mod engine;
pub mod fft;
pub mod fixed;
pub mod norm;

pub use bank::{BankConfig, FilterBank, OffsetParams};
pub use bridge::{bridge, bridge_backward, fixed_wst, scatter0, scatter1, scatter2, Bridge, BridgeGrads, BridgeTape};
pub use fixed::fixed_wst_reference;
pub use norm::{NormMode, NormState};
