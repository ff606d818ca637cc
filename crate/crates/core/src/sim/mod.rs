//! Synthetic scene generation: image-source reverberation, diffuse noise,
//! speech-like sources and oracle ground truth.

pub mod noise;
pub mod rir;
pub mod scene;
pub mod source;

pub use noise::{diffuse_noise, scale_to_snr, snr_scale};
pub use rir::{image_source_rir, Room, RoomImpulseResponse, RirParams, T60_PRESETS};
pub use scene::{
    build_oracle_covariances, default_ha_mics, simulate_scene, NoiseModel, OracleTracks, Reverb, ScenarioConfig, Scene,
    SceneTruth, SourceModel,
};
