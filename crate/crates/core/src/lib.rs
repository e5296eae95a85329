//! Airborne-ultrasound echo simulation and delay-and-sum imaging.
//!
//! The pipeline runs `sim` (synthetic recordings) → `dsp` (band-pass, block
//! splitting, 4× upsampling) → `beamform` (steering delays, power maps,
//! reference subtraction, normalization). Hot loops are routed through
//! [`par::Backend`] so they can run on rayon or sequentially.

pub mod beamform;
pub mod dsp;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod grid;
pub mod image;
pub mod interp;
pub mod matrix;
pub mod par;
pub mod sim;

pub use beamform::{
    das_map, das_map_direct, make_ultrasound_image, normalize, steering_delays, subtract_reference,
    DirectionalHeatMap, PipelineConfig, Preprocessor, ReferenceMode, UltrasoundImage,
};
pub use dsp::{bandpass, split_blocks, upsample4x, BandpassSpec, EchoBlock, RangeGate};
pub use error::{Error, Result};
pub use geometry::ArrayGeometry;
pub use grid::ObservationGrid;
pub use image::{Image, Mask};
pub use matrix::Matrix;
pub use par::Backend;
pub use sim::{
    render_bursts, render_mask, render_scene, synthesize_burst, BurstConfig, MultichannelRecording,
    Position, Reflector, Scene,
};
