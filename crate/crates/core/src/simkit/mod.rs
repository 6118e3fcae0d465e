//! Far-field signal simulation: image-method room impulse responses,
//! convolution, SNR-controlled noise mixing, and the single-channel and
//! multi-source (diffuse + directional) mixing models.

mod config;
mod rir;
mod signal;
mod simulate;
pub mod wav;

pub use config::{NoiseEntry, Reflection, RoomConfig, SimConfig, SimMode, Simulator};
pub use rir::{direct_delay, generate_rir, late_field_ir, Interpolation, RoomSpec, SINC_HALF_WIDTH};
pub use signal::{convolve, loop_noise, mix_at_snr, mix_at_snr_offset, power, snr_db, Mixture};
pub use simulate::{
    simulate_beamformed, simulate_beamformed_room, simulate_single_channel,
    simulate_single_channel_ir, Simulation,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("source and microphone coincide")]
    ZeroDistance,
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("{0} has zero energy")]
    ZeroEnergy(&'static str),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("wav: {0}")]
    Wav(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sampled mono audio. Samples are nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(SimError::InvalidParameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Number of samples whose magnitude exceeds full scale.
    pub fn clipped_samples(&self) -> usize {
        self.samples.iter().filter(|v| v.abs() > 1.0).count()
    }
}

/// Finite impulse response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponse {
    taps: Vec<f64>,
    sample_rate: u32,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if taps.is_empty() {
            return Err(SimError::InvalidParameter("impulse response is empty".into()));
        }
        if sample_rate == 0 {
            return Err(SimError::InvalidParameter("sample rate must be positive".into()));
        }
        if let Some(i) = taps.iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFinite(i));
        }
        Ok(Self { taps, sample_rate })
    }

    /// Unit impulse delayed by `delay` samples.
    pub fn delta(delay: usize, sample_rate: u32) -> Self {
        let mut taps = vec![0.0; delay + 1];
        taps[delay] = 1.0;
        Self { taps, sample_rate }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|v| v * v).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Diffuse,
    Directional,
}

/// A noise signal with its propagation filter.
///
/// Directional sources must carry an IR. Diffuse sources without one are
/// mixed unfiltered; [`simulate_beamformed_room`] fills them with the
/// late-field IR of the room.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    pub waveform: Waveform,
    pub kind: NoiseKind,
    pub ir: Option<ImpulseResponse>,
    /// Relative gain applied before aggregate SNR scaling.
    pub gain: f64,
}

impl NoiseSource {
    pub fn diffuse(waveform: Waveform, ir: Option<ImpulseResponse>) -> Self {
        Self {
            waveform,
            kind: NoiseKind::Diffuse,
            ir,
            gain: 1.0,
        }
    }

    pub fn directional(waveform: Waveform, ir: ImpulseResponse) -> Self {
        Self {
            waveform,
            kind: NoiseKind::Directional,
            ir: Some(ir),
            gain: 1.0,
        }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.kind == NoiseKind::Directional && self.ir.is_none() {
            return Err(SimError::InvalidParameter(
                "directional noise source requires an impulse response".into(),
            ));
        }
        if !self.gain.is_finite() || self.gain < 0.0 {
            return Err(SimError::InvalidParameter(format!("bad source gain {}", self.gain)));
        }
        Ok(())
    }
}
