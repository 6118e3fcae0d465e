//! Simulation configuration files (TOML).
//!
//! ```toml
//! mode = "single"          # or "beamformed"
//! snr_db = 10.0
//!
//! [room]
//! dimensions = [5.0, 4.0, 3.0]
//! source = [1.0, 1.0, 1.5]
//! mic = [3.0, 2.0, 1.0]
//! reflection = [0.7, 0.7, 0.7, 0.7, 0.6, 0.6]   # or a single number
//! max_order = 10
//! speed_of_sound = 343.0
//! ir_length = 4096
//! interpolation = "sinc"   # or "nearest"
//! ir_path = "measured.wav" # optional, replaces the image-method RIR
//!
//! [[noise]]
//! path = "fan.wav"
//! kind = "diffuse"         # or "directional"
//! gain = 1.0
//! position = [4.0, 3.0, 1.0]  # directional sources without ir_path
//! ir_path = "tv.wav"          # optional
//! ```
//!
//! In `single` mode one noise entry is drawn per utterance.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rir::{generate_rir, Interpolation, RoomSpec};
use super::wav::{read_ir, read_wav, SAMPLE_RATE};
use super::{
    simulate_beamformed, simulate_single_channel_ir, ImpulseResponse, NoiseKind, NoiseSource,
    Result, SimError, Simulation, Waveform,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    #[default]
    Single,
    Beamformed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reflection {
    Uniform(f64),
    PerWall([f64; 6]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomConfig {
    pub dimensions: [f64; 3],
    pub source: [f64; 3],
    pub mic: [f64; 3],
    pub reflection: Reflection,
    #[serde(default = "default_order")]
    pub max_order: u32,
    #[serde(default = "default_c")]
    pub speed_of_sound: f64,
    #[serde(default = "default_ir_length")]
    pub ir_length: usize,
    #[serde(default)]
    pub interpolation: Interpolation,
    #[serde(default)]
    pub ir_path: Option<PathBuf>,
}

fn default_order() -> u32 {
    10
}
fn default_c() -> f64 {
    343.0
}
fn default_ir_length() -> usize {
    4096
}
fn default_gain() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseEntry {
    pub path: PathBuf,
    pub kind: NoiseKind,
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default)]
    pub position: Option<[f64; 3]>,
    #[serde(default)]
    pub ir_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub mode: SimMode,
    pub snr_db: f64,
    pub room: RoomConfig,
    #[serde(default)]
    pub noise: Vec<NoiseEntry>,
}

impl RoomConfig {
    pub fn spec(&self) -> RoomSpec {
        RoomSpec {
            dimensions: self.dimensions,
            source: self.source,
            mic: self.mic,
            wall_reflection: match self.reflection {
                Reflection::Uniform(b) => [b; 6],
                Reflection::PerWall(b) => b,
            },
            max_order: self.max_order,
            speed_of_sound: self.speed_of_sound,
            ir_length: self.ir_length,
            sample_rate: SAMPLE_RATE,
            interpolation: self.interpolation,
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    /// Loads every waveform and IR the configuration refers to. Relative
    /// paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Simulator> {
        let room = self.room.spec();
        let speech_ir = match &self.room.ir_path {
            Some(p) => read_ir(resolve(base, p))?,
            None => generate_rir(&room)?,
        };
        let mut diffuse = Vec::new();
        let mut directional = Vec::new();
        for entry in &self.noise {
            let wave = read_wav(resolve(base, &entry.path))?;
            let ir = match (&entry.ir_path, entry.position) {
                (Some(p), _) => Some(read_ir(resolve(base, p))?),
                (None, Some(pos)) => Some(generate_rir(&RoomSpec {
                    source: pos,
                    ..room.clone()
                })?),
                (None, None) if entry.kind == NoiseKind::Diffuse => {
                    Some(super::late_field_ir(&speech_ir))
                }
                (None, None) => {
                    return Err(SimError::Config(format!(
                        "directional noise {} needs `position` or `ir_path`",
                        entry.path.display()
                    )))
                }
            };
            let src = NoiseSource {
                waveform: wave,
                kind: entry.kind,
                ir,
                gain: entry.gain,
            };
            match entry.kind {
                NoiseKind::Diffuse => diffuse.push(src),
                NoiseKind::Directional => directional.push(src),
            }
        }
        Ok(Simulator {
            mode: self.mode,
            snr_db: self.snr_db,
            speech_ir,
            diffuse,
            directional,
        })
    }
}

/// A configuration with all audio resolved, ready to process utterances.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub mode: SimMode,
    pub snr_db: f64,
    pub speech_ir: ImpulseResponse,
    pub diffuse: Vec<NoiseSource>,
    pub directional: Vec<NoiseSource>,
}

impl Simulator {
    pub fn run(&self, s: &Waveform, rng: &mut impl Rng) -> Result<Simulation> {
        match self.mode {
            SimMode::Beamformed => simulate_beamformed(
                s,
                &self.speech_ir,
                &self.diffuse,
                &self.directional,
                self.snr_db,
                rng,
            ),
            SimMode::Single => {
                let pool: Vec<&NoiseSource> =
                    self.diffuse.iter().chain(&self.directional).collect();
                let noise = if pool.is_empty() {
                    None
                } else {
                    Some(&pool[rng.gen_range(0..pool.len())].waveform)
                };
                simulate_single_channel_ir(s, &self.speech_ir, noise, self.snr_db, rng)
            }
        }
    }
}
