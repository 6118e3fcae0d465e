//! Corpus-level far-field simulation: a seeded bank of rooms and noise
//! generators turning close-talk utterances into frame-synchronous far-field
//! copies.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{synth_utterance, SynthTaskSpec};
use super::{PipelineError, Result};
use crate::seeding::utterance_rng;
use crate::simkit::{
    generate_rir, late_field_ir, simulate_beamformed, simulate_single_channel_ir, ImpulseResponse,
    NoiseSource, RoomSpec, SimMode, Waveform,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseStyle {
    /// Several overlapping synthetic talkers.
    Babble,
    /// 1/f noise.
    Pink,
    /// 1/f² noise.
    Brown,
    /// Mains hum with harmonics.
    Hum,
    /// Sustained tonal notes.
    Music,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarFieldSpec {
    pub mode: SimMode,
    /// Number of rooms in the bank.
    pub rooms: usize,
    pub width_m: [f64; 2],
    pub depth_m: [f64; 2],
    pub height_m: [f64; 2],
    pub reflection: [f64; 2],
    pub distance_m: [f64; 2],
    pub max_order: u32,
    pub ir_length: usize,
    pub snr_db: [f64; 2],
    pub noise: Vec<NoiseStyle>,
    /// Directional sources per utterance in beamformed mode.
    #[serde(default = "one")]
    pub directional: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl FarFieldSpec {
    /// One microphone, one noise type per utterance.
    pub fn single(seed: u64) -> Self {
        Self {
            mode: SimMode::Single,
            rooms: 24,
            width_m: [3.0, 8.0],
            depth_m: [3.0, 6.0],
            height_m: [2.5, 3.5],
            reflection: [0.6, 0.9],
            distance_m: [1.0, 4.0],
            max_order: 8,
            ir_length: 4096,
            snr_db: [0.0, 15.0],
            noise: vec![NoiseStyle::Babble, NoiseStyle::Pink, NoiseStyle::Brown, NoiseStyle::Hum, NoiseStyle::Music],
            directional: 1,
            seed,
        }
    }

    /// Diffuse background plus directional point sources.
    pub fn beamformed(seed: u64) -> Self {
        Self {
            mode: SimMode::Beamformed,
            ..Self::single(seed)
        }
    }

    /// A second domain with different rooms and noise statistics.
    pub fn live(seed: u64) -> Self {
        Self {
            mode: SimMode::Beamformed,
            reflection: [0.7, 0.92],
            distance_m: [2.0, 5.0],
            width_m: [4.0, 9.0],
            snr_db: [-3.0, 10.0],
            noise: vec![NoiseStyle::Music, NoiseStyle::Babble, NoiseStyle::Hum],
            directional: 2,
            ..Self::single(seed ^ 0x11fe)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.rooms == 0 {
            return bad("far-field bank needs at least one room");
        }
        let ranges = [self.width_m, self.depth_m, self.height_m, self.distance_m];
        if ranges.iter().any(|r| !(r[0] > 0.0 && r[1] >= r[0])) {
            return bad("room ranges must be positive and ordered");
        }
        if !(0.0 <= self.reflection[0] && self.reflection[0] <= self.reflection[1] && self.reflection[1] <= 1.0) {
            return bad("reflection range must lie in [0, 1]");
        }
        if self.snr_db[0] > self.snr_db[1] || self.snr_db[0].is_nan() {
            return bad("snr range must be ordered");
        }
        if self.noise.is_empty() {
            return bad("at least one noise style is required");
        }
        if self.ir_length == 0 {
            return bad("ir_length must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BankRoom {
    pub room: RoomSpec,
    pub speech_ir: ImpulseResponse,
    pub late_ir: ImpulseResponse,
    /// IRs from interfering source positions to the microphone.
    pub noise_irs: Vec<ImpulseResponse>,
}

#[derive(Clone, Debug)]
pub struct RoomBank {
    pub spec: FarFieldSpec,
    pub rooms: Vec<BankRoom>,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn random_point(rng: &mut ChaCha8Rng, dims: [f64; 3], margin: f64) -> [f64; 3] {
    let mut p = [0.0; 3];
    for (p, d) in p.iter_mut().zip(dims) {
        *p = rng.gen_range(margin..d - margin);
    }
    p
}

fn inside(p: [f64; 3], dims: [f64; 3], margin: f64) -> bool {
    p.iter().zip(dims).all(|(&v, d)| v > margin && v < d - margin)
}

fn make_room(spec: &FarFieldSpec, index: usize) -> Result<BankRoom> {
    let mut rng = utterance_rng(spec.seed, &format!("room{index}"));
    let margin = 0.3;
    loop {
        let dims = [uniform(&mut rng, spec.width_m), uniform(&mut rng, spec.depth_m), uniform(&mut rng, spec.height_m)];
        let mic = random_point(&mut rng, dims, 0.5);
        let d = uniform(&mut rng, spec.distance_m);
        let mut source = None;
        for _ in 0..50 {
            let az = rng.gen_range(0.0..2.0 * PI);
            let h = rng.gen_range(1.2..1.8f64).min(dims[2] - margin - 0.01);
            let dz = h - mic[2];
            if dz.abs() >= d {
                continue;
            }
            let r = (d * d - dz * dz).sqrt();
            let p = [mic[0] + r * az.cos(), mic[1] + r * az.sin(), h];
            if inside(p, dims, margin) {
                source = Some(p);
                break;
            }
        }
        // Rooms too small for the drawn distance are redrawn.
        let Some(source) = source else { continue };
        let beta = uniform(&mut rng, spec.reflection);
        let room = RoomSpec::new(dims, source, mic)
            .with_reflection(beta)
            .with_max_order(spec.max_order)
            .with_ir_length(spec.ir_length);
        let speech_ir = generate_rir(&room)?;
        let late_ir = late_field_ir(&speech_ir);
        let mut noise_irs = Vec::new();
        for _ in 0..spec.directional.max(1) {
            let mut p = random_point(&mut rng, dims, margin);
            while (0..3).map(|k| (p[k] - mic[k]).powi(2)).sum::<f64>() < 0.25 {
                p = random_point(&mut rng, dims, margin);
            }
            let nroom = RoomSpec { source: p, ..room.clone() };
            noise_irs.push(generate_rir(&nroom)?);
        }
        return Ok(BankRoom {
            room,
            speech_ir,
            late_ir,
            noise_irs,
        });
    }
}

impl RoomBank {
    pub fn new(spec: &FarFieldSpec) -> Result<Self> {
        use rayon::prelude::*;
        spec.validate()?;
        let rooms = (0..spec.rooms).into_par_iter().map(|i| make_room(spec, i)).collect::<Result<_>>()?;
        Ok(Self {
            spec: spec.clone(),
            rooms,
        })
    }
}

/// Leaky one-pole filters on white noise.
fn colored(rng: &mut ChaCha8Rng, len: usize, pink: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let (mut b0, mut b1, mut b2, mut brown) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..len {
        let w: f64 = rng.gen_range(-1.0..1.0);
        if pink {
            // Three-pole approximation of a -3 dB/octave slope.
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            out.push(b0 + b1 + b2 + w * 0.1848);
        } else {
            brown = 0.995 * brown + 0.1 * w;
            out.push(brown);
        }
    }
    out
}

fn hum(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let f = if rng.gen_bool(0.5) { 50.0 } else { 60.0 };
    let phases: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    (0..len)
        .map(|n| {
            let t = n as f64 / 16_000.0;
            phases
                .iter()
                .enumerate()
                .map(|(k, p)| (2.0 * PI * f * (k + 1) as f64 * t + p).sin() / (k + 1) as f64)
                .sum::<f64>()
                + 0.02 * rng.gen_range(-1.0..1.0)
        })
        .collect()
}

fn music(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let note_len = rng.gen_range(2000..6000);
    let mut out = vec![0.0; len];
    let mut start = 0;
    while start < len {
        let end = (start + note_len).min(len);
        for _ in 0..3 {
            let midi = rng.gen_range(45..84) as f64;
            let f = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
            let p = rng.gen_range(0.0..2.0 * PI);
            for (k, o) in out[start..end].iter_mut().enumerate() {
                let env = (-(k as f64) / note_len as f64 * 2.0).exp();
                let t = k as f64 / 16_000.0;
                *o += env * ((2.0 * PI * f * t + p).sin() + 0.3 * (4.0 * PI * f * t + p).sin());
            }
        }
        start = end;
    }
    out
}

fn babble(task: &SynthTaskSpec, id: &str, len: usize) -> Result<Vec<f64>> {
    let mut talkers = task.clone();
    talkers.confusable_rate = 0.0;
    talkers.positive_ratio = 0.0;
    talkers.seed ^= 0xbab1e;
    let mut out = vec![0.0; len];
    for k in 0..4 {
        let u = synth_utterance(&talkers, &format!("{id}/babble{k}"), false)?;
        for (o, v) in out.iter_mut().zip(u.waveform.samples().iter().cycle()) {
            *o += v;
        }
    }
    Ok(out)
}

/// Noise signal of `len` samples in the given style.
pub fn noise_signal(style: NoiseStyle, task: &SynthTaskSpec, id: &str, len: usize, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    let len = len.max(1);
    let mut x = match style {
        NoiseStyle::Babble => babble(task, id, len)?,
        NoiseStyle::Pink => colored(rng, len, true),
        NoiseStyle::Brown => colored(rng, len, false),
        NoiseStyle::Hum => hum(rng, len),
        NoiseStyle::Music => music(rng, len),
    };
    let p = x.iter().map(|v| v * v).sum::<f64>() / len as f64;
    if p > 0.0 {
        let g = 0.1 / p.sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    } else {
        x = colored(rng, len, true);
    }
    Ok(Waveform::new(x, 16_000)?)
}

/// Draws from the bank for one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarFieldInfo {
    pub room: usize,
    pub snr_db: f64,
    pub noise: Vec<NoiseStyle>,
    pub delay: usize,
}

/// Far-field copy of `clean`, same length and frame-synchronous. Depends only
/// on `(bank, task, id, clean)`.
pub fn far_field(bank: &RoomBank, task: &SynthTaskSpec, id: &str, clean: &Waveform) -> Result<(Waveform, FarFieldInfo)> {
    let spec = &bank.spec;
    let mut rng = utterance_rng(spec.seed ^ 0xfa7f_1e1d, id);
    let r = rng.gen_range(0..bank.rooms.len());
    let room = &bank.rooms[r];
    let snr = uniform(&mut rng, spec.snr_db);
    let pick = |rng: &mut ChaCha8Rng| spec.noise[rng.gen_range(0..spec.noise.len())];
    let len = clean.len();
    let (sim, styles) = match spec.mode {
        SimMode::Single => {
            let style = pick(&mut rng);
            let n = noise_signal(style, task, id, len, &mut rng)?;
            (simulate_single_channel_ir(clean, &room.speech_ir, Some(&n), snr, &mut rng)?, vec![style])
        }
        SimMode::Beamformed => {
            let mut styles = Vec::new();
            let mut diffuse = Vec::new();
            // Diffuse background is always broadband.
            let d_style = if rng.gen_bool(0.5) { NoiseStyle::Pink } else { NoiseStyle::Brown };
            styles.push(d_style);
            diffuse.push(NoiseSource::diffuse(noise_signal(d_style, task, id, len, &mut rng)?, Some(room.late_ir.clone())));
            let mut directional = Vec::new();
            for (k, ir) in room.noise_irs.iter().take(spec.directional).enumerate() {
                let style = pick(&mut rng);
                styles.push(style);
                let w = noise_signal(style, task, &format!("{id}/dir{k}"), len, &mut rng)?;
                let gain = 10f64.powf(rng.gen_range(-0.3..0.3));
                directional.push(NoiseSource::directional(w, ir.clone()).with_gain(gain));
            }
            (simulate_beamformed(clean, &room.speech_ir, &diffuse, &directional, snr, &mut rng)?, styles)
        }
    };
    let info = FarFieldInfo {
        room: r,
        snr_db: snr,
        noise: styles,
        delay: sim.delay,
    };
    Ok((sim.waveform, info))
}
