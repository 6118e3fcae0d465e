//! Mono 16-bit PCM WAV at 16 kHz.

use std::path::Path;

use super::{ImpulseResponse, Result, SimError, Waveform};

pub const SAMPLE_RATE: u32 = 16_000;

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)
        .map_err(|e| SimError::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(SimError::Wav(format!(
            "{}: sample rate {} Hz is not supported (expected {SAMPLE_RATE} Hz)",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(SimError::Wav(format!(
            "{}: expected mono 16-bit PCM, got {} channel(s), {} bits, {:?}",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32_768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| SimError::Wav(format!("{}: {e}", path.display())))?;
    Waveform::new(samples, SAMPLE_RATE)
}

/// Writes 16-bit PCM. Returns how many samples had to be clipped to full
/// scale.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<usize> {
    let path = path.as_ref();
    if wave.sample_rate() != SAMPLE_RATE {
        return Err(SimError::Wav(format!(
            "refusing to write {} Hz audio (expected {SAMPLE_RATE} Hz)",
            wave.sample_rate()
        )));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| SimError::Wav(format!("{}: {e}", path.display()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    let mut clipped = 0;
    for &v in wave.samples() {
        let scaled = (v * 32_768.0).round();
        if !(-32_768.0..=32_767.0).contains(&scaled) {
            clipped += 1;
        }
        writer
            .write_sample(scaled.clamp(-32_768.0, 32_767.0) as i16)
            .map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)?;
    Ok(clipped)
}

/// Reads a measured or externally generated impulse response.
pub fn read_ir(path: impl AsRef<Path>) -> Result<ImpulseResponse> {
    let w = read_wav(path)?;
    ImpulseResponse::new(w.into_samples(), SAMPLE_RATE)
}
