use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{ImpulseResponse, Result, SimError, Waveform};

/// Below this many taps in the shorter operand, convolution is a direct sum.
const DIRECT_LIMIT: usize = 64;

/// Full linear convolution (`|x| + |h| - 1` samples).
pub fn convolve(x: &Waveform, h: &ImpulseResponse) -> Result<Waveform> {
    if x.sample_rate() != h.sample_rate() {
        return Err(SimError::SampleRateMismatch(x.sample_rate(), h.sample_rate()));
    }
    if x.is_empty() {
        return Ok(Waveform::zeros(0, x.sample_rate()));
    }
    let out = convolve_slices(x.samples(), h.taps());
    Waveform::new(out, x.sample_rate())
}

pub(crate) fn convolve_slices(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    if x.len().min(h.len()) <= DIRECT_LIMIT {
        direct(x, h)
    } else {
        fft_convolve(x, h)
    }
}

fn direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (o, &hv) in out[i..i + h.len()].iter_mut().zip(h) {
            *o += xv * hv;
        }
    }
    out
}

fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len() + h.len() - 1;
    let size = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    a.resize(size, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
    b.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    a[..n].iter().map(|c| c.re * scale).collect()
}

/// Mean squared amplitude.
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// `10 log10(P_speech / P_noise)`.
pub fn snr_db(speech: &[f64], noise: &[f64]) -> f64 {
    10.0 * (power(speech) / power(noise)).log10()
}

/// `len` samples of `noise` read circularly starting at `offset`.
pub fn loop_noise(noise: &[f64], len: usize, offset: usize) -> Vec<f64> {
    if noise.is_empty() {
        return vec![0.0; len];
    }
    (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
}

/// Result of additive mixing; keeps the scaled noise so callers can
/// re-measure the achieved SNR.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub mixed: Waveform,
    pub scaled_noise: Vec<f64>,
    pub noise_gain: f64,
}

/// `speech + g * noise` with `g` chosen so the full-utterance power ratio is
/// `snr_db`. Noise is looped from its first sample.
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Mixture> {
    mix_at_snr_offset(speech, noise, snr_db, 0)
}

/// As [`mix_at_snr`], reading the looped noise from `offset`.
///
/// Silent speech yields `g = 0`. `snr_db = +inf` returns the speech unchanged.
pub fn mix_at_snr_offset(
    speech: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    offset: usize,
) -> Result<Mixture> {
    if speech.sample_rate() != noise.sample_rate() {
        return Err(SimError::SampleRateMismatch(speech.sample_rate(), noise.sample_rate()));
    }
    mix_components(speech, &loop_noise(noise.samples(), speech.len(), offset), snr_db)
}

/// Mixes `noise`, already aligned to `speech`, at `snr_db`.
pub(crate) fn mix_components(speech: &Waveform, noise: &[f64], snr_db: f64) -> Result<Mixture> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(SimError::InvalidParameter(format!("bad SNR {snr_db}")));
    }
    debug_assert_eq!(noise.len(), speech.len());
    if snr_db == f64::INFINITY {
        return Ok(Mixture {
            mixed: speech.clone(),
            scaled_noise: vec![0.0; speech.len()],
            noise_gain: 0.0,
        });
    }
    let ps = power(speech.samples());
    let pn = power(noise);
    if pn <= 0.0 {
        return Err(SimError::ZeroEnergy("noise"));
    }
    let gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = noise.iter().map(|v| gain * v).collect();
    let mixed = speech
        .samples()
        .iter()
        .zip(&scaled)
        .map(|(s, n)| s + n)
        .collect();
    Ok(Mixture {
        mixed: Waveform::new(mixed, speech.sample_rate())?,
        scaled_noise: scaled,
        noise_gain: gain,
    })
}
