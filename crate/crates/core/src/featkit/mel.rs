use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{FeatError, FeatureSequence, Result};
use crate::matrix::Matrix;
use crate::simkit::Waveform;

const SAMPLE_RATE: u32 = 16_000;

/// HTK Mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbankConfig {
    pub n_mels: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    /// FFT length in samples; `None` picks the next power of two.
    pub fft_size: Option<usize>,
    /// Lower bound applied to filter energies before the log.
    pub floor: f64,
    pub preemphasis: f64,
    pub low_hz: f64,
    /// `None` means Nyquist.
    pub high_hz: Option<f64>,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            window_ms: 25.0,
            hop_ms: 10.0,
            fft_size: None,
            floor: 1e-10,
            preemphasis: 0.97,
            low_hz: 0.0,
            high_hz: None,
        }
    }
}

impl FbankConfig {
    pub fn with_mels(n_mels: usize) -> Self {
        Self {
            n_mels,
            ..Self::default()
        }
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    pub fn fft_len(&self) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.window_samples().next_power_of_two())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(FeatError::Config("n_mels must be at least 1".into()));
        }
        if !(self.hop_ms > 0.0 && self.window_ms >= self.hop_ms) {
            return Err(FeatError::Config(format!(
                "need window >= hop > 0, got window {} ms, hop {} ms",
                self.window_ms, self.hop_ms
            )));
        }
        if self.fft_len() < self.window_samples() {
            return Err(FeatError::Config("fft_size shorter than the window".into()));
        }
        if !(self.floor > 0.0) {
            return Err(FeatError::Config("log floor must be positive".into()));
        }
        let high = self.high_hz.unwrap_or(SAMPLE_RATE as f64 / 2.0);
        if !(0.0 <= self.low_hz && self.low_hz < high && high <= SAMPLE_RATE as f64 / 2.0) {
            return Err(FeatError::Config("bad filterbank frequency range".into()));
        }
        Ok(())
    }
}

/// Reusable extractor: holds the FFT plan, window and filter weights.
pub struct Fbank {
    cfg: FbankConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// Per filter: first FFT bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
}

impl std::fmt::Debug for Fbank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fbank").field("cfg", &self.cfg).finish()
    }
}

impl Fbank {
    pub fn new(cfg: &FbankConfig) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.window_samples();
        let n_fft = cfg.fft_len();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let window = (0..win)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (win as f64 - 1.0)).cos())
            .collect();

        let high = cfg.high_hz.unwrap_or(SAMPLE_RATE as f64 / 2.0);
        let (mlo, mhi) = (hz_to_mel(cfg.low_hz), hz_to_mel(high));
        let step = (mhi - mlo) / (cfg.n_mels + 1) as f64;
        let bins = n_fft / 2 + 1;
        let filters = (0..cfg.n_mels)
            .map(|j| {
                let (left, centre, right) = (
                    mlo + j as f64 * step,
                    mlo + (j + 1) as f64 * step,
                    mlo + (j + 2) as f64 * step,
                );
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..bins {
                    let m = hz_to_mel(k as f64 * SAMPLE_RATE as f64 / n_fft as f64);
                    let w = if m > left && m <= centre {
                        (m - left) / (centre - left)
                    } else if m > centre && m < right {
                        (right - m) / (right - centre)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first.get_or_insert(k);
                    }
                    if first.is_some() {
                        weights.push(w);
                    }
                }
                while weights.last() == Some(&0.0) {
                    weights.pop();
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            fft,
            window,
            filters,
        })
    }

    pub fn config(&self) -> &FbankConfig {
        &self.cfg
    }

    /// Centre frequency of filter `j` in Hz.
    pub fn centre_hz(&self, j: usize) -> f64 {
        let high = self.cfg.high_hz.unwrap_or(SAMPLE_RATE as f64 / 2.0);
        let (mlo, mhi) = (hz_to_mel(self.cfg.low_hz), hz_to_mel(high));
        mel_to_hz(mlo + (j + 1) as f64 * (mhi - mlo) / (self.cfg.n_mels + 1) as f64)
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        let win = self.cfg.window_samples();
        if samples < win {
            0
        } else {
            (samples - win) / self.cfg.hop_samples() + 1
        }
    }

    pub fn compute(&self, w: &Waveform) -> Result<FeatureSequence> {
        if w.sample_rate() != SAMPLE_RATE {
            return Err(FeatError::SampleRate(w.sample_rate()));
        }
        let win = self.cfg.window_samples();
        if w.len() < win {
            return Err(FeatError::TooShort {
                samples: w.len(),
                window: win,
            });
        }
        let hop = self.cfg.hop_samples();
        let n_fft = self.cfg.fft_len();
        let frames = self.frame_count(w.len());
        let mut out = Matrix::zeros(frames, self.cfg.n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut power = vec![0.0; n_fft / 2 + 1];
        let x = w.samples();
        for t in 0..frames {
            let seg = &x[t * hop..t * hop + win];
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for n in 0..win {
                let prev = if n == 0 { seg[0] } else { seg[n - 1] };
                let v = seg[n] - self.cfg.preemphasis * prev;
                buf[n] = Complex::new(v * self.window[n], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = out.row_mut(t);
            for (j, (first, weights)) in self.filters.iter().enumerate() {
                let e: f64 = weights
                    .iter()
                    .zip(&power[*first..])
                    .map(|(w, p)| w * p)
                    .sum();
                row[j] = e.max(self.cfg.floor).ln() as f32;
            }
        }
        FeatureSequence::new(out, self.cfg.hop_ms)
    }
}

/// One-shot log-Mel extraction; use [`Fbank`] directly for many utterances.
pub fn log_mel(w: &Waveform, cfg: &FbankConfig) -> Result<FeatureSequence> {
    Fbank::new(cfg)?.compute(w)
}
