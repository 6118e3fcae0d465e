//! Synthetic speech-like corpora.
//!
//! Utterances are strings of parametric "units": harmonic complexes whose
//! spectral envelope has a few formant peaks that may glide over the unit.
//! Words are unit sequences. Every sample's unit and word are known, so frame
//! labels and keyword spans come out of the generator directly.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::seeding::utterance_rng;
use crate::simkit::Waveform;

pub const SAMPLE_RATE: u32 = 16_000;

/// Token ids of the five-output keyword alphabet.
pub mod kws_tokens {
    pub const BLANK: usize = 0;
    pub const SILENCE: usize = 3;
    pub const GARBAGE: usize = 4;
    /// Output index of keyword word `k`.
    pub const fn keyword(k: usize) -> usize {
        k + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitTemplate {
    pub name: String,
    /// `[start_hz, end_hz]` of each formant; the centre glides linearly.
    pub formants: Vec<[f64; 2]>,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    pub duration_ms: [f64; 2],
}

fn default_bandwidth() -> f64 {
    120.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordTemplate {
    pub name: String,
    pub units: Vec<usize>,
}

/// Which labels the generator records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    /// Five-class keyword alphabet; transcripts are CTC token strings.
    #[default]
    Keyword,
    /// One class per unit plus silence (class 0); transcripts are the unit
    /// sequence.
    Phone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthTaskSpec {
    pub units: Vec<UnitTemplate>,
    /// Keyword words in spoken order. Empty for phone tasks.
    #[serde(default)]
    pub keyword: Vec<WordTemplate>,
    pub fillers: Vec<WordTemplate>,
    #[serde(default)]
    pub labels: LabelScheme,
    /// Fraction of utterances containing the full keyword.
    pub positive_ratio: f64,
    /// Share of negatives that carry a partial or reordered keyword.
    #[serde(default)]
    pub confusable_rate: f64,
    pub length_s: [f64; 2],
    pub f0_hz: [f64; 2],
    /// Per-speaker multiplier on every formant frequency.
    pub formant_scale: [f64; 2],
    /// Per-speaker multiplier on unit durations.
    pub rate_scale: [f64; 2],
    /// Background noise RMS relative to the speech RMS.
    #[serde(default = "default_floor_noise")]
    pub floor_noise: f64,
    pub seed: u64,
}

fn default_floor_noise() -> f64 {
    0.003
}

fn unit(name: &str, formants: &[[f64; 2]], duration_ms: [f64; 2]) -> UnitTemplate {
    UnitTemplate {
        name: name.into(),
        formants: formants.to_vec(),
        bandwidth_hz: default_bandwidth(),
        duration_ms,
    }
}

fn word(name: &str, units: &[usize]) -> WordTemplate {
    WordTemplate {
        name: name.into(),
        units: units.to_vec(),
    }
}

impl SynthTaskSpec {
    /// Two-word wake phrase with acoustically close distractor words.
    pub fn keyword_task(seed: u64) -> Self {
        let units = vec![
            unit("h", &[[500.0, 600.0], [1500.0, 1700.0], [2500.0, 2500.0]], [60.0, 100.0]),
            unit("ey", &[[600.0, 400.0], [1800.0, 2300.0], [2600.0, 2900.0]], [120.0, 200.0]),
            unit("k", &[[300.0, 350.0], [1300.0, 1200.0], [2200.0, 2200.0]], [40.0, 70.0]),
            unit("or", &[[520.0, 450.0], [950.0, 800.0], [2400.0, 2300.0]], [100.0, 160.0]),
            unit("t", &[[350.0, 400.0], [1700.0, 1800.0], [3000.0, 3000.0]], [40.0, 60.0]),
            unit("aa", &[[750.0, 700.0], [1200.0, 1150.0], [2500.0, 2500.0]], [100.0, 160.0]),
            unit("n", &[[300.0, 300.0], [1200.0, 1400.0], [2500.0, 2600.0]], [60.0, 100.0]),
            unit("ah", &[[650.0, 600.0], [1100.0, 1150.0], [2600.0, 2600.0]], [80.0, 140.0]),
            unit("iy", &[[280.0, 300.0], [2300.0, 2250.0], [3000.0, 3000.0]], [90.0, 150.0]),
            unit("uw", &[[320.0, 300.0], [850.0, 800.0], [2300.0, 2300.0]], [90.0, 150.0]),
            unit("eh", &[[580.0, 550.0], [1800.0, 1750.0], [2500.0, 2500.0]], [90.0, 150.0]),
            unit("ae", &[[700.0, 680.0], [1700.0, 1650.0], [2400.0, 2400.0]], [90.0, 150.0]),
            unit("ow", &[[500.0, 400.0], [900.0, 750.0], [2400.0, 2300.0]], [100.0, 160.0]),
            unit("s", &[[2600.0, 2600.0], [4200.0, 4400.0], [5500.0, 5500.0]], [60.0, 120.0]),
            unit("m", &[[280.0, 280.0], [1000.0, 1000.0], [2200.0, 2200.0]], [60.0, 100.0]),
            unit("l", &[[380.0, 400.0], [1000.0, 1300.0], [2600.0, 2600.0]], [60.0, 100.0]),
            unit("er", &[[480.0, 480.0], [1350.0, 1300.0], [1700.0, 1700.0]], [90.0, 150.0]),
            unit("ay", &[[750.0, 350.0], [1200.0, 2200.0], [2500.0, 2800.0]], [130.0, 200.0]),
        ];
        let keyword = vec![word("hey", &[0, 1]), word("cortana", &[2, 3, 4, 5, 6, 7])];
        let fillers = vec![
            word("hay", &[0, 10]),
            word("okay", &[12, 2, 1]),
            word("day", &[4, 1]),
            word("corn", &[2, 3, 6]),
            word("banana", &[14, 5, 6, 7]),
            word("tuna", &[4, 9, 6, 7]),
            word("core", &[2, 3]),
            word("sauna", &[13, 12, 6, 7]),
            word("see", &[13, 8]),
            word("may", &[14, 1]),
            word("low", &[15, 12]),
            word("earl", &[16, 15]),
            word("mile", &[14, 17, 15]),
            word("sun", &[13, 7, 6]),
            word("lemon", &[15, 10, 14, 7, 6]),
            word("new", &[6, 9]),
            word("cat", &[2, 11, 4]),
            word("hi", &[0, 17]),
            word("salsa", &[13, 5, 15, 13, 7]),
            word("meal", &[14, 8, 15]),
        ];
        Self {
            units,
            keyword,
            fillers,
            labels: LabelScheme::Keyword,
            positive_ratio: 0.5,
            confusable_rate: 0.5,
            length_s: [1.5, 3.5],
            f0_hz: [90.0, 230.0],
            formant_scale: [0.88, 1.12],
            rate_scale: [0.8, 1.25],
            floor_noise: default_floor_noise(),
            seed,
        }
    }

    /// Phone-labelled task: a lexicon of short words over ten units.
    pub fn phone_task(seed: u64) -> Self {
        let base = Self::keyword_task(seed);
        let pick = [1usize, 3, 5, 6, 8, 9, 10, 13, 14, 16];
        let units: Vec<UnitTemplate> = pick.iter().map(|&i| base.units[i].clone()).collect();
        let mut rng = crate::seeding::rng(seed ^ 0x5eed_1e81);
        let fillers = (0..30)
            .map(|w| {
                let len = rng.gen_range(2..=4);
                let u: Vec<usize> = (0..len).map(|_| rng.gen_range(0..units.len())).collect();
                word(&format!("w{w}"), &u)
            })
            .collect();
        Self {
            units,
            keyword: Vec::new(),
            fillers,
            labels: LabelScheme::Phone,
            positive_ratio: 0.0,
            confusable_rate: 0.0,
            length_s: [1.2, 2.2],
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.units.is_empty() || self.fillers.is_empty() {
            return bad("synthetic task needs units and filler words".into());
        }
        for w in self.keyword.iter().chain(&self.fillers) {
            if w.units.is_empty() || w.units.iter().any(|&u| u >= self.units.len()) {
                return bad(format!("word `{}` references a missing unit", w.name));
            }
        }
        for u in &self.units {
            if u.formants.is_empty() || u.duration_ms[0] <= 0.0 || u.duration_ms[1] < u.duration_ms[0] {
                return bad(format!("unit `{}` has an empty formant list or bad duration", u.name));
            }
        }
        if !(0.0..=1.0).contains(&self.positive_ratio) || !(0.0..=1.0).contains(&self.confusable_rate) {
            return bad("ratios must lie in [0, 1]".into());
        }
        if self.positive_ratio > 0.0 && self.keyword.is_empty() {
            return bad("positive utterances need a keyword".into());
        }
        let ranges = [self.length_s, self.f0_hz, self.formant_scale, self.rate_scale];
        if ranges.iter().any(|r| !(r[0] > 0.0 && r[1] >= r[0])) {
            return bad("ranges must be positive and ordered".into());
        }
        if self.labels == LabelScheme::Keyword && self.keyword.len() != 2 {
            return bad("the five-output keyword alphabet holds exactly two keyword words".into());
        }
        Ok(())
    }

    /// Output classes of the label scheme.
    pub fn num_classes(&self) -> usize {
        match self.labels {
            LabelScheme::Keyword => 3 + self.keyword.len(),
            LabelScheme::Phone => self.units.len() + 1,
        }
    }
}

/// Labelled stretch of samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    /// Acoustic unit, `None` for silence.
    pub unit: Option<usize>,
    /// Keyword-alphabet token of the enclosing word (or silence).
    pub token: usize,
}

#[derive(Clone, Debug)]
pub struct SynthUtterance {
    pub id: String,
    pub waveform: Waveform,
    pub positive: bool,
    pub spans: Vec<Span>,
    /// Word and silence tokens (keyword scheme) or the unit string (phone).
    pub transcript: Vec<usize>,
}

impl SynthUtterance {
    /// Class of the sample at the centre of each analysis window.
    pub fn frame_labels(&self, scheme: LabelScheme, window: usize, hop: usize, frames: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(frames);
        let mut j = 0;
        for t in 0..frames {
            let c = t * hop + window / 2;
            while j + 1 < self.spans.len() && self.spans[j].end <= c {
                j += 1;
            }
            let s = &self.spans[j];
            out.push(match scheme {
                LabelScheme::Keyword => s.token,
                LabelScheme::Phone => s.unit.map_or(0, |u| u + 1),
            });
        }
        out
    }
}

struct Speaker {
    f0: f64,
    scale: f64,
    rate: f64,
}

#[derive(Clone, Copy)]
enum Slot {
    Keyword(usize),
    Filler(usize),
}

/// Keyword-related word groups for one utterance. Words inside a group are
/// spoken without a pause.
fn plan_core(spec: &SynthTaskSpec, positive: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<Slot>> {
    let k = spec.keyword.len();
    let mut core: Vec<Vec<Slot>> = Vec::new();
    if positive {
        core.push((0..k).map(Slot::Keyword).collect());
    } else if k > 0 && rng.gen_bool(spec.confusable_rate) {
        let f = spec.fillers.len();
        match rng.gen_range(0..4) {
            0 => core.push(vec![Slot::Keyword(0), Slot::Filler(rng.gen_range(0..f))]),
            1 => core.push(vec![Slot::Keyword(k - 1)]),
            2 => core.push((0..k).rev().map(Slot::Keyword).collect()),
            _ => {
                core.push(vec![Slot::Keyword(0)]);
                core.push(vec![Slot::Filler(rng.gen_range(0..f))]);
                core.push(vec![Slot::Keyword(k - 1)]);
            }
        }
    }
    core
}

fn render_unit(t: &UnitTemplate, spk: &Speaker, len: usize, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    const BLOCK: usize = 80;
    let sr = SAMPLE_RATE as f64;
    let nyq = 7600.0;
    let bw = t.bandwidth_hz * spk.scale;
    let f0_start = spk.f0 * rng.gen_range(1.0..1.06);
    let f0_end = spk.f0 * rng.gen_range(0.94..1.0);
    let formant = |f: usize, x: f64| spk.scale * (t.formants[f][0] + x * (t.formants[f][1] - t.formants[f][0]));
    let gain = |f: usize| 1.0 / (1.0 + f as f64);
    let max_h = (nyq / f0_end.min(f0_start)) as usize;
    // Only harmonics that come near some formant somewhere in the unit.
    let active: Vec<usize> = (1..=max_h)
        .filter(|&h| {
            [0.0, 0.5, 1.0].iter().any(|&x| {
                let f0 = f0_start + x * (f0_end - f0_start);
                (0..t.formants.len()).any(|f| (h as f64 * f0 - formant(f, x)).abs() < 3.0 * bw)
            })
        })
        .collect();
    for &h in &active {
        let mut phase = rng.gen_range(0.0..2.0 * PI);
        let mut b = 0;
        while b < len {
            let x = b as f64 / len as f64;
            let fh = h as f64 * (f0_start + x * (f0_end - f0_start));
            if fh >= nyq {
                break;
            }
            let amp: f64 = (0..t.formants.len())
                .map(|f| gain(f) * (-0.5 * ((fh - formant(f, x)) / bw).powi(2)).exp())
                .sum();
            let step = 2.0 * PI * fh / sr;
            let end = (b + BLOCK).min(len);
            if amp > 1e-4 {
                for (n, o) in out[b..end].iter_mut().enumerate() {
                    *o += amp * (phase + step * n as f64).sin();
                }
            }
            phase = (phase + step * (end - b) as f64) % (2.0 * PI);
            b = end;
        }
    }
    let ramp = (0.015 * sr) as usize;
    for n in 0..len {
        let edge = n.min(len - 1 - n);
        if edge < ramp {
            out[n] *= 0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos();
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Sample buffer plus the labels written so far.
struct Builder {
    samples: Vec<f64>,
    spans: Vec<Span>,
    words: Vec<usize>,
}

impl Builder {
    fn silence(&mut self, len: usize) {
        if len == 0 {
            return;
        }
        let start = self.samples.len();
        self.samples.resize(start + len, 0.0);
        self.spans.push(Span {
            start,
            end: start + len,
            unit: None,
            token: kws_tokens::SILENCE,
        });
        self.words.push(kws_tokens::SILENCE);
    }
}

/// Generates utterance `id`. The result depends only on `(spec, id,
/// positive)`.
pub fn synth_utterance(spec: &SynthTaskSpec, id: &str, positive: bool) -> Result<SynthUtterance> {
    let mut rng = utterance_rng(spec.seed, id);
    let spk = Speaker {
        f0: rng.gen_range(spec.f0_hz[0]..=spec.f0_hz[1]),
        scale: rng.gen_range(spec.formant_scale[0]..=spec.formant_scale[1]),
        rate: rng.gen_range(spec.rate_scale[0]..=spec.rate_scale[1]),
    };
    let sr = SAMPLE_RATE as f64;
    let target = (rng.gen_range(spec.length_s[0]..=spec.length_s[1]) * sr) as usize;
    let ms = |v: f64| (v * 1e-3 * sr) as usize;
    let slot_word = |s: Slot| match s {
        Slot::Keyword(k) => &spec.keyword[k],
        Slot::Filler(f) => &spec.fillers[f],
    };
    // Expected group length including the pause that precedes it.
    let est = |g: &[Slot]| {
        let units: f64 = g
            .iter()
            .flat_map(|&s| slot_word(s).units.iter())
            .map(|&u| 0.5 * (spec.units[u].duration_ms[0] + spec.units[u].duration_ms[1]))
            .sum();
        ms(units * spk.rate + 160.0)
    };

    let core = plan_core(spec, positive, &mut rng);
    let mut used = ms(400.0) + core.iter().map(|g| est(g)).sum::<usize>();
    let mut groups: Vec<Vec<Slot>> = Vec::new();
    loop {
        let g = vec![Slot::Filler(rng.gen_range(0..spec.fillers.len()))];
        let e = est(&g);
        if used + e > target {
            break;
        }
        used += e;
        groups.push(g);
    }
    let at = rng.gen_range(0..=groups.len());
    let tail = groups.split_off(at);
    groups.extend(core);
    groups.extend(tail);

    let mut b = Builder {
        samples: Vec::with_capacity(target + ms(500.0)),
        spans: Vec::new(),
        words: Vec::new(),
    };
    b.silence(ms(rng.gen_range(100.0..300.0)));
    for (gi, group) in groups.iter().enumerate() {
        if gi > 0 {
            b.silence(ms(rng.gen_range(60.0..260.0)));
        }
        for &slot in group {
            let token = match slot {
                Slot::Keyword(k) => kws_tokens::keyword(k),
                Slot::Filler(_) => kws_tokens::GARBAGE,
            };
            b.words.push(token);
            let level = 10f64.powf(rng.gen_range(-0.15..0.15));
            for &u in &slot_word(slot).units {
                let tpl = &spec.units[u];
                let len = ms(rng.gen_range(tpl.duration_ms[0]..=tpl.duration_ms[1]) * spk.rate).max(1);
                let start = b.samples.len();
                b.samples.resize(start + len, 0.0);
                render_unit(tpl, &spk, len, &mut rng, &mut b.samples[start..]);
                let g = level * 10f64.powf(rng.gen_range(-0.1..0.1));
                b.samples[start..].iter_mut().for_each(|v| *v *= g);
                b.spans.push(Span {
                    start,
                    end: start + len,
                    unit: Some(u),
                    token,
                });
            }
        }
    }
    let pad = target.saturating_sub(b.samples.len()).max(ms(100.0));
    b.silence(pad + ms(rng.gen_range(0.0..150.0)));

    // Speech to a random level, then a faint noise floor everywhere.
    let (mut e, mut n) = (0.0, 0);
    for s in b.spans.iter().filter(|s| s.unit.is_some()) {
        e += b.samples[s.start..s.end].iter().map(|v| v * v).sum::<f64>();
        n += s.end - s.start;
    }
    let speech_rms = if n == 0 { 1.0 } else { (e / n as f64).sqrt().max(1e-9) };
    let target_rms = rng.gen_range(0.05..0.2);
    let level = target_rms / speech_rms;
    let floor = spec.floor_noise * target_rms * rng.gen_range(0.5..1.5);
    for v in b.samples.iter_mut() {
        *v = *v * level + floor * gauss(&mut rng);
    }

    let transcript = match spec.labels {
        LabelScheme::Keyword => b.words,
        LabelScheme::Phone => b.spans.iter().filter_map(|s| s.unit.map(|u| u + 1)).collect(),
    };
    Ok(SynthUtterance {
        id: id.to_string(),
        waveform: Waveform::new(b.samples, SAMPLE_RATE)?,
        positive,
        spans: b.spans,
        transcript,
    })
}

/// Utterance ids and positivity flags for a corpus of `count` items.
pub fn corpus_plan(spec: &SynthTaskSpec, prefix: &str, count: usize) -> Vec<(String, bool)> {
    let positives = (spec.positive_ratio * count as f64).round() as usize;
    // Interleave so any prefix has roughly the requested ratio.
    let mut flags = vec![false; count];
    for i in 0..positives {
        flags[(i * count) / positives.max(1)] = true;
    }
    flags
        .into_iter()
        .enumerate()
        .map(|(i, p)| (format!("{prefix}{i:06}"), p))
        .collect()
}

pub fn synth_many(spec: &SynthTaskSpec, prefix: &str, count: usize) -> Result<Vec<SynthUtterance>> {
    use rayon::prelude::*;
    spec.validate()?;
    corpus_plan(spec, prefix, count)
        .par_iter()
        .map(|(id, p)| synth_utterance(spec, id, *p))
        .collect()
}
