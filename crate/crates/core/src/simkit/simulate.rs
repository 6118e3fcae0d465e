use rand::Rng;

use super::rir::{direct_delay, generate_rir, late_field_ir, RoomSpec};
use super::signal::{convolve_slices, loop_noise, mix_components};
use super::{ImpulseResponse, NoiseKind, NoiseSource, Result, SimError, Waveform};

/// Simulated far-field utterance.
#[derive(Clone, Debug)]
pub struct Simulation {
    /// Far-field signal, same length as the close-talk input.
    pub waveform: Waveform,
    /// Aggregate noise gain applied to reach the requested SNR.
    pub noise_gain: f64,
    /// Direct-path delay removed from the reverberant speech.
    pub delay: usize,
    /// Output samples beyond full scale (left untouched).
    pub clipped: usize,
}

/// Reverberant speech cut to `|s|` samples after removing the direct-path
/// delay, so it stays frame-synchronous with `s`.
fn reverberate(s: &Waveform, ir: &ImpulseResponse) -> Result<(Waveform, usize)> {
    if s.sample_rate() != ir.sample_rate() {
        return Err(SimError::SampleRateMismatch(s.sample_rate(), ir.sample_rate()));
    }
    let delay = direct_delay(ir);
    let full = convolve_slices(s.samples(), ir.taps());
    let out = if s.is_empty() {
        Vec::new()
    } else {
        full[delay..delay + s.len()].to_vec()
    };
    Ok((Waveform::new(out, s.sample_rate())?, delay))
}

/// One noise term `N * R`, looped from a random offset and cut to `len`.
fn noise_term(
    noise: &Waveform,
    ir: Option<&ImpulseResponse>,
    len: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let offset = if noise.is_empty() { 0 } else { rng.gen_range(0..noise.len()) };
    let looped = loop_noise(noise.samples(), len, offset);
    match ir {
        Some(ir) => {
            let mut full = convolve_slices(&looped, ir.taps());
            full.truncate(len);
            full
        }
        None => looped,
    }
}

fn finish(reverberant: Waveform, noise: Option<Vec<f64>>, snr_db: f64, delay: usize) -> Result<Simulation> {
    let (waveform, noise_gain) = match noise {
        Some(n) if snr_db != f64::INFINITY => {
            let m = mix_components(&reverberant, &n, snr_db)?;
            (m.mixed, m.noise_gain)
        }
        _ => (reverberant, 0.0),
    };
    let clipped = waveform.clipped_samples();
    Ok(Simulation {
        waveform,
        noise_gain,
        delay,
        clipped,
    })
}

/// `Y = S * R_s + N` with the noise scaled to `snr_db` against the
/// reverberant speech.
pub fn simulate_single_channel_ir(
    s: &Waveform,
    ir: &ImpulseResponse,
    noise: Option<&Waveform>,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<Simulation> {
    let (reverberant, delay) = reverberate(s, ir)?;
    let term = match noise {
        Some(n) => {
            if n.sample_rate() != s.sample_rate() {
                return Err(SimError::SampleRateMismatch(s.sample_rate(), n.sample_rate()));
            }
            Some(noise_term(n, None, s.len(), rng))
        }
        None => None,
    };
    finish(reverberant, term, snr_db, delay)
}

/// [`simulate_single_channel_ir`] with an image-method RIR for `room`.
pub fn simulate_single_channel(
    s: &Waveform,
    room: &RoomSpec,
    noise: Option<&Waveform>,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<Simulation> {
    let ir = generate_rir(room)?;
    simulate_single_channel_ir(s, &ir, noise, snr_db, rng)
}

/// `Y = S * R_s + g (sum_f N_f * R_f + sum_r N_r * R_r)` where the aggregate
/// gain `g` sets the speech-to-total-noise ratio to `snr_db`. Per-source
/// gains apply before aggregation. Offsets are drawn diffuse sources first,
/// then directional, in list order.
pub fn simulate_beamformed(
    s: &Waveform,
    speech_ir: &ImpulseResponse,
    diffuse: &[NoiseSource],
    directional: &[NoiseSource],
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<Simulation> {
    let (reverberant, delay) = reverberate(s, speech_ir)?;
    if diffuse.is_empty() && directional.is_empty() {
        return finish(reverberant, None, snr_db, delay);
    }
    let mut total = vec![0.0; s.len()];
    for (expected, list) in [(NoiseKind::Diffuse, diffuse), (NoiseKind::Directional, directional)] {
        for src in list {
            src.validate()?;
            if src.kind != expected {
                return Err(SimError::InvalidParameter(format!(
                    "{:?} source passed in the {:?} list",
                    src.kind, expected
                )));
            }
            if src.waveform.sample_rate() != s.sample_rate() {
                return Err(SimError::SampleRateMismatch(
                    s.sample_rate(),
                    src.waveform.sample_rate(),
                ));
            }
            let term = noise_term(&src.waveform, src.ir.as_ref(), s.len(), rng);
            for (t, v) in total.iter_mut().zip(term) {
                *t += src.gain * v;
            }
        }
    }
    finish(reverberant, Some(total), snr_db, delay)
}

/// Room-driven variant: the speech RIR comes from `room`, and diffuse sources
/// without an IR use the late-field part of that RIR.
pub fn simulate_beamformed_room(
    s: &Waveform,
    room: &RoomSpec,
    diffuse: &[NoiseSource],
    directional: &[NoiseSource],
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<Simulation> {
    let ir = generate_rir(room)?;
    let late = late_field_ir(&ir);
    let filled: Vec<NoiseSource> = diffuse
        .iter()
        .map(|d| {
            let mut d = d.clone();
            if d.ir.is_none() {
                d.ir = Some(late.clone());
            }
            d
        })
        .collect();
    simulate_beamformed(s, &ir, &filled, directional, snr_db, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkit::{convolve, mix_at_snr_offset, Interpolation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_wave(rng: &mut ChaCha8Rng, len: usize) -> Waveform {
        Waveform::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000).unwrap()
    }

    fn random_ir(rng: &mut ChaCha8Rng, len: usize) -> ImpulseResponse {
        let mut taps: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.2..0.2)).collect();
        taps[2] = 1.0;
        ImpulseResponse::new(taps, 16_000).unwrap()
    }

    #[test]
    fn identity_room_without_noise_is_transparent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_wave(&mut rng, 300);
        let out = simulate_single_channel_ir(
            &s,
            &ImpulseResponse::delta(0, 16_000),
            None,
            10.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.waveform, s);
        assert_eq!(out.delay, 0);
    }

    #[test]
    fn silent_speech_leaves_scaled_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Waveform::zeros(200, 16_000);
        let n = random_wave(&mut rng, 50);
        let ir = random_ir(&mut rng, 9);
        let out = simulate_single_channel_ir(&s, &ir, Some(&n), 5.0, &mut rng).unwrap();
        // Zero speech power gives zero noise gain, so Y = 0 * N.
        assert_eq!(out.noise_gain, 0.0);
        assert!(out.waveform.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_equals_manual_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_wave(&mut rng, 500);
        let n = random_wave(&mut rng, 130);
        let ir = random_ir(&mut rng, 40);
        let seed = 77;
        let out = simulate_single_channel_ir(
            &s,
            &ir,
            Some(&n),
            7.5,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();

        let full = convolve(&s, &ir).unwrap();
        let delay = 2; // largest tap
        let rev = Waveform::new(full.samples()[delay..delay + s.len()].to_vec(), 16_000).unwrap();
        let offset = ChaCha8Rng::seed_from_u64(seed).gen_range(0..n.len());
        let manual = mix_at_snr_offset(&rev, &n, 7.5, offset).unwrap();
        assert_eq!(out.waveform, manual.mixed);
        assert_eq!(out.delay, delay);
    }

    #[test]
    fn beamformed_without_noise_is_reverberation_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_wave(&mut rng, 256);
        let ir = random_ir(&mut rng, 30);
        let out = simulate_beamformed(&s, &ir, &[], &[], 0.0, &mut rng).unwrap();
        let full = convolve(&s, &ir).unwrap();
        assert_eq!(out.waveform.samples(), &full.samples()[2..2 + s.len()]);
    }

    #[test]
    fn one_directional_identity_source_reduces_to_single_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_wave(&mut rng, 400);
        let n = random_wave(&mut rng, 97);
        let ir = random_ir(&mut rng, 25);
        let src = NoiseSource::directional(n.clone(), ImpulseResponse::delta(0, 16_000));
        let a = simulate_beamformed(&s, &ir, &[], &[src], 3.0, &mut ChaCha8Rng::seed_from_u64(8))
            .unwrap();
        let b = simulate_single_channel_ir(&s, &ir, Some(&n), 3.0, &mut ChaCha8Rng::seed_from_u64(8))
            .unwrap();
        assert_eq!(a.waveform, b.waveform);
    }

    #[test]
    fn multi_source_equals_term_by_term_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_wave(&mut rng, 600);
        let speech_ir = random_ir(&mut rng, 50);
        let noises: Vec<Waveform> = (0..3).map(|_| random_wave(&mut rng, 211)).collect();
        let irs: Vec<ImpulseResponse> = (0..3).map(|_| random_ir(&mut rng, 33)).collect();
        let gains = [1.0, 0.5, 2.0];
        let diffuse = vec![
            NoiseSource::diffuse(noises[0].clone(), Some(irs[0].clone())).with_gain(gains[0]),
            NoiseSource::diffuse(noises[1].clone(), Some(irs[1].clone())).with_gain(gains[1]),
        ];
        let directional =
            vec![NoiseSource::directional(noises[2].clone(), irs[2].clone()).with_gain(gains[2])];
        let snr = 4.0;
        let out = simulate_beamformed(
            &s,
            &speech_ir,
            &diffuse,
            &directional,
            snr,
            &mut ChaCha8Rng::seed_from_u64(11),
        )
        .unwrap();

        // Oracle: each term convolved explicitly, summed, scaled by RMS ratio.
        let mut offsets = ChaCha8Rng::seed_from_u64(11);
        let mut total = vec![0.0; s.len()];
        for i in 0..3 {
            let off = offsets.gen_range(0..noises[i].len());
            let looped: Vec<f64> =
                (0..s.len()).map(|k| noises[i].samples()[(off + k) % noises[i].len()]).collect();
            let conv = convolve(&Waveform::new(looped, 16_000).unwrap(), &irs[i]).unwrap();
            for k in 0..s.len() {
                total[k] += gains[i] * conv.samples()[k];
            }
        }
        let full = convolve(&s, &speech_ir).unwrap();
        let rev = &full.samples()[2..2 + s.len()];
        let ps: f64 = rev.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        let pn: f64 = total.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        let g = (ps / pn / 10f64.powf(snr / 10.0)).sqrt();
        for k in 0..s.len() {
            let want = rev[k] + g * total[k];
            assert!((out.waveform.samples()[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn directional_source_requires_ir() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_wave(&mut rng, 64);
        let mut src = NoiseSource::diffuse(random_wave(&mut rng, 10), None);
        src.kind = NoiseKind::Directional;
        let err = simulate_beamformed(
            &s,
            &ImpulseResponse::delta(0, 16_000),
            &[],
            &[src],
            0.0,
            &mut rng,
        );
        assert!(matches!(err, Err(SimError::InvalidParameter(_))));
    }

    #[test]
    fn room_simulation_is_frame_synchronous() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut samples = vec![0.0; 1600];
        samples[400] = 1.0;
        let s = Waveform::new(samples, 16_000).unwrap();
        let room = RoomSpec::new([5.0, 4.0, 3.0], [1.0, 1.0, 1.0], [3.0, 2.0, 1.5])
            .with_interpolation(Interpolation::Nearest)
            .with_reflection(0.6)
            .with_max_order(4);
        let out = simulate_single_channel(&s, &room, None, f64::INFINITY, &mut rng).unwrap();
        assert_eq!(out.waveform.len(), s.len());
        assert_eq!(out.delay, 107);
        assert_eq!(direct_delay(&ImpulseResponse::new(out.waveform.samples().to_vec(), 16_000).unwrap()), 400);
    }
}
