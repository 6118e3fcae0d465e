use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ImpulseResponse, Result, SimError};

/// Taps on each side of the fractional-delay kernel centre (81 taps total).
pub const SINC_HALF_WIDTH: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// 81-tap Hann-windowed sinc.
    #[default]
    Sinc,
    /// Round every image delay to the nearest sample.
    Nearest,
}

/// Shoebox room with one source and one microphone.
///
/// `wall_reflection` holds pressure reflection coefficients ordered
/// `[x=0, x=Lx, y=0, y=Ly, z=0, z=Lz]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dimensions: [f64; 3],
    pub source: [f64; 3],
    pub mic: [f64; 3],
    pub wall_reflection: [f64; 6],
    pub max_order: u32,
    pub speed_of_sound: f64,
    pub ir_length: usize,
    pub sample_rate: u32,
    pub interpolation: Interpolation,
}

impl RoomSpec {
    pub fn new(dimensions: [f64; 3], source: [f64; 3], mic: [f64; 3]) -> Self {
        Self {
            dimensions,
            source,
            mic,
            wall_reflection: [0.0; 6],
            max_order: 0,
            speed_of_sound: 343.0,
            ir_length: 4096,
            sample_rate: 16_000,
            interpolation: Interpolation::Sinc,
        }
    }

    pub fn with_reflection(mut self, beta: f64) -> Self {
        self.wall_reflection = [beta; 6];
        self
    }

    pub fn with_max_order(mut self, order: u32) -> Self {
        self.max_order = order;
        self
    }

    pub fn with_ir_length(mut self, len: usize) -> Self {
        self.ir_length = len;
        self
    }

    pub fn with_interpolation(mut self, interp: Interpolation) -> Self {
        self.interpolation = interp;
        self
    }

    pub fn source_mic_distance(&self) -> f64 {
        distance(&self.source, &self.mic)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
            return Err(SimError::Geometry(format!(
                "room dimensions must be positive, got {:?}",
                self.dimensions
            )));
        }
        for (name, p) in [("source", &self.source), ("mic", &self.mic)] {
            for axis in 0..3 {
                let v = p[axis];
                if !(v > 0.0 && v < self.dimensions[axis]) {
                    return Err(SimError::Geometry(format!(
                        "{name} position {p:?} is not strictly inside room {:?}",
                        self.dimensions
                    )));
                }
            }
        }
        if self.wall_reflection.iter().any(|&b| !(0.0..=1.0).contains(&b)) {
            return Err(SimError::InvalidParameter(format!(
                "wall reflection coefficients must lie in [0, 1], got {:?}",
                self.wall_reflection
            )));
        }
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            return Err(SimError::InvalidParameter("speed of sound must be positive".into()));
        }
        if self.ir_length == 0 || self.sample_rate == 0 {
            return Err(SimError::InvalidParameter(
                "ir_length and sample_rate must be positive".into(),
            ));
        }
        if self.source_mic_distance() < 1e-9 {
            return Err(SimError::ZeroDistance);
        }
        Ok(())
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Adds one image contribution at fractional delay `delay` (samples).
fn deposit(taps: &mut [f64], delay: f64, amp: f64, interp: Interpolation) {
    let len = taps.len() as isize;
    match interp {
        Interpolation::Nearest => {
            let k = delay.round() as isize;
            if (0..len).contains(&k) {
                taps[k as usize] += amp;
            }
        }
        Interpolation::Sinc => {
            let centre = delay.round() as isize;
            let hw = SINC_HALF_WIDTH as isize;
            let window = (SINC_HALF_WIDTH + 1) as f64;
            for k in (centre - hw).max(0)..=(centre + hw).min(len - 1) {
                let x = k as f64 - delay;
                let w = 0.5 * (1.0 + (PI * x / window).cos());
                taps[k as usize] += amp * w * sinc(x);
            }
        }
    }
}

/// Image-method room impulse response.
///
/// Every image source with total reflection order `<= max_order` contributes
/// `prod(beta^reflections) / (4 pi d)` at delay `d / c * fs`.
pub fn generate_rir(room: &RoomSpec) -> Result<ImpulseResponse> {
    room.validate()?;
    let fs = room.sample_rate as f64;
    let c = room.speed_of_sound;
    let order = room.max_order as i64;
    let [lx, ly, lz] = room.dimensions;
    let beta = room.wall_reflection;
    let mut taps = vec![0.0; room.ir_length];
    let reach = SINC_HALF_WIDTH as f64;

    // |n - q| + |n| <= order implies |n| <= (order + 1) / 2.
    let nmax = (order + 1) / 2;
    for nx in -nmax..=nmax {
        for qx in 0..=1i64 {
            let rx = (nx - qx).abs() + nx.abs();
            if rx > order {
                continue;
            }
            let ix = (1 - 2 * qx) as f64 * room.source[0] + 2.0 * nx as f64 * lx - room.mic[0];
            let gx = beta[0].powi((nx - qx).abs() as i32) * beta[1].powi(nx.abs() as i32);
            for ny in -nmax..=nmax {
                for qy in 0..=1i64 {
                    let ry = (ny - qy).abs() + ny.abs();
                    if rx + ry > order {
                        continue;
                    }
                    let iy =
                        (1 - 2 * qy) as f64 * room.source[1] + 2.0 * ny as f64 * ly - room.mic[1];
                    let gy = beta[2].powi((ny - qy).abs() as i32) * beta[3].powi(ny.abs() as i32);
                    for nz in -nmax..=nmax {
                        for qz in 0..=1i64 {
                            let rz = (nz - qz).abs() + nz.abs();
                            if rx + ry + rz > order {
                                continue;
                            }
                            let gain = gx
                                * gy
                                * beta[4].powi((nz - qz).abs() as i32)
                                * beta[5].powi(nz.abs() as i32);
                            if gain == 0.0 {
                                continue;
                            }
                            let iz = (1 - 2 * qz) as f64 * room.source[2] + 2.0 * nz as f64 * lz
                                - room.mic[2];
                            let d = (ix * ix + iy * iy + iz * iz).sqrt();
                            let delay = d / c * fs;
                            if delay - reach >= room.ir_length as f64 {
                                continue;
                            }
                            deposit(&mut taps, delay, gain / (4.0 * PI * d), room.interpolation);
                        }
                    }
                }
            }
        }
    }
    ImpulseResponse::new(taps, room.sample_rate)
}

/// Index of the largest-magnitude tap (first one on ties); used as the
/// direct-path delay when aligning simulated output to its source.
pub fn direct_delay(ir: &ImpulseResponse) -> usize {
    let mut best = 0;
    let mut best_mag = f64::NEG_INFINITY;
    for (i, v) in ir.taps().iter().enumerate() {
        if v.abs() > best_mag {
            best_mag = v.abs();
            best = i;
        }
    }
    best
}

/// Late reverberant field of `ir`: the direct-path kernel region is zeroed
/// and the remainder normalized to unit energy. Used as the propagation filter
/// of diffuse noise. Falls back to identity when nothing remains.
pub fn late_field_ir(ir: &ImpulseResponse) -> ImpulseResponse {
    let d = direct_delay(ir);
    let mut taps = ir.taps().to_vec();
    let lo = d.saturating_sub(SINC_HALF_WIDTH);
    let hi = (d + SINC_HALF_WIDTH + 1).min(taps.len());
    taps[lo..hi].iter_mut().for_each(|v| *v = 0.0);
    let energy: f64 = taps.iter().map(|v| v * v).sum();
    if energy <= 0.0 {
        return ImpulseResponse::delta(0, ir.sample_rate());
    }
    let scale = energy.sqrt().recip();
    taps.iter_mut().for_each(|v| *v *= scale);
    ImpulseResponse {
        taps,
        sample_rate: ir.sample_rate(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anechoic() -> RoomSpec {
        RoomSpec::new([5.0, 4.0, 3.0], [1.0, 1.0, 1.0], [3.0, 2.0, 1.5])
    }

    #[test]
    fn anechoic_direct_path_is_closed_form() {
        let room = anechoic().with_interpolation(Interpolation::Nearest);
        let ir = generate_rir(&room).unwrap();
        let d = 5.25f64.sqrt();
        let delay = (d / 343.0 * 16_000.0).round() as usize;
        assert_eq!(delay, 107);
        let nonzero: Vec<usize> = (0..ir.len()).filter(|&i| ir.taps()[i] != 0.0).collect();
        assert_eq!(nonzero, vec![delay]);
        let want = 1.0 / (4.0 * PI * d);
        assert!((ir.taps()[delay] / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sinc_kernel_stays_in_one_region() {
        let room = anechoic().with_max_order(3);
        let ir = generate_rir(&room).unwrap();
        let exact = room.source_mic_distance() / 343.0 * 16_000.0;
        let centre = exact.round() as usize;
        assert_eq!(direct_delay(&ir), centre);
        for (i, v) in ir.taps().iter().enumerate() {
            if i + SINC_HALF_WIDTH < centre || i > centre + SINC_HALF_WIDTH {
                assert_eq!(*v, 0.0, "tap {i} outside the direct-path kernel");
            }
        }
        // DC gain of the windowed-sinc kernel stays close to the image amplitude.
        let sum: f64 = ir.taps().iter().sum();
        let want = 1.0 / (4.0 * PI * room.source_mic_distance());
        assert!((sum / want - 1.0).abs() < 1e-2);
    }

    #[test]
    fn coincident_source_and_mic_is_rejected() {
        let room = RoomSpec::new([5.0, 4.0, 3.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]);
        assert!(matches!(generate_rir(&room), Err(SimError::ZeroDistance)));
    }

    #[test]
    fn positions_outside_room_are_rejected() {
        let room = RoomSpec::new([5.0, 4.0, 3.0], [6.0, 1.0, 1.0], [1.0, 2.0, 1.0]);
        assert!(matches!(generate_rir(&room), Err(SimError::Geometry(_))));
        let wall = RoomSpec::new([5.0, 4.0, 3.0], [0.0, 1.0, 1.0], [1.0, 2.0, 1.0]);
        assert!(matches!(generate_rir(&wall), Err(SimError::Geometry(_))));
    }

    #[test]
    fn reflection_out_of_range_is_rejected() {
        let room = anechoic().with_reflection(1.2);
        assert!(matches!(generate_rir(&room), Err(SimError::InvalidParameter(_))));
    }

    /// RT60 from the Schroeder backward integral, extrapolated from the
    /// -5..-25 dB decay range.
    fn schroeder_rt60(taps: &[f64], fs: f64) -> f64 {
        let mut edc: Vec<f64> = taps.iter().map(|v| v * v).collect();
        for i in (0..edc.len() - 1).rev() {
            edc[i] += edc[i + 1];
        }
        let total = edc[0];
        let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
        let t5 = db.iter().position(|&v| v <= -5.0).unwrap() as f64 / fs;
        let t25 = db.iter().position(|&v| v <= -25.0).unwrap() as f64 / fs;
        3.0 * (t25 - t5)
    }

    #[test]
    fn reverberation_time_agrees_with_eyring() {
        let beta = 0.9;
        let room = RoomSpec::new([5.0, 4.0, 3.0], [1.3, 1.1, 1.2], [3.4, 2.6, 1.6])
            .with_reflection(beta)
            .with_max_order(40)
            .with_ir_length(16_000);
        let ir = generate_rir(&room).unwrap();
        let measured = schroeder_rt60(ir.taps(), 16_000.0);
        let volume = 5.0 * 4.0 * 3.0;
        let surface = 2.0 * (5.0 * 4.0 + 5.0 * 3.0 + 4.0 * 3.0);
        let absorption: f64 = 1.0 - beta * beta;
        let eyring = 0.161 * volume / (-surface * (1.0 - absorption).ln());
        let rel = (measured - eyring).abs() / eyring;
        assert!(rel < 0.25, "schroeder {measured:.3}s vs eyring {eyring:.3}s");
    }

    #[test]
    fn energy_does_not_grow_with_absorption() {
        let mut last = f64::INFINITY;
        for beta in [0.9, 0.6, 0.3, 0.0] {
            let room = anechoic().with_reflection(beta).with_max_order(8);
            let e = generate_rir(&room).unwrap().energy();
            assert!(e <= last, "energy rose at reflection {beta}");
            last = e;
        }
    }

    #[test]
    fn late_field_has_unit_energy_and_no_direct_path() {
        let room = anechoic().with_reflection(0.7).with_max_order(6);
        let ir = generate_rir(&room).unwrap();
        let late = late_field_ir(&ir);
        assert!((late.energy() - 1.0).abs() < 1e-12);
        let d = direct_delay(&ir);
        assert_eq!(late.taps()[d], 0.0);
        let dry = generate_rir(&anechoic()).unwrap();
        assert_eq!(late_field_ir(&dry).taps(), &[1.0]);
    }
}
