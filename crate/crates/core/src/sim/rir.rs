//! Shoebox image-source room impulse responses.

use std::f64::consts::PI;

use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::numerics::C64;

/// Half-width of the windowed-sinc fractional-delay kernel (16 taps total).
pub const FRACTIONAL_HALF_TAPS: i64 = 8;

/// Reverberation presets in seconds.
pub const T60_PRESETS: [f64; 3] = [0.31, 0.51, 1.3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Room {
    pub dims: [f64; 3],
}

impl Room {
    pub fn new(dims: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::invalid("room dimensions must be positive"));
        }
        Ok(Self { dims })
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        p.iter().zip(&self.dims).all(|(&c, &d)| c >= 0.0 && c <= d)
    }

    /// Uniform wall reflection coefficient reaching `t60` by Eyring's formula.
    pub fn eyring_reflection(&self, t60: f64) -> Result<f64> {
        if !(t60 > 0.0) {
            return Err(Error::invalid("T60 must be positive"));
        }
        // absorption a = 1 - exp(-0.161 V / (S T60)), beta = sqrt(1 - a)
        Ok((-0.5 * 0.161 * self.volume() / (self.surface() * t60)).exp())
    }
}

/// Impulse response split into the direct path and everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomImpulseResponse {
    pub direct: Vec<f64>,
    pub reverberant: Vec<f64>,
}

impl RoomImpulseResponse {
    pub fn total(&self) -> Vec<f64> {
        self.direct.iter().zip(&self.reverberant).map(|(a, b)| a + b).collect()
    }

    pub fn len(&self) -> usize {
        self.direct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.direct.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RirParams {
    /// Highest reflection order; `None` keeps every image that fits in `length`.
    pub max_order: Option<usize>,
    pub reflection_coeff: f64,
    pub length: usize,
    pub sample_rate: f64,
    pub speed_of_sound: f64,
}

/// Adds `gain * sinc(n - delay)` under a Hann window of 16 taps.
pub fn add_fractional_impulse(out: &mut [f64], delay: f64, gain: f64) {
    let n0 = delay.floor() as i64;
    let frac = delay - n0 as f64;
    // sin(pi (n - delay)) alternates in sign from one tap to the next
    let s0 = (PI * frac).sin();
    for n in (n0 - FRACTIONAL_HALF_TAPS + 1)..=(n0 + FRACTIONAL_HALF_TAPS) {
        if n < 0 || n as usize >= out.len() {
            continue;
        }
        let x = n as f64 - delay;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            let sign = if (n - n0).rem_euclid(2) == 0 { -1.0 } else { 1.0 };
            sign * s0 / (PI * x)
        };
        let w = 0.5 * (1.0 + (PI * x / FRACTIONAL_HALF_TAPS as f64).cos());
        out[n as usize] += gain * sinc * w;
    }
}

fn image_coordinate(q: i64, src: f64, len: f64) -> f64 {
    q as f64 * len + if q.rem_euclid(2) == 0 { src } else { len - src }
}

/// Image-source response from `src` to `mic`; order-0 image is the direct part.
pub fn image_source_rir(room: &Room, src: &[f64; 3], mic: &[f64; 3], params: &RirParams) -> Result<RoomImpulseResponse> {
    if !room.contains(src) || !room.contains(mic) {
        return Err(Error::invalid("source and microphone must lie inside the room"));
    }
    let dist0 = distance(src, mic);
    if dist0 < 1e-6 {
        return Err(Error::invalid("source coincides with a microphone"));
    }
    if !(0.0..=1.0).contains(&params.reflection_coeff) {
        return Err(Error::invalid("reflection coefficient must lie in [0, 1]"));
    }
    let fs = params.sample_rate;
    let c = params.speed_of_sound;
    let mut direct = vec![0.0; params.length];
    let mut reverberant = vec![0.0; params.length];
    add_fractional_impulse(&mut direct, dist0 / c * fs, 1.0 / (4.0 * PI * dist0));

    let max_order = params.max_order.unwrap_or(usize::MAX);
    if max_order == 0 || params.reflection_coeff == 0.0 {
        return Ok(RoomImpulseResponse { direct, reverberant });
    }
    let max_dist = (params.length as f64 + FRACTIONAL_HALF_TAPS as f64) / fs * c;
    let bound = |len: f64| -> i64 {
        let by_dist = (max_dist / len).ceil() as i64 + 1;
        by_dist.min(max_order.min(i64::MAX as usize) as i64)
    };
    let (qx, qy, qz) = (bound(room.dims[0]), bound(room.dims[1]), bound(room.dims[2]));
    let beta = params.reflection_coeff;
    for ix in -qx..=qx {
        let dx = image_coordinate(ix, src[0], room.dims[0]) - mic[0];
        for iy in -qy..=qy {
            let dy = image_coordinate(iy, src[1], room.dims[1]) - mic[1];
            let oxy = ix.unsigned_abs() + iy.unsigned_abs();
            if oxy as usize > max_order {
                continue;
            }
            for iz in -qz..=qz {
                let order = (oxy + iz.unsigned_abs()) as usize;
                if order == 0 || order > max_order {
                    continue;
                }
                let dz = image_coordinate(iz, src[2], room.dims[2]) - mic[2];
                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                if d > max_dist {
                    continue;
                }
                let gain = beta.powi(order as i32) / (4.0 * PI * d);
                add_fractional_impulse(&mut reverberant, d / c * fs, gain);
            }
        }
    }
    Ok(RoomImpulseResponse { direct, reverberant })
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Linear convolution truncated to `x.len()` samples.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spectrum = |v: &[f64]| -> Vec<C64> {
        let mut buf = vec![0.0; n];
        buf[..v.len()].copy_from_slice(v);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("fft length");
        out
    };
    let mut prod: Vec<C64> = spectrum(x).iter().zip(spectrum(h)).map(|(a, b)| a * b).collect();
    // imaginary parts of DC and Nyquist must be exactly zero for the inverse
    prod[0].im = 0.0;
    let last = prod.len() - 1;
    prod[last].im = 0.0;
    let mut out = vec![0.0; n];
    inv.process(&mut prod, &mut out).expect("fft length");
    out.truncate(x.len());
    for v in &mut out {
        *v /= n as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(order: Option<usize>, beta: f64) -> RirParams {
        RirParams {
            max_order: order,
            reflection_coeff: beta,
            length: 4000,
            sample_rate: 16000.0,
            speed_of_sound: 343.0,
        }
    }

    fn room() -> Room {
        Room::new([7.0, 6.0, 2.7]).unwrap()
    }

    #[test]
    fn direct_path_delay_and_gain() {
        let src = [3.0, 3.0, 1.3];
        let mic = [1.0, 3.0, 1.3];
        let h = image_source_rir(&room(), &src, &mic, &params(Some(0), 0.9)).unwrap();
        let delay: f64 = 2.0 / 343.0 * 16000.0;
        assert!((delay - 93.29).abs() < 0.01);
        let peak = (0..h.len()).max_by(|&a, &b| h.direct[a].total_cmp(&h.direct[b])).unwrap();
        assert_eq!(peak, 93);
        assert!(h.reverberant.iter().all(|&v| v == 0.0));
        let nonzero: Vec<usize> = (0..h.len()).filter(|&i| h.direct[i] != 0.0).collect();
        assert_eq!(nonzero.len(), 16);
        // DC gain of the kernel is close to one: taps sum to ~1/(4 pi r)
        let sum: f64 = h.direct.iter().sum();
        assert!((sum * 4.0 * PI * 2.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn integer_delay_is_a_single_tap() {
        let mut out = vec![0.0; 64];
        add_fractional_impulse(&mut out, 20.0, 0.5);
        assert_eq!(out[20], 0.5);
        assert!(out.iter().enumerate().all(|(i, &v)| i == 20 || v.abs() < 1e-15));
    }

    #[test]
    fn zero_reflection_equals_order_zero() {
        let src = [2.0, 4.0, 1.5];
        let mic = [5.0, 1.0, 1.0];
        let a = image_source_rir(&room(), &src, &mic, &params(Some(0), 0.5)).unwrap();
        let b = image_source_rir(&room(), &src, &mic, &params(Some(12), 0.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_order_images() {
        let src = [2.0, 3.0, 1.3];
        let mic = [4.0, 3.0, 1.3];
        let h = image_source_rir(&room(), &src, &mic, &params(Some(1), 0.7)).unwrap();
        // six first-order images; the x=0 wall image sits at 2 + 4 = 6 m
        let mut expected = vec![0.0; 4000];
        for img in [
            [-2.0, 3.0, 1.3],
            [12.0, 3.0, 1.3],
            [2.0, -3.0, 1.3],
            [2.0, 9.0, 1.3],
            [2.0, 3.0, -1.3],
            [2.0, 3.0, 4.1],
        ] {
            let d = distance(&img, &mic);
            add_fractional_impulse(&mut expected, d / 343.0 * 16000.0, 0.7 / (4.0 * PI * d));
        }
        let err: f64 = h.reverberant.iter().zip(&expected).map(|(a, b)| (a - b).abs()).sum();
        assert!(err < 1e-12);
    }

    #[test]
    fn invalid_positions() {
        let p = [1.0, 1.0, 1.0];
        assert!(image_source_rir(&room(), &p, &p, &params(Some(0), 0.5)).is_err());
        assert!(image_source_rir(&room(), &[8.0, 1.0, 1.0], &p, &params(Some(0), 0.5)).is_err());
    }

    #[test]
    fn eyring_presets_decay_at_target_rate() {
        let r = room();
        for t60 in T60_PRESETS {
            let beta = r.eyring_reflection(t60).unwrap();
            assert!(beta > 0.0 && beta < 1.0);
            let alpha = 1.0 - beta * beta;
            let back = 0.161 * r.volume() / (-r.surface() * (1.0 - alpha).ln());
            assert!((back - t60).abs() < 1e-12);
        }
        assert!(r.eyring_reflection(0.31).unwrap() < r.eyring_reflection(1.3).unwrap());
    }

    #[test]
    fn reverberant_energy_grows_with_t60() {
        let src = [3.2, 5.0, 1.3];
        let mic = [3.2, 3.0, 1.3];
        let r = room();
        let energy = |t60: f64| {
            let p = RirParams {
                max_order: None,
                reflection_coeff: r.eyring_reflection(t60).unwrap(),
                length: (t60 * 16000.0) as usize,
                sample_rate: 16000.0,
                speed_of_sound: 343.0,
            };
            let h = image_source_rir(&r, &src, &mic, &p).unwrap();
            h.reverberant.iter().map(|v| v * v).sum::<f64>() / h.direct.iter().map(|v| v * v).sum::<f64>()
        };
        assert!(energy(0.31) < energy(0.51));
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let h: Vec<f64> = (0..37).map(|i| (i as f64 * 0.3).sin()).collect();
        let y = fft_convolve(&x, &h);
        for n in 0..x.len() {
            let direct: f64 = (0..h.len()).filter(|&j| j <= n).map(|j| h[j] * x[n - j]).sum();
            assert!((y[n] - direct).abs() < 1e-10);
        }
    }
}
