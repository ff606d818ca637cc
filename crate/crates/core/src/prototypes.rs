//! Candidate-direction prototype transfer-function sets.
//!
//! Sets are stored as a flat `[bin][direction][channel]` array. The binary
//! container starts with the 9-byte magic `PROTOSET\0`, followed by six
//! little-endian `u32` header fields (kind, scope, channels, bins,
//! directions, sample rate), the direction grid as `f64` degrees, and the
//! values as interleaved `f64` real/imaginary pairs.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CVector, CholeskyFactor, C64};

pub const MAGIC: &[u8; 9] = b"PROTOSET\0";

/// Candidate azimuths in degrees, strictly increasing within `[-180, 180)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionGrid {
    angles_deg: Vec<f64>,
}

impl DirectionGrid {
    pub fn new(angles_deg: Vec<f64>) -> Result<Self> {
        if angles_deg.is_empty() {
            return Err(Error::invalid("empty direction grid"));
        }
        if angles_deg.iter().any(|a| !(-180.0..180.0).contains(a)) {
            return Err(Error::invalid("grid angles must lie in [-180, 180)"));
        }
        if angles_deg.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("grid angles must be strictly increasing"));
        }
        Ok(Self { angles_deg })
    }

    /// `[-180 : step : 180)`.
    pub fn uniform(step_deg: f64) -> Result<Self> {
        if !(step_deg > 0.0) {
            return Err(Error::invalid("grid step must be positive"));
        }
        let n = (360.0 / step_deg).round() as usize;
        Self::new((0..n).map(|i| -180.0 + i as f64 * step_deg).collect())
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn len(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles_deg.is_empty()
    }

    /// Index of the grid angle closest (circularly) to `angle_deg`.
    pub fn nearest(&self, angle_deg: f64) -> usize {
        let mut best = 0;
        let mut best_err = f64::INFINITY;
        for (i, &a) in self.angles_deg.iter().enumerate() {
            let e = circular_distance_deg(a, angle_deg);
            if e < best_err {
                best = i;
                best_err = e;
            }
        }
        best
    }
}

/// Absolute angular difference on the circle, in `[0, 180]`.
pub fn circular_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Wraps an angle into `[-180, 180)`.
pub fn wrap_deg(a: f64) -> f64 {
    (a + 180.0).rem_euclid(360.0) - 180.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferKind {
    Atf,
    Rtf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrototypeScope {
    HaOnly,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub grid: DirectionGrid,
    pub kind: TransferKind,
    pub scope: PrototypeScope,
    pub channels: usize,
    pub bins: usize,
    pub sample_rate: u32,
    values: Vec<C64>,
}

impl PrototypeSet {
    pub fn from_values(
        grid: DirectionGrid,
        kind: TransferKind,
        scope: PrototypeScope,
        channels: usize,
        bins: usize,
        sample_rate: u32,
        values: Vec<C64>,
    ) -> Result<Self> {
        if values.len() != bins * grid.len() * channels {
            return Err(Error::invalid(format!(
                "expected {} values, got {}",
                bins * grid.len() * channels,
                values.len()
            )));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("non-finite prototype value"));
        }
        Ok(Self {
            grid,
            kind,
            scope,
            channels,
            bins,
            sample_rate,
            values,
        })
    }

    pub fn directions(&self) -> usize {
        self.grid.len()
    }

    /// Transform length the bins were computed for.
    pub fn frame_len(&self) -> usize {
        2 * (self.bins - 1)
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.frame_len() as f64
    }

    pub fn slice(&self, k: usize, i: usize) -> &[C64] {
        let start = (k * self.directions() + i) * self.channels;
        &self.values[start..start + self.channels]
    }

    /// All directions of bin `k` as a `channels x directions` view.
    pub fn bin_matrix(&self, k: usize) -> nalgebra::DMatrixView<'_, C64> {
        let len = self.directions() * self.channels;
        nalgebra::DMatrixView::from_slice(&self.values[k * len..(k + 1) * len], self.channels, self.directions())
    }

    pub fn vector(&self, k: usize, i: usize) -> CVector {
        CVector::from_column_slice(self.slice(k, i))
    }

    pub fn raw_values(&self) -> &[C64] {
        &self.values
    }
}

/// Far-field plane-wave transfer functions for microphones at `mic_positions`
/// (metres). A source at azimuth `theta` lies along `u = (cos theta, sin theta, 0)`,
/// and microphone `m` receives it with delay `-u . p_m / c` relative to the origin.
pub fn generate_freefield_set(
    mic_positions: &[[f64; 3]],
    grid: &DirectionGrid,
    bins: usize,
    sample_rate: u32,
    speed_of_sound: f64,
) -> Result<PrototypeSet> {
    if mic_positions.len() < 2 {
        return Err(Error::invalid("at least two microphones are required"));
    }
    if bins < 2 {
        return Err(Error::invalid("at least two frequency bins are required"));
    }
    let frame_len = 2 * (bins - 1);
    let mut values = Vec::with_capacity(bins * grid.len() * mic_positions.len());
    for k in 0..bins {
        let f = k as f64 * sample_rate as f64 / frame_len as f64;
        for &theta in grid.angles() {
            for p in mic_positions {
                let tau = plane_wave_delay(theta, p, speed_of_sound);
                values.push(C64::from_polar(1.0, -2.0 * PI * f * tau));
            }
        }
    }
    PrototypeSet::from_values(
        grid.clone(),
        TransferKind::Atf,
        PrototypeScope::HaOnly,
        mic_positions.len(),
        bins,
        sample_rate,
        values,
    )
}

/// Arrival delay (seconds, relative to the origin) of a plane wave from azimuth `theta_deg`.
pub fn plane_wave_delay(theta_deg: f64, p: &[f64; 3], speed_of_sound: f64) -> f64 {
    let t = theta_deg.to_radians();
    -(t.cos() * p[0] + t.sin() * p[1]) / speed_of_sound
}

/// Divides every vector by its reference element.
pub fn atf_to_rtf(set: &PrototypeSet, reference_index: usize) -> Result<PrototypeSet> {
    if reference_index >= set.channels {
        return Err(Error::invalid("reference index out of range"));
    }
    let mut values = set.values.clone();
    for chunk in values.chunks_mut(set.channels) {
        let r = chunk[reference_index];
        if r.norm() == 0.0 || !r.norm().is_finite() {
            return Err(Error::DegenerateReference);
        }
        for z in chunk.iter_mut() {
            *z /= r;
        }
        chunk[reference_index] = C64::new(1.0, 0.0);
    }
    Ok(PrototypeSet {
        values,
        kind: TransferKind::Rtf,
        ..set.clone()
    })
}

/// Whitened prototypes `L^{-1} a(k, theta_i)` for one bin, over all directions.
///
/// The factor must match the set's channel count; for hearing-aid-only sets
/// pass the factor of the hearing-aid block.
pub fn whiten_bin(set: &PrototypeSet, k: usize, factor: &CholeskyFactor) -> Result<Vec<CVector>> {
    if factor.dim() != set.channels {
        return Err(Error::invalid(format!(
            "factor dimension {} does not match {} prototype channels",
            factor.dim(),
            set.channels
        )));
    }
    Ok((0..set.directions())
        .map(|i| factor.solve_lower(&set.vector(k, i)))
        .collect())
}

/// Whitened prototypes for one frame, given one factor per bin.
pub fn whiten_set(set: &PrototypeSet, factors: &[CholeskyFactor]) -> Result<Vec<Vec<CVector>>> {
    if factors.len() != set.bins {
        return Err(Error::invalid("one factor per bin is required"));
    }
    factors
        .iter()
        .enumerate()
        .map(|(k, f)| whiten_bin(set, k, f))
        .collect()
}

fn kind_code(kind: TransferKind) -> u32 {
    match kind {
        TransferKind::Atf => 0,
        TransferKind::Rtf => 1,
    }
}

fn scope_code(scope: PrototypeScope) -> u32 {
    match scope {
        PrototypeScope::HaOnly => 0,
        PrototypeScope::Full => 1,
    }
}

pub fn write_set(set: &PrototypeSet, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    for field in [
        kind_code(set.kind),
        scope_code(set.scope),
        set.channels as u32,
        set.bins as u32,
        set.directions() as u32,
        set.sample_rate,
    ] {
        w.write_all(&field.to_le_bytes())?;
    }
    for a in set.grid.angles() {
        w.write_all(&a.to_le_bytes())?;
    }
    for z in &set.values {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_set(r: &mut impl Read) -> Result<PrototypeSet> {
    let truncated = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::FormatError("truncated prototype file".into())
        } else {
            Error::Io(e)
        }
    };
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::FormatError("bad magic".into()));
    }
    let mut header = [0u32; 6];
    for h in header.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(truncated)?;
        *h = u32::from_le_bytes(b);
    }
    let [kind, scope, channels, bins, directions, sample_rate] = header;
    let kind = match kind {
        0 => TransferKind::Atf,
        1 => TransferKind::Rtf,
        other => return Err(Error::FormatError(format!("unknown kind {other}"))),
    };
    let scope = match scope {
        0 => PrototypeScope::HaOnly,
        1 => PrototypeScope::Full,
        other => return Err(Error::FormatError(format!("unknown scope {other}"))),
    };
    let (channels, bins, directions) = (channels as usize, bins as usize, directions as usize);
    if channels == 0 || bins < 2 || directions == 0 {
        return Err(Error::FormatError("empty dimensions".into()));
    }
    let read_f64 = |r: &mut dyn Read| -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(truncated)?;
        Ok(f64::from_le_bytes(b))
    };
    let angles = (0..directions)
        .map(|_| read_f64(r))
        .collect::<Result<Vec<_>>>()?;
    let grid = DirectionGrid::new(angles).map_err(|e| Error::FormatError(e.to_string()))?;
    let n = channels
        .checked_mul(bins)
        .and_then(|x| x.checked_mul(directions))
        .ok_or_else(|| Error::FormatError("dimensions overflow".into()))?;
    let mut values = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let re = read_f64(r)?;
        let im = read_f64(r)?;
        values.push(C64::new(re, im));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::FormatError("trailing bytes after prototype values".into()));
    }
    PrototypeSet::from_values(grid, kind, scope, channels, bins, sample_rate, values)
        .map_err(|e| Error::FormatError(e.to_string()))
}

pub fn save_set(set: &PrototypeSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_set(set, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_set(path: impl AsRef<Path>) -> Result<PrototypeSet> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_set(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cholesky, CMatrix, HermitianMatrix, LoadingPolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair() -> Vec<[f64; 3]> {
        vec![[0.0, 0.085, 0.0], [0.0, -0.085, 0.0]]
    }

    #[test]
    fn paper_grid_has_72_directions() {
        let g = DirectionGrid::uniform(5.0).unwrap();
        assert_eq!(g.len(), 72);
        assert_eq!(g.angles()[0], -180.0);
        assert_eq!(*g.angles().last().unwrap(), 175.0);
        assert!(DirectionGrid::new(vec![0.0, 0.0]).is_err());
        assert!(DirectionGrid::new(vec![180.0]).is_err());
        assert_eq!(g.nearest(179.0), 0);
        assert_eq!(circular_distance_deg(175.0, -180.0), 5.0);
        assert_eq!(wrap_deg(190.0), -170.0);
    }

    #[test]
    fn broadside_pair_has_equal_phases() {
        let g = DirectionGrid::new(vec![0.0]).unwrap();
        let set = generate_freefield_set(&pair(), &g, 257, 16000, 343.0).unwrap();
        for k in 0..257 {
            for z in set.slice(k, 0) {
                assert!((z - C64::new(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn endfire_phase_difference() {
        let g = DirectionGrid::new(vec![90.0]).unwrap();
        // 1 kHz lands on bin 32 with a 512-point frame at 16 kHz.
        let set = generate_freefield_set(&pair(), &g, 257, 16000, 343.0).unwrap();
        let v = set.slice(32, 0);
        let dphi = (v[0] / v[1]).arg();
        let expected = 2.0 * PI * 1000.0 * 0.17 / 343.0;
        assert!((expected - 3.1141).abs() < 1e-4);
        assert!((dphi - expected).abs() < 1e-12, "{dphi} vs {expected}");
    }

    #[test]
    fn rtf_conversion() {
        let g = DirectionGrid::new(vec![0.0]).unwrap();
        let set = PrototypeSet::from_values(
            g.clone(),
            TransferKind::Atf,
            PrototypeScope::HaOnly,
            2,
            2,
            16000,
            vec![C64::new(2.0, 0.0), C64::new(0.0, 2.0), C64::new(1.0, 1.0), C64::new(1.0, 1.0)],
        )
        .unwrap();
        let rtf = atf_to_rtf(&set, 0).unwrap();
        assert_eq!(rtf.slice(0, 0), &[C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        assert_eq!(rtf.kind, TransferKind::Rtf);
        assert_eq!(atf_to_rtf(&rtf, 0).unwrap(), rtf);

        let zero_ref = PrototypeSet::from_values(
            g,
            TransferKind::Atf,
            PrototypeScope::HaOnly,
            2,
            2,
            16000,
            vec![C64::new(0.0, 0.0); 4],
        )
        .unwrap();
        assert!(matches!(atf_to_rtf(&zero_ref, 0), Err(Error::DegenerateReference)));
    }

    #[test]
    fn freefield_rtf_has_unit_magnitude() {
        let mics = vec![
            [0.006, 0.085, 0.0],
            [-0.006, 0.085, 0.0],
            [0.006, -0.085, 0.0],
            [-0.006, -0.085, 0.0],
        ];
        let set = generate_freefield_set(&mics, &DirectionGrid::uniform(5.0).unwrap(), 65, 16000, 343.0).unwrap();
        assert!(set.raw_values().iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let rtf = atf_to_rtf(&set, 0).unwrap();
        assert!(rtf.raw_values().iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        for k in 0..65 {
            for i in 0..72 {
                assert_eq!(rtf.slice(k, i)[0], C64::new(1.0, 0.0));
            }
        }
    }

    #[test]
    fn whitening_round_trip() {
        let set = generate_freefield_set(&pair(), &DirectionGrid::uniform(30.0).unwrap(), 9, 16000, 343.0).unwrap();
        let ident = cholesky(&HermitianMatrix::identity(2), &LoadingPolicy::default()).unwrap();
        let w = whiten_bin(&set, 3, &ident).unwrap();
        for (i, v) in w.iter().enumerate() {
            assert_eq!(v, &set.vector(3, i));
        }
        let two = cholesky(&HermitianMatrix::scaled_identity(2, 4.0), &LoadingPolicy::default()).unwrap();
        let w = whiten_bin(&set, 3, &two).unwrap();
        for (i, v) in w.iter().enumerate() {
            assert!((v * C64::new(2.0, 0.0) - set.vector(3, i)).norm() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = CMatrix::from_fn(2, 2, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let spd = HermitianMatrix::symmetrized(&(&b * b.adjoint() + CMatrix::identity(2, 2)));
        let f = cholesky(&spd, &LoadingPolicy::default()).unwrap();
        let all = whiten_set(&set, &vec![f.clone(); 9]).unwrap();
        for k in 0..9 {
            for (i, v) in all[k].iter().enumerate() {
                assert!((f.apply(v) - set.vector(k, i)).norm() < 1e-10);
            }
        }
        assert!(whiten_bin(&set, 0, &cholesky(&HermitianMatrix::identity(3), &LoadingPolicy::default()).unwrap()).is_err());
    }

    #[test]
    fn file_round_trip_and_bad_magic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grid = DirectionGrid::uniform(5.0).unwrap();
        let values: Vec<C64> = (0..4 * 72 * 257)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let set = PrototypeSet::from_values(grid, TransferKind::Atf, PrototypeScope::HaOnly, 4, 257, 16000, values).unwrap();
        let mut buf = Vec::new();
        write_set(&set, &mut buf).unwrap();
        assert_eq!(buf.len(), 9 + 24 + 72 * 8 + 4 * 72 * 257 * 16);
        let back = read_set(&mut buf.as_slice()).unwrap();
        assert_eq!(back, set);
        assert_eq!((back.channels, back.directions(), back.bins), (4, 72, 257));

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_set(&mut bad.as_slice()), Err(Error::FormatError(_))));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_set(&mut &short[..]), Err(Error::FormatError(_))));
    }
}
