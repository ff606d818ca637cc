//! Multichannel WAV input and output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Reads all channels as `[channel, sample]` floats in `[-1, 1]`, plus the sample rate.
pub fn read_multichannel(path: impl AsRef<Path>) -> Result<(Array2<f64>, u32)> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    if channels == 0 || samples.len() % channels != 0 {
        return Err(Error::FormatError("sample count is not a multiple of the channel count".into()));
    }
    let frames = samples.len() / channels;
    let out = Array2::from_shape_fn((channels, frames), |(c, t)| samples[t * channels + c]);
    Ok((out, spec.sample_rate))
}

/// First channel of a WAV file.
pub fn read_mono(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let (x, _) = read_multichannel(path)?;
    Ok(x.row(0).to_vec())
}

/// Writes 32-bit float samples, interleaved.
pub fn write_multichannel(path: impl AsRef<Path>, x: &Array2<f64>, sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: x.nrows() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec)?;
    for t in 0..x.ncols() {
        for c in 0..x.nrows() {
            w.write_sample(x[[c, t]] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

/// Writes 16-bit PCM, clipping to full scale.
pub fn write_multichannel_i16(path: impl AsRef<Path>, x: &Array2<f64>, sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: x.nrows() as u16,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec)?;
    for t in 0..x.ncols() {
        for c in 0..x.nrows() {
            w.write_sample((x[[c, t]].clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?;
        }
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let x = Array2::from_shape_fn((5, 300), |(c, t)| ((c * 300 + t) as f64 * 0.01).sin() * 0.5);
        write_multichannel(&p, &x, 16000).unwrap();
        let (y, fs) = read_multichannel(&p).unwrap();
        assert_eq!(fs, 16000);
        assert_eq!(y.dim(), (5, 300));
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-7));
    }

    #[test]
    fn pcm16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let x = Array2::from_shape_fn((2, 100), |(c, t)| if c == 0 { t as f64 / 100.0 - 0.5 } else { 2.0 });
        write_multichannel_i16(&p, &x, 8000).unwrap();
        let (y, _) = read_multichannel(&p).unwrap();
        assert!((0..100).all(|t| (x[[0, t]] - y[[0, t]]).abs() < 1e-4));
        assert!(y.row(1).iter().all(|&v| (v - 32767.0 / 32768.0).abs() < 1e-12));
        assert_eq!(read_mono(&p).unwrap().len(), 100);
    }
}
