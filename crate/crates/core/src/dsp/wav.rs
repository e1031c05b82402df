//! Mono WAV input (PCM-16 or float-32) and PCM-16 output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedWav(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (format, bits) => {
            return Err(Error::UnsupportedWav(format!(
                "{}: {bits}-bit {format:?}, expected 16-bit PCM or 32-bit float",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM. Samples are clamped to [-1, 1]; returns how many
/// needed clamping.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<usize> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    let mut clipped = 0;
    for &s in wave.samples() {
        if !(-1.0..=1.0).contains(&s) {
            clipped += 1;
        }
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)?;
    Ok(clipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.01).sin() * 0.8).collect();
        let clipped = write_wav(&p, &Waveform::new(x.clone(), 24000).unwrap()).unwrap();
        assert_eq!(clipped, 0);
        let back = read_wav(&p).unwrap();
        assert_eq!(back.sample_rate(), 24000);
        for (a, b) in x.iter().zip(back.samples()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn reads_float_and_rejects_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [0.25f32, -0.5, 0.125] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples(), &[0.25, -0.5, 0.125]);

        let q = dir.path().join("s.wav");
        let mut w = WavWriter::create(&q, WavSpec { channels: 2, ..spec }).unwrap();
        w.write_sample(0.0f32).unwrap();
        w.write_sample(0.0f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&q), Err(Error::UnsupportedWav(_))));
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(matches!(read_wav("/nonexistent/x.wav"), Err(Error::Wav { .. })));
    }
}
