//! Mono WAV input and PCM16 output.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{io_err, Error, Result};

fn wav_err(path: &Path, detail: impl ToString) -> Error {
    Error::Wav {
        path: path.to_owned(),
        detail: detail.to_string(),
    }
}

/// Reads a mono WAV file as samples in `[-1, 1]` plus its sample rate.
/// Integer PCM of any width and 32-bit float are accepted.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(
            path,
            format!("expected mono, found {} channels", spec.channels),
        ));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<_, _>>()
        }
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>(),
    }
    .map_err(|e| wav_err(path, e))?;
    if samples.is_empty() {
        return Err(wav_err(path, "no audio samples"));
    }
    Ok((samples, spec.sample_rate))
}

/// Reads a WAV file and checks its sample rate.
pub fn read_wav_at(path: &Path, sample_rate: u32) -> Result<Vec<f64>> {
    let (x, sr) = read_wav(path)?;
    if sr != sample_rate {
        return Err(wav_err(
            path,
            format!("sample rate {sr} Hz, expected {sample_rate} Hz"),
        ));
    }
    Ok(x)
}

/// Writes 16-bit PCM mono, clamping to `[-1, 1]`.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

/// Every `*.wav` file directly inside `dir`, sorted by name.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Invalid(format!(
            "no .wav files in {}",
            dir.display()
        )));
    }
    Ok(out)
}

/// Loads every WAV in `dir` at the expected sample rate.
pub fn load_wav_dir(dir: &Path, sample_rate: u32) -> Result<Vec<Vec<f64>>> {
    list_wavs(dir)?
        .iter()
        .map(|p| read_wav_at(p, sample_rate))
        .collect()
}

/// Writes `clips` as `clip_0000.wav`, `clip_0001.wav`, ... under `dir`.
pub fn write_wav_dir(dir: &Path, clips: &[Vec<f64>], sample_rate: u32) -> Result<Vec<PathBuf>> {
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let p = dir.join(format!("clip_{i:04}.wav"));
            write_wav(&p, c, sample_rate).map(|_| p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..500).map(|i| 0.5 * (i as f64 * 0.05).sin()).collect();
        write_wav(&p, &x, 16_000).unwrap();
        let (y, sr) = read_wav(&p).unwrap();
        assert_eq!(sr, 16_000);
        assert_eq!(y.len(), x.len());
        assert!(x
            .iter()
            .zip(&y)
            .all(|(a, b)| (a - b).abs() <= 1.0 / 32767.0));
        assert!(read_wav_at(&p, 8000).is_err());
        // Header (44 bytes) plus two bytes per sample.
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 44 + 1000);
    }

    #[test]
    fn empty_and_malformed_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.wav");
        write_wav(&empty, &[], 16_000).unwrap();
        assert!(read_wav(&empty).is_err());
        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"RIFF1234WAVEnope").unwrap();
        assert!(read_wav(&junk).is_err());
        assert!(read_wav(&dir.path().join("missing.wav")).is_err());
    }

    #[test]
    fn directory_listing_is_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let clips = vec![vec![0.1; 10], vec![0.2; 10], vec![0.3; 10]];
        write_wav_dir(dir.path(), &clips, 16_000).unwrap();
        let names: Vec<_> = list_wavs(dir.path()).unwrap();
        assert!(names.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(load_wav_dir(dir.path(), 16_000).unwrap().len(), 3);
    }
}
