//! RIFF/WAVE reader and writer for PCM16 mono files.

use std::io::Write as _;
use std::path::Path;

use super::{AudioError, Result, Waveform};

const SCALE: f64 = 32768.0;

fn fmt_err(path: &Path, field: &'static str, value: String, expected: &'static str) -> AudioError {
    AudioError::Format {
        path: path.display().to_string(),
        field,
        value,
        expected,
    }
}

fn trunc(path: &Path, what: &'static str) -> AudioError {
    AudioError::Truncated {
        path: path.display().to_string(),
        what,
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return None;
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct WavHeader {
    sample_rate: u32,
    data_offset: usize,
    data_len: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<WavHeader> {
    let mut c = Cursor { bytes, pos: 0 };
    let riff = c.take(4).ok_or_else(|| trunc(path, "RIFF header"))?;
    if riff != b"RIFF" {
        return Err(fmt_err(path, "riff_tag", format!("{riff:?}"), "RIFF"));
    }
    c.u32().ok_or_else(|| trunc(path, "RIFF size"))?;
    let wave = c.take(4).ok_or_else(|| trunc(path, "WAVE tag"))?;
    if wave != b"WAVE" {
        return Err(fmt_err(path, "wave_tag", format!("{wave:?}"), "WAVE"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    loop {
        let id = match c.take(4) {
            Some(id) => id,
            None => return Err(trunc(path, "chunk header")),
        };
        let size = c.u32().ok_or_else(|| trunc(path, "chunk size"))? as usize;
        match id {
            b"fmt " => {
                let start = c.pos;
                let audio_format = c.u16().ok_or_else(|| trunc(path, "fmt chunk"))?;
                let channels = c.u16().ok_or_else(|| trunc(path, "fmt chunk"))?;
                let sample_rate = c.u32().ok_or_else(|| trunc(path, "fmt chunk"))?;
                c.u32().ok_or_else(|| trunc(path, "fmt chunk"))?; // byte rate
                c.u16().ok_or_else(|| trunc(path, "fmt chunk"))?; // block align
                let bits = c.u16().ok_or_else(|| trunc(path, "fmt chunk"))?;
                fmt = Some((audio_format, channels, sample_rate, bits));
                c.pos = start + size + (size & 1);
            }
            b"data" => {
                let (audio_format, channels, sample_rate, bits) = fmt.ok_or_else(|| {
                    fmt_err(path, "fmt_chunk", "missing".into(), "fmt before data")
                })?;
                if audio_format != 1 {
                    return Err(fmt_err(
                        path,
                        "audio_format",
                        audio_format.to_string(),
                        "1 (PCM)",
                    ));
                }
                if channels != 1 {
                    return Err(fmt_err(path, "channels", channels.to_string(), "1 (mono)"));
                }
                if bits != 16 {
                    return Err(fmt_err(path, "bits_per_sample", bits.to_string(), "16"));
                }
                if sample_rate != 8000 && sample_rate != 16000 {
                    return Err(fmt_err(
                        path,
                        "sample_rate",
                        sample_rate.to_string(),
                        "8000 or 16000",
                    ));
                }
                if c.pos + size > bytes.len() {
                    return Err(trunc(path, "data chunk"));
                }
                return Ok(WavHeader {
                    sample_rate,
                    data_offset: c.pos,
                    data_len: size,
                });
            }
            _ => {
                // Skip unknown chunks (LIST, fact, ...), padded to even size.
                if c.take(size + (size & 1)).is_none() {
                    return Err(trunc(path, "chunk body"));
                }
            }
        }
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let header = parse_header(path, &bytes)?;
    let data = &bytes[header.data_offset..header.data_offset + header.data_len];
    let mut samples = Vec::with_capacity(data.len() / 2);
    for pair in data.chunks_exact(2) {
        let v = i16::from_le_bytes([pair[0], pair[1]]);
        samples.push(f64::from(v) / SCALE);
    }
    Waveform::new(samples, header.sample_rate)
}

/// Duration in seconds from the header alone.
pub fn wav_duration_seconds(path: &Path) -> Result<f64> {
    let bytes = std::fs::read(path).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let header = parse_header(path, &bytes)?;
    Ok(header.data_len as f64 / 2.0 / header.sample_rate as f64)
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let mut pcm = Vec::with_capacity(w.samples.len() * 2);
    for &s in &w.samples {
        let v = (s * SCALE).round().clamp(-32768.0, 32767.0) as i16;
        pcm.extend_from_slice(&v.to_le_bytes());
    }
    let data_len = pcm.len() as u32;
    let mut out = Vec::with_capacity(44 + pcm.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    out.extend_from_slice(&pcm);
    let mut f = std::fs::File::create(path).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    f.write_all(&out).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
