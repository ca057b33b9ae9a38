//! Minimal RIFF/WAVE reader for 16-bit PCM mono clips.

use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WavData {
    pub sample_rate: u32,
    /// Samples scaled to [-1, 1).
    pub samples: Vec<f64>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

fn read_u16(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| format_err(b.len(), "truncated header"))
}

fn read_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| format_err(b.len(), "truncated header"))
}

pub fn load_wav(path: &Path) -> Result<WavData> {
    parse_wav(&std::fs::read(path)?)
}

pub(crate) fn parse_wav(b: &[u8]) -> Result<WavData> {
    if b.len() < 12 || &b[0..4] != b"RIFF" || &b[8..12] != b"WAVE" {
        return Err(format_err(0, "not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= b.len() {
        let id = &b[pos..pos + 4];
        let size = read_u32(b, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > b.len() {
                    return Err(format_err(body, "short fmt chunk"));
                }
                let tag = read_u16(b, body)?;
                let channels = read_u16(b, body + 2)?;
                let rate = read_u32(b, body + 4)?;
                let bits = read_u16(b, body + 14)?;
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) =
                    format.ok_or_else(|| format_err(pos, "data chunk before fmt chunk"))?;
                if tag != 1 {
                    return Err(Error::UnsupportedEncoding(format!("WAV format tag {tag}, only PCM (1) is read")));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedEncoding(format!("{bits}-bit WAV, only 16-bit is read")));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedEncoding(format!("{channels}-channel WAV, only mono is read")));
                }
                if body + size > b.len() {
                    return Err(format_err(b.len(), format!("data chunk declares {size} bytes, file ends early")));
                }
                if size % 2 != 0 {
                    return Err(format_err(body + size, "odd byte count in 16-bit data"));
                }
                let samples = b[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Ok(WavData { sample_rate: rate, samples });
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(format_err(b.len(), "no data chunk"))
}

pub fn write_wav_pcm16(path: &Path, samples: &[i16], sample_rate: u32) -> Result<()> {
    let data_len = (samples.len() * 2) as u32;
    let mut b = Vec::with_capacity(44 + samples.len() * 2);
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&sample_rate.to_le_bytes());
    b.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        b.extend_from_slice(&s.to_le_bytes());
    }
    std::fs::write(path, b)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(samples: &[i16]) -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav_pcm16(&p, samples, 8000).unwrap();
        std::fs::read(p).unwrap()
    }

    #[test]
    fn round_trip() {
        let w = parse_wav(&encode(&[0, 16384, -32768, 32767])).unwrap();
        assert_eq!(w.sample_rate, 8000);
        assert_eq!(w.samples, vec![0.0, 0.5, -1.0, 32767.0 / 32768.0]);
    }

    #[test]
    fn truncated_data_reports_offset() {
        let mut b = encode(&[1, 2, 3, 4]);
        b.truncate(b.len() - 3);
        match parse_wav(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, b.len() as u64),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn stereo_and_8bit_are_unsupported() {
        let mut b = encode(&[1, 2]);
        b[22] = 2;
        assert!(matches!(parse_wav(&b), Err(Error::UnsupportedEncoding(_))));
        let mut b = encode(&[1, 2]);
        b[34] = 8;
        assert!(matches!(parse_wav(&b), Err(Error::UnsupportedEncoding(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let b = encode(&[7, -7]);
        let mut out = b[..12].to_vec();
        out.extend_from_slice(b"LIST");
        out.extend_from_slice(&3u32.to_le_bytes());
        out.extend_from_slice(&[1, 2, 3, 0]);
        out.extend_from_slice(&b[12..]);
        let w = parse_wav(&out).unwrap();
        assert_eq!(w.samples.len(), 2);
    }

    #[test]
    fn garbage_is_format_error() {
        assert!(matches!(parse_wav(b"hello world, not a wav"), Err(Error::Format { offset: 0, .. })));
    }
}
