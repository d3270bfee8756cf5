//! Minimal RIFF/WAVE reader and writer (PCM16 and IEEE float32, little-endian).

use std::fs;
use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy)]
struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Read a WAV file. Stereo is downmixed by channel mean; the original sample
/// rate is kept.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_wav(&bytes, path.to_string_lossy())
}

/// Parse WAV bytes already in memory.
pub fn read_wav(bytes: &[u8], source_id: impl Into<String>) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("missing RIFF/WAVE header".into()));
    }
    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Format(format!("chunk {:?} overruns file", String::from_utf8_lossy(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Format("fmt chunk shorter than 16 bytes".into()));
                }
                let mut format = le_u16(body, 0);
                if format == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(Error::Format("truncated WAVE_FORMAT_EXTENSIBLE chunk".into()));
                    }
                    // first two bytes of the sub-format GUID carry the codec
                    format = le_u16(body, 24);
                }
                fmt = Some(FmtChunk {
                    format,
                    channels: le_u16(body, 2),
                    sample_rate: le_u32(body, 4),
                    bits_per_sample: le_u16(body, 14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
        if fmt.is_some() && data.is_some() {
            break;
        }
    }
    let fmt = fmt.ok_or_else(|| Error::Format("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("no data chunk".into()))?;
    if fmt.sample_rate == 0 {
        return Err(Error::Format("sample rate is zero".into()));
    }
    if !(1..=2).contains(&fmt.channels) {
        return Err(Error::UnsupportedEncoding(format!("{} channels", fmt.channels)));
    }
    let channels = fmt.channels as usize;
    let decode: fn(&[u8]) -> f64 = match (fmt.format, fmt.bits_per_sample) {
        (FORMAT_PCM, 16) => |b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0,
        (FORMAT_IEEE_FLOAT, 32) => |b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
        (f, bits) => {
            return Err(Error::UnsupportedEncoding(format!("format tag {f:#06x} with {bits} bits per sample")))
        }
    };
    let width = fmt.bits_per_sample as usize / 8;
    let frame_bytes = width * channels;
    let n_frames = data.len() / frame_bytes;
    if n_frames == 0 {
        return Err(Error::EmptyAudio);
    }
    let mut samples = Vec::with_capacity(n_frames);
    for frame in data.chunks_exact(frame_bytes) {
        let sum: f64 = frame.chunks_exact(width).map(decode).sum();
        let v = sum / channels as f64;
        if !v.is_finite() {
            return Err(Error::Format("non-finite float sample".into()));
        }
        samples.push(v);
    }
    AudioClip::new(samples, fmt.sample_rate, source_id)
}

fn header(out: &mut Vec<u8>, format: u16, channels: u16, rate: u32, bits: u16, data_len: usize) {
    let block_align = channels * bits / 8;
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
}

/// Encode interleaved channels as PCM16.
pub fn encode_pcm16(channels: &[&[f64]], rate: u32) -> Vec<u8> {
    let n = channels.first().map_or(0, |c| c.len());
    let data_len = n * channels.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    header(&mut out, FORMAT_PCM, channels.len() as u16, rate, 16, data_len);
    for i in 0..n {
        for ch in channels {
            let v = (ch[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Write a mono clip as 16-bit PCM.
pub fn write_wav_pcm16(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    crate::io::atomic_write(path.as_ref(), &encode_pcm16(&[&clip.samples], clip.sample_rate_hz))
}

/// Write a mono clip as 32-bit IEEE float.
pub fn write_wav_f32(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let data_len = clip.samples.len() * 4;
    let mut out = Vec::with_capacity(44 + data_len);
    header(&mut out, FORMAT_IEEE_FLOAT, 1, clip.sample_rate_hz, 32, data_len);
    for &s in &clip.samples {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    crate::io::atomic_write(path.as_ref(), &out)
}
