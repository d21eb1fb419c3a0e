//! Spectral front ends shared by the metric suite and the CNN encoder.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};

/// Floor added inside every log of a power or magnitude.
pub const LOG_EPS: f64 = 1e-8;
/// Mel bands used for MFCC extraction.
pub const MFCC_MEL_BANDS: usize = 40;
pub const MFCC_WIN_MS: f64 = 25.0;
pub const MFCC_HOP_MS: f64 = 10.0;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

/// One-sided DFT magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrum {
    pub bins: Vec<f64>,
    pub bin_hz: f64,
}

/// Magnitudes of the one-sided DFT of the whole buffer (`n/2 + 1` bins).
pub fn dft_magnitudes(samples: &[f64]) -> Result<Vec<f64>> {
    let n = samples.len();
    if n == 0 {
        return Err(invalid("cannot transform an empty signal"));
    }
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    plan(n).process(&mut buf);
    Ok(buf[..n / 2 + 1].iter().map(|c| c.norm()).collect())
}

pub fn dft_mag(samples: &[f64], sample_rate: f64) -> Result<MagnitudeSpectrum> {
    let bins = dft_magnitudes(samples)?;
    Ok(MagnitudeSpectrum {
        bin_hz: sample_rate / samples.len() as f64,
        bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Magnitude,
    LogMel,
    Mfcc,
    Rms,
}

/// A rectangular `n_frames × n_features` matrix of framewise features.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub n_features: usize,
    pub hop: usize,
    pub kind: FeatureKind,
}

impl FrameSeries {
    pub fn new(data: Vec<f64>, n_frames: usize, n_features: usize, hop: usize, kind: FeatureKind) -> Result<Self> {
        if data.len() != n_frames * n_features {
            return Err(invalid(format!(
                "{} values do not form a {n_frames}x{n_features} frame series",
                data.len()
            )));
        }
        Ok(FrameSeries {
            data,
            n_frames,
            n_features,
            hop,
            kind,
        })
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_features.max(1))
    }
}

pub fn ms_to_samples(ms: f64, sample_rate: f64) -> usize {
    (ms * sample_rate / 1000.0).round() as usize
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed magnitude STFT, frames centred on `f * hop` with reflect
/// padding of `win / 2`. Produces `ceil(N / hop)` frames of `win / 2 + 1` bins.
pub fn stft_mag(samples: &[f64], win: usize, hop: usize) -> Result<FrameSeries> {
    if hop == 0 || win < hop {
        return Err(invalid(format!("need win >= hop >= 1 (win {win}, hop {hop})")));
    }
    let n = samples.len();
    let pad = win / 2;
    if n == 0 || pad >= n {
        return Err(invalid(format!(
            "window of {win} samples is too long for a signal of {n} samples"
        )));
    }
    let padded: Vec<f64> = (0..n + 2 * pad)
        .map(|i| {
            let idx = i as isize - pad as isize;
            let r = if idx < 0 {
                -idx
            } else if idx >= n as isize {
                2 * (n as isize - 1) - idx
            } else {
                idx
            };
            samples[r as usize]
        })
        .collect();
    let window = hann(win);
    let n_frames = n.div_ceil(hop);
    let n_bins = win / 2 + 1;
    let fft = plan(win);
    let mut data = Vec::with_capacity(n_frames * n_bins);
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    for f in 0..n_frames {
        let start = f * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(padded[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend(buf[..n_bins].iter().map(|c| c.norm()));
    }
    FrameSeries::new(data, n_frames, n_bins, hop, FeatureKind::Magnitude)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// HTK triangular filterbank, `n_mels × (n_fft/2 + 1)`, row-major, peak 1.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Result<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    if n_mels == 0 || n_mels > n_bins {
        return Err(invalid(format!(
            "{n_mels} mel bands requested for {n_bins} frequency bins"
        )));
    }
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..n_bins {
            let f = b as f64 * sample_rate / n_fft as f64;
            let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c));
            fb[m * n_bins + b] = w.max(0.0);
        }
    }
    Ok(fb)
}

/// Log-mel spectrogram: `log(mel · |STFT|² + LOG_EPS)`.
pub fn mel_spectrogram(
    samples: &[f64],
    sample_rate: f64,
    win_ms: f64,
    hop_ms: f64,
    n_mels: usize,
) -> Result<FrameSeries> {
    if sample_rate <= 0.0 {
        return Err(invalid("sample rate must be positive"));
    }
    let win = ms_to_samples(win_ms, sample_rate);
    let hop = ms_to_samples(hop_ms, sample_rate);
    let fb = mel_filterbank(n_mels, win, sample_rate)?;
    let spec = stft_mag(samples, win, hop)?;
    let n_bins = spec.n_features;
    let mut data = Vec::with_capacity(spec.n_frames * n_mels);
    for frame in spec.frames() {
        for m in 0..n_mels {
            let row = &fb[m * n_bins..(m + 1) * n_bins];
            let power: f64 = row.iter().zip(frame).map(|(w, a)| w * a * a).sum();
            data.push((power + LOG_EPS).ln());
        }
    }
    FrameSeries::new(data, spec.n_frames, n_mels, hop, FeatureKind::LogMel)
}

/// Orthonormal DCT-II.
pub fn dct2(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI / n * (i as f64 + 0.5) * k as f64).cos())
                .sum();
            let norm = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            s * norm
        })
        .collect()
}

/// Inverse of [`dct2`] (orthonormal DCT-III).
pub fn idct2(c: &[f64]) -> Vec<f64> {
    let n = c.len() as f64;
    (0..c.len())
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(k, v)| {
                    let norm = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                    norm * v * (PI / n * (i as f64 + 0.5) * k as f64).cos()
                })
                .sum()
        })
        .collect()
}

pub fn mfcc(samples: &[f64], sample_rate: f64, n_coeffs: usize, win_ms: f64, hop_ms: f64) -> Result<FrameSeries> {
    if n_coeffs == 0 || n_coeffs > MFCC_MEL_BANDS {
        return Err(invalid(format!(
            "n_coeffs must be in 1..={MFCC_MEL_BANDS}, got {n_coeffs}"
        )));
    }
    let mel = mel_spectrogram(samples, sample_rate, win_ms, hop_ms, MFCC_MEL_BANDS)?;
    let mut data = Vec::with_capacity(mel.n_frames * n_coeffs);
    for frame in mel.frames() {
        data.extend_from_slice(&dct2(frame)[..n_coeffs]);
    }
    FrameSeries::new(data, mel.n_frames, n_coeffs, mel.hop, FeatureKind::Mfcc)
}

/// Framewise RMS over frames `[f·hop, f·hop + frame)` that fit in the signal.
/// A signal shorter than one frame yields a single frame over all samples.
pub fn rms_envelope(samples: &[f64], frame: usize, hop: usize) -> Result<FrameSeries> {
    if frame == 0 || hop == 0 {
        return Err(invalid("frame and hop must be at least 1"));
    }
    let n = samples.len();
    let mut data = Vec::new();
    if n <= frame {
        let ms = samples.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
        data.push(ms.sqrt());
    } else {
        let mut start = 0;
        while start + frame <= n {
            let w = &samples[start..start + frame];
            data.push((w.iter().map(|v| v * v).sum::<f64>() / frame as f64).sqrt());
            start += hop;
        }
    }
    let len = data.len();
    FrameSeries::new(data, len, 1, hop, FeatureKind::Rms)
}
