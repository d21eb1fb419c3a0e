//! Parameter-space and audio-space distances plus per-example reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::assign::{hungarian, CostMatrix};
use crate::dsp::{self, FrameSeries};
use crate::error::{invalid, shape, Error, Result};

/// Magnitude floor inside the log of [`lsd`].
pub const LSD_FLOOR: f64 = 1e-8;
/// Added to every magnitude before [`sot`] normalises a frame.
pub const SOT_EPS: f64 = 1e-8;
pub const SOT_WIN_MS: f64 = 25.0;
pub const SOT_HOP_MS: f64 = 10.0;
pub const WMFCC_COEFFS: usize = 20;
/// `(window ms, hop ms, mel bands)` per scale of [`mss`].
pub const MSS_SCALES: [(f64, f64, usize); 3] = [(10.0, 5.0, 32), (25.0, 10.0, 64), (100.0, 50.0, 128)];
pub const RMS_FRAME: usize = 400;
pub const RMS_HOP: usize = 160;

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(shape(format!("{what}: lengths {} and {} differ", a.len(), b.len())));
    }
    Ok(())
}

pub fn mse(x: &[f64], xh: &[f64]) -> Result<f64> {
    same_len(x, xh, "mse")?;
    if x.is_empty() {
        return Err(invalid("mse of empty vectors"));
    }
    Ok(x.iter().zip(xh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

fn triple_distance(x: &[f64], xh: &[f64], k: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            c[i * k + j] = (0..3)
                .map(|p| {
                    let d = x[p * k + i] - xh[p * k + j];
                    d * d
                })
                .sum();
        }
    }
    c
}

fn check_triples(x: &[f64], xh: &[f64], k: usize, what: &str) -> Result<()> {
    if k == 0 || x.len() != 3 * k || xh.len() != 3 * k {
        return Err(shape(format!(
            "{what} expects two vectors of length 3k = {}, got {} and {}",
            3 * k,
            x.len(),
            xh.len()
        )));
    }
    Ok(())
}

/// Minimum MSE over all oscillator relabelings of `xh`, for the layout
/// `[ω₁..ω_k, α₁..α_k, γ₁..γ_k]`.
pub fn lac(x: &[f64], xh: &[f64], k: usize) -> Result<f64> {
    check_triples(x, xh, k, "lac")?;
    let c = triple_distance(x, xh, k);
    let m = hungarian(CostMatrix::new(&c, k)?);
    // Summing the matched costs in sorted order makes the value independent
    // of how either side is labelled, bit for bit.
    let mut matched: Vec<f64> = m.permutation.iter().enumerate().map(|(i, &j)| c[i * k + j]).collect();
    matched.sort_by(f64::total_cmp);
    Ok(matched.iter().sum::<f64>() / (3 * k) as f64)
}

/// Bidirectional nearest-neighbour sum between the oscillator triples of
/// `x` and `xh`; the triple distance is the mean squared difference.
pub fn chamfer(x: &[f64], xh: &[f64], k: usize) -> Result<f64> {
    check_triples(x, xh, k, "chamfer")?;
    let c: Vec<f64> = triple_distance(x, xh, k).into_iter().map(|v| v / 3.0).collect();
    let rows: f64 = (0..k)
        .map(|i| c[i * k..(i + 1) * k].iter().cloned().fold(f64::INFINITY, f64::min))
        .sum();
    let cols: f64 = (0..k)
        .map(|j| (0..k).map(|i| c[i * k + j]).fold(f64::INFINITY, f64::min))
        .sum();
    Ok(rows + cols)
}

/// Root mean squared difference of natural-log magnitudes over the
/// one-sided DFT bins.
pub fn lsd(y: &[f64], yh: &[f64]) -> Result<f64> {
    same_len(y, yh, "lsd")?;
    let a = dsp::dft_magnitudes(y)?;
    let b = dsp::dft_magnitudes(yh)?;
    let s: f64 = a
        .iter()
        .zip(&b)
        .map(|(p, q)| {
            let d = p.max(LSD_FLOOR).ln() - q.max(LSD_FLOOR).ln();
            d * d
        })
        .sum();
    Ok((s / a.len() as f64).sqrt())
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn check_series(a: &FrameSeries, b: &FrameSeries) -> Result<()> {
    if a.n_frames == 0 || b.n_frames == 0 {
        return Err(invalid("dtw of an empty series"));
    }
    if a.n_features != b.n_features {
        return Err(shape(format!(
            "feature widths {} and {} differ",
            a.n_features, b.n_features
        )));
    }
    Ok(())
}

/// Accumulated L1 cost of the optimal monotone alignment with steps
/// (1,0), (0,1), (1,1), from the first frame pair to the last.
pub fn dtw_l1(a: &FrameSeries, b: &FrameSeries) -> Result<f64> {
    check_series(a, b)?;
    let m = b.n_frames;
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![0.0; m];
    for i in 0..a.n_frames {
        for j in 0..m {
            let c = l1(a.frame(i), b.frame(j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = prev[j];
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if j > 0 { prev[j - 1] } else { f64::INFINITY };
                up.min(left).min(diag)
            };
            cur[j] = c + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// L1 cost of the diagonal alignment (no warping); lengths must match.
pub fn framewise_l1(a: &FrameSeries, b: &FrameSeries) -> Result<f64> {
    check_series(a, b)?;
    if a.n_frames != b.n_frames {
        return Err(shape("framewise cost needs equal frame counts"));
    }
    Ok(a.frames().zip(b.frames()).map(|(x, y)| l1(x, y)).sum())
}

pub fn wmfcc(y: &[f64], yh: &[f64], sample_rate: f64) -> Result<f64> {
    let a = dsp::mfcc(y, sample_rate, WMFCC_COEFFS, dsp::MFCC_WIN_MS, dsp::MFCC_HOP_MS)?;
    let b = dsp::mfcc(yh, sample_rate, WMFCC_COEFFS, dsp::MFCC_WIN_MS, dsp::MFCC_HOP_MS)?;
    dtw_l1(&a, &b)
}

/// A magnitude frame as a probability vector after adding [`SOT_EPS`].
pub fn normalize_frame(p: &[f64]) -> Vec<f64> {
    let s: f64 = p.iter().map(|v| v + SOT_EPS).sum();
    p.iter().map(|v| (v + SOT_EPS) / s).collect()
}

/// Wasserstein-1 distance between two magnitude frames treated as
/// distributions over bins placed uniformly on `[0, 1]`.
pub fn spectral_w1(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q, "spectral_w1")?;
    let n = p.len();
    if n < 2 {
        return Ok(0.0);
    }
    let (pn, qn) = (normalize_frame(p), normalize_frame(q));
    let (mut cp, mut cq, mut acc) = (0.0, 0.0, 0.0);
    for b in 0..n - 1 {
        cp += pn[b];
        cq += qn[b];
        acc += (cp - cq).abs();
    }
    Ok(acc / (n - 1) as f64)
}

/// Frame-averaged [`spectral_w1`] over STFT magnitude frames.
pub fn sot(y: &[f64], yh: &[f64], sample_rate: f64, win_ms: f64, hop_ms: f64) -> Result<f64> {
    same_len(y, yh, "sot")?;
    let win = dsp::ms_to_samples(win_ms, sample_rate);
    let hop = dsp::ms_to_samples(hop_ms, sample_rate);
    let a = dsp::stft_mag(y, win, hop)?;
    let b = dsp::stft_mag(yh, win, hop)?;
    let mut acc = 0.0;
    for (p, q) in a.frames().zip(b.frames()) {
        acc += spectral_w1(p, q)?;
    }
    Ok(acc / a.n_frames as f64)
}

/// Mean absolute log-mel difference, averaged over [`MSS_SCALES`].
pub fn mss(y: &[f64], yh: &[f64], sample_rate: f64) -> Result<f64> {
    same_len(y, yh, "mss")?;
    let mut total = 0.0;
    for (win, hop, mels) in MSS_SCALES {
        let a = dsp::mel_spectrogram(y, sample_rate, win, hop, mels)?;
        let b = dsp::mel_spectrogram(yh, sample_rate, win, hop, mels)?;
        total += l1(&a.data, &b.data) / a.data.len() as f64;
    }
    Ok(total / MSS_SCALES.len() as f64)
}

/// Cosine similarity of RMS envelopes; two silent envelopes count as 1.
pub fn rms_cosine(y: &[f64], yh: &[f64]) -> Result<f64> {
    same_len(y, yh, "rms_cosine")?;
    let a = dsp::rms_envelope(y, RMS_FRAME, RMS_HOP)?;
    let b = dsp::rms_envelope(yh, RMS_FRAME, RMS_HOP)?;
    let na = a.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => a.data.iter().zip(&b.data).map(|(p, q)| p * q).sum::<f64>() / (na * nb),
    })
}

/// `1.96 · sd / √n` with the sample standard deviation; 0 for n < 2.
pub fn ci95(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    1.96 * var.sqrt() / (n as f64).sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Per-example metric values with mean and 95% CI per column.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metrics: Vec<String>,
    pub items: Vec<String>,
    /// `rows[i][m]` is metric `m` for item `i`.
    pub rows: Vec<Vec<f64>>,
}

impl MetricReport {
    pub fn new(metrics: Vec<String>) -> Self {
        MetricReport {
            metrics,
            items: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, item: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.metrics.len() {
            return Err(shape(format!(
                "{} values for {} metrics",
                values.len(),
                self.metrics.len()
            )));
        }
        self.items.push(item.into());
        self.rows.push(values);
        Ok(())
    }

    pub fn column(&self, metric: &str) -> Option<Vec<f64>> {
        let m = self.metrics.iter().position(|n| n == metric)?;
        Some(self.rows.iter().map(|r| r[m]).collect())
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.metrics.len())
            .map(|m| mean(&self.rows.iter().map(|r| r[m]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn cis(&self) -> Vec<f64> {
        (0..self.metrics.len())
            .map(|m| ci95(&self.rows.iter().map(|r| r[m]).collect::<Vec<_>>()))
            .collect()
    }

    /// Header `item,<metrics…>,<metric>_ci95…`; one row per example with
    /// empty CI cells, then a `mean` row carrying the means and CIs.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("item");
        for m in &self.metrics {
            write!(s, ",{m}").unwrap();
        }
        for m in &self.metrics {
            write!(s, ",{m}_ci95").unwrap();
        }
        s.push('\n');
        for (item, row) in self.items.iter().zip(&self.rows) {
            s.push_str(item);
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push_str(&",".repeat(self.metrics.len()));
            s.push('\n');
        }
        s.push_str("mean");
        for v in self.means().into_iter().chain(self.cis()) {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the per-example rows written by [`MetricReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<MetricReport> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Format("empty metric CSV".into()))?
            .split(',')
            .collect();
        let n = (header.len() - 1) / 2;
        let mut report = MetricReport::new(header[1..=n].iter().map(|s| s.to_string()).collect());
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells[0] == "mean" {
                continue;
            }
            let values = cells[1..=n]
                .iter()
                .map(|c| c.parse::<f64>().map_err(|_| Error::Format(format!("bad number {c}"))))
                .collect::<Result<Vec<_>>>()?;
            report.push(cells[0], values)?;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::next_permutation;
    use crate::dsp::FeatureKind;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::{LN_2, PI};

    fn permute(x: &[f64], k: usize, perm: &[usize]) -> Vec<f64> {
        let mut out = x.to_vec();
        for p in 0..3 {
            for i in 0..k {
                out[p * k + i] = x[p * k + perm[i]];
            }
        }
        out
    }

    fn tone(freq: f64, n: usize, sr: f64, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / sr).sin()).collect()
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, -1.0], &[-1.0, 1.0]).unwrap(), 4.0);
        assert_eq!(mse(&[0.3; 4], &[0.3; 4]).unwrap(), 0.0);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn lac_matches_brute_force() {
        let mut rng = crate::seed::rng(31);
        for _ in 0..500 {
            let k = rng.gen_range(1..=6);
            let x: Vec<f64> = (0..3 * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xh: Vec<f64> = (0..3 * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut perm: Vec<usize> = (0..k).collect();
            let mut best = f64::INFINITY;
            loop {
                best = best.min(mse(&x, &permute(&xh, k, &perm)).unwrap());
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            let got = lac(&x, &xh, k).unwrap();
            assert!((got - best).abs() <= 1e-12, "{got} vs {best}");
            assert!(mse(&x, &xh).unwrap() >= got - 1e-15);
        }
    }

    #[test]
    fn lac_edge_cases() {
        let x = [0.1, 0.2, 0.3];
        let xh = [0.4, -0.2, 0.9];
        assert!((lac(&x, &xh, 1).unwrap() - mse(&x, &xh).unwrap()).abs() < 1e-15);
        assert!(lac(&[0.0; 5], &[0.0; 5], 2).is_err());
    }

    #[test]
    fn chamfer_cases() {
        let a = [0.1, 0.5, -0.2, 0.3, 0.9, -0.7];
        let b = permute(&a, 2, &[1, 0]);
        assert_eq!(chamfer(&a, &b, 2).unwrap(), 0.0);
        let c = [0.4, -0.5, 0.1, 0.0, 0.2, 0.8];
        assert_eq!(chamfer(&a, &c, 2).unwrap(), chamfer(&c, &a, 2).unwrap());
        assert!(chamfer(&a, &c, 2).unwrap() > 0.0);
        // Shifting one ω by 1 costs 1/3 in each direction.
        let mut d = a;
        d[0] += 1.0;
        assert!((chamfer(&a, &d, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lsd_cases() {
        let y = tone(440.0, 1024, 16000.0, 0.5);
        assert_eq!(lsd(&y, &y).unwrap(), 0.0);
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        // Bins below the floor stay floored on both sides; none exist here.
        assert!((lsd(&y, &y2).unwrap() - LN_2).abs() < 1e-9);
        let z = tone(1000.0, 1024, 16000.0, 0.3);
        assert_eq!(lsd(&y, &z).unwrap(), lsd(&z, &y).unwrap());
    }

    fn series(data: Vec<f64>, w: usize) -> FrameSeries {
        let n = data.len() / w;
        FrameSeries::new(data, n, w, 1, FeatureKind::Mfcc).unwrap()
    }

    #[test]
    fn dtw_cases() {
        let a = series(vec![1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(dtw_l1(&a, &a).unwrap(), 0.0);
        let p = series(vec![1.0, -1.0], 2);
        let q = series(vec![0.5, 1.0], 2);
        assert_eq!(dtw_l1(&p, &q).unwrap(), 2.5);
        // Repeating a frame costs nothing extra against the original.
        let r = series(vec![0.0, 1.0, 1.0, 5.0], 1);
        let s = series(vec![0.0, 1.0, 5.0], 1);
        assert_eq!(dtw_l1(&r, &s).unwrap(), 0.0);
        assert!(dtw_l1(&series(vec![], 1), &s).is_err());
        assert!(dtw_l1(&a, &s).is_err());
    }

    #[test]
    fn wmfcc_cases() {
        let sr = 16000.0;
        let y = tone(330.0, 2048, sr, 0.5);
        assert_eq!(wmfcc(&y, &y, sr).unwrap(), 0.0);
        let hop = dsp::ms_to_samples(dsp::MFCC_HOP_MS, sr);
        let mut delayed = vec![0.0; hop];
        delayed.extend_from_slice(&y[..y.len() - hop]);
        let warped = wmfcc(&y, &delayed, sr).unwrap();
        let a = dsp::mfcc(&y, sr, WMFCC_COEFFS, dsp::MFCC_WIN_MS, dsp::MFCC_HOP_MS).unwrap();
        let b = dsp::mfcc(&delayed, sr, WMFCC_COEFFS, dsp::MFCC_WIN_MS, dsp::MFCC_HOP_MS).unwrap();
        assert!(warped <= framewise_l1(&a, &b).unwrap());
        assert_eq!(warped, wmfcc(&delayed, &y, sr).unwrap());
    }

    #[test]
    fn sot_pure_tones() {
        let sr = 16000.0;
        let n = 2048;
        let win = 400;
        // Exact bins of a 400-point frame: 40 Hz spacing.
        let (b1, b2) = (25.0, 75.0);
        let y1 = tone(b1 * sr / win as f64, n, sr, 0.8);
        let y2 = tone(b2 * sr / win as f64, n, sr, 0.8);
        let got = sot(&y1, &y2, sr, 25.0, 10.0).unwrap();
        let want = (b2 - b1) / (win / 2) as f64;
        assert!((got - want).abs() / want < 0.02, "{got} vs {want}");
        assert_eq!(sot(&y1, &y1, sr, 25.0, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn mss_cases() {
        let sr = 16000.0;
        let y = tone(500.0, 2048, sr, 0.5);
        let z = vec![0.0; 2048];
        assert_eq!(mss(&y, &y, sr).unwrap(), 0.0);
        let d = mss(&y, &z, sr).unwrap();
        assert!(d > 0.0);
        assert_eq!(d, mss(&z, &y, sr).unwrap());
    }

    #[test]
    fn rms_cosine_cases() {
        let y = tone(200.0, 2048, 16000.0, 0.5);
        assert!((rms_cosine(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        let y3: Vec<f64> = y.iter().map(|v| 3.0 * v).collect();
        assert!((rms_cosine(&y, &y3).unwrap() - 1.0).abs() < 1e-12);
        let z = vec![0.0; 2048];
        assert_eq!(rms_cosine(&z, &z).unwrap(), 1.0);
        let mut first = y.clone();
        first[1000..].iter_mut().for_each(|v| *v = 0.0);
        let mut second = y;
        second[..1400].iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(rms_cosine(&first, &second).unwrap(), 0.0);
    }

    #[test]
    fn report_csv_roundtrip_and_ci() {
        let mut r = MetricReport::new(vec!["lsd".into(), "lac".into()]);
        let mut rng = crate::seed::rng(9);
        for i in 0..30 {
            r.push(i.to_string(), vec![rng.gen::<f64>(), rng.gen::<f64>() * 3.0])
                .unwrap();
        }
        let csv = r.to_csv();
        assert!(csv.starts_with("item,lsd,lac,lsd_ci95,lac_ci95\n"));
        assert_eq!(MetricReport::from_csv(&csv).unwrap(), r);
        let col = r.column("lac").unwrap();
        let m = mean(&col);
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 29.0).sqrt();
        assert!((r.cis()[1] - 1.96 * sd / 30f64.sqrt()).abs() < 1e-9);
        assert!(r.push("x", vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn lac_is_permutation_invariant(seed in any::<u64>(), k in 1usize..6) {
            let mut rng = crate::seed::rng(seed);
            let x: Vec<f64> = (0..3 * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xh: Vec<f64> = (0..3 * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut perm: Vec<usize> = (0..k).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            prop_assert_eq!(lac(&x, &permute(&x, k, &perm), k).unwrap(), 0.0);
            let a = lac(&x, &xh, k).unwrap();
            let b = lac(&x, &permute(&xh, k, &perm), k).unwrap();
            prop_assert!((a - b).abs() <= 1e-15);
        }

        #[test]
        fn dtw_never_exceeds_diagonal(seed in any::<u64>(), n in 1usize..8, w in 1usize..4) {
            let mut rng = crate::seed::rng(seed);
            let a = series((0..n * w).map(|_| rng.gen_range(-1.0..1.0)).collect(), w);
            let b = series((0..n * w).map(|_| rng.gen_range(-1.0..1.0)).collect(), w);
            prop_assert!(dtw_l1(&a, &b).unwrap() <= framewise_l1(&a, &b).unwrap() + 1e-12);
            prop_assert_eq!(dtw_l1(&a, &b).unwrap(), dtw_l1(&b, &a).unwrap());
        }

        #[test]
        fn spectral_w1_symmetric_nonnegative(p in proptest::collection::vec(0.0f64..5.0, 2..16), seed in any::<u64>()) {
            let mut rng = crate::seed::rng(seed);
            let q: Vec<f64> = p.iter().map(|_| rng.gen_range(0.0..5.0)).collect();
            let a = spectral_w1(&p, &q).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - spectral_w1(&q, &p).unwrap()).abs() <= 1e-15);
        }
    }
}
