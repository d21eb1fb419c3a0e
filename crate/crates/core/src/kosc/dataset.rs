//! On-disk k-osc datasets.
//!
//! A dataset directory holds `meta.json`, `params.f32` and `audio.f32`. The
//! two binary files are raw little-endian `f32`, row-major and
//! record-contiguous. Record `j` is generated from `seed::derive(seed, j)`,
//! so content does not depend on generation order or thread count.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{render, sample_params, ParamVector, TaskVariant, DEFAULT_SAMPLE_RATE};
use crate::error::{invalid, Error, Result};
use crate::seed;

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const PARAMS_FILE: &str = "params.f32";
pub const AUDIO_FILE: &str = "audio.f32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub k: usize,
    pub variant: TaskVariant,
    pub count: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub sample_rate: f64,
    pub param_dim: usize,
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub k: usize,
    pub variant: TaskVariant,
    pub count: usize,
    pub seed: u64,
    pub n_samples: usize,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if self.n_samples == 0 {
            return Err(invalid("n_samples must be at least 1"));
        }
        Ok(())
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            format_version: FORMAT_VERSION,
            k: self.k,
            variant: self.variant,
            count: self.count,
            n_samples: self.n_samples,
            seed: self.seed,
            sample_rate: DEFAULT_SAMPLE_RATE,
            param_dim: self.variant.param_dim(self.k),
        }
    }
}

/// Parameters and audio for record `index`. Parameters are rounded to `f32`
/// before rendering so the stored pair is exactly consistent.
pub fn record(cfg: &DatasetConfig, index: u64) -> Result<(Vec<f32>, Vec<f32>)> {
    let raw = sample_params(cfg.k, cfg.variant, seed::derive(cfg.seed, index));
    let params: Vec<f32> = raw.data.iter().map(|&v| v as f32).collect();
    let x = ParamVector {
        data: params.iter().map(|&v| v as f64).collect(),
    };
    let audio = render(&x, cfg.k, cfg.variant, cfg.n_samples)?;
    Ok((params, audio.samples.iter().map(|&v| v as f32).collect()))
}

const CHUNK: usize = 256;

pub fn generate_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetMeta> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut params_w = BufWriter::new(File::create(out_dir.join(PARAMS_FILE))?);
    let mut audio_w = BufWriter::new(File::create(out_dir.join(AUDIO_FILE))?);
    let mut start = 0;
    while start < cfg.count {
        let end = (start + CHUNK).min(cfg.count);
        let records: Vec<(Vec<f32>, Vec<f32>)> = (start..end)
            .into_par_iter()
            .map(|j| record(cfg, j as u64))
            .collect::<Result<_>>()?;
        for (p, a) in &records {
            write_f32s(&mut params_w, p)?;
            write_f32s(&mut audio_w, a)?;
        }
        start = end;
    }
    params_w.flush()?;
    audio_w.flush()?;
    let meta = cfg.meta();
    fs::write(out_dir.join(META_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(meta)
}

pub fn write_f32s(w: &mut impl Write, values: &[f32]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f32_file(path: &Path) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{} is not a whole number of f32 values",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// A dataset loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    params: Vec<f32>,
    audio: Vec<f32>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Dataset> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format version {}",
                meta.format_version
            )));
        }
        let params = read_f32_file(&dir.join(PARAMS_FILE))?;
        let audio = read_f32_file(&dir.join(AUDIO_FILE))?;
        if params.len() != meta.count * meta.param_dim || audio.len() != meta.count * meta.n_samples {
            return Err(Error::Format(format!(
                "dataset {} has inconsistent file sizes",
                dir.display()
            )));
        }
        Ok(Dataset { meta, params, audio })
    }

    /// Builds an in-memory dataset without touching disk.
    pub fn generate(cfg: &DatasetConfig) -> Result<Dataset> {
        cfg.validate()?;
        let records: Vec<(Vec<f32>, Vec<f32>)> = (0..cfg.count)
            .into_par_iter()
            .map(|j| record(cfg, j as u64))
            .collect::<Result<_>>()?;
        let mut params = Vec::with_capacity(cfg.count * cfg.variant.param_dim(cfg.k));
        let mut audio = Vec::with_capacity(cfg.count * cfg.n_samples);
        for (p, a) in records {
            params.extend(p);
            audio.extend(a);
        }
        Ok(Dataset {
            meta: cfg.meta(),
            params,
            audio,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.count
    }

    pub fn is_empty(&self) -> bool {
        self.meta.count == 0
    }

    pub fn params(&self, i: usize) -> Vec<f64> {
        let d = self.meta.param_dim;
        self.params[i * d..(i + 1) * d].iter().map(|&v| v as f64).collect()
    }

    pub fn audio(&self, i: usize) -> Vec<f64> {
        let n = self.meta.n_samples;
        self.audio[i * n..(i + 1) * n].iter().map(|&v| v as f64).collect()
    }
}
