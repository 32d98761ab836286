//! Hyperparameter sweeps over the sampler.
//!
//! A [`GridSpec`] lists values per hyperparameter; cells are the cross
//! product in the fixed axis order λ (or p), T, j, r, mask mode, b, w, c with
//! the last axis varying fastest. Cell `i` runs with seed `master + i`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise::DenoiserSpec;
use crate::error::{Error, Result};
use crate::imgio::{montage, montage_layout, save_png, MontageCell, MontageIndex, MONTAGE_FILL};
use crate::masks::Mask;
use crate::noise::make_linear_schedule;
use crate::pipeline::{candidate_seed, run_traced, MaskMode, SamplerConfig};
use crate::schedules::LambdaSpec;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Constant λ values. Mutually exclusive with `p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<Vec<f64>>,
    /// Knees of the piecewise-linear λ schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, alias = "T", skip_serializing_if = "Option::is_none")]
    pub timesteps: Option<Vec<usize>>,
    #[serde(default, alias = "j", skip_serializing_if = "Option::is_none")]
    pub jump_len: Option<Vec<usize>>,
    /// When absent, every cell uses `r = j`.
    #[serde(default, alias = "r", skip_serializing_if = "Option::is_none")]
    pub resample: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_mode: Option<Vec<MaskMode>>,
    #[serde(default, alias = "b", skip_serializing_if = "Option::is_none")]
    pub heat_buffer: Option<Vec<u32>>,
    #[serde(default, alias = "w", skip_serializing_if = "Option::is_none")]
    pub ring_width: Option<Vec<usize>>,
    #[serde(default, alias = "c", skip_serializing_if = "Option::is_none")]
    pub buffer_c: Option<Vec<f64>>,
    /// Values for everything not swept, including the master seed.
    #[serde(default)]
    pub base: SamplerConfig,
    /// Montage columns; defaults to roughly square.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<usize>,
}

fn axis<T: Clone>(name: &str, values: &Option<Vec<T>>, base: T) -> Result<Vec<T>> {
    match values {
        None => Ok(vec![base]),
        Some(v) if v.is_empty() => Err(Error::invalid(format!("grid axis `{name}` is empty"))),
        Some(v) => Ok(v.clone()),
    }
}

impl GridSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn lambda_axis(&self) -> Result<Vec<LambdaSpec>> {
        match (&self.lambda0, &self.p) {
            (Some(_), Some(_)) => Err(Error::invalid("grid may sweep `lambda0` or `p`, not both")),
            (Some(_), None) => Ok(axis("lambda0", &self.lambda0, 0.0)?
                .into_iter()
                .map(|value| LambdaSpec::Constant { value })
                .collect()),
            (None, Some(_)) => Ok(axis("p", &self.p, 0.0)?
                .into_iter()
                .map(|p| LambdaSpec::LinearP { p })
                .collect()),
            (None, None) => Ok(vec![self.base.lambda]),
        }
    }

    /// Every cell configuration in enumeration order, seeds not yet assigned.
    pub fn cells(&self) -> Result<Vec<SamplerConfig>> {
        let b = &self.base;
        let lambdas = self.lambda_axis()?;
        let ts = axis("timesteps", &self.timesteps, b.timesteps)?;
        let js = axis("jump_len", &self.jump_len, b.jump_len)?;
        let rs: Vec<Option<usize>> = match &self.resample {
            None => vec![None],
            Some(_) => axis("resample", &self.resample, b.resample)?
                .into_iter()
                .map(Some)
                .collect(),
        };
        let modes = axis("mask_mode", &self.mask_mode, b.mask_mode)?;
        let bufs = axis("heat_buffer", &self.heat_buffer, b.heat_buffer)?;
        let widths = axis("ring_width", &self.ring_width, b.ring_width)?;
        let cs = axis("buffer_c", &self.buffer_c, b.buffer_c)?;

        let mut out = Vec::new();
        for &lambda in &lambdas {
            for &timesteps in &ts {
                for &jump_len in &js {
                    for &r in &rs {
                        for &mask_mode in &modes {
                            for &heat_buffer in &bufs {
                                for &ring_width in &widths {
                                    for &buffer_c in &cs {
                                        out.push(SamplerConfig {
                                            lambda,
                                            timesteps,
                                            jump_len,
                                            resample: r.unwrap_or(jump_len),
                                            mask_mode,
                                            heat_buffer,
                                            ring_width,
                                            buffer_c,
                                            candidates: 1,
                                            ..b.clone()
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for cfg in &out {
            cfg.validate()?;
        }
        Ok(out)
    }

    pub fn cell_count(&self) -> Result<usize> {
        Ok(self.cells()?.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub index: usize,
    pub params: SamplerConfig,
    pub seed: u64,
    pub output: Option<String>,
    pub denoiser_calls: usize,
    pub wall_time_ms: f64,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub master_seed: u64,
    pub cells: Vec<CellRecord>,
}

impl RunManifest {
    pub fn succeeded(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| c.status == CellStatus::Ok)
            .count()
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MONTAGE_FILE: &str = "montage.png";
pub const MONTAGE_INDEX_FILE: &str = "montage.json";

pub fn cell_file_name(index: usize) -> String {
    format!("cell_{index:04}.png")
}

pub struct GridInputs<'a> {
    pub scene: &'a ImageTensor,
    pub target: &'a ImageTensor,
    pub mask: &'a Mask,
    pub denoiser: &'a DenoiserSpec,
}

fn run_cell(
    index: usize,
    cfg: SamplerConfig,
    inputs: &GridInputs<'_>,
    out_dir: &Path,
) -> (CellRecord, Option<ImageTensor>) {
    let started = Instant::now();
    let attempt = || -> Result<(usize, ImageTensor)> {
        let sched = make_linear_schedule(cfg.timesteps)?;
        let mut denoiser = inputs.denoiser.build(&sched, inputs.scene.shape())?;
        let out = run_traced(inputs.scene, inputs.target, inputs.mask, &cfg, &mut denoiser)?;
        save_png(&out.image, out_dir.join(cell_file_name(index)))?;
        Ok((out.denoiser_calls, out.image))
    };
    let result = attempt();
    let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    let seed = cfg.seed;
    match result {
        Ok((calls, image)) => {
            info!("cell {index} done: {calls} denoiser calls, {wall_time_ms:.0} ms");
            (
                CellRecord {
                    index,
                    params: cfg,
                    seed,
                    output: Some(cell_file_name(index)),
                    denoiser_calls: calls,
                    wall_time_ms,
                    status: CellStatus::Ok,
                    error: None,
                },
                Some(image),
            )
        }
        Err(e) => {
            warn!("cell {index} failed: {e}");
            (
                CellRecord {
                    index,
                    params: cfg,
                    seed,
                    output: None,
                    denoiser_calls: 0,
                    wall_time_ms,
                    status: CellStatus::Failed,
                    error: Some(e.to_string()),
                },
                None,
            )
        }
    }
}

/// Default montage width: the smallest column count giving a roughly square
/// sheet.
pub fn default_columns(count: usize) -> usize {
    (1..=count.max(1))
        .find(|c| c * c >= count)
        .unwrap_or(1)
}

/// Runs every cell on up to `jobs` threads and writes cell PNGs, the
/// manifest, the montage and its sidecar index into `out_dir`. Individual
/// cell failures are recorded, not returned.
pub fn run_grid(
    spec: &GridSpec,
    inputs: &GridInputs<'_>,
    out_dir: &Path,
    jobs: usize,
) -> Result<RunManifest> {
    let master_seed = spec.base.seed;
    let cells: Vec<SamplerConfig> = spec
        .cells()?
        .into_iter()
        .enumerate()
        .map(|(i, cfg)| SamplerConfig {
            seed: candidate_seed(master_seed, i),
            ..cfg
        })
        .collect();
    fs::create_dir_all(out_dir)?;
    info!("grid: {} cells on {} threads", cells.len(), jobs.max(1));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(CellRecord, Option<ImageTensor>)> = pool.install(|| {
        cells
            .into_par_iter()
            .enumerate()
            .map(|(i, cfg)| run_cell(i, cfg, inputs, out_dir))
            .collect()
    });

    let manifest = RunManifest {
        master_seed,
        cells: results.iter().map(|(r, _)| r.clone()).collect(),
    };
    fs::write(
        out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    let columns = spec.columns.unwrap_or_else(|| default_columns(results.len()));
    let tiles: Vec<ImageTensor> = results
        .iter()
        .map(|(_, img)| {
            img.clone()
                .unwrap_or_else(|| ImageTensor::filled(inputs.scene.shape(), MONTAGE_FILL))
        })
        .collect();
    save_png(&montage(&tiles, columns)?, out_dir.join(MONTAGE_FILE))?;
    let index = MontageIndex {
        cells: manifest
            .cells
            .iter()
            .zip(montage_layout(tiles.len(), columns.min(tiles.len())))
            .map(|(rec, (row, col))| {
                Ok(MontageCell {
                    row,
                    col,
                    params: serde_json::to_value(&rec.params)?,
                    output: rec.output.clone().unwrap_or_default(),
                })
            })
            .collect::<Result<_>>()?,
    };
    fs::write(
        out_dir.join(MONTAGE_INDEX_FILE),
        serde_json::to_string_pretty(&index)?,
    )?;
    Ok(manifest)
}
