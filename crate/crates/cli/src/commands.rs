//! The five pipeline stages. Each one reads its inputs, writes into the
//! experiment's output directory and returns the paths it wrote.
//!
//! Random streams are fixed per stage (train 0, finetune 1, sample 2) so
//! that any stage can be rerun alone and reproduce its earlier output.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dcd_core::dcd::Finetuner;
use dcd_core::eval::{level_grid, mode_report, LevelGrid, ModeReport};
use dcd_core::nn::{MlpCritic, MlpGenerator};
use dcd_core::numcore::{Rng, Tensor};
use dcd_core::sampler::{run_chain, Space};
use dcd_core::wgan::{init_networks, Trainer};

use crate::checkpoint::{Checkpoint, Metadata, SAVE_POWER_ITERS};
use crate::config::Experiment;
use crate::csvio;
use crate::error::CliError;

pub const TRAIN_STREAM: u64 = 0;
pub const FINETUNE_STREAM: u64 = 1;
pub const SAMPLE_STREAM: u64 = 2;

pub const GENERATOR_FILE: &str = "generator.json";
pub const CRITIC_FILE: &str = "critic.json";
pub const CRITIC_DCD_FILE: &str = "critic_dcd.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const DCD_LOG_FILE: &str = "dcd_log.csv";

const LOG_EVERY: usize = 500;

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(dir.into())),
            Err(e) => Err(CliError::io(&path)(e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub generator: PathBuf,
    pub critic: PathBuf,
    pub log: PathBuf,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutputs {
    pub critic: PathBuf,
    pub log: PathBuf,
}

#[derive(Debug, Clone)]
pub struct SampleOutputs {
    pub samples: PathBuf,
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct LevelsetOutputs {
    pub csv: PathBuf,
    pub pixmap: PathBuf,
}

fn metadata(exp: &Experiment, iterations: usize) -> Metadata {
    Metadata {
        seed: exp.seed,
        iterations,
        config_hash: exp.hash(),
    }
}

fn load_generator(path: &Path) -> Result<MlpGenerator, CliError> {
    let at = |source| CliError::CheckpointFile {
        path: path.into(),
        source,
    };
    Ok(Checkpoint::load(path).map_err(at)?.into_generator().map_err(at)?.0)
}

fn load_critic(path: &Path) -> Result<MlpCritic, CliError> {
    let at = |source| CliError::CheckpointFile {
        path: path.into(),
        source,
    };
    Ok(Checkpoint::load(path).map_err(at)?.into_critic().map_err(at)?.0)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into())
}

pub fn cmd_train(exp: &Experiment) -> Result<TrainOutputs, CliError> {
    let _lock = OutputLock::acquire(&exp.out_dir)?;
    let spec = exp.spec();
    let cfg = &exp.train;
    let mut rng = Rng::new(exp.seed, TRAIN_STREAM);
    let (g, c) = init_networks(cfg.hidden, &mut rng);
    let mut trainer = Trainer::new(&spec, cfg.clone(), g, c)?;
    for it in 1..=cfg.generator_iters {
        let rec = trainer.iteration(&mut rng)?;
        if it % LOG_EVERY == 0 || it == cfg.generator_iters {
            log::info!(
                "train {it}/{}: critic {:.4} generator {:.4}",
                cfg.generator_iters,
                rec.critic_loss,
                rec.generator_loss
            );
        }
    }
    let (generator, mut critic, log) = trainer.finish();
    critic.refine_power_states(SAVE_POWER_ITERS);

    let out = TrainOutputs {
        generator: exp.out_dir.join(GENERATOR_FILE),
        critic: exp.out_dir.join(CRITIC_FILE),
        log: exp.out_dir.join(TRAIN_LOG_FILE),
    };
    let meta = metadata(exp, cfg.generator_iters);
    Checkpoint::generator(generator, meta.clone()).save(&out.generator)?;
    Checkpoint::critic(critic, meta).save(&out.critic)?;
    csvio::write_train_log(&out.log, &log)?;
    Ok(out)
}

pub fn cmd_finetune(exp: &Experiment, generator: &Path, critic: &Path) -> Result<FinetuneOutputs, CliError> {
    let generator = load_generator(generator)?;
    let critic = load_critic(critic)?;
    let _lock = OutputLock::acquire(&exp.out_dir)?;
    let spec = exp.spec();
    let cfg = &exp.finetune;
    let mut rng = Rng::new(exp.seed, FINETUNE_STREAM);
    let mut tuner = Finetuner::new(&spec, &generator, critic, cfg.clone())?;
    for it in 1..=cfg.iterations {
        let rec = tuner.step(&mut rng)?;
        if it % LOG_EVERY == 0 || it == cfg.iterations {
            log::info!("finetune {it}/{}: objective {:.4}", cfg.iterations, rec.objective);
        }
    }
    let (mut tuned, log) = tuner.finish();
    tuned.refine_power_states(SAVE_POWER_ITERS);

    let out = FinetuneOutputs {
        critic: exp.out_dir.join(CRITIC_DCD_FILE),
        log: exp.out_dir.join(DCD_LOG_FILE),
    };
    Checkpoint::critic(tuned, metadata(exp, cfg.iterations)).save(&out.critic)?;
    csvio::write_dcd_log(&out.log, &log)?;
    Ok(out)
}

/// Draws `n` latent codes, decodes them and runs the configured chain.
///
/// Latent chains start from the codes, pixel chains from the decoded points.
/// With zero steps the output is exactly `G(z)`.
pub fn cmd_sample(exp: &Experiment, generator: &Path, critic: &Path) -> Result<SampleOutputs, CliError> {
    let generator = load_generator(generator)?;
    let critic = load_critic(critic)?;
    let _lock = OutputLock::acquire(&exp.out_dir)?;
    let settings = &exp.sample;
    let out = SampleOutputs {
        samples: exp.out_dir.join(format!("samples_{}.csv", settings.preset)),
        trajectory: settings
            .trajectory
            .then(|| exp.out_dir.join(format!("trajectory_{}.csv", settings.preset))),
    };
    if settings.n == 0 {
        csvio::write_samples(&out.samples, &Tensor::zeros(&[0, 2]))?;
        if let Some(t) = &out.trajectory {
            csvio::write_trajectory(t, &empty_state())?;
        }
        return Ok(out);
    }
    let mut rng = Rng::new(exp.seed, SAMPLE_STREAM);
    let z = rng.gaussian(&[settings.n, 2]);
    let init = match settings.chain.space {
        Space::Latent => z,
        Space::Pixel => generator.generate(&z)?,
    };
    let state = run_chain(&critic, Some(&generator), &init, &settings.chain, &mut rng)?;
    if let Some(rate) = state.acceptance_rate() {
        log::info!("sample: acceptance rate {rate:.3}");
    }
    csvio::write_samples(&out.samples, state.final_positions())?;
    if let Some(t) = &out.trajectory {
        csvio::write_trajectory(t, &state)?;
    }
    Ok(out)
}

fn empty_state() -> dcd_core::sampler::ChainState {
    dcd_core::sampler::ChainState {
        stream: SAMPLE_STREAM,
        recorded_steps: vec![],
        positions: vec![],
        values: vec![],
        accepted_flags: vec![],
        latent: None,
        accepted: 0,
        proposals: 0,
    }
}

pub fn cmd_evaluate(exp: &Experiment, samples: &Path) -> Result<(PathBuf, ModeReport), CliError> {
    let x = csvio::read_samples(samples)?;
    let _lock = OutputLock::acquire(&exp.out_dir)?;
    let report = mode_report(&exp.spec(), &x, exp.hq_sigmas)?;
    let path = exp.out_dir.join(format!("{}_report.json", stem(samples)));
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    fs::write(&path, json).map_err(CliError::io(&path))?;
    log::info!(
        "evaluate: {}/{} modes, hq {:.4}",
        report.modes_recovered,
        report.total_modes,
        report.hq_fraction
    );
    Ok((path, report))
}

pub fn cmd_levelset(exp: &Experiment, critic: &Path) -> Result<LevelsetOutputs, CliError> {
    let name = stem(critic);
    let critic = load_critic(critic)?;
    let _lock = OutputLock::acquire(&exp.out_dir)?;
    let s = &exp.levelset;
    let grid = level_grid(&critic, s.x_range, s.y_range, s.resolution)?;
    let out = LevelsetOutputs {
        csv: exp.out_dir.join(format!("levelset_{name}.csv")),
        pixmap: exp.out_dir.join(format!("levelset_{name}.ppm")),
    };
    csvio::write_level_grid(&out.csv, &grid)?;
    write_pixmap(&out.pixmap, &grid)?;
    Ok(out)
}

/// Dark blue at the grid minimum, through teal, to yellow at the maximum.
fn colour(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 3] = [[68.0, 1.0, 84.0], [33.0, 145.0, 140.0], [253.0, 231.0, 37.0]];
    let t = t.clamp(0.0, 1.0) * 2.0;
    let k = (t.floor() as usize).min(1);
    let f = t - k as f64;
    let mut rgb = [0u8; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        *out = (STOPS[k][c] + f * (STOPS[k + 1][c] - STOPS[k][c])).round() as u8;
    }
    rgb
}

/// Binary PPM, top row at the largest `y`. Colours use per-grid min-max
/// normalization; the header comment records the range.
pub fn write_pixmap(path: &Path, grid: &LevelGrid) -> Result<(), CliError> {
    let (lo, hi) = grid.min_max();
    let span = hi - lo;
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    let io = CliError::io(path);
    let mut bytes = format!(
        "P6\n# critic value, min-max normalized: min={lo} max={hi} x=[{}, {}] y=[{}, {}]\n{} {}\n255\n",
        grid.x_range.0, grid.x_range.1, grid.y_range.0, grid.y_range.1, grid.nx, grid.ny
    )
    .into_bytes();
    for j in (0..grid.ny).rev() {
        for i in 0..grid.nx {
            let t = if span > 0.0 {
                (grid.value(i, j) - lo) / span
            } else {
                0.5
            };
            bytes.extend_from_slice(&colour(t));
        }
    }
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(io)
}
