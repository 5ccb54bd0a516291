//! Contrastive-divergence fine-tuning of a pre-trained critic.
//!
//! Each iteration contrasts a data batch against generator samples that a
//! short Langevin chain has pushed towards higher critic value, and takes
//! one Adam ascent step on `mean D(data) − mean D(chain)`. The generator is
//! never updated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Adam, AdamConfig, MlpCritic, MlpGenerator, NnError};
use crate::numcore::{Rng, Tensor};
use crate::sampler::{run_chain, LangevinConfig, SamplerError, Space};
use crate::synth::MixtureSpec;
use crate::wgan::{check_adam, critic_update, draw_batches};

/// `mean(d_real) − mean(d_chain)`.
pub fn dcd_objective(d_real: &[f64], d_chain: &[f64]) -> f64 {
    assert_eq!(d_real.len(), d_chain.len(), "batch sizes differ");
    assert!(!d_real.is_empty(), "empty batch");
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    mean(d_real) - mean(d_chain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcdConfig {
    pub iterations: usize,
    pub chain: LangevinConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub sn_power_iters: usize,
    pub seed: u64,
}

impl Default for DcdConfig {
    /// 1000 iterations of latent chains, critic learning rate `2e-5`.
    fn default() -> Self {
        Self {
            iterations: 1000,
            chain: LangevinConfig::latent_preset(),
            adam: AdamConfig::default().with_lr(2e-5),
            batch_size: 64,
            sn_power_iters: 1,
            seed: 0,
        }
    }
}

impl DcdConfig {
    pub fn validate(&self) -> Result<(), DcdError> {
        if self.batch_size == 0 {
            return Err(DcdError::Config("batch_size must be at least 1".into()));
        }
        if self.sn_power_iters == 0 {
            return Err(DcdError::Config("sn_power_iters must be at least 1".into()));
        }
        check_adam("adam", &self.adam).map_err(DcdError::Config)?;
        self.chain.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcdRecord {
    pub iteration: usize,
    pub objective: f64,
    pub mean_real: f64,
    pub mean_chain: f64,
    /// Fraction of accepted proposals, when the chain is Metropolis-adjusted.
    pub acceptance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DcdLog {
    pub records: Vec<DcdRecord>,
}

#[derive(Debug, Error)]
pub enum DcdError {
    #[error("invalid fine-tuning config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("non-finite objective {value} at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        value: f64,
        critic: Box<MlpCritic>,
        log: DcdLog,
    },
}

/// Stepwise driver; [`dcd_finetune`] runs it for `cfg.iterations` steps.
pub struct Finetuner<'a> {
    spec: &'a MixtureSpec,
    generator: &'a MlpGenerator,
    cfg: DcdConfig,
    critic: MlpCritic,
    adam: Adam,
    log: DcdLog,
}

impl<'a> Finetuner<'a> {
    pub fn new(
        spec: &'a MixtureSpec,
        generator: &'a MlpGenerator,
        critic: MlpCritic,
        cfg: DcdConfig,
    ) -> Result<Self, DcdError> {
        cfg.validate()?;
        if generator.mlp().output_dim() != critic.mlp().input_dim() {
            return Err(DcdError::Config(format!(
                "generator emits {} dims but critic expects {}",
                generator.mlp().output_dim(),
                critic.mlp().input_dim()
            )));
        }
        Ok(Self {
            spec,
            generator,
            adam: Adam::new(cfg.adam),
            cfg,
            critic,
            log: DcdLog::default(),
        })
    }

    pub fn critic(&self) -> &MlpCritic {
        &self.critic
    }

    pub fn log(&self) -> &DcdLog {
        &self.log
    }

    /// Chain-refreshed negatives for the latent batch `z`.
    fn negatives(&self, z: &Tensor, rng: &mut Rng) -> Result<(Tensor, Option<f64>), DcdError> {
        let init = match self.cfg.chain.space {
            Space::Pixel => self.generator.generate(z)?,
            Space::Latent => z.clone(),
        };
        let chain = run_chain(&self.critic, Some(self.generator), &init, &self.cfg.chain, rng)?;
        Ok((chain.final_positions().clone(), chain.acceptance_rate()))
    }

    pub fn step(&mut self, rng: &mut Rng) -> Result<&DcdRecord, DcdError> {
        let (real, z) = draw_batches(self.spec, rng, self.cfg.batch_size);
        let (negatives, acceptance) = self.negatives(&z, rng)?;
        let before = self.critic.clone();
        let update = critic_update(
            &mut self.critic,
            &mut self.adam,
            &real,
            &negatives,
            self.cfg.sn_power_iters,
            |r, c| {
                let m = r.len() as f64;
                (dcd_objective(r, c), vec![1.0 / m; r.len()], vec![-1.0 / m; c.len()])
            },
        );
        let iteration = self.log.records.len();
        let update = match update {
            Ok(u) if u.objective.is_finite() => u,
            Ok(u) => return Err(self.abort(before, iteration, u.objective)),
            Err(NnError::NonFiniteGradient { .. }) => return Err(self.abort(before, iteration, f64::NAN)),
            Err(e) => return Err(e.into()),
        };
        self.log.records.push(DcdRecord {
            iteration,
            objective: update.objective,
            mean_real: update.mean_real,
            mean_chain: update.mean_fake,
            acceptance,
        });
        Ok(self.log.records.last().expect("just pushed"))
    }

    fn abort(&mut self, before: MlpCritic, iteration: usize, value: f64) -> DcdError {
        self.critic = before;
        DcdError::NonFinite {
            iteration,
            value,
            critic: Box::new(self.critic.clone()),
            log: self.log.clone(),
        }
    }

    pub fn finish(self) -> (MlpCritic, DcdLog) {
        (self.critic, self.log)
    }
}

/// Fine-tunes a copy of `critic` for `cfg.iterations` steps.
pub fn dcd_finetune(
    generator: &MlpGenerator,
    critic: &MlpCritic,
    spec: &MixtureSpec,
    cfg: &DcdConfig,
    rng: &mut Rng,
) -> Result<(MlpCritic, DcdLog), DcdError> {
    let mut tuner = Finetuner::new(spec, generator, critic.clone(), cfg.clone())?;
    for _ in 0..cfg.iterations {
        tuner.step(rng)?;
    }
    Ok(tuner.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wgan::init_networks;

    #[test]
    fn objective_arithmetic() {
        assert_eq!(dcd_objective(&[0.5, -1.0], &[0.5, -1.0]), 0.0);
        assert_eq!(dcd_objective(&[1.0; 4], &[-1.0; 4]), 2.0);
        let r = [0.3, 1.7, -0.2];
        let c = [0.9, -0.4, 0.1];
        let shift = |v: &[f64]| v.iter().map(|x| x + 3.25).collect::<Vec<_>>();
        assert!((dcd_objective(&r, &c) - dcd_objective(&shift(&r), &shift(&c))).abs() < 1e-15);
    }

    #[test]
    fn zero_iterations_is_identity() {
        let (g, c) = init_networks(8, &mut Rng::new(1, 0));
        let cfg = DcdConfig {
            iterations: 0,
            ..DcdConfig::default()
        };
        let (out, log) = dcd_finetune(&g, &c, &MixtureSpec::ring8(), &cfg, &mut Rng::new(1, 1)).unwrap();
        assert_eq!(out, c);
        assert!(log.records.is_empty());
    }

    #[test]
    fn logs_one_record_per_iteration() {
        let (g, c) = init_networks(8, &mut Rng::new(2, 0));
        let mut cfg = DcdConfig {
            iterations: 3,
            batch_size: 4,
            ..DcdConfig::default()
        };
        cfg.chain.steps = 2;
        cfg.chain.mh_correction = true;
        let (_, log) = dcd_finetune(&g, &c, &MixtureSpec::ring8(), &cfg, &mut Rng::new(2, 1)).unwrap();
        assert_eq!(log.records.len(), 3);
        for r in &log.records {
            let a = r.acceptance.unwrap();
            assert!((0.0..=1.0).contains(&a));
            assert!((r.objective - (r.mean_real - r.mean_chain)).abs() < 1e-12);
        }
    }
}
