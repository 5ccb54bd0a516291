//! Adversarial pre-training of the generator and the spectrally normalized
//! critic.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Adam, AdamConfig, Direction, MlpCritic, MlpGenerator, NnError, DEFAULT_HIDDEN};
use crate::numcore::{Rng, Tape, Tensor};
use crate::synth::MixtureSpec;

/// Critic surrogate objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// `mean(D(real)) − mean(D(fake))`.
    Wgan,
    /// `mean(min(0, −1 + D(real))) + mean(min(0, −1 − D(fake)))`.
    #[default]
    Hinge,
    /// `mean(−log(1 + e^{−D(real)})) + mean(−log(1 + e^{D(fake)}))`.
    Logistic,
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// The value the critic maximizes.
pub fn critic_loss(variant: LossVariant, d_real: &[f64], d_fake: &[f64]) -> f64 {
    assert!(!d_real.is_empty() && !d_fake.is_empty(), "empty batch");
    match variant {
        LossVariant::Wgan => mean(d_real) - mean(d_fake),
        LossVariant::Hinge => {
            let r: f64 = d_real.iter().map(|&d| (d - 1.0).min(0.0)).sum();
            let f: f64 = d_fake.iter().map(|&d| (-1.0 - d).min(0.0)).sum();
            r / d_real.len() as f64 + f / d_fake.len() as f64
        }
        LossVariant::Logistic => {
            let r: f64 = d_real.iter().map(|&d| -softplus(-d)).sum();
            let f: f64 = d_fake.iter().map(|&d| -softplus(d)).sum();
            r / d_real.len() as f64 + f / d_fake.len() as f64
        }
    }
}

/// Partial derivatives of [`critic_loss`] with respect to each critic output.
/// Hinge kinks take the zero subgradient.
pub fn critic_loss_grads(variant: LossVariant, d_real: &[f64], d_fake: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (nr, nf) = (d_real.len() as f64, d_fake.len() as f64);
    match variant {
        LossVariant::Wgan => (vec![1.0 / nr; d_real.len()], vec![-1.0 / nf; d_fake.len()]),
        LossVariant::Hinge => (
            d_real.iter().map(|&d| if d < 1.0 { 1.0 / nr } else { 0.0 }).collect(),
            d_fake.iter().map(|&d| if d > -1.0 { -1.0 / nf } else { 0.0 }).collect(),
        ),
        LossVariant::Logistic => (
            d_real.iter().map(|&d| sigmoid(-d) / nr).collect(),
            d_fake.iter().map(|&d| -sigmoid(d) / nf).collect(),
        ),
    }
}

/// The value the generator minimizes: `−mean(D(fake))`, for every variant.
pub fn generator_loss(d_fake: &[f64]) -> f64 {
    assert!(!d_fake.is_empty(), "empty batch");
    -mean(d_fake)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub critic_steps: usize,
    pub generator_iters: usize,
    pub hidden: usize,
    pub critic_adam: AdamConfig,
    pub generator_adam: AdamConfig,
    pub loss: LossVariant,
    pub lr_decay: LrDecay,
    /// Power iterations per spectral normalization during training.
    pub sn_power_iters: usize,
    pub seed: u64,
    /// Stores elapsed seconds in the log. Off by default: a timed log is no
    /// longer reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            critic_steps: 5,
            generator_iters: 10_000,
            hidden: DEFAULT_HIDDEN,
            critic_adam: AdamConfig::default(),
            generator_adam: AdamConfig::default(),
            loss: LossVariant::Hinge,
            lr_decay: LrDecay::None,
            sn_power_iters: 1,
            seed: 0,
            record_wall_time: false,
        }
    }
}

pub(crate) fn check_adam(name: &str, a: &AdamConfig) -> Result<(), String> {
    let ok =
        a.lr > 0.0 && a.lr.is_finite() && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0;
    if ok {
        Ok(())
    } else {
        Err(format!("{name}: need lr > 0, 0 <= beta1, beta2 < 1, eps > 0"))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.critic_steps == 0 {
            return fail("critic_steps must be at least 1".into());
        }
        if self.hidden == 0 {
            return fail("hidden must be at least 1".into());
        }
        if self.sn_power_iters == 0 {
            return fail("sn_power_iters must be at least 1".into());
        }
        check_adam("critic_adam", &self.critic_adam).map_err(TrainError::Config)?;
        check_adam("generator_adam", &self.generator_adam).map_err(TrainError::Config)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Mean critic objective over this iteration's critic steps.
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub wall_seconds: Option<f64>,
}

/// Learning-rate schedule over `generator_iters` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrDecay {
    /// Constant rates.
    #[default]
    None,
    /// Both rates scaled by `1 − t/T` at iteration `t` of `T`.
    Linear,
}

/// One record per generator iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

/// Networks and log at the moment training aborted.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub generator: MlpGenerator,
    pub critic: MlpCritic,
    pub log: TrainLog,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite {stage} loss {value} at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        stage: &'static str,
        value: f64,
        snapshot: Box<Snapshot>,
    },
}

/// Data batch and latent batch, always drawn in this order.
pub fn draw_batches(spec: &MixtureSpec, rng: &mut Rng, m: usize) -> (Tensor, Tensor) {
    let real = spec.sample(rng, m);
    let z = rng.gaussian(&[m, 2]);
    (real, z)
}

/// Outcome of one critic update, measured before the weights moved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticUpdate {
    pub objective: f64,
    pub mean_real: f64,
    pub mean_fake: f64,
}

/// One Adam ascent step of the critic on `objective(D(real), D(fake))`,
/// followed by spectral normalization.
///
/// `objective` returns the objective value and its partial derivatives with
/// respect to every critic output.
pub fn critic_update<F>(
    critic: &mut MlpCritic,
    adam: &mut Adam,
    real: &Tensor,
    fake: &Tensor,
    sn_power_iters: usize,
    objective: F,
) -> Result<CriticUpdate, NnError>
where
    F: FnOnce(&[f64], &[f64]) -> (f64, Vec<f64>, Vec<f64>),
{
    let n_real = real.rows();
    let mut tape = Tape::new();
    let x = tape.constant(real.vstack(fake)?);
    let trace = critic.mlp().record(&mut tape, x, true)?;
    let d = tape.value(trace.output).data();
    let (d_real, d_fake) = d.split_at(n_real);
    let (value, mut g_real, g_fake) = objective(d_real, d_fake);
    let update = CriticUpdate {
        objective: value,
        mean_real: mean(d_real),
        mean_fake: mean(d_fake),
    };
    g_real.extend(g_fake);
    let seed = Tensor::new(vec![g_real.len(), 1], g_real).map_err(NnError::from)?;
    let mut grads = tape.backward(trace.output, &seed)?;
    let grads: Vec<Tensor> = trace.params.iter().map(|&p| grads.take(p)).collect();
    critic.adam_step(adam, &grads, Direction::Ascend)?;
    critic.spectral_normalize(sn_power_iters);
    Ok(update)
}

/// Stepwise driver for the alternating critic/generator schedule.
pub struct Trainer<'a> {
    spec: &'a MixtureSpec,
    cfg: TrainConfig,
    generator: MlpGenerator,
    critic: MlpCritic,
    critic_adam: Adam,
    generator_adam: Adam,
    log: TrainLog,
    started: Option<Instant>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        spec: &'a MixtureSpec,
        cfg: TrainConfig,
        generator: MlpGenerator,
        critic: MlpCritic,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        Ok(Self {
            spec,
            critic_adam: Adam::new(cfg.critic_adam),
            generator_adam: Adam::new(cfg.generator_adam),
            started: cfg.record_wall_time.then(Instant::now),
            cfg,
            generator,
            critic,
            log: TrainLog::default(),
        })
    }

    pub fn generator(&self) -> &MlpGenerator {
        &self.generator
    }

    pub fn critic(&self) -> &MlpCritic {
        &self.critic
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    fn abort(&self, stage: &'static str, value: f64) -> TrainError {
        TrainError::NonFinite {
            iteration: self.log.records.len(),
            stage,
            value,
            snapshot: Box::new(Snapshot {
                generator: self.generator.clone(),
                critic: self.critic.clone(),
                log: self.log.clone(),
            }),
        }
    }

    /// One critic ascent step on a fresh data/latent batch.
    pub fn critic_step(&mut self, rng: &mut Rng) -> Result<CriticUpdate, TrainError> {
        let (real, z) = draw_batches(self.spec, rng, self.cfg.batch_size);
        let fake = self.generator.generate(&z)?;
        let variant = self.cfg.loss;
        let before = self.critic.clone();
        let update = critic_update(
            &mut self.critic,
            &mut self.critic_adam,
            &real,
            &fake,
            self.cfg.sn_power_iters,
            |r, f| {
                let (gr, gf) = critic_loss_grads(variant, r, f);
                (critic_loss(variant, r, f), gr, gf)
            },
        );
        match update {
            Ok(u) if u.objective.is_finite() => Ok(u),
            Ok(u) => {
                self.critic = before;
                Err(self.abort("critic", u.objective))
            }
            Err(NnError::NonFiniteGradient { .. }) => {
                self.critic = before;
                Err(self.abort("critic", f64::NAN))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// One generator descent step on `−mean(D(G(z)))`.
    pub fn generator_step(&mut self, rng: &mut Rng) -> Result<f64, TrainError> {
        let b = self.cfg.batch_size;
        let z = rng.gaussian(&[b, 2]);
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let g = self.generator.mlp().record(&mut tape, zv, true)?;
        let d = self.critic.mlp().record(&mut tape, g.output, false)?;
        let loss = generator_loss(tape.value(d.output).data());
        if !loss.is_finite() {
            return Err(self.abort("generator", loss));
        }
        let seed = Tensor::filled(&[b, 1], -1.0 / b as f64);
        let mut grads = tape.backward(d.output, &seed).map_err(NnError::from)?;
        let grads: Vec<Tensor> = g.params.iter().map(|&p| grads.take(p)).collect();
        match self
            .generator
            .adam_step(&mut self.generator_adam, &grads, Direction::Descend)
        {
            Ok(()) => Ok(loss),
            Err(NnError::NonFiniteGradient { .. }) => Err(self.abort("generator", f64::NAN)),
            Err(e) => Err(e.into()),
        }
    }

    /// `critic_steps` critic updates then one generator update; appends one
    /// log record.
    pub fn iteration(&mut self, rng: &mut Rng) -> Result<&TrainRecord, TrainError> {
        if self.cfg.lr_decay == LrDecay::Linear {
            let t = self.log.records.len() as f64;
            let keep = (1.0 - t / self.cfg.generator_iters.max(1) as f64).max(0.0);
            self.critic_adam.set_lr(self.cfg.critic_adam.lr * keep);
            self.generator_adam.set_lr(self.cfg.generator_adam.lr * keep);
        }
        let mut total = 0.0;
        for _ in 0..self.cfg.critic_steps {
            total += self.critic_step(rng)?.objective;
        }
        let generator_loss = self.generator_step(rng)?;
        let record = TrainRecord {
            iteration: self.log.records.len(),
            critic_loss: total / self.cfg.critic_steps as f64,
            generator_loss,
            wall_seconds: self.started.map(|t| t.elapsed().as_secs_f64()),
        };
        self.log.records.push(record);
        Ok(self.log.records.last().expect("just pushed"))
    }

    pub fn finish(self) -> (MlpGenerator, MlpCritic, TrainLog) {
        (self.generator, self.critic, self.log)
    }
}

/// Fresh networks drawn from `rng`.
pub fn init_networks(hidden: usize, rng: &mut Rng) -> (MlpGenerator, MlpCritic) {
    let generator = MlpGenerator::new(hidden, rng);
    let critic = MlpCritic::new(hidden, rng);
    (generator, critic)
}

/// Initializes both networks from `rng` and runs `cfg.generator_iters`
/// iterations.
pub fn train(
    spec: &MixtureSpec,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(MlpGenerator, MlpCritic, TrainLog), TrainError> {
    cfg.validate()?;
    let (generator, critic) = init_networks(cfg.hidden, rng);
    let mut trainer = Trainer::new(spec, cfg.clone(), generator, critic)?;
    for _ in 0..cfg.generator_iters {
        trainer.iteration(rng)?;
    }
    Ok(trainer.finish())
}
