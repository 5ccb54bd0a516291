use serde::{Deserialize, Serialize};

use crate::nn::MlpGenerator;
use crate::numcore::{Rng, Tensor};

use super::potential::{Latent, Potential};
use super::SamplerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Pixel,
    #[default]
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangevinConfig {
    pub step_size: f64,
    pub steps: usize,
    /// Multiplier on the `√ε` noise term; `None` means 1.
    #[serde(default)]
    pub noise_scale: Option<f64>,
    #[serde(default)]
    pub space: Space,
    #[serde(default)]
    pub mh_correction: bool,
    /// Keep every `record_every`-th state (plus the last); 0 keeps only the
    /// first and last.
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

impl LangevinConfig {
    /// Latent-space chain: 50 steps of size 0.2, noise 0.1.
    pub fn latent_preset() -> Self {
        Self {
            step_size: 0.2,
            steps: 50,
            noise_scale: Some(0.1),
            space: Space::Latent,
            mh_correction: false,
            record_every: 1,
        }
    }

    /// Pixel-space chain: 7 steps of size 10, noise 0.01.
    pub fn pixel_preset() -> Self {
        Self {
            step_size: 10.0,
            steps: 7,
            noise_scale: Some(0.01),
            space: Space::Pixel,
            mh_correction: false,
            record_every: 1,
        }
    }

    pub fn noise(&self) -> f64 {
        self.noise_scale.unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(SamplerError::Config(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if let Some(s) = self.noise_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(SamplerError::Config(format!(
                    "noise_scale must be positive when set, got {s}"
                )));
            }
        }
        Ok(())
    }
}

fn move_rows(x: &Tensor, grad: &Tensor, eps: f64, noise: f64, rng: &mut Rng) -> Tensor {
    let omega = rng.gaussian(x.shape());
    let sd = noise * eps.sqrt();
    let mut out = x.clone();
    out.axpy(0.5 * eps, grad);
    out.axpy(sd, &omega);
    out
}

/// `x' = x + (ε/2)·∇D(x) + noise·√ε·ω`, `ω ~ N(0, I)`.
///
/// Ascends `D`: the chain targets the density `∝ exp(D / noise²)`.
pub fn langevin_step<P: Potential + ?Sized>(
    potential: &P,
    x: &Tensor,
    eps: f64,
    rng: &mut Rng,
    noise_scale: f64,
) -> Result<Tensor, SamplerError> {
    assert!(eps > 0.0, "step size must be positive");
    let (_, grad) = potential.values_and_grads(x)?;
    let next = move_rows(x, &grad, eps, noise_scale, rng);
    if !next.is_finite() {
        return Err(SamplerError::NonFinite {
            step: 0,
            last_finite: x.clone(),
        });
    }
    Ok(next)
}

/// `log α` for one Metropolis-adjusted Langevin proposal `x → x'` on the
/// target `exp(D / T)`, with proposal `N(x + (ε/2)∇D(x), T·ε·I)`.
#[allow(clippy::too_many_arguments)]
pub fn mala_log_acceptance(
    d_x: f64,
    d_prop: f64,
    x: &[f64],
    prop: &[f64],
    grad_x: &[f64],
    grad_prop: &[f64],
    eps: f64,
    temperature: f64,
) -> f64 {
    let log_q = |to: &[f64], from: &[f64], grad_from: &[f64]| {
        let sq: f64 = to
            .iter()
            .zip(from)
            .zip(grad_from)
            .map(|((t, f), g)| (t - f - 0.5 * eps * g).powi(2))
            .sum();
        -sq / (2.0 * eps * temperature)
    };
    (d_prop - d_x) / temperature + log_q(x, prop, grad_prop) - log_q(prop, x, grad_x)
}

/// Current point with its cached values and gradients.
struct Point {
    x: Tensor,
    values: Vec<f64>,
    grads: Tensor,
}

fn mala_move<P: Potential + ?Sized>(
    potential: &P,
    cur: Point,
    eps: f64,
    temperature: f64,
    rng: &mut Rng,
) -> Result<(Point, Vec<bool>), SamplerError> {
    let prop = move_rows(&cur.x, &cur.grads, eps, temperature.sqrt(), rng);
    if !prop.is_finite() {
        return Err(SamplerError::NonFinite {
            step: 0,
            last_finite: cur.x,
        });
    }
    let (pv, pg) = potential.values_and_grads(&prop)?;
    let cols = cur.x.cols();
    let mut x = cur.x.clone();
    let mut values = cur.values.clone();
    let mut grads = cur.grads.clone();
    let mut accepted = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let log_alpha = mala_log_acceptance(
            cur.values[i],
            pv[i],
            cur.x.row(i),
            prop.row(i),
            cur.grads.row(i),
            pg.row(i),
            eps,
            temperature,
        );
        let u = rng.uniform();
        let ok = log_alpha >= 0.0 || u < log_alpha.exp();
        if ok {
            x.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(prop.row(i));
            grads.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(pg.row(i));
            values[i] = pv[i];
        }
        accepted.push(ok);
    }
    Ok((Point { x, values, grads }, accepted))
}

/// One Metropolis-adjusted Langevin step per row on the target `exp(D)`.
pub fn mala_step<P: Potential + ?Sized>(
    potential: &P,
    x: &Tensor,
    eps: f64,
    rng: &mut Rng,
) -> Result<(Tensor, Vec<bool>), SamplerError> {
    assert!(eps > 0.0, "step size must be positive");
    let (values, grads) = potential.values_and_grads(x)?;
    let cur = Point {
        x: x.clone(),
        values,
        grads,
    };
    let (next, accepted) = mala_move(potential, cur, eps, 1.0, rng)?;
    Ok((next.x, accepted))
}

/// One recorded MCMC trajectory for a batch of chains.
#[derive(Debug, Clone)]
pub struct ChainState {
    /// Stream of the generator that drove the chain.
    pub stream: u64,
    /// Step index of each recorded state.
    pub recorded_steps: Vec<usize>,
    /// Sample-space positions (decoded through the generator in latent space).
    pub positions: Vec<Tensor>,
    /// Potential values at each recorded position.
    pub values: Vec<Vec<f64>>,
    /// Per-row outcome of the Metropolis test that produced each recorded
    /// state; `None` for the initial state and for unadjusted chains.
    pub accepted_flags: Vec<Option<Vec<bool>>>,
    /// Final latent codes, for latent-space chains.
    pub latent: Option<Tensor>,
    pub accepted: u64,
    pub proposals: u64,
}

impl ChainState {
    pub fn final_positions(&self) -> &Tensor {
        self.positions.last().expect("at least the initial state is recorded")
    }

    pub fn final_values(&self) -> &[f64] {
        self.values.last().expect("at least the initial state is recorded")
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposals > 0).then(|| self.accepted as f64 / self.proposals as f64)
    }
}

fn should_record(step: usize, total: usize, every: usize) -> bool {
    step == 0 || step == total || (every > 0 && step.is_multiple_of(every))
}

/// Runs `cfg.steps` transitions from `init`.
///
/// Pixel space iterates directly on `init`. Latent space treats `init` as
/// latent codes, follows `∇_z D(G(z))` and records the decoded points.
pub fn run_chain<P: Potential + ?Sized>(
    critic: &P,
    generator: Option<&MlpGenerator>,
    init: &Tensor,
    cfg: &LangevinConfig,
    rng: &mut Rng,
) -> Result<ChainState, SamplerError> {
    cfg.validate()?;
    match cfg.space {
        Space::Pixel => {
            let mut state = run(critic, init, cfg, rng, |x| Ok(x.clone()))?;
            state.latent = None;
            Ok(state)
        }
        Space::Latent => {
            let generator = generator.ok_or(SamplerError::MissingGenerator)?;
            let latent = Latent { generator, critic };
            run(&latent, init, cfg, rng, |z| Ok(generator.generate(z)?))
        }
    }
}

fn run<P: Potential + ?Sized>(
    potential: &P,
    init: &Tensor,
    cfg: &LangevinConfig,
    rng: &mut Rng,
    decode: impl Fn(&Tensor) -> Result<Tensor, SamplerError>,
) -> Result<ChainState, SamplerError> {
    let eps = cfg.step_size;
    let noise = cfg.noise();
    let rows = init.rows() as u64;
    let (values, grads) = potential.values_and_grads(init)?;
    let mut cur = Point {
        x: init.clone(),
        values,
        grads,
    };
    let mut state = ChainState {
        stream: rng.stream(),
        recorded_steps: vec![0],
        positions: vec![decode(init)?],
        values: vec![cur.values.clone()],
        accepted_flags: vec![None],
        latent: None,
        accepted: 0,
        proposals: 0,
    };
    for step in 1..=cfg.steps {
        let mut flags = None;
        let fail = |last: &Tensor| SamplerError::NonFinite {
            step,
            last_finite: last.clone(),
        };
        if cfg.mh_correction {
            let last = cur.x.clone();
            let (next, accepted) = mala_move(potential, cur, eps, noise * noise, rng).map_err(|e| match e {
                SamplerError::NonFinite { .. } => fail(&last),
                other => other,
            })?;
            state.accepted += accepted.iter().filter(|&&a| a).count() as u64;
            state.proposals += rows;
            flags = Some(accepted);
            cur = next;
        } else {
            let next = move_rows(&cur.x, &cur.grads, eps, noise, rng);
            if !next.is_finite() {
                return Err(fail(&cur.x));
            }
            let (values, grads) = potential.values_and_grads(&next)?;
            if !grads.is_finite() || values.iter().any(|v| !v.is_finite()) {
                return Err(fail(&cur.x));
            }
            cur = Point { x: next, values, grads };
        }
        if should_record(step, cfg.steps, cfg.record_every) {
            state.recorded_steps.push(step);
            state.positions.push(decode(&cur.x)?);
            state.values.push(cur.values.clone());
            state.accepted_flags.push(flags);
        }
    }
    state.latent = Some(cur.x);
    Ok(state)
}
