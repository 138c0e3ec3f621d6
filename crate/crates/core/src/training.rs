//! WGAN training loops: plain generator fitting, the adversarial second
//! hypothesis (divergence minus λ·risk to a frozen `h1`), its per-sample
//! variant, and teacher-regularized students (divergence plus λ·risk).
//!
//! All loops share one engine, [`Wgan`]. A generator step minimizes
//! `−mean d(h(x)) + w·risk`, where the risk term is measured against a
//! frozen anchor network (or a single anchor point) and `w` is `−λ` for
//! adversaries and `+λ` for students. With `w = 0` every variant performs
//! exactly the plain WGAN update sequence.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domains::{squared_distance, DomainPair, SampleSet, Side};
use crate::error::{Error, Result};
use crate::nn::{Architecture, Mlp, Optimizer, OptimizerKind, Trace};
use crate::rng;
use crate::transport::{critic_objective_grad, exact_w1};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Generator steps per epoch; 0 means one pass over the training set.
    pub steps_per_epoch: usize,
    pub critic_steps: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub critic_learning_rate: f64,
    pub critic_widths: Vec<usize>,
    pub clip_c: f64,
    pub lambda: f64,
    pub epsilon0: f64,
    /// Size of each training set.
    pub n_train: usize,
    /// Size of each held-out set used for exact divergences.
    pub n_div: usize,
    /// Sample size for evaluation-only ground-truth risks.
    pub n_eval: usize,
    /// Epochs of adversary training per outer epoch (`T2`).
    pub adversary_epochs: usize,
    pub seed: u64,
    /// Seed of the training and held-out sets; defaults to `seed`.
    pub data_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            steps_per_epoch: 0,
            critic_steps: 5,
            optimizer: OptimizerKind::RmsProp,
            learning_rate: 5e-4,
            critic_learning_rate: 5e-4,
            critic_widths: vec![32, 32],
            clip_c: 0.1,
            lambda: 1.0,
            epsilon0: 0.2,
            n_train: 512,
            n_div: 256,
            n_eval: 2048,
            adversary_epochs: 20,
            seed: 0,
            data_seed: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::contract("batch size must be at least 2"));
        }
        if self.critic_steps == 0 {
            return Err(Error::contract("critic steps must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !(self.epsilon0 >= 0.0) {
            return Err(Error::contract("lambda and epsilon0 must be nonnegative"));
        }
        if !(self.clip_c > 0.0) {
            return Err(Error::contract("clip value must be positive"));
        }
        if self.n_train < 2 || self.n_div == 0 || self.n_eval == 0 {
            return Err(Error::contract("sample sizes must be positive"));
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Same data, different initialization and batch order.
    pub fn reseeded(&self, tag: &str) -> TrainConfig {
        TrainConfig {
            seed: rng::derive_seed(self.seed, rng::tag(tag)),
            data_seed: Some(self.data_seed()),
            ..self.clone()
        }
    }

    pub fn with_epochs(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            ..self.clone()
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> TrainConfig {
        TrainConfig {
            lambda,
            ..self.clone()
        }
    }

    pub(crate) fn steps_per_epoch(&self) -> usize {
        if self.steps_per_epoch > 0 {
            self.steps_per_epoch
        } else {
            self.n_train.div_ceil(self.batch_size).max(1)
        }
    }
}

/// Training sets and the fixed held-out evaluation sets of one run.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub train_a: SampleSet,
    pub train_b: SampleSet,
    pub holdout_a: SampleSet,
    pub holdout_b: SampleSet,
    /// Seed of the ground-truth evaluation sample.
    pub eval_seed: u64,
}

impl TrainingData {
    pub fn new(pair: &DomainPair, cfg: &TrainConfig) -> Result<TrainingData> {
        let seed = cfg.data_seed();
        let train = rng::derive_seed(seed, rng::tag("train"));
        let holdout = rng::derive_seed(seed, rng::tag("holdout"));
        Ok(TrainingData {
            train_a: pair.sample(Side::A, cfg.n_train, train)?,
            train_b: pair.sample(Side::B, cfg.n_train, train)?,
            holdout_a: pair.sample(Side::A, cfg.n_div, holdout)?,
            holdout_b: pair.sample(Side::B, cfg.n_div, holdout)?,
            eval_seed: rng::derive_seed(seed, rng::tag("eval")),
        })
    }

    /// Exact held-out `W(h ∘ S_A', S_B')`.
    pub fn divergence(&self, h: &Mlp) -> Result<f64> {
        Ok(exact_w1(&self.holdout_a.map(h), &self.holdout_b)?.value)
    }
}

/// `(1/|S|) Σ ‖f1(x) − f2(x)‖²`.
pub fn empirical_risk(f1: &Mlp, f2: &Mlp, s: &SampleSet) -> Result<f64> {
    if f1.input_dim() != s.dim() || f2.input_dim() != s.dim() || f1.output_dim() != f2.output_dim() {
        return Err(Error::contract(format!(
            "cannot compare {} and {} on {}-dimensional samples",
            f1.arch(),
            f2.arch(),
            s.dim()
        )));
    }
    Ok(crate::domains::mean_squared_gap(f1, f2, s))
}

/// Extra term in the generator objective.
#[derive(Debug, Clone, Copy)]
pub enum RiskAnchor<'a> {
    None,
    /// `weight · mean_batch ‖h(x) − anchor(x)‖²`.
    Net { anchor: &'a Mlp, weight: f64 },
    /// `weight · ‖h(x) − target‖²` at the single point `x`.
    Point { x: &'a [f64], target: &'a [f64], weight: f64 },
}

/// How generator inputs are drawn.
#[derive(Debug, Clone, Copy)]
pub enum InputSampler<'a> {
    /// Uniform minibatches from the training set.
    Uniform,
    /// Each element is `x` with probability one half, else a training row.
    PointMixture { x: &'a [f64] },
}

/// One minibatch of generator inputs.
pub fn draw_batch<'a, R: Rng>(
    set: &'a SampleSet,
    sampler: InputSampler<'a>,
    size: usize,
    rng: &mut R,
) -> Vec<&'a [f64]> {
    match sampler {
        InputSampler::Uniform => rand::seq::index::sample(rng, set.len(), size.min(set.len()))
            .into_iter()
            .map(|i| set.row(i))
            .collect(),
        InputSampler::PointMixture { x } => (0..size)
            .map(|_| {
                if rng.random_bool(0.5) {
                    x
                } else {
                    set.row(rng.random_range(0..set.len()))
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochLosses {
    pub loss_gen: f64,
    pub loss_critic: f64,
    pub risk_aux: f64,
}

/// A generator with its own critic, optimizers and batch stream.
#[derive(Debug, Clone)]
pub struct Wgan {
    pub generator: Mlp,
    critic: Mlp,
    gen_opt: Optimizer,
    critic_opt: Optimizer,
    rng: ChaCha8Rng,
    epochs_done: usize,
}

impl Wgan {
    /// Fresh generator and critic, both initialized from `cfg.seed`.
    pub fn init(arch: &Architecture, cfg: &TrainConfig) -> Result<Wgan> {
        arch.validate_generator()?;
        let mut init = rng::stream(rng::derive_seed(cfg.seed, rng::tag("init")), 0);
        let generator = Mlp::init(arch.clone(), &mut init)?;
        Wgan::with_generator(generator, cfg)
    }

    /// Continue from an existing generator with a fresh critic and optimizers.
    pub fn with_generator(generator: Mlp, cfg: &TrainConfig) -> Result<Wgan> {
        cfg.validate()?;
        let dim = generator.output_dim();
        let mut init = rng::stream(rng::derive_seed(cfg.seed, rng::tag("init")), 1);
        let mut critic = Mlp::init(Architecture::critic(dim, cfg.critic_widths.clone()), &mut init)?;
        critic.clip_weights(cfg.clip_c)?;
        Ok(Wgan {
            gen_opt: Optimizer::new(cfg.optimizer, cfg.learning_rate, generator.params().len())?,
            critic_opt: Optimizer::new(cfg.optimizer, cfg.critic_learning_rate, critic.params().len())?,
            generator,
            critic,
            rng: rng::stream(rng::derive_seed(cfg.seed, rng::tag("batches")), 0),
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// One epoch: `steps_per_epoch` generator steps, each preceded by
    /// `critic_steps` critic ascent steps.
    pub fn epoch(
        &mut self,
        inputs: &SampleSet,
        targets: &SampleSet,
        sampler: InputSampler<'_>,
        anchor: RiskAnchor<'_>,
        cfg: &TrainConfig,
    ) -> Result<EpochLosses> {
        let steps = cfg.steps_per_epoch();
        let mut totals = EpochLosses::default();
        let mut gen_trace = Trace::default();
        let mut critic_trace = Trace::default();
        let mut critic_grad = vec![0.0; self.critic.params().len()];
        let mut gen_grad = vec![0.0; self.generator.params().len()];
        let epoch = self.epochs_done + 1;
        for _ in 0..steps {
            for _ in 0..cfg.critic_steps {
                let xs = draw_batch(inputs, sampler, cfg.batch_size, &mut self.rng);
                let fake: Vec<Vec<f64>> = xs.iter().map(|x| self.generator.eval(x)).collect();
                let fake: Vec<&[f64]> = fake.iter().map(Vec::as_slice).collect();
                let real = draw_batch(targets, InputSampler::Uniform, cfg.batch_size, &mut self.rng);
                critic_grad.fill(0.0);
                let objective =
                    critic_objective_grad(&self.critic, &real, &fake, &mut critic_grad, &mut critic_trace)?;
                if !objective.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        context: format!("critic objective is {objective}"),
                    });
                }
                critic_grad.iter_mut().for_each(|g| *g = -*g);
                self.critic_opt.step(self.critic.params_mut(), &critic_grad);
                self.critic.clip_weights(cfg.clip_c)?;
                totals.loss_critic -= objective;
            }

            let xs = draw_batch(inputs, sampler, cfg.batch_size, &mut self.rng);
            gen_grad.fill(0.0);
            let inv = 1.0 / xs.len() as f64;
            let mut loss = 0.0;
            let mut risk = 0.0;
            for x in &xs {
                self.generator.trace_into(x, &mut gen_trace);
                let z = gen_trace.output().to_vec();
                self.critic.trace_into(&z, &mut critic_trace);
                loss -= inv * critic_trace.output()[0];
                let mut seed = self.critic.backward_from(&critic_trace, &[-inv], None)?;
                if let RiskAnchor::Net { anchor, weight } = anchor {
                    let a = anchor.eval(x);
                    let r = squared_distance(&z, &a);
                    risk += inv * r;
                    loss += weight * inv * r;
                    for ((s, zi), ai) in seed.iter_mut().zip(&z).zip(&a) {
                        *s += weight * inv * 2.0 * (zi - ai);
                    }
                }
                self.generator.backward_from(&gen_trace, &seed, Some(&mut gen_grad))?;
            }
            if let RiskAnchor::Point { x, target, weight } = anchor {
                self.generator.trace_into(x, &mut gen_trace);
                let z = gen_trace.output().to_vec();
                let r = squared_distance(&z, target);
                risk += r;
                loss += weight * r;
                let seed: Vec<f64> = z.iter().zip(target).map(|(zi, ti)| weight * 2.0 * (zi - ti)).collect();
                self.generator.backward_from(&gen_trace, &seed, Some(&mut gen_grad))?;
            }
            if !loss.is_finite() || gen_grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    context: format!("generator loss is {loss}"),
                });
            }
            self.gen_opt.step(self.generator.params_mut(), &gen_grad);
            if self.generator.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    context: "generator parameters became non-finite".into(),
                });
            }
            totals.loss_gen += loss;
            totals.risk_aux += risk;
        }
        self.epochs_done += 1;
        let s = steps as f64;
        Ok(EpochLosses {
            loss_gen: totals.loss_gen / s,
            loss_critic: totals.loss_critic / (s * cfg.critic_steps as f64),
            risk_aux: totals.risk_aux / s,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub epoch: usize,
    pub params: Vec<f64>,
    /// Exact held-out divergence of the generator after this epoch.
    pub div_h: f64,
    pub aux: BTreeMap<String, f64>,
}

impl CheckpointRecord {
    fn new(epoch: usize, net: &Mlp, div_h: f64, losses: EpochLosses) -> CheckpointRecord {
        let aux = BTreeMap::from([
            ("risk_aux".to_string(), losses.risk_aux),
            ("loss_gen".to_string(), losses.loss_gen),
            ("loss_critic".to_string(), losses.loss_critic),
        ]);
        CheckpointRecord {
            epoch,
            params: net.params().to_vec(),
            div_h,
            aux,
        }
    }

    pub fn loss(&self, key: &str) -> f64 {
        self.aux.get(key).copied().unwrap_or(f64::NAN)
    }
}

/// `epoch,div_h,risk_aux,loss_gen,loss_critic`.
pub fn trace_csv(records: &[CheckpointRecord]) -> String {
    let mut out = String::from("epoch,div_h,risk_aux,loss_gen,loss_critic\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            r.div_h,
            r.loss("risk_aux"),
            r.loss("loss_gen"),
            r.loss("loss_critic")
        )
        .expect("writing to a String cannot fail");
    }
    out
}

fn fit(
    wgan: &mut Wgan,
    data: &TrainingData,
    sampler: InputSampler<'_>,
    anchor: RiskAnchor<'_>,
    cfg: &TrainConfig,
    record: bool,
) -> Result<Vec<CheckpointRecord>> {
    let mut records = Vec::new();
    for _ in 0..cfg.epochs {
        let losses = wgan.epoch(&data.train_a, &data.train_b, sampler, anchor, cfg)?;
        if record {
            let div = data.divergence(&wgan.generator)?;
            records.push(CheckpointRecord::new(wgan.epochs_done(), &wgan.generator, div, losses));
        }
    }
    Ok(records)
}

/// Fit a generator by WGAN training, recording the held-out divergence after
/// every epoch.
pub fn train_generator(
    pair: &DomainPair,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<CheckpointRecord>)> {
    let data = TrainingData::new(pair, cfg)?;
    train_generator_on(&data, pair, arch, cfg)
}

pub fn train_generator_on(
    data: &TrainingData,
    pair: &DomainPair,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<CheckpointRecord>)> {
    check_arch(pair, arch)?;
    let mut wgan = Wgan::init(arch, cfg)?;
    let records = fit(&mut wgan, data, InputSampler::Uniform, RiskAnchor::None, cfg, true)?;
    Ok((wgan.generator, records))
}

fn check_arch(pair: &DomainPair, arch: &Architecture) -> Result<()> {
    if arch.input_dim != pair.dim() || arch.output_dim != pair.dim() {
        return Err(Error::contract(format!(
            "architecture {arch} does not map the {}-dimensional domains",
            pair.dim()
        )));
    }
    Ok(())
}

/// Train `h2` to minimize divergence minus `λ·R[h1, h2]` with `h1` frozen.
pub fn train_adversary(h1: &Mlp, pair: &DomainPair, arch: &Architecture, cfg: &TrainConfig) -> Result<Mlp> {
    let data = TrainingData::new(pair, cfg)?;
    Ok(train_adversary_on(&data, h1, pair, arch, cfg)?.0)
}

pub fn train_adversary_on(
    data: &TrainingData,
    h1: &Mlp,
    pair: &DomainPair,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<CheckpointRecord>)> {
    check_arch(pair, arch)?;
    pair.check_generator(h1)?;
    let mut wgan = Wgan::init(arch, cfg)?;
    let anchor = RiskAnchor::Net {
        anchor: h1,
        weight: -cfg.lambda,
    };
    let records = fit(&mut wgan, data, InputSampler::Uniform, anchor, cfg, true)?;
    Ok((wgan.generator, records))
}

/// Train a student to minimize divergence plus `λ·R[h, teacher]`.
pub fn train_student_on(
    data: &TrainingData,
    teacher: &Mlp,
    pair: &DomainPair,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<CheckpointRecord>)> {
    check_arch(pair, arch)?;
    pair.check_generator(teacher)?;
    let mut wgan = Wgan::init(arch, cfg)?;
    let anchor = RiskAnchor::Net {
        anchor: teacher,
        weight: cfg.lambda,
    };
    let records = fit(&mut wgan, data, InputSampler::Uniform, anchor, cfg, true)?;
    Ok((wgan.generator, records))
}

/// Adversary for the loss of `h1` at one point: A-batches mix `x` in with
/// probability one half and the risk term is `ℓ(h1(x), h2(x))`.
pub fn train_per_sample_adversary(
    h1: &Mlp,
    pair: &DomainPair,
    x: &[f64],
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<Mlp> {
    let data = TrainingData::new(pair, cfg)?;
    train_per_sample_adversary_on(&data, h1, pair, x, arch, cfg)
}

pub fn train_per_sample_adversary_on(
    data: &TrainingData,
    h1: &Mlp,
    pair: &DomainPair,
    x: &[f64],
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<Mlp> {
    check_arch(pair, arch)?;
    pair.check_generator(h1)?;
    if x.len() != pair.dim() || crate::domains::norm(x) > pair.support_radius {
        return Err(Error::contract("probe point must lie in the A-side support"));
    }
    let target = h1.eval(x);
    let mut wgan = Wgan::init(arch, cfg)?;
    let anchor = RiskAnchor::Point {
        x,
        target: &target,
        weight: -cfg.lambda,
    };
    fit(&mut wgan, data, InputSampler::PointMixture { x }, anchor, cfg, false)?;
    Ok(wgan.generator)
}

/// Outcome of one probe of the λ search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaProbe {
    pub lambda: f64,
    pub div_h2: f64,
    pub pair_risk: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    /// Largest feasible λ found, or the smallest probed if none was feasible.
    pub lambda: f64,
    pub found_feasible: bool,
    pub probes: Vec<LambdaProbe>,
}

pub const LAMBDA_PROBES: usize = 8;
const LOG2_LAMBDA_RANGE: (f64, f64) = (-6.0, 6.0);

/// Largest λ in `[2⁻⁶, 2⁶]` whose adversary stays within `ε₀`: probe both
/// ends, then bisect in log₂ λ, eight trainings in total. Each probe trains a
/// fresh adversary for `cfg.epochs`.
pub fn select_lambda(h1: &Mlp, pair: &DomainPair, arch: &Architecture, cfg: &TrainConfig) -> Result<LambdaSearch> {
    let data = TrainingData::new(pair, cfg)?;
    let adv_cfg = cfg.reseeded("h2");
    let mut probes = Vec::with_capacity(LAMBDA_PROBES);
    let mut probe = |log2: f64| -> Result<LambdaProbe> {
        let lambda = log2.exp2();
        let (h2, _) = train_adversary_on(&data, h1, pair, arch, &adv_cfg.with_lambda(lambda))?;
        let div_h2 = data.divergence(&h2)?;
        let p = LambdaProbe {
            lambda,
            div_h2,
            pair_risk: empirical_risk(h1, &h2, &data.holdout_a)?,
            feasible: div_h2 <= cfg.epsilon0,
        };
        probes.push(p);
        Ok(p)
    };
    let (mut lo, mut hi) = LOG2_LAMBDA_RANGE;
    if probe(hi)?.feasible {
        return Ok(LambdaSearch {
            lambda: hi.exp2(),
            found_feasible: true,
            probes,
        });
    }
    if !probe(lo)?.feasible {
        return Ok(LambdaSearch {
            lambda: lo.exp2(),
            found_feasible: false,
            probes,
        });
    }
    for _ in 2..LAMBDA_PROBES {
        let mid = 0.5 * (lo + hi);
        if probe(mid)?.feasible {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LambdaSearch {
        lambda: lo.exp2(),
        found_feasible: true,
        probes,
    })
}
