//! Mapping when the target is one of a family `T`: hypotheses share an
//! encoder `f_ω` and differ only in their decoders, `h_i = g_{θ_i} ∘ f_ω`.

use rand_chacha::ChaCha8Rng;

use crate::bounds::{select_epoch, BoundReport};
use crate::domains::{mean_squared_gap, DomainPair, Mapping, SampleSet, Side};
use crate::error::{Error, Result};
use crate::nn::{Architecture, EncoderDecoderSplit, Mlp, Optimizer, Trace};
use crate::rng;
use crate::training::{draw_batch, empirical_risk, InputSampler, RiskAnchor, TrainConfig, TrainingData, Wgan};
use crate::transport::critic_objective_grad;

/// `min_{y ∈ T} R[h, y]` on one shared sample.
pub fn multi_target_gt_risk(h: &dyn Mapping, pair: &DomainPair, n: usize, seed: u64) -> Result<f64> {
    let xs = pair.sample(Side::A, n, seed)?;
    Ok(pair
        .targets()
        .into_iter()
        .map(|y| mean_squared_gap(h, y, &xs))
        .fold(f64::INFINITY, f64::min))
}

/// Two hypotheses with one encoder. There is a single `ω`, so both
/// hypotheses always see the same encoder.
#[derive(Debug, Clone)]
pub struct SharedEncoderPair {
    arch: Architecture,
    split: EncoderDecoderSplit,
    pub encoder: Mlp,
    pub decoder1: Mlp,
    pub decoder2: Mlp,
}

impl SharedEncoderPair {
    /// `ω` and `θ1` from an `h1` initialization, `θ2` from an independent one.
    pub fn init(arch: &Architecture, encoder_layers: usize, cfg: &TrainConfig) -> Result<SharedEncoderPair> {
        let split = EncoderDecoderSplit::new(arch, encoder_layers)?;
        let (encoder, decoder1) = split.split(&Wgan::init(arch, cfg)?.generator)?;
        let (_, decoder2) = split.split(&Wgan::init(arch, &cfg.reseeded("h2"))?.generator)?;
        Ok(SharedEncoderPair {
            arch: arch.clone(),
            split,
            encoder,
            decoder1,
            decoder2,
        })
    }

    pub fn split(&self) -> EncoderDecoderSplit {
        self.split
    }

    pub fn h1(&self) -> Result<Mlp> {
        self.split.join(&self.arch, &self.encoder, &self.decoder1)
    }

    pub fn h2(&self) -> Result<Mlp> {
        self.split.join(&self.arch, &self.encoder, &self.decoder2)
    }

    pub fn encode(&self, s: &SampleSet) -> SampleSet {
        s.map(&self.encoder)
    }
}

/// Settings for the shared-encoder loop beyond [`TrainConfig`]:
/// `cfg.epochs` outer epochs, `t1` epochs of `θ1` and `cfg.adversary_epochs`
/// epochs of `θ2` per outer epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Alg5Settings {
    /// Encoder layers; `None` means half the depth, rounded down.
    pub encoder_layers: Option<usize>,
    pub t1: usize,
}

impl Default for Alg5Settings {
    fn default() -> Alg5Settings {
        Alg5Settings {
            encoder_layers: None,
            t1: 1,
        }
    }
}

impl Alg5Settings {
    pub fn encoder_layers(&self, arch: &Architecture) -> usize {
        self.encoder_layers.unwrap_or(arch.depth() / 2)
    }
}

/// Critic and optimizers of the `ω` step, which minimizes
/// `R[h1, h2] + W(h1)` over the encoder with both decoders frozen.
struct EncoderStep {
    critic: Mlp,
    critic_opt: Optimizer,
    enc_opt: Optimizer,
    rng: ChaCha8Rng,
}

impl EncoderStep {
    fn new(pair: &SharedEncoderPair, cfg: &TrainConfig) -> Result<EncoderStep> {
        let mut init = rng::stream(rng::derive_seed(cfg.seed, rng::tag("init")), 1);
        let dim = pair.decoder1.output_dim();
        let mut critic = Mlp::init(Architecture::critic(dim, cfg.critic_widths.clone()), &mut init)?;
        critic.clip_weights(cfg.clip_c)?;
        Ok(EncoderStep {
            critic_opt: Optimizer::new(cfg.optimizer, cfg.critic_learning_rate, critic.params().len())?,
            enc_opt: Optimizer::new(cfg.optimizer, cfg.learning_rate, pair.encoder.params().len())?,
            critic,
            rng: rng::stream(rng::derive_seed(cfg.seed, rng::tag("batches")), 0),
        })
    }

    fn epoch(&mut self, pair: &mut SharedEncoderPair, data: &TrainingData, cfg: &TrainConfig) -> Result<()> {
        let mut critic_trace = Trace::default();
        let mut critic_grad = vec![0.0; self.critic.params().len()];
        let mut enc_grad = vec![0.0; pair.encoder.params().len()];
        let (mut enc_trace, mut t1, mut t2) = (Trace::default(), Trace::default(), Trace::default());
        for _ in 0..cfg.steps_per_epoch() {
            for _ in 0..cfg.critic_steps {
                let xs = draw_batch(&data.train_a, InputSampler::Uniform, cfg.batch_size, &mut self.rng);
                let fake: Vec<Vec<f64>> = xs.iter().map(|x| pair.decoder1.eval(&pair.encoder.eval(x))).collect();
                let fake: Vec<&[f64]> = fake.iter().map(Vec::as_slice).collect();
                let real = draw_batch(&data.train_b, InputSampler::Uniform, cfg.batch_size, &mut self.rng);
                critic_grad.fill(0.0);
                critic_objective_grad(&self.critic, &real, &fake, &mut critic_grad, &mut critic_trace)?;
                critic_grad.iter_mut().for_each(|g| *g = -*g);
                self.critic_opt.step(self.critic.params_mut(), &critic_grad);
                self.critic.clip_weights(cfg.clip_c)?;
            }
            let xs = draw_batch(&data.train_a, InputSampler::Uniform, cfg.batch_size, &mut self.rng);
            let inv = 1.0 / xs.len() as f64;
            enc_grad.fill(0.0);
            for x in &xs {
                pair.encoder.trace_into(x, &mut enc_trace);
                let e = enc_trace.output().to_vec();
                pair.decoder1.trace_into(&e, &mut t1);
                pair.decoder2.trace_into(&e, &mut t2);
                let (z1, z2) = (t1.output().to_vec(), t2.output().to_vec());
                self.critic.trace_into(&z1, &mut critic_trace);
                // Divergence flows through h1 only; the risk through both.
                let mut seed1 = self.critic.backward_from(&critic_trace, &[-inv], None)?;
                let mut seed2 = vec![0.0; z2.len()];
                for i in 0..z1.len() {
                    let g = 2.0 * inv * (z1[i] - z2[i]);
                    seed1[i] += g;
                    seed2[i] -= g;
                }
                let mut seed_e = pair.decoder1.backward_from(&t1, &seed1, None)?;
                let e2 = pair.decoder2.backward_from(&t2, &seed2, None)?;
                seed_e.iter_mut().zip(&e2).for_each(|(a, b)| *a += b);
                pair.encoder.backward_from(&enc_trace, &seed_e, Some(&mut enc_grad))?;
            }
            if enc_grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch: 0,
                    context: "encoder gradient became non-finite".into(),
                });
            }
            self.enc_opt.step(pair.encoder.params_mut(), &enc_grad);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Alg5Outcome {
    pub selected_epoch: usize,
    pub h1: Mlp,
    pub pair: SharedEncoderPair,
    pub reports: Vec<BoundReport>,
}

/// Alternate per outer epoch: one `ω` epoch on `R[h1, h2] + W(h1)`, then
/// `t1` WGAN epochs of `θ1`, then `T2` adversarial epochs of `θ2`. Selects
/// the feasible epoch with the smallest `R[h1, h2] + W(h1)`.
pub fn alg5_train(
    pair: &DomainPair,
    arch: &Architecture,
    settings: &Alg5Settings,
    cfg: &TrainConfig,
) -> Result<Alg5Outcome> {
    cfg.validate()?;
    if settings.t1 == 0 || cfg.adversary_epochs == 0 {
        return Err(Error::contract("both decoders need at least one epoch per round"));
    }
    arch.validate_generator()?;
    let data = TrainingData::new(pair, cfg)?;
    let mut shared = SharedEncoderPair::init(arch, settings.encoder_layers(arch), cfg)?;
    let mut omega = EncoderStep::new(&shared, &cfg.reseeded("omega"))?;
    let cfg1 = cfg.reseeded("theta1");
    let cfg2 = cfg.reseeded("theta2");
    let mut w1 = Wgan::with_generator(shared.decoder1.clone(), &cfg1)?;
    let mut w2 = Wgan::with_generator(shared.decoder2.clone(), &cfg2)?;
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::with_capacity(cfg.epochs);
    for t in 1..=cfg.epochs {
        shared.decoder1.set_params(w1.generator.params())?;
        shared.decoder2.set_params(w2.generator.params())?;
        omega.epoch(&mut shared, &data, cfg)?;

        let encoded = shared.encode(&data.train_a);
        for _ in 0..settings.t1 {
            w1.epoch(&encoded, &data.train_b, InputSampler::Uniform, RiskAnchor::None, &cfg1)?;
        }
        let anchor = RiskAnchor::Net {
            anchor: &w1.generator,
            weight: -cfg.lambda,
        };
        for _ in 0..cfg.adversary_epochs {
            w2.epoch(&encoded, &data.train_b, InputSampler::Uniform, anchor, &cfg2)?;
        }
        shared.decoder1.set_params(w1.generator.params())?;
        shared.decoder2.set_params(w2.generator.params())?;

        let (h1, h2) = (shared.h1()?, shared.h2()?);
        let mut report = BoundReport::surrogate_form(
            t,
            empirical_risk(&h1, &h2, &data.holdout_a)?,
            data.divergence(&h1)?,
            data.divergence(&h2)?,
            cfg.epsilon0,
            pair.ground_truth_risk(&h1, cfg.n_eval, data.eval_seed)?,
        );
        report.min_target_risk = Some(multi_target_gt_risk(&h1, pair, cfg.n_eval, data.eval_seed)?);
        reports.push(report);
        snapshots.push(shared.clone());
    }
    match select_epoch(&reports) {
        Some(i) => {
            let chosen = snapshots.swap_remove(i);
            Ok(Alg5Outcome {
                selected_epoch: reports[i].epoch,
                h1: chosen.h1()?,
                pair: chosen,
                reports,
            })
        }
        None => Err(Error::NoFeasibleEpoch { reports }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{registered, TargetMap};
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn multi_target_risk_picks_the_closest_target() {
        let pair = registered("multi-target").unwrap();
        let plus = TargetMap::rotation(FRAC_PI_4);
        let minus = TargetMap::rotation(-FRAC_PI_4);
        let r = multi_target_gt_risk(&plus, &pair, 512, 3).unwrap();
        assert!(r < 1e-20);
        let xs = pair.sample(Side::A, 512, 3).unwrap();
        assert!(mean_squared_gap(&plus, &minus, &xs) > 1.0);
        let single = registered("twin-moons-rotation").unwrap();
        let id = TargetMap::rotation(0.0);
        assert_eq!(
            multi_target_gt_risk(&id, &single, 256, 1).unwrap(),
            single.ground_truth_risk(&id, 256, 1).unwrap()
        );
    }

    #[test]
    fn hypotheses_share_the_encoder() {
        let arch = Architecture::generator(2, 4, 8);
        let cfg = TrainConfig::default();
        let mut shared = SharedEncoderPair::init(&arch, 2, &cfg).unwrap();
        shared.encoder.params_mut()[0] += 0.5;
        let x = [0.3, -0.7];
        let e = shared.encoder.eval(&x);
        assert_eq!(shared.h1().unwrap().eval(&x), shared.decoder1.eval(&e));
        assert_eq!(shared.h2().unwrap().eval(&x), shared.decoder2.eval(&e));
        let h1 = shared.h1().unwrap();
        assert_eq!(&h1.params()[..shared.split().partition_point(&arch)], shared.encoder.params());
    }

    #[test]
    fn infeasible_runs_error() {
        let pair = registered("multi-target").unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            adversary_epochs: 1,
            epsilon0: 0.0,
            ..TrainConfig::default()
        };
        let r = alg5_train(&pair, &Architecture::generator(2, 2, 8), &Alg5Settings::default(), &cfg);
        match r {
            Err(Error::NoFeasibleEpoch { reports }) => {
                assert_eq!(reports.len(), 1);
                let rep = &reports[0];
                assert!(rep.min_target_risk.unwrap() <= rep.gt_risk + 1e-12);
                assert!((rep.bound - rep.pair_risk - rep.div_h1).abs() < 1e-12);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}
