//! Unsupervised hyperparameter search. The validation loss of a
//! configuration is the bound surrogate `R[h1, h2] + W(h1)`, computed from a
//! pair of networks that persists across rungs so that training resumes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::DomainPair;
use crate::error::{Error, Result};
use crate::nn::{checkpoint_load, checkpoint_save, Architecture, Mlp};
use crate::rng;
use crate::training::{empirical_risk, InputSampler, RiskAnchor, TrainConfig, TrainingData, Wgan};

/// Generator width when a search space does not vary it.
pub const DEFAULT_WIDTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub depth: usize,
    pub width: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl HyperConfig {
    /// Canonical key, also the store directory name.
    pub fn key(&self) -> String {
        format!(
            "d{}-w{}-b{}-lr{:e}",
            self.depth, self.width, self.batch_size, self.learning_rate
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.depth) {
            return Err(Error::contract(format!("depth must be in [1, 8], got {}", self.depth)));
        }
        if self.width == 0 || self.batch_size < 2 || !(self.learning_rate > 0.0) {
            return Err(Error::contract(format!("invalid configuration {}", self.key())));
        }
        Ok(())
    }

    pub fn arch(&self, dim: usize) -> Architecture {
        Architecture::generator(dim, self.depth, self.width)
    }

    /// Training settings for this configuration: the base settings with its
    /// batch size and learning rate, and its own initialization seed.
    /// Data and held-out sets stay those of the base seed.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            ..base.reseeded(&self.key())
        }
    }
}

/// Ranges configurations are drawn from; bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSpace {
    pub depth: (usize, usize),
    pub widths: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    /// Sampled log-uniformly.
    pub learning_rate: (f64, f64),
}

impl Default for HyperSpace {
    fn default() -> HyperSpace {
        HyperSpace {
            depth: (1, 8),
            widths: vec![DEFAULT_WIDTH],
            batch_sizes: vec![32, 64, 128],
            learning_rate: (2e-4, 1e-3),
        }
    }
}

impl HyperSpace {
    pub fn single(config: &HyperConfig) -> HyperSpace {
        HyperSpace {
            depth: (config.depth, config.depth),
            widths: vec![config.width],
            batch_sizes: vec![config.batch_size],
            learning_rate: (config.learning_rate, config.learning_rate),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d0, d1) = self.depth;
        let (l0, l1) = self.learning_rate;
        if self.widths.is_empty() || self.batch_sizes.is_empty() || d0 > d1 || !(l0 > 0.0 && l0 <= l1) {
            return Err(Error::contract("empty search space"));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> HyperConfig {
        let (l0, l1) = self.learning_rate;
        let learning_rate = if l0 == l1 {
            l0
        } else {
            rng.random_range(l0.ln()..=l1.ln()).exp()
        };
        HyperConfig {
            depth: rng.random_range(self.depth.0..=self.depth.1),
            width: self.widths[rng.random_range(0..self.widths.len())],
            batch_size: self.batch_sizes[rng.random_range(0..self.batch_sizes.len())],
            learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub key: String,
    pub config: HyperConfig,
    pub epochs: usize,
}

/// `h1`, `h2` and the epochs trained so far, one directory per configuration.
#[derive(Debug, Clone)]
pub struct ModelStore {
    dir: PathBuf,
}

impl ModelStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<ModelStore> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ModelStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    /// Epochs trained for `key`; 0 if unknown.
    pub fn epochs(&self, key: &str) -> Result<usize> {
        Ok(self.load_meta(key)?.map_or(0, |m| m.epochs))
    }

    fn load_meta(&self, key: &str) -> Result<Option<StoreMeta>> {
        let path = self.entry(key).join("meta.json");
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
    }

    /// Stored pair, or fresh seeded initializations with `T = 0`.
    pub fn retrieve(&self, config: &HyperConfig, dim: usize, cfg: &TrainConfig) -> Result<(Mlp, Mlp, usize)> {
        let key = config.key();
        match self.load_meta(&key)? {
            Some(meta) => {
                let dir = self.entry(&key);
                let arch = config.arch(dim);
                let mut h1 = Mlp::zeros(arch.clone())?;
                h1.load_into(&dir.join("h1.model"))?;
                let mut h2 = Mlp::zeros(arch)?;
                h2.load_into(&dir.join("h2.model"))?;
                Ok((h1, h2, meta.epochs))
            }
            None => {
                let arch = config.arch(dim);
                let h1 = Wgan::init(&arch, cfg)?.generator;
                let h2 = Wgan::init(&arch, &cfg.reseeded("h2"))?.generator;
                Ok((h1, h2, 0))
            }
        }
    }

    pub fn store(&self, config: &HyperConfig, h1: &Mlp, h2: &Mlp, epochs: usize) -> Result<()> {
        let key = config.key();
        let dir = self.entry(&key);
        std::fs::create_dir_all(&dir)?;
        checkpoint_save(h1, &dir.join("h1.model"))?;
        checkpoint_save(h2, &dir.join("h2.model"))?;
        let meta = StoreMeta {
            key,
            config: config.clone(),
            epochs,
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// The stored `h1` of a configuration.
    pub fn load_h1(&self, config: &HyperConfig) -> Result<Mlp> {
        checkpoint_load(&self.entry(&config.key()).join("h1.model"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValLoss {
    pub loss: f64,
    pub pair_risk: f64,
    pub div_h1: f64,
    /// Evaluation only.
    pub gt_risk: f64,
}

/// Bring the stored pair of `omega` to `t` epochs and return its plug-in
/// loss `R[h1, h2] + W(h1)` on the fixed held-out sets. Resumed networks get
/// fresh critics and optimizer state.
pub fn run_then_return_val_loss(
    omega: &HyperConfig,
    t: usize,
    pair: &DomainPair,
    base: &TrainConfig,
    store: &ModelStore,
) -> Result<f64> {
    Ok(run_and_evaluate(omega, t, pair, base, store)?.loss)
}

pub fn run_and_evaluate(
    omega: &HyperConfig,
    t: usize,
    pair: &DomainPair,
    base: &TrainConfig,
    store: &ModelStore,
) -> Result<ValLoss> {
    omega.validate()?;
    let cfg = omega.train_config(base);
    let data = TrainingData::new(pair, &cfg)?;
    let (mut h1, mut h2, t_last) = store.retrieve(omega, pair.dim(), &cfg)?;
    if t < t_last {
        return Err(Error::contract(format!(
            "{} is already trained for {t_last} epochs, cannot return to {t}",
            omega.key()
        )));
    }
    if t > t_last {
        let resume = format!("resume@{t_last}");
        let h1_cfg = cfg.reseeded(&resume);
        let mut g1 = Wgan::with_generator(h1, &h1_cfg)?;
        for _ in t_last..t {
            g1.epoch(&data.train_a, &data.train_b, InputSampler::Uniform, RiskAnchor::None, &h1_cfg)?;
        }
        h1 = g1.generator;
        let h2_cfg = cfg.reseeded("h2").reseeded(&resume);
        let mut g2 = Wgan::with_generator(h2, &h2_cfg)?;
        let anchor = RiskAnchor::Net {
            anchor: &h1,
            weight: -cfg.lambda,
        };
        for _ in t_last..t {
            g2.epoch(&data.train_a, &data.train_b, InputSampler::Uniform, anchor, &h2_cfg)?;
        }
        h2 = g2.generator;
    }
    store.store(omega, &h1, &h2, t)?;
    let pair_risk = empirical_risk(&h1, &h2, &data.holdout_a)?;
    let div_h1 = data.divergence(&h1)?;
    Ok(ValLoss {
        loss: pair_risk + div_h1,
        pair_risk,
        div_h1,
        gt_risk: pair.ground_truth_risk(&h1, cfg.n_eval, data.eval_seed)?,
    })
}

/// Largest `s` with `eta^s ≤ r`.
pub fn s_max(max_resource: usize, eta: usize) -> usize {
    let mut s = 0;
    let mut p = eta;
    while p <= max_resource {
        s += 1;
        p *= eta;
    }
    s
}

/// One successive-halving bracket: `configs` at `resource` units, then each
/// rung keeps the best `1/eta` at `eta` times the resource.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: usize,
    pub configs: usize,
    pub resource: f64,
}

impl Bracket {
    /// Rung sizes and resources: `(n_i, r_i)` for `i = 0..=s`.
    pub fn rungs(&self, eta: usize) -> Vec<(usize, f64)> {
        let e = eta as f64;
        (0..=self.s)
            .map(|i| {
                let n_i = (self.configs as f64 / e.powi(i as i32)).floor() as usize;
                (n_i, self.resource * e.powi(i as i32))
            })
            .collect()
    }
}

pub fn schedule(max_resource: usize, eta: usize) -> Result<Vec<Bracket>> {
    if max_resource < 1 || eta < 2 {
        return Err(Error::contract("hyperband needs R ≥ 1 and eta ≥ 2"));
    }
    let s_max = s_max(max_resource, eta);
    let e = eta as f64;
    Ok((0..=s_max)
        .rev()
        .map(|s| Bracket {
            s,
            configs: ((s_max + 1) as f64 / (s + 1) as f64 * e.powi(s as i32)).ceil() as usize,
            resource: max_resource as f64 * e.powi(-(s as i32)),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperbandSettings {
    pub max_resource: usize,
    pub eta: usize,
    /// Training epochs per unit of resource.
    pub epochs_per_unit: usize,
    pub space: HyperSpace,
    /// Worker threads for the configurations of one rung.
    pub jobs: usize,
}

impl Default for HyperbandSettings {
    fn default() -> HyperbandSettings {
        HyperbandSettings {
            max_resource: 27,
            eta: 3,
            epochs_per_unit: 8,
            space: HyperSpace::default(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperEntry {
    pub config: HyperConfig,
    pub final_t: usize,
    pub loss: f64,
    pub gt_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbandResult {
    pub brackets: Vec<Bracket>,
    /// Every evaluated configuration at its last rung, best loss first.
    pub ranking: Vec<HyperEntry>,
}

impl HyperbandResult {
    pub fn best(&self) -> &HyperEntry {
        &self.ranking[0]
    }
}

/// Hyperband driven by the plug-in loss. Configurations in a rung train in
/// parallel on `settings.jobs` threads; the result does not depend on it.
pub fn hyperband_search(
    settings: &HyperbandSettings,
    pair: &DomainPair,
    base: &TrainConfig,
    store: &ModelStore,
) -> Result<HyperbandResult> {
    settings.space.validate()?;
    if settings.epochs_per_unit == 0 {
        return Err(Error::contract("epochs per unit must be positive"));
    }
    let brackets = schedule(settings.max_resource, settings.eta)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut finals: Vec<HyperEntry> = Vec::new();
    for bracket in &brackets {
        let mut rng = rng::stream(rng::derive_seed(base.seed, rng::tag("hyperband")), bracket.s as u64);
        let mut configs: Vec<HyperConfig> = Vec::with_capacity(bracket.configs);
        for _ in 0..bracket.configs {
            let c = settings.space.sample(&mut rng);
            // Duplicates would race on one store entry.
            if !configs.iter().any(|d| d.key() == c.key()) {
                configs.push(c);
            }
        }
        for (i, (_, r_i)) in bracket.rungs(settings.eta).into_iter().enumerate() {
            let epochs = (r_i * settings.epochs_per_unit as f64).round() as usize;
            let losses: Vec<Result<(usize, ValLoss)>> = pool.install(|| {
                configs
                    .par_iter()
                    .map(|c| {
                        // A configuration drawn again in a later bracket
                        // may already be trained further.
                        let t = epochs.max(store.epochs(&c.key())?);
                        Ok((t, run_and_evaluate(c, t, pair, base, store)?))
                    })
                    .collect()
            });
            let mut scored: Vec<(HyperConfig, usize, ValLoss)> = Vec::with_capacity(configs.len());
            for (c, r) in configs.into_iter().zip(losses) {
                let (t, v) = r?;
                scored.push((c, t, v));
            }
            scored.sort_by(|a, b| a.2.loss.total_cmp(&b.2.loss));
            let last_rung = i == bracket.s;
            let keep = if last_rung {
                scored.len()
            } else {
                (scored.len() / settings.eta).max(1)
            };
            for (c, t, v) in scored.iter().skip(keep) {
                finals.push(HyperEntry {
                    config: c.clone(),
                    final_t: *t,
                    loss: v.loss,
                    gt_risk: v.gt_risk,
                });
            }
            if last_rung {
                for (c, t, v) in scored.iter().take(keep) {
                    finals.push(HyperEntry {
                        config: c.clone(),
                        final_t: *t,
                        loss: v.loss,
                        gt_risk: v.gt_risk,
                    });
                }
                break;
            }
            configs = scored.into_iter().take(keep).map(|(c, _, _)| c).collect();
        }
    }
    // A configuration seen in several brackets keeps its latest evaluation.
    let mut ranking: Vec<HyperEntry> = Vec::with_capacity(finals.len());
    for e in finals.into_iter().rev() {
        if !ranking.iter().any(|r| r.config.key() == e.config.key()) {
            ranking.push(e);
        }
    }
    ranking.sort_by(|a, b| a.loss.total_cmp(&b.loss).then_with(|| a.config.key().cmp(&b.config.key())));
    Ok(HyperbandResult { brackets, ranking })
}

/// `config_key,depth,width,batch,lr,final_T,loss,gt_risk`.
pub fn ranking_csv(ranking: &[HyperEntry]) -> String {
    let mut out = String::from("config_key,depth,width,batch,lr,final_T,loss,gt_risk\n");
    for e in ranking {
        let c = &e.config;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.key(),
            c.depth,
            c.width,
            c.batch_size,
            c.learning_rate,
            e.final_t,
            e.loss,
            e.gt_risk
        )
        .expect("writing to a String cannot fail");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_arithmetic() {
        let b = schedule(81, 3).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!((b[0].s, b[0].configs, b[0].resource), (4, 81, 1.0));
        assert_eq!((b[4].s, b[4].configs, b[4].resource), (0, 5, 81.0));
        assert_eq!(b[0].rungs(3), vec![(81, 1.0), (27, 3.0), (9, 9.0), (3, 27.0), (1, 81.0)]);
        assert_eq!(b[1].configs, 34);
        assert_eq!(s_max(1, 3), 0);
        assert_eq!(s_max(27, 3), 3);
        assert!(schedule(0, 3).is_err());
        assert!(schedule(10, 1).is_err());
    }

    #[test]
    fn keys_are_canonical() {
        let c = HyperConfig {
            depth: 3,
            width: 16,
            batch_size: 64,
            learning_rate: 5e-4,
        };
        assert_eq!(c.key(), "d3-w16-b64-lr5e-4");
        assert!(HyperConfig { depth: 9, ..c.clone() }.validate().is_err());
    }

    #[test]
    fn space_sampling_stays_in_range() {
        let space = HyperSpace::default();
        let mut rng = rng::stream(3, 0);
        for _ in 0..200 {
            let c = space.sample(&mut rng);
            assert!((1..=8).contains(&c.depth));
            assert!(c.learning_rate >= 2e-4 && c.learning_rate <= 1e-3);
            assert!(space.batch_sizes.contains(&c.batch_size));
        }
        let single = HyperSpace::single(&HyperConfig {
            depth: 2,
            width: 8,
            batch_size: 32,
            learning_rate: 1e-3,
        });
        assert_eq!(single.sample(&mut rng).key(), "d2-w8-b32-lr1e-3");
    }
}
