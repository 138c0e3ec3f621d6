//! Run configuration: a TOML file with one table per module, plus
//! `--set section.key=value` overrides.

use serde::{Deserialize, Serialize};

use xmap::domains::DomainSpec;
use xmap::hyperband::HyperbandSettings;
use xmap::training::TrainConfig;
use xmap::verify::VerifySettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub domain: DomainSpec,
    pub train: TrainConfig,
    pub sweep: SweepSection,
    pub stop: StopSection,
    pub per_sample: PerSampleSection,
    pub hyperband: HyperbandSettings,
    pub distill: DistillSection,
    pub nonunique: NonuniqueSection,
    pub verify: VerifySettings,
}

impl Default for Config {
    fn default() -> Config {
        Config {
            run: RunSection::default(),
            domain: DomainSpec::named("twin-moons-rotation"),
            train: TrainConfig::default(),
            sweep: SweepSection::default(),
            stop: StopSection::default(),
            per_sample: PerSampleSection::default(),
            hyperband: HyperbandSettings::default(),
            distill: DistillSection::default(),
            nonunique: NonuniqueSection::default(),
            verify: VerifySettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub out_dir: String,
    /// Generator depth for single-architecture commands.
    pub depth: usize,
    pub width: usize,
    /// Hyperband model store reused across runs; empty means a fresh store
    /// inside the run directory.
    pub store_dir: String,
    /// Pick the adversary λ by the feasibility search before stop-criterion,
    /// per-sample and hyperband runs; otherwise `train.lambda` (or
    /// `per_sample.lambda`) is used as is.
    pub search_lambda: bool,
}

impl Default for RunSection {
    fn default() -> RunSection {
        RunSection {
            out_dir: "runs".into(),
            depth: 2,
            width: 16,
            store_dir: String::new(),
            search_lambda: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> SweepSection {
        SweepSection {
            depths: (1..=8).collect(),
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopSection {
    /// Outer epochs `T1`; the adversary runs `train.adversary_epochs` per epoch.
    pub epochs: usize,
    pub permutations: usize,
}

impl Default for StopSection {
    fn default() -> StopSection {
        StopSection {
            epochs: 60,
            permutations: xmap::evalstats::DEFAULT_PERMUTATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerSampleSection {
    pub probes: usize,
    /// Epochs of each per-sample adversary.
    pub adversary_epochs: usize,
    /// Used only when `run.search_lambda` is off.
    pub lambda: f64,
}

impl Default for PerSampleSection {
    fn default() -> PerSampleSection {
        PerSampleSection {
            probes: 30,
            adversary_epochs: 100,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    /// Candidate teacher depths, ascending.
    pub depths: Vec<usize>,
    /// Skip the minimal-depth search.
    pub k1: Option<usize>,
    pub k2: usize,
    /// Student λ values; the largest whose student stays within `ε₀` wins.
    pub lambdas: Vec<f64>,
    /// Epochs per probed depth.
    pub budget: usize,
}

impl Default for DistillSection {
    fn default() -> DistillSection {
        DistillSection {
            depths: (1..=4).collect(),
            k1: None,
            k2: 5,
            lambdas: xmap::distill::LAMBDA_GRID.to_vec(),
            budget: xmap::distill::DEPTH_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonuniqueSection {
    pub encoder_layers: Option<usize>,
    pub t1: usize,
    pub epochs: usize,
}

impl Default for NonuniqueSection {
    fn default() -> NonuniqueSection {
        NonuniqueSection {
            encoder_layers: None,
            t1: 1,
            epochs: 60,
        }
    }
}

/// Parse `text` and apply `overrides` on top; missing keys take defaults.
pub fn resolve(text: &str, overrides: &[String]) -> Result<Config, String> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| format!("invalid config: {e}"))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| format!("invalid config: {e}"))
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), String> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| format!("override {item:?} is not key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(format!("override key {key:?} is malformed"));
    }
    // Values are TOML literals; anything else is taken as a bare string.
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed table has v"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let (last, parents) = path.split_last().expect("path is nonempty");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("override key {key:?} runs through a non-table value"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_constants() {
        let c = resolve("", &[]).unwrap();
        assert_eq!(c.train.epsilon0, 0.2);
        assert_eq!(c.train.critic_steps, 5);
        assert_eq!(c.train.clip_c, 0.1);
    }

    #[test]
    fn overrides_win_over_the_file() {
        let text = "[train]\nepochs = 10\n[domain]\nname = \"warp\"\n";
        let c = resolve(
            text,
            &[
                "train.epochs=3".into(),
                "domain.name=single-gaussian".into(),
                "sweep.depths=[1, 2]".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.domain.name, "single-gaussian");
        assert_eq!(c.sweep.depths, vec![1, 2]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve("[train]\nepochz = 1\n", &[]).is_err());
        assert!(resolve("", &["train.epochs".into()]).is_err());
        assert!(resolve("", &["train.epochs=many".into()]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = resolve("", &["hyperband.eta=2".into()]).unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(resolve(&text, &[]).unwrap(), c);
    }
}
