use std::path::{Path, PathBuf};

use serde::Serialize;

use xmap::bounds::{reports_csv, stopping_criterion};
use xmap::distill::{distill_tuned, find_minimal_complexity};
use xmap::domains::{ambiguity_demo, registered, AmbiguityRecord, DomainPair, REGISTRY};
use xmap::experiments::{depth_sweep, per_sample_study, stop_ledger};
use xmap::hyperband::{hyperband_search, ranking_csv, ModelStore};
use xmap::nn::{checkpoint_save, Architecture, Mlp};
use xmap::nonunique::{alg5_train, Alg5Settings};
use xmap::training::{select_lambda, train_generator, LambdaSearch, TrainConfig};
use xmap::verify::{run_suite, AMBIGUITY_DIVERGENCE_TOL, AMBIGUITY_MIN_RISK};
use xmap::{Error, Result};

use crate::config::Config;
use crate::Command;

/// The run directory and the files written to it so far.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    pub fn new(dir: PathBuf) -> Outputs {
        Outputs { dir, written: Vec::new() }
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(path, body)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let body = serde_json::to_string_pretty(value)?;
        self.write(name, &(body + "\n"))
    }

    fn model(&mut self, name: &str, net: &Mlp) -> Result<()> {
        let path = self.path(name);
        checkpoint_save(net, &path)
    }

    fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Run one command. `Ok(false)` means the command ran but its checks failed.
pub fn dispatch(command: Command, cfg: &Config, pair: &DomainPair, out: &mut Outputs) -> Result<bool> {
    let arch = Architecture::generator(pair.dim(), cfg.run.depth, cfg.run.width);
    match command {
        Command::DemoAmbiguity => demo_ambiguity(cfg, pair, out),
        Command::DepthSweep => {
            let sweep = depth_sweep(pair, &cfg.sweep.depths, cfg.run.width, &cfg.sweep.seeds, &cfg.train)?;
            out.write("depth_sweep.csv", &sweep.to_csv())?;
            out.write("depth_sweep_runs.csv", &sweep.runs_csv())?;
            Ok(true)
        }
        Command::StopCriterion => stop(cfg, pair, &arch, out),
        Command::PerSample => {
            let (h1, _) = train_generator(pair, &arch, &cfg.train)?;
            out.model("h1.model", &h1)?;
            let lambda = searched_lambda(cfg, &h1, pair, &arch, out)?.unwrap_or(cfg.per_sample.lambda);
            let adv = TrainConfig {
                epochs: cfg.per_sample.adversary_epochs,
                lambda,
                ..cfg.train.clone()
            };
            let study = per_sample_study(&h1, pair, &arch, cfg.per_sample.probes, &adv)?;
            out.write("scatter.csv", &study.scatter_csv())?;
            out.json("per_sample.json", &study)?;
            Ok(true)
        }
        Command::Hyperband => {
            let store = if cfg.run.store_dir.is_empty() {
                ModelStore::open(out.dir().join("store"))?
            } else {
                ModelStore::open(&cfg.run.store_dir)?
            };
            let base = adversary_config(cfg, pair, &arch, out)?;
            let result = hyperband_search(&cfg.hyperband, pair, &base, &store)?;
            out.write("hyperband.csv", &ranking_csv(&result.ranking))?;
            out.json("hyperband.json", &result)?;
            Ok(true)
        }
        Command::Distill => {
            let k1 = match cfg.distill.k1 {
                Some(k1) => k1,
                None => {
                    let budget = cfg.train.with_epochs(cfg.distill.budget);
                    let found = find_minimal_complexity(pair, &cfg.distill.depths, cfg.run.width, &budget);
                    if let Err(Error::NoMinimalDepth { threshold, table }) = &found {
                        out.json("minimal_depth.json", &(threshold, table))?;
                    }
                    let found = found?;
                    out.json("minimal_depth.json", &found)?;
                    found.k1
                }
            };
            let tuned = distill_tuned(pair, k1, cfg.distill.k2, cfg.run.width, &cfg.train, &cfg.distill.lambdas)?;
            out.json(
                "distill.json",
                &serde_json::json!({ "chosen": tuned.chosen.report, "probes": tuned.probes }),
            )?;
            out.model("teacher.model", &tuned.chosen.teacher)?;
            out.model("student.model", &tuned.chosen.student)?;
            Ok(true)
        }
        Command::Nonunique => {
            let settings = Alg5Settings {
                encoder_layers: cfg.nonunique.encoder_layers,
                t1: cfg.nonunique.t1,
            };
            let train = cfg.train.with_epochs(cfg.nonunique.epochs);
            match alg5_train(pair, &arch, &settings, &train) {
                Ok(o) => {
                    out.write("bounds.csv", &reports_csv(&o.reports))?;
                    out.model("h1.model", &o.h1)?;
                    out.json("selection.json", &serde_json::json!({ "selected_epoch": o.selected_epoch }))?;
                    Ok(true)
                }
                Err(Error::NoFeasibleEpoch { reports }) => {
                    out.write("bounds.csv", &reports_csv(&reports))?;
                    Err(Error::NoFeasibleEpoch { reports })
                }
                Err(e) => Err(e),
            }
        }
        Command::Verify => {
            let pairs = REGISTRY.iter().map(|n| registered(n)).collect::<Result<Vec<_>>>()?;
            let report = run_suite(&pairs, &cfg.verify)?;
            out.json("verify.json", &report)?;
            Ok(report.passes())
        }
    }
}

#[derive(Serialize)]
struct AmbiguityOutput {
    record: AmbiguityRecord,
    divergence_tol: f64,
    min_gt_risk: f64,
    demonstrated: bool,
}

fn demo_ambiguity(cfg: &Config, pair: &DomainPair, out: &mut Outputs) -> Result<bool> {
    let record = ambiguity_demo(pair, cfg.verify.ambiguity_n, cfg.train.seed)?;
    let demonstrated = record.demonstrates_ambiguity(AMBIGUITY_DIVERGENCE_TOL, AMBIGUITY_MIN_RISK);
    out.json(
        "ambiguity.json",
        &AmbiguityOutput {
            record,
            divergence_tol: AMBIGUITY_DIVERGENCE_TOL,
            min_gt_risk: AMBIGUITY_MIN_RISK,
            demonstrated,
        },
    )?;
    Ok(true)
}

/// λ from the feasibility search around `h1`, if `run.search_lambda` is set.
fn searched_lambda(cfg: &Config, h1: &Mlp, pair: &DomainPair, arch: &Architecture, out: &mut Outputs) -> Result<Option<f64>> {
    if !cfg.run.search_lambda {
        return Ok(None);
    }
    let search: LambdaSearch = select_lambda(h1, pair, arch, &cfg.train)?;
    out.json("lambda.json", &search)?;
    Ok(Some(search.lambda))
}

/// `train` with λ from the feasibility search when `run.search_lambda` is set.
fn adversary_config(cfg: &Config, pair: &DomainPair, arch: &Architecture, out: &mut Outputs) -> Result<TrainConfig> {
    let mut train = cfg.train.clone();
    if cfg.run.search_lambda {
        let (h1, _) = train_generator(pair, arch, &train)?;
        train.lambda = searched_lambda(cfg, &h1, pair, arch, out)?.expect("search enabled");
    }
    Ok(train)
}

fn stop(cfg: &Config, pair: &DomainPair, arch: &Architecture, out: &mut Outputs) -> Result<bool> {
    let train = adversary_config(cfg, pair, arch, out)?.with_epochs(cfg.stop.epochs);
    let outcome = match stopping_criterion(pair, arch, &train) {
        Ok(o) => o,
        Err(Error::NoFeasibleEpoch { reports }) => {
            out.write("bounds.csv", &reports_csv(&reports))?;
            return Err(Error::NoFeasibleEpoch { reports });
        }
        Err(e) => return Err(e),
    };
    out.write("bounds.csv", &reports_csv(&outcome.reports))?;
    out.model("h1.model", &outcome.h1)?;
    out.json(
        "selection.json",
        &serde_json::json!({ "selected_epoch": outcome.selected_epoch, "lambda": train.lambda }),
    )?;
    match stop_ledger(&outcome, cfg.stop.permutations, train.seed) {
        Ok(ledger) => out.write("ledger.csv", &ledger.to_csv())?,
        // Too few feasible epochs to correlate.
        Err(Error::Contract(_)) | Err(Error::UndefinedCorrelation(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(true)
}
