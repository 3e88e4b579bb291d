//! Experiment manifests: one TOML document binding model files, a trace and
//! the run configuration. Relative paths resolve against the manifest's
//! directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{load_lookup, load_model, load_trace, parse_toml, read_text};
use crate::budget_controller::{Controller, PredictorMode};
use crate::cost_model::{DecodeCoeffs, PredictorCoeffs, PrefillCoeffs};
use crate::error::{Error, Result};
use crate::length_predictor::{BucketSpec, PredictorBackend};
use crate::sim_engine::{BudgetedPolicy, ExecutionModel, Job, Policy, ScoreModel, Strategy, SweepAxis, SweepBase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPaths {
    pub prefill: PathBuf,
    pub decode: PathBuf,
    #[serde(default)]
    pub predictor: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionSection {
    /// Ground-truth models; default to the controller's models.
    #[serde(default)]
    pub prefill: Option<PathBuf>,
    #[serde(default)]
    pub decode: Option<PathBuf>,
    #[serde(default)]
    pub predictor: Option<PathBuf>,
    #[serde(default)]
    pub sigma_exec: f64,
    pub seed: u64,
    pub n_max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub k: f64,
    pub alpha_max: f64,
    pub predictor_mode: PredictorMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Oracle,
    Lookup,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSection {
    pub backend: BackendKind,
    pub bucket_size: u32,
    pub n_model: u32,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub compression_sigma: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub lookup: Option<PathBuf>,
    #[serde(default)]
    pub bucket: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub budget_ms: Vec<f64>,
    #[serde(default)]
    pub k: Vec<f64>,
    #[serde(default)]
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub trace: PathBuf,
    pub output_dir: PathBuf,
    pub policies: Vec<String>,
    pub strategies: Vec<Strategy>,
    pub models: ModelPaths,
    pub execution: ExecutionSection,
    pub controller: ControllerSection,
    pub predictor: PredictorSection,
    #[serde(default)]
    pub score: ScoreModel,
    #[serde(default)]
    pub sweep: SweepSection,
}

/// Policy names accepted in manifests and on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    Vanilla,
    FixedAlpha(f64),
    Budgeted,
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(PolicySpec::Vanilla),
            "budgeted" => Ok(PolicySpec::Budgeted),
            other => {
                let alpha = other
                    .strip_prefix("fixed-")
                    .or_else(|| other.strip_prefix("fixed:"))
                    .and_then(|a| a.parse::<f64>().ok())
                    .filter(|a| (0.0..=1.0).contains(a))
                    .ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "unknown policy '{other}' (expected vanilla, budgeted, or fixed-<alpha in [0,1]>)"
                        ))
                    })?;
                Ok(PolicySpec::FixedAlpha(alpha))
            }
        }
    }
}

/// A manifest with every referenced file loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub base: SweepBase,
    pub output_dir: PathBuf,
    pub sweep: SweepSection,
}

impl Experiment {
    pub fn axes(&self) -> Vec<SweepAxis> {
        let mut axes = Vec::new();
        if !self.sweep.budget_ms.is_empty() {
            axes.push(SweepAxis::Budget(self.sweep.budget_ms.clone()));
        }
        if !self.sweep.k.is_empty() {
            axes.push(SweepAxis::K(self.sweep.k.clone()));
        }
        if !self.sweep.alpha.is_empty() {
            axes.push(SweepAxis::Alpha(self.sweep.alpha.clone()));
        }
        axes
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist"),
        })
    }
}

fn load_prefill(path: &Path) -> Result<PrefillCoeffs> {
    load_model(path)?.prefill()
}

fn load_decode(path: &Path) -> Result<DecodeCoeffs> {
    load_model(path)?.decode()
}

fn load_predictor(path: Option<&Path>) -> Result<PredictorCoeffs> {
    path.map_or(Ok(PredictorCoeffs::zero()), |p| load_model(p)?.predictor())
}

impl Manifest {
    pub fn load(path: &Path) -> Result<(Manifest, PathBuf)> {
        let manifest: Manifest = parse_toml(path, &read_text(path)?)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, dir))
    }

    pub fn backend(&self, dir: &Path) -> Result<PredictorBackend> {
        let p = &self.predictor;
        match p.backend {
            BackendKind::Oracle => Ok(PredictorBackend::Oracle {
                sigma: p.sigma,
                compression_sigma: p.compression_sigma,
                seed: p.seed.ok_or_else(|| Error::InvalidInput("oracle predictor needs a seed".into()))?,
            }),
            BackendKind::Lookup => {
                let path = p
                    .lookup
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("lookup predictor needs a 'lookup' file".into()))?;
                Ok(PredictorBackend::Lookup(load_lookup(&resolve(dir, path))?))
            }
            BackendKind::Constant => Ok(PredictorBackend::Constant(
                p.bucket.ok_or_else(|| Error::InvalidInput("constant predictor needs a 'bucket'".into()))?,
            )),
        }
    }

    pub fn controller(&self, dir: &Path) -> Result<Controller> {
        let predictor_path = self.models.predictor.as_ref().map(|p| resolve(dir, p));
        Ok(Controller {
            prefill: load_prefill(&resolve(dir, &self.models.prefill))?,
            decode: load_decode(&resolve(dir, &self.models.decode))?,
            predictor: load_predictor(predictor_path.as_deref())?,
            buckets: BucketSpec::new(self.predictor.bucket_size, self.predictor.n_model)?,
            backend: self.backend(dir)?,
        })
    }

    pub fn policy(&self, spec: PolicySpec, controller: &Controller) -> Policy {
        match spec {
            PolicySpec::Vanilla => Policy::Vanilla,
            PolicySpec::FixedAlpha(a) => Policy::FixedAlpha(a),
            PolicySpec::Budgeted => Policy::Budgeted(Box::new(BudgetedPolicy {
                controller: controller.clone(),
                k: self.controller.k,
                alpha_max: self.controller.alpha_max,
                predictor_mode: self.controller.predictor_mode,
            })),
        }
    }

    pub fn execution_model(&self, dir: &Path, controller: &Controller) -> Result<ExecutionModel> {
        let e = &self.execution;
        let prefill = match &e.prefill {
            Some(p) => load_prefill(&resolve(dir, p))?,
            None => controller.prefill,
        };
        let decode = match &e.decode {
            Some(p) => load_decode(&resolve(dir, p))?,
            None => controller.decode,
        };
        let predictor = match &e.predictor {
            Some(p) => load_predictor(Some(&resolve(dir, p)))?,
            None => controller.predictor,
        };
        if !(e.sigma_exec >= 0.0) {
            return Err(Error::InvalidInput("sigma_exec must be non-negative".into()));
        }
        if e.n_max < 1 || e.n_max > self.predictor.n_model {
            return Err(Error::InvalidInput(format!(
                "execution n_max {} must lie in [1, n_model = {}]",
                e.n_max, self.predictor.n_model
            )));
        }
        Ok(ExecutionModel { prefill, decode, predictor, sigma_exec: e.sigma_exec, seed: e.seed, n_max: e.n_max })
    }

    pub fn trace(&self, dir: &Path) -> Result<Vec<Job>> {
        let path = resolve(dir, &self.trace);
        require_file(&path)?;
        load_trace(&path)
    }

    /// Loads everything the manifest references.
    pub fn experiment(&self, dir: &Path) -> Result<Experiment> {
        if self.policies.is_empty() || self.strategies.is_empty() {
            return Err(Error::InvalidInput("manifest needs at least one policy and one strategy".into()));
        }
        let controller = self.controller(dir)?;
        let policies =
            self.policies.iter().map(|s| Ok(self.policy(s.parse()?, &controller))).collect::<Result<Vec<_>>>()?;
        Ok(Experiment {
            base: SweepBase {
                trace: self.trace(dir)?,
                policies,
                strategies: self.strategies.clone(),
                model: self.execution_model(dir, &controller)?,
                score_model: self.score.clone(),
            },
            output_dir: resolve(dir, &self.output_dir),
            sweep: self.sweep.clone(),
        })
    }
}
