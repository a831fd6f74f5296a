//! Single-run jobs behind the `train` and `similarity` commands.

use std::fs::File;
use std::io::BufReader;

use serde::{Deserialize, Serialize};

use super::experiment::PriorSpec;
use super::task::{default_task, gen_task, TaskSpec};
use crate::analysis::ipm_dictionary;
use crate::error::{Error, Result};
use crate::measures::{read_dataset, DataSet};
use crate::mfnet::{Activation, LossKind, OuterLoss};
use crate::priors::{GibbsPrior, Potential};
use crate::trainer::{train, Scenario, TrainConfig, TrainedModel};

/// Parses JSON into `T`, reporting the path of the first offending field.
pub fn parse_config<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            field: if path == "." { "config".into() } else { path },
            message: e.inner().to_string(),
        }
    })
}

fn sigmoid() -> Activation {
    Activation::Sigmoid
}
fn quadratic() -> LossKind {
    LossKind::Quadratic
}
fn n_default() -> usize {
    64
}
fn test_default() -> usize {
    20_000
}

/// One training run on freshly generated task data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    #[serde(default = "default_task")]
    pub task: TaskSpec,
    #[serde(default = "sigmoid")]
    pub activation: Activation,
    #[serde(default = "quadratic")]
    pub loss: LossKind,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default = "n_default")]
    pub n_t: usize,
    /// Ignored for supervised learning.
    #[serde(default = "n_default")]
    pub n_s: usize,
    #[serde(default = "test_default")]
    pub test_size: usize,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub train_risk: f64,
    pub test_risk: f64,
}

impl TrainJob {
    pub fn from_json(text: &str) -> Result<Self> {
        let job: Self = parse_config(text)?;
        job.task.validate()?;
        job.train.validate()?;
        if job.n_t == 0 {
            return Err(Error::Config {
                field: "n_t".into(),
                message: "must be positive".into(),
            });
        }
        Ok(job)
    }

    /// Data come from the task seeded with `train.seed`; the same job always
    /// produces the same model.
    pub fn run(&self) -> Result<TrainOutcome> {
        let seed = self.train.seed;
        let task = gen_task(&self.task, seed)?;
        let data_t = task.target_train(self.n_t, seed);
        let data_s = (self.train.scenario != Scenario::Supervised).then(|| task.source_train(self.n_s, seed));
        let test = task.target_test(self.test_size, seed);
        let potential = match (self.train.scenario, self.prior.potential) {
            (Scenario::Finetune, Potential::Poly10) => Potential::Poly10Separable,
            (_, p) => p,
        };
        let prior = GibbsPrior::new(potential, self.prior.sigma, self.task.input_dim + 1)?;
        let model = train(&self.train, self.activation, OuterLoss::from_kind(self.loss), &prior, &data_t, data_s.as_ref())?;
        Ok(TrainOutcome {
            train_risk: model.risk(&data_t)?,
            test_risk: model.risk(&test)?,
            model,
        })
    }
}

fn power_default() -> u32 {
    2
}
fn dictionary_default() -> usize {
    256
}
fn sample_default() -> usize {
    2000
}

/// Dictionary IPM between two data sets, either loaded from files or drawn
/// from the source and target sides of a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityJob {
    #[serde(default = "default_task")]
    pub task: TaskSpec,
    #[serde(default = "sample_default")]
    pub samples: usize,
    #[serde(default = "power_default")]
    pub power: u32,
    #[serde(default = "dictionary_default")]
    pub dictionary: usize,
    #[serde(default)]
    pub seed: u64,
    /// Data files in the JSON-lines format; both or neither.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityOutcome {
    pub ipm: f64,
    pub power: u32,
    pub dictionary: usize,
    /// Always a lower bound on the class IPM.
    pub note: String,
}

fn load(path: &str) -> Result<DataSet> {
    Ok(read_dataset(BufReader::new(File::open(path)?))?.1)
}

impl SimilarityJob {
    pub fn from_json(text: &str) -> Result<Self> {
        let job: Self = parse_config(text)?;
        job.task.validate()?;
        if job.a.is_some() != job.b.is_some() {
            return Err(Error::Config {
                field: if job.a.is_some() { "b" } else { "a" }.into(),
                message: "give both data files or neither".into(),
            });
        }
        Ok(job)
    }

    pub fn run(&self) -> Result<SimilarityOutcome> {
        let (a, b) = match (&self.a, &self.b) {
            (Some(a), Some(b)) => (load(a)?, load(b)?),
            _ => {
                let t = gen_task(&self.task, self.seed)?;
                (t.source_train(self.samples, self.seed), t.target_train(self.samples, self.seed))
            }
        };
        Ok(SimilarityOutcome {
            ipm: ipm_dictionary(&a, &b, self.power, self.dictionary, self.seed)?,
            power: self.power,
            dictionary: self.dictionary,
            note: "finite-dictionary estimate: a lower bound on the IPM".into(),
        })
    }
}
