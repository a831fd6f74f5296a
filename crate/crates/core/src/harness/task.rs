//! Synthetic teacher–student tasks with a source–target similarity knob.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::measures::{DataSet, ParticleCloud};
use crate::mfnet::{self, Activation};
use crate::priors::{GibbsPrior, Potential};
use crate::rng::{self, purpose};

/// Law of the teacher atoms `(a, w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TeacherLaw {
    /// `a ∼ N(a_mean, a_std²)`, `w ∼ N(0, w_std² I)`.
    Gaussian { a_mean: f64, a_std: f64, w_std: f64 },
    /// Atoms drawn from a Gibbs prior.
    Prior { potential: Potential, sigma: f64 },
    /// Explicit atoms, each `[a, w_1, ..., w_q]`.
    Fixed { atoms: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSpec {
    pub atoms: usize,
    pub law: TeacherLaw,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Source and target share the teacher and the input law; `shift` is ignored.
    #[default]
    SharedTeacher,
    /// Target teacher has `shift` added to every outer weight.
    ShiftedOuter,
    /// Target inputs have mean `shift · e₁`.
    ShiftedInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub input_dim: usize,
    pub teacher: TeacherSpec,
    pub activation: Activation,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub mode: ShiftMode,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| crate::Error::Config {
            field: field.to_string(),
            message,
        };
        if self.input_dim == 0 {
            return Err(bad("task.input_dim", "must be at least 1".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(bad("task.noise_std", format!("must be nonnegative, got {}", self.noise_std)));
        }
        if !(self.shift.is_finite() && self.shift >= 0.0) {
            return Err(bad("task.shift", format!("must be nonnegative, got {}", self.shift)));
        }
        match &self.teacher.law {
            TeacherLaw::Fixed { atoms } => {
                if atoms.is_empty() || atoms.iter().any(|a| a.len() != self.input_dim + 1) {
                    return Err(bad(
                        "task.teacher.law.fixed.atoms",
                        format!("need at least one atom of length {}", self.input_dim + 1),
                    ));
                }
            }
            _ if self.teacher.atoms == 0 => {
                return Err(bad("task.teacher.atoms", "must be at least 1".into()));
            }
            TeacherLaw::Gaussian { a_std, w_std, .. } if !(*a_std >= 0.0 && *w_std >= 0.0) => {
                return Err(bad("task.teacher.law.gaussian", "standard deviations must be nonnegative".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_std == 0.0
    }
}

/// One data-generating law `ν_pop`: `x ∼ N(x_shift · e₁, I)`, `y = Φ(teacher, x) + noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGenerator {
    pub teacher: ParticleCloud,
    pub act: Activation,
    pub x_shift: f64,
    pub noise_std: f64,
}

impl TaskGenerator {
    pub fn input_dim(&self) -> usize {
        self.teacher.dim() - 1
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DataSet {
        let q = self.input_dim();
        let mut xs = Vec::with_capacity(n * q);
        let mut ys = Vec::with_capacity(n);
        let mut x = vec![0.0; q];
        for _ in 0..n {
            for v in x.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            x[0] += self.x_shift;
            let mut y = mfnet::predict_unchecked(&self.teacher, &x, self.act);
            if self.noise_std > 0.0 {
                let e: f64 = rng.sample(StandardNormal);
                y += self.noise_std * e;
            }
            xs.extend_from_slice(&x);
            ys.push(y);
        }
        DataSet::from_raw(q, xs, ys)
    }
}

/// `E(1 + ‖Z‖²)^k` for `k = 2, 4`, estimated from one large sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataMoments {
    pub m2: f64,
    pub m4: f64,
    pub samples: usize,
}

impl DataMoments {
    pub fn of(data: &DataSet) -> Self {
        let n = data.len() as f64;
        let (mut m2, mut m4) = (0.0, 0.0);
        for z in data.samples() {
            let s = 1.0 + z.norm_sq();
            m2 += s * s;
            m4 += (s * s) * (s * s);
        }
        Self {
            m2: m2 / n,
            m4: m4 / n,
            samples: data.len(),
        }
    }
}

/// Monte-Carlo sample size for [`TaskPair::moments`].
pub const MOMENT_SAMPLES: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskPair {
    pub spec: TaskSpec,
    pub source: TaskGenerator,
    pub target: TaskGenerator,
}

/// Draws the teacher and builds the source and target laws.
pub fn gen_task(spec: &TaskSpec, seed: u64) -> Result<TaskPair> {
    spec.validate()?;
    let q = spec.input_dim;
    let mut g = rng::stream(seed, &[purpose::TEACHER]);
    let teacher = match &spec.teacher.law {
        TeacherLaw::Gaussian { a_mean, a_std, w_std } => {
            let mut coords = Vec::with_capacity(spec.teacher.atoms * (q + 1));
            for _ in 0..spec.teacher.atoms {
                let z: f64 = g.sample(StandardNormal);
                coords.push(a_mean + a_std * z);
                for _ in 0..q {
                    let z: f64 = g.sample(StandardNormal);
                    coords.push(w_std * z);
                }
            }
            ParticleCloud::new(q + 1, coords)?
        }
        TeacherLaw::Prior { potential, sigma } => {
            GibbsPrior::new(*potential, *sigma, q + 1)?.sample(spec.teacher.atoms, &mut g)?
        }
        TeacherLaw::Fixed { atoms } => ParticleCloud::from_atoms(atoms)?,
    };
    let source = TaskGenerator {
        teacher: teacher.clone(),
        act: spec.activation,
        x_shift: 0.0,
        noise_std: spec.noise_std,
    };
    let mut target = source.clone();
    match spec.mode {
        ShiftMode::SharedTeacher => {}
        ShiftMode::ShiftedOuter => {
            let mut c = teacher.into_coords();
            for a in c.iter_mut().step_by(q + 1) {
                *a += spec.shift;
            }
            target.teacher = ParticleCloud::new(q + 1, c)?;
        }
        ShiftMode::ShiftedInput => target.x_shift = spec.shift,
    }
    Ok(TaskPair {
        spec: spec.clone(),
        source,
        target,
    })
}

impl TaskPair {
    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Target training set for replicate seed `seed`.
    pub fn target_train(&self, n: usize, seed: u64) -> DataSet {
        self.target.sample(n, &mut rng::stream(seed, &[purpose::DATA_TARGET]))
    }

    pub fn source_train(&self, n: usize, seed: u64) -> DataSet {
        self.source.sample(n, &mut rng::stream(seed, &[purpose::DATA_SOURCE]))
    }

    /// Held-out target set approximating `ν_pop^t`.
    pub fn target_test(&self, n: usize, seed: u64) -> DataSet {
        self.target.sample(n, &mut rng::stream(seed, &[purpose::DATA_TEST]))
    }

    /// `(target, source)` data moments from [`MOMENT_SAMPLES`] draws each.
    pub fn moments(&self, seed: u64) -> (DataMoments, DataMoments) {
        let t = self.target.sample(MOMENT_SAMPLES, &mut rng::stream(seed, &[purpose::MONTE_CARLO, 1]));
        let s = self.source.sample(MOMENT_SAMPLES, &mut rng::stream(seed, &[purpose::MONTE_CARLO, 2]));
        (DataMoments::of(&t), DataMoments::of(&s))
    }
}

/// The default desk-scale task: `q = 4`, a 4-atom sigmoid teacher, noiseless, `δ = 0`.
pub fn default_task() -> TaskSpec {
    TaskSpec {
        input_dim: 4,
        teacher: TeacherSpec {
            atoms: 4,
            law: TeacherLaw::Gaussian {
                a_mean: 1.0,
                a_std: 0.5,
                w_std: 1.0,
            },
        },
        activation: Activation::Sigmoid,
        noise_std: 0.0,
        shift: 0.0,
        mode: ShiftMode::SharedTeacher,
    }
}
