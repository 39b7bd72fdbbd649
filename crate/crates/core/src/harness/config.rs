//! Flat key-value configuration with dotted sections.
//!
//! The format is one `key = value` pair per line, `#` comments, no nesting;
//! it diffs cleanly and parses the same from any language. Validation walks
//! keys in a fixed order so an invalid file is always reported by its first
//! offending key.

use crate::embedding::{Embedding, GuidanceParams};
use crate::error::{Error, Result};
use crate::fields::{
    AlignmentObjective, EmbedMap, GaussianMixtureField, LinearEmbeddingField, TimeGain,
    VelocityField,
};
use crate::numerics::{RealMat, RealVec};
use crate::sampler::{MaskPolicy, SamplerConfig};
use crate::theory::SweepSpec;
use crate::train::{load_checkpoint, EmbeddingScheme, GmTask, TrainConfig};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

/// Ordered key-value configuration.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: Vec<(String, String)>,
    index: HashMap<String, usize>,
}

impl ConfigMap {
    pub fn new() -> Self {
        ConfigMap::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = ConfigMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig {
                    key: format!("line {}", lineno + 1),
                    reason: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            // inline comments after the value
            let value = match value.split_once('#') {
                Some((v, _)) => v.trim().to_string(),
                None => value.trim().to_string(),
            };
            if key.is_empty() {
                return Err(Error::InvalidConfig {
                    key: format!("line {}", lineno + 1),
                    reason: "empty key".into(),
                });
            }
            if map.index.contains_key(&key) {
                return Err(Error::InvalidConfig {
                    key,
                    reason: "duplicate key".into(),
                });
            }
            map.set(&key, &value);
        }
        Ok(map)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        match self.index.get(key) {
            Some(i) => self.entries[*i].1 = value.to_string(),
            None => {
                self.index.insert(key.to_string(), self.entries.len());
                self.entries.push((key.to_string(), value.to_string()));
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|i| self.entries[*i].1.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::InvalidConfig {
            key: key.to_string(),
            reason: "missing".into(),
        })
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<f64>().map(Some).map_err(|_| Error::InvalidConfig {
                key: key.to_string(),
                reason: format!("`{raw}` is not a real number"),
            }),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.get_f64(key)?.unwrap_or(default))
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<usize>()
                .map(Some)
                .map_err(|_| Error::InvalidConfig {
                    key: key.to_string(),
                    reason: format!("`{raw}` is not a non-negative integer"),
                }),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_usize(key)?.unwrap_or(default))
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<u64>().map(Some).map_err(|_| Error::InvalidConfig {
                key: key.to_string(),
                reason: format!("`{raw}` is not an unsigned integer"),
            }),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(raw) => Err(Error::InvalidConfig {
                key: key.to_string(),
                reason: format!("`{raw}` is not `true`/`false`"),
            }),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.require(key)?;
        raw.split(',')
            .map(|piece| {
                piece.trim().parse::<f64>().map_err(|_| Error::InvalidConfig {
                    key: key.to_string(),
                    reason: format!("`{}` is not a real number", piece.trim()),
                })
            })
            .collect()
    }

    /// Rows separated by `;`, entries by `,`.
    pub fn matrix(&self, key: &str) -> Result<Vec<Vec<f64>>> {
        let raw = self.require(key)?;
        let mut rows = Vec::new();
        for row in raw.split(';') {
            let mut vals = Vec::new();
            for piece in row.split(',') {
                vals.push(piece.trim().parse::<f64>().map_err(|_| Error::InvalidConfig {
                    key: key.to_string(),
                    reason: format!("`{}` is not a real number", piece.trim()),
                })?);
            }
            rows.push(vals);
        }
        if rows.iter().any(|r| r.len() != rows[0].len()) {
            return Err(Error::InvalidConfig {
                key: key.to_string(),
                reason: "ragged matrix rows".into(),
            });
        }
        Ok(rows)
    }
}

/// Which field family an experiment runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Gm,
    Linear,
    Mlp,
}

impl TaskKind {
    pub fn label(&self) -> &'static str {
        match self {
            TaskKind::Gm => "gm",
            TaskKind::Linear => "linear",
            TaskKind::Mlp => "mlp",
        }
    }
}

/// Fully resolved experiment: field family, sampler template, seeds, and
/// (for the MLP family) the training recipe and checkpoint path.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub kind: TaskKind,
    pub spec: SweepSpec,
    pub record_diagnostics: bool,
    pub seed: u64,
    pub seed_count: usize,
    pub workers: usize,
    pub class: usize,
    pub mixture: Option<GaussianMixtureField>,
    pub linear: Option<LinearEmbeddingField>,
    pub mlp_checkpoint: Option<PathBuf>,
    pub mlp_hidden: Vec<usize>,
    pub train: TrainConfig,
    pub scheme: EmbeddingScheme,
    /// Exact text this experiment was resolved from; replaying it rebuilds
    /// the same runs.
    pub source: ConfigMap,
}

impl Experiment {
    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let cfg = SamplerConfig::new(
            self.spec.steps,
            self.spec.guidance.clone(),
            self.spec.c_text.clone(),
            self.spec.c_uncond.clone(),
            &self.spec.mask,
        )?;
        Ok(cfg.with_diagnostics(self.record_diagnostics))
    }

    /// Builds the velocity field, loading the checkpoint for the MLP family.
    pub fn load_field(&self, base_dir: &Path) -> Result<Box<dyn VelocityField>> {
        match self.kind {
            TaskKind::Gm => Ok(Box::new(self.mixture.clone().expect("gm task"))),
            TaskKind::Linear => Ok(Box::new(self.linear.clone().expect("linear task"))),
            TaskKind::Mlp => {
                let rel = self.mlp_checkpoint.as_ref().ok_or_else(|| Error::InvalidConfig {
                    key: "mlp.checkpoint".into(),
                    reason: "missing".into(),
                })?;
                let path = if rel.is_absolute() {
                    rel.clone()
                } else {
                    base_dir.join(rel)
                };
                let bytes = std::fs::read(&path).map_err(|e| Error::InvalidConfig {
                    key: "mlp.checkpoint".into(),
                    reason: format!("{}: {e}", path.display()),
                })?;
                let mixture = self.mixture.as_ref().expect("mlp task has a reference mixture");
                let (field, _seed) = load_checkpoint(
                    &mut bytes.as_slice(),
                    mixture.state_dim(),
                    mixture.classes(),
                )?;
                Ok(Box::new(field))
            }
        }
    }

    /// The analytic alignment objective for this task.
    pub fn objective(&self) -> Result<Box<dyn AlignmentObjective>> {
        match self.kind {
            TaskKind::Gm | TaskKind::Mlp => {
                let mixture = self.mixture.as_ref().expect("mixture task");
                Ok(Box::new(mixture.posterior_objective(self.class)?))
            }
            TaskKind::Linear => {
                let linear = self.linear.as_ref().expect("linear task");
                Ok(Box::new(
                    linear.alignment_objective(&self.spec.c_text, &self.spec.c_uncond)?,
                ))
            }
        }
    }

    /// Training task for the MLP family (also valid for plain mixtures).
    pub fn gm_task(&self) -> Result<GmTask> {
        let mixture = self.mixture.clone().ok_or_else(|| Error::InvalidConfig {
            key: "task.kind".into(),
            reason: "training needs a mixture task".into(),
        })?;
        Ok(GmTask::new(mixture, self.scheme.clone()))
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seed_count as u64).map(|i| self.seed + i).collect()
    }
}

fn parse_mask(raw: &str) -> Result<MaskPolicy> {
    let key = "sampler.rf_mask";
    match raw {
        "all" => Ok(MaskPolicy::All),
        "none" => Ok(MaskPolicy::None),
        other => {
            if let Some(k) = other.strip_prefix("first:") {
                let k = k.parse::<usize>().map_err(|_| Error::InvalidConfig {
                    key: key.into(),
                    reason: format!("`{other}`: bad step count"),
                })?;
                Ok(MaskPolicy::FirstK(k))
            } else if let Some(f) = other.strip_prefix("fraction:") {
                let f = f.parse::<f64>().map_err(|_| Error::InvalidConfig {
                    key: key.into(),
                    reason: format!("`{other}`: bad fraction"),
                })?;
                Ok(MaskPolicy::Fraction(f))
            } else if let Some(bits) = other.strip_prefix("bits:") {
                let mut mask = Vec::with_capacity(bits.len());
                for ch in bits.chars() {
                    match ch {
                        '0' => mask.push(false),
                        '1' => mask.push(true),
                        _ => {
                            return Err(Error::InvalidConfig {
                                key: key.into(),
                                reason: format!("`{other}`: bits must be 0/1"),
                            })
                        }
                    }
                }
                Ok(MaskPolicy::Bits(mask))
            } else {
                Err(Error::InvalidConfig {
                    key: key.into(),
                    reason: format!("`{other}` is not all|none|first:K|fraction:F|bits:…"),
                })
            }
        }
    }
}

fn parse_embed_map(cfg: &ConfigMap) -> Result<EmbedMap> {
    match cfg.get("task.embed_map").unwrap_or("onehot") {
        "onehot" => Ok(EmbedMap::OneHot),
        "softmax" => Ok(EmbedMap::Softmax {
            sharpness: cfg.f64_or("task.softmax_sharpness", 2.0)?,
        }),
        other => Err(Error::InvalidConfig {
            key: "task.embed_map".into(),
            reason: format!("`{other}` is not onehot|softmax"),
        }),
    }
}

fn resolve_mixture(cfg: &ConfigMap) -> Result<GaussianMixtureField> {
    let mean_rows = cfg.matrix("task.means")?;
    let means: Vec<RealVec> = mean_rows.into_iter().map(RealVec::new).collect();
    let vars = cfg.f64_list("task.vars")?;
    let priors = cfg.f64_list("task.priors")?;
    GaussianMixtureField::new(means, vars, priors, parse_embed_map(cfg)?)
}

fn resolve_guidance(cfg: &ConfigMap) -> Result<GuidanceParams> {
    let defaults = GuidanceParams::default();
    let guidance = GuidanceParams {
        s_high: cfg.f64_or("guidance.s_high", defaults.s_high)?,
        beta_high: cfg.f64_or("guidance.beta_high", defaults.beta_high)?,
        s_low: cfg.f64_or("guidance.s_low", defaults.s_low)?,
        beta_low: cfg.f64_or("guidance.beta_low", defaults.beta_low)?,
        gamma: cfg.f64_or("guidance.gamma", defaults.gamma)?,
        alpha: cfg.usize_or("guidance.alpha", defaults.alpha)?,
        w: cfg.f64_or("guidance.w", defaults.w)?,
    };
    guidance.validate().map_err(|e| Error::InvalidConfig {
        key: "guidance".into(),
        reason: e.to_string(),
    })?;
    Ok(guidance)
}

/// Resolves a parsed config into a runnable experiment. The `RF_SEED`
/// environment variable overrides `run.seed` when set.
pub fn resolve(cfg: &ConfigMap) -> Result<Experiment> {
    let kind = match cfg.require("task.kind")? {
        "gm" => TaskKind::Gm,
        "linear" => TaskKind::Linear,
        "mlp" => TaskKind::Mlp,
        other => {
            return Err(Error::InvalidConfig {
                key: "task.kind".into(),
                reason: format!("`{other}` is not gm|linear|mlp"),
            })
        }
    };

    let mut mixture = None;
    let mut linear = None;
    let (c_text, c_uncond, class);
    match kind {
        TaskKind::Gm | TaskKind::Mlp => {
            let field = resolve_mixture(cfg)?;
            let classes = field.classes();
            class = cfg.usize_or("task.class", 0)?;
            if class >= classes {
                return Err(Error::InvalidConfig {
                    key: "task.class".into(),
                    reason: format!("class {class} out of range for {classes} classes"),
                });
            }
            c_text = Embedding::one_hot(class, classes);
            c_uncond = match cfg.get("task.uncond").unwrap_or("uniform") {
                "uniform" => Embedding::uniform(classes),
                "zero" => Embedding::zeros(classes),
                other => {
                    return Err(Error::InvalidConfig {
                        key: "task.uncond".into(),
                        reason: format!("`{other}` is not uniform|zero"),
                    })
                }
            };
            mixture = Some(field);
        }
        TaskKind::Linear => {
            let base = RealMat::from_rows(&cfg.matrix("linear.base")?);
            let bias = RealVec::new(cfg.f64_list("linear.bias")?);
            let cond = RealMat::from_rows(&cfg.matrix("linear.cond")?);
            let gain = TimeGain::Constant(cfg.f64_or("linear.gain", 1.0)?);
            let field = LinearEmbeddingField::new(base, bias, cond, gain)?;
            c_text = Embedding::from_values(cfg.f64_list("task.c_text")?);
            c_uncond = Embedding::from_values(cfg.f64_list("task.c_uncond")?);
            if c_text.dim() != field.cond_dim() || c_uncond.dim() != field.cond_dim() {
                return Err(Error::InvalidConfig {
                    key: "task.c_text".into(),
                    reason: "embedding width must match the conditioning matrix".into(),
                });
            }
            class = 0;
            linear = Some(field);
        }
    }

    let steps = cfg.usize_or("sampler.steps", 16)?;
    let mask = parse_mask(cfg.get("sampler.rf_mask").unwrap_or("all"))?;
    let guidance = resolve_guidance(cfg)?;
    let record_diagnostics = cfg.bool_or("sampler.record_diagnostics", false)?;

    let mut seed = cfg.get_u64("run.seed")?.unwrap_or(42);
    if let Ok(env_seed) = std::env::var("RF_SEED") {
        seed = env_seed.parse::<u64>().map_err(|_| Error::InvalidConfig {
            key: "RF_SEED".into(),
            reason: format!("`{env_seed}` is not an unsigned integer"),
        })?;
    }
    let seed_count = cfg.usize_or("run.seeds", 200)?;
    let workers = cfg.usize_or("run.workers", 0)?;

    let train_defaults = TrainConfig::default();
    let train = TrainConfig {
        batch_size: cfg.usize_or("train.batch_size", train_defaults.batch_size)?,
        iterations: cfg.usize_or("train.iterations", train_defaults.iterations)?,
        learning_rate: cfg.f64_or("train.learning_rate", train_defaults.learning_rate)?,
        beta1: cfg.f64_or("train.beta1", train_defaults.beta1)?,
        beta2: cfg.f64_or("train.beta2", train_defaults.beta2)?,
        epsilon: cfg.f64_or("train.epsilon", train_defaults.epsilon)?,
        seed: cfg.get_u64("train.seed")?.unwrap_or(train_defaults.seed),
    };
    let default_scheme = EmbeddingScheme::default();
    let scheme = EmbeddingScheme {
        p_onehot: cfg.f64_or("train.p_onehot", default_scheme.p_onehot)?,
        p_uncond: cfg.f64_or("train.p_uncond", default_scheme.p_uncond)?,
        s_min: cfg.f64_or("train.s_min", default_scheme.s_min)?,
        s_max: cfg.f64_or("train.s_max", default_scheme.s_max)?,
    };
    let mlp_hidden: Vec<usize> = match cfg.get("mlp.hidden") {
        None => vec![64, 64],
        Some(_) => cfg
            .f64_list("mlp.hidden")?
            .into_iter()
            .map(|v| v as usize)
            .collect(),
    };
    let mlp_checkpoint = cfg.get("mlp.checkpoint").map(PathBuf::from);
    if kind == TaskKind::Mlp && mlp_checkpoint.is_none() {
        return Err(Error::InvalidConfig {
            key: "mlp.checkpoint".into(),
            reason: "missing".into(),
        });
    }

    let spec = SweepSpec {
        steps,
        guidance,
        c_text,
        c_uncond,
        mask,
    };
    // building once validates mask length against the step count
    spec.config_for(crate::theory::SweepAxis::Gamma, spec.guidance.gamma)?;

    Ok(Experiment {
        kind,
        spec,
        record_diagnostics,
        seed,
        seed_count,
        workers,
        class,
        mixture,
        linear,
        mlp_checkpoint,
        mlp_hidden,
        train,
        scheme,
        source: cfg.clone(),
    })
}

/// Default config text for each task family. Comment annotations say where
/// each number comes from: `default` for the library-wide guidance values,
/// `tuned` for constants picked on the bundled toy tasks.
pub fn default_config_text(kind: TaskKind) -> String {
    let guidance = "\
# guidance knobs
guidance.s_high = 3.5           # default
guidance.beta_high = 0.7        # default
guidance.s_low = 0.0            # default
guidance.beta_low = 0.3         # default
guidance.gamma = 0.5            # default
guidance.alpha = 1              # default
guidance.w = 1.0                # inert unless a field opts into pre-scaling
";
    let sampler = "\
# sampler schedule
sampler.steps = 16
sampler.rf_mask = all           # all | none | first:K | fraction:F | bits:0110…
sampler.record_diagnostics = false
";
    let run = "\
# run control (RF_SEED env var overrides run.seed)
run.seed = 42
run.seeds = 200
run.workers = 0                 # 0 = all cores, 1 = sequential
";
    let mixture_block = |kind: &str| {
        format!(
            "\
# two-class mixture: tight target class inside a broad background class
task.kind = {kind}
task.means = 0.0, 0.0; 0.5, 0.0
task.vars = 0.25, 4.0
task.priors = 0.5, 0.5
task.embed_map = softmax        # onehot | softmax
task.softmax_sharpness = 2.0    # tuned on the bundled mixture task
task.class = 0                  # conditioned class (c_text = its one-hot)
task.uncond = uniform           # uniform | zero
"
        )
    };
    match kind {
        TaskKind::Gm => format!("{}\n{sampler}\n{guidance}\n{run}", mixture_block("gm")),
        TaskKind::Linear => format!(
            "\
# embedding-linear field: v = base*x + bias + cond*c
task.kind = linear
linear.base = 0.0, 0.0; 0.0, 0.0
linear.bias = 0.1, -0.2
linear.cond = 1.0, 0.3; -0.2, 1.0
linear.gain = 1.0
task.c_text = 1.0, 0.0
task.c_uncond = 0.0, 0.0
\n{sampler}\n{guidance}\n{run}"
        ),
        TaskKind::Mlp => format!(
            "\
{}
# learned field (the mixture above supplies training data and scoring)
mlp.checkpoint = mlp.ckpt
mlp.hidden = 64, 64

# training recipe (tuned on the bundled mixture task)
train.batch_size = 128
train.iterations = 20000
train.learning_rate = 0.003
train.beta1 = 0.9
train.beta2 = 0.999
train.epsilon = 1e-8
train.seed = 7
train.p_onehot = 0.5
train.p_uncond = 0.2
train.s_min = -1.5
train.s_max = 4.0
\n{sampler}\n{guidance}\n{run}",
            mixture_block("mlp")
        ),
    }
}
