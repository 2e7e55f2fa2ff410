//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Reals accept `a/b` fractions
//! (`epsilon = 16/255`); lists are comma separated. Unknown keys are errors so
//! typos do not silently fall back to defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bast_core::attack::{
    gaussian_kernel, AttackBudget, DiversityConfig, MomentumFrame, NormMode, SmoothingKernel,
    UpdateRule,
};
use bast_core::ensemble::{BastSchedule, PhaseOrder, Strategy};
use bast_core::evaluation::Protocol;
use bast_core::model::{Architecture, RobustnessTag};
use bast_core::model::TrainConfig;

use crate::dataset::DatasetSource;
use crate::error::{HarnessError, Result};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "BAST_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchKind {
    Mlp,
    Cnn,
}

impl FromStr for ArchKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mlp" => Ok(ArchKind::Mlp),
            "cnn" => Ok(ArchKind::Cnn),
            other => Err(format!("unknown architecture `{other}` (mlp or cnn)")),
        }
    }
}

/// One roster line: `id:arch:tag:protocol[:weights_path]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelEntry {
    pub id: String,
    pub arch: ArchKind,
    pub tag: RobustnessTag,
    pub protocol: Protocol,
    pub weights: Option<PathBuf>,
}

impl FromStr for ModelEntry {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if !(4..=5).contains(&parts.len()) || parts[0].is_empty() {
            return Err(format!("model `{s}` should be id:arch:tag:protocol[:weights]"));
        }
        Ok(ModelEntry {
            id: parts[0].to_string(),
            arch: parts[1].parse()?,
            tag: parts[2].parse().map_err(|e: bast_core::Error| e.to_string())?,
            protocol: parts[3].parse().map_err(|e: bast_core::Error| e.to_string())?,
            weights: parts.get(4).map(PathBuf::from),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Idx,
    Csv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub image_side: usize,
    pub synthetic_noise: f64,
    pub synthetic_ink: (f64, f64),
    pub num_classes: usize,

    pub models: Vec<ModelEntry>,
    pub mlp_hidden: usize,
    pub cnn_channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adv_epsilon: f64,

    pub strategies: Vec<Strategy>,
    pub epsilon: f64,
    /// Iterations for single, bagging, stacking and without-stacking.
    pub iterations: usize,
    /// Outer BAST iterations; `ceil(200 / (m + n))` when unset.
    pub bast_iterations: Option<usize>,
    /// Without-bagging iterations; `ceil(200 / members)` when unset.
    pub without_bagging_iterations: Option<usize>,
    pub mu: f64,
    pub update_rule: String,
    pub clip_bound: f64,
    pub norm_mode: NormMode,
    pub momentum_frame: MomentumFrame,
    pub m: usize,
    pub n: usize,
    pub phase_order: PhaseOrder,
    /// Per-member loss weights within each white-box group; equal when unset.
    pub easy_weights: Option<Vec<f64>>,
    pub robust_weights: Option<Vec<f64>>,
    pub diversity: DiversityConfig,
    /// Side of the Gaussian smoothing kernel; 0 disables smoothing.
    pub kernel_size: usize,
    pub kernel_sigma: f64,

    pub eval_size: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub preview_count: usize,
    pub sweep: Vec<(usize, usize)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetKind::Synthetic,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_csv: None,
            test_csv: None,
            synthetic_train: 4000,
            synthetic_test: 1500,
            image_side: 16,
            synthetic_noise: 0.03,
            synthetic_ink: (0.3, 0.5),
            num_classes: 10,
            models: vec![
                "easy_cnn_a:cnn:easy:white".parse().expect("literal"),
                "easy_cnn_b:cnn:easy:white".parse().expect("literal"),
                "robust_mlp:mlp:robust:white".parse().expect("literal"),
                "heldout_mlp:mlp:easy:black".parse().expect("literal"),
            ],
            mlp_hidden: 64,
            cnn_channels: 8,
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.1,
            adv_epsilon: 0.1,
            strategies: vec![
                Strategy::Bagging,
                Strategy::Stacking,
                Strategy::Bast,
                Strategy::WithoutStacking,
                Strategy::WithoutBagging,
            ],
            epsilon: 16.0 / 255.0,
            iterations: 100,
            bast_iterations: None,
            without_bagging_iterations: None,
            mu: 1.0,
            update_rule: "clip_round".into(),
            clip_bound: 2.0,
            norm_mode: NormMode::Std,
            momentum_frame: MomentumFrame::Velocity,
            m: 2,
            n: 1,
            phase_order: PhaseOrder::NonTargetedFirst,
            easy_weights: None,
            robust_weights: None,
            diversity: DiversityConfig::default(),
            kernel_size: 7,
            kernel_sigma: 3.0,
            eval_size: 1000,
            seed: 0,
            output_dir: PathBuf::from("bast-out"),
            preview_count: 4,
            sweep: vec![(1, 1), (2, 1), (3, 1), (5, 5), (10, 10)],
        }
    }
}

fn real(value: &str) -> std::result::Result<f64, String> {
    let parsed = match value.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
            a / b
        }
        None => value.parse().map_err(|_| format!("bad number `{value}`"))?,
    };
    if parsed.is_finite() {
        Ok(parsed)
    } else {
        Err(format!("`{value}` is not finite"))
    }
}

fn int<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("bad integer `{value}`"))
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn optional_int(value: &str) -> std::result::Result<Option<usize>, String> {
    match value {
        "" | "auto" => Ok(None),
        v => int(v).map(Some),
    }
}

fn weights(value: &str) -> std::result::Result<Option<Vec<f64>>, String> {
    match value {
        "" | "equal" => Ok(None),
        v => list(v).map(real).collect::<std::result::Result<Vec<_>, _>>().map(Some),
    }
}

fn core_err(e: bast_core::Error) -> String {
    e.to_string()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, context: &str) -> Result<()> {
        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("{context}:{}: expected `key = value`", number + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| HarnessError::Config(format!("{context}:{}: {e}", number + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override `{assignment}` needs key=value")))?;
        self.set(key.trim(), value.trim()).map_err(HarnessError::Config)
    }

    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let path = || Some(PathBuf::from(value));
        match key {
            "dataset" => {
                self.dataset = match value {
                    "synthetic" => DatasetKind::Synthetic,
                    "idx" => DatasetKind::Idx,
                    "csv" => DatasetKind::Csv,
                    other => return Err(format!("unknown dataset `{other}`")),
                }
            }
            "train_images" => self.train_images = path(),
            "train_labels" => self.train_labels = path(),
            "test_images" => self.test_images = path(),
            "test_labels" => self.test_labels = path(),
            "train_csv" => self.train_csv = path(),
            "test_csv" => self.test_csv = path(),
            "synthetic_train" => self.synthetic_train = int(value)?,
            "synthetic_test" => self.synthetic_test = int(value)?,
            "image_side" => self.image_side = int(value)?,
            "synthetic_noise" => self.synthetic_noise = real(value)?,
            "synthetic_ink_min" => self.synthetic_ink.0 = real(value)?,
            "synthetic_ink_max" => self.synthetic_ink.1 = real(value)?,
            "num_classes" => self.num_classes = int(value)?,
            "models" => self.models = list(value).map(str::parse).collect::<std::result::Result<_, _>>()?,
            "mlp_hidden" => self.mlp_hidden = int(value)?,
            "cnn_channels" => self.cnn_channels = int(value)?,
            "epochs" => self.epochs = int(value)?,
            "batch_size" => self.batch_size = int(value)?,
            "learning_rate" => self.learning_rate = real(value)?,
            "adv_epsilon" => self.adv_epsilon = real(value)?,
            "strategies" | "strategy" => {
                self.strategies = list(value)
                    .map(|s| s.parse().map_err(core_err))
                    .collect::<std::result::Result<_, _>>()?
            }
            "epsilon" => self.epsilon = real(value)?,
            "iterations" => self.iterations = int(value)?,
            "bast_iterations" => self.bast_iterations = optional_int(value)?,
            "without_bagging_iterations" => self.without_bagging_iterations = optional_int(value)?,
            "mu" => self.mu = real(value)?,
            "update_rule" => match value {
                "sign" | "clip_round" => self.update_rule = value.to_string(),
                other => return Err(format!("unknown update_rule `{other}` (sign or clip_round)")),
            },
            "clip_bound" => self.clip_bound = real(value)?,
            "norm_mode" => {
                self.norm_mode = match value {
                    "std" => NormMode::Std,
                    "l1" => NormMode::L1,
                    other => return Err(format!("unknown norm_mode `{other}` (std or l1)")),
                }
            }
            "momentum_frame" => {
                self.momentum_frame = match value {
                    "velocity" => MomentumFrame::Velocity,
                    "gradient" => MomentumFrame::Gradient,
                    other => return Err(format!("unknown momentum_frame `{other}` (velocity or gradient)")),
                }
            }
            "m" => self.m = int(value)?,
            "n" => self.n = int(value)?,
            "phase_order" => self.phase_order = value.parse().map_err(core_err)?,
            "easy_weights" => self.easy_weights = weights(value)?,
            "robust_weights" => self.robust_weights = weights(value)?,
            "diversity_probability" => self.diversity.apply_probability = real(value)?,
            "diversity_scale_min" => self.diversity.scale_min = real(value)?,
            "diversity_scale_max" => self.diversity.scale_max = real(value)?,
            "diversity_crop_fraction" => self.diversity.crop_fraction = real(value)?,
            "kernel_size" => self.kernel_size = int(value)?,
            "kernel_sigma" => self.kernel_sigma = real(value)?,
            "eval_size" => self.eval_size = int(value)?,
            "seed" => self.seed = int(value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "preview_count" => self.preview_count = int(value)?,
            "sweep" => {
                self.sweep = list(value)
                    .map(|pair| {
                        let (m, n) = pair
                            .split_once(':')
                            .ok_or_else(|| format!("sweep entry `{pair}` should be m:n"))?;
                        Ok((int(m.trim())?, int(n.trim())?))
                    })
                    .collect::<std::result::Result<_, String>>()?
            }
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Checks cross-field constraints that single keys cannot.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        let white = self.models.iter().filter(|m| m.protocol == Protocol::WhiteBox);
        if white.clone().next().is_none() {
            return fail("the roster needs at least one white-box model".into());
        }
        for (i, a) in self.models.iter().enumerate() {
            if self.models[..i].iter().any(|b| b.id == a.id) {
                return fail(format!("duplicate model id `{}`", a.id));
            }
        }
        let has = |tag| white.clone().any(|m| m.tag == tag);
        let needs_groups = self.strategies.iter().any(|s| {
            matches!(s, Strategy::Bast | Strategy::WithoutStacking | Strategy::WithoutBagging)
        }) || !self.sweep.is_empty();
        if needs_groups && !(has(RobustnessTag::Easy) && (has(RobustnessTag::Robust) || self.n == 0)) {
            return fail("group-aware strategies need white-box easy and robust models".into());
        }
        if self.strategies.is_empty() {
            return fail("no strategies configured".into());
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.eval_size == 0 {
            return fail("eval_size must be positive".into());
        }
        if self.kernel_size > 0 && self.kernel_size.is_multiple_of(2) {
            return fail(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        self.budget(self.iterations)?;
        self.train_config(false).validate()?;
        self.diversity.validate()?;
        BastSchedule::new(self.m, self.n)?;
        for &(m, n) in &self.sweep {
            BastSchedule::new(m, n)?;
        }
        self.dataset_sources()?;
        Ok(())
    }

    pub fn update_rule(&self) -> UpdateRule {
        match self.update_rule.as_str() {
            "sign" => UpdateRule::Sign,
            _ => UpdateRule::ClipRound { bound: self.clip_bound },
        }
    }

    pub fn budget(&self, iterations: usize) -> Result<AttackBudget> {
        let budget = AttackBudget::new(self.epsilon, iterations)?
            .with_mu(self.mu)
            .with_update_rule(self.update_rule())
            .with_norm_mode(self.norm_mode)
            .with_momentum_frame(self.momentum_frame);
        budget.validate()?;
        Ok(budget)
    }

    pub fn kernel(&self) -> Result<Option<SmoothingKernel>> {
        match self.kernel_size {
            0 => Ok(None),
            k => Ok(Some(gaussian_kernel(k, self.kernel_sigma)?)),
        }
    }

    pub fn schedule(&self, m: usize, n: usize) -> Result<BastSchedule> {
        let mut s = BastSchedule::new(m, n)?.with_phase_order(self.phase_order);
        if let Some(t) = self.bast_iterations {
            s = s.with_outer_iterations(t);
        }
        Ok(s)
    }

    pub fn architecture(&self, kind: ArchKind) -> Architecture {
        match kind {
            ArchKind::Mlp => Architecture::Mlp { hidden: self.mlp_hidden },
            ArchKind::Cnn => Architecture::Cnn { channels: self.cnn_channels },
        }
    }

    pub fn train_config(&self, adversarial: bool) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            adversarial,
            adv_epsilon: self.adv_epsilon,
        }
    }

    /// Train and test sources for file-backed datasets; `None` for synthetic.
    pub fn dataset_sources(&self) -> Result<Option<(DatasetSource, DatasetSource)>> {
        let need = |p: &Option<PathBuf>, key: &str| {
            p.clone()
                .ok_or_else(|| HarnessError::Config(format!("dataset needs `{key}`")))
        };
        Ok(match self.dataset {
            DatasetKind::Synthetic => None,
            DatasetKind::Idx => Some((
                DatasetSource::Idx {
                    images: need(&self.train_images, "train_images")?,
                    labels: need(&self.train_labels, "train_labels")?,
                },
                DatasetSource::Idx {
                    images: need(&self.test_images, "test_images")?,
                    labels: need(&self.test_labels, "test_labels")?,
                },
            )),
            DatasetKind::Csv => Some((
                DatasetSource::Csv {
                    path: need(&self.train_csv, "train_csv")?,
                },
                DatasetSource::Csv {
                    path: need(&self.test_csv, "test_csv")?,
                },
            )),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_text_with_comments_and_fractions() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(
            "# budget\nepsilon = 8/255  # half\n\nstrategies = bast, stacking\nsweep = 1:1, 3:1\nmodels = a:mlp:easy:white, b:cnn:robust:white:w/b.bin\n",
            "test",
        )
        .unwrap();
        assert_eq!(cfg.epsilon, 8.0 / 255.0);
        assert_eq!(cfg.strategies, vec![Strategy::Bast, Strategy::Stacking]);
        assert_eq!(cfg.sweep, vec![(1, 1), (3, 1)]);
        assert_eq!(cfg.models[1].weights, Some(PathBuf::from("w/b.bin")));
        assert_eq!(cfg.models[1].tag, RobustnessTag::Robust);
        cfg.validate().unwrap();
    }

    #[test]
    fn errors_name_the_line() {
        let mut cfg = ExperimentConfig::default();
        let err = cfg.apply_text("seed = 1\nepsilom = 0.1\n", "f.cfg").unwrap_err();
        assert!(err.to_string().contains("f.cfg:2: unknown key `epsilom`"), "{err}");
        assert!(cfg.apply_override("mu=abc").is_err());
        cfg.apply_override("mu = 0.5").unwrap();
        assert_eq!(cfg.mu, 0.5);
    }

    #[test]
    fn validation_catches_rosters() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("models", "x:mlp:easy:black").unwrap();
        assert!(cfg.validate().is_err());
        cfg.set("models", "x:mlp:easy:white, y:mlp:easy:white").unwrap();
        assert!(cfg.validate().is_err(), "bast needs a robust model");
        cfg.set("strategies", "bagging,stacking").unwrap();
        cfg.set("sweep", "").unwrap();
        cfg.validate().unwrap();
        cfg.set("kernel_size", "4").unwrap();
        assert!(cfg.validate().is_err());
    }
}
