//! Orchestration: data, models, evaluation set, attacks and scoring.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bast_core::data::Dataset;
use bast_core::ensemble::{run_strategy, AttackTask, EnsembleSpec, Strategy};
use bast_core::evaluation::{evaluate_run, Evaluation, Protocol};
use bast_core::model::{train, Classifier, RobustnessTag};
use bast_core::{Shape, Tensor};

use crate::config::{DatasetKind, ExperimentConfig, ModelEntry};
use crate::dataset::load_dataset;
use crate::error::{HarnessError, Result};
use crate::synth::{self, SynthConfig};
use crate::{tensor_io, weights};

// independent streams derived from the one user seed
const TEST_STREAM: u64 = 0x7e57_da7a;
const TARGET_STREAM: u64 = 0x7a26_e75e;
const MODEL_STREAM: u64 = 0x30de_1500;
const ATTACK_STREAM: u64 = 0xa77a_c4ed;

fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream);
    rng.set_stream(index);
    rng.gen()
}

/// Generator settings of the synthetic train and test splits.
pub fn synthetic_splits(cfg: &ExperimentConfig) -> (SynthConfig, SynthConfig) {
    let split = |count, seed| SynthConfig {
        side: cfg.image_side,
        noise: cfg.synthetic_noise,
        ink: cfg.synthetic_ink,
        ..SynthConfig::new(count, seed)
    };
    (
        split(cfg.synthetic_train, cfg.seed),
        split(cfg.synthetic_test, derive(cfg.seed, TEST_STREAM, 0)),
    )
}

/// Train and test splits for the configured dataset.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetKind::Synthetic => {
            let (train, test) = synthetic_splits(cfg);
            Ok((synth::dataset(&train), synth::dataset(&test)))
        }
        _ => {
            let (train, test) = cfg.dataset_sources()?.expect("file-backed dataset");
            Ok((
                load_dataset(&train, Some(cfg.num_classes))?,
                load_dataset(&test, Some(cfg.num_classes))?,
            ))
        }
    }
}

/// Trains every roster entry without a weights file. Robust entries are
/// trained adversarially.
pub fn train_models(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<Classifier>> {
    cfg.models
        .iter()
        .enumerate()
        .map(|(i, entry)| match &entry.weights {
            Some(path) => load_entry(entry, path),
            None => {
                let seed = derive(cfg.seed, MODEL_STREAM, i as u64);
                let model = cfg.architecture(entry.arch).build(
                    entry.id.clone(),
                    data.image_shape(),
                    data.num_classes(),
                    entry.tag,
                    seed,
                )?;
                let train_cfg = cfg.train_config(entry.tag == RobustnessTag::Robust);
                let model = train(model, data, &bast_core::model::TrainConfig { seed, ..train_cfg })?;
                info!(
                    "trained {} ({}, {}): train accuracy {:.4}",
                    entry.id,
                    cfg.architecture(entry.arch).name(),
                    entry.tag,
                    model.accuracy(data)?
                );
                Ok(model)
            }
        })
        .collect()
}

fn load_entry(entry: &ModelEntry, path: &Path) -> Result<Classifier> {
    let model = weights::load(path)?;
    Ok(model.with_id(entry.id.clone()).with_tag(entry.tag))
}

pub fn model_path(cfg: &ExperimentConfig, id: &str) -> PathBuf {
    cfg.output_dir.join("models").join(format!("{id}.bin"))
}

pub fn save_models(cfg: &ExperimentConfig, models: &[Classifier]) -> Result<()> {
    let dir = cfg.output_dir.join("models");
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    for m in models {
        weights::save(m, &model_path(cfg, m.id()))?;
    }
    Ok(())
}

/// Loads each roster entry from its weights path or the output model directory.
pub fn load_models(cfg: &ExperimentConfig) -> Result<Vec<Classifier>> {
    cfg.models
        .iter()
        .map(|entry| {
            let path = entry.weights.clone().unwrap_or_else(|| model_path(cfg, &entry.id));
            if !path.exists() {
                return Err(HarnessError::Config(format!(
                    "no weights for `{}` at {}; run `train` first",
                    entry.id,
                    path.display()
                )));
            }
            load_entry(entry, &path)
        })
        .collect()
}

/// Uniform targets over the classes other than the true one.
pub fn select_targets(labels: &[usize], num_classes: usize, seed: u64) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(HarnessError::Config(format!(
            "target selection needs at least 2 classes, got {num_classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TARGET_STREAM);
    labels
        .iter()
        .map(|&y| {
            if y >= num_classes {
                return Err(HarnessError::Config(format!("label {y} out of range")));
            }
            let t = rng.gen_range(0..num_classes - 1);
            Ok(if t >= y { t + 1 } else { t })
        })
        .collect()
}

/// Indices of the images every model classifies correctly.
pub fn filter_correct(models: &[&Classifier], data: &Dataset) -> Result<Vec<usize>> {
    let mut keep = Vec::new();
    'images: for (i, (image, label)) in data.iter().enumerate() {
        for m in models {
            if m.predict(image)? != label {
                continue 'images;
            }
        }
        keep.push(i);
    }
    info!("{} of {} images survive filtering", keep.len(), data.len());
    if keep.is_empty() {
        return Err(HarnessError::NoSurvivors);
    }
    Ok(keep)
}

/// Clean images correctly classified by every white-box model, with targets.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    /// Position of each image in the test split.
    pub source: Vec<usize>,
    pub images: Vec<Tensor>,
    pub y_true: Vec<usize>,
    pub y_target: Vec<usize>,
}

impl EvalSet {
    pub fn build(
        cfg: &ExperimentConfig,
        models: &[Classifier],
        test: &Dataset,
    ) -> Result<EvalSet> {
        let white: Vec<&Classifier> = roster(cfg, models)
            .filter(|(_, e)| e.protocol == Protocol::WhiteBox)
            .map(|(m, _)| m)
            .collect();
        let mut source = filter_correct(&white, test)?;
        if source.len() < cfg.eval_size {
            info!("only {} survivors for eval_size {}", source.len(), cfg.eval_size);
        }
        source.truncate(cfg.eval_size);
        Self::from_indices(test, source, cfg.seed)
    }

    pub fn from_indices(test: &Dataset, source: Vec<usize>, seed: u64) -> Result<EvalSet> {
        let y_true: Vec<usize> = source.iter().map(|&i| test.labels()[i]).collect();
        let y_target = select_targets(&y_true, test.num_classes(), seed)?;
        let images = source.iter().map(|&i| test.images()[i].clone()).collect();
        Ok(EvalSet {
            source,
            images,
            y_true,
            y_target,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn roster<'a>(
    cfg: &'a ExperimentConfig,
    models: &'a [Classifier],
) -> impl Iterator<Item = (&'a Classifier, &'a ModelEntry)> + Clone {
    models.iter().zip(&cfg.models)
}

/// One attack configuration to run over the evaluation set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackPlan {
    pub label: String,
    pub strategy: Strategy,
    pub m: usize,
    pub n: usize,
}

impl AttackPlan {
    pub fn strategies(cfg: &ExperimentConfig) -> Vec<AttackPlan> {
        cfg.strategies
            .iter()
            .map(|&s| AttackPlan {
                label: s.name().to_string(),
                strategy: s,
                m: cfg.m,
                n: cfg.n,
            })
            .collect()
    }

    pub fn sweep(cfg: &ExperimentConfig) -> Vec<AttackPlan> {
        cfg.sweep
            .iter()
            .map(|&(m, n)| AttackPlan {
                label: format!("bast(m={m},n={n})"),
                strategy: Strategy::Bast,
                m,
                n,
            })
            .collect()
    }

    /// File-name friendly label.
    pub fn slug(&self) -> String {
        self.label
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
            .collect::<String>()
            .trim_end_matches('_')
            .to_string()
    }
}

/// Adversarial images of one plan plus the gradient queries each model saw.
#[derive(Clone, Debug)]
pub struct AttackOutput {
    pub plan: AttackPlan,
    pub adversarial: Vec<Tensor>,
    pub queries: Vec<(String, usize)>,
}

/// Runs one plan over the evaluation set using only white-box models.
pub fn run_attack(
    cfg: &ExperimentConfig,
    models: &[Classifier],
    eval: &EvalSet,
    plan: &AttackPlan,
) -> Result<AttackOutput> {
    for m in models {
        m.reset_gradient_queries();
    }
    let pick = |tag| -> Vec<&Classifier> {
        roster(cfg, models)
            .filter(|(_, e)| e.protocol == Protocol::WhiteBox && e.tag == tag)
            .map(|(m, _)| m)
            .collect()
    };
    let (easy, robust) = (pick(RobustnessTag::Easy), pick(RobustnessTag::Robust));
    let spec = match (&cfg.easy_weights, &cfg.robust_weights) {
        (None, None) => EnsembleSpec::new(easy, robust)?,
        (ew, rw) => {
            let equal = |k: usize| vec![1.0 / k as f64; k];
            let ew = ew.clone().unwrap_or_else(|| equal(easy.len()));
            let rw = rw.clone().unwrap_or_else(|| equal(robust.len()));
            EnsembleSpec::with_weights(easy, ew, robust, rw)?
        }
    };
    if spec.is_empty() {
        return Err(HarnessError::Config("no white-box models to attack with".into()));
    }
    let iterations = match plan.strategy {
        Strategy::WithoutBagging => cfg
            .without_bagging_iterations
            .unwrap_or_else(|| 200usize.div_ceil(spec.len())),
        _ => cfg.iterations,
    };
    let budget = cfg.budget(iterations)?;
    let schedule = cfg.schedule(plan.m, plan.n)?;
    let kernel = cfg.kernel()?;

    let mut adversarial = Vec::with_capacity(eval.len());
    for i in 0..eval.len() {
        let task = AttackTask {
            x: eval.images[i].clone(),
            y_true: eval.y_true[i],
            y_target: eval.y_target[i],
            budget,
            diversity: cfg.diversity,
            kernel: kernel.clone(),
            seed: derive(cfg.seed, ATTACK_STREAM, eval.source[i] as u64),
        };
        adversarial.push(run_strategy(plan.strategy, &task, &spec, &schedule)?);
    }

    let queries: Vec<(String, usize)> = models
        .iter()
        .map(|m| (m.id().to_string(), m.gradient_queries()))
        .collect();
    for ((_, entry), (id, q)) in roster(cfg, models).zip(&queries) {
        if entry.protocol == Protocol::BlackBox && *q > 0 {
            return Err(HarnessError::BlackBoxQueried {
                model: id.clone(),
                queries: *q,
            });
        }
    }
    info!("{}: attacked {} images", plan.label, eval.len());
    Ok(AttackOutput {
        plan: plan.clone(),
        adversarial,
        queries,
    })
}

/// Scores one plan's images on every roster model.
pub fn evaluate(
    cfg: &ExperimentConfig,
    models: &[Classifier],
    eval: &EvalSet,
    adversarial: &[Tensor],
) -> Result<Evaluation> {
    let rows: Vec<(&Classifier, Protocol)> = roster(cfg, models).map(|(m, e)| (m, e.protocol)).collect();
    let members: Vec<&str> = roster(cfg, models)
        .filter(|(_, e)| e.protocol == Protocol::WhiteBox)
        .map(|(m, _)| m.id())
        .collect();
    Ok(evaluate_run(adversarial, &eval.y_true, &eval.y_target, &rows, &members)?)
}

/// Everything one invocation produced, in plan order.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub eval: EvalSet,
    pub attacks: Vec<AttackOutput>,
    pub evaluations: Vec<Evaluation>,
}

/// Appends the per-model gradient counters of each plan to a log text.
pub fn query_log(cfg: &ExperimentConfig, attacks: &[AttackOutput]) -> String {
    let mut out = String::new();
    for a in attacks {
        for (entry, (id, q)) in cfg.models.iter().zip(&a.queries) {
            let _ = writeln!(
                out,
                "plan={} model={} protocol={} gradient_queries={}",
                a.plan.label, id, entry.protocol, q
            );
        }
    }
    out
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

/// Stores each plan's images as one stacked `[N, ...]` tensor.
pub fn save_adversarial(cfg: &ExperimentConfig, attacks: &[AttackOutput]) -> Result<()> {
    let dir = cfg.output_dir.join("adversarial");
    ensure_dir(&dir)?;
    for a in attacks {
        let stacked = stack(&a.adversarial)?;
        tensor_io::save(&stacked, &dir.join(format!("{}.bin", a.plan.slug())))?;
    }
    Ok(())
}

pub fn load_adversarial(cfg: &ExperimentConfig, plan: &AttackPlan, image_shape: &Shape) -> Result<Vec<Tensor>> {
    let path = cfg.output_dir.join("adversarial").join(format!("{}.bin", plan.slug()));
    let stacked = tensor_io::load(&path)?;
    unstack(&stacked, image_shape).map_err(|m| HarnessError::format(path.display().to_string(), m))
}

fn stack(images: &[Tensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| HarnessError::Config("nothing to store".into()))?;
    let mut dims = vec![images.len()];
    dims.extend_from_slice(first.dims());
    let data = images.iter().flat_map(|t| t.as_slice().iter().copied()).collect();
    Ok(Tensor::new(dims, data)?)
}

fn unstack(stacked: &Tensor, image_shape: &Shape) -> std::result::Result<Vec<Tensor>, String> {
    let dims = stacked.dims();
    if dims.len() != image_shape.rank() + 1 || &dims[1..] != image_shape.dims() {
        return Err(format!("stored extents {dims:?} do not match images {image_shape}"));
    }
    Ok(stacked
        .as_slice()
        .chunks_exact(image_shape.numel())
        .map(|c| Tensor::new(image_shape.dims().to_vec(), c.to_vec()).expect("extents checked"))
        .collect())
}

/// Writes `eval.csv`: image, source index, true and target labels.
pub fn save_eval_set(cfg: &ExperimentConfig, eval: &EvalSet) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("eval.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["image", "source", "y_true", "y_target"])?;
    for i in 0..eval.len() {
        w.write_record(&[
            i.to_string(),
            eval.source[i].to_string(),
            eval.y_true[i].to_string(),
            eval.y_target[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))
}

pub fn load_eval_set(cfg: &ExperimentConfig, test: &Dataset) -> Result<EvalSet> {
    let path = cfg.output_dir.join("eval.csv");
    let mut r = csv::Reader::from_path(&path)?;
    let ctx = path.display().to_string();
    let mut eval = EvalSet {
        source: Vec::new(),
        images: Vec::new(),
        y_true: Vec::new(),
        y_target: Vec::new(),
    };
    for record in r.records() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte());
        let field = |i: usize| -> Result<usize> {
            record
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| HarnessError::parse(&ctx, offset, format!("bad column {i}")))
        };
        let source = field(1)?;
        let (image, label) = test
            .get(source)
            .ok_or_else(|| HarnessError::parse(&ctx, offset, format!("source {source} out of range")))?;
        if label != field(2)? {
            return Err(HarnessError::parse(&ctx, offset, "label disagrees with the dataset"));
        }
        eval.source.push(source);
        eval.images.push(image.clone());
        eval.y_true.push(label);
        eval.y_target.push(field(3)?);
    }
    if eval.is_empty() {
        return Err(HarnessError::NoSurvivors);
    }
    Ok(eval)
}

/// Trains (or loads from explicit weight paths) and saves the roster.
pub fn train_stage(cfg: &ExperimentConfig) -> Result<Vec<Classifier>> {
    cfg.validate()?;
    let (train_data, test) = load_data(cfg)?;
    let models = train_models(cfg, &train_data)?;
    save_models(cfg, &models)?;
    for m in &models {
        info!("{}: test accuracy {:.4}", m.id(), m.accuracy(&test)?);
    }
    Ok(models)
}

/// Builds the evaluation set and attacks it with every plan.
pub fn attack_stage(cfg: &ExperimentConfig, models: &[Classifier], plans: &[AttackPlan]) -> Result<(EvalSet, Vec<AttackOutput>)> {
    let (_, test) = load_data(cfg)?;
    let eval = EvalSet::build(cfg, models, &test)?;
    save_eval_set(cfg, &eval)?;
    let attacks = plans
        .iter()
        .map(|p| run_attack(cfg, models, &eval, p))
        .collect::<Result<Vec<_>>>()?;
    save_adversarial(cfg, &attacks)?;
    let log = cfg.output_dir.join("run.log");
    fs::write(&log, query_log(cfg, &attacks)).map_err(|e| HarnessError::io(&log, e))?;
    Ok((eval, attacks))
}

/// Scores stored adversarial sets and writes the reports.
pub fn evaluate_stage(
    cfg: &ExperimentConfig,
    models: &[Classifier],
    eval: &EvalSet,
    plans: &[AttackPlan],
    adversarial: &[Vec<Tensor>],
) -> Result<Vec<Evaluation>> {
    let evaluations = adversarial
        .iter()
        .map(|adv| evaluate(cfg, models, eval, adv))
        .collect::<Result<Vec<_>>>()?;
    crate::report::write_all(cfg, models, eval, plans, adversarial, &evaluations)?;
    Ok(evaluations)
}

/// The full pipeline: train, attack, evaluate.
pub fn run_experiment(cfg: &ExperimentConfig, plans: &[AttackPlan]) -> Result<RunSummary> {
    let models = train_stage(cfg)?;
    let (eval, attacks) = attack_stage(cfg, &models, plans)?;
    let adversarial: Vec<Vec<Tensor>> = attacks.iter().map(|a| a.adversarial.clone()).collect();
    let evaluations = evaluate_stage(cfg, &models, &eval, plans, &adversarial)?;
    Ok(RunSummary {
        eval,
        attacks,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_classes_force_the_other_label() {
        let t = select_targets(&[0, 1, 1, 0], 2, 9).unwrap();
        assert_eq!(t, vec![1, 0, 0, 1]);
        assert!(select_targets(&[0], 1, 0).is_err());
        assert_eq!(
            select_targets(&[3, 4, 5], 10, 1).unwrap(),
            select_targets(&[3, 4, 5], 10, 1).unwrap()
        );
    }

    #[test]
    fn plan_slugs_are_file_safe() {
        let cfg = ExperimentConfig::default();
        let slugs: Vec<_> = AttackPlan::sweep(&cfg).iter().map(AttackPlan::slug).collect();
        assert_eq!(slugs[0], "bast_m_1_n_1");
        assert_eq!(AttackPlan::strategies(&cfg)[3].slug(), "without_stacking");
    }
}
