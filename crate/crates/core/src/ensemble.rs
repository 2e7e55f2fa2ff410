//! Ensemble attacks over two groups of models: easy-to-attack members,
//! attacked towards the target label, and robust members, attacked away
//! from the true label.
//!
//! All strategies share one iterate and one momentum buffer per image and
//! differ only in which gradient drives each step:
//!
//! | strategy          | steps per outer iteration                                  |
//! |-------------------|------------------------------------------------------------|
//! | bagging           | 1 targeted step on the equal-weight loss of all members     |
//! | stacking          | 1 targeted step per member, in member order                 |
//! | BAST              | `n` non-targeted steps on the robust group's weighted loss, |
//! |                   | then `m` targeted steps on the easy group's weighted loss   |
//! | without-stacking  | 1 step on (easy targeted loss − robust true-label loss)     |
//! | without-bagging   | 1 step per member: non-targeted for robust, targeted for easy |

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{
    check_domain, single_model_attack, AttackBudget, AttackIterate, Direction, DiversityConfig,
    SmoothingKernel,
};
use crate::model::Classifier;
use crate::{Error, Result, Tensor};

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Ordered ensemble members: the easy group first, then the robust group,
/// each with nonnegative weights summing to one within the group.
#[derive(Clone, Debug)]
pub struct EnsembleSpec<'m> {
    members: Vec<&'m Classifier>,
    weights: Vec<f64>,
    easy_count: usize,
}

impl<'m> EnsembleSpec<'m> {
    /// Equal weights within each group.
    pub fn new(easy: Vec<&'m Classifier>, robust: Vec<&'m Classifier>) -> Result<Self> {
        let ew = equal(easy.len());
        let rw = equal(robust.len());
        EnsembleSpec::with_weights(easy, ew, robust, rw)
    }

    pub fn with_weights(
        easy: Vec<&'m Classifier>,
        easy_weights: Vec<f64>,
        robust: Vec<&'m Classifier>,
        robust_weights: Vec<f64>,
    ) -> Result<Self> {
        for (models, weights) in [(&easy, &easy_weights), (&robust, &robust_weights)] {
            if models.len() != weights.len() {
                return Err(Error::WeightCount {
                    members: models.len(),
                    weights: weights.len(),
                });
            }
            if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                return Err(Error::Config(format!("ensemble weights must be nonnegative: {weights:?}")));
            }
            if !weights.is_empty() && (weights.iter().sum::<f64>() - 1.0).abs() > WEIGHT_TOLERANCE {
                return Err(Error::Config(format!(
                    "ensemble weights of a group must sum to 1: {weights:?}"
                )));
            }
        }
        if easy.is_empty() && robust.is_empty() {
            return Err(Error::Config("ensemble has no members".into()));
        }
        let easy_count = easy.len();
        let mut members = easy;
        members.extend(robust);
        let mut weights = easy_weights;
        weights.extend(robust_weights);
        Ok(EnsembleSpec {
            members,
            weights,
            easy_count,
        })
    }

    pub fn members(&self) -> &[&'m Classifier] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn easy(&self) -> &[&'m Classifier] {
        &self.members[..self.easy_count]
    }

    pub fn robust(&self) -> &[&'m Classifier] {
        &self.members[self.easy_count..]
    }

    pub fn easy_weights(&self) -> &[f64] {
        &self.weights[..self.easy_count]
    }

    pub fn robust_weights(&self) -> &[f64] {
        &self.weights[self.easy_count..]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.members.iter().any(|m| m.id() == id)
    }
}

fn equal(n: usize) -> Vec<f64> {
    alloc::vec![1.0 / n as f64; n]
}

/// Which BAST phase runs first in each outer iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum PhaseOrder {
    #[default]
    NonTargetedFirst,
    TargetedFirst,
}

impl FromStr for PhaseOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nontargeted_first" => Ok(PhaseOrder::NonTargetedFirst),
            "targeted_first" => Ok(PhaseOrder::TargetedFirst),
            other => Err(Error::Config(format!("unknown phase order `{other}`"))),
        }
    }
}

/// BAST inner repetitions: `m` targeted steps on the easy group and `n`
/// non-targeted steps on the robust group per outer iteration.
///
/// `n = 0` is accepted and turns BAST into targeted bagging over the easy
/// group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BastSchedule {
    pub m: usize,
    pub n: usize,
    pub outer_iterations: usize,
    pub phase_order: PhaseOrder,
}

impl BastSchedule {
    /// Schedule with `ceil(200 / (m + n))` outer iterations.
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("BAST needs m >= 1 targeted steps".into()));
        }
        Ok(BastSchedule {
            m,
            n,
            outer_iterations: BastSchedule::default_iterations(m, n),
            phase_order: PhaseOrder::default(),
        })
    }

    pub fn default_iterations(m: usize, n: usize) -> usize {
        200usize.div_ceil((m + n).max(1))
    }

    pub fn with_outer_iterations(mut self, t: usize) -> Self {
        self.outer_iterations = t;
        self
    }

    pub fn with_phase_order(mut self, order: PhaseOrder) -> Self {
        self.phase_order = order;
        self
    }
}

impl Default for BastSchedule {
    fn default() -> Self {
        BastSchedule::new(2, 1).expect("m = 2 is valid")
    }
}

/// One image to attack and everything that shapes the attack on it.
///
/// The ensemble strategies set the step direction themselves, so
/// `budget.direction` is ignored by them.
#[derive(Clone, Debug)]
pub struct AttackTask {
    pub x: Tensor,
    pub y_true: usize,
    pub y_target: usize,
    pub budget: AttackBudget,
    pub diversity: DiversityConfig,
    pub kernel: Option<SmoothingKernel>,
    /// Seeds the diversity draws of this image.
    pub seed: u64,
}

impl AttackTask {
    pub fn validate(&self) -> Result<()> {
        if self.y_true == self.y_target {
            return Err(Error::Config(format!(
                "target label equals true label {}",
                self.y_true
            )));
        }
        self.budget.validate()?;
        self.diversity.validate()?;
        check_domain(&self.x)
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// `∇x Σ w_i J_i(x, y)` as the weighted sum of per-model input gradients.
/// Members with zero weight are not queried.
pub fn ensemble_loss_grad(
    members: &[&Classifier],
    weights: &[f64],
    x: &Tensor,
    y: usize,
) -> Result<Tensor> {
    if members.len() != weights.len() {
        return Err(Error::WeightCount {
            members: members.len(),
            weights: weights.len(),
        });
    }
    if members.is_empty() {
        return Err(Error::Config("ensemble gradient needs at least one member".into()));
    }
    let terms: Vec<_> = members.iter().zip(weights).map(|(m, &w)| (*m, w, y)).collect();
    weighted_gradient(&terms, x)
}

/// `Σ c_k ∇x J_k(x, y_k)` over `(model, coefficient, label)` terms.
fn weighted_gradient(terms: &[(&Classifier, f64, usize)], x: &Tensor) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for &(model, coef, label) in terms {
        if coef == 0.0 {
            continue;
        }
        let g = model.input_gradient(x, label)?;
        match acc.as_mut() {
            Some(total) => total.add_scaled(&g, coef)?,
            None => acc = Some(g.scale(coef)),
        }
    }
    Ok(acc.unwrap_or_else(|| Tensor::zeros(x.shape())))
}

struct Runner<'t> {
    task: &'t AttackTask,
    iterate: AttackIterate<'t>,
    rng: ChaCha8Rng,
    targeted: AttackBudget,
    untargeted: AttackBudget,
}

impl<'t> Runner<'t> {
    fn new(task: &'t AttackTask, budget: AttackBudget) -> Result<Self> {
        task.validate()?;
        budget.validate()?;
        Ok(Runner {
            task,
            iterate: AttackIterate::new(&task.x),
            rng: task.rng(),
            targeted: budget.with_direction(Direction::Targeted),
            untargeted: budget.with_direction(Direction::NonTargeted),
        })
    }

    fn step(&mut self, direction: Direction, terms: &[(&Classifier, f64, usize)]) -> Result<()> {
        let budget = match direction {
            Direction::Targeted => &self.targeted,
            Direction::NonTargeted => &self.untargeted,
        };
        self.iterate.step(
            budget,
            &self.task.diversity,
            self.task.kernel.as_ref(),
            &mut self.rng,
            |v| weighted_gradient(terms, v),
        )
    }

    /// Step on the weighted loss of `members`, towards the target label or
    /// away from the true label.
    fn group_step(&mut self, direction: Direction, members: &[&Classifier], weights: &[f64]) -> Result<()> {
        let label = match direction {
            Direction::Targeted => self.task.y_target,
            Direction::NonTargeted => self.task.y_true,
        };
        let terms: Vec<_> = members.iter().zip(weights).map(|(m, &w)| (*m, w, label)).collect();
        self.step(direction, &terms)
    }

    fn finish(self) -> Tensor {
        self.iterate.into_image()
    }
}

/// Targeted attack on the equal-weight loss of every member.
pub fn bagging_attack(task: &AttackTask, spec: &EnsembleSpec<'_>) -> Result<Tensor> {
    let weights = equal(spec.len());
    let mut run = Runner::new(task, task.budget)?;
    for _ in 0..task.budget.iterations {
        run.group_step(Direction::Targeted, spec.members(), &weights)?;
    }
    Ok(run.finish())
}

/// Targeted steps against each member in turn, sharing the iterate and the
/// momentum across members.
pub fn stacking_attack(task: &AttackTask, spec: &EnsembleSpec<'_>) -> Result<Tensor> {
    let mut run = Runner::new(task, task.budget)?;
    for _ in 0..task.budget.iterations {
        for member in spec.members() {
            run.group_step(Direction::Targeted, &[*member], &[1.0])?;
        }
    }
    Ok(run.finish())
}

/// Bagging-and-stacking attack. Runs `schedule.outer_iterations` outer
/// iterations with step size `epsilon / outer_iterations`.
pub fn bast_attack(
    task: &AttackTask,
    spec: &EnsembleSpec<'_>,
    schedule: &BastSchedule,
) -> Result<Tensor> {
    if schedule.m == 0 {
        return Err(Error::Config("BAST needs m >= 1 targeted steps".into()));
    }
    if spec.easy().is_empty() || (schedule.n > 0 && spec.robust().is_empty()) {
        return Err(Error::Config(
            "BAST needs a nonempty easy group and, when n > 0, a nonempty robust group".into(),
        ));
    }
    let budget = task.budget.with_iterations(schedule.outer_iterations);
    let mut run = Runner::new(task, budget)?;
    let phases = match schedule.phase_order {
        PhaseOrder::NonTargetedFirst => [Direction::NonTargeted, Direction::Targeted],
        PhaseOrder::TargetedFirst => [Direction::Targeted, Direction::NonTargeted],
    };
    for _ in 0..schedule.outer_iterations {
        for direction in phases {
            let (members, weights, reps) = match direction {
                Direction::NonTargeted => (spec.robust(), spec.robust_weights(), schedule.n),
                Direction::Targeted => (spec.easy(), spec.easy_weights(), schedule.m),
            };
            for _ in 0..reps {
                run.group_step(direction, members, weights)?;
            }
        }
    }
    Ok(run.finish())
}

/// One step per iteration on the combined objective: descend the easy
/// group's target-label loss while ascending the robust group's true-label
/// loss.
pub fn without_stacking_attack(task: &AttackTask, spec: &EnsembleSpec<'_>) -> Result<Tensor> {
    let mut terms: Vec<_> = spec
        .easy()
        .iter()
        .zip(spec.easy_weights())
        .map(|(m, &w)| (*m, w, task.y_target))
        .collect();
    terms.extend(
        spec.robust()
            .iter()
            .zip(spec.robust_weights())
            .map(|(m, &w)| (*m, -w, task.y_true)),
    );
    let mut run = Runner::new(task, task.budget)?;
    for _ in 0..task.budget.iterations {
        run.step(Direction::Targeted, &terms)?;
    }
    Ok(run.finish())
}

/// One step per member per iteration: non-targeted on each robust member and
/// targeted on each easy member, robust members first.
pub fn without_bagging_attack(task: &AttackTask, spec: &EnsembleSpec<'_>) -> Result<Tensor> {
    without_bagging_attack_ordered(task, spec, PhaseOrder::NonTargetedFirst)
}

pub fn without_bagging_attack_ordered(
    task: &AttackTask,
    spec: &EnsembleSpec<'_>,
    order: PhaseOrder,
) -> Result<Tensor> {
    let mut run = Runner::new(task, task.budget)?;
    let phases = match order {
        PhaseOrder::NonTargetedFirst => [Direction::NonTargeted, Direction::Targeted],
        PhaseOrder::TargetedFirst => [Direction::Targeted, Direction::NonTargeted],
    };
    for _ in 0..task.budget.iterations {
        for direction in phases {
            let members = match direction {
                Direction::NonTargeted => spec.robust(),
                Direction::Targeted => spec.easy(),
            };
            for member in members {
                run.group_step(direction, &[*member], &[1.0])?;
            }
        }
    }
    Ok(run.finish())
}

/// The attack strategies exposed to the experiment driver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Targeted single-model attack on the first member.
    Single,
    Bagging,
    Stacking,
    Bast,
    WithoutStacking,
    WithoutBagging,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Single,
        Strategy::Bagging,
        Strategy::Stacking,
        Strategy::Bast,
        Strategy::WithoutStacking,
        Strategy::WithoutBagging,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Single => "single",
            Strategy::Bagging => "bagging",
            Strategy::Stacking => "stacking",
            Strategy::Bast => "bast",
            Strategy::WithoutStacking => "without_stacking",
            Strategy::WithoutBagging => "without_bagging",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

/// Runs `strategy` on one task. `schedule` is only read by BAST (and its
/// phase order by without-bagging).
pub fn run_strategy(
    strategy: Strategy,
    task: &AttackTask,
    spec: &EnsembleSpec<'_>,
    schedule: &BastSchedule,
) -> Result<Tensor> {
    match strategy {
        Strategy::Single => {
            task.validate()?;
            let budget = task.budget.with_direction(Direction::Targeted);
            single_model_attack(
                spec.members()[0],
                &task.x,
                task.y_target,
                &budget,
                &task.diversity,
                task.kernel.as_ref(),
                &mut task.rng(),
            )
        }
        Strategy::Bagging => bagging_attack(task, spec),
        Strategy::Stacking => stacking_attack(task, spec),
        Strategy::Bast => bast_attack(task, spec, schedule),
        Strategy::WithoutStacking => without_stacking_attack(task, spec),
        Strategy::WithoutBagging => without_bagging_attack_ordered(task, spec, schedule.phase_order),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{gaussian_kernel, UpdateRule};
    use crate::model::{Architecture, Layer, RobustnessTag};
    use crate::Shape;
    use alloc::vec;
    use rand::Rng;

    fn shape() -> Shape {
        Shape::new(vec![1, 6, 6]).unwrap()
    }

    fn model(arch: Architecture, seed: u64, tag: RobustnessTag) -> Classifier {
        arch.build(alloc::format!("m{seed}"), &shape(), 4, tag, seed).unwrap()
    }

    fn image(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = shape();
        Tensor::new(s.dims().to_vec(), (0..s.numel()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn task(seed: u64, iterations: usize) -> AttackTask {
        AttackTask {
            x: image(seed),
            y_true: 1,
            y_target: 3,
            budget: AttackBudget::new(16.0 / 255.0, iterations).unwrap(),
            diversity: DiversityConfig {
                apply_probability: 0.7,
                ..DiversityConfig::default()
            },
            kernel: Some(gaussian_kernel(3, 1.0).unwrap()),
            seed,
        }
    }

    fn bits(t: &Tensor) -> Vec<u64> {
        t.as_slice().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn ensemble_gradient_reductions() {
        let a = model(Architecture::Mlp { hidden: 5 }, 1, RobustnessTag::Easy);
        let b = model(Architecture::Cnn { channels: 2 }, 2, RobustnessTag::Easy);
        let x = image(3);
        let ga = a.input_gradient(&x, 2).unwrap();
        assert_eq!(bits(&ensemble_loss_grad(&[&a], &[1.0], &x, 2).unwrap()), bits(&ga));
        assert_eq!(bits(&ensemble_loss_grad(&[&a, &b], &[1.0, 0.0], &x, 2).unwrap()), bits(&ga));
        let twin = a.clone();
        let half = ensemble_loss_grad(&[&a, &twin], &[0.5, 0.5], &x, 2).unwrap();
        assert!(half.linf_distance(&ga).unwrap() <= 1e-12);
        assert!(matches!(
            ensemble_loss_grad(&[&a, &b], &[1.0], &x, 2),
            Err(Error::WeightCount { members: 2, weights: 1 })
        ));
    }

    #[test]
    fn spec_validates_weights() {
        let a = model(Architecture::Mlp { hidden: 5 }, 1, RobustnessTag::Easy);
        let r = model(Architecture::Mlp { hidden: 5 }, 2, RobustnessTag::Robust);
        assert!(EnsembleSpec::with_weights(vec![&a], vec![0.7], vec![&r], vec![1.0]).is_err());
        assert!(EnsembleSpec::with_weights(vec![&a], vec![-1.0], vec![], vec![]).is_err());
        assert!(EnsembleSpec::new(vec![], vec![]).is_err());
        let spec = EnsembleSpec::new(vec![&a], vec![&r]).unwrap();
        assert_eq!(spec.easy().len(), 1);
        assert_eq!(spec.robust()[0].id(), "m2");
        assert!(spec.contains("m1"));
    }

    #[test]
    fn schedule_defaults() {
        assert_eq!(BastSchedule::default().outer_iterations, 67);
        assert_eq!(BastSchedule::new(1, 1).unwrap().outer_iterations, 100);
        assert_eq!(BastSchedule::new(10, 10).unwrap().outer_iterations, 10);
        assert_eq!(BastSchedule::new(3, 1).unwrap().outer_iterations, 50);
        assert!(BastSchedule::new(0, 1).is_err());
    }

    #[test]
    fn single_member_bagging_and_stacking_equal_single_model() {
        let a = model(Architecture::Cnn { channels: 2 }, 4, RobustnessTag::Easy);
        let spec = EnsembleSpec::new(vec![&a], vec![]).unwrap();
        let t = task(5, 9);
        let reference = run_strategy(Strategy::Single, &t, &spec, &BastSchedule::default()).unwrap();
        assert_eq!(bits(&bagging_attack(&t, &spec).unwrap()), bits(&reference));
        assert_eq!(bits(&stacking_attack(&t, &spec).unwrap()), bits(&reference));
    }

    #[test]
    fn singleton_without_bagging_equals_bast_one_one() {
        let e = model(Architecture::Mlp { hidden: 6 }, 6, RobustnessTag::Easy);
        let r = model(Architecture::Cnn { channels: 2 }, 7, RobustnessTag::Robust);
        let spec = EnsembleSpec::new(vec![&e], vec![&r]).unwrap();
        let schedule = BastSchedule::new(1, 1).unwrap().with_outer_iterations(13);
        let t = task(8, 13);
        let bast = bast_attack(&t, &spec, &schedule).unwrap();
        let wb = without_bagging_attack(&t, &spec).unwrap();
        assert_eq!(bits(&bast), bits(&wb));
    }

    #[test]
    fn bast_without_nontargeted_steps_is_easy_group_bagging() {
        let e1 = model(Architecture::Mlp { hidden: 6 }, 9, RobustnessTag::Easy);
        let e2 = model(Architecture::Cnn { channels: 2 }, 10, RobustnessTag::Easy);
        let r = model(Architecture::Mlp { hidden: 6 }, 11, RobustnessTag::Robust);
        let spec = EnsembleSpec::new(vec![&e1, &e2], vec![&r]).unwrap();
        let easy_only = EnsembleSpec::new(vec![&e1, &e2], vec![]).unwrap();
        let schedule = BastSchedule::new(1, 0).unwrap().with_outer_iterations(11);
        let t = task(12, 11);
        let bast = bast_attack(&t, &spec, &schedule).unwrap();
        assert_eq!(bits(&bast), bits(&bagging_attack(&t, &easy_only).unwrap()));
        assert_eq!(r.gradient_queries(), 0);
    }

    #[test]
    fn without_stacking_with_empty_robust_group_is_bagging() {
        let e1 = model(Architecture::Mlp { hidden: 6 }, 13, RobustnessTag::Easy);
        let e2 = model(Architecture::Mlp { hidden: 4 }, 14, RobustnessTag::Easy);
        let spec = EnsembleSpec::new(vec![&e1, &e2], vec![]).unwrap();
        let t = task(15, 10);
        assert_eq!(
            bits(&without_stacking_attack(&t, &spec).unwrap()),
            bits(&bagging_attack(&t, &spec).unwrap())
        );
    }

    #[test]
    fn stacking_order_commutes_for_linear_models() {
        // With mu = 0, the sign rule and no diversity or smoothing, each step
        // moves every pixel by a fixed ±alpha determined by its own model;
        // the sum of steps is order independent as long as projection stays
        // inactive.
        let n = 6;
        let linear = |id: &str, w: Vec<f64>| {
            let mut weight = w.clone();
            weight.extend(w.iter().map(|v| -v));
            Classifier::new(
                id,
                Shape::new(vec![n]).unwrap(),
                vec![Layer::Dense {
                    weight: Tensor::new(vec![2, n], weight).unwrap(),
                    bias: Tensor::zeros(&Shape::new(vec![2]).unwrap()),
                }],
                RobustnessTag::Easy,
            )
            .unwrap()
        };
        let a = linear("a", vec![0.5, -1.0, 0.2, 0.7, -0.3, 1.0]);
        let b = linear("b", vec![-0.4, 0.9, 0.6, -0.8, 0.1, 0.3]);
        let c = linear("c", vec![1.0, 0.2, -0.5, -0.6, 0.9, -0.2]);
        let t = AttackTask {
            x: Tensor::full(&Shape::new(vec![n]).unwrap(), 0.5),
            y_true: 0,
            y_target: 1,
            budget: AttackBudget::new(0.3, 4)
                .unwrap()
                .with_mu(0.0)
                .with_alpha(0.01)
                .with_update_rule(UpdateRule::Sign),
            diversity: DiversityConfig::disabled(),
            kernel: None,
            seed: 0,
        };
        let abc = stacking_attack(&t, &EnsembleSpec::new(vec![&a, &b, &c], vec![]).unwrap()).unwrap();
        let cab = stacking_attack(&t, &EnsembleSpec::new(vec![&c, &a, &b], vec![]).unwrap()).unwrap();
        let bca = stacking_attack(&t, &EnsembleSpec::new(vec![&b, &c, &a], vec![]).unwrap()).unwrap();
        assert!(abc.linf_distance(&cab).unwrap() <= 1e-10);
        assert!(abc.linf_distance(&bca).unwrap() <= 1e-10);
    }

    #[test]
    fn degenerate_bast_grouping_stays_in_bounds() {
        let m = model(Architecture::Cnn { channels: 2 }, 16, RobustnessTag::Easy);
        let spec = EnsembleSpec::new(vec![&m], vec![&m]).unwrap();
        let schedule = BastSchedule::new(1, 1).unwrap();
        let t = task(17, 1);
        let adv = bast_attack(&t, &spec, &schedule).unwrap();
        assert!(adv.linf_distance(&t.x).unwrap() <= t.budget.epsilon);
        assert_eq!(m.gradient_queries(), 200);
    }

    #[test]
    fn bast_requires_both_groups() {
        let m = model(Architecture::Mlp { hidden: 3 }, 18, RobustnessTag::Easy);
        let spec = EnsembleSpec::new(vec![&m], vec![]).unwrap();
        assert!(bast_attack(&task(1, 3), &spec, &BastSchedule::default()).is_err());
        let spec = EnsembleSpec::new(vec![], vec![&m]).unwrap();
        assert!(bast_attack(&task(1, 3), &spec, &BastSchedule::default()).is_err());
    }

    #[test]
    fn task_rejects_equal_labels() {
        let m = model(Architecture::Mlp { hidden: 3 }, 19, RobustnessTag::Easy);
        let spec = EnsembleSpec::new(vec![&m], vec![]).unwrap();
        let mut t = task(2, 3);
        t.y_target = t.y_true;
        assert!(matches!(bagging_attack(&t, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn strategies_are_deterministic_and_bounded() {
        let e1 = model(Architecture::Mlp { hidden: 6 }, 20, RobustnessTag::Easy);
        let e2 = model(Architecture::Cnn { channels: 2 }, 21, RobustnessTag::Easy);
        let r = model(Architecture::Cnn { channels: 3 }, 22, RobustnessTag::Robust);
        let spec = EnsembleSpec::new(vec![&e1, &e2], vec![&r]).unwrap();
        let schedule = BastSchedule::default().with_outer_iterations(5);
        for strategy in Strategy::ALL {
            let t = task(23, 5);
            let a = run_strategy(strategy, &t, &spec, &schedule).unwrap();
            let b = run_strategy(strategy, &t, &spec, &schedule).unwrap();
            assert_eq!(bits(&a), bits(&b), "{strategy}");
            let other = run_strategy(strategy, &AttackTask { seed: 99, ..t.clone() }, &spec, &schedule).unwrap();
            for adv in [&a, &other] {
                assert!(adv.linf_distance(&t.x).unwrap() <= t.budget.epsilon);
                assert!(adv.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("boosting".parse::<Strategy>().is_err());
    }
}
