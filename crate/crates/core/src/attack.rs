//! Single-model attack machinery.
//!
//! One attack step on an iterate `x` (with clean image `x0`):
//!
//! 1. draw a random resize/pad/crop view of `x` ([`DiversityTransform`]),
//! 2. query the loss gradient at the view and pull it back onto `x`,
//! 3. smooth it with a Gaussian kernel ([`ti_smooth`]),
//! 4. fold it into the momentum buffer ([`momentum_update`]),
//! 5. move `x` along the momentum and project back onto
//!    `[x0 - eps, x0 + eps] ∩ [0, 1]` ([`apply_update`]).
//!
//! [`single_model_attack`] repeats this for `T` iterations against one model;
//! the ensemble strategies in [`crate::ensemble`] drive the same step with
//! different gradient sources.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::model::Classifier;
use crate::tensor::conv2d_same;
use crate::{Error, Result, Shape, Tensor};

/// Guard added to normalisation denominators.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateRule {
    /// `alpha * sign(g)`
    Sign,
    /// `alpha * clip(round(g), -bound, bound)`, rounding half away from zero.
    ClipRound { bound: f64 },
}

impl Default for UpdateRule {
    fn default() -> Self {
        UpdateRule::ClipRound { bound: 2.0 }
    }
}

/// Non-targeted attacks ascend the loss of the true label; targeted attacks
/// descend the loss of the target label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    NonTargeted,
    Targeted,
}

/// Gradient normalisation used by the momentum accumulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum NormMode {
    /// divide by the L1 norm
    L1,
    /// divide by the population standard deviation
    #[default]
    Std,
}

/// What the momentum accumulator sums when steps of both directions share it.
///
/// With `Velocity` a targeted step adds the negated gradient and every step
/// moves along `+g`, so the accumulator always points where the iterate has
/// been moving. With `Gradient` raw loss gradients are summed and the
/// direction only flips the final update, so ascent and descent phases that
/// share `g` pull against each other. Both agree exactly when every step has
/// the same direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum MomentumFrame {
    #[default]
    Velocity,
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackBudget {
    /// L∞ radius in pixel units (`[0, 1]` domain).
    pub epsilon: f64,
    /// Per-step size, `epsilon / iterations` unless overridden.
    pub alpha: f64,
    pub iterations: usize,
    /// Momentum decay.
    pub mu: f64,
    pub update_rule: UpdateRule,
    pub direction: Direction,
    pub norm_mode: NormMode,
    pub momentum_frame: MomentumFrame,
}

impl AttackBudget {
    /// Budget with `alpha = epsilon / iterations`, `mu = 1`, the clip-round
    /// rule with bound 2, std normalisation and a non-targeted direction.
    pub fn new(epsilon: f64, iterations: usize) -> Result<Self> {
        let budget = AttackBudget {
            epsilon,
            alpha: epsilon / iterations.max(1) as f64,
            iterations,
            mu: 1.0,
            update_rule: UpdateRule::default(),
            direction: Direction::NonTargeted,
            norm_mode: NormMode::Std,
            momentum_frame: MomentumFrame::Velocity,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be nonnegative, got {}", self.mu)));
        }
        if let UpdateRule::ClipRound { bound } = self.update_rule {
            if !(bound > 0.0 && bound.is_finite()) {
                return Err(Error::Config(format!("clip bound must be positive, got {bound}")));
            }
        }
        Ok(())
    }

    /// Changes the iteration count and resets `alpha` to `epsilon / T`.
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self.alpha = self.epsilon / iterations.max(1) as f64;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_update_rule(mut self, rule: UpdateRule) -> Self {
        self.update_rule = rule;
        self
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn with_norm_mode(mut self, mode: NormMode) -> Self {
        self.norm_mode = mode;
        self
    }

    pub fn with_momentum_frame(mut self, frame: MomentumFrame) -> Self {
        self.momentum_frame = frame;
        self
    }
}

/// Accumulated gradient direction, zero at the start of every attack.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    g: Tensor,
}

impl MomentumState {
    pub fn zeros(shape: &Shape) -> Self {
        MomentumState {
            g: Tensor::zeros(shape),
        }
    }

    pub fn from_tensor(g: Tensor) -> Self {
        MomentumState { g }
    }

    pub fn g(&self) -> &Tensor {
        &self.g
    }

    pub fn into_tensor(self) -> Tensor {
        self.g
    }
}

/// Random resize / zero-pad / crop applied to the iterate before each
/// gradient query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiversityConfig {
    pub apply_probability: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub crop_fraction: f64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            apply_probability: 0.5,
            scale_min: 0.85,
            scale_max: 1.0,
            crop_fraction: 0.9,
        }
    }
}

impl DiversityConfig {
    pub fn disabled() -> Self {
        DiversityConfig {
            apply_probability: 0.0,
            ..DiversityConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.apply_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("apply_probability {p} outside [0, 1]")));
        }
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !in_unit(self.scale_min) || !in_unit(self.scale_max) || self.scale_min > self.scale_max {
            return Err(Error::Config(format!(
                "scale range [{}, {}] must satisfy 0 < min <= max <= 1",
                self.scale_min, self.scale_max
            )));
        }
        if !in_unit(self.crop_fraction) {
            return Err(Error::Config(format!(
                "crop_fraction {} outside (0, 1]",
                self.crop_fraction
            )));
        }
        Ok(())
    }
}

/// A sampled diversity view: every output pixel either copies one input
/// pixel of the same channel or is zero. Being a linear pixel map, gradients
/// at the view pull back onto the iterate exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct DiversityTransform {
    /// Per output spatial index, the source spatial index. `None` is the
    /// identity.
    map: Option<Vec<Option<usize>>>,
}

impl DiversityTransform {
    pub fn identity() -> Self {
        DiversityTransform { map: None }
    }

    pub fn is_identity(&self) -> bool {
        self.map.is_none()
    }

    /// Samples a view for images of `shape` (`[C, H, W]`).
    ///
    /// Always consumes one uniform draw for the apply/skip decision, then
    /// (when applied) the scale, the pad offset, the crop window and the
    /// re-pad offset.
    pub fn sample<R: Rng + ?Sized>(cfg: &DiversityConfig, shape: &Shape, rng: &mut R) -> Self {
        let apply = rng.gen::<f64>() < cfg.apply_probability;
        if !apply {
            return DiversityTransform::identity();
        }
        let (height, width) = match *shape.dims() {
            [.., h, w] => (h, w),
            [w] => (1, w),
            [] => (1, 1),
        };
        let scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * rng.gen::<f64>();
        let rh = scaled(height, scale);
        let rw = scaled(width, scale);
        let pad_top = rng.gen_range(0..=height - rh);
        let pad_left = rng.gen_range(0..=width - rw);
        let ch = scaled(height, cfg.crop_fraction);
        let cw = scaled(width, cfg.crop_fraction);
        let crop_top = rng.gen_range(0..=height - ch);
        let crop_left = rng.gen_range(0..=width - cw);
        let put_top = rng.gen_range(0..=height - ch);
        let put_left = rng.gen_range(0..=width - cw);

        // canvas pixel -> source pixel after nearest-neighbour resize and pad
        let canvas = |a: usize, b: usize| -> Option<usize> {
            if a < pad_top || a >= pad_top + rh || b < pad_left || b >= pad_left + rw {
                return None;
            }
            let si = (a - pad_top) * height / rh;
            let sj = (b - pad_left) * width / rw;
            Some(si * width + sj)
        };
        let mut map = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                let inside = i >= put_top && i < put_top + ch && j >= put_left && j < put_left + cw;
                map.push(if inside {
                    canvas(crop_top + i - put_top, crop_left + j - put_left)
                } else {
                    None
                });
            }
        }
        DiversityTransform { map: Some(map) }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let Some(map) = &self.map else {
            return x.clone();
        };
        let plane = map.len();
        let src = x.as_slice();
        let mut out = Vec::with_capacity(src.len());
        for c in 0..src.len() / plane {
            let base = c * plane;
            out.extend(map.iter().map(|m| m.map_or(0.0, |s| src[base + s])));
        }
        Tensor::from_parts(x.shape().clone(), out)
    }

    /// Transposed map: gradient at the view to gradient at the iterate.
    pub fn pullback(&self, grad: &Tensor) -> Tensor {
        let Some(map) = &self.map else {
            return grad.clone();
        };
        let plane = map.len();
        let g = grad.as_slice();
        let mut out = alloc::vec![0.0; g.len()];
        for c in 0..g.len() / plane {
            let base = c * plane;
            for (o, m) in map.iter().enumerate() {
                if let Some(s) = m {
                    out[base + s] += g[base + o];
                }
            }
        }
        Tensor::from_parts(grad.shape().clone(), out)
    }
}

fn scaled(extent: usize, factor: f64) -> usize {
    (libm::round(extent as f64 * factor) as usize).clamp(1, extent)
}

/// Random resize, zero-pad and crop of `x`; see [`DiversityTransform`].
pub fn input_diversity<R: Rng + ?Sized>(x: &Tensor, cfg: &DiversityConfig, rng: &mut R) -> Tensor {
    DiversityTransform::sample(cfg, x.shape(), rng).apply(x)
}

/// Normalised square kernel used to smooth gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothingKernel {
    weights: Tensor,
    sigma: f64,
}

impl SmoothingKernel {
    /// The 1x1 unit kernel.
    pub fn identity() -> Self {
        SmoothingKernel {
            weights: Tensor::from_parts(Shape::new([1, 1]).expect("valid"), alloc::vec![1.0]),
            sigma: 0.0,
        }
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn size(&self) -> usize {
        self.weights.dims()[0]
    }
}

/// Discretised 2-D Gaussian of odd `size`, normalised to sum to one.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<SmoothingKernel> {
    if size.is_multiple_of(2) {
        return Err(Error::InvalidKernel {
            height: size,
            width: size,
        });
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("kernel sigma must be positive, got {sigma}")));
    }
    let r = (size / 2) as isize;
    let mut weights = Vec::with_capacity(size * size);
    for i in -r..=r {
        for j in -r..=r {
            let d2 = (i * i + j * j) as f64;
            weights.push(libm::exp(-d2 / (2.0 * sigma * sigma)));
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(SmoothingKernel {
        weights: Tensor::new(alloc::vec![size, size], weights)?,
        sigma,
    })
}

/// Convolves each channel of `grad` with the kernel.
pub fn ti_smooth(grad: &Tensor, kernel: &SmoothingKernel) -> Result<Tensor> {
    conv2d_same(grad, &kernel.weights)
}

/// `g' = mu * g + grad / (norm(grad) + 1e-12)`.
pub fn momentum_update(
    state: MomentumState,
    grad: &Tensor,
    mu: f64,
    mode: NormMode,
) -> Result<MomentumState> {
    grad.expect_shape(state.g.shape())?;
    let norm = match mode {
        NormMode::L1 => grad.l1_norm(),
        NormMode::Std => grad.std(),
    } + NORM_GUARD;
    let mut g = state.g;
    for (acc, v) in g.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *acc = mu * *acc + v / norm;
    }
    Ok(MomentumState { g })
}

/// Per-element step multiplier for `rule`.
pub fn step_multiplier(rule: UpdateRule, g: f64) -> f64 {
    match rule {
        UpdateRule::Sign => sign(g),
        UpdateRule::ClipRound { bound } => libm::round(g).clamp(-bound, bound),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One update of the iterate: step along the momentum (added for
/// non-targeted, subtracted for targeted), then project onto the ε-ball
/// around `x_orig` intersected with `[0, 1]`.
pub fn apply_update(
    x: &Tensor,
    x_orig: &Tensor,
    g: &MomentumState,
    budget: &AttackBudget,
) -> Result<Tensor> {
    x.expect_shape(x_orig.shape())?;
    g.g.expect_shape(x.shape())?;
    let signed_alpha = match budget.direction {
        Direction::NonTargeted => budget.alpha,
        Direction::Targeted => -budget.alpha,
    };
    let mut next = x.clone();
    for (v, &m) in next.as_mut_slice().iter_mut().zip(g.g.as_slice()) {
        *v += signed_alpha * step_multiplier(budget.update_rule, m);
    }
    project_linf(&mut next, x_orig, budget.epsilon);
    Ok(next)
}

/// Projects `x` onto `{v : |v - x_orig|_∞ <= epsilon} ∩ [0, 1]`, so that the
/// bound holds exactly when re-measured in floating point.
pub fn project_linf(x: &mut Tensor, x_orig: &Tensor, epsilon: f64) {
    for (v, &o) in x.as_mut_slice().iter_mut().zip(x_orig.as_slice()) {
        let mut p = v.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
        // o ± eps may round outward
        while (p - o).abs() > epsilon {
            p = if p > o { p.next_down() } else { p.next_up() };
        }
        *v = p;
    }
}

pub(crate) fn check_domain(x: &Tensor) -> Result<()> {
    if let Some(index) = x.as_slice().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Config(format!(
            "pixel {index} = {} lies outside [0, 1]",
            x.as_slice()[index]
        )));
    }
    Ok(())
}

/// Single-step fast gradient sign attack, clamped to the ε-ball and `[0, 1]`.
pub fn fgsm(model: &Classifier, x: &Tensor, y: usize, epsilon: f64) -> Result<Tensor> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let grad = model.input_gradient(x, y)?;
    let mut adv = x.clone();
    for (v, g) in adv.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *v += epsilon * sign(*g);
    }
    project_linf(&mut adv, x, epsilon);
    Ok(adv)
}

/// Iterate and momentum shared across the steps of one attack.
#[derive(Clone, Debug)]
pub struct AttackIterate<'a> {
    x_orig: &'a Tensor,
    x: Tensor,
    momentum: MomentumState,
}

impl<'a> AttackIterate<'a> {
    pub fn new(x_orig: &'a Tensor) -> Self {
        AttackIterate {
            x_orig,
            x: x_orig.clone(),
            momentum: MomentumState::zeros(x_orig.shape()),
        }
    }

    pub fn current(&self) -> &Tensor {
        &self.x
    }

    pub fn momentum(&self) -> &MomentumState {
        &self.momentum
    }

    pub fn into_image(self) -> Tensor {
        self.x
    }

    /// One full step. `gradient` receives the diversified view and returns
    /// the loss gradient at that view.
    pub fn step<R, F>(
        &mut self,
        budget: &AttackBudget,
        diversity: &DiversityConfig,
        kernel: Option<&SmoothingKernel>,
        rng: &mut R,
        gradient: F,
    ) -> Result<()>
    where
        R: Rng + ?Sized,
        F: FnOnce(&Tensor) -> Result<Tensor>,
    {
        let view = DiversityTransform::sample(diversity, self.x.shape(), rng);
        let grad = gradient(&view.apply(&self.x))?;
        let grad = view.pullback(&grad);
        let grad = match kernel {
            Some(k) => ti_smooth(&grad, k)?,
            None => grad,
        };
        let (grad, update) = match (budget.momentum_frame, budget.direction) {
            (MomentumFrame::Velocity, Direction::Targeted) => {
                (grad.scale(-1.0), budget.with_direction(Direction::NonTargeted))
            }
            _ => (grad, *budget),
        };
        let state = core::mem::replace(&mut self.momentum, MomentumState::zeros(self.x.shape()));
        self.momentum = momentum_update(state, &grad, budget.mu, budget.norm_mode)?;
        self.x = apply_update(&self.x, self.x_orig, &self.momentum, &update)?;
        Ok(())
    }
}

/// Iterative momentum attack on one model: `budget.iterations` steps of
/// diversify, gradient, smooth, accumulate and project.
///
/// For a targeted budget `y` is the target label.
pub fn single_model_attack<R: Rng + ?Sized>(
    model: &Classifier,
    x: &Tensor,
    y: usize,
    budget: &AttackBudget,
    diversity: &DiversityConfig,
    kernel: Option<&SmoothingKernel>,
    rng: &mut R,
) -> Result<Tensor> {
    budget.validate()?;
    diversity.validate()?;
    check_domain(x)?;
    let mut it = AttackIterate::new(x);
    for _ in 0..budget.iterations {
        it.step(budget, diversity, kernel, rng, |v| model.input_gradient(v, y))?;
    }
    Ok(it.into_image())
}
