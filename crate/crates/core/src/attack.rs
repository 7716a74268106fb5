//! Carlini–Wagner attack as projected generalized-gradient descent on
//! `F(x) = dist(x₀, x)^p + a·f(x)` over the unit box.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::network::{classify_logits, MlpModel};

/// Distance used by the attack objective and reported in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L2,
    Linf,
}

impl Norm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Norm::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Norm::Linf => a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
        }
    }
}

/// What the penalty pushes towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    /// Leave class `t` (untargeted).
    Leave(usize),
    /// Reach class `t'` (targeted).
    Reach(usize),
}

impl Goal {
    fn class(self) -> usize {
        match self {
            Goal::Leave(t) | Goal::Reach(t) => t,
        }
    }

    /// Whether a point of class `class` satisfies the attack.
    pub fn reached(self, class: usize) -> bool {
        match self {
            Goal::Leave(t) => class != t,
            Goal::Reach(t) => class == t,
        }
    }
}

/// Penalty value and the `(plus, minus)` logit indices (0-based) whose
/// difference it measures. `active` is false when the value is clamped to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyEval {
    pub value: f64,
    pub plus: usize,
    pub minus: usize,
    pub active: bool,
}

fn best_other(z: &[f64], skip: usize) -> usize {
    let mut best = usize::MAX;
    for (i, v) in z.iter().enumerate() {
        if i != skip && (best == usize::MAX || *v > z[best]) {
            best = i;
        }
    }
    best
}

/// Evaluates the penalty on precomputed logits.
///
/// Untargeted: `max{Z_t − max_{i≠t} Z_i − η, 0}`.
/// Targeted to `t'`: `max{max_{i≠t'} Z_i − Z_{t'} − η, 0}`.
pub fn penalty_from_logits(z: &[f64], goal: Goal, eta: f64) -> PenaltyEval {
    let t = goal.class() - 1;
    let other = best_other(z, t);
    let (plus, minus) = match goal {
        Goal::Leave(_) => (t, other),
        Goal::Reach(_) => (other, t),
    };
    let raw = z[plus] - z[minus] - eta;
    PenaltyEval {
        value: raw.max(0.0),
        plus,
        minus,
        active: raw > 0.0,
    }
}

/// Penalty `f(x)`.
pub fn penalty_f(model: &MlpModel, x: &[f64], goal: Goal, eta: f64) -> Result<f64> {
    model.check_class(goal.class())?;
    Ok(penalty_from_logits(&model.forward_logits(x)?, goal, eta).value)
}

/// `F(x) = ‖x − x₀‖₂² + a·f(x)`.
pub fn objective_f(model: &MlpModel, x: &[f64], x0: &[f64], a: f64, goal: Goal, eta: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(invalid("penalty weight must be positive"));
    }
    if x0.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: x0.len() });
    }
    let d = Norm::L2.distance(x, x0);
    Ok(d * d + a * penalty_f(model, x, goal, eta)?)
}

/// Coordinatewise clamp onto `[0,1]^n`.
pub fn project_box(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// `α_i = α₀·n₀/(n₀ + i)`.
pub fn lr_schedule(alpha0: f64, n0: f64, i: usize) -> f64 {
    alpha0 * n0 / (n0 + i as f64)
}

/// Penalty weight `2√d / c` that is large enough for every stationary point
/// of a successful attack to sit on the decision boundary.
pub fn penalty_lower_bound(dim: usize, c: f64) -> f64 {
    2.0 * (dim as f64).sqrt() / c
}

/// Step sizes for the descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule {
    /// `α_i = α₀·n₀/(n₀ + i)`.
    Harmonic { alpha0: f64, n0: f64 },
    Constant { alpha: f64 },
}

impl Schedule {
    pub fn step(&self, i: usize) -> f64 {
        match *self {
            Schedule::Harmonic { alpha0, n0 } => lr_schedule(alpha0, n0, i),
            Schedule::Constant { alpha } => alpha,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Schedule::Harmonic { alpha0, n0 } => alpha0 > 0.0 && n0 > 0.0,
            Schedule::Constant { alpha } => alpha > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("step sizes must be positive"))
        }
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Harmonic { alpha0: 0.01, n0: 100.0 }
    }
}

/// Fixed penalty weight or a range to bisect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    Fixed(f64),
    Search { lo: f64, hi: f64 },
}

/// When to stop iterating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    /// Run all iterations and report the final iterate.
    #[default]
    Theory,
    /// Stop at the first iterate that satisfies the attack goal.
    Practical,
}

/// Number of bisection steps used by [`binary_search_penalty`].
pub const BISECTION_STEPS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub norm: Norm,
    pub penalty: Penalty,
    /// Confidence margin `η ≥ 0`.
    pub confidence: f64,
    pub max_iters: usize,
    pub schedule: Schedule,
    /// Target class for a targeted attack.
    pub target: Option<usize>,
    pub stop: StopMode,
    /// Keep every iterate and a per-iteration record.
    pub trace_iterates: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            norm: Norm::L2,
            penalty: Penalty::Search { lo: 1e-3, hi: 1e10 },
            confidence: 0.0,
            max_iters: 1024,
            schedule: Schedule::default(),
            target: None,
            stop: StopMode::Theory,
            trace_iterates: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be at least 1"));
        }
        self.validate_common()
    }

    fn validate_common(&self) -> Result<()> {
        if !(self.confidence >= 0.0) {
            return Err(invalid("confidence must be non-negative"));
        }
        match self.penalty {
            Penalty::Fixed(a) if !(a >= 0.0 && a.is_finite()) => {
                return Err(invalid("penalty weight must be finite and non-negative"))
            }
            Penalty::Search { lo, hi } if !(lo > 0.0 && lo < hi && hi.is_finite()) => {
                return Err(invalid("penalty search needs 0 < lo < hi < inf"))
            }
            _ => {}
        }
        self.schedule.validate()
    }
}

/// Values recorded at one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    #[serde(rename = "F")]
    pub objective: f64,
    #[serde(rename = "f")]
    pub penalty: f64,
    pub dist: f64,
    pub class: usize,
}

/// An iterate that satisfied the attack goal.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleIterate {
    pub index: usize,
    pub point: Vec<f64>,
    pub class: usize,
}

/// Record of one attack run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTrace {
    pub origin: Vec<f64>,
    pub original_class: usize,
    pub goal: Goal,
    pub norm: Norm,
    /// Penalty weight used for this run.
    pub penalty: f64,
    pub final_point: Vec<f64>,
    pub final_class: usize,
    pub first_feasible: Option<usize>,
    pub last_feasible: Option<FeasibleIterate>,
    pub success: bool,
    pub iterations: usize,
    /// `dist(x₀, final_point)` in the attack norm.
    pub distance: f64,
    /// Iterate with the smallest penalty value seen, and that value.
    pub closest: (usize, f64),
    pub records: Vec<IterRecord>,
    pub iterates: Vec<Vec<f64>>,
}

impl AttackTrace {
    /// The point used as the adversarial example: the last feasible iterate,
    /// or the final iterate when none was feasible.
    pub fn adversarial(&self) -> &[f64] {
        self.last_feasible.as_ref().map_or(&self.final_point, |f| &f.point)
    }

    pub fn adversarial_class(&self) -> usize {
        self.last_feasible.as_ref().map_or(self.final_class, |f| f.class)
    }

    pub fn adversarial_distance(&self) -> f64 {
        self.norm.distance(&self.origin, self.adversarial())
    }
}

fn resolve_goal(model: &MlpModel, x0: &[f64], target: Option<usize>) -> Result<(usize, Goal)> {
    model.check_input(x0)?;
    if x0.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("start point must lie in the unit box"));
    }
    let class = model.classify(x0)?;
    if class == 0 {
        return Err(Error::BoundaryStart);
    }
    let goal = match target {
        None => Goal::Leave(class),
        Some(t) => {
            model.check_class(t)?;
            if t == class {
                return Err(invalid("target equals the original class"));
            }
            Goal::Reach(t)
        }
    };
    Ok((class, goal))
}

/// Runs the attack with a fixed penalty weight `a`.
///
/// The iteration is `x_{i+1} = P(x_i − α_i G_i)` with
/// `G_i = ∇dist-term + a·g`, where `g` is the gradient of the active penalty
/// piece (zero once the penalty is clamped). `max_iters = 0` is allowed and
/// returns the start point unchanged.
pub fn run_attack(model: &MlpModel, x0: &[f64], a: f64, cfg: &AttackConfig) -> Result<AttackTrace> {
    cfg.validate_common()?;
    if !(a >= 0.0 && a.is_finite()) {
        return Err(invalid("penalty weight must be finite and non-negative"));
    }
    let (original_class, goal) = resolve_goal(model, x0, cfg.target)?;
    Ok(descend(model, x0, original_class, goal, a, cfg))
}

fn descend(model: &MlpModel, x0: &[f64], original_class: usize, goal: Goal, a: f64, cfg: &AttackConfig) -> AttackTrace {
    let n = x0.len();
    let c = model.classes();
    let mut tau = 1.0;
    let dist_term = |x: &[f64], tau: f64| -> f64 {
        match cfg.norm {
            Norm::L2 => x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum(),
            Norm::Linf => x.iter().zip(x0).map(|(a, b)| ((a - b).abs() - tau).max(0.0)).sum(),
        }
    };

    let mut x = x0.to_vec();
    let mut z = model.logits_unchecked(&x);
    let mut pen = penalty_from_logits(&z, goal, cfg.confidence);
    let mut class = classify_logits(&z);

    let mut records = Vec::new();
    let mut iterates = Vec::new();
    if cfg.trace_iterates {
        records.push(IterRecord {
            iter: 0,
            objective: dist_term(&x, tau) + a * pen.value,
            penalty: pen.value,
            dist: 0.0,
            class,
        });
        iterates.push(x.clone());
    }

    let mut first_feasible = None;
    let mut last_feasible = None;
    let mut closest = (0, pen.value);
    let mut iterations = 0;
    let mut seed = vec![0.0; c];
    let mut step = vec![0.0; n];

    for i in 0..cfg.max_iters {
        let alpha = cfg.schedule.step(i);
        match cfg.norm {
            Norm::L2 => step.iter_mut().zip(&x).zip(x0).for_each(|((s, x), x0)| *s = 2.0 * (x - x0)),
            Norm::Linf => step.iter_mut().zip(&x).zip(x0).for_each(|((s, x), x0)| {
                let d = x - x0;
                *s = if d.abs() > tau { d.signum() } else { 0.0 };
            }),
        }
        if pen.active && a > 0.0 {
            seed.iter_mut().for_each(|s| *s = 0.0);
            seed[pen.plus] = 1.0;
            seed[pen.minus] = -1.0;
            let g = model.input_gradient_unchecked(&x, &seed);
            step.iter_mut().zip(&g).for_each(|(s, g)| *s += a * g);
        }
        x.iter_mut().zip(&step).for_each(|(x, s)| *x = (*x - alpha * s).clamp(0.0, 1.0));
        iterations = i + 1;

        z = model.logits_unchecked(&x);
        pen = penalty_from_logits(&z, goal, cfg.confidence);
        class = classify_logits(&z);
        if cfg.norm == Norm::Linf && cfg.norm.distance(&x, x0) < tau {
            tau *= 0.9;
        }
        if pen.value < closest.1 {
            closest = (iterations, pen.value);
        }
        if cfg.trace_iterates {
            records.push(IterRecord {
                iter: iterations,
                objective: dist_term(&x, tau) + a * pen.value,
                penalty: pen.value,
                dist: cfg.norm.distance(&x, x0),
                class,
            });
            iterates.push(x.clone());
        }
        if goal.reached(class) {
            first_feasible.get_or_insert(iterations);
            last_feasible = Some(FeasibleIterate { index: iterations, point: x.clone(), class });
            if cfg.stop == StopMode::Practical {
                break;
            }
        }
    }

    AttackTrace {
        origin: x0.to_vec(),
        original_class,
        goal,
        norm: cfg.norm,
        penalty: a,
        distance: cfg.norm.distance(&x, x0),
        final_class: class,
        final_point: x,
        success: last_feasible.is_some(),
        first_feasible,
        last_feasible,
        iterations,
        closest,
        records,
        iterates,
    }
}

/// Bisects the penalty weight in `[lo, hi]` for the smallest value whose
/// attack succeeds within the iteration budget.
///
/// Midpoints are geometric, so ranges spanning many decades keep a small
/// relative bracket after [`BISECTION_STEPS`] steps. Returns `lo` at once if
/// it already succeeds; if `hi` fails the returned trace has
/// `success == false`.
pub fn binary_search_penalty(
    model: &MlpModel,
    x0: &[f64],
    cfg: &AttackConfig,
    lo: f64,
    hi: f64,
) -> Result<(f64, AttackTrace)> {
    cfg.validate_common()?;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(invalid("penalty search needs 0 < lo < hi < inf"));
    }
    let (class, goal) = resolve_goal(model, x0, cfg.target)?;
    let run = |a: f64| descend(model, x0, class, goal, a, cfg);

    let at_lo = run(lo);
    if at_lo.success {
        return Ok((lo, at_lo));
    }
    let mut best = run(hi);
    if !best.success {
        return Ok((hi, best));
    }
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..BISECTION_STEPS {
        let mid = (lo * hi).sqrt();
        let trace = run(mid);
        if trace.success {
            hi = mid;
            best = trace;
        } else {
            lo = mid;
        }
    }
    Ok((hi, best))
}

/// Runs the attack, bisecting the penalty weight when the config asks for it.
pub fn cw_attack(model: &MlpModel, x0: &[f64], cfg: &AttackConfig) -> Result<AttackTrace> {
    cfg.validate()?;
    match cfg.penalty {
        Penalty::Fixed(a) => run_attack(model, x0, a, cfg),
        Penalty::Search { lo, hi } => binary_search_penalty(model, x0, cfg, lo, hi).map(|(_, t)| t),
    }
}
