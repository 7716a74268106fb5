//! Counter attack: a second attack launched from a candidate input. The
//! distance travelled until the first iterate changes class is the
//! detection statistic, small for inputs that already sit next to the
//! decision boundary.

use serde::{Deserialize, Serialize};

use crate::attack::{binary_search_penalty, run_attack, AttackConfig, AttackTrace, Norm, Penalty, Schedule, StopMode};
use crate::datagen::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::network::MlpModel;
use crate::par;

/// Offset added to `‖x_k − x*‖` when forming `ε`, matching the `1e-4`
/// resolution at which stationary points are located.
pub const EPSILON_OFFSET: f64 = 2e-4;

/// Default iteration budget of a counter attack.
pub const DEFAULT_J_MAX: usize = 2048;

/// How the counter attack chooses its penalty weight and steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CounterMode {
    /// Fixed weight `b` and constant step `alpha`.
    Theorem { b: f64, alpha: f64 },
    /// Bisected weight in `[lo, hi]` with a step schedule.
    Practical { lo: f64, hi: f64, schedule: Schedule },
}

impl Default for CounterMode {
    fn default() -> Self {
        CounterMode::Practical { lo: 1e-3, hi: 1e10, schedule: Schedule::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterConfig {
    pub mode: CounterMode,
    pub j_max: usize,
    pub norm: Norm,
    /// Confidence margin `η`.
    pub confidence: f64,
}

impl Default for CounterConfig {
    fn default() -> Self {
        CounterConfig { mode: CounterMode::default(), j_max: DEFAULT_J_MAX, norm: Norm::L2, confidence: 0.0 }
    }
}

impl CounterConfig {
    /// Theorem-mode config for measured `(c, C)` and `ε`.
    pub fn theorem(c: f64, big_c: f64, eps: f64) -> Result<Self> {
        let (b, alpha) = counter_params(c, big_c, eps)?;
        Ok(CounterConfig { mode: CounterMode::Theorem { b, alpha }, ..Default::default() })
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            CounterMode::Theorem { b, alpha } => {
                if !(b > 0.0 && b.is_finite() && alpha > 0.0 && alpha.is_finite()) {
                    return Err(invalid("theorem mode needs positive b and alpha"));
                }
            }
            CounterMode::Practical { lo, hi, .. } => {
                if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                    return Err(invalid("penalty search needs 0 < lo < hi < inf"));
                }
            }
        }
        if !(self.confidence >= 0.0) {
            return Err(invalid("confidence must be non-negative"));
        }
        Ok(())
    }

    fn attack_config(&self) -> AttackConfig {
        let (penalty, schedule) = match self.mode {
            CounterMode::Theorem { b, alpha } => (Penalty::Fixed(b), Schedule::Constant { alpha }),
            CounterMode::Practical { lo, hi, schedule } => (Penalty::Search { lo, hi }, schedule),
        };
        AttackConfig {
            norm: self.norm,
            penalty,
            confidence: self.confidence,
            max_iters: self.j_max,
            schedule,
            target: None,
            stop: StopMode::Practical,
            trace_iterates: true,
        }
    }
}

/// `(b, α) = (8ε/c, 1/(16(1 + C/c)²))`.
pub fn counter_params(c: f64, big_c: f64, eps: f64) -> Result<(f64, f64)> {
    if !(c > 0.0 && big_c >= c && big_c.is_finite() && eps > 0.0) {
        return Err(invalid("counter parameters need 0 < c <= C and eps > 0"));
    }
    let r = 1.0 + big_c / c;
    Ok((8.0 * eps / c, 1.0 / (16.0 * r * r)))
}

/// `ε = ‖x_k − x*‖₂ + 2·10⁻⁴`.
pub fn epsilon_for_point(x_k: &[f64], x_star: &[f64]) -> f64 {
    Norm::L2.distance(x_k, x_star) + EPSILON_OFFSET
}

/// Outcome of one counter attack.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterRecord {
    pub start: Vec<f64>,
    pub class_start: usize,
    /// Class before the primary attack, when the start point is an attack
    /// output.
    pub class_original: Option<usize>,
    /// `j*`, the first iterate whose class differs from `class_start`.
    pub stop_index: Option<usize>,
    /// `x_{j*}`, or the closest approach when the budget ran out.
    pub stop_point: Vec<f64>,
    pub class_stop: usize,
    /// Detection statistic `D = dist(x_start, stop_point)`.
    pub statistic: f64,
    pub stopped: bool,
    /// Penalty weight used.
    pub penalty: f64,
    /// Iterates `0..=j*` (all of them when not stopped).
    pub iterates: Vec<Vec<f64>>,
}

impl CounterRecord {
    /// `class_stop == class_original`, when the original class is known.
    pub fn returned(&self) -> Option<bool> {
        self.class_original.map(|c| self.stopped && self.class_stop == c)
    }
}

/// Runs the counter attack from `x_start`, stopping at the first iterate that
/// leaves `κ(x_start)`.
pub fn counter_attack(
    model: &MlpModel,
    x_start: &[f64],
    class_original: Option<usize>,
    cfg: &CounterConfig,
) -> Result<CounterRecord> {
    cfg.validate()?;
    let class_start = model.classify(x_start)?;
    if class_start == 0 {
        return Err(Error::BoundaryStart);
    }
    if let Some(c) = class_original {
        model.check_class(c)?;
    }
    let acfg = cfg.attack_config();
    let trace: AttackTrace = match cfg.mode {
        _ if cfg.j_max == 0 => run_attack(model, x_start, 0.0, &acfg)?,
        CounterMode::Theorem { b, .. } => run_attack(model, x_start, b, &acfg)?,
        CounterMode::Practical { lo, hi, .. } => binary_search_penalty(model, x_start, &acfg, lo, hi)?.1,
    };
    let (stopped, idx) = match trace.first_feasible {
        Some(j) => (true, j),
        None => (false, trace.closest.0),
    };
    let stop_point = trace.iterates[idx].clone();
    let class_stop = model.classify(&stop_point)?;
    let mut iterates = trace.iterates;
    iterates.truncate(if stopped { idx + 1 } else { iterates.len() });
    Ok(CounterRecord {
        statistic: cfg.norm.distance(x_start, &stop_point),
        start: x_start.to_vec(),
        class_start,
        class_original,
        stop_index: stopped.then_some(idx),
        stop_point,
        class_stop,
        stopped,
        penalty: trace.penalty,
        iterates,
    })
}

/// Counter attacks on a clean set and on primary-attack outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRun {
    pub clean: Vec<CounterRecord>,
    /// `None` where the primary attack failed.
    pub attacked: Vec<Option<CounterRecord>>,
    /// Statistics of stopped clean records.
    pub d_clean: Vec<f64>,
    /// Statistics of stopped attacked records.
    pub d_attacked: Vec<f64>,
    pub failed_primary: usize,
    pub unstopped_clean: usize,
    pub unstopped_attacked: usize,
}

/// One counter attack per clean point and per successful primary attack;
/// each start gets its own config from `cfg_for`.
pub fn detection_run_with<F>(
    model: &MlpModel,
    clean: &LabeledDataset,
    attacked: &[AttackTrace],
    clean_cfg: &CounterConfig,
    cfg_for: F,
) -> Result<DetectionRun>
where
    F: Fn(usize, &AttackTrace) -> CounterConfig + Sync + Send,
{
    let clean_recs = par::map(clean.points(), |_, x| counter_attack(model, x, None, clean_cfg));
    let clean: Vec<CounterRecord> = clean_recs.into_iter().collect::<Result<_>>()?;
    let att_recs = par::map(attacked, |i, tr| {
        if !tr.success {
            return Ok(None);
        }
        counter_attack(model, tr.adversarial(), Some(tr.original_class), &cfg_for(i, tr)).map(Some)
    });
    let attacked: Vec<Option<CounterRecord>> = att_recs.into_iter().collect::<Result<_>>()?;

    let d_clean = clean.iter().filter(|r| r.stopped).map(|r| r.statistic).collect();
    let d_attacked = attacked.iter().flatten().filter(|r| r.stopped).map(|r| r.statistic).collect();
    Ok(DetectionRun {
        d_clean,
        d_attacked,
        failed_primary: attacked.iter().filter(|r| r.is_none()).count(),
        unstopped_clean: clean.iter().filter(|r| !r.stopped).count(),
        unstopped_attacked: attacked.iter().flatten().filter(|r| !r.stopped).count(),
        clean,
        attacked,
    })
}

/// [`detection_run_with`] using one config for both cohorts.
pub fn detection_run(
    model: &MlpModel,
    clean: &LabeledDataset,
    attacked: &[AttackTrace],
    cfg: &CounterConfig,
) -> Result<DetectionRun> {
    detection_run_with(model, clean, attacked, cfg, |_, _| *cfg)
}

/// Fraction of records with a known original class whose counter attack
/// stopped in that class. `None` for an empty set.
pub fn return_rate<'a>(records: impl IntoIterator<Item = &'a CounterRecord>) -> Option<f64> {
    let (mut n, mut back) = (0usize, 0usize);
    for r in records {
        if let Some(ret) = r.returned() {
            n += 1;
            back += ret as usize;
        }
    }
    (n > 0).then(|| back as f64 / n as f64)
}
