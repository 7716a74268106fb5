//! End-to-end experiments: train on two moons, attack one half of the test
//! set for a grid of iteration budgets, counter-attack both halves and
//! measure separation, return rate and the geometric checks.

use serde::{Deserialize, Serialize};

use crate::attack::{cw_attack, penalty_lower_bound, AttackConfig, AttackTrace, Norm, Penalty, Schedule, StopMode};
use crate::counter::{counter_attack, epsilon_for_point, return_rate, CounterConfig, CounterRecord};
use crate::datagen::{blobs, split_at, split_half, two_moons, LabeledDataset};
use crate::error::{invalid, Result};
use crate::eval::auroc;
use crate::io::table_csv;
use crate::network::{accuracy, train, MlpModel, TrainConfig};
use crate::par;
use crate::polytope::{ball_eligibility, enumerate_regions, stationary_points, verify_theorem2, PolytopeMap};

/// Seeds of every random step of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub init: u64,
    pub train: u64,
    pub halves: u64,
}

impl Seeds {
    /// Distinct seeds derived from one base value.
    pub fn from_base(base: u64) -> Seeds {
        Seeds {
            data: base,
            split: base.wrapping_add(1),
            init: base.wrapping_add(2),
            train: base.wrapping_add(3),
            halves: base.wrapping_add(4),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_base(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub samples: usize,
    pub noise: f64,
    pub train: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec { samples: 2300, noise: 0.1, train: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub training: TrainConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { hidden: vec![8], training: TrainConfig::default() }
    }
}

/// Primary attack of the iteration sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrimarySpec {
    /// Upper end of the penalty search; the lower end is `2√d/c`.
    pub penalty_hi: f64,
    pub schedule: Schedule,
    pub confidence: f64,
}

impl Default for PrimarySpec {
    fn default() -> Self {
        PrimarySpec { penalty_hi: 100.0, schedule: Schedule::default(), confidence: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub attack: PrimarySpec,
    /// Counter attacks on clean points, and on attacked points without a
    /// certified stationary point.
    pub counter: CounterConfig,
    pub grid: Vec<usize>,
    pub seeds: Seeds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            attack: PrimarySpec::default(),
            counter: CounterConfig::default(),
            grid: vec![8, 32, 128, 512, 2048],
            seeds: Seeds::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.windows(2).any(|w| w[0] >= w[1]) || self.grid[0] == 0 {
            return Err(invalid("iteration grid must be positive and strictly increasing"));
        }
        if self.dataset.train >= self.dataset.samples || self.dataset.samples - self.dataset.train < 2 {
            return Err(invalid("need at least two test samples"));
        }
        self.model.training.validate()?;
        self.counter.validate()
    }
}

/// Trained model, data halves and region map shared by all grid points.
#[derive(Debug, Clone)]
pub struct Setup {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub model: MlpModel,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub clean: LabeledDataset,
    pub attacked: LabeledDataset,
    pub polytopes: PolytopeMap,
    /// `(c, C)` of the decision boundary.
    pub bounds: (f64, f64),
}

/// Generates two moons, trains the model and computes its regions.
pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let s = cfg.seeds;
    let data = two_moons(cfg.dataset.samples, cfg.dataset.noise, s.data)?;
    let (train_set, test) = split_at(&data, cfg.dataset.train, s.split)?;
    let mut dims = vec![2];
    dims.extend(&cfg.model.hidden);
    dims.push(2);
    let init = MlpModel::init(&dims, s.init)?;
    let model = train(&init, &train_set, &TrainConfig { seed: s.train, ..cfg.model.training })?;
    let polytopes = enumerate_regions(&model)?;
    let bounds = polytopes.gradient_bounds.ok_or_else(|| invalid("the trained model has no decision boundary in the unit square"))?;
    let (clean, attacked) = split_half(&test, s.halves)?;
    Ok(Setup {
        train_accuracy: accuracy(&model, &train_set)?,
        test_accuracy: accuracy(&model, &test)?,
        train: train_set,
        test,
        model,
        clean,
        attacked,
        polytopes,
        bounds,
    })
}

/// Primary attack config for budget `k`: penalty searched in `[2√d/c, hi]`,
/// all `k` iterations run.
pub fn primary_config(cfg: &ExperimentConfig, setup: &Setup, k: usize) -> AttackConfig {
    let lo = penalty_lower_bound(2, setup.bounds.0);
    let penalty = if lo < cfg.attack.penalty_hi {
        Penalty::Search { lo, hi: cfg.attack.penalty_hi }
    } else {
        Penalty::Fixed(lo)
    };
    AttackConfig {
        norm: Norm::L2,
        penalty,
        confidence: cfg.attack.confidence,
        max_iters: k,
        schedule: cfg.attack.schedule,
        target: None,
        stop: StopMode::Theory,
        trace_iterates: false,
    }
}

/// Geometry attached to one successful primary attack.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGeometry {
    pub x_star: [f64; 2],
    pub epsilon: f64,
    pub eligible: bool,
    /// Every counter iterate stayed in `B(x*, 3ε)`.
    pub contained: bool,
}

/// Everything computed for one iteration budget.
#[derive(Debug, Clone)]
pub struct GridRun {
    pub k: usize,
    pub traces: Vec<AttackTrace>,
    pub counters: Vec<Option<CounterRecord>>,
    pub geometry: Vec<Option<PointGeometry>>,
    /// Distance from each successful `x_k` to the decision boundary.
    pub boundary_distances: Vec<f64>,
    pub row: Fig4Row,
}

/// One line of the iteration sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fig4Row {
    pub k: usize,
    pub auroc: f64,
    pub return_rate: f64,
    /// Share of successful primaries whose `B(x*, 3ε)` passes the
    /// eligibility check.
    pub eligible_fraction: f64,
    /// Share of eligible points whose theorem-mode counter iterates stay in
    /// the ball; NaN without eligible points.
    pub theorem2_pass_rate: f64,
    pub success_rate: f64,
    pub near_boundary_fraction: f64,
    pub median_epsilon: f64,
    pub attacked_used: usize,
    pub clean_used: usize,
}

/// Counter attacks on the clean half, shared by all budgets.
pub fn clean_counters(cfg: &ExperimentConfig, setup: &Setup) -> Result<Vec<CounterRecord>> {
    par::map(setup.clean.points(), |_, x| counter_attack(&setup.model, x, None, &cfg.counter))
        .into_iter()
        .collect()
}

/// Distance below which an attack output counts as on the boundary.
pub const NEAR_BOUNDARY: f64 = 1e-2;

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Primary attacks with budget `k`, then counter attacks: theorem-mode
/// parameters where a stationary point is certified, `cfg.counter`
/// otherwise.
pub fn run_budget(cfg: &ExperimentConfig, setup: &Setup, clean: &[CounterRecord], k: usize) -> Result<GridRun> {
    let acfg = primary_config(cfg, setup, k);
    let model = &setup.model;
    let (c, big_c) = setup.bounds;
    let traces: Vec<AttackTrace> = par::map(setup.attacked.points(), |_, x| cw_attack(model, x, &acfg))
        .into_iter()
        .collect::<Result<_>>()?;

    let per_point = par::map(&traces, |_, tr| -> Result<(Option<CounterRecord>, Option<PointGeometry>)> {
        if !tr.success {
            return Ok((None, None));
        }
        let x_k = tr.adversarial();
        let x0 = [tr.origin[0], tr.origin[1]];
        let certs = stationary_points(&setup.polytopes, model, x0, tr.penalty)?;
        let nearest = certs.into_iter().min_by(|p, q| {
            Norm::L2.distance(&p.point, x_k).total_cmp(&Norm::L2.distance(&q.point, x_k))
        });
        match nearest {
            Some(cert) => {
                let eps = epsilon_for_point(x_k, &cert.point);
                let ccfg = CounterConfig { j_max: cfg.counter.j_max, ..CounterConfig::theorem(c, big_c, eps)? };
                let rec = counter_attack(model, x_k, Some(tr.original_class), &ccfg)?;
                let geo = PointGeometry {
                    x_star: cert.point,
                    epsilon: eps,
                    eligible: ball_eligibility(&setup.polytopes, cert.point, eps),
                    contained: verify_theorem2(&rec.iterates, cert.point, eps),
                };
                Ok((Some(rec), Some(geo)))
            }
            None => Ok((Some(counter_attack(model, x_k, Some(tr.original_class), &cfg.counter)?), None)),
        }
    });
    let (counters, geometry): (Vec<_>, Vec<_>) = per_point.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();

    let successes = traces.iter().filter(|t| t.success).count();
    let boundary_distances: Vec<f64> = traces
        .iter()
        .filter(|t| t.success)
        .map(|t| setup.polytopes.distance_to_boundary([t.adversarial()[0], t.adversarial()[1]]))
        .collect();
    let d_att: Vec<f64> = counters.iter().flatten().filter(|r| r.stopped).map(|r| r.statistic).collect();
    let d_clean: Vec<f64> = clean.iter().filter(|r| r.stopped).map(|r| r.statistic).collect();
    let geos: Vec<&PointGeometry> = geometry.iter().flatten().collect();
    let eligible: Vec<&&PointGeometry> = geos.iter().filter(|g| g.eligible).collect();
    let ratio = |num: usize, den: usize| if den > 0 { num as f64 / den as f64 } else { f64::NAN };

    let row = Fig4Row {
        k,
        auroc: if d_att.is_empty() || d_clean.is_empty() { f64::NAN } else { auroc(&d_att, &d_clean)? },
        return_rate: return_rate(counters.iter().flatten()).unwrap_or(f64::NAN),
        eligible_fraction: ratio(eligible.len(), successes),
        theorem2_pass_rate: ratio(eligible.iter().filter(|g| g.contained).count(), eligible.len()),
        success_rate: ratio(successes, traces.len()),
        near_boundary_fraction: ratio(boundary_distances.iter().filter(|d| **d <= NEAR_BOUNDARY).count(), successes),
        median_epsilon: median(&mut geos.iter().map(|g| g.epsilon).collect::<Vec<_>>()),
        attacked_used: d_att.len(),
        clean_used: d_clean.len(),
    };
    Ok(GridRun { k, traces, counters, geometry, boundary_distances, row })
}

/// Full sweep over `cfg.grid`.
#[derive(Debug, Clone)]
pub struct Fig4 {
    pub setup: Setup,
    pub clean: Vec<CounterRecord>,
    pub runs: Vec<GridRun>,
}

impl Fig4 {
    pub fn rows(&self) -> Vec<Fig4Row> {
        self.runs.iter().map(|r| r.row).collect()
    }
}

pub fn run_fig4(cfg: &ExperimentConfig) -> Result<Fig4> {
    let setup = setup(cfg)?;
    let clean = clean_counters(cfg, &setup)?;
    let runs = cfg
        .grid
        .iter()
        .map(|&k| run_budget(cfg, &setup, &clean, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(Fig4 { setup, clean, runs })
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// CSV `k,auroc,return_rate,eligible_fraction,theorem2_pass_rate`.
pub fn fig4_csv(rows: &[Fig4Row]) -> Result<Vec<u8>> {
    table_csv(
        &["k", "auroc", "return_rate", "eligible_fraction", "theorem2_pass_rate"],
        rows.iter().map(|r| {
            vec![
                r.k.to_string(),
                cell(r.auroc),
                cell(r.return_rate),
                cell(r.eligible_fraction),
                cell(r.theorem2_pass_rate),
            ]
        }),
    )
}

/// Settings for the multi-class blobs comparison of untargeted and targeted
/// primary attacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobsConfig {
    pub samples: usize,
    pub classes: usize,
    pub spread: f64,
    pub train: usize,
    pub hidden: Vec<usize>,
    pub training: TrainConfig,
    pub attack_iters: usize,
    pub counter: CounterConfig,
    pub seeds: Seeds,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            samples: 600,
            classes: 3,
            spread: 0.1,
            train: 400,
            hidden: vec![16],
            training: TrainConfig::default(),
            attack_iters: 1024,
            counter: CounterConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

/// Detection outcome for one kind of primary attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlobsArm {
    pub success_rate: f64,
    pub auroc: f64,
    pub return_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlobsResult {
    pub test_accuracy: f64,
    pub untargeted: BlobsArm,
    pub targeted: BlobsArm,
}

/// Trains on blobs, attacks half the test set untargeted and targeted
/// (towards the next class), and counter-attacks everything in practical
/// mode.
pub fn run_blobs(cfg: &BlobsConfig) -> Result<BlobsResult> {
    cfg.counter.validate()?;
    let s = cfg.seeds;
    let data = blobs(cfg.samples, cfg.classes, 2, cfg.spread, s.data)?;
    let (train_set, test) = split_at(&data, cfg.train, s.split)?;
    let mut dims = vec![2];
    dims.extend(&cfg.hidden);
    dims.push(cfg.classes);
    let model = train(&MlpModel::init(&dims, s.init)?, &train_set, &TrainConfig { seed: s.train, ..cfg.training })?;
    let (clean, attacked) = split_half(&test, s.halves)?;
    let clean_recs: Vec<CounterRecord> = par::map(clean.points(), |_, x| counter_attack(&model, x, None, &cfg.counter))
        .into_iter()
        .collect::<Result<_>>()?;
    let d_clean: Vec<f64> = clean_recs.iter().filter(|r| r.stopped).map(|r| r.statistic).collect();

    let arm = |targeted: bool| -> Result<BlobsArm> {
        let out = par::map(attacked.points(), |_, x| -> Result<(bool, Option<CounterRecord>)> {
            let t = model.classify(x)?;
            let acfg = AttackConfig {
                max_iters: cfg.attack_iters,
                target: targeted.then(|| t % cfg.classes + 1),
                ..AttackConfig::default()
            };
            let tr = cw_attack(&model, x, &acfg)?;
            if !tr.success {
                return Ok((false, None));
            }
            let rec = counter_attack(&model, tr.adversarial(), Some(tr.original_class), &cfg.counter)?;
            Ok((true, Some(rec)))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let recs: Vec<&CounterRecord> = out.iter().filter_map(|o| o.1.as_ref()).collect();
        let d_att: Vec<f64> = recs.iter().filter(|r| r.stopped).map(|r| r.statistic).collect();
        Ok(BlobsArm {
            success_rate: out.iter().filter(|o| o.0).count() as f64 / out.len().max(1) as f64,
            auroc: if d_att.is_empty() || d_clean.is_empty() { f64::NAN } else { auroc(&d_att, &d_clean)? },
            return_rate: return_rate(recs.iter().copied()).unwrap_or(f64::NAN),
        })
    };
    Ok(BlobsResult { test_accuracy: accuracy(&model, &test)?, untargeted: arm(false)?, targeted: arm(true)? })
}
