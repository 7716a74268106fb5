use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use counterattack::attack::{cw_attack, AttackConfig, AttackTrace};
use counterattack::counter::{counter_attack, CounterRecord};
use counterattack::datagen::{split_at, split_half, two_moons, LabeledDataset};
use counterattack::eval::roc_report;
use counterattack::experiment::{fig4_csv, run_blobs, run_fig4, BlobsConfig, ExperimentConfig, Seeds};
use counterattack::io::{self, Cohort};
use counterattack::network::{accuracy, train, MlpModel, TrainConfig};
use counterattack::par;
use counterattack::polytope::enumerate_regions;

#[derive(Parser)]
#[command(name = "counterattack", version, about = "CW attacks and counter-attack detection on small ReLU networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config document; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed for every random step.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate two moons, train a model, write model.json and the splits.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Attack every point of a dataset; writes traces.csv and adversarial.csv.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Iteration budget.
        #[arg(long)]
        iters: Option<usize>,
        /// Also write per-iteration records to iterations.jsonl.
        #[arg(long)]
        trace_iterations: bool,
    },
    /// Counter-attack clean points and attack outputs; writes stats.csv.
    Counter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        /// Attack outputs labelled with their original class.
        #[arg(long)]
        attacked: PathBuf,
        #[arg(long)]
        j_max: Option<usize>,
    },
    /// ROC report from a statistics file; writes report.json.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stats: PathBuf,
    },
    /// Linear regions of a 2D one-hidden-layer model; writes regions.json.
    Polytope {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Run a named experiment.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "fig4")]
        name: Experiment,
        /// Comma-separated iteration grid, e.g. 8,32,128.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Fig4,
    Blobs,
}

/// The single config document. Experiment fields sit at the top level;
/// `primary` drives the `attack` command and `blobs` the blobs experiment.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct Config {
    #[serde(flatten)]
    experiment: ExperimentConfig,
    primary: AttackConfig,
    blobs: BlobsConfig,
}

impl Common {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.experiment.seeds = Seeds::from_base(s);
            cfg.blobs.seeds = Seeds::from_base(s);
        }
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(cfg)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    io::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<MlpModel> {
    io::load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_data(path: &Path, model: &MlpModel) -> Result<LabeledDataset> {
    let d = io::load_dataset(path, Some(model.classes())).with_context(|| format!("loading dataset {}", path.display()))?;
    if d.dim() != model.input_dim() {
        bail!("dataset {} has {} features, model expects {}", path.display(), d.dim(), model.input_dim());
    }
    Ok(d)
}

fn cmd_train(common: &Common, epochs: Option<usize>) -> Result<()> {
    let cfg = common.load()?.experiment;
    let s = cfg.seeds;
    let data = two_moons(cfg.dataset.samples, cfg.dataset.noise, s.data)?;
    let (train_set, test) = split_at(&data, cfg.dataset.train, s.split)?;
    let (clean, attacked) = split_half(&test, s.halves)?;
    let mut dims = vec![2];
    dims.extend(&cfg.model.hidden);
    dims.push(2);
    let tcfg = TrainConfig { seed: s.train, epochs: epochs.unwrap_or(cfg.model.training.epochs), ..cfg.model.training };
    let model = train(&MlpModel::init(&dims, s.init)?, &train_set, &tcfg)?;
    io::save_model(&common.path("model.json"), &model)?;
    for (name, d) in [("train.csv", &train_set), ("test.csv", &test), ("clean.csv", &clean), ("attacked.csv", &attacked)] {
        write(&common.path(name), &io::dataset_csv(d)?)?;
    }
    println!("train accuracy {:.4}", accuracy(&model, &train_set)?);
    println!("test accuracy {:.4}", accuracy(&model, &test)?);
    Ok(())
}

fn cmd_attack(common: &Common, model: &Path, data: &Path, iters: Option<usize>, trace_iterations: bool) -> Result<()> {
    let mut acfg = common.load()?.primary;
    if let Some(k) = iters {
        acfg.max_iters = k;
    }
    acfg.trace_iterates |= trace_iterations;
    let model = load_model(model)?;
    let data = load_data(data, &model)?;
    let traces: Vec<AttackTrace> = par::map(data.points(), |_, x| cw_attack(&model, x, &acfg))
        .into_iter()
        .collect::<counterattack::Result<_>>()?;
    write(&common.path("traces.csv"), &io::trace_csv(&traces)?)?;
    if acfg.trace_iterates {
        write(&common.path("iterations.jsonl"), &io::iteration_jsonl(&traces)?)?;
    }
    let ok: Vec<&AttackTrace> = traces.iter().filter(|t| t.success).collect();
    let adv = LabeledDataset::new(
        ok.iter().map(|t| t.adversarial().to_vec()).collect(),
        ok.iter().map(|t| t.original_class).collect(),
        model.input_dim(),
        model.classes(),
    )?;
    write(&common.path("adversarial.csv"), &io::dataset_csv(&adv)?)?;
    println!("success {}/{}", ok.len(), traces.len());
    Ok(())
}

fn cmd_counter(common: &Common, model: &Path, clean: &Path, attacked: &Path, j_max: Option<usize>) -> Result<()> {
    let mut ccfg = common.load()?.experiment.counter;
    if let Some(j) = j_max {
        ccfg.j_max = j;
    }
    let model = load_model(model)?;
    let clean = load_data(clean, &model)?;
    let attacked = load_data(attacked, &model)?;
    let run = |d: &LabeledDataset, original: bool| -> counterattack::Result<Vec<CounterRecord>> {
        par::map(d.points(), |i, x| counter_attack(&model, x, original.then(|| d.labels()[i]), &ccfg))
            .into_iter()
            .collect()
    };
    let (c, a) = (run(&clean, false)?, run(&attacked, true)?);
    let rows = c
        .iter()
        .enumerate()
        .map(|(i, r)| (i, Cohort::Clean, r))
        .chain(a.iter().enumerate().map(|(i, r)| (i, Cohort::Attacked, r)));
    write(&common.path("stats.csv"), &io::stats_csv(rows)?)?;
    let unstopped = c.iter().chain(&a).filter(|r| !r.stopped).count();
    println!("clean {} attacked {} unstopped {}", c.len(), a.len(), unstopped);
    Ok(())
}

fn cmd_detect(common: &Common, stats: &Path) -> Result<()> {
    common.load()?;
    let rows = io::load_stats(stats).with_context(|| format!("loading {}", stats.display()))?;
    let pick = |cohort| rows.iter().filter(|r| r.cohort == cohort && r.stopped).map(|r| r.statistic).collect::<Vec<_>>();
    let report = roc_report(&pick(Cohort::Attacked), &pick(Cohort::Clean))?;
    io::write_json(&common.path("report.json"), &report)?;
    println!("auroc {}", report.auroc);
    Ok(())
}

fn cmd_polytope(common: &Common, model: &Path) -> Result<()> {
    common.load()?;
    let pmap = enumerate_regions(&load_model(model)?)?;
    write(&common.path("regions.json"), pmap.to_json()?.as_bytes())?;
    match pmap.gradient_bounds {
        Some((c, cc)) => println!("cells {} c {} C {}", pmap.cells.len(), c, cc),
        None => println!("cells {} (no decision boundary in the unit square)", pmap.cells.len()),
    }
    Ok(())
}

#[derive(Serialize)]
struct Fig4Summary<'a> {
    train_accuracy: f64,
    test_accuracy: f64,
    c: f64,
    #[serde(rename = "C")]
    big_c: f64,
    rows: &'a [counterattack::experiment::Fig4Row],
}

fn cmd_experiment(common: &Common, name: Experiment, grid: Option<Vec<usize>>) -> Result<()> {
    let cfg = common.load()?;
    match name {
        Experiment::Fig4 => {
            let mut ecfg = cfg.experiment;
            if let Some(g) = grid {
                ecfg.grid = g;
            }
            let fig = run_fig4(&ecfg)?;
            let rows = fig.rows();
            io::save_model(&common.path("model.json"), &fig.setup.model)?;
            write(&common.path("fig4.csv"), &fig4_csv(&rows)?)?;
            let summary = Fig4Summary {
                train_accuracy: fig.setup.train_accuracy,
                test_accuracy: fig.setup.test_accuracy,
                c: fig.setup.bounds.0,
                big_c: fig.setup.bounds.1,
                rows: &rows,
            };
            io::write_json(&common.path("summary.json"), &summary)?;
            for r in &rows {
                println!("k {:>5} auroc {:.4} return {:.4}", r.k, r.auroc, r.return_rate);
            }
        }
        Experiment::Blobs => {
            let res = run_blobs(&cfg.blobs)?;
            io::write_json(&common.path("blobs.json"), &res)?;
            println!("untargeted auroc {:.4} targeted auroc {:.4}", res.untargeted.auroc, res.targeted.auroc);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Command::Train { common, epochs } => par::with_workers(common.workers, || cmd_train(common, *epochs)),
        Command::Attack { common, model, data, iters, trace_iterations } => {
            par::with_workers(common.workers, || cmd_attack(common, model, data, *iters, *trace_iterations))
        }
        Command::Counter { common, model, clean, attacked, j_max } => {
            par::with_workers(common.workers, || cmd_counter(common, model, clean, attacked, *j_max))
        }
        Command::Detect { common, stats } => cmd_detect(common, stats),
        Command::Polytope { common, model } => cmd_polytope(common, model),
        Command::Experiment { common, name, grid } => {
            par::with_workers(common.workers, || cmd_experiment(common, *name, grid.clone()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
