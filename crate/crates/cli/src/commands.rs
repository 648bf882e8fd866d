use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reglab::domain::{
    load_counts, parse_counts, read_dataset, AnnotationCounts, ClassCatalog, ClassWeights,
    LossConfig, PredictionBatch, SampleGeometry, Task, WeightScheme,
};
use reglab::gradcheck::{run_suite, FD_STEP};
use reglab::loss::{cross_entropy, gfl, joint_loss, reg_loss, LossValue};
use reglab::metrics::{map_range_with, ApMode, EvalOptions, MetricReport};
use reglab::optim::toys::{quadratic_bowl, LassoProblem, LinearFunctional, ToyGflProblem};
use reglab::optim::{
    primal_dual_solve, prox_gradient_step, rsgd_step, sgd_step, Decay, DualState, ParameterVector,
    Schedule,
};
use reglab::rebalance::{rebalanced_cross_entropy, weights_for_scheme};
use reglab::synthgen::{generate_dataset, DetectorQuality, GeneratorConfig};
use reglab::trainer::{
    make_classification_task, train as run_training, LossChoice, LossSetup, SyntheticGeometry,
    ToyModel, TrainReport,
};
use reglab::uncertainty::{reg_u_loss, reg_u_loss_for_batch, VariationalState};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::output::{emit, integral_floats, json};
use crate::settings::{resolve, Overrides};
use crate::Common;

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        bail!("`{what}` rows have unequal lengths");
    }
    Ok(Array2::from_shape_vec((n, c), rows.concat())?)
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

// ---------------------------------------------------------------- gen-data

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenDataSettings {
    task: Task,
    counts_file: Option<PathBuf>,
    /// Inline count table, flat or `{per_class, total}`.
    counts: Option<Value>,
    scene_count: usize,
    seed: u64,
    image_extent: (f64, f64),
    box_size_range: (f64, f64),
    max_objects_per_scene: usize,
    detector_quality: DetectorQuality,
}

impl Default for GenDataSettings {
    fn default() -> Self {
        let g = GeneratorConfig::new(AnnotationCounts::new::<String>([]), 200, 0);
        Self {
            task: Task::Detection,
            counts_file: None,
            counts: None,
            scene_count: g.scene_count,
            seed: g.seed,
            image_extent: g.image_extent,
            box_size_range: g.box_size_range,
            max_objects_per_scene: g.max_objects_per_scene,
            detector_quality: g.detector_quality,
        }
    }
}

pub fn gen_data(common: &Common, o: Overrides) -> Result<()> {
    let s: GenDataSettings = resolve(common.config.as_deref(), o)?;
    let counts = match (&s.counts_file, &s.counts) {
        (Some(_), Some(_)) => bail!("give either `counts_file` or `counts`, not both"),
        (Some(p), None) => load_counts(p)?,
        (None, Some(v)) => parse_counts(&v.to_string())?,
        (None, None) => match s.task {
            Task::Detection => AnnotationCounts::road_asset_detection(),
            Task::Segmentation => AnnotationCounts::road_asset_segmentation(),
        },
    };
    let road = ClassCatalog::road_assets();
    let catalog = if counts.infer_task(&road) == Some(s.task) {
        road
    } else {
        let names: Vec<&str> = counts.class_names().collect();
        match s.task {
            Task::Detection => ClassCatalog::new(names, vec![])?,
            Task::Segmentation => ClassCatalog::new(names.clone(), names)?,
        }
    };
    let cfg = GeneratorConfig {
        counts,
        scene_count: s.scene_count,
        image_extent: s.image_extent,
        box_size_range: s.box_size_range,
        max_objects_per_scene: s.max_objects_per_scene,
        detector_quality: s.detector_quality,
        seed: s.seed,
    };
    let dataset = generate_dataset(&cfg, &catalog, s.task)?;
    emit(common.out.as_deref(), &dataset.to_json())
}

// ----------------------------------------------------------------- weights

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct WeightsSettings {
    counts_file: Option<PathBuf>,
    counts: Option<Value>,
    scheme: WeightScheme,
}

impl Default for WeightsSettings {
    fn default() -> Self {
        Self {
            counts_file: None,
            counts: None,
            scheme: WeightScheme::InverseFrequencyNormalized,
        }
    }
}

pub fn weights(common: &Common, o: Overrides) -> Result<()> {
    let s: WeightsSettings = resolve(common.config.as_deref(), o)?;
    let counts = match (&s.counts_file, &s.counts) {
        (Some(p), None) => load_counts(p)?,
        (None, Some(v)) => parse_counts(&v.to_string())?,
        (Some(_), Some(_)) => bail!("give either `counts_file` or `counts`, not both"),
        (None, None) => bail!("a count table is required (--counts)"),
    };
    let w = weights_for_scheme::<f64>(&counts, s.scheme)?;
    let out = serde_json::json!({
        "scheme": s.scheme,
        "total": counts.total(),
        "counts": counts.per_class(),
        "weights": counts.class_names().zip(w.alpha()).map(|(n, &a)| (n.to_string(), Value::from(a))).collect::<serde_json::Map<_, _>>(),
    });
    emit(common.out.as_deref(), &json(&integral_floats(out))?)
}

// --------------------------------------------------------------- loss-eval

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentationBatch {
    #[serde(default)]
    logits: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    probs: Option<Vec<Vec<f64>>>,
    labels: Vec<usize>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchFile {
    #[serde(default)]
    logits: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    probs: Option<Vec<Vec<f64>>>,
    labels: Vec<usize>,
    /// Per-sample, per-class distances for the refinement term.
    #[serde(default)]
    distances: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
    /// Variational means and variances; override the batch probabilities.
    #[serde(default)]
    mu: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    sigma_sq: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    segmentation: Option<SegmentationBatch>,
}

fn prediction_batch(
    logits: &Option<Vec<Vec<f64>>>,
    probs: &Option<Vec<Vec<f64>>>,
    labels: &[usize],
) -> Result<PredictionBatch<f64>> {
    Ok(match (logits, probs) {
        (Some(l), None) => PredictionBatch::from_logits(matrix(l, "logits")?, labels.to_vec())?,
        (None, Some(p)) => PredictionBatch::from_probs(matrix(p, "probs")?, labels.to_vec())?,
        _ => bail!("a batch needs exactly one of `logits` or `probs`"),
    })
}

fn class_weights(w: &Option<Vec<f64>>, n_classes: usize) -> Result<ClassWeights<f64>> {
    Ok(match w {
        Some(a) => ClassWeights::new(a.clone(), WeightScheme::Uniform)?,
        None => ClassWeights::uniform(n_classes),
    })
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct LossEvalSettings {
    input: Option<PathBuf>,
    objective: Option<LossChoice>,
    uncertainty: bool,
    loss: LossConfig<f64>,
}

#[derive(Serialize)]
struct JointOutput {
    lambda: f64,
    segmentation: f64,
    value: f64,
}

#[derive(Serialize)]
struct LossEvalOutput {
    objective: LossChoice,
    config: LossConfig<f64>,
    value: f64,
    per_sample: Vec<f64>,
    /// Absent when the batch carries no logits or the variational state is given directly.
    d_logits: Option<Vec<Vec<f64>>>,
    joint: Option<JointOutput>,
}

pub fn loss_eval(common: &Common, o: Overrides) -> Result<()> {
    let s: LossEvalSettings = resolve(common.config.as_deref(), o)?;
    let path = s
        .input
        .as_ref()
        .ok_or_else(|| anyhow!("a batch file is required (--input)"))?;
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: BatchFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;

    let objective = if s.uncertainty {
        LossChoice::RegU
    } else {
        s.objective.unwrap_or(if file.distances.is_some() {
            LossChoice::Reg
        } else {
            LossChoice::Gfl
        })
    };
    let cfg = s.loss;
    let batch = prediction_batch(&file.logits, &file.probs, &file.labels)?;
    let c = batch.n_classes();
    let weights = class_weights(&file.weights, c)?;
    let geometry = file
        .distances
        .as_ref()
        .map(|d| matrix(d, "distances").map(SampleGeometry::new))
        .transpose()?
        .transpose()?;
    let need_geometry = || {
        geometry
            .clone()
            .ok_or_else(|| anyhow!("{objective:?} needs `distances` in the batch file"))
    };

    let explicit_state = match (&file.mu, &file.sigma_sq) {
        (Some(m), Some(v)) => Some(VariationalState::new(
            matrix(m, "mu")?,
            matrix(v, "sigma_sq")?,
        )?),
        (None, None) => None,
        _ => bail!("`mu` and `sigma_sq` must be given together"),
    };
    if explicit_state.is_some() && objective != LossChoice::RegU {
        bail!("`mu` and `sigma_sq` are only used with --uncertainty");
    }

    let value: LossValue<f64> = match objective {
        LossChoice::Ce => cross_entropy(&batch, cfg.prob_floor),
        LossChoice::WeightedCe => {
            let v = rebalanced_cross_entropy(&batch, &weights)?;
            let n = batch.n_samples().max(1) as f64;
            LossValue {
                value: v.value / n,
                per_sample: v.per_sample,
            }
        }
        LossChoice::Gfl => gfl(&batch, &weights, &cfg)?,
        LossChoice::Reg => reg_loss(&batch, &need_geometry()?, &weights, &cfg)?,
        LossChoice::RegU => match &explicit_state {
            Some(state) => reg_u_loss(state, batch.labels(), &need_geometry()?, &weights, &cfg)?,
            None => reg_u_loss_for_batch(&batch, &need_geometry()?, &weights, &cfg)?,
        },
    };
    let d_logits = if batch.logits().is_some() && explicit_state.is_none() {
        let setup = LossSetup {
            choice: objective,
            weights: weights.clone(),
            config: cfg,
            geometry: geometry.clone(),
        };
        Some(rows(&setup.evaluate(&batch)?.1))
    } else {
        None
    };
    let joint = match &file.segmentation {
        None => None,
        Some(seg) => {
            let sb = prediction_batch(&seg.logits, &seg.probs, &seg.labels)?;
            let sw = class_weights(&seg.weights, sb.n_classes())?;
            let sv = gfl(&sb, &sw, &cfg)?;
            let j = joint_loss(&value, &sv, &cfg);
            Some(JointOutput {
                lambda: cfg.lambda_task,
                segmentation: sv.value,
                value: j.value,
            })
        }
    };
    let out = LossEvalOutput {
        objective,
        config: cfg,
        value: value.value,
        per_sample: value.per_sample,
        d_logits,
        joint,
    };
    emit(common.out.as_deref(), &json(&out)?)
}

// -------------------------------------------------------------- grad-check

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GradCheckSettings {
    seed: u64,
    trials: usize,
    threshold: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            threshold: 1e-5,
        }
    }
}

#[derive(Serialize)]
struct GradLossRow {
    loss: LossChoice,
    max_relative_error: f64,
    max_absolute_error: f64,
}

#[derive(Serialize)]
struct GradCheckOutput {
    seed: u64,
    trials: usize,
    step: f64,
    threshold: f64,
    max_relative_error: f64,
    pass: bool,
    losses: Vec<GradLossRow>,
}

pub fn grad_check(common: &Common, o: Overrides) -> Result<()> {
    let s: GradCheckSettings = resolve(common.config.as_deref(), o)?;
    if s.trials == 0 {
        bail!("trials must be at least 1");
    }
    let report = run_suite(s.seed, s.trials)?;
    let worst = report.max_relative_error();
    let out = GradCheckOutput {
        seed: s.seed,
        trials: s.trials,
        step: FD_STEP,
        threshold: s.threshold,
        max_relative_error: worst,
        pass: worst <= s.threshold,
        losses: report
            .losses
            .iter()
            .map(|(l, r)| GradLossRow {
                loss: *l,
                max_relative_error: r.max_relative_error,
                max_absolute_error: r.max_absolute_error,
            })
            .collect(),
    };
    emit(common.out.as_deref(), &json(&out)?)?;
    if !out.pass {
        bail!(
            "gradient check failed: max relative error {worst:.3e} exceeds {:.1e}",
            s.threshold
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- optimize

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    Sgd,
    Rsgd,
    Proxgrad,
    Primaldual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    /// `0.5 ||theta||^2`, for sgd.
    Bowl,
    /// `-<theta, v>` on the unit sphere, for rsgd.
    Linear,
    /// Least squares with an L1 penalty, for proxgrad.
    Lasso,
    /// Class-weighted focal objective over the simplex, for primaldual.
    ToyGfl,
}

impl Algorithm {
    fn natural_problem(self) -> Problem {
        match self {
            Algorithm::Sgd => Problem::Bowl,
            Algorithm::Rsgd => Problem::Linear,
            Algorithm::Proxgrad => Problem::Lasso,
            Algorithm::Primaldual => Problem::ToyGfl,
        }
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OptimizeSettings {
    algorithm: Algorithm,
    problem: Option<Problem>,
    /// Initial step; `1/L` for the lasso and 0.1 elsewhere when omitted.
    eta0: Option<f64>,
    decay: Decay,
    iterations: usize,
    seed: u64,
    dim: usize,
    reg: f64,
    rows: usize,
    n_samples: usize,
    n_classes: usize,
    gamma: f64,
    ridge: f64,
    tol: f64,
}

impl Default for OptimizeSettings {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Sgd,
            problem: None,
            eta0: None,
            decay: Decay::Constant,
            iterations: 1000,
            seed: 0,
            dim: 5,
            reg: 0.1,
            rows: 40,
            n_samples: 20,
            n_classes: 3,
            gamma: 2.0,
            ridge: 1.0,
            tol: 1e-10,
        }
    }
}

#[derive(Serialize)]
struct TracePoint {
    t: usize,
    loss: f64,
    residual: f64,
    theta_norm: f64,
}

#[derive(Serialize)]
struct OptimizeOutput {
    algorithm: Algorithm,
    problem: Problem,
    seed: u64,
    iterations: usize,
    converged: Option<bool>,
    final_loss: f64,
    theta: Vec<f64>,
    alpha: Option<Vec<f64>>,
    trace: Vec<TracePoint>,
}

fn point(t: usize, loss: f64, residual: f64, theta: &Array1<f64>) -> TracePoint {
    TracePoint {
        t,
        loss,
        residual,
        theta_norm: theta.dot(theta).sqrt(),
    }
}

pub fn optimize(common: &Common, o: Overrides, csv_path: Option<&Path>) -> Result<()> {
    let s: OptimizeSettings = resolve(common.config.as_deref(), o)?;
    let problem = s.problem.unwrap_or(s.algorithm.natural_problem());
    if problem != s.algorithm.natural_problem() {
        bail!(
            "{:?} runs on the {:?} problem, not {problem:?}",
            s.algorithm,
            s.algorithm.natural_problem()
        );
    }
    if s.dim == 0 {
        bail!("dim must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let start: Array1<f64> = (0..s.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut trace = Vec::with_capacity(s.iterations + 1);
    let out = match s.algorithm {
        Algorithm::Sgd => {
            let mut p = ParameterVector::euclidean(start)?;
            let mut sched = Schedule::new(s.eta0.unwrap_or(0.1), s.decay)?;
            trace.push(point(0, quadratic_bowl(p.theta().view()).0, 0.0, p.theta()));
            for t in 1..=s.iterations {
                let (_, g) = quadratic_bowl(p.theta().view());
                (p, sched) = sgd_step(&p, g.view(), &sched)?;
                trace.push(point(t, quadratic_bowl(p.theta().view()).0, 0.0, p.theta()));
            }
            let final_loss = quadratic_bowl(p.theta().view()).0;
            OptimizeOutput {
                algorithm: s.algorithm,
                problem,
                seed: s.seed,
                iterations: s.iterations,
                converged: None,
                final_loss,
                theta: p.theta().to_vec(),
                alpha: None,
                trace,
            }
        }
        Algorithm::Rsgd => {
            let f = LinearFunctional::random(s.seed, s.dim);
            let mut p = ParameterVector::on_sphere(start)?;
            let mut sched = Schedule::new(s.eta0.unwrap_or(0.1), s.decay)?;
            trace.push(point(0, f.loss(p.theta().view()), 0.0, p.theta()));
            for t in 1..=s.iterations {
                (p, sched) = rsgd_step(&p, f.gradient().view(), &sched)?;
                trace.push(point(t, f.loss(p.theta().view()), 0.0, p.theta()));
            }
            let final_loss = f.loss(p.theta().view());
            OptimizeOutput {
                algorithm: s.algorithm,
                problem,
                seed: s.seed,
                iterations: s.iterations,
                converged: None,
                final_loss,
                theta: p.theta().to_vec(),
                alpha: None,
                trace,
            }
        }
        Algorithm::Proxgrad => {
            let lasso = LassoProblem::random(s.seed, s.rows, s.dim, s.reg);
            let mut p = ParameterVector::euclidean(Array1::zeros(s.dim))?;
            let mut sched =
                Schedule::new(s.eta0.unwrap_or(1.0 / lasso.lipschitz_bound()), s.decay)?;
            trace.push(point(0, lasso.objective(p.theta().view()), 0.0, p.theta()));
            for t in 1..=s.iterations {
                let g = lasso.smooth_gradient(p.theta().view());
                (p, sched) = prox_gradient_step(&p, g.view(), &sched, lasso.reg)?;
                trace.push(point(t, lasso.objective(p.theta().view()), 0.0, p.theta()));
            }
            let final_loss = lasso.objective(p.theta().view());
            OptimizeOutput {
                algorithm: s.algorithm,
                problem,
                seed: s.seed,
                iterations: s.iterations,
                converged: None,
                final_loss,
                theta: p.theta().to_vec(),
                alpha: None,
                trace,
            }
        }
        Algorithm::Primaldual => {
            let toy = ToyGflProblem::random(s.seed, s.n_samples, s.n_classes, s.gamma, s.ridge);
            let sched = Schedule::new(s.eta0.unwrap_or(0.1), s.decay)?;
            let init = DualState::uniform(s.n_classes);
            trace.push(TracePoint {
                t: 0,
                loss: toy.value(init.alpha.view()),
                residual: init.constraint_residual().abs(),
                theta_norm: 0.0,
            });
            let res = primal_dual_solve(
                |th, al| toy.evaluate(th, al),
                Array1::zeros(0),
                init,
                sched,
                s.iterations,
                s.tol,
            )?;
            trace.extend(res.trace.iter().map(|r| TracePoint {
                t: r.t,
                loss: r.objective,
                residual: r.residual,
                theta_norm: 0.0,
            }));
            OptimizeOutput {
                algorithm: s.algorithm,
                problem,
                seed: s.seed,
                iterations: res.iterations,
                converged: Some(res.converged),
                final_loss: toy.value(res.state.alpha.view()),
                theta: res.theta.to_vec(),
                alpha: Some(res.state.alpha.to_vec()),
                trace,
            }
        }
    };
    if let Some(p) = csv_path {
        let mut w =
            csv::Writer::from_path(p).with_context(|| format!("writing {}", p.display()))?;
        for r in &out.trace {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    emit(common.out.as_deref(), &json(&out)?)
}

// ------------------------------------------------------------------- train

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSettings {
    objective: LossChoice,
    scheme: WeightScheme,
    class_proportions: Vec<f64>,
    n_train: usize,
    n_test: usize,
    feature_dim: usize,
    separation: f64,
    learning_rate: f64,
    decay: Decay,
    epochs: usize,
    seed: u64,
    loss: LossConfig<f64>,
    geometry: SyntheticGeometry,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let study = reglab::trainer::RebalanceStudy::default();
        Self {
            objective: LossChoice::Ce,
            scheme: WeightScheme::InverseFrequencyNormalized,
            class_proportions: study.class_proportions,
            n_train: study.n_train,
            n_test: study.n_test,
            feature_dim: study.feature_dim,
            separation: study.separation,
            learning_rate: study.learning_rate,
            decay: Decay::Constant,
            epochs: study.epochs,
            seed: 0,
            loss: LossConfig::default(),
            geometry: SyntheticGeometry::default(),
        }
    }
}

pub fn train(common: &Common, o: Overrides, csv_path: Option<&Path>) -> Result<()> {
    let s: TrainSettings = resolve(common.config.as_deref(), o)?;
    let (train_set, test_set) = make_classification_task(
        &s.class_proportions,
        s.n_train,
        s.n_test,
        s.feature_dim,
        s.separation,
        s.seed,
    )?;
    let c = s.class_proportions.len();
    let weights = weights_for_scheme(&train_set.annotation_counts(), s.scheme)?;
    let geometry = match s.objective {
        LossChoice::Reg | LossChoice::RegU => Some(s.geometry.sample(
            &train_set.labels,
            c,
            s.seed.wrapping_add(1),
        )?),
        _ => None,
    };
    let setup = LossSetup {
        choice: s.objective,
        weights,
        config: s.loss,
        geometry,
    };
    let schedule = Schedule::new(s.learning_rate, s.decay)?;
    let report = run_training(
        ToyModel::zeros(s.feature_dim, c),
        &train_set,
        &test_set,
        &setup,
        schedule,
        s.epochs,
    )?;
    let csv_target = csv_path
        .map(Path::to_path_buf)
        .or_else(|| common.out.as_ref().map(|p| p.with_extension("csv")));
    if let Some(p) = csv_target {
        std::fs::write(&p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    emit(common.out.as_deref(), &json(&report)?)
}

// ---------------------------------------------------------------- evaluate

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct EvaluateSettings {
    dataset: Option<PathBuf>,
    confidence_threshold: Option<f64>,
    ap_mode: ApMode,
}

pub fn evaluate(common: &Common, o: Overrides, table_path: Option<&Path>) -> Result<()> {
    let s: EvaluateSettings = resolve(common.config.as_deref(), o)?;
    let path = s
        .dataset
        .as_ref()
        .ok_or_else(|| anyhow!("a dataset file is required (--dataset)"))?;
    if let Some(t) = s.confidence_threshold {
        if !(0.0..=1.0).contains(&t) {
            bail!("confidence threshold must lie in [0, 1], got {t}");
        }
    }
    let dataset = read_dataset(path)?;
    let options = EvalOptions {
        confidence_threshold: s.confidence_threshold,
        ap_mode: s.ap_mode,
    };
    let report = map_range_with(&dataset.scenes, dataset.class_names(), &options)?;
    let table = report.to_table();
    if let Some(p) = table_path {
        std::fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?;
    }
    emit(common.out.as_deref(), &json(&report)?)?;
    if common.out.is_some() && table_path.is_none() {
        print!("{table}");
    }
    Ok(())
}

// ------------------------------------------------------------------ report

fn train_table(r: &TrainReport) -> String {
    let pct = |v: f64| format!("{:.2}", v * 100.0);
    let mut out = format!(
        "{:<8}  {:>9}  {:>8}  {:>8}  {:>8}\n",
        "Class", "Precision", "Recall", "F1-score", "Error"
    );
    for (k, m) in r.final_metrics.iter().enumerate() {
        out.push_str(&format!(
            "{:<8}  {:>9}  {:>8}  {:>8}  {:>8}\n",
            format!("class-{k}"),
            pct(m.precision),
            pct(m.recall),
            pct(m.f1),
            pct(m.error)
        ));
    }
    let n = r.final_metrics.len().max(1) as f64;
    let mean = |f: fn(&reglab::trainer::ClassScores) -> f64| {
        r.final_metrics.iter().map(f).sum::<f64>() / n
    };
    out.push_str(&format!(
        "{:<8}  {:>9}  {:>8}  {:>8}  {:>8}\n",
        "all",
        pct(mean(|m| m.precision)),
        pct(mean(|m| m.recall)),
        pct(mean(|m| m.f1)),
        pct(mean(|m| m.error))
    ));
    out.push_str(&format!(
        "loss: {:?}  accuracy: {}  error variance: {:.6}\n",
        r.loss_choice,
        pct(r.test_accuracy),
        r.error_variance()
    ));
    out
}

pub fn report(common: &Common, input: &Path) -> Result<()> {
    if common.config.is_some() {
        bail!("report takes no settings file");
    }
    let text =
        std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?;
    let table = if value.get("per_class").is_some() {
        serde_json::from_value::<MetricReport<f64>>(value)
            .context("not a metric report")?
            .to_table()
    } else if value.get("per_epoch").is_some() {
        train_table(&serde_json::from_value::<TrainReport>(value).context("not a training report")?)
    } else {
        bail!(
            "{} is neither a metric report nor a training report",
            input.display()
        );
    };
    emit(common.out.as_deref(), &table)
}
