//! Experiment drivers: ablation over system/training variants, the
//! INR-versus-baseline comparison, and the distance × K sweep.
//!
//! Every trial is a pure function of its setup and seeds, so trials run in
//! parallel and results come back in a fixed order.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, ArrayView1};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, CsConfig};
use crate::channel::{ris_phase_dft, ris_phase_random, CodebookKind, PathMask, RisPhaseBook};
use crate::error::{Error, Result};
use crate::forward::{build_forward, synthesize_measurements, ForwardOperator, NoiseModel};
use crate::inr::{Activation, InrModel, ModelSpec};
use crate::metrics::{self, MetricReport};
use crate::rng;
use crate::scene::{generate_scene, ImageGrid, Layout, Scene, SceneKind, SystemConfig};
use crate::train::{self, Problem, TrainConfig, TrainHistory};

/// A complete simulated imaging experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Setup {
    pub layout: Layout,
    /// Number of RIS configurations K.
    pub configurations: usize,
    pub codebook: CodebookKind,
    /// Paths present in the synthesized data.
    pub data_paths: PathMask,
    /// Paths modeled by the reconstruction operator.
    pub inversion_paths: PathMask,
    pub noise: NoiseModel,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub baseline: CsConfig,
    /// Scene families cycled over trials.
    pub scenes: Vec<SceneKind>,
}

impl Default for Setup {
    fn default() -> Self {
        Self::desk()
    }
}

impl Setup {
    /// Desk-scale reference: 32×32 ROI at λ/5, 16×16 RIS, 4+4 antennas,
    /// K = 24, D = 40λ, all paths, noiseless.
    pub fn desk() -> Self {
        Self {
            layout: Layout { tx_elements: 4, rx_elements: 4, ris_side: 16, roi_side: 32, ..Layout::default() },
            configurations: 24,
            codebook: CodebookKind::Random,
            data_paths: PathMask::ALL,
            inversion_paths: PathMask::ALL,
            noise: NoiseModel::noiseless(),
            model: desk_model(),
            train: TrainConfig { max_epochs: 2000, alpha_relative: true, ..TrainConfig::default() },
            baseline: CsConfig { beta: 1e-5, beta_relative: true, max_iters: 2000, ..CsConfig::default() },
            scenes: SceneKind::ALL.to_vec(),
        }
    }

    /// Single-path super-resolution setting: only TX-ROI-RIS-RX, one
    /// antenna each side, DFT phases, K = N_v / 2.
    pub fn comparison() -> Self {
        let layout = Layout { tx_elements: 1, rx_elements: 1, ris_side: 16, roi_side: 16, ..Layout::default() };
        Self {
            layout,
            configurations: layout.roi_side * layout.roi_side / 2,
            codebook: CodebookKind::Dft,
            data_paths: PathMask::ROI_RIS_ONLY,
            inversion_paths: PathMask::ROI_RIS_ONLY,
            model: ModelSpec { chi: 1.0, kappa: 3.0, ..desk_model() },
            ..Self::desk()
        }
    }

    /// Distance sweep base: the desk setup at K = 12.
    pub fn sweep() -> Self {
        Self { configurations: 12, ..Self::desk() }
    }

    pub fn system(&self) -> SystemConfig {
        self.layout.build()
    }

    pub fn validate(&self) -> Result<()> {
        self.system().validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.noise.validate()?;
        self.baseline.validate()?;
        if self.configurations == 0 || self.scenes.is_empty() {
            return Err(Error::invalid("setup needs K >= 1 and at least one scene family"));
        }
        if self.data_paths.is_empty() || self.inversion_paths.is_empty() {
            return Err(Error::invalid("path masks must not be empty"));
        }
        Ok(())
    }

    pub fn phasebook(&self, seed: u64) -> Result<RisPhaseBook> {
        let n_s = self.layout.ris_side * self.layout.ris_side;
        match self.codebook {
            CodebookKind::Random => ris_phase_random(self.configurations, n_s, seed),
            CodebookKind::Dft => ris_phase_dft(self.configurations, n_s),
        }
    }

    fn fingerprint(&self) -> String {
        metrics::fingerprint(format!("{self:?}").as_bytes())
    }
}

/// Network used at desk scale.
pub fn desk_model() -> ModelSpec {
    ModelSpec { n_pe: 64, chi: 2.0, hidden_width: 64, layers: 4, kappa: 5.0, ..ModelSpec::default() }
}

/// Ground truth, operators and measurements for one trial.
pub struct Instance {
    pub system: SystemConfig,
    pub grid: ImageGrid,
    pub truth: Scene,
    pub phasebook: RisPhaseBook,
    pub operator: ForwardOperator,
    pub y: Array1<Complex64>,
}

impl Instance {
    /// The scene is drawn from `scene_seed`; phases, noise and (later) the
    /// network initialization from `run_seed`.
    pub fn new(setup: &Setup, kind: SceneKind, scene_seed: u64, run_seed: u64) -> Result<Self> {
        let system = setup.system();
        let truth = generate_scene(kind, &system.grid(), scene_seed, system.sigma_max());
        Self::with_truth(setup, truth, run_seed)
    }

    /// Like [`Instance::new`] with a caller-supplied ground truth, which must
    /// live on the setup's grid.
    pub fn with_truth(setup: &Setup, truth: Scene, run_seed: u64) -> Result<Self> {
        setup.validate()?;
        let system = setup.system();
        let grid = system.grid();
        if truth.grid != grid {
            return Err(Error::invalid("ground truth is not on the setup grid"));
        }
        let phasebook = setup.phasebook(run_seed)?;
        let data_op = build_forward(&system, &phasebook, setup.data_paths)?;
        let y = synthesize_measurements(&data_op, &phasebook, &truth, &setup.noise, run_seed)?.y;
        let operator = if setup.inversion_paths == setup.data_paths {
            data_op
        } else {
            build_forward(&system, &phasebook, setup.inversion_paths)?
        };
        Ok(Self { system, grid, truth, phasebook, operator, y })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Inr,
    Fista,
    MatchedFilter,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Inr => "inr",
            Method::Fista => "fista",
            Method::MatchedFilter => "matched_filter",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::Inr => "INR",
            Method::Fista => "CS (FISTA)",
            Method::MatchedFilter => baselines::MATCHED_FILTER_LABEL,
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inr" => Ok(Method::Inr),
            "fista" => Ok(Method::Fista),
            "matched_filter" => Ok(Method::MatchedFilter),
            _ => Err(Error::invalid(format!("unknown method `{s}`"))),
        }
    }
}

pub struct Trial {
    pub estimate: Scene,
    pub report: MetricReport,
    pub history: Option<TrainHistory>,
    pub model: Option<InrModel>,
}

/// Reconstructs `inst` with `method` and scores it against the truth.
pub fn reconstruct(setup: &Setup, inst: &Instance, method: Method, run_seed: u64) -> Result<Trial> {
    let started = Instant::now();
    let sigma_max = inst.system.sigma_max();
    let (estimate, history, model) = match method {
        Method::Inr => {
            let model = InrModel::new(&setup.model, sigma_max, run_seed)?;
            let problem = Problem { op: &inst.operator, y: inst.y.view(), grid: &inst.grid, truth: Some(&inst.truth) };
            let out = train::train(model, &problem, &setup.train)?;
            (train::render(&out.model, &inst.grid), Some(out.history), Some(out.model))
        }
        Method::Fista => {
            (baselines::fista(&inst.operator, inst.y.view(), &setup.baseline, &inst.grid, sigma_max)?, None, None)
        }
        Method::MatchedFilter => {
            (baselines::matched_filter(&inst.operator, inst.y.view(), &inst.grid, sigma_max)?, None, None)
        }
    };
    let mut report = MetricReport::compute(&estimate.sigma, &inst.truth.sigma, sigma_max)?;
    report.fingerprint = setup.fingerprint();
    report.runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(Trial { estimate, report, history, model })
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Aggregated metrics for one table row. MSE is normalized by σ_max².
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub label: String,
    pub mse: Stat,
    pub psnr_db: Stat,
    pub ssim: Stat,
    pub reports: Vec<MetricReport>,
    /// Reconstructions in trial order.
    pub estimates: Vec<Scene>,
}

impl Summary {
    fn new(label: impl Into<String>, trials: Vec<Trial>, sigma_max: f64) -> Self {
        let (reports, estimates): (Vec<_>, Vec<_>) = trials.into_iter().map(|t| (t.report, t.estimate)).unzip();
        let pick = |f: fn(&MetricReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
        let s2 = sigma_max * sigma_max;
        let mse = Stat::of(&reports.iter().map(|r| r.mse / s2).collect::<Vec<_>>());
        Self { label: label.into(), mse, psnr_db: pick(|r| r.psnr_db), ssim: pick(|r| r.ssim), reports, estimates }
    }
}

/// Table I style variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    NoRis,
    DftPhases,
    ReluActivation,
    NoPositionalEncoding,
    Alpha001,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::NoRis,
        Variant::DftPhases,
        Variant::ReluActivation,
        Variant::NoPositionalEncoding,
        Variant::Alpha001,
        Variant::Full,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::NoRis => "no_ris",
            Variant::DftPhases => "dft_phases",
            Variant::ReluActivation => "relu_activation",
            Variant::NoPositionalEncoding => "no_positional_encoding",
            Variant::Alpha001 => "alpha_0.01",
            Variant::Full => "full",
        }
    }

    pub fn apply(&self, base: &Setup) -> Setup {
        let mut s = base.clone();
        match self {
            Variant::NoRis => {
                s.data_paths = PathMask::NO_RIS;
                s.inversion_paths = PathMask::NO_RIS;
            }
            Variant::DftPhases => s.codebook = CodebookKind::Dft,
            Variant::ReluActivation => s.model.activation = Activation::Relu,
            Variant::NoPositionalEncoding => s.model.positional_encoding = false,
            Variant::Alpha001 => {
                s.train.alpha = 0.01;
                s.train.alpha_relative = true;
            }
            Variant::Full => {}
        }
        s
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

fn scene_for(setup: &Setup, index: usize) -> SceneKind {
    setup.scenes[index % setup.scenes.len()]
}

/// One trial per seed; seed `i` uses scene family `i mod |scenes|`.
fn run_trials(setup: &Setup, method: Method, seeds: &[u64]) -> Result<Vec<Trial>> {
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let scene_seed = rng::derive(seed, &[0]);
            let inst = Instance::new(setup, scene_for(setup, i), scene_seed, seed)?;
            reconstruct(setup, &inst, method, seed)
        })
        .collect()
}

/// Mean metrics of the INR for each variant over `seeds`.
pub fn run_ablation(base: &Setup, variants: &[Variant], seeds: &[u64]) -> Result<Vec<Summary>> {
    if seeds.is_empty() && !variants.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    let sigma_max = base.system().sigma_max();
    variants
        .iter()
        .map(|v| {
            let setup = v.apply(base);
            let trials = run_trials(&setup, Method::Inr, seeds)?;
            Ok(Summary::new(v.name(), trials, sigma_max))
        })
        .collect()
}

/// Each method reconstructs the same instances.
pub fn run_comparison(setup: &Setup, methods: &[Method], seeds: &[u64]) -> Result<Vec<Summary>> {
    if seeds.is_empty() {
        return Err(Error::invalid("comparison needs at least one seed"));
    }
    let sigma_max = setup.system().sigma_max();
    let per_seed: Vec<Vec<Trial>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let inst = Instance::new(setup, scene_for(setup, i), rng::derive(seed, &[0]), seed)?;
            methods.iter().map(|&m| reconstruct(setup, &inst, m, seed)).collect()
        })
        .collect::<Result<_>>()?;
    let mut by_method: Vec<Vec<Trial>> = methods.iter().map(|_| Vec::with_capacity(seeds.len())).collect();
    for trials in per_seed {
        for (j, t) in trials.into_iter().enumerate() {
            by_method[j].push(t);
        }
    }
    Ok(methods.iter().zip(by_method).map(|(m, trials)| Summary::new(m.label(), trials, sigma_max)).collect())
}

/// One cell of the distance × K grid. MSE is normalized by σ_max².
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub distance: f64,
    pub configurations: usize,
    pub mse: Stat,
    pub ssim: Stat,
    pub estimates: Vec<Scene>,
}

/// Mean INR error for every (D, K) over seeds × scene families. Scenes are
/// shared across cells; phases and initialization are derived from
/// `(seed, D, K, scene index)`.
pub fn run_sweep(base: &Setup, distances: &[f64], ks: &[usize], seeds: &[u64]) -> Result<Vec<SweepCell>> {
    if distances.is_empty() || ks.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep lists must be non-empty"));
    }
    let sigma_max = base.system().sigma_max();
    let mut jobs = Vec::new();
    for &d in distances {
        for &k in ks {
            for &seed in seeds {
                for i in 0..base.scenes.len() {
                    jobs.push((d, k, seed, i));
                }
            }
        }
    }
    let trials: Vec<Trial> = jobs
        .par_iter()
        .map(|&(d, k, seed, i)| {
            let mut setup = base.clone();
            setup.layout.distance = d;
            setup.configurations = k;
            let run_seed = rng::derive(seed, &[d.to_bits(), k as u64, i as u64]);
            let inst = Instance::new(&setup, base.scenes[i], rng::derive(seed, &[i as u64]), run_seed)?;
            reconstruct(&setup, &inst, Method::Inr, run_seed)
        })
        .collect::<Result<_>>()?;
    let per_cell = seeds.len() * base.scenes.len();
    let s2 = sigma_max * sigma_max;
    Ok(trials
        .chunks(per_cell)
        .zip(distances.iter().flat_map(|&d| ks.iter().map(move |&k| (d, k))))
        .map(|(chunk, (d, k))| SweepCell {
            distance: d,
            configurations: k,
            mse: Stat::of(&chunk.iter().map(|t| t.report.mse / s2).collect::<Vec<_>>()),
            ssim: Stat::of(&chunk.iter().map(|t| t.report.ssim).collect::<Vec<_>>()),
            estimates: chunk.iter().map(|t| t.estimate.clone()).collect(),
        })
        .collect())
}

/// Row-oriented table with CSV and aligned-text renderings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn summaries(rows: &[Summary]) -> Self {
        Self {
            header: ["label", "runs", "mse_norm_mean", "mse_norm_std", "psnr_db_mean", "psnr_db_std", "ssim_mean", "ssim_std"]
                .map(String::from)
                .to_vec(),
            rows: rows
                .iter()
                .map(|s| {
                    vec![
                        s.label.clone(),
                        s.reports.len().to_string(),
                        s.mse.mean.to_string(),
                        s.mse.std.to_string(),
                        s.psnr_db.mean.to_string(),
                        s.psnr_db.std.to_string(),
                        s.ssim.mean.to_string(),
                        s.ssim.std.to_string(),
                    ]
                })
                .collect(),
        }
    }

    pub fn sweep(cells: &[SweepCell]) -> Self {
        Self {
            header: ["distance_lambda", "k", "mse_norm_mean", "mse_norm_std", "ssim_mean", "ssim_std"].map(String::from).to_vec(),
            rows: cells
                .iter()
                .map(|c| {
                    vec![
                        c.distance.to_string(),
                        c.configurations.to_string(),
                        c.mse.mean.to_string(),
                        c.mse.std.to_string(),
                        c.ssim.mean.to_string(),
                        c.ssim.std.to_string(),
                    ]
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

/// Grayscale heat map of a sweep: rows are distances, columns K, darker is
/// lower MSE.
pub fn sweep_heatmap(cells: &[SweepCell], distances: usize, ks: usize) -> Result<Vec<u8>> {
    if cells.len() != distances * ks {
        return Err(Error::invalid("sweep grid shape mismatch"));
    }
    let logs: Vec<f64> = cells.iter().map(|c| c.mse.mean.max(1e-300).log10()).collect();
    let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(logs
        .iter()
        .map(|&v| if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u8 } else { 0 })
        .collect())
}

/// Measurement residual of an image; handy for diagnostics.
pub fn residual_norm(op: &ForwardOperator, y: ArrayView1<Complex64>, sigma: &[f64]) -> Result<f64> {
    let y_hat = op.apply(ArrayView1::from(sigma))?;
    Ok((&y_hat - &y).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
}
