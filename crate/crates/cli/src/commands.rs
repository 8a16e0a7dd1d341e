use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use ris_inr::baselines;
use ris_inr::binfmt;
use ris_inr::experiment::{self, Instance, Method, Setup, SweepCell, Table, Variant};
use ris_inr::metrics::{self, MetricReport, REPORT_HEADER};
use ris_inr::pgm;
use ris_inr::scene::{load_scene_image, make_grid, Scene};
use ris_inr::train::{self, Problem, TrainState};
use ris_inr::{rng, Complex64, Error, ForwardOperator, InrModel};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::{Algo, Cli, Command, ExperimentArgs, GlobalOpts, Preset, TrainArgs};

pub const MEASUREMENTS_FILE: &str = "measurements.risy";
pub const PHASEBOOK_FILE: &str = "phasebook.rism";
pub const OPERATOR_FILE: &str = "operator.risa";
pub const TRUTH_FILE: &str = "truth.risy";
pub const TRUTH_PGM: &str = "truth.pgm";
pub const MODEL_FILE: &str = "model.risc";
pub const STATE_FILE: &str = "state.rist";
pub const HISTORY_FILE: &str = "history.csv";

pub fn dispatch(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    let threads = if g.deterministic { Some(1) } else { g.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // only fails if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate { config } => simulate(g, &config),
        Command::Train(args) => train_cmd(g, &args),
        Command::Render { model, config, res } => render(g, &model, &config, &res),
        Command::Baseline { config, measurements, algo } => baseline(g, &config, &measurements, algo),
        Command::Experiment(args) => experiment_cmd(g, &args),
        Command::Metrics { estimate, truth, sigma_max } => metrics_cmd(g, &estimate, &truth, sigma_max),
    }
}

fn out_dir(g: &GlobalOpts) -> CliResult<&Path> {
    fs::create_dir_all(&g.out).map_err(|e| CliError::io(&g.out, e))?;
    Ok(&g.out)
}

fn load_config(g: &GlobalOpts, path: &Path) -> CliResult<(RunConfig, u64)> {
    let cfg = RunConfig::load(path)?;
    let seed = g.seed.or(cfg.seed).unwrap_or(0);
    Ok((cfg, seed))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    binfmt::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn simulate(g: &GlobalOpts, config: &Path) -> CliResult<()> {
    let (cfg, seed) = load_config(g, config)?;
    let out = out_dir(g)?;
    let mut m = RunManifest::new("simulate", seed, g.deterministic, &cfg);
    let setup = cfg.to_setup();
    let system = setup.system();
    let truth = match &cfg.scene.image {
        Some(path) => load_scene_image(path, &system.grid(), system.sigma_max(), cfg.scene.resize).map_err(|e| match e {
            Error::InvalidArgument(msg) => CliError::Config(msg),
            other => other.into(),
        })?,
        None => ris_inr::scene::generate_scene(cfg.scene.target, &system.grid(), rng::derive(seed, &[0]), system.sigma_max()),
    };
    let inst = m.timed("simulate", || Instance::with_truth(&setup, truth, seed))?;

    binfmt::write_vector(out.join(MEASUREMENTS_FILE), &inst.y)?;
    binfmt::write_matrix(out.join(PHASEBOOK_FILE), &inst.phasebook.omega)?;
    inst.operator.write(out.join(OPERATOR_FILE))?;
    let truth_vec: Array1<Complex64> = inst.truth.sigma.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    binfmt::write_vector(out.join(TRUTH_FILE), &truth_vec)?;
    inst.truth.export_pgm(out.join(TRUTH_PGM))?;
    for f in [MEASUREMENTS_FILE, PHASEBOOK_FILE, OPERATOR_FILE, TRUTH_FILE, TRUTH_PGM, "truth.txt"] {
        m.output(f);
    }
    m.write(out)?;
    println!("simulated {} measurements of a {}x{} scene into {}", inst.y.len(), inst.grid.rows, inst.grid.cols, out.display());
    Ok(())
}

/// Measurements, inversion operator and (when present) ground truth from a
/// `simulate` directory, checked against the config.
struct Loaded {
    y: Array1<Complex64>,
    op: ForwardOperator,
    truth: Option<Scene>,
}

fn load_measurements(setup: &Setup, dir: &Path) -> CliResult<Loaded> {
    let y = binfmt::read_vector(dir.join(MEASUREMENTS_FILE))?;
    let op = ForwardOperator::read(dir.join(OPERATOR_FILE))?;
    let l = &setup.layout;
    let want = (l.tx_elements, l.rx_elements, setup.configurations, l.roi_side, l.roi_side);
    let got = (op.n_tx, op.n_rx, op.configurations, op.grid_rows, op.grid_cols);
    if want != got {
        return Err(CliError::Mismatch(format!(
            "operator has (N_t, N_r, K, rows, cols) = {got:?} but the config implies {want:?}"
        )));
    }
    if op.mask != setup.inversion_paths {
        return Err(CliError::Mismatch(format!("operator models paths {} but the config asks for {}", op.mask, setup.inversion_paths)));
    }
    if y.len() != op.n_measurements() {
        return Err(CliError::Mismatch(format!("{} measurements for an operator with {} rows", y.len(), op.n_measurements())));
    }
    let system = setup.system();
    let truth_path = dir.join(TRUTH_FILE);
    let truth = if truth_path.exists() {
        let v = binfmt::read_vector(&truth_path)?;
        let sigma: Vec<f64> = v.iter().map(|c| c.re).collect();
        let scene = Scene::new(sigma, system.grid(), system.sigma_max()).map_err(|e| CliError::Mismatch(e.to_string()))?;
        Some(scene)
    } else {
        None
    };
    Ok(Loaded { y, op, truth })
}

fn save_state(state: &TrainState, path: &Path, deterministic: bool) -> ris_inr::Result<()> {
    if deterministic {
        let mut s = state.clone();
        s.history.clear_timings();
        s.save(path)
    } else {
        state.save(path)
    }
}

fn train_cmd(g: &GlobalOpts, args: &TrainArgs) -> CliResult<()> {
    let (cfg, seed) = load_config(g, &args.config)?;
    let out = out_dir(g)?;
    let mut m = RunManifest::new("train", seed, g.deterministic, &cfg);
    let setup = cfg.to_setup();
    let system = setup.system();
    let grid = system.grid();
    let sigma_max = system.sigma_max();
    let data = load_measurements(&setup, &args.measurements)?;

    let state_path = out.join(STATE_FILE);
    let mut state = if args.resume && state_path.exists() {
        let s = TrainState::load(&state_path)?;
        if s.model.params.dims() != setup.model.dims() {
            return Err(CliError::Mismatch(format!(
                "checkpoint network {:?} does not match the config {:?}",
                s.model.params.dims(),
                setup.model.dims()
            )));
        }
        eprintln!("resuming from epoch {}", s.epoch);
        s
    } else {
        TrainState::new(InrModel::new(&setup.model, sigma_max, seed)?, &setup.train)
    };

    let problem = Problem { op: &data.op, y: data.y.view(), grid: &grid, truth: data.truth.as_ref() };
    let every = args.checkpoint_every;
    let det = g.deterministic;
    let result = m.timed("train", || {
        train::run(&mut state, &problem, &setup.train, |s| {
            if every > 0 && s.epoch % every == 0 {
                save_state(s, &state_path, det)?;
            }
            Ok(())
        })
    });
    if let Err(Error::Diverged(d)) = &result {
        d.last_good.save(out.join(MODEL_FILE))?;
        eprintln!("training diverged; best parameters so far saved to {}", MODEL_FILE);
    }
    result?;
    save_state(&state, &state_path, det)?;

    let model = &state.best_model;
    model.save(out.join(MODEL_FILE))?;
    let mut csv = Vec::new();
    state.history.write_csv(&mut csv, !det)?;
    binfmt::write_atomic(&out.join(HISTORY_FILE), &csv)?;
    for f in [STATE_FILE, MODEL_FILE, HISTORY_FILE] {
        m.output(f);
    }

    let estimate = m.timed("render", || train::render(model, &grid));
    estimate.export_pgm(out.join("render.pgm"))?;
    m.output("render.pgm");
    m.output("render.txt");
    for &(r, c) in &args.render_res {
        let name = format!("render_{r}x{c}.pgm");
        let img = train::render(model, &make_grid(&system.roi, r, c)?);
        img.export_pgm(out.join(&name))?;
        m.output(name);
        m.output(format!("render_{r}x{c}.txt"));
    }

    if let Some(t) = &data.truth {
        let mut report = MetricReport::compute(&estimate.sigma, &t.sigma, sigma_max)?;
        report.fingerprint = metrics::fingerprint(cfg.to_toml().as_bytes());
        report.runtime_ms = m.timings_ms.get("train").copied().unwrap_or(0.0);
        println!("epochs {}  best epoch {}  ssim {:.4}  psnr {:.2} dB", state.epoch, state.best_epoch, report.ssim, report.psnr_db);
        m.metrics = Some(report);
    } else {
        println!("epochs {}  best epoch {}  loss {:.6e}", state.epoch, state.best_epoch, state.best_loss);
    }
    m.write(out)
}

fn render(g: &GlobalOpts, model: &Path, config: &Path, res: &[(usize, usize)]) -> CliResult<()> {
    let (cfg, seed) = load_config(g, config)?;
    let out = out_dir(g)?;
    let mut m = RunManifest::new("render", seed, g.deterministic, &cfg);
    let model = InrModel::load(model)?;
    let roi = cfg.layout().build().roi;
    for &(r, c) in res {
        let name = format!("render_{r}x{c}.pgm");
        let img = m.timed(&name, || make_grid(&roi, r, c).map(|grid| train::render(&model, &grid)))?;
        img.export_pgm(out.join(&name))?;
        m.output(name);
        m.output(format!("render_{r}x{c}.txt"));
    }
    m.write(out)
}

fn baseline(g: &GlobalOpts, config: &Path, measurements: &Path, algo: Algo) -> CliResult<()> {
    let (cfg, seed) = load_config(g, config)?;
    let out = out_dir(g)?;
    let mut m = RunManifest::new("baseline", seed, g.deterministic, &cfg);
    let setup = cfg.to_setup();
    let system = setup.system();
    let grid = system.grid();
    let sigma_max = system.sigma_max();
    let data = load_measurements(&setup, measurements)?;
    let (method, estimate) = m.timed("reconstruct", || match algo {
        Algo::Fista => (Method::Fista, baselines::fista(&data.op, data.y.view(), &setup.baseline, &grid, sigma_max)),
        Algo::MatchedFilter => (Method::MatchedFilter, baselines::matched_filter(&data.op, data.y.view(), &grid, sigma_max)),
    });
    let estimate = estimate?;
    let name = format!("baseline_{}.pgm", method.name());
    estimate.export_pgm(out.join(&name))?;
    m.output(name);
    m.output(format!("baseline_{}.txt", method.name()));
    match &data.truth {
        Some(t) => {
            let mut report = MetricReport::compute(&estimate.sigma, &t.sigma, sigma_max)?;
            report.fingerprint = metrics::fingerprint(cfg.to_toml().as_bytes());
            report.runtime_ms = m.timings_ms["reconstruct"];
            write_text(&out.join("metrics.csv"), &format!("{REPORT_HEADER}\n{}\n", report.csv_row(method.label())))?;
            println!("{}: ssim {:.4}  psnr {:.2} dB", method.label(), report.ssim, report.psnr_db);
            m.output("metrics.csv");
            m.metrics = Some(report);
        }
        None => eprintln!("no {TRUTH_FILE} in {}; metrics skipped", measurements.display()),
    }
    m.write(out)
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

fn parse_list<T: std::str::FromStr<Err = Error>>(items: &[String]) -> CliResult<Vec<T>> {
    items.iter().map(|s| s.trim().parse::<T>().map_err(|e| CliError::Config(e.to_string()))).collect()
}

fn experiment_cmd(g: &GlobalOpts, args: &ExperimentArgs) -> CliResult<()> {
    let (mut setup, cfg_seed) = match &args.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            (cfg.to_setup(), cfg.seed)
        }
        None => (
            match args.preset {
                Preset::Ablation => Setup::desk(),
                Preset::Comparison => Setup::comparison(),
                Preset::Sweep => Setup::sweep(),
            },
            None,
        ),
    };
    if let Some(e) = args.epochs {
        setup.train.max_epochs = e;
    }
    setup.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if args.seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let seed = g.seed.or(cfg_seed).unwrap_or(0);
    let seeds: Vec<u64> = (0..args.seeds).map(|i| seed + i).collect();
    let out = out_dir(g)?;
    let snapshot = RunConfig::from_setup(&setup, Some(seed));
    let mut m = RunManifest::new("experiment", seed, g.deterministic, &snapshot);
    let cells = out.join("cells");
    fs::create_dir_all(&cells).map_err(|e| CliError::io(&cells, e))?;

    let (name, table) = match args.preset {
        Preset::Ablation | Preset::Comparison => {
            let summaries = if args.preset == Preset::Ablation {
                let variants: Vec<Variant> =
                    if args.variants.is_empty() { Variant::ALL.to_vec() } else { parse_list(&args.variants)? };
                m.timed("ablation", || experiment::run_ablation(&setup, &variants, &seeds))?
            } else {
                let methods: Vec<Method> = if args.methods.is_empty() {
                    vec![Method::Inr, Method::Fista, Method::MatchedFilter]
                } else {
                    parse_list(&args.methods)?
                };
                m.timed("comparison", || experiment::run_comparison(&setup, &methods, &seeds))?
            };
            for s in &summaries {
                for (scene, seed) in s.estimates.iter().zip(&seeds) {
                    let f = format!("cells/{}_seed{seed}.pgm", file_stem(&s.label));
                    scene.export_pgm(out.join(&f))?;
                    m.output(f);
                }
            }
            let name = if args.preset == Preset::Ablation { "ablation" } else { "comparison" };
            (name, Table::summaries(&summaries))
        }
        Preset::Sweep => {
            if args.distances.is_empty() || args.ks.is_empty() {
                return Err(CliError::Config("sweep needs at least one distance and one K".into()));
            }
            let cells: Vec<SweepCell> =
                m.timed("sweep", || experiment::run_sweep(&setup, &args.distances, &args.ks, &seeds))?;
            for c in &cells {
                for (i, scene) in c.estimates.iter().enumerate() {
                    let f = format!("cells/d{}_k{}_{i}.pgm", c.distance, c.configurations);
                    scene.export_pgm(out.join(&f))?;
                    m.output(f);
                }
            }
            let heat = experiment::sweep_heatmap(&cells, args.distances.len(), args.ks.len())?;
            pgm::write_pgm(out.join("sweep_heatmap.pgm"), args.ks.len(), args.distances.len(), &heat)?;
            m.output("sweep_heatmap.pgm");
            ("sweep", Table::sweep(&cells))
        }
    };
    write_text(&out.join(format!("{name}.csv")), &table.to_csv())?;
    write_text(&out.join(format!("{name}.txt")), &table.to_text())?;
    m.output(format!("{name}.csv"));
    m.output(format!("{name}.txt"));
    print!("{}", table.to_text());
    m.write(out)
}

/// σ_max from a PGM's `.txt` sidecar, if there is one.
fn sidecar_sigma_max(pgm_path: &Path) -> CliResult<Option<f64>> {
    let side: PathBuf = pgm_path.with_extension("txt");
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == "sigma_max" {
                let v: f64 = v.trim().parse().map_err(|_| CliError::Core(Error::Format(format!("{}: bad sigma_max", side.display()))))?;
                return Ok(Some(v));
            }
        }
    }
    Ok(None)
}

fn metrics_cmd(g: &GlobalOpts, estimate: &Path, truth: &Path, sigma_max: Option<f64>) -> CliResult<()> {
    let a = pgm::read_pgm(estimate)?;
    let b = pgm::read_pgm(truth)?;
    if (a.width, a.height) != (b.width, b.height) {
        return Err(CliError::Mismatch(format!("images are {}x{} and {}x{}", a.width, a.height, b.width, b.height)));
    }
    let sigma_max = match sigma_max {
        Some(s) => s,
        None => sidecar_sigma_max(truth)?.unwrap_or(1.0),
    };
    if !(sigma_max > 0.0) {
        return Err(CliError::Config("sigma_max must be positive".into()));
    }
    let scale = |p: &pgm::Pgm| -> Vec<f64> { p.data.iter().map(|&v| v as f64 / p.maxval as f64 * sigma_max).collect() };
    let mut report = MetricReport::compute(&scale(&a), &scale(&b), sigma_max)?;
    report.fingerprint = metrics::fingerprint(&fs::read(estimate).map_err(|e| CliError::io(estimate, e))?);
    let label = estimate.file_stem().and_then(|s| s.to_str()).unwrap_or("estimate");
    let csv = format!("{REPORT_HEADER}\n{}\n", report.csv_row(label));
    let out = out_dir(g)?;
    write_text(&out.join("metrics.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
