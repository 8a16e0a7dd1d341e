//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test -p ris-inr-cli --test acceptance`, or pick
//! criteria by number: `cargo test -p ris-inr-cli --test acceptance -- 1 7 9`.
//!
//! Criteria 4 and 5 do not hold at desk scale (see the README). They are
//! evaluated with their full thresholds and reported as expected failures;
//! any other failure makes the suite exit non-zero.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ris_inr::baselines::{self, CsConfig};
use ris_inr::channel::{assemble_sensing_channel, ris_phase_random};
use ris_inr::experiment::{self, Method, Setup, Variant};
use ris_inr::forward::{build_forward, build_forward_on};
use ris_inr::inr::Activation;
use ris_inr::metrics;
use ris_inr::scene::{make_grid, Layout};
use ris_inr::train::{self, physics_loss};
use ris_inr::{Complex64, InrModel, ModelSpec, PathMask, Point3, Scene, SceneKind, SystemConfig};

const EXPECTED_FAILURES: [u32; 2] = [4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Result<Outcome, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn main() {
    let criteria: [(u32, &str, Check); 9] = [
        (1, "forward operator oracle", c1_operator),
        (2, "full-pipeline gradient", c2_gradient),
        (3, "desk-scale INR recovery", c3_recovery),
        (4, "ablation trend", c4_ablation),
        (5, "single-path comparison trend", c5_comparison),
        (6, "distance sweep trend", c6_sweep),
        (7, "metric units", c7_metrics),
        (8, "CLI determinism", c8_determinism),
        (9, "FISTA correctness", c9_fista),
    ];
    let picks: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |n: u32| picks.is_empty() || picks.iter().any(|p| p == "acceptance" || *p == n.to_string());

    let mut unexpected = 0;
    let mut ran = 0;
    for (n, name, check) in criteria {
        if !selected(n) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome { pass: false, detail: format!("error: {e}") });
        let secs = started.elapsed().as_secs_f64();
        let expected = EXPECTED_FAILURES.contains(&n);
        let status = match (outcome.pass, expected) {
            (true, false) => "PASS",
            (true, true) => "PASS (unexpected)",
            (false, true) => "FAIL (expected)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("acceptance #{n} {status}: {name}: {} [{secs:.1} s]", outcome.detail);
    }
    println!("acceptance: {ran} criteria run, {unexpected} unexpected failures");
    if unexpected > 0 {
        std::process::exit(1);
    }
}

// 1. Aσ + b against per-configuration channel assembly, and against a
// brute-force sum over the four paths written out here.

fn tiny_system() -> SystemConfig {
    Layout { tx_elements: 2, rx_elements: 2, ris_side: 4, roi_side: 8, ..Layout::default() }.build()
}

fn los(a: Point3, b: Point3, lambda: f64) -> Complex64 {
    let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
    Complex64::from_polar(1.0, -2.0 * PI * d / lambda) / ((4.0 * PI).sqrt() * d)
}

fn brute_force_channel(cfg: &SystemConfig, sigma: &[f64], omega: ArrayView1<Complex64>) -> Array2<Complex64> {
    let lambda = cfg.wavelength;
    let (tx, rx, ris, roi) = (cfg.tx_positions(), cfg.rx_positions(), cfg.ris_positions(), cfg.grid().positions);
    let g = lambda * cfg.antenna_gain.sqrt() / (4.0 * PI).sqrt();
    Array2::from_shape_fn((tx.len(), rx.len()), |(i, j)| {
        let mut h = Complex64::new(0.0, 0.0);
        for (n, &v) in roi.iter().enumerate() {
            h += los(tx[i], v, lambda) * sigma[n] * los(v, rx[j], lambda);
        }
        for (s, &r) in ris.iter().enumerate() {
            h += los(tx[i], r, lambda) * omega[s] * los(r, rx[j], lambda);
            for (n, &v) in roi.iter().enumerate() {
                h += los(tx[i], v, lambda) * sigma[n] * los(v, r, lambda) * omega[s] * los(r, rx[j], lambda);
                h += los(tx[i], r, lambda) * omega[s] * los(r, v, lambda) * sigma[n] * los(v, rx[j], lambda);
            }
        }
        h * g
    })
}

fn c1_operator() -> Result<Outcome, String> {
    let cfg = tiny_system();
    let book = ris_phase_random(3, cfg.n_ris(), 11).map_err(err)?;
    let op = build_forward(&cfg, &book, PathMask::ALL).map_err(err)?;
    let grid = cfg.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_lib, mut worst_brute) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let sigma: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(0.0..cfg.sigma_max())).collect();
        let y = op.apply(ArrayView1::from(&sigma)).map_err(err)?;
        let scene = Scene::new(sigma.clone(), grid.clone(), cfg.sigma_max()).map_err(err)?;
        let mut lib = Vec::new();
        let mut brute = Vec::new();
        for k in 0..3 {
            let h = assemble_sensing_channel(&cfg, &scene, book.row(k)).map_err(err)?;
            let b = brute_force_channel(&cfg, &sigma, book.row(k));
            // row index k N_t N_r + j N_t + i
            for j in 0..cfg.n_rx() {
                for i in 0..cfg.n_tx() {
                    lib.push(h[[i, j]]);
                    brute.push(b[[i, j]]);
                }
            }
        }
        let rel = |want: &[Complex64]| {
            let scale = want.iter().map(|v| v.norm()).fold(0.0, f64::max);
            y.iter().zip(want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale
        };
        worst_lib = worst_lib.max(rel(&lib));
        worst_brute = worst_brute.max(rel(&brute));
    }
    Ok(Outcome {
        pass: worst_lib < 1e-10 && worst_brute < 1e-10,
        detail: format!("max rel inf-norm error {worst_lib:.2e} vs assembly, {worst_brute:.2e} vs brute force (< 1e-10)"),
    })
}

// 2. Encode -> MLP -> operator -> loss, analytic vs central differences.

fn c2_gradient() -> Result<Outcome, String> {
    let cfg = tiny_system();
    let grid = make_grid(&cfg.roi, 2, 5).map_err(err)?;
    let book = ris_phase_random(3, cfg.n_ris(), 4).map_err(err)?;
    let op = build_forward_on(&cfg, &grid, &book, PathMask::ALL).map_err(err)?;
    let sigma_max = cfg.sigma_max();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(0.0..sigma_max)).collect();
    let y = op.apply(ArrayView1::from(&truth)).map_err(err)?;

    let spec = ModelSpec { n_pe: 8, chi: 2.0, hidden_width: 16, layers: 4, kappa: 3.0, activation: Activation::Sine, ..ModelSpec::default() };
    let model = InrModel::new(&spec, sigma_max, 3).map_err(err)?;
    let encoded = model.encode(&grid.positions);
    // nonzero sparsity weight so both loss terms are exercised
    let alpha = 0.1 * y.iter().map(|v| v.norm()).sum::<f64>() / (grid.len() as f64 * sigma_max);
    let (_, _, grads) = train::loss_and_gradients(&model, &encoded, &op, y.view(), alpha).map_err(err)?;
    let analytic: Vec<f64> = grads.values().collect();

    let loss_at = |m: &InrModel| -> Result<f64, String> {
        let s = m.predict(&grid.positions);
        let y_hat = op.apply(s.view()).map_err(err)?;
        Ok(physics_loss(y_hat.view(), y.view(), s.view(), alpha).map_err(err)?.value)
    };
    let n_params = model.params.param_count();
    let g_scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let h = 1e-6;
    let (mut worst, mut num, mut den) = (0.0f64, 0.0, 0.0);
    for _ in 0..50 {
        let i = rng.random_range(0..n_params);
        let mut plus = model.clone();
        *plus.params.param_mut(i) += h;
        let mut minus = model.clone();
        *minus.params.param_mut(i) -= h;
        let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
        let e = (fd - analytic[i]).abs();
        worst = worst.max(e / fd.abs().max(analytic[i].abs()).max(1e-6 * g_scale));
        num += e * e;
        den += fd * fd;
    }
    let aggregate = (num / den).sqrt();
    Ok(Outcome {
        pass: worst < 1e-4,
        detail: format!("{n_params} parameters, 50 sampled: max rel error {worst:.2e}, aggregate {aggregate:.2e} (< 1e-4)"),
    })
}

// 3 and 4 share the full-model runs.

fn desk_ellipse() -> Setup {
    Setup { scenes: vec![SceneKind::Ellipse], ..Setup::desk() }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn full_runs() -> Result<&'static experiment::Summary, String> {
    static FULL: std::sync::OnceLock<Result<experiment::Summary, String>> = std::sync::OnceLock::new();
    FULL.get_or_init(|| {
        experiment::run_ablation(&desk_ellipse(), &[Variant::Full], &SEEDS).map_err(err).map(|mut v| v.remove(0))
    })
    .as_ref()
    .map_err(|e| e.clone())
}

fn c3_recovery() -> Result<Outcome, String> {
    let full = full_runs()?;
    let s2 = desk_ellipse().system().sigma_max().powi(2);
    let good = full.reports.iter().filter(|r| r.ssim >= 0.85 && r.mse <= 0.01 * s2).count();
    let per_seed: Vec<String> = full.reports.iter().map(|r| format!("{:.3}/{:.4}", r.ssim, r.mse / s2)).collect();
    Ok(Outcome {
        pass: good >= 4,
        detail: format!("{good}/5 seeds with SSIM >= 0.85 and MSE <= 0.01 sigma_max^2 (SSIM/MSE: {})", per_seed.join(", ")),
    })
}

fn c4_ablation() -> Result<Outcome, String> {
    let full = full_runs()?;
    let rest = experiment::run_ablation(
        &desk_ellipse(),
        &[Variant::NoPositionalEncoding, Variant::ReluActivation, Variant::NoRis],
        &SEEDS,
    )
    .map_err(err)?;
    let (full, no_pe, relu, no_ris) = (full.ssim.mean, rest[0].ssim.mean, rest[1].ssim.mean, rest[2].ssim.mean);
    let ordering = full > no_pe && no_pe > relu;
    Ok(Outcome {
        pass: ordering && relu < 0.5 && no_ris < 0.3,
        detail: format!(
            "mean SSIM full {full:.4}, no PE {no_pe:.4}, ReLU {relu:.4}, no RIS {no_ris:.4}; ordering {}, ReLU < 0.5 {}, no RIS < 0.3 {}",
            ordering,
            relu < 0.5,
            no_ris < 0.3
        ),
    })
}

fn c5_comparison() -> Result<Outcome, String> {
    let rows = experiment::run_comparison(&Setup::comparison(), &[Method::Inr, Method::Fista], &SEEDS).map_err(err)?;
    let (inr, fista) = (rows[0].ssim.mean, rows[1].ssim.mean);
    Ok(Outcome {
        pass: inr >= fista + 0.1,
        detail: format!("mean SSIM INR {inr:.4}, FISTA {fista:.4}, margin {:.4} (>= 0.1)", inr - fista),
    })
}

fn c6_sweep() -> Result<Outcome, String> {
    let base = Setup { scenes: vec![SceneKind::Ellipse, SceneKind::Rectangle, SceneKind::StickFigure], ..Setup::sweep() };
    let distances = [10.0, 20.0, 40.0, 80.0, 160.0];
    let cells = experiment::run_sweep(&base, &distances, &[12], &[0]).map_err(err)?;
    let mse: Vec<f64> = cells.iter().map(|c| c.mse.mean).collect();
    let argmin = (0..mse.len()).fold(0, |b, i| if mse[i] < mse[b] { i } else { b });
    let interior = argmin > 0 && argmin + 1 < mse.len() && mse[argmin] < mse[0] && mse[argmin] < mse[mse.len() - 1];
    let ks = experiment::run_sweep(&base, &[10.0], &[6, 24], &[0]).map_err(err)?;
    let (k6, k24) = (ks[0].mse.mean, ks[1].mse.mean);
    let curve: Vec<String> = distances.iter().zip(&mse).map(|(d, m)| format!("{d}:{m:.4}")).collect();
    Ok(Outcome {
        pass: interior && k24 < k6,
        detail: format!(
            "K=12 mean MSE by D [{}], minimum at D={} (interior {interior}); at D=10: K=6 {k6:.4}, K=24 {k24:.4}",
            curve.join(" "),
            distances[argmin]
        ),
    })
}

fn c7_metrics() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..2.0)).collect();
    let y: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..2.0)).collect();
    let ssim_self = (metrics::ssim(&x, &x, 2.0).map_err(err)? - 1.0).abs();
    // MSE equal to sigma_max^2: every pixel off by sigma_max
    let off: Vec<f64> = x.iter().map(|v| v + 2.0).collect();
    let psnr_zero = metrics::psnr(&off, &x, 2.0).map_err(err)?.abs();
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += (x[i] - y[i]) * (x[i] - y[i]);
    }
    let mse_err = (metrics::mse(&x, &y).map_err(err)? - acc / x.len() as f64).abs();
    // truth [0,0,1,1], estimate [0,0,1,0], L = 1: means 0.5 and 0.25,
    // unbiased variances 1/3 and 1/4, covariance 1/6
    let (c1, c2) = (1e-4, 9e-4);
    let hand = (2.0 * 0.5 * 0.25 + c1) * (2.0 / 6.0 + c2) / ((0.25 + 0.0625 + c1) * (1.0 / 3.0 + 0.25 + c2));
    let ssim_hand = (metrics::ssim(&[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 1.0, 1.0], 1.0).map_err(err)? - hand).abs();
    Ok(Outcome {
        pass: ssim_self <= 1e-12 && psnr_zero <= 1e-9 && mse_err <= 1e-12 && ssim_hand <= 1e-9,
        detail: format!(
            "|ssim(x,x)-1| {ssim_self:.1e}, |psnr at MSE=sigma_max^2| {psnr_zero:.1e}, mse vs loop {mse_err:.1e}, 2x2 SSIM vs hand {ssim_hand:.1e}"
        ),
    })
}

fn c8_determinism() -> Result<Outcome, String> {
    let bin = env!("CARGO_BIN_EXE_ris-inr");
    let tiny = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml");
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = dir.path().join("cfg.toml");
    let text = fs::read_to_string(&tiny).map_err(err)?.replace("max_epochs = 600", "max_epochs = 150");
    fs::write(&cfg, text).map_err(err)?;
    let run = |args: &[&str]| -> Result<(), String> {
        let o = Command::new(bin).args(args).output().map_err(err)?;
        if !o.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
        }
        Ok(())
    };
    let p = |q: &Path| q.to_str().unwrap().to_string();
    for rep in ["a", "b"] {
        let sim = p(&dir.path().join(rep).join("sim"));
        let tr = p(&dir.path().join(rep).join("train"));
        run(&["--deterministic", "--seed", "5", "--out", &sim, "simulate", "--config", &p(&cfg)])?;
        run(&["--deterministic", "--seed", "5", "--out", &tr, "train", "--config", &p(&cfg), "--measurements", &sim, "--checkpoint-every", "50"])?;
    }
    let files = ["sim/measurements.risy", "sim/operator.risa", "train/state.rist", "train/model.risc", "train/history.csv", "train/manifest.toml"];
    let mut differing = Vec::new();
    for f in files {
        let a = fs::read(dir.path().join("a").join(f)).map_err(err)?;
        let b = fs::read(dir.path().join("b").join(f)).map_err(err)?;
        if a != b {
            differing.push(f);
        }
    }
    Ok(Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} artifacts byte-identical across two runs", files.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    })
}

// 9. FISTA against plain proximal gradient run for 1e5 iterations on a
// seeded 8x8 Gaussian system with a sparse non-negative truth.

fn prox_oracle(a: &Array2<f64>, y: &Array1<f64>, beta: f64, iters: usize) -> Array1<f64> {
    // Lipschitz constant by power iteration on AᵀA
    let mut v = Array1::from_elem(a.ncols(), 1.0);
    let mut l = 0.0;
    for _ in 0..1000 {
        let w = a.t().dot(&a.dot(&v));
        l = w.dot(&w).sqrt() / v.dot(&v).sqrt();
        v = &w / w.dot(&w).sqrt();
    }
    let t = 1.0 / (1.001 * l);
    let mut x = Array1::zeros(a.ncols());
    for _ in 0..iters {
        let grad = a.t().dot(&(a.dot(&x) - y));
        x = (&x - &(grad * t)).mapv(|z: f64| (z - t * beta).max(0.0));
    }
    x
}

fn objective(a: &Array2<f64>, y: &Array1<f64>, x: &Array1<f64>, beta: f64) -> f64 {
    let r = a.dot(x) - y;
    0.5 * r.dot(&r) + beta * x.iter().map(|v| v.abs()).sum::<f64>()
}

fn c9_fista() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = Array2::from_shape_simple_fn((8, 8), || {
        // Box-Muller
        let (u, v): (f64, f64) = (rng.random_range(f64::EPSILON..1.0), rng.random_range(0.0..1.0));
        (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos() / 8f64.sqrt()
    });
    let truth = Array1::from(vec![0.0, 1.0, 0.0, 0.0, 0.5, 0.0, 0.8, 0.0]);
    let rhs = a.dot(&truth);

    let beta = 1e-2 * a.t().dot(&rhs).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let fista_cfg = CsConfig { beta, max_iters: 20_000, tolerance: 0.0, ..CsConfig::default() };
    let sol = baselines::solve_l1(a.view(), rhs.view(), &fista_cfg).map_err(err)?;
    let oracle = prox_oracle(&a, &rhs, beta, 100_000);
    let (f_fista, f_oracle) = (objective(&a, &rhs, &sol.x, beta), objective(&a, &rhs, &oracle, beta));
    let gap = (f_fista - f_oracle) / f_oracle;

    let zero_cfg = CsConfig { beta: 0.0, max_iters: 20_000, tolerance: 0.0, ..CsConfig::default() };
    let ls = baselines::solve_l1(a.view(), rhs.view(), &zero_cfg).map_err(err)?;
    let resid = |x: &Array1<f64>| {
        let r = a.dot(x) - &rhs;
        r.dot(&r).sqrt()
    };
    let (r_fista, r_truth) = (resid(&ls.x), resid(&truth));
    Ok(Outcome {
        pass: gap.abs() < 1e-8 && r_fista <= r_truth + 1e-6,
        detail: format!(
            "relative objective gap {gap:.2e} (|gap| < 1e-8, {} FISTA iterations); beta=0 residual {r_fista:.2e} vs truth {r_truth:.2e} (+1e-6)",
            sol.iterations
        ),
    })
}
