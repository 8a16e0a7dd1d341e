//! The stacked forward model `f(σ, Ω) = Aσ + b` and measurement synthesis.
//!
//! Measurements are ordered by RIS configuration, then by the column-major
//! vectorization of each `N_t × N_r` channel: row `k·N_t·N_r + j·N_t + i`
//! holds TX antenna `i`, RX antenna `j` under configuration `k`.

use std::path::Path as FsPath;

use ndarray::{s, Array1, Array2, ArrayView1, Zip};
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binfmt::{self, Reader, Writer};
use crate::channel::{clutter_channel, Links, Path, PathMask, RisPhaseBook};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scene::{ImageGrid, Scene, SystemConfig};

pub const OPERATOR_MAGIC: &[u8; 4] = b"RISA";

/// Dense affine operator mapping a scattering image to stacked CSI.
#[derive(Clone, Debug)]
pub struct ForwardOperator {
    a: Array2<Complex64>,
    b: Array1<Complex64>,
    // split copies of A for real-valued products
    a_re: Array2<f64>,
    a_im: Array2<f64>,
    pub mask: PathMask,
    pub n_tx: usize,
    pub n_rx: usize,
    pub configurations: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl ForwardOperator {
    pub fn from_parts(
        a: Array2<Complex64>,
        b: Array1<Complex64>,
        mask: PathMask,
        (n_tx, n_rx, configurations): (usize, usize, usize),
        (grid_rows, grid_cols): (usize, usize),
    ) -> Result<Self> {
        if a.nrows() != b.len() || a.nrows() != n_tx * n_rx * configurations || a.ncols() != grid_rows * grid_cols {
            return Err(Error::invalid(format!(
                "operator {}x{} with offset {} does not match K={configurations}, N_t={n_tx}, N_r={n_rx}, grid {grid_rows}x{grid_cols}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::invalid("operator has non-finite entries"));
        }
        let a_re = a.mapv(|v| v.re);
        let a_im = a.mapv(|v| v.im);
        Ok(Self { a, b, a_re, a_im, mask, n_tx, n_rx, configurations, grid_rows, grid_cols })
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.a
    }

    pub fn offset(&self) -> &Array1<Complex64> {
        &self.b
    }

    /// Number of measurements `N_m = K N_t N_r`.
    pub fn n_measurements(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_pixels(&self) -> usize {
        self.a.ncols()
    }

    pub fn row_index(&self, k: usize, tx: usize, rx: usize) -> usize {
        k * self.n_tx * self.n_rx + rx * self.n_tx + tx
    }

    fn check_sigma(&self, len: usize) -> Result<()> {
        if len != self.n_pixels() {
            return Err(Error::invalid(format!("sigma has {len} entries, operator has {} columns", self.n_pixels())));
        }
        Ok(())
    }

    /// `Aσ + b`.
    pub fn apply(&self, sigma: ArrayView1<f64>) -> Result<Array1<Complex64>> {
        self.check_sigma(sigma.len())?;
        Ok(self.apply_linear(sigma) + &self.b)
    }

    /// `Aσ` without the offset.
    pub fn apply_linear(&self, sigma: ArrayView1<f64>) -> Array1<Complex64> {
        let re = self.a_re.dot(&sigma);
        let im = self.a_im.dot(&sigma);
        Zip::from(&re).and(&im).map_collect(|&r, &i| Complex64::new(r, i))
    }

    fn split(r: ArrayView1<Complex64>) -> (Array1<f64>, Array1<f64>) {
        (r.mapv(|v| v.re), r.mapv(|v| v.im))
    }

    /// `Re(Aᴴ r)`, the gradient direction of `‖Aσ + b - y‖` for real σ.
    pub fn adjoint_real(&self, r: ArrayView1<Complex64>) -> Array1<f64> {
        let (re, im) = Self::split(r);
        self.a_re.t().dot(&re) + self.a_im.t().dot(&im)
    }

    /// `Aᴴ r`.
    pub fn adjoint(&self, r: ArrayView1<Complex64>) -> Array1<Complex64> {
        let (re, im) = Self::split(r);
        let out_re = self.a_re.t().dot(&re) + self.a_im.t().dot(&im);
        let out_im = self.a_re.t().dot(&im) - self.a_im.t().dot(&re);
        Zip::from(&out_re).and(&out_im).map_collect(|&r, &i| Complex64::new(r, i))
    }

    /// Real least-squares form: `[Re A; Im A]` and `[Re(y-b); Im(y-b)]`.
    pub fn stacked_real(&self, y: ArrayView1<Complex64>) -> Result<(Array2<f64>, Array1<f64>)> {
        if y.len() != self.n_measurements() {
            return Err(Error::invalid("measurement length does not match operator"));
        }
        let (m, n) = self.a.dim();
        let mut a = Array2::zeros((2 * m, n));
        a.slice_mut(s![..m, ..]).assign(&self.a_re);
        a.slice_mut(s![m.., ..]).assign(&self.a_im);
        let mut rhs = Array1::zeros(2 * m);
        for (i, (yv, bv)) in y.iter().zip(self.b.iter()).enumerate() {
            let d = yv - bv;
            rhs[i] = d.re;
            rhs[m + i] = d.im;
        }
        Ok((a, rhs))
    }

    pub fn write(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let mut w = Writer::new(Vec::with_capacity(64 + 16 * (self.a.len() + self.b.len())));
        w.header(OPERATOR_MAGIC, binfmt::FORMAT_VERSION)?;
        w.u64(self.a.nrows() as u64)?;
        w.u64(self.a.ncols() as u64)?;
        for v in [self.n_tx, self.n_rx, self.configurations, self.grid_rows, self.grid_cols] {
            w.u32(v as u32)?;
        }
        w.u8(self.mask.bits())?;
        // iter() walks the standard-layout matrix row-major
        w.complexes(self.a.iter())?;
        w.complexes(self.b.iter())?;
        binfmt::write_atomic(path.as_ref(), &w.finish()?)
    }

    pub fn read(path: impl AsRef<FsPath>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut r = Reader::new(bytes.as_slice());
        r.header(OPERATOR_MAGIC, binfmt::FORMAT_VERSION)?;
        let rows = r.length()?;
        let cols = r.length()?;
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let mask = PathMask::from_bits(r.u8()?)?;
        let expected = 4 + 4 + 16 + 20 + 1 + 16 * (rows * cols + rows);
        if bytes.len() != expected {
            return Err(Error::Format(format!("operator file has {} bytes, expected {expected}", bytes.len())));
        }
        let a = Array2::from_shape_vec((rows, cols), r.complexes(rows * cols)?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let b = Array1::from(r.complexes(rows)?);
        let [n_tx, n_rx, k, gr, gc] = dims;
        Self::from_parts(a, b, mask, (n_tx, n_rx, k), (gr, gc))
    }
}

/// Builds the operator on the configuration's native ROI grid.
pub fn build_forward(cfg: &SystemConfig, book: &RisPhaseBook, mask: PathMask) -> Result<ForwardOperator> {
    build_forward_on(cfg, &cfg.grid(), book, mask)
}

/// Builds the operator with columns on `grid`. Column `n` is the response
/// of a unit scatterer at pixel `n` over the masked σ-dependent paths; `b`
/// carries the σ-independent TX-RIS-RX path when it is masked in.
pub fn build_forward_on(
    cfg: &SystemConfig,
    grid: &ImageGrid,
    book: &RisPhaseBook,
    mask: PathMask,
) -> Result<ForwardOperator> {
    if mask.is_empty() {
        return Err(Error::invalid("path mask is empty"));
    }
    if book.elements() != cfg.n_ris() {
        return Err(Error::invalid(format!(
            "phase book has {} elements per configuration, RIS has {}",
            book.elements(),
            cfg.n_ris()
        )));
    }
    let links = Links::on_grid(cfg, grid)?;
    let (n_t, n_r, n_v) = (links.n_tx(), links.n_rx(), links.n_pixels());
    let per_k = n_t * n_r;
    let g = links.g_sen;
    let roi_ris = mask.contains(Path::TxRoiRisRx).then(|| links.roi_ris());
    let t = &links.tx_roi.entries;
    let r = &links.roi_rx.entries;

    let blocks: Vec<(Array2<Complex64>, Array1<Complex64>)> = (0..book.configurations())
        .into_par_iter()
        .map(|k| {
            let omega = book.row(k);
            // H_roi-ris diag(ω) H_ris-rx  (N_v × N_r)
            let u = roi_ris.as_ref().map(|rr| rr.entries.dot(&links.weighted_ris_rx(omega)));
            // H_tx-ris diag(ω) H_ris-roi  (N_t × N_v)
            let tx_ris_w = links.tx_ris_weighted(omega);
            let w = mask.contains(Path::TxRisRoiRx).then(|| tx_ris_w.dot(&links.ris_roi.entries));

            let mut block = Array2::<Complex64>::zeros((per_k, n_v));
            for j in 0..n_r {
                for i in 0..n_t {
                    let mut row = block.row_mut(j * n_t + i);
                    for n in 0..n_v {
                        let mut acc = Complex64::new(0.0, 0.0);
                        if mask.contains(Path::TxRoiRx) {
                            acc += t[[i, n]] * r[[n, j]];
                        }
                        if let Some(u) = &u {
                            acc += t[[i, n]] * u[[n, j]];
                        }
                        if let Some(w) = &w {
                            acc += w[[i, n]] * r[[n, j]];
                        }
                        row[n] = acc * g;
                    }
                }
            }
            let mut offset = Array1::<Complex64>::zeros(per_k);
            if mask.contains(Path::TxRisRx) {
                let h = tx_ris_w.dot(&links.ris_rx.entries);
                for j in 0..n_r {
                    for i in 0..n_t {
                        offset[j * n_t + i] = h[[i, j]] * g;
                    }
                }
            }
            (block, offset)
        })
        .collect();

    let k_total = book.configurations();
    let mut a = Array2::zeros((k_total * per_k, n_v));
    let mut b = Array1::zeros(k_total * per_k);
    for (k, (block, offset)) in blocks.into_iter().enumerate() {
        a.slice_mut(s![k * per_k..(k + 1) * per_k, ..]).assign(&block);
        b.slice_mut(s![k * per_k..(k + 1) * per_k]).assign(&offset);
    }
    ForwardOperator::from_parts(a, b, mask, (n_t, n_r, k_total), (grid.rows, grid.cols))
}

/// Channel-estimation error and unmodeled clutter added to the CSI.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Add complex Gaussian estimation error.
    pub estimation_error: bool,
    /// Per complex entry.
    pub estimation_error_variance: f64,
    /// Add the unmodeled `H_others` term.
    pub clutter: bool,
    pub clutter_power: f64,
    /// Draw `H_others` once and reuse it for every configuration.
    pub static_clutter: bool,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.estimation_error_variance >= 0.0) || !(self.clutter_power >= 0.0) {
            return Err(Error::invalid("noise variances must be non-negative"));
        }
        Ok(())
    }
}

/// Stacked noisy CSI and the phase book that produced it.
#[derive(Clone, Debug)]
pub struct MeasurementSet {
    pub y: Array1<Complex64>,
    pub phasebook: RisPhaseBook,
    pub noise: NoiseModel,
    pub seed: u64,
}

/// Variance of a least-squares channel estimate from `N_t` orthogonal pilots:
/// `P_n / (P_t N_t)`.
pub fn default_noise_variance(cfg: &SystemConfig) -> f64 {
    cfg.p_noise / (cfg.p_tx * cfg.n_tx() as f64)
}

/// `y = Aσ + b (+ clutter) (+ estimation error)`, deterministic in `seed`.
pub fn synthesize_measurements(
    op: &ForwardOperator,
    book: &RisPhaseBook,
    scene: &Scene,
    noise: &NoiseModel,
    seed: u64,
) -> Result<MeasurementSet> {
    noise.validate()?;
    if (scene.rows(), scene.cols()) != (op.grid_rows, op.grid_cols) {
        return Err(Error::invalid(format!(
            "scene grid {}x{} does not match operator grid {}x{}",
            scene.rows(),
            scene.cols(),
            op.grid_rows,
            op.grid_cols
        )));
    }
    if book.configurations() != op.configurations {
        return Err(Error::invalid("phase book size does not match operator"));
    }
    let mut y = op.apply(ArrayView1::from(&scene.sigma))?;
    let per_k = op.n_tx * op.n_rx;

    if noise.clutter && noise.clutter_power > 0.0 {
        for k in 0..op.configurations {
            let slot = if noise.static_clutter { 0 } else { k };
            let h = clutter_channel(op.n_tx, op.n_rx, slot, seed, noise.clutter_power)?;
            for j in 0..op.n_rx {
                for i in 0..op.n_tx {
                    y[k * per_k + j * op.n_tx + i] += h[[i, j]];
                }
            }
        }
    }
    if noise.estimation_error && noise.estimation_error_variance > 0.0 {
        let mut rng = rng::stream(seed, Stream::EstimationError);
        let normal = Normal::new(0.0, (noise.estimation_error_variance / 2.0).sqrt()).expect("finite std");
        for v in y.iter_mut() {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(MeasurementSet { y, phasebook: book.clone(), noise: noise.clone(), seed })
}
