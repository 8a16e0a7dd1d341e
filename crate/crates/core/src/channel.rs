//! Point-to-point channels, RIS phase books and the multipath sensing
//! channel for one RIS configuration.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scene::{ImageGrid, Point3, Scene, SystemConfig};

/// What a channel matrix's rows or columns index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Tx,
    Rx,
    Ris,
    Roi,
}

/// Complex channel between two point sets; rows index `src` points,
/// columns index `dst` points.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    pub entries: Array2<Complex64>,
    pub src: Endpoint,
    pub dst: Endpoint,
}

impl ChannelMatrix {
    pub fn between(src: Endpoint, a: &[Point3], dst: Endpoint, b: &[Point3], wavelength: f64) -> Result<Self> {
        Ok(Self { entries: los_channel(a, b, wavelength)?, src, dst })
    }

    /// The reverse link. Free-space links are reciprocal.
    pub fn reversed(&self) -> Self {
        Self { entries: self.entries.t().to_owned(), src: self.dst, dst: self.src }
    }
}

/// Free-space line-of-sight channel between isotropic points:
/// entry `(m, n)` is `exp(-j2πd/λ) / (√(4π) d)` with `d = |a_m - b_n|`.
pub fn los_channel(a: &[Point3], b: &[Point3], wavelength: f64) -> Result<Array2<Complex64>> {
    if !(wavelength > 0.0) {
        return Err(Error::invalid("wavelength must be positive"));
    }
    let norm = (4.0 * PI).sqrt();
    let k = 2.0 * PI / wavelength;
    let mut out = Array2::zeros((a.len(), b.len()));
    for (m, pa) in a.iter().enumerate() {
        for (n, pb) in b.iter().enumerate() {
            let d = pa.distance(pb);
            if !(d > 0.0) {
                return Err(Error::DegenerateGeometry(format!(
                    "points {m} and {n} coincide at {:?}",
                    pa.to_array()
                )));
            }
            out[[m, n]] = Complex64::from_polar(1.0 / (norm * d), -k * d);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookKind {
    Random,
    Dft,
}

/// K unit-modulus RIS configurations, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct RisPhaseBook {
    pub omega: Array2<Complex64>,
    pub kind: CodebookKind,
}

impl RisPhaseBook {
    pub fn configurations(&self) -> usize {
        self.omega.nrows()
    }

    pub fn elements(&self) -> usize {
        self.omega.ncols()
    }

    pub fn row(&self, k: usize) -> ArrayView1<'_, Complex64> {
        self.omega.row(k)
    }
}

/// Phases i.i.d. uniform on `[0, 2π)`.
pub fn ris_phase_random(k: usize, n_s: usize, seed: u64) -> Result<RisPhaseBook> {
    if k == 0 || n_s == 0 {
        return Err(Error::invalid("phase book needs K >= 1 and N_s >= 1"));
    }
    let mut rng = rng::stream(seed, Stream::RisPhase);
    let omega = Array2::from_shape_simple_fn((k, n_s), || {
        Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))
    });
    Ok(RisPhaseBook { omega, kind: CodebookKind::Random })
}

/// First `k` rows of the `n_s`-point DFT matrix, `exp(-j2π kn / N_s)`.
pub fn ris_phase_dft(k: usize, n_s: usize) -> Result<RisPhaseBook> {
    if k == 0 || k > n_s {
        return Err(Error::invalid(format!("DFT codebook needs 1 <= K <= N_s, got K={k}, N_s={n_s}")));
    }
    let omega = Array2::from_shape_fn((k, n_s), |(row, n)| {
        // reduce the exponent first so large codebooks keep full precision
        let e = (row * n) % n_s;
        Complex64::from_polar(1.0, -2.0 * PI * e as f64 / n_s as f64)
    });
    Ok(RisPhaseBook { omega, kind: CodebookKind::Dft })
}

/// Propagation paths of the sensing channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Path {
    TxRoiRx,
    TxRisRx,
    TxRoiRisRx,
    TxRisRoiRx,
}

impl Path {
    pub const ALL: [Path; 4] = [Path::TxRoiRx, Path::TxRisRx, Path::TxRoiRisRx, Path::TxRisRoiRx];

    pub fn name(&self) -> &'static str {
        match self {
            Path::TxRoiRx => "tx-roi-rx",
            Path::TxRisRx => "tx-ris-rx",
            Path::TxRoiRisRx => "tx-roi-ris-rx",
            Path::TxRisRoiRx => "tx-ris-roi-rx",
        }
    }

    fn bit(&self) -> u8 {
        1 << (*self as u8)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Path {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Path::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown path `{s}`")))
    }
}

/// Subset of [`Path`]s included in a model.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PathMask(u8);

impl PathMask {
    pub const ALL: PathMask = PathMask(0b1111);
    pub const EMPTY: PathMask = PathMask(0);
    /// Every path not touching the RIS.
    pub const NO_RIS: PathMask = PathMask(1 << Path::TxRoiRx as u8);
    /// The single path retained by multipath-extracting imagers.
    pub const ROI_RIS_ONLY: PathMask = PathMask(1 << Path::TxRoiRisRx as u8);

    pub fn of(paths: &[Path]) -> Self {
        PathMask(paths.iter().fold(0, |m, p| m | p.bit()))
    }

    pub fn contains(&self, p: Path) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn paths(&self) -> impl Iterator<Item = Path> + '_ {
        Path::ALL.into_iter().filter(|p| self.contains(*p))
    }

    pub fn bits(&self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits & !0b1111 != 0 {
            return Err(Error::Format(format!("invalid path mask bits {bits:#b}")));
        }
        Ok(PathMask(bits))
    }
}

impl fmt::Debug for PathMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.paths().map(|p| p.name())).finish()
    }
}

impl fmt::Display for PathMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.paths().map(|p| p.name()).collect();
        f.write_str(&names.join("+"))
    }
}

impl TryFrom<Vec<String>> for PathMask {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        let paths = v.iter().map(|s| s.parse()).collect::<Result<Vec<Path>>>()?;
        Ok(PathMask::of(&paths))
    }
}

impl From<PathMask> for Vec<String> {
    fn from(m: PathMask) -> Self {
        m.paths().map(|p| p.name().to_string()).collect()
    }
}

/// All point-to-point channels of a configuration, computed once.
#[derive(Clone, Debug)]
pub struct Links {
    pub tx_roi: ChannelMatrix,
    pub roi_rx: ChannelMatrix,
    pub tx_ris: ChannelMatrix,
    pub ris_rx: ChannelMatrix,
    pub ris_roi: ChannelMatrix,
    pub g_sen: f64,
}

impl Links {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        Self::on_grid(cfg, &cfg.grid())
    }

    /// Links with the ROI sampled on `grid` instead of the native ROI grid.
    pub fn on_grid(cfg: &SystemConfig, grid: &ImageGrid) -> Result<Self> {
        cfg.validate()?;
        let lambda = cfg.wavelength;
        let tx = cfg.tx_positions();
        let rx = cfg.rx_positions();
        let ris = cfg.ris_positions();
        let roi = &grid.positions;
        use Endpoint::*;
        Ok(Self {
            tx_roi: ChannelMatrix::between(Tx, &tx, Roi, roi, lambda)?,
            roi_rx: ChannelMatrix::between(Roi, roi, Rx, &rx, lambda)?,
            tx_ris: ChannelMatrix::between(Tx, &tx, Ris, &ris, lambda)?,
            ris_rx: ChannelMatrix::between(Ris, &ris, Rx, &rx, lambda)?,
            ris_roi: ChannelMatrix::between(Ris, &ris, Roi, roi, lambda)?,
            g_sen: cfg.g_sen(),
        })
    }

    /// H_roi-ris, derived from H_ris-roi so reciprocity holds exactly.
    pub fn roi_ris(&self) -> ChannelMatrix {
        self.ris_roi.reversed()
    }

    pub fn n_tx(&self) -> usize {
        self.tx_roi.entries.nrows()
    }

    pub fn n_rx(&self) -> usize {
        self.roi_rx.entries.ncols()
    }

    pub fn n_ris(&self) -> usize {
        self.ris_rx.entries.nrows()
    }

    pub fn n_pixels(&self) -> usize {
        self.tx_roi.entries.ncols()
    }

    /// `diag(ω) · H_ris-rx`
    pub(crate) fn weighted_ris_rx(&self, omega: ArrayView1<Complex64>) -> Array2<Complex64> {
        let mut m = self.ris_rx.entries.clone();
        for (mut row, w) in m.axis_iter_mut(Axis(0)).zip(omega.iter()) {
            row.mapv_inplace(|h| h * w);
        }
        m
    }

    /// `H_tx-ris · diag(ω)`
    pub(crate) fn tx_ris_weighted(&self, omega: ArrayView1<Complex64>) -> Array2<Complex64> {
        let mut m = self.tx_ris.entries.clone();
        for (mut col, w) in m.axis_iter_mut(Axis(1)).zip(omega.iter()) {
            col.mapv_inplace(|h| h * w);
        }
        m
    }

    /// Sensing channel `N_t × N_r` for scattering image `sigma` and RIS
    /// configuration `omega`, summed over the paths in `mask`.
    pub fn assemble(&self, sigma: &[f64], omega: ArrayView1<Complex64>, mask: PathMask) -> Result<Array2<Complex64>> {
        if sigma.len() != self.n_pixels() {
            return Err(Error::invalid(format!(
                "sigma has {} entries, ROI has {} pixels",
                sigma.len(),
                self.n_pixels()
            )));
        }
        if omega.len() != self.n_ris() {
            return Err(Error::invalid(format!(
                "RIS configuration has {} entries, RIS has {} elements",
                omega.len(),
                self.n_ris()
            )));
        }
        let mut h = Array2::<Complex64>::zeros((self.n_tx(), self.n_rx()));
        // H_tx-roi diag(σ)
        let mut tx_roi_s = self.tx_roi.entries.clone();
        for (mut col, &s) in tx_roi_s.axis_iter_mut(Axis(1)).zip(sigma) {
            col.mapv_inplace(|v| v * s);
        }
        let w_ris_rx = self.weighted_ris_rx(omega);
        let tx_ris_w = self.tx_ris_weighted(omega);

        if mask.contains(Path::TxRoiRx) {
            h += &tx_roi_s.dot(&self.roi_rx.entries);
        }
        if mask.contains(Path::TxRisRx) {
            h += &tx_ris_w.dot(&self.ris_rx.entries);
        }
        if mask.contains(Path::TxRoiRisRx) {
            h += &tx_roi_s.dot(&self.roi_ris().entries.dot(&w_ris_rx));
        }
        if mask.contains(Path::TxRisRoiRx) {
            let mut t = tx_ris_w.dot(&self.ris_roi.entries);
            for (mut col, &s) in t.axis_iter_mut(Axis(1)).zip(sigma) {
                col.mapv_inplace(|v| v * s);
            }
            h += &t.dot(&self.roi_rx.entries);
        }
        h.mapv_inplace(|v| v * self.g_sen);
        Ok(h)
    }
}

/// Sensing channel of one RIS configuration with every modeled path:
/// `H_tx-roi-rx + H_tx-ris-rx,k + H_tx-roi-ris-rx,k + H_tx-ris-roi-rx,k`.
pub fn assemble_sensing_channel(
    cfg: &SystemConfig,
    scene: &Scene,
    omega_k: ArrayView1<Complex64>,
) -> Result<Array2<Complex64>> {
    Links::on_grid(cfg, &scene.grid)?.assemble(&scene.sigma, omega_k, PathMask::ALL)
}

/// Unmodeled multipath: i.i.d. circularly-symmetric complex Gaussian entries
/// with per-entry variance `power`, deterministic in `(seed, k)`.
pub fn clutter_channel(n_t: usize, n_r: usize, k: usize, seed: u64, power: f64) -> Result<Array2<Complex64>> {
    if !(power >= 0.0) {
        return Err(Error::invalid("clutter power must be non-negative"));
    }
    if power == 0.0 {
        return Ok(Array2::zeros((n_t, n_r)));
    }
    let mut rng = rng::indexed_stream(seed, Stream::Clutter, k as u64);
    let normal = Normal::new(0.0, (power / 2.0).sqrt()).expect("finite std");
    Ok(Array2::from_shape_simple_fn((n_t, n_r), || {
        Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
    }))
}
