//! System geometry, ROI sampling grids and ground-truth scenes.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path as FsPath;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm;
use crate::rng::{self, Stream};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A point (or direction) in 3D space, meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const X: Point3 = Point3::new(1.0, 0.0, 0.0);
    pub const Y: Point3 = Point3::new(0.0, 1.0, 0.0);
    pub const Z: Point3 = Point3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (*self - *other).norm()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn scale(&self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        p.to_array()
    }
}

impl std::ops::Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Uniform linear array with half-wavelength element spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UlaSpec {
    pub elements: usize,
    pub center: Point3,
    /// Unit vector along the array.
    #[serde(default = "default_ula_axis")]
    pub axis: Point3,
}

fn default_ula_axis() -> Point3 {
    Point3::Y
}

impl UlaSpec {
    pub fn positions(&self, wavelength: f64) -> Vec<Point3> {
        let spacing = wavelength / 2.0;
        let mid = (self.elements as f64 - 1.0) / 2.0;
        (0..self.elements)
            .map(|i| self.center + self.axis.scale((i as f64 - mid) * spacing))
            .collect()
    }
}

/// Planar RIS. Elements are contiguous squares of side `element_size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RisSpec {
    pub rows: usize,
    pub cols: usize,
    pub element_size: f64,
    pub center: Point3,
    /// Direction of increasing column index.
    #[serde(default = "default_col_axis")]
    pub col_axis: Point3,
    /// Direction of decreasing row index ("up" in the element image).
    #[serde(default = "default_row_axis")]
    pub row_axis: Point3,
}

fn default_col_axis() -> Point3 {
    Point3::Y
}

fn default_row_axis() -> Point3 {
    Point3::Z
}

impl RisSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element centers, row-major.
    pub fn positions(&self) -> Vec<Point3> {
        plane_points(
            self.center,
            self.col_axis,
            self.row_axis,
            self.element_size * self.cols as f64,
            self.element_size * self.rows as f64,
            self.rows,
            self.cols,
        )
    }
}

/// Rectangular ROI plane. The ROI is parallel to the RIS by default (yOz).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSpec {
    pub center: Point3,
    pub width: f64,
    pub height: f64,
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_col_axis")]
    pub width_axis: Point3,
    #[serde(default = "default_row_axis")]
    pub height_axis: Point3,
}

impl RoiSpec {
    /// Side of a (square) voxel, ξ_v. For non-square pixels this is the
    /// side of the square with the same area.
    pub fn pixel_size(&self) -> f64 {
        ((self.width / self.cols as f64) * (self.height / self.rows as f64)).sqrt()
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Geometry and radio parameters of the sensing system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Center-subcarrier wavelength, meters.
    pub wavelength: f64,
    pub tx: UlaSpec,
    pub rx: UlaSpec,
    pub ris: RisSpec,
    pub roi: RoiSpec,
    /// Combined TX/RX antenna gain G_sen (linear).
    #[serde(default = "default_gain")]
    pub antenna_gain: f64,
    /// Transmit power, watts.
    #[serde(default = "default_p_tx")]
    pub p_tx: f64,
    /// Per-antenna noise power, watts.
    #[serde(default = "default_p_noise")]
    pub p_noise: f64,
}

fn default_gain() -> f64 {
    4.0
}

fn default_p_tx() -> f64 {
    1.0
}

fn default_p_noise() -> f64 {
    dbm_to_watts(-110.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn wavelength_for(freq_hz: f64) -> f64 {
    SPEED_OF_LIGHT / freq_hz
}

/// Parameters of the standard layout: TX at `[10λ, 10λ, 0]`, RX at
/// `[10λ, -10λ, 0]`, RIS at the origin in the yOz plane with λ/2 elements,
/// and a square ROI centered at `[D, 0, 0]` parallel to the RIS.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Layout {
    pub wavelength: f64,
    pub tx_elements: usize,
    pub rx_elements: usize,
    pub ris_side: usize,
    pub roi_side: usize,
    /// ROI pixel pitch in wavelengths.
    pub pixel_pitch: f64,
    /// ROI distance D in wavelengths.
    pub distance: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            wavelength: wavelength_for(3e9),
            tx_elements: 8,
            rx_elements: 8,
            ris_side: 50,
            roi_side: 100,
            pixel_pitch: 0.2,
            distance: 40.0,
        }
    }
}

impl Layout {
    pub fn build(&self) -> SystemConfig {
        let lambda = self.wavelength;
        let extent = self.roi_side as f64 * self.pixel_pitch * lambda;
        SystemConfig {
            wavelength: lambda,
            tx: UlaSpec {
                elements: self.tx_elements,
                center: Point3::new(10.0 * lambda, 10.0 * lambda, 0.0),
                axis: Point3::Y,
            },
            rx: UlaSpec {
                elements: self.rx_elements,
                center: Point3::new(10.0 * lambda, -10.0 * lambda, 0.0),
                axis: Point3::Y,
            },
            ris: RisSpec {
                rows: self.ris_side,
                cols: self.ris_side,
                element_size: lambda / 2.0,
                center: Point3::default(),
                col_axis: Point3::Y,
                row_axis: Point3::Z,
            },
            roi: RoiSpec {
                center: Point3::new(self.distance * lambda, 0.0, 0.0),
                width: extent,
                height: extent,
                rows: self.roi_side,
                cols: self.roi_side,
                width_axis: Point3::Y,
                height_axis: Point3::Z,
            },
            antenna_gain: default_gain(),
            p_tx: default_p_tx(),
            p_noise: default_p_noise(),
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("wavelength", self.wavelength)?;
        positive("ris.element_size", self.ris.element_size)?;
        positive("roi.width", self.roi.width)?;
        positive("roi.height", self.roi.height)?;
        positive("antenna_gain", self.antenna_gain)?;
        positive("p_tx", self.p_tx)?;
        if !(self.p_noise >= 0.0) {
            return Err(Error::invalid("p_noise must be non-negative"));
        }
        for (name, n) in [
            ("tx.elements", self.tx.elements),
            ("rx.elements", self.rx.elements),
            ("ris.rows", self.ris.rows),
            ("ris.cols", self.ris.cols),
            ("roi.rows", self.roi.rows),
            ("roi.cols", self.roi.cols),
        ] {
            if n == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn n_tx(&self) -> usize {
        self.tx.elements
    }

    pub fn n_rx(&self) -> usize {
        self.rx.elements
    }

    pub fn n_ris(&self) -> usize {
        self.ris.len()
    }

    pub fn n_pixels(&self) -> usize {
        self.roi.len()
    }

    /// Amplitude factor g_sen = λ √G_sen / √(4π).
    pub fn g_sen(&self) -> f64 {
        self.wavelength * self.antenna_gain.sqrt() / (4.0 * PI).sqrt()
    }

    pub fn sigma_max(&self) -> f64 {
        sigma_max(self.wavelength, self.roi.pixel_size())
    }

    pub fn tx_positions(&self) -> Vec<Point3> {
        self.tx.positions(self.wavelength)
    }

    pub fn rx_positions(&self) -> Vec<Point3> {
        self.rx.positions(self.wavelength)
    }

    pub fn ris_positions(&self) -> Vec<Point3> {
        self.ris.positions()
    }

    /// The ROI grid at its native resolution.
    pub fn grid(&self) -> ImageGrid {
        make_grid(&self.roi, self.roi.rows, self.roi.cols)
            .expect("validated config has a non-degenerate ROI")
    }
}

/// Largest scattering coefficient of a voxel of side `pixel_size`:
/// the RCS `4πA²/λ²` of a flat plate with area `A = ξ_v²`.
pub fn sigma_max(wavelength: f64, pixel_size: f64) -> f64 {
    let area = pixel_size * pixel_size;
    4.0 * PI * area * area / (wavelength * wavelength)
}

/// Sample points of the ROI plane, row-major. Row 0 is the top edge
/// (largest coordinate along the height axis).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub positions: Vec<Point3>,
    pub rows: usize,
    pub cols: usize,
}

impl ImageGrid {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn plane_points(
    center: Point3,
    col_axis: Point3,
    row_axis: Point3,
    width: f64,
    height: f64,
    rows: usize,
    cols: usize,
) -> Vec<Point3> {
    let du = width / cols as f64;
    let dv = height / rows as f64;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let v = (rows as f64 / 2.0 - r as f64 - 0.5) * dv;
        for c in 0..cols {
            let u = (c as f64 + 0.5 - cols as f64 / 2.0) * du;
            out.push(center + col_axis.scale(u) + row_axis.scale(v));
        }
    }
    out
}

/// Uniform grid of pixel centers over the ROI plane with pitch
/// `width / cols` by `height / rows`.
pub fn make_grid(roi: &RoiSpec, rows: usize, cols: usize) -> Result<ImageGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!("grid must be at least 1x1, got {rows}x{cols}")));
    }
    if !(roi.width > 0.0 && roi.height > 0.0) {
        return Err(Error::invalid("ROI extent must be positive"));
    }
    Ok(ImageGrid {
        positions: plane_points(
            roi.center,
            roi.width_axis,
            roi.height_axis,
            roi.width,
            roi.height,
            rows,
            cols,
        ),
        rows,
        cols,
    })
}

/// Ground-truth scattering image over a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub sigma: Vec<f64>,
    pub grid: ImageGrid,
    pub sigma_max: f64,
}

impl Scene {
    pub fn new(sigma: Vec<f64>, grid: ImageGrid, sigma_max: f64) -> Result<Self> {
        if sigma.len() != grid.len() {
            return Err(Error::invalid(format!(
                "scene has {} values for a {}-point grid",
                sigma.len(),
                grid.len()
            )));
        }
        Ok(Self { sigma, grid, sigma_max })
    }

    pub fn zeros(grid: ImageGrid, sigma_max: f64) -> Self {
        Self { sigma: vec![0.0; grid.len()], grid, sigma_max }
    }

    pub fn rows(&self) -> usize {
        self.grid.rows
    }

    pub fn cols(&self) -> usize {
        self.grid.cols
    }

    pub fn occupancy(&self) -> f64 {
        self.sigma.iter().filter(|&&s| s > 0.0).count() as f64 / self.sigma.len() as f64
    }

    /// 8-bit quantization of `sigma / sigma_max`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.sigma
            .iter()
            .map(|&s| {
                let t = if self.sigma_max > 0.0 { s / self.sigma_max } else { 0.0 };
                (t.clamp(0.0, 1.0) * 255.0).round() as u8
            })
            .collect()
    }

    /// Writes a P5 PGM plus a `.txt` sidecar with σ_max and grid metadata.
    pub fn export_pgm(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let path = path.as_ref();
        pgm::write_pgm(path, self.cols(), self.rows(), &self.to_gray8())?;
        let mut side = std::fs::File::create(path.with_extension("txt"))?;
        let first = self.grid.positions.first().copied().unwrap_or_default();
        let last = self.grid.positions.last().copied().unwrap_or_default();
        writeln!(side, "sigma_max = {:e}", self.sigma_max)?;
        writeln!(side, "rows = {}", self.rows())?;
        writeln!(side, "cols = {}", self.cols())?;
        writeln!(side, "first_pixel = [{:e}, {:e}, {:e}]", first.x, first.y, first.z)?;
        writeln!(side, "last_pixel = [{:e}, {:e}, {:e}]", last.x, last.y, last.z)?;
        Ok(())
    }
}

/// Procedural ground-truth scene families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Ellipse,
    Rectangle,
    StickFigure,
    MultiBlob,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] =
        [SceneKind::Ellipse, SceneKind::Rectangle, SceneKind::StickFigure, SceneKind::MultiBlob];

    pub fn name(&self) -> &'static str {
        match self {
            SceneKind::Ellipse => "ellipse",
            SceneKind::Rectangle => "rectangle",
            SceneKind::StickFigure => "stick_figure",
            SceneKind::MultiBlob => "multi_blob",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scene kind `{s}`")))
    }
}

const MIN_OCCUPANCY: f64 = 0.02;

/// Deterministic procedural scene. Shapes are defined in normalized image
/// coordinates, so the same seed yields the same shape at any resolution.
pub fn generate_scene(kind: SceneKind, grid: &ImageGrid, seed: u64, sigma_max: f64) -> Scene {
    let mut rng = rng::stream(seed, Stream::Scene);
    let (rows, cols) = (grid.rows, grid.cols);
    // Strokes stay at least ~1 pixel wide on coarse grids.
    let min_half = 0.6 / rows.min(cols) as f64;
    let mut img = vec![0.0; rows * cols];

    let paint = |img: &mut Vec<f64>, amp: f64, inside: &dyn Fn(f64, f64) -> bool| {
        for r in 0..rows {
            let v = (r as f64 + 0.5) / rows as f64;
            for c in 0..cols {
                let u = (c as f64 + 0.5) / cols as f64;
                if inside(u, v) {
                    let px = &mut img[r * cols + c];
                    *px = px.max(amp);
                }
            }
        }
    };

    let anchor;
    match kind {
        SceneKind::Ellipse => {
            let cu = rng.random_range(0.38..0.62);
            let cv = rng.random_range(0.38..0.62);
            let a = rng.random_range(0.16..0.32);
            let b = rng.random_range(0.16..0.32);
            let theta = rng.random_range(0.0..PI);
            let amp = rng.random_range(0.7..1.0);
            let (s, c) = theta.sin_cos();
            paint(&mut img, amp, &|u, v| {
                let (du, dv) = (u - cu, v - cv);
                let x = c * du + s * dv;
                let y = -s * du + c * dv;
                (x / a).powi(2) + (y / b).powi(2) <= 1.0
            });
            anchor = (cu, cv);
        }
        SceneKind::Rectangle => {
            let w = rng.random_range(0.25..0.55);
            let h = rng.random_range(0.25..0.55);
            let u0 = rng.random_range(0.1..(0.9 - w));
            let v0 = rng.random_range(0.1..(0.9 - h));
            let amp = rng.random_range(0.7..1.0);
            // Snap to whole pixels so the support is an exact index rectangle.
            let c0 = (u0 * cols as f64).floor() as usize;
            let c1 = (((u0 + w) * cols as f64).ceil() as usize).clamp(c0 + 1, cols);
            let r0 = (v0 * rows as f64).floor() as usize;
            let r1 = (((v0 + h) * rows as f64).ceil() as usize).clamp(r0 + 1, rows);
            for r in r0..r1 {
                for c in c0..c1 {
                    img[r * cols + c] = amp;
                }
            }
            anchor = (u0 + w / 2.0, v0 + h / 2.0);
        }
        SceneKind::StickFigure => {
            let mut j = |x: f64| x + rng.random_range(-0.04..0.04);
            let neck = (j(0.5), j(0.32));
            let hip = (j(0.5), j(0.62));
            let head = (neck.0, neck.1 - 0.12);
            let hands = [(j(0.25), j(0.5)), (j(0.75), j(0.5))];
            let feet = [(j(0.35), j(0.9)), (j(0.65), j(0.9))];
            let half = 0.045f64.max(min_half);
            let mut segments = vec![(neck, hip)];
            let shoulder = (neck.0 + 0.25 * (hip.0 - neck.0), neck.1 + 0.25 * (hip.1 - neck.1));
            segments.extend(hands.iter().map(|&h| (shoulder, h)));
            segments.extend(feet.iter().map(|&f| (hip, f)));
            let amp = rng.random_range(0.7..1.0);
            let head_r = 0.09f64.max(min_half);
            paint(&mut img, amp, &|u, v| {
                if (u - head.0).hypot(v - head.1) <= head_r {
                    return true;
                }
                segments.iter().any(|&(a, b)| segment_distance((u, v), a, b) <= half)
            });
            anchor = ((neck.0 + hip.0) / 2.0, (neck.1 + hip.1) / 2.0);
        }
        SceneKind::MultiBlob => {
            let n = rng.random_range(2..=4);
            let mut first = (0.5, 0.5);
            for i in 0..n {
                let cu = rng.random_range(0.2..0.8);
                let cv = rng.random_range(0.2..0.8);
                let a = rng.random_range(0.08..0.18f64).max(min_half);
                let b = rng.random_range(0.08..0.18f64).max(min_half);
                let amp = rng.random_range(0.5..1.0);
                paint(&mut img, amp, &|u, v| ((u - cu) / a).powi(2) + ((v - cv) / b).powi(2) <= 1.0);
                if i == 0 {
                    first = (cu, cv);
                }
            }
            anchor = first;
        }
    }

    let min_count = (MIN_OCCUPANCY * (rows * cols) as f64).ceil() as usize;
    if img.iter().filter(|&&x| x > 0.0).count() < min_count {
        // Coarse grids can miss thin shapes; grow a block around the anchor.
        let ac = ((anchor.0 * cols as f64) as usize).min(cols - 1);
        let ar = ((anchor.1 * rows as f64) as usize).min(rows - 1);
        let amp = img.iter().cloned().fold(0.0, f64::max).max(0.7);
        let mut radius = 0;
        while img.iter().filter(|&&x| x > 0.0).count() < min_count {
            for r in ar.saturating_sub(radius)..=(ar + radius).min(rows - 1) {
                for c in ac.saturating_sub(radius)..=(ac + radius).min(cols - 1) {
                    if img[r * cols + c] == 0.0 {
                        img[r * cols + c] = amp;
                    }
                }
            }
            radius += 1;
        }
    }

    let sigma = img.into_iter().map(|t| (t * sigma_max).clamp(0.0, sigma_max)).collect();
    Scene { sigma, grid: grid.clone(), sigma_max }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Loads a grayscale image (8/16-bit PGM, or PNG) as a scene, mapping
/// intensities linearly from `[0, max_intensity]` onto `[0, sigma_max]`.
///
/// With `resize` set, images whose size differs from the grid are resampled
/// bilinearly; otherwise a size mismatch is an error.
pub fn load_scene_image(
    path: impl AsRef<FsPath>,
    grid: &ImageGrid,
    sigma_max: f64,
    resize: bool,
) -> Result<Scene> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let (width, height, levels) = if bytes.starts_with(b"P5") {
        let img = pgm::parse_pgm(&bytes)?;
        let max = img.maxval as f64;
        let levels: Vec<f64> = img.data.iter().map(|&v| v as f64 / max).collect();
        (img.width, img.height, levels)
    } else {
        let img = image::load_from_memory(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .to_luma16();
        let levels = img.as_raw().iter().map(|&v| v as f64 / u16::MAX as f64).collect();
        (img.width() as usize, img.height() as usize, levels)
    };

    let levels = if (width, height) == (grid.cols, grid.rows) {
        levels
    } else if resize {
        let buf: image::ImageBuffer<image::Luma<f32>, Vec<f32>> = image::ImageBuffer::from_raw(
            width as u32,
            height as u32,
            levels.iter().map(|&v| v as f32).collect(),
        )
        .ok_or_else(|| Error::Format("image buffer size mismatch".into()))?;
        let out = image::imageops::resize(
            &buf,
            grid.cols as u32,
            grid.rows as u32,
            image::imageops::FilterType::Triangle,
        );
        out.into_raw().into_iter().map(|v| (v as f64).clamp(0.0, 1.0)).collect()
    } else {
        return Err(Error::invalid(format!(
            "image is {width}x{height} but grid is {}x{} (enable resize to resample)",
            grid.cols, grid.rows
        )));
    };

    Ok(Scene {
        sigma: levels.into_iter().map(|t| t * sigma_max).collect(),
        grid: grid.clone(),
        sigma_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square_roi(center: Point3, side: f64) -> RoiSpec {
        RoiSpec {
            center,
            width: side,
            height: side,
            rows: 8,
            cols: 8,
            width_axis: Point3::Y,
            height_axis: Point3::Z,
        }
    }

    #[test]
    fn full_scale_grid() {
        let cfg = Layout::default().build();
        let g = cfg.grid();
        assert_eq!(g.len(), 10_000);
        let pitch = g.positions[0].distance(&g.positions[1]);
        assert!((pitch - cfg.wavelength / 5.0).abs() < 1e-12);
        assert!((cfg.roi.width - 100.0 * cfg.wavelength / 5.0).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_grid_is_center() {
        let roi = square_roi(Point3::new(4.0, 0.1, -0.2), 0.5);
        let g = make_grid(&roi, 1, 1).unwrap();
        assert_eq!(g.positions, vec![roi.center]);
    }

    #[test]
    fn eight_by_eight_corners() {
        let roi = square_roi(Point3::new(2.0, 0.0, 0.0), 0.8);
        let g = make_grid(&roi, 8, 8).unwrap();
        // independent loop over pixel centers
        for r in 0..8 {
            for c in 0..8 {
                let y = -0.4 + 0.05 + 0.1 * c as f64;
                let z = 0.4 - 0.05 - 0.1 * r as f64;
                let p = g.positions[r * 8 + c];
                assert!((p.x - 2.0).abs() < 1e-12);
                assert!((p.y - y).abs() < 1e-12, "{r},{c}");
                assert!((p.z - z).abs() < 1e-12, "{r},{c}");
            }
        }
        assert!((g.positions[0].y + 0.35).abs() < 1e-12);
        assert!((g.positions[0].z - 0.35).abs() < 1e-12);
        assert!((g.positions[63].y - 0.35).abs() < 1e-12);
        assert!((g.positions[63].z + 0.35).abs() < 1e-12);
    }

    #[test]
    fn zero_dimension_grid_rejected() {
        let roi = square_roi(Point3::default(), 1.0);
        assert!(matches!(make_grid(&roi, 0, 4), Err(Error::InvalidArgument(_))));
        let mut flat = roi.clone();
        flat.width = 0.0;
        assert!(matches!(make_grid(&flat, 4, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sigma_max_values() {
        assert!((sigma_max(1.0, 0.2) - 0.020_106_192_982_974_676).abs() < 1e-15);
        assert_eq!(sigma_max(1.0, 0.0), 0.0);
        assert!((sigma_max(2.0, 1.0) - PI).abs() < 1e-15);
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let g = make_grid(&square_roi(Point3::default(), 1.0), 32, 32).unwrap();
        let a = generate_scene(SceneKind::Ellipse, &g, 7, 1.0);
        let b = generate_scene(SceneKind::Ellipse, &g, 7, 1.0);
        assert_eq!(a.sigma, b.sigma);
        let c = generate_scene(SceneKind::Ellipse, &g, 8, 1.0);
        assert_ne!(a.sigma, c.sigma);
    }

    #[test]
    fn rectangle_support_is_filled_box() {
        for seed in 0..20 {
            for (rows, cols) in [(8, 8), (16, 24), (32, 32)] {
                let mut roi = square_roi(Point3::default(), 1.0);
                roi.rows = rows;
                roi.cols = cols;
                let g = make_grid(&roi, rows, cols).unwrap();
                let s = generate_scene(SceneKind::Rectangle, &g, seed, 2.0);
                let on: Vec<(usize, usize)> = (0..rows * cols)
                    .filter(|&i| s.sigma[i] > 0.0)
                    .map(|i| (i / cols, i % cols))
                    .collect();
                let r0 = on.iter().map(|p| p.0).min().unwrap();
                let r1 = on.iter().map(|p| p.0).max().unwrap();
                let c0 = on.iter().map(|p| p.1).min().unwrap();
                let c1 = on.iter().map(|p| p.1).max().unwrap();
                assert_eq!(on.len(), (r1 - r0 + 1) * (c1 - c0 + 1));
            }
        }
    }

    #[test]
    fn multi_blob_occupancy() {
        let g = make_grid(&square_roi(Point3::default(), 1.0), 32, 32).unwrap();
        let s = generate_scene(SceneKind::MultiBlob, &g, 3, 1.0);
        let occ = s.occupancy();
        assert!((0.02..=0.6).contains(&occ), "{occ}");
    }

    #[test]
    fn occupancy_bounds_all_kinds() {
        for side in [8, 13, 32, 64] {
            let mut roi = square_roi(Point3::default(), 1.0);
            roi.rows = side;
            roi.cols = side;
            let g = make_grid(&roi, side, side).unwrap();
            for kind in SceneKind::ALL {
                for seed in 0..50 {
                    let occ = generate_scene(kind, &g, seed, 1.0).occupancy();
                    assert!((0.02..=0.6).contains(&occ), "{kind} {side} {seed}: {occ}");
                }
            }
        }
    }

    #[test]
    fn scene_values_bounded_over_many_seeds() {
        let g = make_grid(&square_roi(Point3::default(), 1.0), 16, 16).unwrap();
        let smax = sigma_max(0.1, 0.02);
        for seed in 0..1000u64 {
            let kind = SceneKind::ALL[(seed % 4) as usize];
            let s = generate_scene(kind, &g, seed, smax);
            assert!(s.sigma.iter().all(|&v| (0.0..=smax).contains(&v)));
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(matches!("triangle".parse::<SceneKind>(), Err(Error::InvalidArgument(_))));
        assert_eq!("stick_figure".parse::<SceneKind>().unwrap(), SceneKind::StickFigure);
    }

    #[test]
    fn image_loading_linear_map() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(&square_roi(Point3::default(), 1.0), 4, 4).unwrap();
        let smax = 3.0;

        let black = dir.path().join("black.pgm");
        pgm::write_pgm(&black, 4, 4, &[0; 16]).unwrap();
        assert!(load_scene_image(&black, &g, smax, false).unwrap().sigma.iter().all(|&v| v == 0.0));

        let white = dir.path().join("white.pgm");
        pgm::write_pgm(&white, 4, 4, &[255; 16]).unwrap();
        assert!(load_scene_image(&white, &g, smax, false).unwrap().sigma.iter().all(|&v| v == smax));

        let two = dir.path().join("two.pgm");
        let data: Vec<u8> = (0..16).map(|i| if i % 3 == 0 { 128 } else { 0 }).collect();
        pgm::write_pgm(&two, 4, 4, &data).unwrap();
        let s = load_scene_image(&two, &g, smax, false).unwrap();
        for (v, d) in s.sigma.iter().zip(&data) {
            let expect = if *d == 128 { smax * 128.0 / 255.0 } else { 0.0 };
            assert_eq!(*v, expect);
        }
    }

    #[test]
    fn image_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(&square_roi(Point3::default(), 1.0), 4, 4).unwrap();
        let p = dir.path().join("big.pgm");
        pgm::write_pgm(&p, 8, 8, &[200; 64]).unwrap();
        assert!(matches!(load_scene_image(&p, &g, 1.0, false), Err(Error::InvalidArgument(_))));
        let s = load_scene_image(&p, &g, 1.0, true).unwrap();
        for v in s.sigma {
            assert!((v - 200.0 / 255.0).abs() < 1e-6);
        }
        assert!(matches!(
            load_scene_image(dir.path().join("missing.pgm"), &g, 1.0, false),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn png_loading() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(&square_roi(Point3::default(), 1.0), 2, 2).unwrap();
        let p = dir.path().join("x.png");
        image::GrayImage::from_raw(2, 2, vec![0, 128, 255, 0]).unwrap().save(&p).unwrap();
        let s = load_scene_image(&p, &g, 1.0, false).unwrap();
        assert_eq!(s.sigma, vec![0.0, 128.0 / 255.0, 1.0, 0.0]);
    }

    #[test]
    fn export_roundtrip_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(&square_roi(Point3::default(), 1.0), 8, 8).unwrap();
        let s = generate_scene(SceneKind::Ellipse, &g, 1, 0.5);
        let p = dir.path().join("scene.pgm");
        s.export_pgm(&p).unwrap();
        let back = load_scene_image(&p, &g, 0.5, false).unwrap();
        for (a, b) in back.sigma.iter().zip(&s.sigma) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
        let side = std::fs::read_to_string(dir.path().join("scene.txt")).unwrap();
        assert!(side.contains("sigma_max = 5e-1"));
        assert!(side.contains("rows = 8"));
    }

    proptest! {
        #[test]
        fn grid_translation_equivariant(
            dx in -10.0..10.0f64, dy in -10.0..10.0f64, dz in -10.0..10.0f64,
            rows in 1usize..12, cols in 1usize..12,
        ) {
            let roi = square_roi(Point3::new(3.0, 0.5, -0.25), 0.7);
            let mut moved = roi.clone();
            let shift = Point3::new(dx, dy, dz);
            moved.center = roi.center + shift;
            let a = make_grid(&roi, rows, cols).unwrap();
            let b = make_grid(&moved, rows, cols).unwrap();
            for (p, q) in a.positions.iter().zip(&b.positions) {
                let d = *q - *p - shift;
                prop_assert!(d.norm() < 1e-12);
            }
        }

        #[test]
        fn pitch_times_count_is_extent(w in 0.01..5.0f64, h in 0.01..5.0f64, rows in 2usize..64, cols in 2usize..64) {
            let mut roi = square_roi(Point3::default(), 1.0);
            roi.width = w;
            roi.height = h;
            let g = make_grid(&roi, rows, cols).unwrap();
            let du = g.positions[0].distance(&g.positions[1]);
            let dv = g.positions[0].distance(&g.positions[cols]);
            prop_assert!(((du * cols as f64) - w).abs() / w < 1e-9);
            prop_assert!(((dv * rows as f64) - h).abs() / h < 1e-9);
        }
    }
}
