//! Run configuration files.
//!
//! A config is TOML with one section per stage:
//!
//! ```toml
//! seed = 7
//!
//! [scene]
//! wavelength = 0.0999   # required
//! roi_side = 32
//! target = "ellipse"
//!
//! [channel]
//! configurations = 24
//!
//! [inr]
//! hidden_width = 64
//! ```
//!
//! Unknown keys are errors. Missing keys take the defaults of the
//! corresponding library type. A run manifest is also accepted, in which
//! case its embedded config snapshot is used.

use std::path::{Path, PathBuf};

use ris_inr::baselines::CsConfig;
use ris_inr::channel::CodebookKind;
use ris_inr::experiment::Setup;
use ris_inr::scene::Layout;
use ris_inr::{ModelSpec, NoiseModel, PathMask, SceneKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; `--seed` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub scene: SceneSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub forward: NoiseModel,
    #[serde(default)]
    pub inr: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub baselines: CsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    /// Meters.
    pub wavelength: f64,
    #[serde(default = "defaults::tx_elements")]
    pub tx_elements: usize,
    #[serde(default = "defaults::rx_elements")]
    pub rx_elements: usize,
    #[serde(default = "defaults::ris_side")]
    pub ris_side: usize,
    #[serde(default = "defaults::roi_side")]
    pub roi_side: usize,
    /// In wavelengths.
    #[serde(default = "defaults::pixel_pitch")]
    pub pixel_pitch: f64,
    /// ROI distance from the RIS in wavelengths.
    #[serde(default = "defaults::distance")]
    pub distance: f64,
    #[serde(default = "defaults::target")]
    pub target: SceneKind,
    /// Grayscale PGM or PNG used instead of the procedural target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    /// Resample `image` to the ROI grid when the sizes differ.
    #[serde(default)]
    pub resize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub configurations: usize,
    pub codebook: CodebookKind,
    pub data_paths: PathMask,
    pub inversion_paths: PathMask,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { configurations: 24, codebook: CodebookKind::Random, data_paths: PathMask::ALL, inversion_paths: PathMask::ALL }
    }
}

mod defaults {
    use super::*;

    pub fn tx_elements() -> usize {
        Layout::default().tx_elements
    }
    pub fn rx_elements() -> usize {
        Layout::default().rx_elements
    }
    pub fn ris_side() -> usize {
        Layout::default().ris_side
    }
    pub fn roi_side() -> usize {
        Layout::default().roi_side
    }
    pub fn pixel_pitch() -> f64 {
        Layout::default().pixel_pitch
    }
    pub fn distance() -> f64 {
        Layout::default().distance
    }
    pub fn target() -> SceneKind {
        SceneKind::Ellipse
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg: RunConfig = if table.contains_key("command") && table.contains_key("config") {
            let m: RunManifest = toml::from_str(text).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
            m.config
        } else {
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        };
        cfg.to_setup().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads and validates a config. A relative `scene.image` is resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(img) = &cfg.scene.image {
            if img.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.scene.image = Some(base.join(img));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn layout(&self) -> Layout {
        let s = &self.scene;
        Layout {
            wavelength: s.wavelength,
            tx_elements: s.tx_elements,
            rx_elements: s.rx_elements,
            ris_side: s.ris_side,
            roi_side: s.roi_side,
            pixel_pitch: s.pixel_pitch,
            distance: s.distance,
        }
    }

    pub fn to_setup(&self) -> Setup {
        Setup {
            layout: self.layout(),
            configurations: self.channel.configurations,
            codebook: self.channel.codebook,
            data_paths: self.channel.data_paths,
            inversion_paths: self.channel.inversion_paths,
            noise: self.forward.clone(),
            model: self.inr.clone(),
            train: self.train.clone(),
            baseline: self.baselines.clone(),
            scenes: vec![self.scene.target],
        }
    }

    /// Inverse of [`RunConfig::to_setup`] for the first scene family.
    pub fn from_setup(setup: &Setup, seed: Option<u64>) -> Self {
        let l = setup.layout;
        Self {
            seed,
            scene: SceneSection {
                wavelength: l.wavelength,
                tx_elements: l.tx_elements,
                rx_elements: l.rx_elements,
                ris_side: l.ris_side,
                roi_side: l.roi_side,
                pixel_pitch: l.pixel_pitch,
                distance: l.distance,
                target: setup.scenes.first().copied().unwrap_or(SceneKind::Ellipse),
                image: None,
                resize: false,
            },
            channel: ChannelSection {
                configurations: setup.configurations,
                codebook: setup.codebook,
                data_paths: setup.data_paths,
                inversion_paths: setup.inversion_paths,
            },
            forward: setup.noise.clone(),
            inr: setup.model.clone(),
            train: setup.train.clone(),
            baselines: setup.baseline.clone(),
        }
    }
}
