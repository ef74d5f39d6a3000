//! Seeded foreground/background segmentation weights for grayscale images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::GrayImage;
use crate::graph::{CutWeightField, EdgeKind};

/// Terminal weight on the side a seeded pixel should leave.
pub const SEED_EPSILON: f64 = 1e-3;
/// Terminal weight on both sides of an unseeded pixel.
pub const NEUTRAL_TERMINAL: f64 = 1.0;

fn default_sigma() -> f64 {
    0.1
}

fn default_lambda_n() -> f64 {
    1.0
}

fn default_seed_weight() -> f64 {
    10.0
}

/// Seed pixels as `[row, col]` pairs plus the weight heuristic's parameters.
/// Intensities are scaled to `[0, 1]` before `sigma` applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    #[serde(default)]
    pub foreground: Vec<[usize; 2]>,
    #[serde(default)]
    pub background: Vec<[usize; 2]>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_lambda_n")]
    pub lambda_n: f64,
    #[serde(default = "default_seed_weight")]
    pub seed_weight: f64,
}

impl Default for SeedSpec {
    fn default() -> Self {
        Self {
            foreground: Vec::new(),
            background: Vec::new(),
            sigma: default_sigma(),
            lambda_n: default_lambda_n(),
            seed_weight: default_seed_weight(),
        }
    }
}

impl SeedSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for &[r, c] in self.foreground.iter().chain(&self.background) {
            if r >= height || c >= width {
                return Err(Error::InvalidArgument(format!("seed ({r}, {c}) outside {height}x{width} image")));
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", self.sigma)));
        }
        for (name, v) in [("lambda_n", self.lambda_n), ("seed_weight", self.seed_weight)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Nonnegative cut weights for `img`: neighbor weights
/// `λ_n·exp(−(I_u − I_v)²/(2σ²))`, strong terminals on seeds pulling
/// foreground to the source side and background to the terminal side, and
/// equal neutral terminals elsewhere.
pub fn seeded_weights(img: &GrayImage, seeds: &SeedSpec) -> Result<CutWeightField> {
    seeds.validate(img.height, img.width)?;
    let (h, w) = (img.height, img.width);
    let intensity = img.intensities();
    let similarity = |a: usize, b: usize| {
        let d = intensity[a] - intensity[b];
        seeds.lambda_n * (-d * d / (2.0 * seeds.sigma * seeds.sigma)).exp()
    };
    let mut field = CutWeightField::from_fn(h, w, |kind, r, c| {
        let p = r * w + c;
        match kind {
            EdgeKind::East if c + 1 < w => similarity(p, p + 1),
            EdgeKind::West if c > 0 => similarity(p, p - 1),
            EdgeKind::North if r > 0 => similarity(p, p - w),
            EdgeKind::South if r + 1 < h => similarity(p, p + w),
            EdgeKind::FromSource | EdgeKind::ToTerminal => NEUTRAL_TERMINAL,
            _ => 0.0,
        }
    });
    for &[r, c] in &seeds.foreground {
        field.set(EdgeKind::FromSource, r, c, seeds.seed_weight);
        field.set(EdgeKind::ToTerminal, r, c, SEED_EPSILON);
    }
    for &[r, c] in &seeds.background {
        field.set(EdgeKind::FromSource, r, c, SEED_EPSILON);
        field.set(EdgeKind::ToTerminal, r, c, seeds.seed_weight);
    }
    Ok(field)
}
