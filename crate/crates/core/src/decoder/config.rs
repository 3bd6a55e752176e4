use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph_conv::GraphConvVariant;
use crate::ops::spatial::UpsampleMode;

/// How the upsampled decoder path is merged with a skip connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Add,
    Concat,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Add => "add",
            Aggregation::Concat => "concat",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "add" | "addition" => Ok(Aggregation::Add),
            "concat" | "cat" => Ok(Aggregation::Concat),
            o => Err(Error::InvalidArgument(format!(
                "unknown aggregation '{o}' (add|concat)"
            ))),
        }
    }
}

/// Order of the two attention stages inside a GCAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GcamOrder {
    #[default]
    GcbThenSpa,
    SpaThenGcb,
}

impl fmt::Display for GcamOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GcamOrder::GcbThenSpa => "gcb-spa",
            GcamOrder::SpaThenGcb => "spa-gcb",
        })
    }
}

impl FromStr for GcamOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcb-spa" => Ok(GcamOrder::GcbThenSpa),
            "spa-gcb" => Ok(GcamOrder::SpaThenGcb),
            o => Err(Error::InvalidArgument(format!(
                "unknown gcam order '{o}' (gcb-spa|spa-gcb)"
            ))),
        }
    }
}

impl fmt::Display for UpsampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Bilinear => "bilinear",
        })
    }
}

impl FromStr for UpsampleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(UpsampleMode::Nearest),
            "bilinear" => Ok(UpsampleMode::Bilinear),
            o => Err(Error::InvalidArgument(format!(
                "unknown upsample mode '{o}' (nearest|bilinear)"
            ))),
        }
    }
}

/// Architecture hyperparameters. Per-stage arrays are ordered from the
/// lowest-resolution stage (4) to the highest (1).
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub stage_channels: [usize; 4],
    pub k: usize,
    pub dilations: [usize; 4],
    pub reductions: [usize; 4],
    pub variant: GraphConvVariant,
    pub aggregation: Aggregation,
    pub classes: usize,
    pub spa_kernel: usize,
    /// Weights of p1..p4 in the output aggregate.
    pub head_weights: [f64; 4],
    pub upsample: UpsampleMode,
    pub use_gcb: bool,
    pub use_spa: bool,
    pub gcam_order: GcamOrder,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            stage_channels: [512, 320, 128, 64],
            k: 11,
            dilations: [1; 4],
            reductions: [1, 1, 4, 2],
            variant: GraphConvVariant::MaxRelative,
            aggregation: Aggregation::Add,
            classes: 9,
            spa_kernel: 7,
            head_weights: [1.0; 4],
            upsample: UpsampleMode::Nearest,
            use_gcb: true,
            use_spa: true,
            gcam_order: GcamOrder::GcbThenSpa,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.stage_channels;
        if c.contains(&0) || !c.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument(format!(
                "stage_channels {c:?} must be positive and strictly decreasing toward higher resolution"
            )));
        }
        if self.classes == 0 {
            return Err(Error::InvalidArgument("classes must be >= 1".into()));
        }
        if self.k == 0 || self.dilations.contains(&0) || self.reductions.contains(&0) {
            return Err(Error::InvalidArgument(
                "k, dilations and reductions must be >= 1".into(),
            ));
        }
        if self.spa_kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "spa_kernel {} must be odd",
                self.spa_kernel
            )));
        }
        Ok(())
    }

    /// Width of the GCAM at pyramid stage `stage` (1..=4).
    pub fn gcam_channels(&self, stage: usize) -> usize {
        let c = self.stage_channels[4 - stage];
        match self.aggregation {
            Aggregation::Concat if stage < 4 => 2 * c,
            _ => c,
        }
    }

    pub fn channels(&self, stage: usize) -> usize {
        self.stage_channels[4 - stage]
    }

    pub fn reduction(&self, stage: usize) -> usize {
        self.reductions[4 - stage]
    }

    pub fn dilation(&self, stage: usize) -> usize {
        self.dilations[4 - stage]
    }

    /// Expected `(c, h, w)` of pyramid feature `X{stage}` for an input of
    /// `input_hw`.
    pub fn feature_dims(&self, stage: usize, input_hw: (usize, usize)) -> (usize, usize, usize) {
        let s = 1usize << (stage + 1);
        (self.channels(stage), input_hw.0 / s, input_hw.1 / s)
    }
}
