use std::fmt;
use std::str::FromStr;

use super::CodecError;
use crate::entropy::DEFAULT_SUPPORT_BOUND;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodecKind {
    Factorized,
    Hyperprior,
}

impl CodecKind {
    pub fn to_u8(self) -> u8 {
        match self {
            CodecKind::Factorized => 0,
            CodecKind::Hyperprior => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(CodecKind::Factorized),
            1 => Some(CodecKind::Hyperprior),
            _ => None,
        }
    }

    /// Spatial downsampling between the image and the deepest latent.
    pub fn downsampling(self) -> usize {
        match self {
            CodecKind::Factorized => 16,
            CodecKind::Hyperprior => 64,
        }
    }
}

impl fmt::Display for CodecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodecKind::Factorized => "factorized",
            CodecKind::Hyperprior => "hyper",
        })
    }
}

impl FromStr for CodecKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "factorized" => Ok(CodecKind::Factorized),
            "hyper" | "hyperprior" => Ok(CodecKind::Hyperprior),
            _ => Err(format!("unknown codec '{s}' (expected factorized|hyper)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Gdn,
    OneDn,
}

impl Activation {
    pub fn to_u8(self) -> u8 {
        match self {
            Activation::Gdn => 0,
            Activation::OneDn => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Activation::Gdn),
            1 => Some(Activation::OneDn),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Gdn => "gdn",
            Activation::OneDn => "1dn",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gdn" => Ok(Activation::Gdn),
            "1dn" | "onedn" => Ok(Activation::OneDn),
            _ => Err(format!("unknown activation '{s}' (expected gdn|1dn)")),
        }
    }
}

/// Model hyper-parameters plus the frame geometry a codec instance accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecConfig {
    pub kind: CodecKind,
    pub activation: Activation,
    /// Transform (convolution) channels.
    pub n: usize,
    /// Bottleneck (latent) channels.
    pub m: usize,
    pub height: usize,
    pub width: usize,
    pub bound: i32,
}

impl CodecConfig {
    pub fn new(kind: CodecKind, activation: Activation, height: usize, width: usize) -> Self {
        CodecConfig {
            kind,
            activation,
            n: 128,
            m: 192,
            height,
            width,
            bound: DEFAULT_SUPPORT_BOUND,
        }
    }

    pub fn with_channels(mut self, n: usize, m: usize) -> Self {
        self.n = n;
        self.m = m;
        self
    }

    pub fn with_geometry(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    /// Checks the model dimensions only.
    pub fn validate_model(&self) -> Result<(), CodecError> {
        let u16_range = 1..=u16::MAX as usize;
        if !u16_range.contains(&self.n) || !u16_range.contains(&self.m) {
            return Err(CodecError::Config(format!(
                "channel counts N={} M={} must be in 1..=65535",
                self.n, self.m
            )));
        }
        if !(1..=4096).contains(&self.bound) {
            return Err(CodecError::Config(format!(
                "support bound {} must be in 1..=4096",
                self.bound
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        self.validate_model()?;
        let f = self.kind.downsampling();
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(f)
            || !self.width.is_multiple_of(f)
            || self.height > u16::MAX as usize
            || self.width > u16::MAX as usize
        {
            return Err(CodecError::Config(format!(
                "geometry {}x{} must be positive multiples of {f} for the {} codec",
                self.width, self.height, self.kind
            )));
        }
        Ok(())
    }

    /// `(channels, height, width)` of the main latent `y`.
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        (self.m, self.height / 16, self.width / 16)
    }

    /// `(channels, height, width)` of the side latent `z`.
    pub fn hyper_latent_shape(&self) -> (usize, usize, usize) {
        (self.n, self.height / 64, self.width / 64)
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (3, self.height, self.width)
    }
}
