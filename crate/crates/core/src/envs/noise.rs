use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    None,
    Gaussian,
    Uniform,
    PoissonCentered,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Uniform => "uniform",
            NoiseKind::PoissonCentered => "poisson",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Additive environmental noise.
///
/// `scale` is the standard deviation for gaussian noise, the half-width for uniform noise
/// and the rate for centered Poisson noise (`draw − rate + mean`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub mean: f64,
    pub scale: f64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        kind: NoiseKind::None,
        mean: 0.0,
        scale: 0.0,
    };

    pub fn new(kind: NoiseKind, mean: f64, scale: f64) -> Result<Self> {
        let spec = NoiseSpec { kind, mean, scale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(mean: f64, std_dev: f64) -> Result<Self> {
        Self::new(NoiseKind::Gaussian, mean, std_dev)
    }

    /// Gaussian noise given by mean and variance.
    pub fn gaussian_var(mean: f64, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) {
            return Err(Error::InvalidNoise(format!(
                "variance {variance} must be >= 0"
            )));
        }
        Self::gaussian(mean, variance.sqrt())
    }

    pub fn uniform(mean: f64, half_width: f64) -> Result<Self> {
        Self::new(NoiseKind::Uniform, mean, half_width)
    }

    pub fn poisson_centered(mean: f64, rate: f64) -> Result<Self> {
        Self::new(NoiseKind::PoissonCentered, mean, rate)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() || !self.scale.is_finite() {
            return Err(Error::InvalidNoise("mean and scale must be finite".into()));
        }
        if self.scale < 0.0 {
            return Err(Error::InvalidNoise(format!(
                "scale {} must be >= 0",
                self.scale
            )));
        }
        if self.kind == NoiseKind::None && (self.mean != 0.0 || self.scale != 0.0) {
            return Err(Error::InvalidNoise(
                "kind none requires mean = 0 and scale = 0".into(),
            ));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Gaussian => self.scale * self.scale,
            NoiseKind::Uniform => self.scale * self.scale / 3.0,
            NoiseKind::PoissonCentered => self.scale,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mean == 0.0 && self.variance() == 0.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Gaussian => {
                if self.scale == 0.0 {
                    self.mean
                } else {
                    Normal::new(self.mean, self.scale)
                        .expect("validated scale")
                        .sample(rng)
                }
            }
            NoiseKind::Uniform => self.mean + self.scale * (2.0 * rng.random::<f64>() - 1.0),
            NoiseKind::PoissonCentered => {
                if self.scale == 0.0 {
                    self.mean
                } else {
                    let draw: f64 = Poisson::new(self.scale)
                        .expect("validated rate")
                        .sample(rng);
                    draw - self.scale + self.mean
                }
            }
        }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::NONE
    }
}

/// Text form used in configs: `none`, `gaussian(mean, variance)`, `uniform(mean, half_width)`,
/// `poisson(mean, rate)`.
impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NoiseKind::None => f.write_str("none"),
            NoiseKind::Gaussian => write!(f, "gaussian({}, {})", self.mean, self.variance()),
            NoiseKind::Uniform => write!(f, "uniform({}, {})", self.mean, self.scale),
            NoiseKind::PoissonCentered => write!(f, "poisson({}, {})", self.mean, self.scale),
        }
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(Self::NONE);
        }
        let open = s
            .find('(')
            .ok_or_else(|| Error::InvalidNoise(format!("cannot parse '{s}'")))?;
        if !s.ends_with(')') {
            return Err(Error::InvalidNoise(format!("missing ')' in '{s}'")));
        }
        let name = s[..open].trim().to_ascii_lowercase();
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidNoise(format!("bad number in '{s}': {e}")))?;
        if args.len() != 2 {
            return Err(Error::InvalidNoise(format!(
                "'{s}' needs exactly two arguments"
            )));
        }
        match name.as_str() {
            "gaussian" | "normal" => Self::gaussian_var(args[0], args[1]),
            "uniform" => Self::uniform(args[0], args[1]),
            "poisson" => Self::poisson_centered(args[0], args[1]),
            other => Err(Error::InvalidNoise(format!("unknown noise kind '{other}'"))),
        }
    }
}
