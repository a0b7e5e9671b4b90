//! Synthetic unpaired rain-streak data.
//!
//! Clean patches are smooth fields built from a handful of Gaussian bumps.
//! Weather patches add oriented streaks on top: `clamp(clean + streaks, 0, 1)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Clean,
    Weather,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Clean => "clean",
            Domain::Weather => "weather",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Domain::Clean),
            "weather" => Ok(Domain::Weather),
            other => Err(Error::InvalidConfig(format!(
                "unknown domain tag `{other}`"
            ))),
        }
    }
}

/// Grayscale image with pixels in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub domain: Domain,
}

impl Patch {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, domain: Domain) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape(width * height, pixels.len()));
        }
        Ok(Patch {
            width,
            height,
            pixels,
            domain,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64, domain: Domain) -> Self {
        Patch {
            width,
            height,
            pixels: vec![value; width * height],
            domain,
        }
    }

    /// Builds a patch from network output, clamping into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, values: &[f64], domain: Domain) -> Self {
        Patch {
            width,
            height,
            pixels: values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            domain,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Patch) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Smooth clean fields: 3 to 6 Gaussian bumps each, min-max normalized.
pub fn make_clean(seed: u64, n: usize, width: usize, height: usize) -> Vec<Patch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| clean_patch(&mut rng, width, height))
        .collect()
}

fn clean_patch(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Patch {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(3..=6))
        .map(|_| {
            let cx = rng.gen_range(0.0..width as f64);
            let cy = rng.gen_range(0.0..height as f64);
            let sigma = rng.gen_range(0.1..0.3) * width.max(height) as f64;
            let amp = rng.gen_range(0.3..1.0);
            (cx, cy, sigma, amp)
        })
        .collect();
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let v: f64 = bumps
                .iter()
                .map(|&(cx, cy, s, a)| {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    a * (-d2 / (2.0 * s * s)).exp()
                })
                .sum();
            pixels.push(v);
        }
    }
    let lo = pixels.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for p in &mut pixels {
        *p = if span > 0.0 { (*p - lo) / span } else { 0.0 };
    }
    Patch {
        width,
        height,
        pixels,
        domain: Domain::Clean,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradeSpec {
    pub streak_count: usize,
    pub streak_amplitude: f64,
    /// Orientation of the streaks in radians, measured from the x axis.
    pub streak_angle: f64,
    /// Full width of a streak in pixels.
    pub streak_width: f64,
    pub seed: u64,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        DegradeSpec {
            streak_count: 4,
            streak_amplitude: 0.3,
            streak_angle: 1.3,
            streak_width: 4.0,
            seed: 0,
        }
    }
}

impl DegradeSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        DegradeSpec {
            seed,
            ..self.clone()
        }
    }
}

/// Non-negative streak layer for a `width x height` patch. Each streak is a
/// straight line crossing the whole patch at a random offset from its centre.
pub fn streak_field(spec: &DegradeSpec, width: usize, height: usize) -> Vec<f64> {
    let mut field = vec![0.0; width * height];
    if spec.streak_amplitude == 0.0 {
        return field;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (dx, dy) = (spec.streak_angle.cos(), spec.streak_angle.sin());
    let half_w = 0.5 * spec.streak_width;
    let reach = 0.5 * ((width * width + height * height) as f64).sqrt();
    let (cx, cy) = (0.5 * width as f64, 0.5 * height as f64);
    for _ in 0..spec.streak_count {
        let offset = rng.gen_range(-reach..reach);
        for y in 0..height {
            for x in 0..width {
                let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let across = (-px * dy + py * dx - offset).abs();
                // One pixel of linear falloff at the edge.
                let cover = (half_w + 0.5 - across).clamp(0.0, 1.0);
                field[y * width + x] += spec.streak_amplitude * cover;
            }
        }
    }
    field
}

/// Additive streak degradation, clamped into `[0, 1]`.
pub fn degrade(p: &Patch, spec: &DegradeSpec) -> Patch {
    let field = streak_field(spec, p.width, p.height);
    Patch {
        width: p.width,
        height: p.height,
        pixels: p
            .pixels
            .iter()
            .zip(&field)
            .map(|(a, b)| (a + b).clamp(0.0, 1.0))
            .collect(),
        domain: Domain::Weather,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub train_per_domain: usize,
    pub test_pairs: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub degrade: DegradeSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            train_per_domain: 200,
            test_pairs: 50,
            width: 32,
            height: 32,
            seed: 1,
            degrade: DegradeSpec::default(),
        }
    }
}

/// Unpaired training sets plus a paired held-out test set.
#[derive(Debug, Clone)]
pub struct UnpairedDataset {
    pub clean: Vec<Patch>,
    pub weather: Vec<Patch>,
    pub test_weather: Vec<Patch>,
    pub test_clean: Vec<Patch>,
}

// Independent streams for the three image sources and the streak seeds.
const CLEAN_STREAM: u64 = 0x0001_0000;
const WEATHER_STREAM: u64 = 0x0002_0000;
const TEST_STREAM: u64 = 0x0003_0000;

impl UnpairedDataset {
    /// The weather set degrades clean fields from a seed stream disjoint from
    /// the clean training set, so no training pair exists.
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        if spec.train_per_domain == 0 {
            return Err(Error::EmptyDataset);
        }
        let (w, h) = (spec.width, spec.height);
        let base = spec.seed.wrapping_mul(0x9E37_79B9);
        let clean = make_clean(base ^ CLEAN_STREAM, spec.train_per_domain, w, h);
        let weather = make_clean(base ^ WEATHER_STREAM, spec.train_per_domain, w, h)
            .iter()
            .enumerate()
            .map(|(i, p)| degrade(p, &spec.degrade.with_seed(streak_seed(spec, 1, i))))
            .collect();
        let test_clean = make_clean(base ^ TEST_STREAM, spec.test_pairs, w, h);
        let test_weather = test_clean
            .iter()
            .enumerate()
            .map(|(i, p)| degrade(p, &spec.degrade.with_seed(streak_seed(spec, 2, i))))
            .collect();
        Ok(UnpairedDataset {
            clean,
            weather,
            test_weather,
            test_clean,
        })
    }
}

fn streak_seed(spec: &DatasetSpec, stream: u64, index: usize) -> u64 {
    spec.degrade
        .seed
        .wrapping_add(spec.seed << 32)
        .wrapping_add(stream << 24)
        .wrapping_add(index as u64)
}
