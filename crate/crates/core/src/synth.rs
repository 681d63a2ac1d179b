//! Synthetic pulse-like signals whose shape encodes a scalar label.
//!
//! A clean signal of length `L` (time index `t = 0..L`) is the sum of two
//! Gaussian lobes. With `frac = (a - lo) / (hi - lo)` for label `a` and
//! `label_range = [lo, hi]`:
//!
//! - systolic lobe: amplitude 1, centre `0.15 L`, width `0.04 L`;
//! - dicrotic lobe: amplitude `0.8 - 0.5 frac`, centre `0.15 L + delay`,
//!   width `0.06 L`, where `delay = 0.25 L + 0.3 L frac`.
//!
//! For the default range `[30, 80]` the amplitude is `0.8 - 0.01 (a - 30)`.
//! Independent Gaussian noise of standard deviation `noise_std` is added and
//! each signal is then standardized to zero mean and unit population
//! standard deviation.
//!
//! Sample `i` draws its label and noise from its own ChaCha8 stream
//! `(seed, i)`, so generation does not depend on iteration order.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasicDist {
    Normal { mean: f64, std: f64 },
    /// Azzalini skew-normal with location, scale and shape `alpha`.
    SkewNormal { location: f64, scale: f64, shape: f64 },
}

impl BasicDist {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            BasicDist::Normal { mean, std } => mean.is_finite() && std.is_finite() && std > 0.0,
            BasicDist::SkewNormal { location, scale, shape } => {
                location.is_finite() && scale.is_finite() && scale > 0.0 && shape.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid label distribution {self:?}")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            BasicDist::Normal { mean, std } => mean + std * rng.sample::<f64, _>(StandardNormal),
            BasicDist::SkewNormal { location, scale, shape } => {
                let delta = shape / (1.0 + shape * shape).sqrt();
                let u0: f64 = rng.sample(StandardNormal);
                let u1: f64 = rng.sample(StandardNormal);
                location + scale * (delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub dist: BasicDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelDist {
    Normal { mean: f64, std: f64 },
    SkewNormal { location: f64, scale: f64, shape: f64 },
    /// Weights need not sum to one.
    Mixture { components: Vec<MixtureComponent> },
}

impl Default for LabelDist {
    fn default() -> Self {
        LabelDist::SkewNormal { location: 42.0, scale: 12.0, shape: 4.0 }
    }
}

impl LabelDist {
    fn validate(&self) -> Result<()> {
        match self {
            LabelDist::Normal { mean, std } => BasicDist::Normal { mean: *mean, std: *std }.validate(),
            LabelDist::SkewNormal { location, scale, shape } => {
                BasicDist::SkewNormal { location: *location, scale: *scale, shape: *shape }.validate()
            }
            LabelDist::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidConfig("mixture needs at least one component".into()));
                }
                for c in components {
                    if !(c.weight > 0.0 && c.weight.is_finite()) {
                        return Err(Error::InvalidConfig(format!("mixture weight must be positive, got {}", c.weight)));
                    }
                    c.dist.validate()?;
                }
                Ok(())
            }
        }
    }

    /// One unclipped draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LabelDist::Normal { mean, std } => BasicDist::Normal { mean: *mean, std: *std }.sample(rng),
            LabelDist::SkewNormal { location, scale, shape } => {
                BasicDist::SkewNormal { location: *location, scale: *scale, shape: *shape }.sample(rng)
            }
            LabelDist::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut u = rng.random::<f64>() * total;
                for c in components {
                    if u < c.weight {
                        return c.dist.sample(rng);
                    }
                    u -= c.weight;
                }
                components[components.len() - 1].dist.sample(rng)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub length: usize,
    pub label_dist: LabelDist,
    pub label_range: [f64; 2],
    pub noise_std: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            length: 100,
            label_dist: LabelDist::default(),
            label_range: [30.0, 80.0],
            noise_std: 0.3,
            train_fraction: 0.6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if self.length < 2 {
            return bad(format!("length must be at least 2, got {}", self.length));
        }
        let [lo, hi] = self.label_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("label_range must satisfy lo < hi, got [{lo}, {hi}]"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        self.label_dist.validate()
    }
}

fn label_fraction(a: f64, range: [f64; 2]) -> f64 {
    (a - range[0]) / (range[1] - range[0])
}

/// `0.8 - 0.5 * (a - lo) / (hi - lo)`.
pub fn dicrotic_amplitude(a: f64, range: [f64; 2]) -> f64 {
    0.8 - 0.5 * label_fraction(a, range)
}

/// `0.25 L + 0.3 L (a - lo) / (hi - lo)`, in samples.
pub fn dicrotic_delay(a: f64, range: [f64; 2], length: usize) -> f64 {
    let l = length as f64;
    0.25 * l + 0.3 * l * label_fraction(a, range)
}

fn lobe(t: f64, centre: f64, width: f64) -> f64 {
    let z = (t - centre) / width;
    (-0.5 * z * z).exp()
}

/// Noise-free, unnormalized signal for label `a`.
pub fn clean_signal(a: f64, range: [f64; 2], length: usize) -> Vec<f64> {
    let l = length as f64;
    let sys = 0.15 * l;
    let dic = sys + dicrotic_delay(a, range, length);
    let amp = dicrotic_amplitude(a, range);
    (0..length)
        .map(|t| {
            let t = t as f64;
            lobe(t, sys, 0.04 * l) + amp * lobe(t, dic, 0.06 * l)
        })
        .collect()
}

/// `(x - mean) / std` with the population standard deviation.
pub fn normalize(signal: &[f64]) -> Result<Vec<f64>> {
    if signal.len() < 2 {
        return Err(Error::ConstantSignal);
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::ConstantSignal);
    }
    Ok(signal.iter().map(|v| (v - mean) / sd).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `(N, length)`.
    pub signals: Vec<f64>,
    pub labels: Vec<f64>,
    pub length: usize,
    pub split: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn signal(&self, i: usize) -> &[f64] {
        &self.signals[i * self.length..(i + 1) * self.length]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut signals = Vec::with_capacity(indices.len() * self.length);
        for &i in indices {
            signals.extend_from_slice(self.signal(i));
        }
        Dataset {
            signals,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            length: self.length,
            split: indices.iter().map(|&i| self.split[i]).collect(),
        }
    }

    pub fn indices_of(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    /// `(train, test)` subsets according to the stored split tags.
    pub fn partition(&self) -> (Dataset, Dataset) {
        (self.subset(&self.indices_of(Split::Train)), self.subset(&self.indices_of(Split::Test)))
    }
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded assignment of `round(fraction * n)` samples to the training split.
pub fn split_assignment(n: usize, train_fraction: f64, seed: u64) -> Vec<Split> {
    let n_train = ((train_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut sample_rng(seed, u64::MAX));
    let mut tags = vec![Split::Test; n];
    for &i in &order[..n_train] {
        tags[i] = Split::Train;
    }
    tags
}

/// Re-tags `dataset` with a fresh seeded split and returns `(train, test)`.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let tagged = Dataset { split: split_assignment(dataset.len(), train_fraction, seed), ..dataset.clone() };
    tagged.partition()
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let [lo, hi] = cfg.label_range;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut signals = Vec::with_capacity(cfg.n_samples * cfg.length);
    let mut labels = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let mut rng = sample_rng(cfg.seed, i as u64);
        let a = cfg.label_dist.sample(&mut rng).clamp(lo, hi);
        let mut x = clean_signal(a, cfg.label_range, cfg.length);
        if cfg.noise_std > 0.0 {
            for v in &mut x {
                *v += noise.sample(&mut rng);
            }
        }
        signals.extend(normalize(&x)?);
        labels.push(a);
    }
    let split = split_assignment(cfg.n_samples, cfg.train_fraction, cfg.seed);
    Ok(Dataset { signals, labels, length: cfg.length, split })
}

pub const SIGNALS_FILE: &str = "signals.f64";
pub const LABELS_FILE: &str = "labels.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Written next to the data files. `train_indices` and `test_indices` are
/// ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: SynthConfig,
    pub seed: u64,
    pub n_samples: usize,
    pub length: usize,
    pub signals_file: String,
    pub signals_format: String,
    pub labels_file: String,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

const SIGNALS_FORMAT: &str = "f64 little-endian, row-major (n_samples, length)";

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed { path: path.to_path_buf(), reason: reason.into() }
}

/// Writes `signals.f64`, `labels.txt` and `manifest.json` into `dir`,
/// creating it if needed.
pub fn write_dataset(dataset: &Dataset, cfg: &SynthConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(dataset.signals.len() * 8);
    for v in &dataset.signals {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(SIGNALS_FILE), bytes)?;
    let mut labels = fs::File::create(dir.join(LABELS_FILE))?;
    for v in &dataset.labels {
        writeln!(labels, "{v}")?;
    }
    let manifest = Manifest {
        config: cfg.clone(),
        seed: cfg.seed,
        n_samples: dataset.len(),
        length: dataset.length,
        signals_file: SIGNALS_FILE.into(),
        signals_format: SIGNALS_FORMAT.into(),
        labels_file: LABELS_FILE.into(),
        train_indices: dataset.indices_of(Split::Train),
        test_indices: dataset.indices_of(Split::Test),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<(Dataset, Manifest)> {
    let mpath = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&mpath)?)?;
    let (n, len) = (manifest.n_samples, manifest.length);

    let spath = dir.join(&manifest.signals_file);
    let bytes = fs::read(&spath)?;
    if bytes.len() != n * len * 8 {
        return Err(malformed(&spath, format!("expected {} bytes, found {}", n * len * 8, bytes.len())));
    }
    let signals = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

    let lpath = dir.join(&manifest.labels_file);
    let labels = fs::read_to_string(&lpath)?
        .lines()
        .enumerate()
        .map(|(i, l)| l.trim().parse::<f64>().map_err(|e| malformed(&lpath, format!("line {}: {e}", i + 1))))
        .collect::<Result<Vec<f64>>>()?;
    if labels.len() != n {
        return Err(malformed(&lpath, format!("expected {n} labels, found {}", labels.len())));
    }

    let mut split = vec![None; n];
    for (idx, tag) in [(&manifest.train_indices, Split::Train), (&manifest.test_indices, Split::Test)] {
        for &i in idx {
            match split.get_mut(i) {
                Some(slot @ None) => *slot = Some(tag),
                _ => return Err(malformed(&mpath, format!("split index {i} is out of range or repeated"))),
            }
        }
    }
    let split = split
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| malformed(&mpath, format!("sample {i} has no split"))))
        .collect::<Result<Vec<Split>>>()?;
    Ok((Dataset { signals, labels, length: len, split }, manifest))
}
