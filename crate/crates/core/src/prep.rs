//! Coordinate normalization with exact inverses, and on-the-fly augmentation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Point, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Raw scene coordinates.
    Abs,
    /// Origin at the first observed point.
    T0,
    /// Origin at the last observed point.
    Tobs,
    /// Per-step displacements.
    Rel,
}

impl NormMode {
    pub const ALL: [NormMode; 4] = [NormMode::Abs, NormMode::T0, NormMode::Tobs, NormMode::Rel];

    pub fn as_str(self) -> &'static str {
        match self {
            NormMode::Abs => "abs",
            NormMode::T0 => "t0",
            NormMode::Tobs => "tobs",
            NormMode::Rel => "rel",
        }
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NormMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown norm mode `{s}` (expected abs, t0, tobs or rel)")))
    }
}

/// What `denormalize` needs to map predictions back to world meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormContext {
    pub mode: NormMode,
    /// Subtracted origin (abs: zero); for rel, the last observed world position.
    pub anchor: Point,
}

/// A sample expressed in a normalized frame, ready for a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub obs: Vec<Point>,
    /// Positions for abs/t0/tobs, per-step displacements for rel.
    pub target: Vec<Point>,
    /// Per observed frame. Positions in the normalized frame, except for rel
    /// where they are offsets from the subject's position at that frame.
    pub neighbors: Vec<Vec<Point>>,
    pub mode: NormMode,
}

impl Normalized {
    /// Offsets of the neighbours from the subject at observed frame `t`.
    pub fn neighbor_offsets(&self, t: usize) -> Vec<Point> {
        match self.mode {
            NormMode::Rel => self.neighbors[t].clone(),
            _ => {
                let s = self.obs[t];
                self.neighbors[t].iter().map(|p| [p[0] - s[0], p[1] - s[1]]).collect()
            }
        }
    }

    /// Apply a linear map to every point (subject, target and neighbours).
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Normalized {
        Normalized {
            obs: self.obs.iter().map(|&p| f(p)).collect(),
            target: self.target.iter().map(|&p| f(p)).collect(),
            neighbors: self.neighbors.iter().map(|fr| fr.iter().map(|&p| f(p)).collect()).collect(),
            mode: self.mode,
        }
    }
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn diffs(first_prev: Point, pts: &[Point]) -> Vec<Point> {
    let mut prev = first_prev;
    pts.iter()
        .map(|&p| {
            let d = sub(p, prev);
            prev = p;
            d
        })
        .collect()
}

pub fn normalize(sample: &Sample, mode: NormMode) -> (Normalized, NormContext) {
    let last = *sample.obs.last().expect("sample has observations");
    let translate = |origin: Point| {
        let n = Normalized {
            obs: sample.obs.iter().map(|&p| sub(p, origin)).collect(),
            target: sample.future.iter().map(|&p| sub(p, origin)).collect(),
            neighbors: sample.neighbors.iter().map(|fr| fr.iter().map(|&p| sub(p, origin)).collect()).collect(),
            mode,
        };
        (n, NormContext { mode, anchor: origin })
    };
    match mode {
        NormMode::Abs => translate([0.0, 0.0]),
        NormMode::T0 => translate(sample.obs[0]),
        NormMode::Tobs => translate(last),
        NormMode::Rel => {
            let n = Normalized {
                obs: diffs(sample.obs[0], &sample.obs),
                target: diffs(last, &sample.future),
                neighbors: sample
                    .neighbors
                    .iter()
                    .zip(&sample.obs)
                    .map(|(fr, &s)| fr.iter().map(|&p| sub(p, s)).collect())
                    .collect(),
                mode,
            };
            (n, NormContext { mode, anchor: last })
        }
    }
}

/// Map predictions from the normalized frame back to world meters.
pub fn denormalize(pred: &[Point], ctx: &NormContext) -> Vec<Point> {
    let a = ctx.anchor;
    match ctx.mode {
        NormMode::Abs | NormMode::T0 | NormMode::Tobs => pred.iter().map(|p| [p[0] + a[0], p[1] + a[1]]).collect(),
        NormMode::Rel => {
            let mut cur = a;
            pred.iter()
                .map(|d| {
                    cur = [cur[0] + d[0], cur[1] + d[1]];
                    cur
                })
                .collect()
        }
    }
}

/// Rotate every point about the normalized origin by `theta` radians.
pub fn rotate_sample(s: &Normalized, theta: f64) -> Normalized {
    let (sin, cos) = theta.sin_cos();
    s.map_points(|p| [cos * p[0] - sin * p[1], sin * p[0] + cos * p[1]])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MirrorAxis {
    /// `(x, y) ↦ (x, −y)`
    X,
    /// `(x, y) ↦ (−x, y)`
    Y,
}

pub fn reflect(s: &Normalized, axis: MirrorAxis) -> Normalized {
    match axis {
        MirrorAxis::X => s.map_points(|p| [p[0], -p[1]]),
        MirrorAxis::Y => s.map_points(|p| [-p[0], p[1]]),
    }
}

/// 25% x-axis reflection, 25% y-axis reflection, 50% unchanged.
pub fn draw_mirror(rng: &mut impl Rng) -> Option<MirrorAxis> {
    let u: f64 = rng.random();
    if u < 0.25 {
        Some(MirrorAxis::X)
    } else if u < 0.5 {
        Some(MirrorAxis::Y)
    } else {
        None
    }
}

pub fn mirror_sample(s: &Normalized, rng: &mut impl Rng) -> Normalized {
    match draw_mirror(rng) {
        Some(axis) => reflect(s, axis),
        None => s.clone(),
    }
}

/// Add N(0, σ²) noise to every observed input coordinate, neighbours
/// included; targets stay clean.
pub fn jitter_sample(s: &Normalized, sigma: f64, rng: &mut impl Rng) -> Normalized {
    if sigma == 0.0 {
        return s.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and nonnegative");
    let mut noisy = |p: &Point| [p[0] + normal.sample(rng), p[1] + normal.sample(rng)];
    let obs = s.obs.iter().map(&mut noisy).collect();
    let neighbors = s.neighbors.iter().map(|fr| fr.iter().map(&mut noisy).collect()).collect();
    Normalized { obs, target: s.target.clone(), neighbors, mode: s.mode }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    Rotate,
    Mirror,
    Noise,
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotate" | "r" => Ok(Augmentation::Rotate),
            "mirror" | "m" => Ok(Augmentation::Mirror),
            "noise" | "n" => Ok(Augmentation::Noise),
            _ => Err(Error::Config(format!("unknown augmentation `{s}` (expected rotate, mirror or noise)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub rotate: bool,
    pub mirror: bool,
    pub noise: bool,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl AugmentConfig {
    pub fn none(seed: u64) -> Self {
        AugmentConfig { rotate: false, mirror: false, noise: false, noise_sigma: 0.05, seed }
    }

    pub fn from_set(set: &[Augmentation], noise_sigma: f64, seed: u64) -> Result<Self> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be ≥ 0, got {noise_sigma}")));
        }
        Ok(AugmentConfig {
            rotate: set.contains(&Augmentation::Rotate),
            mirror: set.contains(&Augmentation::Mirror),
            noise: set.contains(&Augmentation::Noise),
            noise_sigma,
            seed,
        })
    }

    pub fn is_identity(&self) -> bool {
        !self.rotate && !self.mirror && !(self.noise && self.noise_sigma > 0.0)
    }
}

/// Independent RNG stream for one sample in one epoch.
pub fn sample_rng(seed: u64, sample_index: u64, epoch: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&sample_index.to_le_bytes());
    key[16..24].copy_from_slice(&epoch.to_le_bytes());
    key[24..].copy_from_slice(b"augment\0");
    ChaCha8Rng::from_seed(key)
}

/// Rotate (θ ~ U[0, 2π)), then mirror, then jitter, as enabled.
pub fn augment(s: &Normalized, cfg: &AugmentConfig, sample_index: u64, epoch: u64) -> Normalized {
    if cfg.is_identity() {
        return s.clone();
    }
    let mut rng = sample_rng(cfg.seed, sample_index, epoch);
    let mut out = s.clone();
    if cfg.rotate {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        out = rotate_sample(&out, theta);
    }
    if cfg.mirror {
        out = mirror_sample(&out, &mut rng);
    }
    if cfg.noise {
        out = jitter_sample(&out, cfg.noise_sigma, &mut rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(obs: Vec<Point>) -> Sample {
        let n = obs.len();
        Sample {
            scene_id: "t".into(),
            ped_id: 1,
            start_frame: 0,
            future: (1..=12).map(|k| [obs[n - 1][0] + k as f64, obs[n - 1][1] - 0.5 * k as f64]).collect(),
            neighbors: obs.iter().map(|p| vec![[p[0] + 1.0, p[1] + 2.0]]).collect(),
            obs,
            labeled: true,
        }
    }

    fn line8() -> Sample {
        sample((0..8).map(|k| [k as f64 + 1.0, k as f64 + 1.0]).collect())
    }

    #[test]
    fn abs_is_identity() {
        let s = line8();
        let (n, ctx) = normalize(&s, NormMode::Abs);
        assert_eq!(n.obs, s.obs);
        assert_eq!(n.target, s.future);
        assert_eq!(n.neighbors, s.neighbors);
        assert_eq!(ctx.anchor, [0.0, 0.0]);
    }

    #[test]
    fn tobs_and_t0_origins() {
        let s = line8();
        assert_eq!(s.obs[7], [8.0, 8.0]);
        let (n, _) = normalize(&s, NormMode::Tobs);
        assert_eq!(n.obs[7], [0.0, 0.0]);
        let (n, _) = normalize(&s, NormMode::T0);
        assert_eq!(n.obs[0], [0.0, 0.0]);
        // neighbours share the translation
        assert_eq!(n.neighbor_offsets(3), vec![[1.0, 2.0]]);
    }

    #[test]
    fn rel_displacements() {
        let mut obs = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        obs.extend((3..8).map(|k| [k as f64, 0.0]));
        let (n, ctx) = normalize(&sample(obs), NormMode::Rel);
        assert_eq!(&n.obs[..3], &[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]]);
        assert_eq!(ctx.anchor, [7.0, 0.0]);
        assert_eq!(n.neighbor_offsets(0), vec![[1.0, 2.0]]);
    }

    #[test]
    fn rel_denormalize_is_cumulative() {
        let ctx = NormContext { mode: NormMode::Rel, anchor: [5.0, 5.0] };
        let out = denormalize(&[[1.0, 0.0]; 12], &ctx);
        let want: Vec<Point> = (6..=17).map(|x| [x as f64, 5.0]).collect();
        assert_eq!(out, want);
    }

    #[test]
    fn round_trip_all_modes() {
        let s = sample((0..8).map(|k| [0.3 * k as f64 + 12.7, -1.1 * k as f64 + 3.3]).collect());
        for mode in NormMode::ALL {
            let (n, ctx) = normalize(&s, mode);
            let back = denormalize(&n.target, &ctx);
            for (a, b) in back.iter().zip(&s.future) {
                assert!((a[0] - b[0]).abs() <= 1e-12 && (a[1] - b[1]).abs() <= 1e-12, "{mode}");
            }
        }
    }

    #[test]
    fn quarter_turn_and_identity_rotation() {
        let (n, _) = normalize(&line8(), NormMode::Tobs);
        assert_eq!(rotate_sample(&n, 0.0), n);
        let one = Normalized { obs: vec![[1.0, 0.0]], target: vec![], neighbors: vec![vec![]], mode: NormMode::Tobs };
        let r = rotate_sample(&one, std::f64::consts::FRAC_PI_2);
        assert!((r.obs[0][0]).abs() < 1e-15 && (r.obs[0][1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reflections() {
        let one = Normalized { obs: vec![[1.0, 2.0]], target: vec![], neighbors: vec![vec![]], mode: NormMode::Tobs };
        assert_eq!(reflect(&one, MirrorAxis::X).obs[0], [1.0, -2.0]);
        assert_eq!(reflect(&one, MirrorAxis::Y).obs[0], [-1.0, 2.0]);
        for axis in [MirrorAxis::X, MirrorAxis::Y] {
            assert_eq!(reflect(&reflect(&one, axis), axis), one);
        }
    }

    #[test]
    fn zero_sigma_jitter_is_identity_and_targets_stay_clean() {
        let (n, _) = normalize(&line8(), NormMode::Tobs);
        let mut rng = sample_rng(1, 2, 3);
        assert_eq!(jitter_sample(&n, 0.0, &mut rng), n);
        let j = jitter_sample(&n, 0.3, &mut rng);
        assert_eq!(j.target, n.target);
        assert_ne!(j.obs, n.obs);
        assert_ne!(j.neighbors, n.neighbors);
    }

    #[test]
    fn augmentation_is_deterministic_per_seed_index_epoch() {
        let (n, _) = normalize(&line8(), NormMode::Tobs);
        let cfg = AugmentConfig { rotate: true, mirror: true, noise: true, noise_sigma: 0.05, seed: 9 };
        assert_eq!(augment(&n, &cfg, 4, 2), augment(&n, &cfg, 4, 2));
        assert_ne!(augment(&n, &cfg, 4, 2), augment(&n, &cfg, 4, 3));
        assert_ne!(augment(&n, &cfg, 4, 2), augment(&n, &cfg, 5, 2));
    }

    #[test]
    fn parse_modes_and_augmentations() {
        assert_eq!("tobs".parse::<NormMode>().unwrap(), NormMode::Tobs);
        assert!("origin".parse::<NormMode>().is_err());
        assert_eq!("noise".parse::<Augmentation>().unwrap(), Augmentation::Noise);
        assert!(AugmentConfig::from_set(&[], -1.0, 0).is_err());
    }
}
