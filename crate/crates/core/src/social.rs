//! Occupancy encodings of nearby pedestrians, one vector per observed frame.
//!
//! Grids are axis-aligned in whatever frame the positions are given in, so
//! geometric augmentation of the scene carries over to the encodings.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Point;
use crate::error::{Error, Result};
use crate::prep::Normalized;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SocialKind {
    None,
    SquareGrid,
    CircularMap,
    AngularGrid,
}

impl FromStr for SocialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SocialKind::None),
            "square_grid" | "sog" => Ok(SocialKind::SquareGrid),
            "circular_map" | "com" => Ok(SocialKind::CircularMap),
            "angular_grid" | "apg" => Ok(SocialKind::AngularGrid),
            _ => Err(Error::Config(format!(
                "unknown social kind `{s}` (expected none, square_grid, circular_map or angular_grid)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SocialConfig {
    pub kind: SocialKind,
    /// Cells per side of the square grid.
    pub l: usize,
    pub cell_side: f64,
    /// Number of rings of the circular map.
    pub c: usize,
    pub ring_spacing: f64,
    /// Degrees per angular sector.
    pub d: f64,
    pub angular_range: f64,
    /// Occupancy as counts (true) or presence (false).
    pub counts: bool,
}

impl Default for SocialConfig {
    fn default() -> Self {
        SocialConfig {
            kind: SocialKind::None,
            l: 10,
            cell_side: 0.5,
            c: 12,
            ring_spacing: 0.5,
            d: 8.0,
            angular_range: 6.0,
            counts: true,
        }
    }
}

impl SocialConfig {
    pub fn with_kind(kind: SocialKind) -> Self {
        SocialConfig { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("social: {m}")));
        match self.kind {
            SocialKind::None => Ok(()),
            SocialKind::SquareGrid if self.l == 0 || !(self.cell_side > 0.0) => bad("l and cell_side must be positive"),
            SocialKind::CircularMap if self.c == 0 || !(self.ring_spacing > 0.0) => {
                bad("c and ring_spacing must be positive")
            }
            SocialKind::AngularGrid if !(self.d > 0.0) || self.sectors() == 0 || !(self.angular_range > 0.0) => {
                bad("d must give at least one sector and angular_range must be positive")
            }
            _ => Ok(()),
        }
    }

    fn sectors(&self) -> usize {
        if self.d > 0.0 {
            (360.0 / self.d) as usize
        } else {
            0
        }
    }

    /// Flattened feature length for the configured encoding.
    pub fn feature_len(&self) -> usize {
        match self.kind {
            SocialKind::None => 0,
            SocialKind::SquareGrid => self.l * self.l,
            SocialKind::CircularMap => self.c * 4,
            SocialKind::AngularGrid => self.sectors(),
        }
    }

    /// Source shape before flattening.
    pub fn feature_shape(&self) -> Vec<usize> {
        match self.kind {
            SocialKind::None => vec![0],
            SocialKind::SquareGrid => vec![self.l, self.l],
            SocialKind::CircularMap => vec![self.c, 4],
            SocialKind::AngularGrid => vec![self.sectors()],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SocialFeature {
    pub values: Vec<f64>,
    pub shape: Vec<usize>,
}

fn offsets(subject: Point, neighbors: &[Point]) -> impl Iterator<Item = Point> + '_ {
    neighbors.iter().map(move |p| [p[0] - subject[0], p[1] - subject[1]])
}

fn occupy(cell: &mut f64, counts: bool) {
    *cell = if counts { *cell + 1.0 } else { 1.0 };
}

/// Bearing in degrees within [0, 360).
fn bearing_deg(o: Point) -> f64 {
    let b = o[1].atan2(o[0]).to_degrees();
    let b = if b < 0.0 { b + 360.0 } else { b };
    if b >= 360.0 {
        0.0
    } else {
        b
    }
}

/// `l×l` neighbour counts on an axis-aligned grid centred on the subject.
/// Cell `(ix, iy)` is stored at `ix·l + iy`; `(0, 0)` is the most negative corner.
pub fn square_occupancy(subject: Point, neighbors: &[Point], cfg: &SocialConfig) -> SocialFeature {
    let l = cfg.l as i64;
    let half = l / 2;
    let mut values = vec![0.0; cfg.l * cfg.l];
    for o in offsets(subject, neighbors) {
        let ix = (o[0] / cfg.cell_side).floor() as i64 + half;
        let iy = (o[1] / cfg.cell_side).floor() as i64 + half;
        if (0..l).contains(&ix) && (0..l).contains(&iy) {
            occupy(&mut values[(ix * l + iy) as usize], cfg.counts);
        }
    }
    SocialFeature { values, shape: vec![cfg.l, cfg.l] }
}

/// `c×4` counts: ring `j` covers radii `[j·s, (j+1)·s)`, quadrant `q` covers
/// bearings `[90q, 90(q+1))` degrees from +x. Stored at `j·4 + q`.
pub fn circular_occupancy(subject: Point, neighbors: &[Point], cfg: &SocialConfig) -> SocialFeature {
    let mut values = vec![0.0; cfg.c * 4];
    for o in offsets(subject, neighbors) {
        let r = o[0].hypot(o[1]);
        let ring = (r / cfg.ring_spacing).floor() as usize;
        if ring >= cfg.c {
            continue;
        }
        let q = ((bearing_deg(o) / 90.0).floor() as usize).min(3);
        occupy(&mut values[ring * 4 + q], cfg.counts);
    }
    SocialFeature { values, shape: vec![cfg.c, 4] }
}

/// Distance to the closest neighbour per angular sector of `d` degrees,
/// `angular_range` where the sector is free.
pub fn angular_grid(subject: Point, neighbors: &[Point], cfg: &SocialConfig) -> SocialFeature {
    let n = cfg.sectors();
    let mut values = vec![cfg.angular_range; n];
    for o in offsets(subject, neighbors) {
        let r = o[0].hypot(o[1]);
        // a coincident neighbour has no bearing
        if r == 0.0 || r >= cfg.angular_range {
            continue;
        }
        let k = ((bearing_deg(o) / cfg.d).floor() as usize).min(n - 1);
        if r < values[k] {
            values[k] = r;
        }
    }
    SocialFeature { values, shape: vec![n] }
}

/// Encode one frame given neighbour offsets relative to the subject.
pub fn encode_offsets(offsets: &[Point], cfg: &SocialConfig) -> Vec<f64> {
    let origin = [0.0, 0.0];
    match cfg.kind {
        SocialKind::None => Vec::new(),
        SocialKind::SquareGrid => square_occupancy(origin, offsets, cfg).values,
        SocialKind::CircularMap => circular_occupancy(origin, offsets, cfg).values,
        SocialKind::AngularGrid => angular_grid(origin, offsets, cfg).values,
    }
}

/// Per-observed-frame features for a (possibly augmented) normalized sample.
/// Frames without neighbours give the empty-scene encoding.
pub fn sample_features(s: &Normalized, cfg: &SocialConfig) -> Vec<Vec<f64>> {
    (0..s.obs.len()).map(|t| encode_offsets(&s.neighbor_offsets(t), cfg)).collect()
}
