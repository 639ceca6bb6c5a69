//! Track files, fixed-length windows with neighbour context, and
//! leave-one-out folds.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OBS_LEN: usize = 8;
pub const PRED_LEN: usize = 12;
/// Seconds between annotated frames.
pub const FRAME_INTERVAL: f64 = 0.4;

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub frame: i64,
    pub ped: i64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackTable {
    pub scene_id: String,
    /// Sorted by `(ped, frame)`.
    pub records: Vec<Record>,
    pub frame_interval: f64,
    /// Difference between consecutive annotated frame ids; inferred when `None`.
    pub frame_step: Option<i64>,
    /// False for observation-only splits (no ground-truth futures).
    pub labeled: bool,
}

fn parse_integral(field: &str) -> Option<i64> {
    if let Ok(v) = field.parse::<i64>() {
        return Some(v);
    }
    let v = field.parse::<f64>().ok()?;
    (v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15).then_some(v as i64)
}

/// Parse a whitespace-separated `frame ped x y` track file.
///
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_track_file(bytes: &[u8], scene_id: &str) -> Result<TrackTable> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse { line: 0, reason: format!("not UTF-8: {e}") })?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse { line: line_no, reason: format!("expected 4 fields, found {}", fields.len()) });
        }
        let bad = |what: &str, f: &str| Error::Parse { line: line_no, reason: format!("{what} `{f}` is not valid") };
        let frame = parse_integral(fields[0]).ok_or_else(|| bad("frame id", fields[0]))?;
        let ped = parse_integral(fields[1]).ok_or_else(|| bad("pedestrian id", fields[1]))?;
        let coord = |f: &str| f.parse::<f64>().ok().filter(|v| v.is_finite());
        let x = coord(fields[2]).ok_or_else(|| bad("x coordinate", fields[2]))?;
        let y = coord(fields[3]).ok_or_else(|| bad("y coordinate", fields[3]))?;
        if !seen.insert((frame, ped)) {
            return Err(Error::DuplicateRecord { line: line_no, frame, ped });
        }
        records.push(Record { frame, ped, x, y });
    }
    records.sort_by_key(|r| (r.ped, r.frame));
    Ok(TrackTable {
        scene_id: scene_id.to_string(),
        records,
        frame_interval: FRAME_INTERVAL,
        frame_step: None,
        labeled: true,
    })
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl TrackTable {
    /// One `frame ped x y` line per record.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.frame, r.ped, r.x, r.y);
        }
        s
    }

    /// Frame-id step between consecutive annotations: the configured value,
    /// otherwise the gcd of the gaps between distinct frame ids.
    pub fn effective_frame_step(&self) -> i64 {
        if let Some(s) = self.frame_step {
            return s.max(1);
        }
        let mut frames: Vec<i64> = self.records.iter().map(|r| r.frame).collect();
        frames.sort_unstable();
        frames.dedup();
        frames.windows(2).fold(0, |g, w| gcd(g, w[1] - w[0])).max(1)
    }

    pub fn pedestrian_count(&self) -> usize {
        self.records.iter().map(|r| r.ped).collect::<HashSet<_>>().len()
    }
}

/// One pedestrian's observed window, its future, and who else was around.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scene_id: String,
    pub ped_id: i64,
    pub start_frame: i64,
    pub obs: Vec<Point>,
    /// Empty when the source split is unlabeled.
    pub future: Vec<Point>,
    /// Per observed frame, positions of every other pedestrian in that frame.
    pub neighbors: Vec<Vec<Point>>,
    pub labeled: bool,
}

impl Sample {
    /// Stable identifier used in error dumps.
    pub fn id(&self) -> String {
        format!("{}:{}:{}", self.scene_id, self.ped_id, self.start_frame)
    }
}

/// Cut every pedestrian track into windows of `obs_len + pred_len`
/// consecutive annotated frames (`obs_len` for unlabeled tables) in which the
/// pedestrian is present throughout.
pub fn window_samples(table: &TrackTable, obs_len: usize, pred_len: usize, stride: usize) -> Vec<Sample> {
    assert!(obs_len >= 1 && pred_len >= 1 && stride >= 1, "window lengths and stride must be positive");
    let step = table.effective_frame_step();
    let win = if table.labeled { obs_len + pred_len } else { obs_len };

    let mut by_frame: HashMap<i64, Vec<(i64, Point)>> = HashMap::new();
    let mut by_ped: BTreeMap<i64, Vec<(i64, Point)>> = BTreeMap::new();
    for r in &table.records {
        by_frame.entry(r.frame).or_default().push((r.ped, [r.x, r.y]));
        by_ped.entry(r.ped).or_default().push((r.frame, [r.x, r.y]));
    }
    for v in by_frame.values_mut() {
        v.sort_by_key(|(p, _)| *p);
    }

    let mut out = Vec::new();
    for (&ped, track) in &by_ped {
        // track is frame-sorted because records are sorted by (ped, frame)
        let mut run_start = 0;
        for i in 0..=track.len() {
            let breaks = i == track.len() || (i > run_start && track[i].0 - track[i - 1].0 != step);
            if !breaks {
                continue;
            }
            let run = &track[run_start..i];
            if run.len() >= win {
                let mut s = 0;
                while s + win <= run.len() {
                    let w = &run[s..s + win];
                    let neighbors = w[..obs_len]
                        .iter()
                        .map(|(frame, _)| {
                            by_frame[frame].iter().filter(|(p, _)| *p != ped).map(|(_, pt)| *pt).collect()
                        })
                        .collect();
                    out.push(Sample {
                        scene_id: table.scene_id.clone(),
                        ped_id: ped,
                        start_frame: w[0].0,
                        obs: w[..obs_len].iter().map(|(_, p)| *p).collect(),
                        future: w[obs_len..].iter().map(|(_, p)| *p).collect(),
                        neighbors,
                        labeled: table.labeled,
                    });
                    s += stride;
                }
            }
            run_start = i;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// One fold per scene, holding that scene out for testing.
pub fn leave_one_out_folds(scene_ids: &[String]) -> Result<FoldPlan> {
    let unique: HashSet<&String> = scene_ids.iter().collect();
    if unique.len() != scene_ids.len() {
        return Err(Error::Config("duplicate scene ids in fold plan".into()));
    }
    if scene_ids.len() < 2 {
        return Err(Error::Config(format!("leave-one-out needs at least 2 scenes, got {}", scene_ids.len())));
    }
    let folds = scene_ids
        .iter()
        .map(|test| Fold { train: scene_ids.iter().filter(|s| *s != test).cloned().collect(), test: test.clone() })
        .collect();
    Ok(FoldPlan { folds })
}

/// A scene entry of the dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSource {
    pub path: PathBuf,
    #[serde(default)]
    pub frame_step: Option<i64>,
    #[serde(default = "default_true")]
    pub labeled: bool,
}

fn default_true() -> bool {
    true
}

/// Read and parse one scene, resolving relative paths against `base`.
pub fn load_scene(scene_id: &str, src: &SceneSource, base: &Path) -> Result<TrackTable> {
    let path = if src.path.is_absolute() { src.path.clone() } else { base.join(&src.path) };
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut t = parse_track_file(&bytes, scene_id)?;
    t.frame_step = src.frame_step;
    t.labeled = src.labeled;
    Ok(t)
}

/// Deterministic train/held-out split by pedestrian: about `fraction` of the
/// `(scene, pedestrian)` tracks go to the held-out side with all their
/// windows, so overlapping windows never straddle the split.
pub fn holdout_split(samples: &[Sample], fraction: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut tracks: Vec<(&str, i64)> = samples.iter().map(|s| (s.scene_id.as_str(), s.ped_id)).collect();
    tracks.sort_unstable();
    tracks.dedup();
    tracks.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let k = ((tracks.len() as f64) * fraction).round() as usize;
    let held: HashSet<(&str, i64)> = tracks[..k.min(tracks.len())].iter().copied().collect();
    let (test, train): (Vec<Sample>, Vec<Sample>) =
        samples.iter().cloned().partition(|s| held.contains(&(s.scene_id.as_str(), s.ped_id)));
    (train, test)
}

/// Synthetic scene of pedestrians walking smooth curved paths, for demos,
/// benchmarks and tests. Frames are numbered in steps of 10.
pub fn synthetic_table(scene_id: &str, seed: u64, pedestrians: usize, frames: usize) -> TrackTable {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for ped in 0..pedestrians {
        let len = rng.random_range(20..=40).min(frames);
        let start = rng.random_range(0..=frames - len);
        let mut pos = [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)];
        let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let speed = rng.random_range(0.8..1.6) * FRAME_INTERVAL;
        let turn = rng.random_range(-0.08..0.08);
        for f in start..start + len {
            records.push(Record { frame: (f * 10) as i64, ped: ped as i64, x: pos[0], y: pos[1] });
            heading += turn;
            pos = [pos[0] + speed * heading.cos(), pos[1] + speed * heading.sin()];
        }
    }
    records.sort_by_key(|r| (r.ped, r.frame));
    TrackTable {
        scene_id: scene_id.to_string(),
        records,
        frame_interval: FRAME_INTERVAL,
        frame_step: Some(10),
        labeled: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(i64, i64, f64, f64)]) -> TrackTable {
        let text: String = rows.iter().map(|(f, p, x, y)| format!("{f} {p} {x} {y}\n")).collect();
        parse_track_file(text.as_bytes(), "s").unwrap()
    }

    #[test]
    fn holdout_split_keeps_tracks_together() {
        let t = synthetic_table("s", 1, 40, 80);
        let all = window_samples(&t, 8, 12, 1);
        let (train, test) = holdout_split(&all, 0.1, 5);
        assert_eq!(train.len() + test.len(), all.len());
        assert!(!test.is_empty());
        let held: HashSet<i64> = test.iter().map(|s| s.ped_id).collect();
        assert!(train.iter().all(|s| !held.contains(&s.ped_id)));
        assert_eq!(held.len(), 4);
        assert_eq!(holdout_split(&all, 0.1, 5), (train, test));
    }

    #[test]
    fn empty_file() {
        let t = parse_track_file(b"", "eth").unwrap();
        assert!(t.records.is_empty());
        assert_eq!(t.scene_id, "eth");
    }

    #[test]
    fn single_line() {
        let t = parse_track_file("10 1 2.5 -3.0\n".as_bytes(), "x").unwrap();
        assert_eq!(t.records, vec![Record { frame: 10, ped: 1, x: 2.5, y: -3.0 }]);
    }

    #[test]
    fn integral_reals_and_tabs() {
        let t = parse_track_file(b"780.0\t1.0\t8.46\t3.59\n", "eth").unwrap();
        assert_eq!(t.records[0].frame, 780);
        assert_eq!(t.records[0].ped, 1);
    }

    #[test]
    fn unordered_rows_are_sorted() {
        let text = "20 2 0 0\n10 1 1 1\n\n30 1 2 2\n10 2 3 3\n20 1 4 4\n";
        let t = parse_track_file(text.as_bytes(), "s").unwrap();
        let lines = text.lines().filter(|l| !l.trim().is_empty()).count();
        assert_eq!(t.records.len(), lines);
        let keys: Vec<_> = t.records.iter().map(|r| (r.ped, r.frame)).collect();
        assert_eq!(keys, vec![(1, 10), (1, 20), (1, 30), (2, 10), (2, 20)]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse_track_file(b"1 1 0 0\n2 x 0 0\n", "s").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse_track_file(b"1 1 0 0\n1 1 5 5\n", "s").unwrap_err();
        assert!(matches!(e, Error::DuplicateRecord { line: 2, frame: 1, ped: 1 }));
        assert!(parse_track_file(b"1 1 nan 0\n", "s").is_err());
        assert!(parse_track_file(b"1 1 0\n", "s").is_err());
        assert!(parse_track_file(b"1.5 1 0 0\n", "s").is_err());
    }

    #[test]
    fn round_trip_text() {
        let t = table(&[(0, 3, 0.1, -7.25), (10, 3, 1.0 / 3.0, 2e-9), (0, 1, 5.0, 6.0)]);
        let again = parse_track_file(t.to_text().as_bytes(), "s").unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn window_counts() {
        let rows: Vec<_> = (0..20).map(|f| (f, 1, f as f64, 0.0)).collect();
        assert_eq!(window_samples(&table(&rows), 8, 12, 1).len(), 1);
        let rows: Vec<_> = (0..25).map(|f| (f * 10, 1, f as f64, 0.0)).collect();
        let s = window_samples(&table(&rows), 8, 12, 1);
        assert_eq!(s.len(), 6);
        assert_eq!(s[0].obs.len(), 8);
        assert_eq!(s[0].future.len(), 12);
        assert_eq!(s[5].start_frame, 50);
    }

    #[test]
    fn gap_breaks_windows() {
        let mut rows: Vec<_> = (0..19).map(|f| (f, 1, 0.0, 0.0)).collect();
        rows.extend((20..40).map(|f| (f, 1, 0.0, 0.0)));
        // frames 0..18 (19 long, too short) then 20..39 (20 long)
        let s = window_samples(&table(&rows), 8, 12, 1);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].start_frame, 20);
    }

    #[test]
    fn co_present_neighbors_match_frame_scan() {
        let mut rows: Vec<_> = (0..20).map(|f| (f, 1, f as f64, 0.0)).collect();
        rows.extend((0..20).map(|f| (f, 2, f as f64, 1.0)));
        let t = table(&rows);
        let samples = window_samples(&t, 8, 12, 1);
        assert_eq!(samples.len(), 2);
        for s in &samples {
            for (k, nb) in s.neighbors.iter().enumerate() {
                let frame = s.start_frame + k as i64;
                let scan: Vec<Point> =
                    t.records.iter().filter(|r| r.frame == frame && r.ped != s.ped_id).map(|r| [r.x, r.y]).collect();
                assert_eq!(nb.len(), 1);
                assert_eq!(nb, &scan);
            }
        }
    }

    #[test]
    fn unlabeled_tables_yield_observation_windows() {
        let rows: Vec<_> = (0..8).map(|f| (f, 1, f as f64, 0.0)).collect();
        let mut t = table(&rows);
        t.labeled = false;
        let s = window_samples(&t, 8, 12, 1);
        assert_eq!(s.len(), 1);
        assert!(s[0].future.is_empty() && !s[0].labeled);
    }

    #[test]
    fn folds() {
        let ids: Vec<String> = ["eth", "hotel", "univ", "zara1", "zara2"].iter().map(|s| s.to_string()).collect();
        let plan = leave_one_out_folds(&ids).unwrap();
        assert_eq!(plan.folds.len(), 5);
        for id in &ids {
            assert_eq!(plan.folds.iter().filter(|f| &f.test == id).count(), 1);
        }
        for f in &plan.folds {
            assert!(!f.train.contains(&f.test));
            assert_eq!(f.train.len(), 4);
        }
        assert_eq!(leave_one_out_folds(&ids[..2]).unwrap().folds.len(), 2);
        assert!(matches!(leave_one_out_folds(&ids[..1]), Err(Error::Config(_))));
    }
}
