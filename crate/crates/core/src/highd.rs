//! highD recordings: parsing, 0.2 s downsampling, sample extraction,
//! recording-level splits and sample manifests.
//!
//! highD positions are image-style: `x` to the right, `y` downward, and each
//! box is given by its top-left corner with `width` along `x` and `height`
//! along `y`. World coordinates flip `y` so the frame is right-handed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scene::{
    DriveDirection, RoadLayout, SceneError, SceneFrame, SceneSequence, Trajectory, Vec2, Vehicle,
    DEFAULT_NOMINAL_SPEED, FRAME_DT,
};

pub const DEFAULT_H: usize = 10;
pub const DEFAULT_P: usize = 25;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: &'static str, column: &'static str },
    #[error("{file} row {row}: {message}")]
    Format {
        file: &'static str,
        row: usize,
        message: String,
    },
    #[error("frame rate {0} Hz has no integer stride for 0.2 s steps")]
    IncompatibleFrameRate(f64),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingMeta {
    pub recording_id: u32,
    pub frame_rate: f64,
    /// Image-`y` positions of the upper road's markings, edges included.
    pub upper_lane_markings: Vec<f64>,
    pub lower_lane_markings: Vec<f64>,
    /// m/s; `None` when the recording has no posted limit.
    pub speed_limit: Option<f64>,
}

/// One row of a tracks file, in highD conventions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRow {
    pub frame: i64,
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub x_velocity: f64,
    pub y_velocity: f64,
}

impl TrackRow {
    /// Box center in world coordinates.
    pub fn center(&self) -> Vec2 {
        Vec2::new(self.x + self.width / 2.0, -(self.y + self.height / 2.0))
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.x_velocity, -self.y_velocity)
    }

    pub fn to_vehicle(&self) -> Vehicle {
        Vehicle::new(self.id, self.center(), self.velocity(), self.width, self.height)
    }
}

const TRACK_COLUMNS: [&str; 8] = ["frame", "id", "x", "y", "width", "height", "xVelocity", "yVelocity"];
const META_COLUMNS: [&str; 5] = ["id", "frameRate", "speedLimit", "upperLaneMarkings", "lowerLaneMarkings"];

fn column_indices<const N: usize>(
    headers: &csv::StringRecord,
    names: [&'static str; N],
    file: &'static str,
) -> Result<[usize; N], IngestError> {
    let mut out = [0; N];
    for (slot, name) in out.iter_mut().zip(names) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(IngestError::MissingColumn { file, column: name })?;
    }
    Ok(out)
}

fn field<T: FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, file: &'static str, row: usize) -> Result<T, IngestError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| IngestError::Format {
        file,
        row,
        message: format!("`{raw}` is not a valid {name}"),
    })
}

fn markings(raw: &str, row: usize) -> Result<Vec<f64>, IngestError> {
    raw.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| IngestError::Format {
                file: "recordingMeta",
                row,
                message: format!("lane marking `{s}` is not a number"),
            })
        })
        .collect()
}

pub fn parse_meta<R: Read>(meta_csv: R) -> Result<RecordingMeta, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(meta_csv);
    let [id, rate, limit, upper, lower] = column_indices(rdr.headers()?, META_COLUMNS, "recordingMeta")?;
    let rec = rdr.records().next().ok_or(IngestError::Format {
        file: "recordingMeta",
        row: 2,
        message: "no data row".into(),
    })??;
    let row = 2;
    let speed_limit: f64 = field(&rec, limit, "speedLimit", "recordingMeta", row)?;
    Ok(RecordingMeta {
        recording_id: field(&rec, id, "id", "recordingMeta", row)?,
        frame_rate: field(&rec, rate, "frameRate", "recordingMeta", row)?,
        upper_lane_markings: markings(rec.get(upper).unwrap_or(""), row)?,
        lower_lane_markings: markings(rec.get(lower).unwrap_or(""), row)?,
        speed_limit: (speed_limit > 0.0).then_some(speed_limit),
    })
}

pub fn parse_tracks<R: Read>(tracks_csv: R) -> Result<Vec<TrackRow>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(tracks_csv);
    let idx = column_indices(rdr.headers()?, TRACK_COLUMNS, "tracks")?;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let f = |i: usize| field::<f64>(&rec, idx[i], TRACK_COLUMNS[i], "tracks", row);
        let t = TrackRow {
            frame: field(&rec, idx[0], "frame", "tracks", row)?,
            id: field(&rec, idx[1], "id", "tracks", row)?,
            x: f(2)?,
            y: f(3)?,
            width: f(4)?,
            height: f(5)?,
            x_velocity: f(6)?,
            y_velocity: f(7)?,
        };
        if !(t.width > 0.0 && t.height > 0.0) {
            return Err(IngestError::Format {
                file: "tracks",
                row,
                message: format!("box size {}x{} must be positive", t.width, t.height),
            });
        }
        rows.push(t);
    }
    Ok(rows)
}

pub fn parse_recording<T: Read, M: Read>(tracks_csv: T, meta_csv: M) -> Result<(RecordingMeta, Vec<TrackRow>), IngestError> {
    Ok((parse_meta(meta_csv)?, parse_tracks(tracks_csv)?))
}

pub fn read_recording(tracks: &Path, meta: &Path) -> Result<(RecordingMeta, Vec<TrackRow>), IngestError> {
    parse_recording(std::fs::File::open(tracks)?, std::fs::File::open(meta)?)
}

/// Tracks CSV with the columns this module reads.
pub fn write_tracks<W: Write>(out: W, rows: &[TrackRow]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACK_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.frame.to_string(),
            r.id.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.width.to_string(),
            r.height.to_string(),
            r.x_velocity.to_string(),
            r.y_velocity.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_meta<W: Write>(out: W, meta: &RecordingMeta) -> Result<(), IngestError> {
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
    let mut w = csv::Writer::from_writer(out);
    w.write_record(META_COLUMNS)?;
    w.write_record([
        meta.recording_id.to_string(),
        meta.frame_rate.to_string(),
        meta.speed_limit.unwrap_or(-1.0).to_string(),
        join(&meta.upper_lane_markings),
        join(&meta.lower_lane_markings),
    ])?;
    w.flush()?;
    Ok(())
}

/// Source frames per 0.2 s step.
pub fn stride(meta: &RecordingMeta) -> Result<i64, IngestError> {
    let exact = meta.frame_rate * FRAME_DT;
    let rounded = exact.round();
    if !(rounded >= 1.0) || (exact - rounded).abs() > 1e-9 {
        return Err(IngestError::IncompatibleFrameRate(meta.frame_rate));
    }
    Ok(rounded as i64)
}

/// Keep rows whose frame is a whole number of strides after the first frame.
pub fn downsample(rows: &[TrackRow], meta: &RecordingMeta) -> Result<Vec<TrackRow>, IngestError> {
    let step = stride(meta)?;
    let Some(first) = rows.iter().map(|r| r.frame).min() else {
        return Ok(Vec::new());
    };
    Ok(rows.iter().filter(|r| (r.frame - first) % step == 0).copied().collect())
}

/// Lateral description of one carriageway in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    /// World-`y` of the edges and markings, ascending.
    pub lines: Vec<f64>,
}

impl Road {
    fn from_image(markings: &[f64]) -> Option<Self> {
        let mut lines: Vec<f64> = markings.iter().map(|y| -y).collect();
        lines.sort_by(f64::total_cmp);
        (lines.len() >= 2).then_some(Self { lines })
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.lines[0] && y <= self.lines[self.lines.len() - 1]
    }

    fn distance(&self, y: f64) -> f64 {
        (self.lines[0] - y).max(y - self.lines[self.lines.len() - 1]).max(0.0)
    }

    pub fn layout(&self, speed: f64, direction: DriveDirection) -> Result<RoadLayout, SceneError> {
        let n = self.lines.len();
        RoadLayout::new(
            (self.lines[0], self.lines[n - 1]),
            self.lines[1..n - 1].to_vec(),
            vec![speed; n - 1],
            direction,
        )
    }
}

pub fn roads(meta: &RecordingMeta) -> Vec<Road> {
    [&meta.upper_lane_markings, &meta.lower_lane_markings]
        .into_iter()
        .filter_map(|m| Road::from_image(m))
        .collect()
}

/// Road containing `y`, else the closest one.
fn road_of(roads: &[Road], y: f64) -> Option<usize> {
    roads
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.distance(y).total_cmp(&b.1.distance(y)))
        .map(|(k, _)| k)
}

/// Identifies one sample within a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleKey {
    pub recording_id: u32,
    pub tv_id: u32,
    /// Source frame of the most recent observation.
    pub anchor_frame: i64,
}

impl SampleKey {
    pub fn of(seq: &SceneSequence) -> Self {
        Self {
            recording_id: seq.recording_id,
            tv_id: seq.tv_id(),
            anchor_frame: seq.anchor_frame,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub samples: Vec<SceneSequence>,
    /// Vehicles that never had `h + p` consecutive frames.
    pub skipped_vehicles: usize,
}

struct Indexed {
    by_frame: BTreeMap<i64, Vec<TrackRow>>,
    by_vehicle: BTreeMap<u32, Vec<i64>>,
    step: i64,
    roads: Vec<Road>,
    speed: f64,
}

impl Indexed {
    fn new(rows: &[TrackRow], meta: &RecordingMeta, h: usize, p: usize) -> Result<Self, IngestError> {
        if h == 0 || p == 0 {
            return Err(IngestError::Scene(SceneError::InvalidSequence("h and p must be at least 1".into())));
        }
        let step = stride(meta)?;
        let mut by_frame: BTreeMap<i64, Vec<TrackRow>> = BTreeMap::new();
        let mut by_vehicle: BTreeMap<u32, Vec<i64>> = BTreeMap::new();
        for r in downsample(rows, meta)? {
            by_frame.entry(r.frame).or_default().push(r);
            by_vehicle.entry(r.id).or_default().push(r.frame);
        }
        for frames in by_vehicle.values_mut() {
            frames.sort_unstable();
            frames.dedup();
        }
        Ok(Self {
            by_frame,
            by_vehicle,
            step,
            roads: roads(meta),
            speed: meta.speed_limit.unwrap_or(DEFAULT_NOMINAL_SPEED),
        })
    }

    fn row(&self, frame: i64, id: u32) -> Option<&TrackRow> {
        self.by_frame.get(&frame)?.iter().find(|r| r.id == id)
    }

    /// Anchor frames where `id` has `h` past and `p` future frames.
    fn anchors(&self, id: u32, h: usize, p: usize) -> Vec<i64> {
        let Some(frames) = self.by_vehicle.get(&id) else {
            return Vec::new();
        };
        let need = h + p;
        let mut out = Vec::new();
        let mut run_start = 0;
        for k in 0..frames.len() {
            if k > 0 && frames[k] - frames[k - 1] != self.step {
                run_start = k;
            }
            if k + 1 - run_start >= need {
                out.push(frames[k + 1 - p - 1]);
            }
        }
        out
    }

    fn sample(&self, recording_id: u32, tv_id: u32, anchor: i64, h: usize, p: usize) -> Result<SceneSequence, IngestError> {
        let tv_at_anchor = self.row(anchor, tv_id).ok_or_else(|| {
            IngestError::Scene(SceneError::InvalidSequence(format!("vehicle {tv_id} absent at frame {anchor}")))
        })?;
        let tv_y = tv_at_anchor.center().y;
        let road_idx = road_of(&self.roads, tv_y).ok_or_else(|| {
            IngestError::Scene(SceneError::InvalidLayout("recording has no lane markings".into()))
        })?;
        let road = &self.roads[road_idx];
        let direction = if tv_at_anchor.x_velocity < 0.0 {
            DriveDirection::RightToLeft
        } else {
            DriveDirection::LeftToRight
        };
        let layout = road.layout(self.speed, direction)?;

        let frames = (0..h)
            .map(|k| {
                let frame = anchor - (h - 1 - k) as i64 * self.step;
                let vehicles = self.by_frame[&frame]
                    .iter()
                    .filter(|r| r.id == tv_id || road_of(&self.roads, r.center().y) == Some(road_idx))
                    .map(|r| {
                        let v = r.to_vehicle();
                        if r.id == tv_id {
                            v.target()
                        } else {
                            v
                        }
                    })
                    .collect();
                let t = (k as f64 - (h - 1) as f64) * FRAME_DT;
                SceneFrame::new(t, vehicles, layout.clone())
            })
            .collect::<Result<Vec<_>, _>>()?;
        let truth = (1..=p as i64)
            .map(|j| {
                self.row(anchor + j * self.step, tv_id)
                    .map(TrackRow::center)
                    .ok_or_else(|| SceneError::InvalidSequence(format!("vehicle {tv_id} has no future at +{j}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SceneSequence::new(recording_id, anchor, frames, Trajectory::new(truth))?)
    }
}

/// One sample per (vehicle, anchor) with `h` observed and `p` future
/// frames at 0.2 s spacing. Rows are downsampled first, so raw and
/// pre-downsampled inputs give the same result.
pub fn extract_samples(rows: &[TrackRow], meta: &RecordingMeta, h: usize, p: usize) -> Result<Extraction, IngestError> {
    let index = Indexed::new(rows, meta, h, p)?;
    let mut out = Extraction::default();
    for &id in index.by_vehicle.keys() {
        let anchors = index.anchors(id, h, p);
        if anchors.is_empty() {
            out.skipped_vehicles += 1;
        }
        for anchor in anchors {
            out.samples.push(index.sample(meta.recording_id, id, anchor, h, p)?);
        }
    }
    Ok(out)
}

/// Keys of every sample [`extract_samples`] would produce, without
/// building the frames, and the number of vehicles too short for any.
pub fn sample_keys(rows: &[TrackRow], meta: &RecordingMeta, h: usize, p: usize) -> Result<(Vec<SampleKey>, usize), IngestError> {
    let index = Indexed::new(rows, meta, h, p)?;
    let mut keys = Vec::new();
    let mut skipped = 0;
    for &id in index.by_vehicle.keys() {
        let anchors = index.anchors(id, h, p);
        if anchors.is_empty() {
            skipped += 1;
        }
        keys.extend(anchors.into_iter().map(|anchor_frame| SampleKey {
            recording_id: meta.recording_id,
            tv_id: id,
            anchor_frame,
        }));
    }
    Ok((keys, skipped))
}

/// Rebuild a single sample.
pub fn extract_sample(rows: &[TrackRow], meta: &RecordingMeta, key: SampleKey, h: usize, p: usize) -> Result<SceneSequence, IngestError> {
    let index = Indexed::new(rows, meta, h, p)?;
    if !index.anchors(key.tv_id, h, p).contains(&key.anchor_frame) {
        return Err(IngestError::Scene(SceneError::InvalidSequence(format!(
            "vehicle {} has no {h}+{p} window anchored at frame {}",
            key.tv_id, key.anchor_frame
        ))));
    }
    index.sample(meta.recording_id, key.tv_id, key.anchor_frame, h, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitName {
    Train,
    Test,
    Val,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Test => "test",
            SplitName::Val => "val",
        })
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "test" => Ok(SplitName::Test),
            "val" => Ok(SplitName::Val),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    /// Train, test and validation fractions.
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: (0.7, 0.2, 0.1),
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        let (a, b, c) = self.ratios;
        if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(IngestError::InvalidSplit(format!("ratios {a}/{b}/{c} must be in [0, 1] and sum to 1")));
        }
        Ok(())
    }

    /// Whole counts for `n` groups by largest remainder.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let (a, b, c) = self.ratios;
        let exact = [a, b, c].map(|r| r * n as f64);
        let mut counts = exact.map(|e| e.floor() as usize);
        let mut order = [0, 1, 2];
        order.sort_by(|&i, &j| (exact[j] - exact[j].floor()).total_cmp(&(exact[i] - exact[i].floor())));
        let mut left = n - counts.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

/// Items partitioned so that every recording lands in exactly one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub val: Vec<T>,
}

impl<T> Splits<T> {
    pub fn get(&self, name: SplitName) -> &[T] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Test => &self.test,
            SplitName::Val => &self.val,
        }
    }
}

/// Assign each recording id to a split, shuffling with the spec's seed.
pub fn assign_recordings(ids: impl IntoIterator<Item = u32>, spec: &SplitSpec) -> Result<HashMap<u32, SplitName>, IngestError> {
    spec.validate()?;
    let mut ids: Vec<u32> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let [train, test, _] = spec.counts(ids.len());
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(k, id)| {
            let name = if k < train {
                SplitName::Train
            } else if k < train + test {
                SplitName::Test
            } else {
                SplitName::Val
            };
            (id, name)
        })
        .collect())
}

pub fn split<T>(items: Vec<T>, recording_of: impl Fn(&T) -> u32, spec: &SplitSpec) -> Result<Splits<T>, IngestError> {
    let assignment = assign_recordings(items.iter().map(&recording_of), spec)?;
    let mut out = Splits {
        train: Vec::new(),
        test: Vec::new(),
        val: Vec::new(),
    };
    for item in items {
        match assignment[&recording_of(&item)] {
            SplitName::Train => out.train.push(item),
            SplitName::Test => out.test.push(item),
            SplitName::Val => out.val.push(item),
        }
    }
    Ok(out)
}

/// Where a recording's files live.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingSource {
    pub recording_id: u32,
    pub tracks: PathBuf,
    pub meta: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestEntry {
    pub key: SampleKey,
    pub split: SplitName,
}

/// Sample index written by `ingest`. Comment lines record the window
/// sizes and source files; the CSV body lists one sample per line.
///
/// ```text
/// # h=10 p=25
/// # recording<TAB>1<TAB>data/01_tracks.csv<TAB>data/01_recordingMeta.csv
/// recording_id,tv_id,anchor_frame,split
/// 1,12,345,train
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub h: usize,
    pub p: usize,
    pub sources: Vec<RecordingSource>,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_HEADER: &str = "recording_id,tv_id,anchor_frame,split";

impl Manifest {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), IngestError> {
        writeln!(out, "# h={} p={}", self.h, self.p)?;
        for s in &self.sources {
            writeln!(out, "# recording\t{}\t{}\t{}", s.recording_id, s.tracks.display(), s.meta.display())?;
        }
        writeln!(out, "{MANIFEST_HEADER}")?;
        for e in &self.entries {
            writeln!(out, "{},{},{},{}", e.key.recording_id, e.key.tv_id, e.key.anchor_frame, e.split)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, IngestError> {
        let mut h = None;
        let mut p = None;
        let mut sources = Vec::new();
        let mut entries = Vec::new();
        let mut seen_header = false;
        for (idx, line) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let bad = |message: String| IngestError::Manifest { line: line_no, message };
            let text = line.trim_end_matches('\r');
            if let Some(comment) = text.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(rest) = comment.strip_prefix("recording\t") {
                    let parts: Vec<&str> = rest.split('\t').collect();
                    let [id, tracks, meta] = parts[..] else {
                        return Err(bad("recording line needs id, tracks and meta".into()));
                    };
                    sources.push(RecordingSource {
                        recording_id: id.parse().map_err(|_| bad(format!("bad recording id `{id}`")))?,
                        tracks: tracks.into(),
                        meta: meta.into(),
                    });
                } else {
                    for kv in comment.split_whitespace() {
                        match kv.split_once('=') {
                            Some(("h", v)) => h = Some(v.parse().map_err(|_| bad(format!("bad h `{v}`")))?),
                            Some(("p", v)) => p = Some(v.parse().map_err(|_| bad(format!("bad p `{v}`")))?),
                            _ => {}
                        }
                    }
                }
                continue;
            }
            if text.trim().is_empty() {
                continue;
            }
            if !seen_header {
                if text.trim() != MANIFEST_HEADER {
                    return Err(bad(format!("expected header `{MANIFEST_HEADER}`")));
                }
                seen_header = true;
                continue;
            }
            let cols: Vec<&str> = text.split(',').map(str::trim).collect();
            let [rec, tv, anchor, split] = cols[..] else {
                return Err(bad(format!("expected 4 fields, got {}", cols.len())));
            };
            entries.push(ManifestEntry {
                key: SampleKey {
                    recording_id: rec.parse().map_err(|_| bad(format!("bad recording id `{rec}`")))?,
                    tv_id: tv.parse().map_err(|_| bad(format!("bad vehicle id `{tv}`")))?,
                    anchor_frame: anchor.parse().map_err(|_| bad(format!("bad frame `{anchor}`")))?,
                },
                split: split.parse().map_err(bad)?,
            });
        }
        if !seen_header {
            return Err(IngestError::Manifest {
                line: 0,
                message: "missing header".into(),
            });
        }
        Ok(Self {
            h: h.unwrap_or(DEFAULT_H),
            p: p.unwrap_or(DEFAULT_P),
            sources,
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let mut m = Self::read_from(io::BufReader::new(std::fs::File::open(path)?))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for s in &mut m.sources {
            if s.tracks.is_relative() {
                s.tracks = base.join(&s.tracks);
            }
            if s.meta.is_relative() {
                s.meta = base.join(&s.meta);
            }
        }
        Ok(m)
    }

    pub fn source(&self, recording_id: u32) -> Option<&RecordingSource> {
        self.sources.iter().find(|s| s.recording_id == recording_id)
    }

    /// Rebuild entry `index` from its recording files.
    pub fn load_sample(&self, index: usize) -> Result<SceneSequence, IngestError> {
        let entry = self.entries.get(index).ok_or_else(|| IngestError::Manifest {
            line: 0,
            message: format!("sample {index} out of range ({} samples)", self.entries.len()),
        })?;
        let source = self.source(entry.key.recording_id).ok_or_else(|| IngestError::Manifest {
            line: 0,
            message: format!("no source files for recording {}", entry.key.recording_id),
        })?;
        let (meta, rows) = read_recording(&source.tracks, &source.meta)?;
        extract_sample(&rows, &meta, entry.key, self.h, self.p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(id: u32, rate: f64) -> RecordingMeta {
        RecordingMeta {
            recording_id: id,
            frame_rate: rate,
            upper_lane_markings: vec![1.0, 4.75, 8.5],
            lower_lane_markings: vec![12.0, 15.75, 19.5],
            speed_limit: None,
        }
    }

    /// Vehicle `id` on the lower road, present for `frames` source frames.
    fn track(id: u32, start: i64, frames: i64, x0: f64, y_center: f64, vx: f64, rate: f64) -> Vec<TrackRow> {
        (0..frames)
            .map(|k| TrackRow {
                frame: start + k,
                id,
                x: x0 + vx * k as f64 / rate - 2.25,
                y: y_center - 0.9,
                width: 4.5,
                height: 1.8,
                x_velocity: vx,
                y_velocity: 0.0,
            })
            .collect()
    }

    #[test]
    fn parse_header_only_and_rows() {
        let meta_csv = "id,frameRate,locationId,speedLimit,upperLaneMarkings,lowerLaneMarkings\n3,25,2,-1,1;4.75;8.5,12;15.75;19.5\n";
        let (m, rows) = parse_recording(&b"frame,id,x,y,width,height,xVelocity,yVelocity\n"[..], meta_csv.as_bytes()).unwrap();
        assert!(rows.is_empty());
        assert_eq!(m, meta(3, 25.0));

        let tracks = "frame,id,x,y,width,height,xVelocity,yVelocity,laneId\n1,1,10,12.5,4.5,1.8,30,0.1,2\n1,1,11,12.5,4.5,1.8,30,0.1,2\n1,2,30,16,4.1,1.9,28,0,3\n";
        let rows = parse_tracks(tracks.as_bytes()).unwrap();
        assert_eq!(rows.iter().map(|r| r.id).collect::<Vec<_>>(), vec![1, 1, 2]);
        assert_eq!(rows[1].x, 11.0);
        let c = rows[0].center();
        assert!((c.x - 12.25).abs() < 1e-12 && (c.y + 13.4).abs() < 1e-12);
        assert_eq!(rows[0].velocity(), Vec2::new(30.0, -0.1));
    }

    #[test]
    fn parse_errors() {
        let missing = parse_tracks(&b"frame,id,x,y,width,xVelocity,yVelocity\n"[..]).unwrap_err();
        assert!(matches!(missing, IngestError::MissingColumn { column: "height", .. }));
        let bad = "frame,id,x,y,width,height,xVelocity,yVelocity\n1,1,10,12.5,4.5,1.8,30,0\n2,1,oops,12.5,4.5,1.8,30,0\n";
        assert!(matches!(parse_tracks(bad.as_bytes()), Err(IngestError::Format { row: 3, .. })));
        let meta_missing = parse_meta(&b"id,frameRate\n1,25\n"[..]).unwrap_err();
        assert!(matches!(meta_missing, IngestError::MissingColumn { column: "speedLimit", .. }));
    }

    #[test]
    fn tracks_round_trip() {
        let rows = track(4, 10, 7, 3.3, 14.0, 31.7, 25.0);
        let mut buf = Vec::new();
        write_tracks(&mut buf, &rows).unwrap();
        assert_eq!(parse_tracks(&buf[..]).unwrap(), rows);

        let m = RecordingMeta {
            speed_limit: Some(33.33),
            ..meta(9, 25.0)
        };
        let mut buf = Vec::new();
        write_meta(&mut buf, &m).unwrap();
        assert_eq!(parse_meta(&buf[..]).unwrap(), m);
    }

    #[test]
    fn downsample_strides() {
        let rows = track(1, 0, 100, 0.0, 14.0, 30.0, 25.0);
        let kept = downsample(&rows, &meta(1, 25.0)).unwrap();
        assert_eq!(kept.len(), 20);
        assert!(kept.iter().all(|r| r.frame % 5 == 0));
        assert_eq!(downsample(&rows, &meta(1, 5.0)).unwrap(), rows);
        assert!(matches!(
            downsample(&rows, &meta(1, 12.0)),
            Err(IngestError::IncompatibleFrameRate(_))
        ));
    }

    #[test]
    fn sample_counts() {
        let m = meta(1, 25.0);
        let (h, p) = (10, 25);
        let exact = track(1, 0, 5 * 35, 0.0, 14.0, 30.0, 25.0);
        assert_eq!(extract_samples(&exact, &m, h, p).unwrap().samples.len(), 1);
        let short = track(1, 0, 5 * 34, 0.0, 14.0, 30.0, 25.0);
        let e = extract_samples(&short, &m, h, p).unwrap();
        assert_eq!((e.samples.len(), e.skipped_vehicles), (0, 1));

        let mut two = track(1, 0, 5 * 40, 0.0, 14.0, 30.0, 25.0);
        two.extend(track(2, 0, 5 * 40, 30.0, 17.5, 25.0, 25.0));
        let e = extract_samples(&two, &m, h, p).unwrap();
        assert_eq!(e.samples.len(), 2 * (40 - 35 + 1));
        assert_eq!(sample_keys(&two, &m, h, p).unwrap(), (e.samples.iter().map(SampleKey::of).collect::<Vec<_>>(), 0));
        assert_eq!(sample_keys(&short, &m, h, p).unwrap(), (vec![], 1));
        assert!(sample_keys(&short, &m, 0, p).is_err());
    }

    #[test]
    fn gaps_break_windows() {
        let m = meta(1, 5.0);
        let mut rows = track(1, 0, 10, 0.0, 14.0, 30.0, 5.0);
        rows.extend(track(1, 11, 10, 70.0, 14.0, 30.0, 5.0));
        assert_eq!(extract_samples(&rows, &m, 4, 4).unwrap().samples.len(), 2 * 3);
    }

    #[test]
    fn sample_contents() {
        let m = meta(7, 25.0);
        let mut rows = track(1, 0, 5 * 40, 0.0, 14.0, 30.0, 25.0);
        rows.extend(track(2, 0, 5 * 40, 30.0, 17.5, 25.0, 25.0));
        // same frames, opposite road
        rows.extend(track(3, 0, 5 * 40, 300.0, 3.0, -28.0, 25.0));
        let e = extract_samples(&rows, &m, 10, 25).unwrap();
        let s = e.samples.iter().find(|s| s.tv_id() == 1).unwrap();
        assert_eq!(s.recording_id, 7);
        assert_eq!(s.anchor_frame, 45);
        assert_eq!(s.h(), 10);
        assert_eq!(s.p(), 25);
        let last = s.latest();
        assert_eq!(last.vehicles.len(), 2);
        assert_eq!(last.layout.direction, DriveDirection::LeftToRight);
        assert_eq!(last.layout.road_edges, (-19.5, -12.0));
        assert_eq!(last.layout.lane_markings, vec![-15.75]);
        assert_eq!(last.layout.lane_speeds, vec![DEFAULT_NOMINAL_SPEED; 2]);
        assert!((last.timestamp).abs() < 1e-12);
        assert!((s.frames[0].timestamp + 1.8).abs() < 1e-12);
        // 0.2 s ahead of the anchor at 30 m/s
        let tv_now = last.target().unwrap().center;
        assert!((s.future_truth.points[0].x - tv_now.x - 6.0).abs() < 1e-9);

        let upper = e.samples.iter().find(|s| s.tv_id() == 3).unwrap();
        assert_eq!(upper.latest().layout.direction, DriveDirection::RightToLeft);
        assert_eq!(upper.latest().vehicles.len(), 1);

        let key = SampleKey::of(s);
        assert_eq!(&extract_sample(&rows, &m, key, 10, 25).unwrap(), s);
        let missing = SampleKey { anchor_frame: 46, ..key };
        assert!(extract_sample(&rows, &m, missing, 10, 25).is_err());
    }

    #[test]
    fn downsampling_commutes_with_extraction() {
        let m = meta(1, 25.0);
        let mut rows = track(1, 3, 5 * 20 + 2, 0.0, 14.0, 30.0, 25.0);
        rows.extend(track(2, 3, 5 * 18, 12.0, 17.5, 27.0, 25.0));
        let direct = extract_samples(&rows, &m, 3, 5).unwrap().samples;
        let pre = downsample(&rows, &m).unwrap();
        assert_eq!(extract_samples(&pre, &m, 3, 5).unwrap().samples, direct);
        assert!(!direct.is_empty());
    }

    #[test]
    fn split_by_recording() {
        let items: Vec<(u32, usize)> = (0..10u32).flat_map(|r| (0..3).map(move |k| (r, k))).collect();
        let spec = SplitSpec::default();
        let s = split(items.clone(), |i| i.0, &spec).unwrap();
        let recs = |v: &[(u32, usize)]| v.iter().map(|i| i.0).collect::<BTreeSet<_>>();
        assert_eq!((recs(&s.train).len(), recs(&s.test).len(), recs(&s.val).len()), (7, 2, 1));
        assert_eq!(split(items, |i| i.0, &spec).unwrap(), s);

        let one = split(vec![(5u32, 0usize)], |i| i.0, &spec).unwrap();
        assert_eq!(one.train.len(), 1);
        assert!(matches!(
            split(vec![1u32], |&i| i, &SplitSpec { ratios: (0.5, 0.2, 0.1), seed: 0 }),
            Err(IngestError::InvalidSplit(_))
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            h: 10,
            p: 25,
            sources: vec![RecordingSource {
                recording_id: 1,
                tracks: "data/01 tracks.csv".into(),
                meta: "data/01_recordingMeta.csv".into(),
            }],
            entries: vec![
                ManifestEntry {
                    key: SampleKey {
                        recording_id: 1,
                        tv_id: 12,
                        anchor_frame: 345,
                    },
                    split: SplitName::Train,
                },
                ManifestEntry {
                    key: SampleKey {
                        recording_id: 1,
                        tv_id: 3,
                        anchor_frame: 50,
                    },
                    split: SplitName::Val,
                },
            ],
        };
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("recording_id,tv_id,anchor_frame,split\n1,12,345,train\n"));
        assert_eq!(Manifest::read_from(&buf[..]).unwrap(), m);

        let bad = "recording_id,tv_id,anchor_frame,split\n1,2,3,holdout\n";
        assert!(matches!(Manifest::read_from(bad.as_bytes()), Err(IngestError::Manifest { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(ids in proptest::collection::vec(0u32..40, 0..200), seed in any::<u64>()) {
            let spec = SplitSpec { ratios: (0.7, 0.2, 0.1), seed };
            let items: Vec<(usize, u32)> = ids.iter().copied().enumerate().collect();
            let s = split(items.clone(), |i| i.1, &spec).unwrap();
            let mut all: Vec<_> = s.train.iter().chain(&s.test).chain(&s.val).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
            let recs = |v: &[(usize, u32)]| v.iter().map(|i| i.1).collect::<BTreeSet<_>>();
            let (a, b, c) = (recs(&s.train), recs(&s.test), recs(&s.val));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            let n = ids.iter().collect::<BTreeSet<_>>().len() as f64;
            for (got, r) in [(a.len(), 0.7), (b.len(), 0.2), (c.len(), 0.1)] {
                prop_assert!((got as f64 - r * n).abs() <= 1.0);
            }
        }

        #[test]
        fn counts_sum(n in 0usize..500, a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let (a, b) = (a, b * (1.0 - a));
            let spec = SplitSpec { ratios: (a, b, 1.0 - a - b), seed: 0 };
            let c = spec.counts(n);
            prop_assert_eq!(c.iter().sum::<usize>(), n);
        }
    }
}
