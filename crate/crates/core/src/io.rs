//! File formats: detection streams (JSON lines or CSV), the truth sidecar
//! written next to simulated streams, and per-scan track records.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{PatternLikelihoodTrace, TraceRow};
use crate::kinematics::{Detection, Platform};
use crate::simulator::{Pincer, Scenario};
use crate::tracker::N_MODES;
use crate::Real;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Serialize(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectionFormat {
    Jsonl,
    Csv,
}

impl DetectionFormat {
    /// `.csv` is CSV; anything else is JSON lines.
    pub fn from_path(p: &Path) -> Self {
        match p.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DetectionFormat::Csv,
            _ => DetectionFormat::Jsonl,
        }
    }
}

/// Column order of the CSV detection format.
pub const DETECTION_CSV_HEADER: [&str; 10] = ["t", "r", "rdot", "theta", "px", "py", "pz", "pvx", "pvy", "is_miss"];

#[derive(Serialize, Deserialize)]
struct DetectionRow<T> {
    t: usize,
    r: T,
    rdot: T,
    theta: T,
    px: T,
    py: T,
    pz: T,
    pvx: T,
    pvy: T,
    is_miss: bool,
}

impl<T: Real> From<&Detection<T>> for DetectionRow<T> {
    fn from(d: &Detection<T>) -> Self {
        let p = &d.platform;
        DetectionRow {
            t: d.t,
            r: d.r,
            rdot: d.rdot,
            theta: d.theta,
            px: p.x,
            py: p.y,
            pz: p.z,
            pvx: p.vx,
            pvy: p.vy,
            is_miss: d.is_miss,
        }
    }
}

impl<T: Real> From<DetectionRow<T>> for Detection<T> {
    fn from(r: DetectionRow<T>) -> Self {
        Detection {
            t: r.t,
            r: r.r,
            rdot: r.rdot,
            theta: r.theta,
            platform: Platform { x: r.px, y: r.py, z: r.pz, vx: r.pvx, vy: r.pvy },
            is_miss: r.is_miss,
        }
    }
}

pub fn write_detections<T, W>(out: W, ds: &[Detection<T>], format: DetectionFormat) -> Result<(), IoError>
where
    T: Real + Serialize,
    W: Write,
{
    match format {
        DetectionFormat::Jsonl => write_jsonl(out, ds),
        DetectionFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            let csv_err = |e: csv::Error| IoError::Csv { line: 0, msg: e.to_string() };
            // written by hand so an empty stream still has its header
            w.write_record(DETECTION_CSV_HEADER).map_err(csv_err)?;
            for d in ds {
                w.serialize(DetectionRow::from(d)).map_err(csv_err)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

/// Reads a detection stream. Blank lines are skipped in JSON lines input;
/// errors carry the 1-based line number.
pub fn read_detections<T, R>(input: R, format: DetectionFormat) -> Result<Vec<Detection<T>>, IoError>
where
    T: Real + DeserializeOwned,
    R: BufRead,
{
    match format {
        DetectionFormat::Jsonl => read_jsonl(input),
        DetectionFormat::Csv => {
            let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
            let header = rd.headers().map_err(|e| IoError::Csv { line: 1, msg: e.to_string() })?.clone();
            if header.iter().ne(DETECTION_CSV_HEADER) {
                return Err(IoError::Csv { line: 1, msg: format!("expected header {}", DETECTION_CSV_HEADER.join(",")) });
            }
            let mut out = Vec::new();
            for rec in rd.deserialize::<DetectionRow<T>>() {
                match rec {
                    Ok(r) => out.push(r.into()),
                    Err(e) => {
                        let line = e.position().map_or(0, |p| p.line() as usize);
                        return Err(IoError::Csv { line, msg: e.to_string() });
                    }
                }
            }
            Ok(out)
        }
    }
}

pub fn read_detections_file<T: Real + DeserializeOwned>(path: &Path) -> Result<Vec<Detection<T>>, IoError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_detections(f, DetectionFormat::from_path(path))
}

/// One JSON document per line.
pub fn write_jsonl<S: Serialize, W: Write>(mut out: W, items: &[S]) -> Result<(), IoError> {
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<S: DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<S>, IoError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| IoError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

/// True state at one scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub mode: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthTarget {
    pub label: String,
    pub modes: Vec<String>,
    pub states: Vec<TruthState>,
}

/// Where detection `i` of the stream came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionSource {
    pub target: usize,
    pub truth_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub targets: Vec<TruthTarget>,
    /// One entry per detection, in stream order.
    pub detections: Vec<DetectionSource>,
}

impl TruthSidecar {
    pub fn from_scenario<T: Real>(s: &Scenario<T>, scans_per_mode: usize) -> Self {
        TruthSidecar {
            targets: vec![truth_target(s, scans_per_mode)],
            detections: (0..s.detections.len()).map(|i| DetectionSource { target: 0, truth_index: i }).collect(),
        }
    }

    pub fn from_pincer<T: Real>(p: &Pincer<T>, scans_per_mode: usize) -> Self {
        TruthSidecar {
            targets: p.targets.iter().map(|s| truth_target(s, scans_per_mode)).collect(),
            detections: p
                .stream
                .iter()
                .map(|d| DetectionSource { target: d.source, truth_index: d.truth_index })
                .collect(),
        }
    }

    pub fn labels(&self) -> Vec<&str> {
        self.targets.iter().map(|t| t.label.as_str()).collect()
    }

    /// Every detection points at an existing truth state.
    pub fn is_consistent(&self) -> bool {
        self.detections
            .iter()
            .all(|d| self.targets.get(d.target).is_some_and(|t| d.truth_index < t.states.len()))
    }
}

fn truth_target<T: Real>(s: &Scenario<T>, scans_per_mode: usize) -> TruthTarget {
    let states = s
        .truth
        .iter()
        .enumerate()
        .map(|(k, x)| TruthState {
            t: x.t,
            x: x.mean[0].to_f64_lossy(),
            y: x.mean[1].to_f64_lossy(),
            vx: x.mean[2].to_f64_lossy(),
            vy: x.mean[3].to_f64_lossy(),
            mode: s.modes.get(k / scans_per_mode.max(1)).cloned().unwrap_or_default(),
        })
        .collect();
    TruthTarget { label: s.label.clone(), modes: s.modes.clone(), states }
}

/// Tracker output at one scan of one hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub hypothesis: usize,
    pub t: usize,
    pub is_miss: bool,
    /// `[x, y, vx, vy]`.
    pub state: [f64; 4],
    /// Row-major 4x4.
    pub cov: Vec<f64>,
    pub mode_probs: [f64; N_MODES],
    pub n_eff: Option<f64>,
}

impl TrackRecord {
    pub fn from_row(hypothesis: usize, r: &TraceRow) -> Self {
        TrackRecord {
            hypothesis,
            t: r.scan,
            is_miss: r.is_miss,
            state: r.state,
            cov: r.cov.to_vec(),
            mode_probs: r.mode_probs,
            n_eff: r.n_eff,
        }
    }
}

pub fn track_records(trace: &PatternLikelihoodTrace) -> Vec<TrackRecord> {
    trace.rows.iter().map(|r| TrackRecord::from_row(trace.hypothesis, r)).collect()
}
