//! Grid sweeps over `(L1, L2, h1, h2, R)` with checkpointing.
//!
//! Filters depend only on `(L1, L2)`, so each pair is trained once and its
//! decimal maps are reused for every block geometry. Records are appended
//! to a CSV in chunks, with a sidecar `<csv>.ckpt.json` identifying the grid
//! and dataset; a resumed run skips points already in the CSV. When the grid
//! is complete the CSV is rewritten in canonical order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::{split, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::PreparedNet;
use crate::exec::Exec;
use crate::pcanet::{NetConfig, Overlap};

/// Either `"diagonal"` (`h2 = floor(n * h1 / m)`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum H2Mode {
    Diagonal,
    Explicit(Vec<usize>),
}

impl Serialize for H2Mode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            H2Mode::Diagonal => s.serialize_str("diagonal"),
            H2Mode::Explicit(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for H2Mode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Mode(String),
            List(Vec<usize>),
        }
        match Raw::deserialize(d)? {
            Raw::Mode(s) if s == "diagonal" => Ok(H2Mode::Diagonal),
            Raw::Mode(s) => Err(serde::de::Error::custom(format!(
                "h2 must be \"diagonal\" or a list of sizes, got {s:?}"
            ))),
            Raw::List(v) => Ok(H2Mode::Explicit(v)),
        }
    }
}

fn default_k() -> usize {
    3
}

fn default_true() -> bool {
    true
}

/// Sweep definition, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(rename = "L1")]
    pub l1: Vec<usize>,
    #[serde(rename = "L2")]
    pub l2: Vec<usize>,
    pub h1: Vec<usize>,
    pub h2: H2Mode,
    #[serde(rename = "R")]
    pub r: Vec<Overlap>,
    pub seed: u64,
    pub train_count: usize,
    pub test_count: usize,
    #[serde(default = "default_true")]
    pub stratified: bool,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub skip_second_mean_removal: bool,
}

/// One grid coordinate. Field order is the canonical sort order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub l1: usize,
    pub l2: usize,
    pub h1: usize,
    pub h2: usize,
    pub r: Overlap,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        let kk = self.k * self.k;
        for (name, v) in [("L1", &self.l1), ("L2", &self.l2)] {
            if v.is_empty() {
                return Err(Error::precondition(name, "range is empty"));
            }
            if let Some(&l) = v.iter().find(|&&l| l < 1 || l > kk) {
                return Err(Error::precondition(name, format!("{l} violates 1 <= {name} <= k1*k2 = {kk}")));
            }
        }
        if self.h1.is_empty() {
            return Err(Error::precondition("h1", "range is empty"));
        }
        if self.h1.contains(&0) {
            return Err(Error::precondition("h1", "block sizes must be >= 1"));
        }
        if let H2Mode::Explicit(v) = &self.h2 {
            if v.is_empty() {
                return Err(Error::precondition("h2", "range is empty"));
            }
            if v.contains(&0) {
                return Err(Error::precondition("h2", "block sizes must be >= 1"));
            }
        }
        if self.r.is_empty() {
            return Err(Error::precondition("R", "range is empty"));
        }
        if self.k.is_multiple_of(2) {
            return Err(Error::precondition("k", format!("patch size {} must be odd", self.k)));
        }
        Ok(())
    }

    /// All grid points for `m x n` images, deduplicated, in canonical order.
    pub fn points(&self, m: usize, n: usize) -> Vec<GridPoint> {
        let mut set = BTreeSet::new();
        for &l1 in &self.l1 {
            for &l2 in &self.l2 {
                for &h1 in &self.h1 {
                    let h2s = match &self.h2 {
                        H2Mode::Diagonal => vec![diagonal_h2(m, n, h1)],
                        H2Mode::Explicit(v) => v.clone(),
                    };
                    for h2 in h2s {
                        for &r in &self.r {
                            set.insert(GridPoint { l1, l2, h1, h2, r });
                        }
                    }
                }
            }
        }
        set.into_iter().collect()
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_count: self.train_count,
            test_count: self.test_count,
            seed: self.seed,
            stratified: self.stratified,
        }
    }

    fn net_config(&self, l1: usize, l2: usize) -> NetConfig {
        NetConfig {
            k1: self.k,
            k2: self.k,
            l1,
            l2,
            skip_second_mean_removal: self.skip_second_mean_removal,
            ..NetConfig::default()
        }
    }
}

pub fn diagonal_h2(m: usize, n: usize, h1: usize) -> usize {
    n * h1 / m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Infeasible,
}

/// Error rate sentinel for block geometries that cannot run.
pub const INFEASIBLE_ERROR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    #[serde(rename = "L1")]
    pub l1: usize,
    #[serde(rename = "L2")]
    pub l2: usize,
    pub h1: usize,
    pub h2: usize,
    #[serde(rename = "R")]
    pub r: Overlap,
    pub e: f64,
    pub block_energy: Option<f64>,
    pub status: Status,
    pub wall_time: Option<f64>,
}

impl SweepRecord {
    pub fn point(&self) -> GridPoint {
        GridPoint {
            l1: self.l1,
            l2: self.l2,
            h1: self.h1,
            h2: self.h2,
            r: self.r,
        }
    }

    fn new(p: GridPoint, e: f64, block_energy: Option<f64>, status: Status, wall_time: Option<f64>) -> Self {
        SweepRecord {
            l1: p.l1,
            l2: p.l2,
            h1: p.h1,
            h2: p.h2,
            r: p.r,
            e,
            block_energy,
            status,
            wall_time,
        }
    }
}

pub const CSV_HEADER: [&str; 9] = ["L1", "L2", "h1", "h2", "R", "e", "block_energy", "status", "wall_time"];

fn csv_row(r: &SweepRecord) -> [String; 9] {
    [
        r.l1.to_string(),
        r.l2.to_string(),
        r.h1.to_string(),
        r.h2.to_string(),
        r.r.to_string(),
        r.e.to_string(),
        r.block_energy.map(|v| v.to_string()).unwrap_or_default(),
        match r.status {
            Status::Ok => "ok".into(),
            Status::Infeasible => "infeasible".into(),
        },
        r.wall_time.map(|v| format!("{v:.6}")).unwrap_or_default(),
    ]
}

pub fn write_records(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(csv_row(r))?;
    }
    w.flush()?;
    Ok(())
}

fn append_records(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let fresh = !path.exists();
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(CSV_HEADER)?;
    }
    for r in records {
        w.write_record(csv_row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            offset: 0,
            reason: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
        let perr = |what: &str, v: &str| Error::Parse {
            offset,
            reason: format!("bad {what} {v:?}"),
        };
        let us = |i: usize, what: &str| rec[i].parse::<usize>().map_err(|_| perr(what, &rec[i]));
        let fl = |i: usize, what: &str| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                rec[i].parse::<f64>().map(Some).map_err(|_| perr(what, &rec[i]))
            }
        };
        let r = rec[4]
            .parse::<f64>()
            .ok()
            .and_then(|v| Overlap::from_ratio(v).ok())
            .ok_or_else(|| perr("R", &rec[4]))?;
        let status = match &rec[7] {
            "ok" => Status::Ok,
            "infeasible" => Status::Infeasible,
            s => return Err(perr("status", s)),
        };
        out.push(SweepRecord {
            l1: us(0, "L1")?,
            l2: us(1, "L2")?,
            h1: us(2, "h1")?,
            h2: us(3, "h2")?,
            r,
            e: fl(5, "e")?.ok_or_else(|| perr("e", ""))?,
            block_energy: fl(6, "block_energy")?,
            status,
            wall_time: fl(8, "wall_time")?,
        });
    }
    Ok(out)
}

/// Identity of a sweep, stored next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub grid: SweepGrid,
    pub dataset: String,
    pub dataset_hash: String,
    pub total_points: usize,
    pub completed_points: usize,
    pub finished: bool,
}

pub fn checkpoint_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".ckpt.json");
    PathBuf::from(s)
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = tmp_path(path);
    let mut f = std::fs::File::create(&tmp)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.sync_all()?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".tmp");
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub exec: Exec,
    /// Reuse filters and decimal maps across block parameters.
    pub cache_filters: bool,
    /// Record CSV; checkpointing is off when `None`.
    pub output: Option<PathBuf>,
    /// Continue from an existing CSV instead of starting over.
    pub resume: bool,
    /// Fill the `wall_time` column (makes the CSV run-dependent).
    pub timing: bool,
    /// Points per checkpoint append.
    pub chunk: usize,
    /// Stop after this many newly evaluated points (for interruption tests).
    pub max_points: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            exec: Exec::default(),
            cache_filters: true,
            output: None,
            resume: false,
            timing: false,
            chunk: 100,
            max_points: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Every record known so far, in canonical order.
    pub records: Vec<SweepRecord>,
    pub complete: bool,
}

fn feasible(p: &GridPoint, m: usize, n: usize) -> bool {
    p.h1 >= 1 && p.h2 >= 1 && p.h1 <= m && p.h2 <= n
}

struct Sink<'a> {
    path: Option<&'a Path>,
    buffer: Vec<SweepRecord>,
    all: Vec<SweepRecord>,
    chunk: usize,
    info: Option<CheckpointInfo>,
}

impl Sink<'_> {
    fn push(&mut self, recs: Vec<SweepRecord>) -> Result<()> {
        self.buffer.extend(recs);
        if self.buffer.len() >= self.chunk {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(path) = self.path {
            if !self.buffer.is_empty() {
                append_records(path, &self.buffer)?;
            }
            if let Some(info) = &mut self.info {
                info.completed_points += self.buffer.len();
                write_json_atomic(&checkpoint_path(path), info)?;
            }
        }
        self.all.append(&mut self.buffer);
        Ok(())
    }
}

/// Splits `dataset` per the grid and evaluates every grid point.
pub fn run_sweep(dataset: &Dataset, grid: &SweepGrid, opts: &SweepOptions) -> Result<SweepOutcome> {
    grid.validate()?;
    let (train, test) = split(dataset, &grid.split_spec())?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::precondition("split", "train and test sets must be non-empty"));
    }
    if grid.k > dataset.m || grid.k > dataset.n {
        return Err(Error::precondition(
            "k",
            format!("patch {}x{} exceeds image {}x{}", grid.k, grid.k, dataset.m, dataset.n),
        ));
    }
    let (m, n) = (dataset.m, dataset.n);
    let points = grid.points(m, n);

    let mut done: Vec<SweepRecord> = Vec::new();
    let mut info = None;
    if let Some(path) = opts.output.as_deref() {
        let ck = checkpoint_path(path);
        let current = CheckpointInfo {
            grid: grid.clone(),
            dataset: dataset.name.clone(),
            dataset_hash: dataset.content_hash(),
            total_points: points.len(),
            completed_points: 0,
            finished: false,
        };
        if opts.resume && path.exists() {
            let prior: CheckpointInfo = match std::fs::read(&ck) {
                Ok(bytes) => serde_json::from_slice(&bytes)?,
                Err(_) => {
                    return Err(Error::CheckpointMismatch(format!(
                        "{} exists but its checkpoint file {} is missing",
                        path.display(),
                        ck.display()
                    )))
                }
            };
            if prior.grid != current.grid {
                return Err(Error::CheckpointMismatch(format!(
                    "{} was produced by a different grid; rerun without --resume or restore the original grid",
                    path.display()
                )));
            }
            if prior.dataset_hash != current.dataset_hash {
                return Err(Error::CheckpointMismatch(format!(
                    "{} was produced from dataset {:?} with a different content hash",
                    path.display(),
                    prior.dataset
                )));
            }
            done = read_records(path)?;
            let valid: HashSet<GridPoint> = points.iter().copied().collect();
            if let Some(r) = done.iter().find(|r| !valid.contains(&r.point())) {
                return Err(Error::CheckpointMismatch(format!(
                    "record {:?} in {} is not part of the grid",
                    r.point(),
                    path.display()
                )));
            }
        } else {
            let _ = std::fs::remove_file(path);
            write_records(path, &[])?;
        }
        info = Some(CheckpointInfo {
            completed_points: done.len(),
            ..current
        });
    }

    let finished: HashSet<GridPoint> = done.iter().map(SweepRecord::point).collect();
    let mut pending: Vec<GridPoint> = points.iter().copied().filter(|p| !finished.contains(p)).collect();
    let interrupted = opts.max_points.is_some_and(|k| k < pending.len());
    if let Some(k) = opts.max_points {
        pending.truncate(k);
    }

    let mut sink = Sink {
        path: opts.output.as_deref(),
        buffer: Vec::new(),
        all: done,
        chunk: opts.chunk.max(1),
        info,
    };

    let mut groups: BTreeMap<(usize, usize), Vec<GridPoint>> = BTreeMap::new();
    for p in pending {
        groups.entry((p.l1, p.l2)).or_default().push(p);
    }
    let exec = opts.exec;
    for ((l1, l2), pts) in groups {
        let cfg = grid.net_config(l1, l2);
        let any_feasible = pts.iter().any(|p| feasible(p, m, n));
        let shared = if opts.cache_filters && any_feasible {
            let t0 = Instant::now();
            let prep = PreparedNet::new(&train, &test, &cfg, exec)?;
            log::info!("L1={l1} L2={l2}: filters and maps ready in {:.2?}", t0.elapsed());
            Some(prep)
        } else {
            None
        };
        for chunk in pts.chunks(sink.chunk) {
            let recs = exec
                .map(chunk, |p| -> Result<SweepRecord> {
                    let t0 = Instant::now();
                    if !feasible(p, m, n) {
                        return Ok(SweepRecord::new(*p, INFEASIBLE_ERROR, None, Status::Infeasible, None));
                    }
                    let owned;
                    let prep = match &shared {
                        Some(s) => s,
                        None => {
                            owned = PreparedNet::new(&train, &test, &cfg, Exec::Sequential)?;
                            &owned
                        }
                    };
                    let r = prep.evaluate(&train.labels, &test.labels, p.h1, p.h2, p.r, Exec::Sequential)?;
                    let wall = opts.timing.then(|| t0.elapsed().as_secs_f64());
                    Ok(SweepRecord::new(*p, r.e, Some(r.block_energy), Status::Ok, wall))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            sink.push(recs)?;
        }
    }
    sink.flush()?;

    let mut records = sink.all;
    records.sort_by_key(SweepRecord::point);
    let complete = !interrupted;
    if complete {
        if let Some(path) = opts.output.as_deref() {
            let tmp = tmp_path(path);
            write_records(&tmp, &records)?;
            std::fs::rename(&tmp, path)?;
            if let Some(mut info) = sink.info {
                info.completed_points = records.len();
                info.finished = true;
                write_json_atomic(&checkpoint_path(path), &info)?;
            }
        }
    }
    Ok(SweepOutcome { records, complete })
}

/// Records on the diagonal `h2 = floor(n * h1 / m)`.
pub fn diagonal_subset(records: &[SweepRecord], m: usize, n: usize) -> Vec<SweepRecord> {
    records
        .iter()
        .filter(|r| r.h2 == diagonal_h2(m, n, r.h1))
        .cloned()
        .collect()
}

/// Error rates over `(L1, L2)` for fixed block parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorGrid {
    pub h1: usize,
    pub h2: usize,
    #[serde(rename = "R")]
    pub r: Overlap,
    #[serde(rename = "L1")]
    pub l1: Vec<usize>,
    #[serde(rename = "L2")]
    pub l2: Vec<usize>,
    /// `e[i][j]` is the error at `L1 = l1[i]`, `L2 = l2[j]`.
    pub e: Vec<Vec<f64>>,
}

impl std::fmt::Display for ErrorGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "error rate, h1={} h2={} R={}", self.h1, self.h2, self.r)?;
        write!(f, "L1\\L2")?;
        for l2 in &self.l2 {
            write!(f, " {l2:>7}")?;
        }
        for (l1, row) in self.l1.iter().zip(&self.e) {
            write!(f, "\n{l1:<5}")?;
            for e in row {
                write!(f, " {e:>7.4}")?;
            }
        }
        Ok(())
    }
}

/// The full `L1, L2 in 1..=9` table.
pub fn error_grid(records: &[SweepRecord], h1: usize, h2: usize, r: Overlap) -> Result<ErrorGrid> {
    let all: Vec<usize> = (1..=9).collect();
    error_grid_over(records, &all, &all, h1, h2, r)
}

pub fn error_grid_over(
    records: &[SweepRecord],
    l1s: &[usize],
    l2s: &[usize],
    h1: usize,
    h2: usize,
    r: Overlap,
) -> Result<ErrorGrid> {
    let lookup: BTreeMap<GridPoint, f64> = records.iter().map(|rec| (rec.point(), rec.e)).collect();
    let mut missing = Vec::new();
    let e = l1s
        .iter()
        .map(|&l1| {
            l2s.iter()
                .map(|&l2| {
                    let p = GridPoint { l1, l2, h1, h2, r };
                    lookup.get(&p).copied().unwrap_or_else(|| {
                        missing.push(format!("(L1={l1}, L2={l2})"));
                        f64::NAN
                    })
                })
                .collect()
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid(format!(
            "cells {} at h1={h1} h2={h2} R={r}",
            missing.join(", ")
        )));
    }
    Ok(ErrorGrid {
        h1,
        h2,
        r,
        l1: l1s.to_vec(),
        l2: l2s.to_vec(),
        e,
    })
}

/// Best `h1` (over all `R`) for one `(L1, L2, h2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgminH1 {
    #[serde(rename = "L1")]
    pub l1: usize,
    #[serde(rename = "L2")]
    pub l2: usize,
    pub h2: usize,
    pub h1: usize,
    #[serde(rename = "R")]
    pub r: Overlap,
    pub e: f64,
}

/// Least error over the full `(h1, h2)` rectangle against the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastErrorCell {
    #[serde(rename = "L1")]
    pub l1: usize,
    #[serde(rename = "L2")]
    pub l2: usize,
    #[serde(rename = "R")]
    pub r: Overlap,
    pub e_l: f64,
    pub e_la: f64,
    /// `e_la - e_l`, never negative.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastErrorAnalysis {
    pub argmin_h1: Vec<ArgminH1>,
    pub cells: Vec<LeastErrorCell>,
    pub mean_relative_error: f64,
    /// `min(e_la) - min(e_l)` over all cells.
    pub least_relative_error: f64,
}

/// Argmin-`h1` surface and diagonal-vs-full least errors.
///
/// `records` must cover a full `h1 x h2` rectangle for every `(L1, L2, R)`
/// present, and the rectangle must contain the diagonal. Ties pick the
/// smallest `h1`, then the smallest `R`.
pub fn least_error_analysis(records: &[SweepRecord], m: usize, n: usize) -> Result<LeastErrorAnalysis> {
    if records.is_empty() {
        return Err(Error::IncompleteGrid("no records".into()));
    }
    let h1s: BTreeSet<usize> = records.iter().map(|r| r.h1).collect();
    let h2s: BTreeSet<usize> = records.iter().map(|r| r.h2).collect();
    let mut cells: BTreeMap<(usize, usize, Overlap), BTreeMap<(usize, usize), f64>> = BTreeMap::new();
    for r in records {
        cells.entry((r.l1, r.l2, r.r)).or_default().insert((r.h1, r.h2), r.e);
    }
    let mut missing = Vec::new();
    for (&(l1, l2, r), by_h) in &cells {
        for &h1 in &h1s {
            for &h2 in &h2s {
                if !by_h.contains_key(&(h1, h2)) {
                    missing.push(format!("(L1={l1}, L2={l2}, R={r}, h1={h1}, h2={h2})"));
                }
            }
            let d = diagonal_h2(m, n, h1);
            if !h2s.contains(&d) {
                missing.push(format!("diagonal (h1={h1}, h2={d})"));
            }
        }
    }
    if !missing.is_empty() {
        missing.dedup();
        let shown = missing.len().min(10);
        let more = if missing.len() > shown {
            format!(" and {} more", missing.len() - shown)
        } else {
            String::new()
        };
        return Err(Error::IncompleteGrid(format!("{}{more}", missing[..shown].join(", "))));
    }

    let mut out_cells = Vec::new();
    for (&(l1, l2, r), by_h) in &cells {
        let e_l = by_h.values().copied().fold(f64::INFINITY, f64::min);
        let e_la = h1s
            .iter()
            .map(|&h1| by_h[&(h1, diagonal_h2(m, n, h1))])
            .fold(f64::INFINITY, f64::min);
        out_cells.push(LeastErrorCell {
            l1,
            l2,
            r,
            e_l,
            e_la,
            relative_error: e_la - e_l,
        });
    }

    let mut best: BTreeMap<(usize, usize, usize), (f64, usize, Overlap)> = BTreeMap::new();
    for rec in records {
        let key = (rec.l1, rec.l2, rec.h2);
        let cand = (rec.e, rec.h1, rec.r);
        best.entry(key)
            .and_modify(|b| {
                if cand.0 < b.0 || (cand.0 == b.0 && (cand.1, cand.2) < (b.1, b.2)) {
                    *b = cand;
                }
            })
            .or_insert(cand);
    }
    let argmin_h1 = best
        .into_iter()
        .map(|((l1, l2, h2), (e, h1, r))| ArgminH1 { l1, l2, h2, h1, r, e })
        .collect();

    let mean_relative_error =
        out_cells.iter().map(|c| c.relative_error).sum::<f64>() / out_cells.len() as f64;
    let min_la = out_cells.iter().map(|c| c.e_la).fold(f64::INFINITY, f64::min);
    let min_l = out_cells.iter().map(|c| c.e_l).fold(f64::INFINITY, f64::min);
    Ok(LeastErrorAnalysis {
        argmin_h1,
        cells: out_cells,
        mean_relative_error,
        least_relative_error: min_la - min_l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth;

    fn grid(h2: H2Mode) -> SweepGrid {
        SweepGrid {
            l1: vec![1, 2],
            l2: vec![1, 2],
            h1: vec![4, 8],
            h2,
            r: vec![Overlap::from_tenths(0).unwrap(), Overlap::from_tenths(5).unwrap()],
            seed: 3,
            train_count: 12,
            test_count: 12,
            stratified: true,
            k: 3,
            skip_second_mean_removal: false,
        }
    }

    fn rec(l1: usize, l2: usize, h1: usize, h2: usize, r: u8, e: f64) -> SweepRecord {
        SweepRecord::new(
            GridPoint {
                l1,
                l2,
                h1,
                h2,
                r: Overlap::from_tenths(r).unwrap(),
            },
            e,
            Some(1.0),
            Status::Ok,
            None,
        )
    }

    #[test]
    fn grid_json_forms() {
        let g: SweepGrid = serde_json::from_str(
            r#"{"L1":[1],"L2":[2],"h1":[3,4],"h2":"diagonal","R":[0.5],"seed":1,"train_count":2,"test_count":2}"#,
        )
        .unwrap();
        assert_eq!(g.h2, H2Mode::Diagonal);
        assert!(g.stratified);
        let pts = g.points(16, 8);
        assert_eq!(pts.iter().map(|p| (p.h1, p.h2)).collect::<Vec<_>>(), vec![(3, 1), (4, 2)]);
        let g: SweepGrid = serde_json::from_str(
            r#"{"L1":[1],"L2":[2],"h1":[3],"h2":[1,2],"R":[0.0,0.9],"seed":1,"train_count":2,"test_count":2}"#,
        )
        .unwrap();
        assert_eq!(g.points(8, 8).len(), 4);
        assert!(serde_json::from_str::<SweepGrid>(
            r#"{"L1":[1],"L2":[2],"h1":[3],"h2":"full","R":[0.5],"seed":1,"train_count":2,"test_count":2}"#
        )
        .is_err());
        assert!(serde_json::from_str::<SweepGrid>(
            r#"{"L1":[1],"L2":[2],"h1":[3],"h2":[1],"R":[0.55],"seed":1,"train_count":2,"test_count":2}"#
        )
        .is_err());
        let mut bad = grid(H2Mode::Diagonal);
        bad.l1 = vec![10];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut recs = vec![rec(1, 2, 3, 4, 5, 0.25)];
        recs.push(SweepRecord::new(recs[0].point(), 1.0, None, Status::Infeasible, Some(0.5)));
        write_records(&p, &recs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("L1,L2,h1,h2,R,e,block_energy,status,wall_time\n1,2,3,4,0.5,0.25,1,ok,\n"));
        assert_eq!(read_records(&p).unwrap(), recs);
    }

    #[test]
    fn one_point_and_infeasible_points() {
        let d = synth(3, 8, 12, 12, 1).unwrap();
        let mut g = grid(H2Mode::Explicit(vec![4]));
        g.l1 = vec![2];
        g.l2 = vec![2];
        g.h1 = vec![4];
        g.r = vec![Overlap::from_tenths(5).unwrap()];
        let out = run_sweep(&d, &g, &SweepOptions::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].status, Status::Ok);
        assert!(out.records[0].block_energy.unwrap() > 0.0);

        g.h1 = vec![13];
        let out = run_sweep(&d, &g, &SweepOptions::default()).unwrap();
        assert_eq!(out.records[0].status, Status::Infeasible);
        assert_eq!(out.records[0].e, 1.0);
        assert_eq!(out.records[0].block_energy, None);
    }

    #[test]
    fn diagonal_records_satisfy_constraint() {
        let d = synth(3, 8, 12, 8, 2).unwrap();
        let g = grid(H2Mode::Diagonal);
        let out = run_sweep(&d, &g, &SweepOptions::default()).unwrap();
        assert_eq!(out.records.len(), 16);
        assert!(out.records.iter().all(|r| r.h2 == 8 * r.h1 / 12));
        let mut sorted = out.records.clone();
        sorted.sort_by_key(SweepRecord::point);
        assert_eq!(sorted, out.records);
    }

    #[test]
    fn resume_refuses_changed_grid() {
        let d = synth(3, 8, 12, 12, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("s.csv");
        let g = grid(H2Mode::Explicit(vec![4]));
        let opts = SweepOptions {
            output: Some(csv.clone()),
            max_points: Some(3),
            chunk: 2,
            ..SweepOptions::default()
        };
        let out = run_sweep(&d, &g, &opts).unwrap();
        assert!(!out.complete);
        assert_eq!(read_records(&csv).unwrap().len(), 3);
        let mut g2 = g.clone();
        g2.seed = 99;
        let err = run_sweep(&d, &g2, &SweepOptions { resume: true, max_points: None, ..opts.clone() }).unwrap_err();
        assert!(matches!(err, Error::CheckpointMismatch(_)), "{err}");
        let out = run_sweep(&d, &g, &SweepOptions { resume: true, max_points: None, ..opts }).unwrap();
        assert!(out.complete);
        assert_eq!(out.records.len(), 16);
    }

    #[test]
    fn argmin_and_ties() {
        let mut recs = Vec::new();
        for h1 in 1..=2 {
            for h2 in 1..=2 {
                for r in [0, 5] {
                    recs.push(rec(1, 1, h1, h2, r, 0.5));
                }
            }
        }
        let a = least_error_analysis(&recs, 2, 2).unwrap();
        assert!(a.argmin_h1.iter().all(|x| x.h1 == 1 && x.r.tenths() == 0));
        assert!(a.cells.iter().all(|c| c.relative_error == 0.0));

        recs[5].e = 0.0; // (h1=2, h2=1, R=0.5)
        let a = least_error_analysis(&recs, 2, 2).unwrap();
        let at_h2_1 = a.argmin_h1.iter().find(|x| x.h2 == 1).unwrap();
        assert_eq!((at_h2_1.h1, at_h2_1.r.tenths(), at_h2_1.e), (2, 5, 0.0));
        let cell = a.cells.iter().find(|c| c.r.tenths() == 5).unwrap();
        assert_eq!((cell.e_l, cell.e_la, cell.relative_error), (0.0, 0.5, 0.5));
        assert_eq!(a.least_relative_error, 0.5);

        recs.remove(0);
        assert!(matches!(least_error_analysis(&recs, 2, 2), Err(Error::IncompleteGrid(_))));
    }

    #[test]
    fn error_grid_needs_every_cell() {
        let mut recs = Vec::new();
        for l1 in 1..=9 {
            for l2 in 1..=9 {
                recs.push(rec(l1, l2, 8, 8, 5, 0.3));
            }
        }
        let g = error_grid(&recs, 8, 8, Overlap::from_tenths(5).unwrap()).unwrap();
        assert!(g.e.iter().flatten().all(|&e| e == 0.3));
        assert_eq!(g.l1, (1..=9).collect::<Vec<_>>());
        recs.pop();
        let err = error_grid(&recs, 8, 8, Overlap::from_tenths(5).unwrap()).unwrap_err();
        assert!(err.to_string().contains("L1=9, L2=9"), "{err}");
    }
}
