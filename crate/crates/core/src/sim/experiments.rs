//! Share-index decay over snapshots and parameter sweeps.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::par::ExecPolicy;
use crate::select::{CandidateTracker, CountMinSketch, ExactCounter, FrequencyEstimator, SelectionScheme, ShareIndex};
use crate::sim::config::RunConfig;
use crate::sim::runner::{new_cloud, run_prepared, store_direct, Prepared, CSV_HEADER};
use crate::sim::workload::{elimination_ratio, Trace, Workload};

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayPoint {
    pub snapshot: u32,
    pub cms: f64,
    pub cms_locality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub refresh_after: Vec<u32>,
    pub points: Vec<DecayPoint>,
}

impl DecayCurve {
    pub fn at(&self, snapshot: u32) -> Option<&DecayPoint> {
        self.points.iter().find(|p| p.snapshot == snapshot)
    }

    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["snapshot", "cms", "cms_locality"]).map_err(csv_err)?;
        for p in &self.points {
            w.write_record([p.snapshot.to_string(), format!("{:.6}", p.cms), format!("{:.6}", p.cms_locality)])
                .map_err(csv_err)?;
        }
        finish(w)
    }
}

fn hit_ratio(prepared: &Prepared, entries: &[usize], index: &ShareIndex) -> f64 {
    let (mut hits, mut total) = (0u64, 0u64);
    for &i in entries {
        for c in &prepared.cached(&prepared.trace.files[i].1).chunks {
            total += c.plain_len;
            if index.contains(&c.fp) {
                hits += c.plain_len;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Stores snapshot 0, builds share-indexes under pure sketch selection and
/// sketch plus locality, then measures for every later snapshot the share
/// of its bytes whose chunks each index already holds. Both indexes are
/// rebuilt after storing the snapshots in `refresh_after`.
pub fn decay_experiment(cfg: &RunConfig, refresh_after: &[u32], exec: ExecPolicy) -> Result<DecayCurve> {
    cfg.validate()?;
    let prepared = Prepared::new(cfg, exec)?;
    let mut run_cfg = cfg.clone();
    run_cfg.cloud.scheme = SelectionScheme::CmsLocality;
    let mut cloud = new_cloud(&run_cfg, exec, u64::MAX)?;

    let snapshots = prepared.workload.snapshots().len();
    let mut by_snapshot: Vec<Vec<usize>> = vec![Vec::new(); snapshots];
    for (i, (f, _, _)) in prepared.trace.files.iter().enumerate() {
        by_snapshot[f.snapshot as usize].push(i);
    }
    let store = |cloud: &mut crate::cloud::CloudServer, s: usize| -> Result<()> {
        for &i in &by_snapshot[s] {
            store_direct(cloud, prepared.cached(&prepared.trace.files[i].1))?;
        }
        Ok(())
    };
    // The sketch-only index must be taken before the rebuild clears the
    // recipe window.
    let refresh = |cloud: &mut crate::cloud::CloudServer| -> (ShareIndex, ShareIndex) {
        let cms = cloud.select(SelectionScheme::Cms).index;
        cloud.rebuild_share_index();
        (cms, cloud.share_index().clone())
    };

    store(&mut cloud, 0)?;
    let (mut cms, mut loc) = refresh(&mut cloud);
    let mut points = Vec::with_capacity(snapshots.saturating_sub(1));
    for s in 1..snapshots {
        points.push(DecayPoint {
            snapshot: s as u32,
            cms: hit_ratio(&prepared, &by_snapshot[s], &cms),
            cms_locality: hit_ratio(&prepared, &by_snapshot[s], &loc),
        });
        store(&mut cloud, s)?;
        if refresh_after.contains(&(s as u32)) {
            (cms, loc) = refresh(&mut cloud);
        }
    }
    Ok(DecayCurve {
        refresh_after: refresh_after.to_vec(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    CloudRatio,
    TopFraction,
    ChunkSize,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::CloudRatio => "cloud_ratio",
            SweepAxis::TopFraction => "top_fraction",
            SweepAxis::ChunkSize => "chunk_size",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cloud_ratio" => Ok(SweepAxis::CloudRatio),
            "top_fraction" => Ok(SweepAxis::TopFraction),
            "chunk_size" => Ok(SweepAxis::ChunkSize),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub csv: Vec<u8>,
    pub violations: Vec<String>,
}

pub fn sweep(cfg: &RunConfig, axis: SweepAxis, values: &[f64], exec: ExecPolicy) -> Result<SweepOutput> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::Config("a sweep needs at least one value".into()));
    }
    match axis {
        SweepAxis::CloudRatio => sweep_cloud_ratio(cfg, values, exec),
        SweepAxis::TopFraction => sweep_top_fraction(cfg, values, exec),
        SweepAxis::ChunkSize => sweep_chunk_size(cfg, values, exec),
    }
}

fn sweep_cloud_ratio(cfg: &RunConfig, values: &[f64], exec: ExecPolicy) -> Result<SweepOutput> {
    let prepared = Prepared::new(cfg, exec)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sweep_axis", "sweep_value"];
    header.extend(CSV_HEADER);
    w.write_record(&header).map_err(csv_err)?;
    let mut violations = Vec::new();
    for &v in values {
        let mut c = cfg.clone();
        c.latency.cloud_ratio = v;
        let exp = run_prepared(&c, &prepared, exec)?;
        exp.write_rows(&mut w, &["cloud_ratio".to_string(), v.to_string()])?;
        violations.extend(exp.violations().into_iter().map(|s| format!("cloud_ratio {v}: {s}")));
    }
    Ok(SweepOutput {
        csv: finish(w)?,
        violations,
    })
}

fn sweep_top_fraction(cfg: &RunConfig, values: &[f64], exec: ExecPolicy) -> Result<SweepOutput> {
    let workload = Workload::generate(&cfg.workload, cfg.seed, exec)?;
    let stats = workload.trace(exec).stats();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sweep_axis", "sweep_value", "dataset_profile", "elimination_ratio"])
        .map_err(csv_err)?;
    for &v in values {
        let r = elimination_ratio(&stats, v)?;
        w.write_record(["top_fraction".to_string(), v.to_string(), cfg.workload.profile.clone(), format!("{r:.6}")])
            .map_err(csv_err)?;
    }
    Ok(SweepOutput {
        csv: finish(w)?,
        violations: Vec::new(),
    })
}

/// Memory each selection scheme holds after observing a whole trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionMemory {
    pub distinct_chunks: usize,
    pub exact: usize,
    pub cms: usize,
    pub cms_locality: usize,
}

/// Feeds every chunk occurrence of `trace` to an exact counter and to a
/// sketch with a candidate tracker sized for `coverage` of the distinct
/// chunks. Locality selection also keeps the recipes of the last epoch,
/// taken here as the last snapshot.
pub fn selection_memory(trace: &Trace, cfg: &RunConfig) -> Result<SelectionMemory> {
    let mut exact = ExactCounter::default();
    let mut sketch = CountMinSketch::new(cfg.cloud.sketch_depth, cfg.cloud.sketch_width, cfg.seed)?;
    for (_, _, f) in &trace.files {
        for (fp, _) in &f.chunks {
            exact.add(fp);
            sketch.add(fp)?;
        }
    }
    let distinct = exact.distinct();
    let slots = ((cfg.cloud.share_coverage * distinct as f64).ceil() as usize).max(1);
    let mut tracker = CandidateTracker::new(slots.saturating_mul(4));
    for (_, _, f) in &trace.files {
        for (fp, _) in &f.chunks {
            tracker.observe(*fp, sketch.frequency(fp));
        }
    }
    let last = trace.files.last().map_or(0, |(f, _, _)| f.snapshot);
    let window_entries: usize = trace
        .files
        .iter()
        .filter(|(f, _, _)| f.snapshot == last)
        .map(|(_, _, c)| c.chunks.len())
        .sum();
    let cms = sketch.memory_bytes() + tracker.memory_bytes();
    Ok(SelectionMemory {
        distinct_chunks: distinct,
        exact: FrequencyEstimator::memory_bytes(&exact),
        cms,
        cms_locality: cms + window_entries * (32 + 8),
    })
}

fn sweep_chunk_size(cfg: &RunConfig, values: &[f64], exec: ExecPolicy) -> Result<SweepOutput> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "sweep_axis",
        "sweep_value",
        "dataset_profile",
        "scheme",
        "distinct_chunks",
        "memory_bytes",
    ])
    .map_err(csv_err)?;
    for &v in values {
        if !(v >= 1.0 && v.fract() == 0.0) {
            return Err(Error::Config(format!("chunk size {v} is not a positive integer")));
        }
        let mut spec = cfg.workload.clone();
        spec.avg_chunk = v as usize;
        let trace = Workload::generate(&spec, cfg.seed, exec)?.trace(exec);
        let m = selection_memory(&trace, cfg)?;
        for (scheme, bytes) in [
            (SelectionScheme::Exact, m.exact),
            (SelectionScheme::Cms, m.cms),
            (SelectionScheme::CmsLocality, m.cms_locality),
        ] {
            w.write_record([
                "chunk_size".to_string(),
                v.to_string(),
                spec.profile.clone(),
                scheme.label().to_string(),
                m.distinct_chunks.to_string(),
                bytes.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    Ok(SweepOutput {
        csv: finish(w)?,
        violations: Vec::new(),
    })
}
