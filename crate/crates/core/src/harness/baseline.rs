//! Uncontrolled reference runs, cached per (scenario, seed).

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::microsim::{DetectorObservation, EpisodeStepObservation, SimState};
use crate::netgraph::Scenario;

/// One observation per episode step of an uncontrolled run.
pub type BaselineTrace = Vec<EpisodeStepObservation>;

/// Runs the scenario with its base signal plans and no agent.
pub fn compute_baseline(scenario: &Scenario, seed: u64) -> BaselineTrace {
    let mut sim = SimState::new(scenario, seed);
    (0..scenario.timing.episode_steps())
        .map(|_| sim.run_episode_step())
        .collect()
}

/// In-memory cache of baseline traces, optionally persisted to a directory.
///
/// Disk entries are named by scenario content hash and seed, so an edited
/// scenario never reuses a stale trace. Files are written to a temporary name
/// and renamed into place.
#[derive(Debug, Default)]
pub struct BaselineCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<(String, u64), Arc<BaselineTrace>>>,
}

impl BaselineCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(BaselineCache {
            dir: Some(dir),
            memory: Mutex::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.memory.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, scenario: &Scenario, seed: u64) -> Arc<BaselineTrace> {
        let key = (scenario.content_hash(), seed);
        if let Some(trace) = self.memory.lock().expect("cache lock").get(&key) {
            return trace.clone();
        }
        let path = self.dir.as_ref().map(|d| d.join(format!("{}_{seed}.csv", key.0)));
        let expected_len = scenario.timing.episode_steps();
        let trace = path
            .as_deref()
            .and_then(|p| read_trace(p).ok())
            .filter(|t| t.len() == expected_len && t.iter().all(|o| o.detectors.len() == scenario.n_detectors()))
            .unwrap_or_else(|| {
                let trace = compute_baseline(scenario, seed);
                if let Some(p) = &path {
                    // A failed write only costs a recomputation later.
                    let _ = write_trace(p, &trace);
                }
                trace
            });
        let trace = Arc::new(trace);
        self.memory
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert(trace)
            .clone()
    }
}

pub const TRACE_HEADER: &str = "step,clock,detector,count,speed_score,occupancy";

pub fn write_trace(path: &Path, trace: &[EpisodeStepObservation]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
        write_trace_to(&mut f, trace)?;
        f.flush()?;
    }
    fs::rename(tmp, path)
}

pub fn write_trace_to<W: Write>(out: &mut W, trace: &[EpisodeStepObservation]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for (step, obs) in trace.iter().enumerate() {
        for (d, o) in obs.detectors.iter().enumerate() {
            writeln!(out, "{step},{:?},{d},{},{:?},{:?}", obs.clock, o.count, o.speed_score, o.occupancy)?;
        }
    }
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<BaselineTrace, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err("unexpected header".into());
    }
    let mut trace: BaselineTrace = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(format!("bad row {line}"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
        let step: usize = f[0].parse().map_err(|_| "bad step")?;
        if step == trace.len() {
            trace.push(EpisodeStepObservation {
                clock: num(f[1])?,
                detectors: Vec::new(),
            });
        } else if step + 1 != trace.len() {
            return Err("steps out of order".into());
        }
        trace[step].detectors.push(DetectorObservation {
            count: f[3].parse().map_err(|_| "bad count")?,
            speed_score: num(f[4])?,
            occupancy: num(f[5])?,
        });
    }
    Ok(trace)
}
