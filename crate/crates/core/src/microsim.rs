//! Discrete-time microscopic traffic engine.
//!
//! Vehicles follow a Krauss-style safe-speed rule in single-file lanes (no
//! lane changes, no overtaking). Signals cycle through the phases of each
//! intersection with an all-red clearance after every phase. Induction-loop
//! detectors record crossings every simulation step and are aggregated into
//! one [`EpisodeStepObservation`] per episode step.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::netgraph::{DriverParams, Scenario};

/// Tolerance for per-intersection cycle checks on applied durations, seconds.
pub const CYCLE_TOLERANCE: f64 = 1e-6;

/// Vehicles stopping for a red light halt this far before the line, meters.
const STOP_LINE_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("expected {expected} phase durations, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("phase {phase} has non-positive or non-finite duration {value}")]
    BadDuration { phase: usize, value: f64 },
    #[error("intersection {intersection}: durations sum to {got} s, base plan has {expected} s")]
    CycleViolation {
        intersection: String,
        expected: f64,
        got: f64,
    },
    #[error("invalid vehicle placement: {0}")]
    Placement(String),
}

/// What one detector saw during one simulation step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DetectorSample {
    pub count: u32,
    /// Sum of crossing speeds, m/s·vehicle.
    pub speed_sum: f64,
    /// Fraction of the step with a vehicle over the loop.
    pub occupancy: f64,
}

impl DetectorSample {
    pub fn from_average(count: u32, average_speed: f64) -> Self {
        DetectorSample {
            count,
            speed_sum: count as f64 * average_speed,
            occupancy: 0.0,
        }
    }
}

/// Aggregated detector reading over one episode step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorObservation {
    pub count: u32,
    pub speed_score: f64,
    pub occupancy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStepObservation {
    /// Simulation clock at the end of the episode step, seconds.
    pub clock: f64,
    pub detectors: Vec<DetectorObservation>,
}

impl EpisodeStepObservation {
    pub fn speed_scores(&self) -> Vec<f64> {
        self.detectors.iter().map(|d| d.speed_score).collect()
    }
}

/// Running sums for one detector across the sim steps of an episode step.
///
/// Per-step average speeds are combined weighted by their vehicle counts,
/// which reduces to total speed over total count.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DetectorAccumulator {
    count: u64,
    speed_sum: f64,
    occupancy_sum: f64,
    steps: u32,
}

impl DetectorAccumulator {
    pub fn push(&mut self, sample: &DetectorSample) {
        self.count += u64::from(sample.count);
        self.speed_sum += sample.speed_sum;
        self.occupancy_sum += sample.occupancy;
        self.steps += 1;
    }

    /// Speed score `min(avg_speed / max_speed, 1)`; 1.0 when nothing crossed.
    pub fn finish(&self, max_speed: f64) -> DetectorObservation {
        let speed_score = if self.count == 0 {
            1.0
        } else {
            (self.speed_sum / self.count as f64 / max_speed).clamp(0.0, 1.0)
        };
        DetectorObservation {
            count: self.count as u32,
            speed_score,
            occupancy: if self.steps == 0 {
                0.0
            } else {
                self.occupancy_sum / f64::from(self.steps)
            },
        }
    }
}

#[derive(Debug, Clone)]
struct SectionInfo {
    length: f64,
    lanes: usize,
    max_speed: f64,
    /// Intersection controlling the downstream end, if any.
    signal: Option<usize>,
}

#[derive(Debug, Clone)]
struct Stream {
    rate: f64,
    route: Arc<[usize]>,
}

/// Index-based, immutable view of a scenario shared by every state built from it.
#[derive(Debug)]
struct CompiledNet {
    sections: Vec<SectionInfo>,
    /// (in, out) → for each phase of the controlling intersection, whether it is green.
    movement_phases: HashMap<(usize, usize), Vec<bool>>,
    detectors_on: Vec<Vec<(usize, f64)>>,
    detector_max_speed: Vec<f64>,
    streams: Vec<Stream>,
    intersection_ids: Vec<String>,
    base_durations: Vec<Vec<f64>>,
    interphase: Vec<f64>,
}

impl CompiledNet {
    fn new(scenario: &Scenario) -> Self {
        let node_signal: HashMap<&str, usize> = scenario
            .intersections
            .iter()
            .enumerate()
            .map(|(i, ix)| (ix.node.as_str(), i))
            .collect();
        let sections = scenario
            .sections
            .iter()
            .map(|s| SectionInfo {
                length: s.length,
                lanes: s.lanes as usize,
                max_speed: s.max_speed_ms(),
                signal: node_signal.get(s.to.as_str()).copied(),
            })
            .collect();
        let mut movement_phases: HashMap<(usize, usize), Vec<bool>> = HashMap::new();
        for ix in &scenario.intersections {
            for (p, phase) in ix.phases.iter().enumerate() {
                for m in &phase.movements {
                    let key = (
                        scenario.section_index(&m.0).expect("validated"),
                        scenario.section_index(&m.1).expect("validated"),
                    );
                    movement_phases.entry(key).or_insert_with(|| vec![false; ix.phases.len()])[p] = true;
                }
            }
        }
        let mut detectors_on = vec![Vec::new(); scenario.sections.len()];
        let mut detector_max_speed = Vec::new();
        for (i, d) in scenario.detectors.iter().enumerate() {
            let s = scenario.section_index(&d.section).expect("validated");
            detectors_on[s].push((i, d.position));
            detector_max_speed.push(scenario.sections[s].max_speed_ms());
        }
        let streams = scenario
            .demand
            .iter()
            .filter(|e| e.vehicles_per_hour > 0.0)
            .map(|e| Stream {
                rate: e.vehicles_per_hour / 3600.0,
                route: scenario.route(&e.origin, &e.destination).expect("validated").into(),
            })
            .collect();
        CompiledNet {
            sections,
            movement_phases,
            detectors_on,
            detector_max_speed,
            streams,
            intersection_ids: scenario.intersections.iter().map(|i| i.id.clone()).collect(),
            base_durations: scenario
                .intersections
                .iter()
                .map(|i| i.phases.iter().map(|p| p.duration).collect())
                .collect(),
            interphase: scenario.intersections.iter().map(|i| i.interphase).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u64,
    pub route: Arc<[usize]>,
    /// Index into `route` of the current section.
    pub leg: usize,
    pub position: f64,
    pub speed: f64,
}

impl Vehicle {
    pub fn section(&self) -> usize {
        self.route[self.leg]
    }
}

/// Signal timing state of one intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalState {
    pub active: usize,
    /// Seconds since the active phase started (green then all-red).
    pub clock: f64,
    pub durations: Vec<f64>,
    pending: Option<Vec<f64>>,
}

impl SignalState {
    pub fn pending(&self) -> Option<&[f64]> {
        self.pending.as_deref()
    }

    fn in_green(&self) -> bool {
        self.clock < self.durations[self.active]
    }
}

#[derive(Debug, Clone)]
struct Pending {
    stream: usize,
}

/// Mutable world state of one simulation run.
#[derive(Debug, Clone)]
pub struct SimState {
    net: Arc<CompiledNet>,
    driver: DriverParams,
    dt: f64,
    horizon: f64,
    steps_per_episode_step: usize,
    rng: ChaCha8Rng,
    arrivals: Vec<Option<Poisson<f64>>>,
    arrivals_enabled: bool,
    step_index: u64,
    lanes: Vec<Vec<VecDeque<Vehicle>>>,
    queues: Vec<VecDeque<Pending>>,
    signals: Vec<SignalState>,
    accumulators: Vec<DetectorAccumulator>,
    next_id: u64,
    entered: u64,
    exited: u64,
    entered_by_stream: Vec<u64>,
}

impl PartialEq for SimState {
    fn eq(&self, other: &Self) -> bool {
        self.rng == other.rng
            && self.step_index == other.step_index
            && self.lanes == other.lanes
            && self.signals == other.signals
            && self.accumulators == other.accumulators
            && self.entered == other.entered
            && self.exited == other.exited
            && self.queues.iter().map(VecDeque::len).eq(other.queues.iter().map(VecDeque::len))
    }
}

impl SimState {
    pub fn new(scenario: &Scenario, seed: u64) -> SimState {
        let net = Arc::new(CompiledNet::new(scenario));
        let dt = scenario.timing.sim_step;
        let arrivals = net
            .streams
            .iter()
            .map(|s| Poisson::new(s.rate * dt).ok())
            .collect();
        let signals = net
            .base_durations
            .iter()
            .map(|d| SignalState {
                active: 0,
                clock: 0.0,
                durations: d.clone(),
                pending: None,
            })
            .collect();
        SimState {
            lanes: net.sections.iter().map(|s| vec![VecDeque::new(); s.lanes]).collect(),
            queues: vec![VecDeque::new(); net.sections.len()],
            accumulators: vec![DetectorAccumulator::default(); net.detector_max_speed.len()],
            entered_by_stream: vec![0; net.streams.len()],
            arrivals,
            signals,
            net,
            driver: scenario.driver.clone(),
            dt,
            horizon: scenario.timing.horizon,
            steps_per_episode_step: scenario.timing.sim_steps_per_episode_step(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            arrivals_enabled: true,
            step_index: 0,
            next_id: 0,
            entered: 0,
            exited: 0,
        }
    }

    pub fn clock(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn finished(&self) -> bool {
        self.clock() >= self.horizon - 1e-9
    }

    pub fn signals(&self) -> &[SignalState] {
        &self.signals
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.lanes.iter().flatten().flatten()
    }

    pub fn vehicles_on_network(&self) -> usize {
        self.lanes.iter().flatten().map(VecDeque::len).sum()
    }

    pub fn entered(&self) -> u64 {
        self.entered
    }

    pub fn exited(&self) -> u64 {
        self.exited
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    /// Number of vehicles that entered the network on each demand route.
    pub fn entered_by_route(&self) -> Vec<(Arc<[usize]>, u64)> {
        self.net
            .streams
            .iter()
            .zip(&self.entered_by_stream)
            .map(|(s, &n)| (s.route.clone(), n))
            .collect()
    }

    /// Stops generating new vehicles; queued ones still enter.
    pub fn set_arrivals_enabled(&mut self, enabled: bool) {
        self.arrivals_enabled = enabled;
    }

    /// Puts a vehicle directly on the network, bypassing demand and queues.
    pub fn place_vehicle(
        &mut self,
        route: Vec<usize>,
        lane: usize,
        position: f64,
        speed: f64,
    ) -> Result<u64, SimError> {
        let Some(&section) = route.first() else {
            return Err(SimError::Placement("empty route".into()));
        };
        let info = self
            .net
            .sections
            .get(section)
            .ok_or_else(|| SimError::Placement(format!("unknown section {section}")))?;
        if lane >= info.lanes || !(0.0..=info.length).contains(&position) || !(speed >= 0.0) {
            return Err(SimError::Placement(format!(
                "lane {lane}, position {position}, speed {speed} invalid for section {section}"
            )));
        }
        let queue = &mut self.lanes[section][lane];
        let idx = queue.partition_point(|v| v.position > position);
        let id = self.next_id;
        self.next_id += 1;
        queue.insert(
            idx,
            Vehicle {
                id,
                route: route.into(),
                leg: 0,
                position,
                speed,
            },
        );
        self.entered += 1;
        Ok(id)
    }

    /// Latches new per-phase durations (flattened in scenario order).
    ///
    /// Each intersection switches to them at its next phase change; the phase
    /// in progress keeps its current length.
    pub fn apply_phase_durations(&mut self, durations: &[f64]) -> Result<(), SimError> {
        let expected: usize = self.net.base_durations.iter().map(Vec::len).sum();
        if durations.len() != expected {
            return Err(SimError::WrongLength {
                expected,
                got: durations.len(),
            });
        }
        if let Some((phase, &value)) = durations
            .iter()
            .enumerate()
            .find(|(_, d)| !(**d > 0.0 && d.is_finite()))
        {
            return Err(SimError::BadDuration { phase, value });
        }
        let mut offset = 0;
        let mut latched = Vec::with_capacity(self.signals.len());
        for (i, base) in self.net.base_durations.iter().enumerate() {
            let new = &durations[offset..offset + base.len()];
            offset += base.len();
            let (want, got) = (base.iter().sum::<f64>(), new.iter().sum::<f64>());
            if (want - got).abs() > CYCLE_TOLERANCE {
                return Err(SimError::CycleViolation {
                    intersection: self.net.intersection_ids[i].clone(),
                    expected: want,
                    got,
                });
            }
            latched.push(new.to_vec());
        }
        for (signal, new) in self.signals.iter_mut().zip(latched) {
            signal.pending = Some(new);
        }
        Ok(())
    }

    fn is_green(&self, from: usize, to: usize) -> bool {
        match self.net.sections[from].signal {
            None => true,
            Some(ix) => {
                let signal = &self.signals[ix];
                signal.in_green()
                    && self
                        .net
                        .movement_phases
                        .get(&(from, to))
                        .is_some_and(|phases| phases[signal.active])
            }
        }
    }

    /// Lane of `section` with the most free space at its entrance, and that space.
    fn entry_lane(&self, section: usize) -> (usize, Option<&Vehicle>) {
        let lanes = &self.lanes[section];
        let mut best = 0;
        let mut best_space = f64::NEG_INFINITY;
        for (l, lane) in lanes.iter().enumerate() {
            let space = lane.back().map_or(f64::INFINITY, |v| v.position);
            if space > best_space {
                best = l;
                best_space = space;
            }
        }
        (best, lanes[best].back())
    }

    /// Krauss safe speed behind a leader `gap` meters ahead moving at `leader_speed`.
    fn safe_speed(&self, speed: f64, leader_speed: f64, gap: f64) -> f64 {
        let d = &self.driver;
        let mean = 0.5 * (speed + leader_speed);
        leader_speed + (gap - leader_speed * d.reaction_time) / (mean / d.decel + d.reaction_time)
    }

    fn next_speed(&self, section: usize, lane: usize, k: usize, dawdle: f64) -> f64 {
        let d = &self.driver;
        let info = &self.net.sections[section];
        let v = &self.lanes[section][lane][k];
        // (gap to obstacle, obstacle speed)
        let obstacle = if k > 0 {
            let leader = &self.lanes[section][lane][k - 1];
            Some((leader.position - d.length - d.min_gap - v.position, leader.speed))
        } else {
            let remaining = info.length - v.position;
            match v.route.get(v.leg + 1) {
                None => None,
                Some(&next) => {
                    let can_stop = v.speed * v.speed <= 2.0 * d.emergency_decel * remaining + 1e-9;
                    if !self.is_green(section, next) && can_stop {
                        Some((remaining - STOP_LINE_MARGIN, 0.0))
                    } else {
                        self.entry_lane(next).1.map(|back| {
                            (remaining + back.position - d.length - d.min_gap, back.speed)
                        })
                    }
                }
            }
        };
        let limit = info.max_speed.min(d.max_speed);
        let mut desired = (v.speed + d.accel * self.dt).min(limit);
        if let Some((gap, leader_speed)) = obstacle {
            let gap = gap.max(0.0);
            desired = desired.min(self.safe_speed(v.speed, leader_speed, gap));
            desired = (desired - d.dawdle * d.accel * self.dt * dawdle).max(0.0);
            desired.min(gap / self.dt)
        } else {
            (desired - d.dawdle * d.accel * self.dt * dawdle).max(0.0)
        }
    }

    /// Advances the simulation by one sim step.
    pub fn sim_step(&mut self) {
        self.generate_arrivals();

        // Speeds are computed from the state at the start of the step.
        let mut speeds = Vec::with_capacity(self.vehicles_on_network());
        for s in 0..self.lanes.len() {
            for l in 0..self.lanes[s].len() {
                for k in 0..self.lanes[s][l].len() {
                    let dawdle: f64 = if self.driver.dawdle > 0.0 { self.rng.random() } else { 0.0 };
                    speeds.push(self.next_speed(s, l, k, dawdle));
                }
            }
        }

        let mut samples = vec![DetectorSample::default(); self.accumulators.len()];
        let dt = self.dt;
        let mut next = speeds.into_iter();
        for (s, lanes) in self.lanes.iter_mut().enumerate() {
            let length = self.net.sections[s].length;
            for v in lanes.iter_mut().flatten() {
                let speed = next.next().expect("one speed per vehicle");
                let old = v.position;
                v.speed = speed;
                v.position += speed * dt;
                record_crossings(&self.net.detectors_on[s], Some(old), v.position.min(length), speed, &mut samples);
            }
        }

        self.transfer_vehicles(&mut samples);
        self.release_queues(&mut samples);
        self.measure_occupancy(&mut samples);
        for (acc, sample) in self.accumulators.iter_mut().zip(&samples) {
            acc.push(sample);
        }
        self.advance_signals();
        self.step_index += 1;
    }

    fn generate_arrivals(&mut self) {
        if !self.arrivals_enabled {
            return;
        }
        for (i, dist) in self.arrivals.iter().enumerate() {
            if let Some(dist) = dist {
                let n = dist.sample(&mut self.rng) as usize;
                let source = self.net.streams[i].route[0];
                for _ in 0..n {
                    self.queues[source].push_back(Pending { stream: i });
                }
            }
        }
    }

    fn transfer_vehicles(&mut self, samples: &mut [DetectorSample]) {
        let d = self.driver.clone();
        for s in 0..self.lanes.len() {
            let length = self.net.sections[s].length;
            for l in 0..self.lanes[s].len() {
                while self.lanes[s][l].front().is_some_and(|v| v.position >= length) {
                    let mut v = self.lanes[s][l].pop_front().expect("front exists");
                    let Some(&next) = v.route.get(v.leg + 1) else {
                        self.exited += 1;
                        continue;
                    };
                    let overshoot = v.position - length;
                    let (lane, back) = self.entry_lane(next);
                    let room = back.map_or(self.net.sections[next].length, |b| {
                        b.position - d.length - d.min_gap
                    });
                    if room < 0.0 {
                        // Blocked: hold at the end of the current section.
                        v.speed = 0.0;
                        v.position = length;
                        self.lanes[s][l].push_front(v);
                        break;
                    }
                    v.leg += 1;
                    v.position = overshoot.min(room);
                    record_crossings(&self.net.detectors_on[next], None, v.position, v.speed, samples);
                    self.lanes[next][lane].push_back(v);
                }
            }
        }
    }

    fn release_queues(&mut self, samples: &mut [DetectorSample]) {
        let d = self.driver.clone();
        for s in 0..self.queues.len() {
            while let Some(p) = self.queues[s].front() {
                let stream = p.stream;
                let (lane, back) = self.entry_lane(s);
                let limit = self.net.sections[s].max_speed.min(d.max_speed);
                let speed = match back {
                    None => limit,
                    Some(b) => {
                        let room = b.position - d.length - d.min_gap;
                        if room < 0.0 {
                            break;
                        }
                        limit.min(self.safe_speed(limit, b.speed, room)).max(0.0)
                    }
                };
                self.queues[s].pop_front();
                let v = Vehicle {
                    id: self.next_id,
                    route: self.net.streams[stream].route.clone(),
                    leg: 0,
                    position: 0.0,
                    speed,
                };
                self.next_id += 1;
                self.entered += 1;
                self.entered_by_stream[stream] += 1;
                record_crossings(&self.net.detectors_on[s], None, 0.0, speed, samples);
                self.lanes[s][lane].push_back(v);
            }
        }
    }

    fn measure_occupancy(&self, samples: &mut [DetectorSample]) {
        let len = self.driver.length;
        for (s, dets) in self.net.detectors_on.iter().enumerate() {
            for &(det, pos) in dets {
                let covered = self.lanes[s]
                    .iter()
                    .flatten()
                    .any(|v| v.position - len <= pos && pos <= v.position);
                samples[det].occupancy = if covered { 1.0 } else { 0.0 };
            }
        }
    }

    fn advance_signals(&mut self) {
        for (i, signal) in self.signals.iter_mut().enumerate() {
            signal.clock += self.dt;
            loop {
                let period = signal.durations[signal.active] + self.net.interphase[i];
                if signal.clock < period {
                    break;
                }
                signal.clock -= period;
                signal.active = (signal.active + 1) % signal.durations.len();
                if let Some(new) = signal.pending.take() {
                    signal.durations = new;
                }
            }
        }
    }

    /// Runs one episode step and returns the aggregated detector readings.
    pub fn run_episode_step(&mut self) -> EpisodeStepObservation {
        for acc in &mut self.accumulators {
            *acc = DetectorAccumulator::default();
        }
        for _ in 0..self.steps_per_episode_step {
            self.sim_step();
        }
        EpisodeStepObservation {
            clock: self.clock(),
            detectors: self
                .accumulators
                .iter()
                .zip(&self.net.detector_max_speed)
                .map(|(acc, &vmax)| acc.finish(vmax))
                .collect(),
        }
    }
}

/// Counts a crossing for every detector at `p` with `from < p <= to`.
/// `from = None` means the vehicle entered the section this step.
fn record_crossings(
    detectors: &[(usize, f64)],
    from: Option<f64>,
    to: f64,
    speed: f64,
    samples: &mut [DetectorSample],
) {
    for &(det, p) in detectors {
        if from.is_none_or(|f| f < p) && p <= to {
            samples[det].count += 1;
            samples[det].speed_sum += speed;
        }
    }
}
