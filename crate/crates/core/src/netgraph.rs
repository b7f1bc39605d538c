//! Road network, signal plans, detectors and demand.
//!
//! A [`Scenario`] is the immutable input to every simulation. It is stored on
//! disk as a TOML document (see `docs/scenario.md`) and is validated on load;
//! the built-in generators for the two benchmark networks go through the same
//! validator.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use petgraph::algo::astar;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Seed for the randomized network-B demand matrix.
pub const NETWORK_B_DEMAND_SEED: u64 = 0x5eed_000b;

/// Relative tolerance used when checking that timing constants divide evenly.
const DIVISIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
}

/// A directed road segment between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Meters.
    pub length: f64,
    pub lanes: u32,
    /// Speed limit in km/h.
    pub max_speed: f64,
}

impl Section {
    pub fn max_speed_ms(&self) -> f64 {
        self.max_speed / 3.6
    }
}

/// A turning movement from an incoming to an outgoing section.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Movement(pub String, pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub id: String,
    /// Base green time in seconds.
    pub duration: f64,
    pub movements: Vec<Movement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: String,
    pub node: String,
    /// All-red clearance after every phase, seconds.
    pub interphase: f64,
    /// Optional declared cycle; checked against the phase sum when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<f64>,
    pub phases: Vec<Phase>,
}

impl Intersection {
    /// Σ base durations + n_phases × interphase.
    pub fn cycle(&self) -> f64 {
        self.green_time() + self.phases.len() as f64 * self.interphase
    }

    /// Σ base durations.
    pub fn green_time(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub id: String,
    pub section: String,
    /// Meters from the start of the section.
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub id: String,
    /// Sections where generated vehicles enter the network.
    pub sources: Vec<String>,
    /// Sections whose downstream end absorbs arriving vehicles.
    pub sinks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandEntry {
    pub origin: String,
    pub destination: String,
    pub vehicles_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    #[serde(default = "default_sim_step")]
    pub sim_step: f64,
    #[serde(default = "default_episode_step")]
    pub episode_step: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_sim_step() -> f64 {
    0.75
}
fn default_episode_step() -> f64 {
    120.0
}
fn default_horizon() -> f64 {
    3600.0
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            sim_step: default_sim_step(),
            episode_step: default_episode_step(),
            horizon: default_horizon(),
        }
    }
}

impl Timing {
    pub fn sim_steps_per_episode_step(&self) -> usize {
        (self.episode_step / self.sim_step).round() as usize
    }

    pub fn episode_steps(&self) -> usize {
        (self.horizon / self.episode_step).round() as usize
    }
}

/// Car-following and vehicle parameters shared by every vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverParams {
    /// m/s².
    pub accel: f64,
    /// Comfortable deceleration, m/s².
    pub decel: f64,
    /// Hardest braking a driver accepts before running a fresh red, m/s².
    pub emergency_decel: f64,
    /// Seconds.
    pub reaction_time: f64,
    /// Krauss dawdling factor in [0, 1].
    pub dawdle: f64,
    /// Meters.
    pub length: f64,
    /// Standstill gap to the leader, meters.
    pub min_gap: f64,
    /// m/s.
    pub max_speed: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        DriverParams {
            accel: 2.6,
            decel: 4.5,
            emergency_decel: 9.0,
            reaction_time: 1.0,
            dawdle: 0.5,
            length: 5.0,
            min_gap: 2.5,
            max_speed: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub driver: DriverParams,
    pub nodes: Vec<Node>,
    pub sections: Vec<Section>,
    #[serde(default)]
    pub intersections: Vec<Intersection>,
    #[serde(default)]
    pub detectors: Vec<Detector>,
    #[serde(default)]
    pub centroids: Vec<Centroid>,
    #[serde(default)]
    pub demand: Vec<DemandEntry>,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_toml(&text)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    fs::write(path, scenario.to_toml()).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes to TOML")
    }

    /// Content hash of the canonical serialization, used to key baseline caches.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn n_detectors(&self) -> usize {
        self.detectors.len()
    }

    pub fn n_phases(&self) -> usize {
        self.intersections.iter().map(|i| i.phases.len()).sum()
    }

    pub fn section_index(&self, id: &str) -> Option<usize> {
        self.sections.iter().position(|s| s.id == id)
    }

    pub fn centroid_index(&self, id: &str) -> Option<usize> {
        self.centroids.iter().position(|c| c.id == id)
    }

    /// Checks every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let t = &self.timing;
        if !(t.sim_step > 0.0 && t.sim_step.is_finite()) {
            return invalid(format!("sim_step must be positive, got {}", t.sim_step));
        }
        if !is_multiple(t.episode_step, t.sim_step) {
            return invalid(format!(
                "episode_step {} is not an integer multiple of sim_step {}",
                t.episode_step, t.sim_step
            ));
        }
        if !is_multiple(t.horizon, t.episode_step) {
            return invalid(format!(
                "horizon {} is not an integer multiple of episode_step {}",
                t.horizon, t.episode_step
            ));
        }
        let d = &self.driver;
        for (name, v) in [
            ("accel", d.accel),
            ("decel", d.decel),
            ("emergency_decel", d.emergency_decel),
            ("reaction_time", d.reaction_time),
            ("length", d.length),
            ("max_speed", d.max_speed),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("driver.{name} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&d.dawdle) || !(d.min_gap >= 0.0) {
            return invalid("driver.dawdle must lie in [0, 1] and driver.min_gap be non-negative");
        }

        let nodes = unique_ids("node", self.nodes.iter().map(|n| n.id.as_str()))?;
        let sections = unique_ids("section", self.sections.iter().map(|s| s.id.as_str()))?;
        for s in &self.sections {
            if !(s.length > 0.0 && s.length.is_finite()) {
                return invalid(format!("section {} has non-positive length {}", s.id, s.length));
            }
            if !(s.max_speed > 0.0 && s.max_speed.is_finite()) {
                return invalid(format!("section {} has non-positive max_speed {}", s.id, s.max_speed));
            }
            if s.lanes < 1 {
                return invalid(format!("section {} has no lanes", s.id));
            }
            for n in [&s.from, &s.to] {
                if !nodes.contains(n.as_str()) {
                    return invalid(format!("section {} references unknown node {n}", s.id));
                }
            }
        }
        let by_id: HashMap<&str, &Section> =
            self.sections.iter().map(|s| (s.id.as_str(), s)).collect();

        unique_ids("intersection", self.intersections.iter().map(|i| i.id.as_str()))?;
        unique_ids("intersection node", self.intersections.iter().map(|i| i.node.as_str()))?;
        for ix in &self.intersections {
            if !nodes.contains(ix.node.as_str()) {
                return invalid(format!("intersection {} references unknown node {}", ix.id, ix.node));
            }
            if ix.phases.is_empty() {
                return invalid(format!("intersection {} has no phases", ix.id));
            }
            if !(ix.interphase >= 0.0 && ix.interphase.is_finite()) {
                return invalid(format!("intersection {} has negative interphase", ix.id));
            }
            unique_ids("phase", ix.phases.iter().map(|p| p.id.as_str()))?;
            for p in &ix.phases {
                if !(p.duration > 0.0 && p.duration.is_finite()) {
                    return invalid(format!(
                        "phase {} of intersection {} has non-positive duration",
                        p.id, ix.id
                    ));
                }
                for Movement(a, b) in &p.movements {
                    let (Some(sa), Some(sb)) = (by_id.get(a.as_str()), by_id.get(b.as_str())) else {
                        return invalid(format!(
                            "phase {} of intersection {} references unknown section in ({a}, {b})",
                            p.id, ix.id
                        ));
                    };
                    if sa.to != ix.node || sb.from != ix.node {
                        return invalid(format!(
                            "movement ({a}, {b}) in phase {} does not pass through node {}",
                            p.id, ix.node
                        ));
                    }
                }
            }
            if let Some(c) = ix.cycle {
                if (c - ix.cycle()).abs() > 1e-9 {
                    return invalid(format!(
                        "intersection {} declares cycle {c} but phases sum to {}",
                        ix.id,
                        ix.cycle()
                    ));
                }
            }
        }

        unique_ids("detector", self.detectors.iter().map(|d| d.id.as_str()))?;
        for det in &self.detectors {
            let Some(s) = by_id.get(det.section.as_str()) else {
                return invalid(format!("detector {} is on unknown section {}", det.id, det.section));
            };
            if !(det.position >= 0.0 && det.position <= s.length) {
                return invalid(format!(
                    "detector {} position {} outside section {} (length {})",
                    det.id, det.position, s.id, s.length
                ));
            }
        }

        let centroids = unique_ids("centroid", self.centroids.iter().map(|c| c.id.as_str()))?;
        for c in &self.centroids {
            for s in c.sources.iter().chain(&c.sinks) {
                if !sections.contains(s.as_str()) {
                    return invalid(format!("centroid {} references unknown section {s}", c.id));
                }
            }
        }
        for e in &self.demand {
            for c in [&e.origin, &e.destination] {
                if !centroids.contains(c.as_str()) {
                    return invalid(format!("demand references unknown centroid {c}"));
                }
            }
            if !(e.vehicles_per_hour >= 0.0 && e.vehicles_per_hour.is_finite()) {
                return invalid(format!(
                    "demand {} -> {} has invalid rate {}",
                    e.origin, e.destination, e.vehicles_per_hour
                ));
            }
            if e.vehicles_per_hour > 0.0 && self.route(&e.origin, &e.destination).is_none() {
                return invalid(format!("no route from {} to {}", e.origin, e.destination));
            }
        }
        Ok(())
    }

    /// Whether a vehicle may turn from section `from` into section `to`.
    ///
    /// At signalized nodes a movement must appear in at least one phase; at
    /// plain nodes every continuation except an immediate U-turn is allowed.
    pub fn movement_allowed(&self, from: usize, to: usize) -> bool {
        let (a, b) = (&self.sections[from], &self.sections[to]);
        if a.to != b.from {
            return false;
        }
        match self.intersections.iter().find(|ix| ix.node == a.to) {
            Some(ix) => ix
                .phases
                .iter()
                .any(|p| p.movements.iter().any(|m| m.0 == a.id && m.1 == b.id)),
            None => b.to != a.from,
        }
    }

    /// Free-flow shortest path between two centroids as a list of section
    /// indices, from one of the origin's sources to one of the destination's
    /// sinks.
    pub fn route(&self, origin: &str, destination: &str) -> Option<Vec<usize>> {
        let o = &self.centroids[self.centroid_index(origin)?];
        let d = &self.centroids[self.centroid_index(destination)?];
        let (graph, idx) = self.section_graph();
        let sinks: HashSet<NodeIndex> = d
            .sinks
            .iter()
            .filter_map(|s| self.section_index(s))
            .map(|i| idx[i])
            .collect();
        let mut best: Option<(f64, Vec<NodeIndex>)> = None;
        for src in o.sources.iter().filter_map(|s| self.section_index(s)) {
            let own = travel_time(&self.sections[src]);
            if let Some((cost, path)) =
                astar(&graph, idx[src], |n| sinks.contains(&n), |e| *e.weight(), |_| 0.0)
            {
                let total = cost + own;
                if best.as_ref().is_none_or(|(c, _)| total < *c) {
                    best = Some((total, path));
                }
            }
        }
        best.map(|(_, path)| path.into_iter().map(|n| graph[n]).collect())
    }

    fn section_graph(&self) -> (DiGraph<usize, f64>, Vec<NodeIndex>) {
        let mut g = DiGraph::new();
        let idx: Vec<NodeIndex> = (0..self.sections.len()).map(|i| g.add_node(i)).collect();
        for (i, a) in self.sections.iter().enumerate() {
            for (j, b) in self.sections.iter().enumerate() {
                if a.to == b.from && self.movement_allowed(i, j) {
                    g.add_edge(idx[i], idx[j], travel_time(b));
                }
            }
        }
        (g, idx)
    }
}

fn travel_time(s: &Section) -> f64 {
    s.length / s.max_speed_ms()
}

fn is_multiple(value: f64, unit: f64) -> bool {
    if !(value > 0.0 && value.is_finite()) {
        return false;
    }
    let q = value / unit;
    (q - q.round()).abs() <= DIVISIBILITY_TOL * q.max(1.0) && q.round() >= 1.0
}

fn unique_ids<'a>(
    kind: &str,
    ids: impl Iterator<Item = &'a str>,
) -> Result<HashSet<&'a str>, ScenarioError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return invalid(format!("duplicate {kind} id {id}"));
        }
    }
    Ok(seen)
}

// ---------------------------------------------------------------------------
// Built-in networks
// ---------------------------------------------------------------------------

const ARM_LENGTH: f64 = 500.0;
const DETECTOR_OFFSET: f64 = 50.0;
const URBAN_SPEED_KMH: f64 = 50.0;

fn section(id: String, from: &str, to: &str, length: f64, lanes: u32) -> Section {
    Section {
        id,
        from: from.to_string(),
        to: to.to_string(),
        length,
        lanes,
        max_speed: URBAN_SPEED_KMH,
    }
}

fn mv(a: &str, b: &str) -> Movement {
    Movement(a.to_string(), b.to_string())
}

fn phase(id: &str, duration: f64, movements: Vec<Movement>) -> Phase {
    Phase {
        id: id.to_string(),
        duration,
        movements,
    }
}

/// Single junction of two crossing roads with one lane per direction.
///
/// Straight and right turns only; phase 1 serves the horizontal road for
/// 15 s, phase 2 the vertical road for 70 s, with a 5 s all-red between.
pub fn generate_network_a() -> Scenario {
    const ARMS: [&str; 4] = ["north", "east", "south", "west"];
    let mut nodes = vec![Node { id: "center".into() }];
    let mut sections = Vec::new();
    let mut detectors = Vec::new();
    let mut centroids = Vec::new();
    for arm in ARMS {
        nodes.push(Node { id: arm.into() });
        let inbound = format!("{arm}_in");
        let outbound = format!("{arm}_out");
        sections.push(section(inbound.clone(), arm, "center", ARM_LENGTH, 1));
        sections.push(section(outbound.clone(), "center", arm, ARM_LENGTH, 1));
        detectors.push(Detector {
            id: format!("{arm}_before"),
            section: inbound.clone(),
            position: ARM_LENGTH - DETECTOR_OFFSET,
        });
        detectors.push(Detector {
            id: format!("{arm}_after"),
            section: outbound.clone(),
            position: DETECTOR_OFFSET,
        });
        centroids.push(Centroid {
            id: arm.into(),
            sources: vec![inbound],
            sinks: vec![outbound],
        });
    }

    // (origin arm, straight destination, right-turn destination)
    let turns = [
        ("north", "south", "west"),
        ("east", "west", "north"),
        ("south", "north", "east"),
        ("west", "east", "south"),
    ];
    let moves = |arm: &str| -> Vec<Movement> {
        let (_, straight, right) = turns.iter().find(|t| t.0 == arm).unwrap();
        vec![
            mv(&format!("{arm}_in"), &format!("{straight}_out")),
            mv(&format!("{arm}_in"), &format!("{right}_out")),
        ]
    };
    let horizontal = [moves("west"), moves("east")].concat();
    let vertical = [moves("north"), moves("south")].concat();
    let intersections = vec![Intersection {
        id: "junction".into(),
        node: "center".into(),
        interphase: 5.0,
        cycle: Some(95.0),
        phases: vec![
            phase("horizontal", 15.0, horizontal),
            phase("vertical", 70.0, vertical),
        ],
    }];

    let demand = turns
        .iter()
        .flat_map(|(o, s, r)| {
            [s, r].into_iter().map(move |d| DemandEntry {
                origin: o.to_string(),
                destination: d.to_string(),
                vehicles_per_hour: 150.0,
            })
        })
        .collect();

    let scenario = Scenario {
        name: "network-a".into(),
        timing: Timing::default(),
        driver: DriverParams::default(),
        nodes,
        sections,
        intersections,
        detectors,
        centroids,
        demand,
    };
    scenario.validate().expect("network A is valid");
    scenario
}

const GRID_COLS: usize = 3;
const GRID_ROWS: usize = 2;
const GRID_BLOCK: f64 = 400.0;
const GRID_ARM: f64 = 300.0;
const GRID_INTERPHASE: f64 = 3.0;

/// 3×2 grid of signalized junctions with all turns allowed.
///
/// Junction `j00` runs four split phases, `j21` six phases and the others
/// five, for 30 phases in total. One detector sits on every road segment
/// (17 in all) and the demand matrix is drawn from a fixed seed.
pub fn generate_network_b() -> Scenario {
    let junction = |c: usize, r: usize| format!("j{c}{r}");
    let mut nodes = Vec::new();
    for r in 0..GRID_ROWS {
        for c in 0..GRID_COLS {
            nodes.push(Node { id: junction(c, r) });
        }
    }
    let mut boundary = Vec::new();
    for c in 0..GRID_COLS {
        boundary.push(format!("n{c}"));
        boundary.push(format!("s{c}"));
    }
    for r in 0..GRID_ROWS {
        boundary.push(format!("w{r}"));
        boundary.push(format!("e{r}"));
    }
    nodes.extend(boundary.iter().map(|b| Node { id: b.clone() }));

    // Road segments as (a, b, length), each becoming two directed sections.
    // The detector sits on the a->b direction unless `flip` is set.
    let mut segments: Vec<(String, String, f64, bool)> = Vec::new();
    for r in 0..GRID_ROWS {
        let flip = r % 2 == 1;
        segments.push((format!("w{r}"), junction(0, r), GRID_ARM, flip));
        for c in 0..GRID_COLS - 1 {
            segments.push((junction(c, r), junction(c + 1, r), GRID_BLOCK, flip));
        }
        segments.push((junction(GRID_COLS - 1, r), format!("e{r}"), GRID_ARM, flip));
    }
    for c in 0..GRID_COLS {
        let flip = c % 2 == 1;
        segments.push((format!("n{c}"), junction(c, 0), GRID_ARM, flip));
        for r in 0..GRID_ROWS - 1 {
            segments.push((junction(c, r), junction(c, r + 1), GRID_BLOCK, flip));
        }
        segments.push((junction(c, GRID_ROWS - 1), format!("s{c}"), GRID_ARM, flip));
    }

    let sid = |a: &str, b: &str| format!("{a}_{b}");
    let mut sections = Vec::new();
    let mut detectors = Vec::new();
    for (a, b, len, flip) in &segments {
        sections.push(section(sid(a, b), a, b, *len, 2));
        sections.push(section(sid(b, a), b, a, *len, 2));
        let (from, to) = if *flip { (b, a) } else { (a, b) };
        let ends_at_junction = to.starts_with('j');
        detectors.push(Detector {
            id: format!("det_{from}_{to}"),
            section: sid(from, to),
            position: if ends_at_junction { len - DETECTOR_OFFSET } else { DETECTOR_OFFSET },
        });
    }

    let mut intersections = Vec::new();
    for r in 0..GRID_ROWS {
        for c in 0..GRID_COLS {
            let j = junction(c, r);
            let north = if r == 0 { format!("n{c}") } else { junction(c, r - 1) };
            let south = if r + 1 == GRID_ROWS { format!("s{c}") } else { junction(c, r + 1) };
            let west = if c == 0 { format!("w{r}") } else { junction(c - 1, r) };
            let east = if c + 1 == GRID_COLS { format!("e{r}") } else { junction(c + 1, r) };
            let inn = |n: &str| sid(n, &j);
            let out = |n: &str| sid(&j, n);
            // Approach-relative movements: (left, straight, right).
            let from_n = [mv(&inn(&north), &out(&east)), mv(&inn(&north), &out(&south)), mv(&inn(&north), &out(&west))];
            let from_s = [mv(&inn(&south), &out(&west)), mv(&inn(&south), &out(&north)), mv(&inn(&south), &out(&east))];
            let from_e = [mv(&inn(&east), &out(&south)), mv(&inn(&east), &out(&west)), mv(&inn(&east), &out(&north))];
            let from_w = [mv(&inn(&west), &out(&north)), mv(&inn(&west), &out(&east)), mv(&inn(&west), &out(&south))];
            let left = |a: &[Movement; 3], b: &[Movement; 3]| vec![a[0].clone(), b[0].clone()];
            let through = |a: &[Movement; 3]| vec![a[1].clone(), a[2].clone()];
            let phases = match (c, r) {
                (0, 0) => vec![
                    phase("north", 18.0, from_n.to_vec()),
                    phase("east", 18.0, from_e.to_vec()),
                    phase("south", 18.0, from_s.to_vec()),
                    phase("west", 18.0, from_w.to_vec()),
                ],
                (2, 1) => vec![
                    phase("ns_left", 10.0, left(&from_n, &from_s)),
                    phase("n_through", 16.0, through(&from_n)),
                    phase("s_through", 16.0, through(&from_s)),
                    phase("ew_left", 10.0, left(&from_e, &from_w)),
                    phase("e_through", 16.0, through(&from_e)),
                    phase("w_through", 16.0, through(&from_w)),
                ],
                _ => vec![
                    phase("ns_left", 10.0, left(&from_n, &from_s)),
                    phase("ns_through", 24.0, [through(&from_n), through(&from_s)].concat()),
                    phase("ew_left", 10.0, left(&from_e, &from_w)),
                    phase("ew_through", 24.0, [through(&from_e), through(&from_w)].concat()),
                    phase(
                        "rights",
                        8.0,
                        vec![from_n[2].clone(), from_s[2].clone(), from_e[2].clone(), from_w[2].clone()],
                    ),
                ],
            };
            let mut ix = Intersection {
                id: format!("signal_{j}"),
                node: j.clone(),
                interphase: GRID_INTERPHASE,
                cycle: None,
                phases,
            };
            ix.cycle = Some(ix.cycle());
            intersections.push(ix);
        }
    }

    let centroids: Vec<Centroid> = boundary
        .iter()
        .map(|b| {
            let seg = segments
                .iter()
                .find(|(x, y, _, _)| x == b || y == b)
                .expect("boundary node has a segment");
            let j = if &seg.0 == b { &seg.1 } else { &seg.0 };
            Centroid {
                id: b.clone(),
                sources: vec![sid(b, j)],
                sinks: vec![sid(j, b)],
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(NETWORK_B_DEMAND_SEED);
    let mut demand = Vec::new();
    for o in &centroids {
        for d in &centroids {
            if o.id != d.id {
                demand.push(DemandEntry {
                    origin: o.id.clone(),
                    destination: d.id.clone(),
                    vehicles_per_hour: rng.random_range(15..=60) as f64,
                });
            }
        }
    }

    let scenario = Scenario {
        name: "network-b".into(),
        timing: Timing::default(),
        driver: DriverParams::default(),
        nodes,
        sections,
        intersections,
        detectors,
        centroids,
        demand,
    };
    scenario.validate().expect("network B is valid");
    scenario
}

/// Resolves a scenario argument: either a built-in name or a file path.
pub fn resolve_scenario(spec: &str) -> Result<Scenario, ScenarioError> {
    match spec {
        "network-a" | "a" => Ok(generate_network_a()),
        "network-b" | "b" => Ok(generate_network_b()),
        path => load_scenario(path),
    }
}
