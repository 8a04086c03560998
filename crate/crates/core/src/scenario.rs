//! Problem instances: tasks, users, servers, service criticality, and
//! seeded scenario generation.
//!
//! A [`Scenario`] is immutable after construction and is the single input
//! every scheduler consumes. Generation is a pure function of
//! ([`GenSpec`], seed): the same spec and seed produce a byte-identical
//! scenario file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Link, Topology};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
    #[error("scenario violates invariant: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Globally unique task identifier.
    TaskId
);
id_type!(
    /// Edge user (camera) identifier.
    UserId
);
id_type!(
    /// Edge server identifier; server order in the scenario is the
    /// deterministic tie-break order used by the schedulers.
    ServerId
);
id_type!(
    /// Topology zone identifier.
    ZoneId
);

/// The four surveillance services an edge user can run, ordered by the
/// default criticality ranking (crowd counting highest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Service {
    CrowdCounting,
    FaceRecognition,
    MlDevCrowd,
    MlDevFace,
}

impl Service {
    pub const ALL: [Service; 4] = [
        Service::CrowdCounting,
        Service::FaceRecognition,
        Service::MlDevCrowd,
        Service::MlDevFace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Service::CrowdCounting => "crowd_counting",
            Service::FaceRecognition => "face_recognition",
            Service::MlDevCrowd => "ml_dev_crowd",
            Service::MlDevFace => "ml_dev_face",
        }
    }
}

/// One offloaded unit of work with timing and resource demands.
///
/// Times are in seconds, `cpu_demand` in processor cycles per megabyte of
/// task data, `data_size_ram` and `storage_demand` in megabytes. A task is
/// single-shot: `period` is retained as metadata and a zero period means
/// the task releases exactly one job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub user_id: UserId,
    pub arrival_time: f64,
    pub period: f64,
    pub deadline: f64,
    pub cpu_demand: f64,
    pub data_size_ram: f64,
    pub storage_demand: f64,
    pub predecessor: Option<TaskId>,
    pub criticality_rank: u8,
}

impl Task {
    fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: String| Err(ScenarioError::Invariant(m));
        if !(self.deadline > 0.0) {
            return err(format!("task {}: deadline must be > 0", self.id));
        }
        if !(self.cpu_demand > 0.0) {
            return err(format!("task {}: cpu_demand must be > 0", self.id));
        }
        if !(self.data_size_ram > 0.0) {
            return err(format!("task {}: data_size_ram must be > 0", self.id));
        }
        if self.storage_demand < 0.0 {
            return err(format!("task {}: storage_demand must be >= 0", self.id));
        }
        if self.arrival_time < 0.0 {
            return err(format!("task {}: arrival_time must be >= 0", self.id));
        }
        if self.period != 0.0 && self.period < self.deadline {
            return err(format!(
                "task {}: period must be 0 (single-shot) or >= deadline",
                self.id
            ));
        }
        if !(1..=4).contains(&self.criticality_rank) {
            return err(format!("task {}: criticality_rank must be in 1..=4", self.id));
        }
        Ok(())
    }
}

/// A compute node characterized by processor frequency (cycles/s), core
/// count, RAM capacity (MB), and storage capacity (MB).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeServer {
    pub id: ServerId,
    pub zone: ZoneId,
    pub cpu_freq: f64,
    pub cores: u32,
    pub ram_capacity: f64,
    pub storage_capacity: f64,
}

impl EdgeServer {
    /// Total processing capacity in cycles per second.
    pub fn capacity_cycles(&self) -> f64 {
        self.cpu_freq * self.cores as f64
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.cpu_freq > 0.0)
            || self.cores < 1
            || !(self.ram_capacity > 0.0)
            || !(self.storage_capacity > 0.0)
        {
            return Err(ScenarioError::Invariant(format!(
                "server {}: F > 0, N >= 1, M > 0, L > 0 required",
                self.id
            )));
        }
        Ok(())
    }
}

/// A camera running one service, with an ordered task workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeUser {
    pub id: UserId,
    pub zone: ZoneId,
    pub service: Service,
    pub workload: Vec<Task>,
}

impl EdgeUser {
    fn validate(&self) -> Result<(), ScenarioError> {
        if self.workload.is_empty() {
            return Err(ScenarioError::Invariant(format!(
                "user {}: workload must be non-empty",
                self.id
            )));
        }
        let ids: Vec<TaskId> = self.workload.iter().map(|t| t.id).collect();
        for t in &self.workload {
            t.validate()?;
            if t.user_id != self.id {
                return Err(ScenarioError::Invariant(format!(
                    "task {} does not reference its user {}",
                    t.id, self.id
                )));
            }
            if let Some(p) = t.predecessor {
                if !ids.contains(&p) {
                    return Err(ScenarioError::Invariant(format!(
                        "task {}: predecessor {} is not a task of user {}",
                        t.id, p, self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The full problem instance: users, servers, topology, and the service
/// criticality ranking. Immutable after construction; safe to share
/// across concurrent runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub users: Vec<EdgeUser>,
    pub servers: Vec<EdgeServer>,
    pub topology: Topology,
    pub criticality_map: BTreeMap<Service, u8>,
}

impl Scenario {
    /// Validates every type invariant; called by loaders and generators.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.servers.is_empty() {
            return Err(ScenarioError::Invariant("at least one server required".into()));
        }
        if self.users.is_empty() {
            return Err(ScenarioError::Invariant("at least one user required".into()));
        }
        self.topology.validate().map_err(|e| ScenarioError::Invariant(e.to_string()))?;
        for s in &self.servers {
            s.validate()?;
            if !self.topology.zones.contains(&s.zone) {
                return Err(ScenarioError::Invariant(format!(
                    "server {} zone {} not in topology",
                    s.id, s.zone
                )));
            }
        }
        for u in &self.users {
            u.validate()?;
            if !self.topology.zones.contains(&u.zone) {
                return Err(ScenarioError::Invariant(format!(
                    "user {} zone {} not in topology",
                    u.id, u.zone
                )));
            }
        }
        let mut ranks: Vec<u8> = Service::ALL
            .iter()
            .map(|s| self.criticality_map.get(s).copied().unwrap_or(0))
            .collect();
        ranks.sort_unstable();
        if ranks != vec![1, 2, 3, 4] {
            return Err(ScenarioError::Invariant(
                "criticality_map ranks must be a permutation of 1..=4".into(),
            ));
        }
        for u in &self.users {
            for t in &u.workload {
                if t.criticality_rank != self.criticality_map[&u.service] {
                    return Err(ScenarioError::Invariant(format!(
                        "task {}: criticality_rank disagrees with criticality_map",
                        t.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// All tasks, concatenated in user order; the index of a task in this
    /// list is its row in every decision matrix. Ordering is stable:
    /// users by id, tasks by id within a workload.
    pub fn all_tasks(&self) -> Vec<&Task> {
        let mut users: Vec<&EdgeUser> = self.users.iter().collect();
        users.sort_by_key(|u| u.id);
        let mut out = Vec::new();
        for u in users {
            let mut tasks: Vec<&Task> = u.workload.iter().collect();
            tasks.sort_by_key(|t| t.id);
            out.extend(tasks);
        }
        out
    }

    pub fn task(&self, id: TaskId) -> Option<&Task> {
        self.users.iter().flat_map(|u| u.workload.iter()).find(|t| t.id == id)
    }

    pub fn server(&self, id: ServerId) -> Option<&EdgeServer> {
        self.servers.iter().find(|s| s.id == id)
    }

    pub fn user(&self, id: UserId) -> Option<&EdgeUser> {
        self.users.iter().find(|u| u.id == id)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let sc: Scenario = serde_json::from_str(&text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> Result<String, ScenarioError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Default criticality ranking: crowd counting 1 (highest), face
/// recognition 2, ML development for crowd counting 3, for face
/// recognition 4.
pub fn default_criticality_map() -> BTreeMap<Service, u8> {
    let mut m = BTreeMap::new();
    m.insert(Service::CrowdCounting, 1);
    m.insert(Service::FaceRecognition, 2);
    m.insert(Service::MlDevCrowd, 3);
    m.insert(Service::MlDevFace, 4);
    m
}

/// Rank of a service under a given map (1 = highest criticality).
pub fn criticality_rank(service: Service, map: &BTreeMap<Service, u8>) -> u8 {
    map[&service]
}

/// Uniform sampling range, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// Per-service workload template: task count and parameter ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceTemplate {
    pub task_count: usize,
    pub cpu_cycles_per_mb: Range,
    pub ram_mb: Range,
    pub storage_mb: Range,
    pub deadline_s: Range,
    /// Link each task to its predecessor within the workload.
    pub chain: bool,
}

/// The four service templates of one profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceTemplates {
    pub crowd_counting: ServiceTemplate,
    pub face_recognition: ServiceTemplate,
    pub ml_dev_crowd: ServiceTemplate,
    pub ml_dev_face: ServiceTemplate,
}

impl ServiceTemplates {
    pub fn get(&self, service: Service) -> &ServiceTemplate {
        match service {
            Service::CrowdCounting => &self.crowd_counting,
            Service::FaceRecognition => &self.face_recognition,
            Service::MlDevCrowd => &self.ml_dev_crowd,
            Service::MlDevFace => &self.ml_dev_face,
        }
    }
}

#[derive(Debug, Deserialize)]
struct TemplateFile {
    profiles: BTreeMap<String, ServiceTemplates>,
}

static TEMPLATE_FILE: OnceLock<TemplateFile> = OnceLock::new();

fn template_file() -> &'static TemplateFile {
    TEMPLATE_FILE.get_or_init(|| {
        serde_json::from_str(include_str!("../data/service_templates.json"))
            .expect("bundled service_templates.json parses")
    })
}

/// Templates shipped with the crate. `profile` is `"paper"` or `"desk"`.
pub fn builtin_templates(profile: &str) -> Option<ServiceTemplates> {
    template_file().profiles.get(profile).cloned()
}

/// Per-service user counts for scenario generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceCounts {
    pub crowd_counting: usize,
    pub face_recognition: usize,
    pub ml_dev_crowd: usize,
    pub ml_dev_face: usize,
}

impl ServiceCounts {
    pub fn total(&self) -> usize {
        self.crowd_counting + self.face_recognition + self.ml_dev_crowd + self.ml_dev_face
    }
}

/// Server hardware description used by the generator; the zone is chosen
/// by the generator, evenly spread across the zone ring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub cpu_freq: f64,
    pub cores: u32,
    pub ram_capacity: f64,
    pub storage_capacity: f64,
}

/// Full input to [`generate_scenario`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSpec {
    pub counts: ServiceCounts,
    pub zone_count: usize,
    pub server_specs: Vec<ServerSpec>,
    pub seed: u64,
    pub wireless_latency_ms: f64,
    pub link_latency_ms: f64,
    pub link_bandwidth_mbps: f64,
    pub templates: ServiceTemplates,
}

impl GenSpec {
    /// A spec with the uniform network defaults (wired 1 ms/link, wireless
    /// 2 ms, 100 MB/s) and the given profile's templates.
    pub fn new(
        counts: ServiceCounts,
        zone_count: usize,
        server_specs: Vec<ServerSpec>,
        seed: u64,
        profile: &str,
    ) -> Option<Self> {
        Some(GenSpec {
            counts,
            zone_count,
            server_specs,
            seed,
            wireless_latency_ms: 2.0,
            link_latency_ms: 1.0,
            link_bandwidth_mbps: 100.0,
            templates: builtin_templates(profile)?,
        })
    }
}

/// Generates a scenario deterministically from the spec and its seed.
///
/// Users are placed uniformly at random across zones and each workload is
/// instantiated from its service template. Zones form a ring with
/// `zone_count / 2` extra chords, so the link graph is a connected
/// partial mesh.
pub fn generate_scenario(spec: &GenSpec) -> Result<Scenario, ScenarioError> {
    if spec.counts.total() == 0 {
        return Err(ScenarioError::InvalidSpec("at least one user required".into()));
    }
    if spec.server_specs.is_empty() {
        return Err(ScenarioError::InvalidSpec("at least one server required".into()));
    }
    if spec.zone_count == 0 {
        return Err(ScenarioError::InvalidSpec("at least one zone required".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let zones: Vec<ZoneId> = (0..spec.zone_count as u32).map(ZoneId).collect();

    // Ring plus seeded chords; a single zone has no links.
    let mut links = Vec::new();
    let n = spec.zone_count as u32;
    if n > 1 {
        for i in 0..n {
            let j = (i + 1) % n;
            if i < j || n == 2 && i == 0 {
                links.push(Link {
                    a: ZoneId(i.min(j)),
                    b: ZoneId(i.max(j)),
                    latency_ms: spec.link_latency_ms,
                    bandwidth_mbps: spec.link_bandwidth_mbps,
                });
            }
        }
        if n == 2 {
            links.truncate(1);
        } else {
            links.push(Link {
                a: ZoneId(0),
                b: ZoneId(n - 1),
                latency_ms: spec.link_latency_ms,
                bandwidth_mbps: spec.link_bandwidth_mbps,
            });
        }
        let chords = spec.zone_count / 2;
        let mut placed = 0usize;
        let mut attempts = 0usize;
        while placed < chords && attempts < chords * 20 {
            attempts += 1;
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let (a, b) = (a.min(b), a.max(b));
            if links.iter().any(|l| l.a == ZoneId(a) && l.b == ZoneId(b)) {
                continue;
            }
            links.push(Link {
                a: ZoneId(a),
                b: ZoneId(b),
                latency_ms: spec.link_latency_ms,
                bandwidth_mbps: spec.link_bandwidth_mbps,
            });
            placed += 1;
        }
    }

    // Servers evenly spread across the ring.
    let servers: Vec<EdgeServer> = spec
        .server_specs
        .iter()
        .enumerate()
        .map(|(i, s)| EdgeServer {
            id: ServerId(i as u32),
            zone: ZoneId((i * spec.zone_count / spec.server_specs.len()) as u32),
            cpu_freq: s.cpu_freq,
            cores: s.cores,
            ram_capacity: s.ram_capacity,
            storage_capacity: s.storage_capacity,
        })
        .collect();

    let topology = Topology {
        zones,
        links,
        server_zones: servers.iter().map(|s| s.zone).collect(),
        wireless_latency_ms: spec.wireless_latency_ms,
        provisioning_setup_s: 0.0,
    };

    let criticality_map = default_criticality_map();
    let mut users = Vec::new();
    let mut next_task = 0u32;
    let mut next_user = 0u32;
    let services = [
        (Service::CrowdCounting, spec.counts.crowd_counting),
        (Service::FaceRecognition, spec.counts.face_recognition),
        (Service::MlDevCrowd, spec.counts.ml_dev_crowd),
        (Service::MlDevFace, spec.counts.ml_dev_face),
    ];
    for (service, count) in services {
        for _ in 0..count {
            let user_id = UserId(next_user);
            next_user += 1;
            let zone = ZoneId(rng.random_range(0..spec.zone_count as u32));
            let tpl = spec.templates.get(service);
            let rank = criticality_map[&service];
            let mut workload = Vec::with_capacity(tpl.task_count);
            let mut prev: Option<TaskId> = None;
            for _ in 0..tpl.task_count {
                let id = TaskId(next_task);
                next_task += 1;
                workload.push(Task {
                    id,
                    user_id,
                    arrival_time: 0.0,
                    period: 0.0,
                    deadline: tpl.deadline_s.sample(&mut rng),
                    cpu_demand: tpl.cpu_cycles_per_mb.sample(&mut rng),
                    data_size_ram: tpl.ram_mb.sample(&mut rng),
                    storage_demand: tpl.storage_mb.sample(&mut rng),
                    predecessor: if tpl.chain { prev } else { None },
                    criticality_rank: rank,
                });
                prev = Some(id);
            }
            users.push(EdgeUser { id: user_id, zone, service, workload });
        }
    }

    let scenario = Scenario { seed: spec.seed, users, servers, topology, criticality_map };
    scenario.validate()?;
    Ok(scenario)
}

/// Hardware catalog used by the presets and the CLI generator, loosely
/// modeled on the platforms named in the system model (two Jetson TX2
/// boards, one Xeon E5430, one Xeon E5645). All numbers are documented
/// assumptions.
pub fn paper_server_specs() -> Vec<ServerSpec> {
    vec![
        ServerSpec { cpu_freq: 2.0e9, cores: 6, ram_capacity: 8192.0, storage_capacity: 32768.0 },
        ServerSpec { cpu_freq: 2.0e9, cores: 6, ram_capacity: 8192.0, storage_capacity: 32768.0 },
        ServerSpec {
            cpu_freq: 2.66e9,
            cores: 4,
            ram_capacity: 16384.0,
            storage_capacity: 524288.0,
        },
        ServerSpec {
            cpu_freq: 2.4e9,
            cores: 6,
            ram_capacity: 32768.0,
            storage_capacity: 1048576.0,
        },
    ]
}

/// The full-scale preset: 22 zones, 4 servers, 44 crowd-counting users,
/// 6 face-recognition users, and one ML-development user per model.
pub fn preset_paper(seed: u64) -> Scenario {
    let counts = ServiceCounts {
        crowd_counting: 44,
        face_recognition: 6,
        ml_dev_crowd: 1,
        ml_dev_face: 1,
    };
    let spec = GenSpec::new(counts, 22, paper_server_specs(), seed, "paper")
        .expect("bundled paper templates exist");
    generate_scenario(&spec).expect("paper preset is a valid spec")
}

/// Desk-scale preset: 8 users / 19 tasks on 4 heterogeneous servers.
///
/// Server 0 is a slow node behind a skinny 8 MB/s uplink three hops from
/// the user zones: it passes the capacity checks for short-deadline tasks
/// but provisioning pushes their response time past the deadline.
/// Capacity-only heuristics therefore park early-deadline tasks on it,
/// while a full-hit schedule exists on servers 1..=3.
pub fn preset_desk(seed: u64) -> Scenario {
    let templates = builtin_templates("desk").expect("bundled desk templates exist");
    let zones: Vec<ZoneId> = (0..7).map(ZoneId).collect();
    let fast = |a: u32, b: u32| Link {
        a: ZoneId(a),
        b: ZoneId(b),
        latency_ms: 1.0,
        bandwidth_mbps: 100.0,
    };
    let links = vec![
        fast(0, 1),
        fast(1, 2),
        fast(2, 3),
        fast(0, 3),
        fast(0, 4),
        fast(4, 5),
        Link { a: ZoneId(5), b: ZoneId(6), latency_ms: 1.0, bandwidth_mbps: 8.0 },
    ];
    let servers = vec![
        EdgeServer {
            id: ServerId(0),
            zone: ZoneId(6),
            cpu_freq: 0.6e9,
            cores: 2,
            ram_capacity: 2048.0,
            storage_capacity: 8192.0,
        },
        EdgeServer {
            id: ServerId(1),
            zone: ZoneId(1),
            cpu_freq: 2.0e9,
            cores: 4,
            ram_capacity: 4096.0,
            storage_capacity: 65536.0,
        },
        EdgeServer {
            id: ServerId(2),
            zone: ZoneId(2),
            cpu_freq: 2.4e9,
            cores: 4,
            ram_capacity: 8192.0,
            storage_capacity: 131072.0,
        },
        EdgeServer {
            id: ServerId(3),
            zone: ZoneId(3),
            cpu_freq: 2.66e9,
            cores: 6,
            ram_capacity: 16384.0,
            storage_capacity: 262144.0,
        },
    ];
    let topology = Topology {
        zones,
        links,
        server_zones: servers.iter().map(|s| s.zone).collect(),
        wireless_latency_ms: 2.0,
        provisioning_setup_s: 0.0,
    };

    let criticality_map = default_criticality_map();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = Vec::new();
    let mut next_task = 0u32;
    let services = [
        (Service::CrowdCounting, 6usize),
        (Service::FaceRecognition, 1),
        (Service::MlDevCrowd, 1),
    ];
    let mut next_user = 0u32;
    for (service, count) in services {
        for _ in 0..count {
            let user_id = UserId(next_user);
            next_user += 1;
            let zone = ZoneId(rng.random_range(0..4));
            let tpl = templates.get(service);
            let rank = criticality_map[&service];
            let mut workload = Vec::with_capacity(tpl.task_count);
            let mut prev = None;
            for _ in 0..tpl.task_count {
                let id = TaskId(next_task);
                next_task += 1;
                workload.push(Task {
                    id,
                    user_id,
                    arrival_time: 0.0,
                    period: 0.0,
                    deadline: tpl.deadline_s.sample(&mut rng),
                    cpu_demand: tpl.cpu_cycles_per_mb.sample(&mut rng),
                    data_size_ram: tpl.ram_mb.sample(&mut rng),
                    storage_demand: tpl.storage_mb.sample(&mut rng),
                    predecessor: if tpl.chain { prev } else { None },
                    criticality_rank: rank,
                });
                prev = Some(id);
            }
            users.push(EdgeUser { id: user_id, zone, service, workload });
        }
    }
    let scenario = Scenario { seed, users, servers, topology, criticality_map };
    scenario.validate().expect("desk preset is valid");
    scenario
}

/// Random tiny instance for oracle-based testing: at most 6 tasks over 2
/// or 3 users on at most 3 servers, no predecessor links, with a mix of
/// comfortably feasible and unreachable deadlines. Deterministic per
/// seed. Kept predecessor-free so the exhaustive optimum (which
/// evaluates inter-task terms in deadline order) bounds every
/// decision-order pipeline on the same instance.
pub fn random_tiny_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zone_count = rng.random_range(1..=3u32);
    let zones: Vec<ZoneId> = (0..zone_count).map(ZoneId).collect();
    let links: Vec<Link> = (1..zone_count)
        .map(|z| Link {
            a: ZoneId(z - 1),
            b: ZoneId(z),
            latency_ms: rng.random_range(0.5..3.0),
            bandwidth_mbps: [5.0, 20.0, 100.0][rng.random_range(0..3usize)],
        })
        .collect();
    let server_count = rng.random_range(1..=3usize);
    let servers: Vec<EdgeServer> = (0..server_count)
        .map(|i| EdgeServer {
            id: ServerId(i as u32),
            zone: ZoneId(rng.random_range(0..zone_count)),
            cpu_freq: rng.random_range(0.5e9..3.0e9),
            cores: rng.random_range(1..=2u32),
            ram_capacity: rng.random_range(64.0..1024.0),
            storage_capacity: rng.random_range(512.0..8192.0),
        })
        .collect();

    let user_count = rng.random_range(2..=3usize);
    let mut remaining = 6usize;
    let map = default_criticality_map();
    let mut users = Vec::new();
    let mut next_task = 0u32;
    for u in 0..user_count {
        let left_for_rest = user_count - u - 1;
        let hi = (remaining - left_for_rest).clamp(1, 3);
        let n_tasks = rng.random_range(1..=hi);
        remaining -= n_tasks;
        let service = Service::ALL[rng.random_range(0..4usize)];
        let rank = map[&service];
        let workload: Vec<Task> = (0..n_tasks)
            .map(|_| {
                let id = TaskId(next_task);
                next_task += 1;
                let deadline = rng.random_range(0.2..2.0);
                let m = rng.random_range(1.0..8.0);
                // Execution time on a 1e9 cycles/s reference capacity in
                // [0.05 d, 1.2 d]; slower servers and long paths push
                // some tasks out of reach entirely.
                let e_ref = deadline * rng.random_range(0.05..1.2);
                Task {
                    id,
                    user_id: UserId(u as u32),
                    arrival_time: 0.0,
                    period: 0.0,
                    deadline,
                    cpu_demand: e_ref * 1e9 / m,
                    data_size_ram: m,
                    storage_demand: rng.random_range(0.0..32.0),
                    predecessor: None,
                    criticality_rank: rank,
                }
            })
            .collect();
        users.push(EdgeUser {
            id: UserId(u as u32),
            zone: ZoneId(rng.random_range(0..zone_count)),
            service,
            workload,
        });
    }
    let scenario = Scenario {
        seed,
        users,
        servers: servers.clone(),
        topology: Topology {
            zones,
            links,
            server_zones: servers.iter().map(|s| s.zone).collect(),
            wireless_latency_ms: 1.0,
            provisioning_setup_s: 0.0,
        },
        criticality_map: map,
    };
    scenario.validate().expect("tiny scenario is valid by construction");
    scenario
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_criticality_ranks() {
        let m = default_criticality_map();
        assert_eq!(criticality_rank(Service::CrowdCounting, &m), 1);
        assert_eq!(criticality_rank(Service::FaceRecognition, &m), 2);
        assert_eq!(criticality_rank(Service::MlDevCrowd, &m), 3);
        assert_eq!(criticality_rank(Service::MlDevFace, &m), 4);
    }

    #[test]
    fn paper_preset_shape() {
        let sc = preset_paper(7);
        assert_eq!(sc.users.len(), 52);
        assert_eq!(sc.servers.len(), 4);
        assert_eq!(sc.topology.zones.len(), 22);
        // Task total recomputed from the shipped templates.
        let t = builtin_templates("paper").unwrap();
        let expected = 44 * t.crowd_counting.task_count
            + 6 * t.face_recognition.task_count
            + t.ml_dev_crowd.task_count
            + t.ml_dev_face.task_count;
        assert_eq!(sc.all_tasks().len(), expected);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GenSpec::new(
            ServiceCounts { crowd_counting: 1, ..Default::default() },
            1,
            vec![ServerSpec {
                cpu_freq: 1e9,
                cores: 1,
                ram_capacity: 1024.0,
                storage_capacity: 1024.0,
            }],
            7,
            "paper",
        )
        .unwrap();
        let a = generate_scenario(&spec).unwrap();
        let b = generate_scenario(&spec).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn zero_users_rejected() {
        let spec = GenSpec::new(
            ServiceCounts::default(),
            1,
            vec![ServerSpec {
                cpu_freq: 1e9,
                cores: 1,
                ram_capacity: 1024.0,
                storage_capacity: 1024.0,
            }],
            0,
            "paper",
        )
        .unwrap();
        assert!(matches!(generate_scenario(&spec), Err(ScenarioError::InvalidSpec(_))));
    }

    #[test]
    fn all_tasks_counts_users_times_tasks() {
        let spec = GenSpec::new(
            ServiceCounts { crowd_counting: 2, ..Default::default() },
            2,
            paper_server_specs(),
            3,
            "paper",
        )
        .unwrap();
        let sc = generate_scenario(&spec).unwrap();
        assert_eq!(sc.all_tasks().len(), 2 * 2);
    }

    #[test]
    fn scenario_roundtrip_is_lossless() {
        let sc = preset_desk(42);
        let json = sc.to_json().unwrap();
        let back: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(sc, back);
        assert_eq!(json, back.to_json().unwrap());
    }

    #[test]
    fn desk_preset_shape() {
        let sc = preset_desk(42);
        assert_eq!(sc.users.len(), 8);
        assert_eq!(sc.all_tasks().len(), 19);
        assert_eq!(sc.servers.len(), 4);
    }

    proptest::proptest! {
        /// Generation over random specs always yields valid scenarios,
        /// deterministically per seed.
        #[test]
        fn generated_scenarios_satisfy_invariants(
            crowd in 1usize..6,
            face in 0usize..3,
            zones in 1usize..8,
            servers in 1usize..4,
            seed in 0u64..1_000,
        ) {
            let spec = GenSpec::new(
                ServiceCounts { crowd_counting: crowd, face_recognition: face, ..Default::default() },
                zones,
                paper_server_specs().into_iter().take(servers).collect(),
                seed,
                "paper",
            )
            .unwrap();
            let a = generate_scenario(&spec).unwrap();
            proptest::prop_assert!(a.validate().is_ok());
            let b = generate_scenario(&spec).unwrap();
            proptest::prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        }
    }

    #[test]
    fn all_tasks_is_the_workload_multiset() {
        let sc = preset_desk(42);
        let from_all: std::collections::BTreeSet<TaskId> =
            sc.all_tasks().iter().map(|t| t.id).collect();
        let from_users: std::collections::BTreeSet<TaskId> =
            sc.users.iter().flat_map(|u| u.workload.iter().map(|t| t.id)).collect();
        assert_eq!(from_all, from_users);
        assert_eq!(
            sc.all_tasks().len(),
            sc.users.iter().map(|u| u.workload.len()).sum::<usize>()
        );
    }

    #[test]
    fn smallest_template_task_fits_fastest_server() {
        // Lightest paper-template task utilization on the fastest server
        // stays below 1.
        let t = builtin_templates("paper").unwrap();
        let specs = paper_server_specs();
        let fastest = specs
            .iter()
            .map(|s| s.cpu_freq * s.cores as f64)
            .fold(f64::MIN, f64::max);
        for svc in Service::ALL {
            let tpl = t.get(svc);
            let e = tpl.cpu_cycles_per_mb.lo * tpl.ram_mb.lo / fastest;
            assert!(e / tpl.deadline_s.hi < 1.0, "{svc:?} lightest task must fit");
        }
    }
}
