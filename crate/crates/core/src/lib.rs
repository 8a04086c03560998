//! Simulator, schedulers, and experiment harness for scheduling soft
//! real-time tasks offloaded to heterogeneous edge servers.
//!
//! The crate is organized around the lifecycle of an experiment:
//!
//! * [`scenario`] — problem instances: tasks, users, servers, service
//!   criticality, and seeded scenario generation.
//! * [`network`] — zoned partial-mesh topology and the latency terms
//!   (user/server RTT, inter-task RTT, provisioning time).
//! * [`eval`] — schedule math: execution/response time, utilizations,
//!   feasibility constraints, hit-ratio, and a brute-force optimum for
//!   small instances.
//! * [`baselines`] — deterministic EDF and BestFit schedulers.
//! * [`rl`] — from-scratch DQN machinery: three-layer Q-network with
//!   manual backpropagation, replay buffer, target network, epsilon
//!   schedule.
//! * [`agent`] — the masked, informed-exploration DQN scheduler and its
//!   vanilla ablation.
//! * [`harness`] — repeated seeded runs, convergence detection,
//!   runtime/RAM/energy measurement, CSV/SVG export.

pub mod agent;
pub mod baselines;
pub mod eval;
pub mod harness;
pub mod network;
pub mod rl;
pub mod scenario;

pub use agent::{train, train_vanilla, AgentKind, RewardConfig, TrainConfig, TrainResult};
pub use eval::{hit_ratio, FeasibilityReport, Schedule, ServerLoad};
pub use harness::{detect_convergence, run_experiment, AggregateReport, Algorithm, RunMetrics};
pub use network::Topology;
pub use rl::{DqnHyperparams, QNetwork, ReplayBuffer};
pub use scenario::{EdgeServer, EdgeUser, Scenario, Service, Task};
