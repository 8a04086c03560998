//! Schedule math: execution and response times, server utilizations, the
//! four feasibility constraints, the hit-ratio objective, and a
//! brute-force optimum for small instances.
//!
//! Times are seconds throughout. A response time is the sum of exactly
//! four terms, added left to right: execution time, provisioning time,
//! user/server RTT, inter-task RTT. Deadline comparisons are exact
//! (`r <= d`, no epsilon).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{NetworkError, RoutingTable};
use crate::scenario::{EdgeServer, EdgeUser, Scenario, ServerId, Task, TaskId, ZoneId};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("instance too large for exhaustive search: {combos} candidates (limit {limit})")]
    TooLarge { combos: u128, limit: u128 },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Precomputed lookup structures for one scenario: task order, id maps,
/// per-task user zones, routing table. Everything downstream of scenario
/// construction works in terms of task/server *indices*; the index of a
/// task is its position in [`Scenario::all_tasks`] and its row in every
/// decision matrix.
pub struct EvalContext<'a> {
    pub scenario: &'a Scenario,
    pub tasks: Vec<&'a Task>,
    pub servers: Vec<&'a EdgeServer>,
    pub users: Vec<&'a EdgeUser>,
    pub routing: RoutingTable,
    task_index: Vec<(TaskId, usize)>,
    user_zone_of_task: Vec<ZoneId>,
    /// Task indices per user, users in sorted-id order.
    pub user_tasks: Vec<Vec<usize>>,
    pub max_deadline: f64,
}

impl<'a> EvalContext<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        let tasks = scenario.all_tasks();
        let mut users: Vec<&EdgeUser> = scenario.users.iter().collect();
        users.sort_by_key(|u| u.id);
        let servers: Vec<&EdgeServer> = scenario.servers.iter().collect();
        let mut task_index: Vec<(TaskId, usize)> =
            tasks.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
        task_index.sort_by_key(|(id, _)| *id);
        let user_zone_of_task = tasks
            .iter()
            .map(|t| users.iter().find(|u| u.id == t.user_id).expect("task has a user").zone)
            .collect();
        let user_tasks = users
            .iter()
            .map(|u| {
                tasks
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.user_id == u.id)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let max_deadline = tasks.iter().map(|t| t.deadline).fold(f64::MIN, f64::max);
        EvalContext {
            scenario,
            tasks,
            servers,
            users,
            routing: RoutingTable::new(&scenario.topology),
            task_index,
            user_zone_of_task,
            user_tasks,
            max_deadline,
        }
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn server_count(&self) -> usize {
        self.servers.len()
    }

    pub fn task_idx(&self, id: TaskId) -> Option<usize> {
        self.task_index
            .binary_search_by_key(&id, |(tid, _)| *tid)
            .ok()
            .map(|pos| self.task_index[pos].1)
    }

    pub fn server_idx(&self, id: ServerId) -> Option<usize> {
        self.servers.iter().position(|s| s.id == id)
    }

    pub fn user_zone(&self, task_idx: usize) -> ZoneId {
        self.user_zone_of_task[task_idx]
    }

    /// Response time of placing `task_idx` on `server_idx` given the
    /// placements made so far (per-task hosting server index).
    pub fn response_time(
        &self,
        task_idx: usize,
        server_idx: usize,
        placements: &[Option<usize>],
    ) -> Result<f64, NetworkError> {
        let task = self.tasks[task_idx];
        let server = self.servers[server_idx];
        let user_zone = self.user_zone_of_task[task_idx];
        let e = execution_time(task, server);
        let prov = self.routing.provisioning_s(task.data_size_ram, user_zone, server.zone)?;
        let rtt_us = self.routing.rtt_user_server_s(user_zone, server.zone)?;
        let rtt_it = crate::network::rtt_inter_task(
            task,
            |pred| {
                self.task_idx(pred)
                    .and_then(|i| placements[i])
                    .map(|s| self.servers[s].zone)
            },
            server.zone,
            &self.routing,
        )?;
        Ok(e + prov + rtt_us + rtt_it)
    }
}

/// Execution time on a server: required cycles over processing capacity.
pub fn execution_time(task: &Task, server: &EdgeServer) -> f64 {
    (task.cpu_demand * task.data_size_ram) / (server.cpu_freq * server.cores as f64)
}

/// Processor utilization of one task on one server: execution time over
/// absolute deadline.
pub fn task_cpu_utilization(task: &Task, server: &EdgeServer) -> f64 {
    execution_time(task, server) / task.deadline
}

/// Fractional processor/RAM/storage load of one server under a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerLoad {
    pub server_id: ServerId,
    pub u_p: f64,
    pub u_m: f64,
    pub u_l: f64,
    pub assigned: BTreeSet<TaskId>,
}

impl ServerLoad {
    pub fn empty(server_id: ServerId) -> Self {
        ServerLoad { server_id, u_p: 0.0, u_m: 0.0, u_l: 0.0, assigned: BTreeSet::new() }
    }

    /// Adds one task's demand to the load.
    pub fn add(&mut self, task: &Task, server: &EdgeServer) {
        self.u_p += task_cpu_utilization(task, server);
        self.u_m += task.data_size_ram / server.ram_capacity;
        self.u_l += task.storage_demand / server.storage_capacity;
        self.assigned.insert(task.id);
    }
}

/// Per-task assignment decision. The order of the assignment list is the
/// order decisions were made in, which fixes the inter-task RTT terms on
/// re-evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub task: TaskId,
    pub server: ServerId,
}

/// Binary decision matrix over (task index, server index) with at most
/// one `1` per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionMatrix {
    servers: usize,
    rows: Vec<Option<usize>>,
}

impl DecisionMatrix {
    pub fn zeros(tasks: usize, servers: usize) -> Self {
        DecisionMatrix { servers, rows: vec![None; tasks] }
    }

    pub fn set(&mut self, task_idx: usize, server_idx: usize) {
        debug_assert!(server_idx < self.servers);
        debug_assert!(self.rows[task_idx].is_none(), "row sum must stay <= 1");
        self.rows[task_idx] = Some(server_idx);
    }

    pub fn row(&self, task_idx: usize) -> Option<usize> {
        self.rows[task_idx]
    }

    pub fn row_is_empty(&self, task_idx: usize) -> bool {
        self.rows[task_idx].is_none()
    }

    pub fn task_count(&self) -> usize {
        self.rows.len()
    }

    pub fn server_count(&self) -> usize {
        self.servers
    }

    /// Row indices whose row sum is zero: the unassigned-task set.
    pub fn unassigned(&self) -> BTreeSet<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .map(|(i, _)| i)
            .collect()
    }

    /// Expanded 0/1 matrix, mostly for assertions and debugging.
    pub fn to_binary(&self) -> Vec<Vec<u8>> {
        self.rows
            .iter()
            .map(|r| {
                let mut row = vec![0u8; self.servers];
                if let Some(k) = r {
                    row[*k] = 1;
                }
                row
            })
            .collect()
    }
}

/// An assignment of tasks to servers: the ordered decision list plus the
/// decision matrix it induces. Unassigned tasks simply have no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub assignments: Vec<Assignment>,
    pub matrix: DecisionMatrix,
}

impl Schedule {
    pub fn empty(ctx: &EvalContext) -> Self {
        Schedule {
            assignments: Vec::new(),
            matrix: DecisionMatrix::zeros(ctx.task_count(), ctx.server_count()),
        }
    }

    /// Records a decision; panics (debug) if the task already has one.
    pub fn push(&mut self, ctx: &EvalContext, task_idx: usize, server_idx: usize) {
        self.matrix.set(task_idx, server_idx);
        self.assignments.push(Assignment {
            task: ctx.tasks[task_idx].id,
            server: ctx.servers[server_idx].id,
        });
    }

    pub fn server_of(&self, task: TaskId) -> Option<ServerId> {
        self.assignments.iter().find(|a| a.task == task).map(|a| a.server)
    }
}

/// Serialized form of a schedule together with its achieved metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub assignments: Vec<Assignment>,
    pub hit_ratio: f64,
    pub assigned_tasks: usize,
    pub hit_tasks: usize,
}

impl ScheduleRecord {
    pub fn from_schedule(schedule: &Schedule, scenario: &Scenario) -> Self {
        let ctx = EvalContext::new(scenario);
        let eval = evaluate_schedule_ctx(&ctx, schedule);
        ScheduleRecord {
            assignments: schedule.assignments.clone(),
            hit_ratio: eval.hit_ratio,
            assigned_tasks: schedule.assignments.len(),
            hit_tasks: eval.per_task_hit.iter().filter(|h| **h).count(),
        }
    }
}

/// Outcome of checking one candidate assignment against the four
/// constraints, without mutating anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// The task has no prior assignment decision.
    pub single_assignment_ok: bool,
    /// Post-assignment utilizations all stay below 1.
    pub capacity_ok: bool,
    /// Pre-assignment utilizations all stay below the threshold.
    pub availability_ok: bool,
    /// Response time meets the absolute deadline.
    pub deadline_ok: bool,
    pub response_time: f64,
}

/// Capacity (post-assignment `< 1`) and availability (pre-assignment
/// `< u_th`) checks given the server's current load.
pub fn capacity_and_availability(
    load: &ServerLoad,
    task: &Task,
    server: &EdgeServer,
    u_th: f64,
) -> (bool, bool) {
    let u_p = task_cpu_utilization(task, server);
    let u_m = task.data_size_ram / server.ram_capacity;
    let u_l = task.storage_demand / server.storage_capacity;
    let capacity_ok =
        load.u_p + u_p < 1.0 && load.u_m + u_m < 1.0 && load.u_l + u_l < 1.0;
    let availability_ok = load.u_p < u_th && load.u_m < u_th && load.u_l < u_th;
    (capacity_ok, availability_ok)
}

/// Aggregate load of one server under a schedule: plain sums of the
/// assigned tasks' demands.
pub fn server_load(schedule: &Schedule, server_id: ServerId, scenario: &Scenario) -> ServerLoad {
    let server = scenario.server(server_id).expect("known server");
    let mut load = ServerLoad::empty(server_id);
    for a in &schedule.assignments {
        if a.server == server_id {
            let task = scenario.task(a.task).expect("known task");
            load.add(task, server);
        }
    }
    load
}

/// Response time of placing `task` on `server` given a partial schedule;
/// the schedule-so-far only matters for the inter-task term.
pub fn response_time(
    task_id: TaskId,
    server_id: ServerId,
    schedule_so_far: &Schedule,
    scenario: &Scenario,
) -> Result<f64, EvalError> {
    let ctx = EvalContext::new(scenario);
    let ti = ctx.task_idx(task_id).ok_or_else(|| EvalError::NotFound(format!("task {task_id}")))?;
    let si = ctx
        .server_idx(server_id)
        .ok_or_else(|| EvalError::NotFound(format!("server {server_id}")))?;
    let placements = placements_of(&ctx, schedule_so_far);
    Ok(ctx.response_time(ti, si, &placements)?)
}

fn placements_of(ctx: &EvalContext, schedule: &Schedule) -> Vec<Option<usize>> {
    let mut placements = vec![None; ctx.task_count()];
    for a in &schedule.assignments {
        if let (Some(ti), Some(si)) = (ctx.task_idx(a.task), ctx.server_idx(a.server)) {
            placements[ti] = Some(si);
        }
    }
    placements
}

/// Checks one candidate assignment against all four constraints. Pure:
/// the schedule is not mutated and repeated calls agree.
pub fn check_assignment(
    task_id: TaskId,
    server_id: ServerId,
    schedule_so_far: &Schedule,
    scenario: &Scenario,
    u_th: f64,
) -> Result<FeasibilityReport, EvalError> {
    let task = scenario
        .task(task_id)
        .ok_or_else(|| EvalError::NotFound(format!("task {task_id}")))?;
    let server = scenario
        .server(server_id)
        .ok_or_else(|| EvalError::NotFound(format!("server {server_id}")))?;
    let load = server_load(schedule_so_far, server_id, scenario);
    let (capacity_ok, availability_ok) = capacity_and_availability(&load, task, server, u_th);
    let single_assignment_ok = schedule_so_far.server_of(task_id).is_none();
    let rt = response_time(task_id, server_id, schedule_so_far, scenario)?;
    Ok(FeasibilityReport {
        single_assignment_ok,
        capacity_ok,
        availability_ok,
        deadline_ok: rt <= task.deadline,
        response_time: rt,
    })
}

/// Full evaluation of a schedule: per-task response times and hit flags,
/// and the user-level hit-ratio.
pub struct ScheduleEval {
    pub per_task_hit: Vec<bool>,
    pub per_task_response: Vec<Option<f64>>,
    pub hit_ratio: f64,
}

/// Replays the assignment list in order (so inter-task terms see exactly
/// the placements that preceded each decision) and computes the fraction
/// of users whose every task is assigned and meets its deadline.
pub fn evaluate_schedule_ctx(ctx: &EvalContext, schedule: &Schedule) -> ScheduleEval {
    let mut placements: Vec<Option<usize>> = vec![None; ctx.task_count()];
    let mut hit = vec![false; ctx.task_count()];
    let mut response = vec![None; ctx.task_count()];
    for a in &schedule.assignments {
        let (Some(ti), Some(si)) = (ctx.task_idx(a.task), ctx.server_idx(a.server)) else {
            continue;
        };
        let r = ctx
            .response_time(ti, si, &placements)
            .expect("scenario topology is connected");
        response[ti] = Some(r);
        hit[ti] = r <= ctx.tasks[ti].deadline;
        placements[ti] = Some(si);
    }
    let users_hit = ctx
        .user_tasks
        .iter()
        .filter(|tasks| tasks.iter().all(|&ti| hit[ti]))
        .count();
    ScheduleEval {
        per_task_hit: hit,
        per_task_response: response,
        hit_ratio: users_hit as f64 / ctx.users.len() as f64,
    }
}

/// Fraction of edge users whose every task is assigned and meets its
/// deadline; unassigned tasks count as misses.
pub fn hit_ratio(schedule: &Schedule, scenario: &Scenario) -> f64 {
    let ctx = EvalContext::new(scenario);
    evaluate_schedule_ctx(&ctx, schedule).hit_ratio
}

/// Task indices sorted by ascending deadline, breaking ties by higher
/// criticality (lower rank) and then lower task id. This is both the EDF
/// selection order and the order the brute-force oracle evaluates
/// inter-task terms in.
pub fn deadline_order(ctx: &EvalContext) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ctx.task_count()).collect();
    order.sort_by(|&a, &b| {
        let ta = ctx.tasks[a];
        let tb = ctx.tasks[b];
        ta.deadline
            .partial_cmp(&tb.deadline)
            .expect("deadlines are finite")
            .then(ta.criticality_rank.cmp(&tb.criticality_rank))
            .then(ta.id.cmp(&tb.id))
    });
    order
}

const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// Exhaustive optimum over every assignment function (each task placed on
/// one server or left unassigned), subject to the capacity and
/// availability constraints applied in deadline order. Returns a
/// hit-ratio maximizer; ties resolve to the lexicographically smallest
/// choice vector (tasks in index order, `unassigned < server 0 < ...`).
pub fn brute_force_optimum(
    scenario: &Scenario,
    u_th: f64,
) -> Result<(Schedule, f64), EvalError> {
    let ctx = EvalContext::new(scenario);
    let t = ctx.task_count();
    let s = ctx.server_count();
    let combos = (s as u128 + 1).checked_pow(t as u32).unwrap_or(u128::MAX);
    if combos > BRUTE_FORCE_LIMIT {
        return Err(EvalError::TooLarge { combos, limit: BRUTE_FORCE_LIMIT });
    }

    let order = deadline_order(&ctx);
    // Odometer over choices, task 0 most significant, so candidates are
    // visited in lexicographic order and the first maximum seen is the
    // lexicographically smallest one.
    let mut choices = vec![0usize; t]; // 0 = unassigned, k = server k-1
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        if let Some(ratio) = evaluate_choices(&ctx, &order, &choices, u_th) {
            let better = match &best {
                None => true,
                Some((b, _)) => ratio > *b,
            };
            if better {
                best = Some((ratio, choices.clone()));
            }
        }
        // Advance the odometer.
        let mut i = t;
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            choices[i] += 1;
            if choices[i] <= s {
                break;
            }
            choices[i] = 0;
        }
        if choices.iter().all(|&c| c == 0) {
            break;
        }
    }

    let (ratio, winning) = best.expect("the all-unassigned candidate is always feasible");
    let mut schedule = Schedule::empty(&ctx);
    for &ti in &order {
        if winning[ti] > 0 {
            schedule.push(&ctx, ti, winning[ti] - 1);
        }
    }
    Ok((schedule, ratio))
}

/// Evaluates one choice vector in deadline order; `None` when the
/// candidate violates capacity or availability at any step.
fn evaluate_choices(
    ctx: &EvalContext,
    order: &[usize],
    choices: &[usize],
    u_th: f64,
) -> Option<f64> {
    let mut loads: Vec<ServerLoad> =
        ctx.servers.iter().map(|s| ServerLoad::empty(s.id)).collect();
    let mut placements: Vec<Option<usize>> = vec![None; ctx.task_count()];
    let mut hit = vec![false; ctx.task_count()];
    for &ti in order {
        let choice = choices[ti];
        if choice == 0 {
            continue;
        }
        let si = choice - 1;
        let task = ctx.tasks[ti];
        let server = ctx.servers[si];
        let (capacity_ok, availability_ok) =
            capacity_and_availability(&loads[si], task, server, u_th);
        if !capacity_ok || !availability_ok {
            return None;
        }
        loads[si].add(task, server);
        let r = ctx
            .response_time(ti, si, &placements)
            .expect("scenario topology is connected");
        hit[ti] = r <= task.deadline;
        placements[ti] = Some(si);
    }
    let users_hit = ctx
        .user_tasks
        .iter()
        .filter(|tasks| tasks.iter().all(|&ti| hit[ti]))
        .count();
    Some(users_hit as f64 / ctx.users.len() as f64)
}
