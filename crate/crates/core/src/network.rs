//! Zoned partial-mesh topology and the latency terms consumed by the
//! response-time model: user/server round trips, inter-task round trips,
//! and provisioning time for operational data.
//!
//! Link latencies are stored in milliseconds and bandwidths in megabytes
//! per second, matching the scenario file format; every public operation
//! returns seconds. Conversion happens once, at the end of each
//! computation, so small integral millisecond cases stay exact.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::scenario::{EdgeServer, EdgeUser, Task, ZoneId};

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("zone {0} is not part of the topology")]
    UnknownZone(ZoneId),
    #[error("no path between zones {0} and {1}")]
    Unreachable(ZoneId, ZoneId),
}

/// Undirected link between two zones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "LinkTuple", into = "LinkTuple")]
pub struct Link {
    pub a: ZoneId,
    pub b: ZoneId,
    pub latency_ms: f64,
    pub bandwidth_mbps: f64,
}

/// Scenario-file encoding: `[zoneA, zoneB, latency_ms, bandwidth_mbps]`.
type LinkTuple = (u32, u32, f64, f64);

impl From<LinkTuple> for Link {
    fn from(t: LinkTuple) -> Self {
        Link { a: ZoneId(t.0), b: ZoneId(t.1), latency_ms: t.2, bandwidth_mbps: t.3 }
    }
}

impl From<Link> for LinkTuple {
    fn from(l: Link) -> Self {
        (l.a.0, l.b.0, l.latency_ms, l.bandwidth_mbps)
    }
}

/// Zoned partial-mesh topology. Base stations (one per zone) connect
/// users wirelessly; zones are joined by wired links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub zones: Vec<ZoneId>,
    pub links: Vec<Link>,
    /// Zones hosting at least one edge server.
    pub server_zones: Vec<ZoneId>,
    /// One-way user to base-station latency.
    pub wireless_latency_ms: f64,
    /// Fixed setup constant added to every provisioning time, in seconds.
    #[serde(default)]
    pub provisioning_setup_s: f64,
}

impl Topology {
    pub fn validate(&self) -> Result<(), NetworkError> {
        for l in &self.links {
            for z in [l.a, l.b] {
                if !self.zones.contains(&z) {
                    return Err(NetworkError::UnknownZone(z));
                }
            }
            debug_assert!(l.latency_ms > 0.0 && l.bandwidth_mbps > 0.0);
        }
        for z in &self.server_zones {
            if !self.zones.contains(z) {
                return Err(NetworkError::UnknownZone(*z));
            }
        }
        // Connectivity check via the routing table.
        let table = RoutingTable::new(self);
        if let (Some(&first), true) = (self.zones.first(), self.zones.len() > 1) {
            for &z in &self.zones[1..] {
                table.path_latency_ms(first, z)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct PathInfo {
    latency_ms: f64,
    /// Minimum bandwidth over the chosen path's links; infinite for the
    /// zero-hop path.
    bottleneck_mbps: f64,
}

/// All-pairs shortest paths over the zone graph, precomputed once per
/// topology. Paths minimize total latency, breaking ties by fewest hops
/// and then by lowest predecessor zone id, so the chosen path (and with
/// it the provisioning bottleneck) is deterministic.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    index: BTreeMap<ZoneId, usize>,
    paths: Vec<Vec<Option<PathInfo>>>,
    wireless_ms: f64,
    setup_s: f64,
}

impl RoutingTable {
    pub fn new(topo: &Topology) -> Self {
        let index: BTreeMap<ZoneId, usize> =
            topo.zones.iter().enumerate().map(|(i, z)| (*z, i)).collect();
        let n = topo.zones.len();
        let mut adj: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
        for l in &topo.links {
            let (ia, ib) = (index[&l.a], index[&l.b]);
            adj[ia].push((ib, l.latency_ms, l.bandwidth_mbps));
            adj[ib].push((ia, l.latency_ms, l.bandwidth_mbps));
        }
        for nbrs in &mut adj {
            nbrs.sort_by_key(|n| n.0);
        }

        let mut paths = vec![vec![None; n]; n];
        for src in 0..n {
            paths[src] = dijkstra(src, &adj, n);
        }
        RoutingTable {
            index,
            paths,
            wireless_ms: topo.wireless_latency_ms,
            setup_s: topo.provisioning_setup_s,
        }
    }

    fn info(&self, from: ZoneId, to: ZoneId) -> Result<PathInfo, NetworkError> {
        let ia = *self.index.get(&from).ok_or(NetworkError::UnknownZone(from))?;
        let ib = *self.index.get(&to).ok_or(NetworkError::UnknownZone(to))?;
        self.paths[ia][ib].ok_or(NetworkError::Unreachable(from, to))
    }

    /// One-way wired latency between two zones, in milliseconds.
    pub fn path_latency_ms(&self, from: ZoneId, to: ZoneId) -> Result<f64, NetworkError> {
        Ok(self.info(from, to)?.latency_ms)
    }

    /// Minimum bandwidth along the chosen path, in MB/s; infinite when
    /// the zones coincide.
    pub fn path_bottleneck_mbps(&self, from: ZoneId, to: ZoneId) -> Result<f64, NetworkError> {
        Ok(self.info(from, to)?.bottleneck_mbps)
    }

    /// Round trip between an edge user's zone and a server's zone:
    /// `2 x (wireless + wired shortest path)`, in seconds.
    pub fn rtt_user_server_s(
        &self,
        user_zone: ZoneId,
        server_zone: ZoneId,
    ) -> Result<f64, NetworkError> {
        let wired = self.path_latency_ms(user_zone, server_zone)?;
        Ok(2.0 * (self.wireless_ms + wired) / 1000.0)
    }

    /// Wired round trip between two server zones, in seconds.
    pub fn rtt_server_server_s(&self, a: ZoneId, b: ZoneId) -> Result<f64, NetworkError> {
        Ok(2.0 * self.path_latency_ms(a, b)? / 1000.0)
    }

    /// Data-transfer time of `data_mb` over the user-to-server path's
    /// bottleneck link plus the setup constant, in seconds. A zero-hop
    /// path transfers within the base station and costs only the setup
    /// constant.
    pub fn provisioning_s(
        &self,
        data_mb: f64,
        user_zone: ZoneId,
        server_zone: ZoneId,
    ) -> Result<f64, NetworkError> {
        let bw = self.path_bottleneck_mbps(user_zone, server_zone)?;
        let transfer = if bw.is_finite() { data_mb / bw } else { 0.0 };
        Ok(transfer + self.setup_s)
    }
}

fn dijkstra(src: usize, adj: &[Vec<(usize, f64, f64)>], n: usize) -> Vec<Option<PathInfo>> {
    let mut best: Vec<Option<(f64, u32, usize)>> = vec![None; n]; // (latency, hops, parent)
    let mut bottleneck: Vec<f64> = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    best[src] = Some((0.0, 0, src));

    for _ in 0..n {
        // Next unsettled zone with the smallest (latency, hops, id).
        let mut cur: Option<usize> = None;
        for v in 0..n {
            if done[v] {
                continue;
            }
            if let Some((lat, hops, _)) = best[v] {
                let better = match cur {
                    None => true,
                    Some(c) => {
                        let (cl, ch, _) = best[c].unwrap();
                        (lat, hops, v) < (cl, ch, c)
                    }
                };
                if better {
                    cur = Some(v);
                }
            }
        }
        let Some(u) = cur else { break };
        done[u] = true;
        let (ul, uh, _) = best[u].unwrap();
        for &(v, lat, bw) in &adj[u] {
            if done[v] {
                continue;
            }
            let cand = (ul + lat, uh + 1, u);
            let replace = match best[v] {
                None => true,
                Some(old) => cand < old,
            };
            if replace {
                best[v] = Some(cand);
                bottleneck[v] = bottleneck[u].min(bw);
            }
        }
    }

    (0..n)
        .map(|v| {
            best[v].map(|(latency_ms, _, _)| PathInfo {
                latency_ms,
                bottleneck_mbps: bottleneck[v],
            })
        })
        .collect()
}

/// Round-trip time between an edge user and a server, in seconds.
pub fn rtt_user_server(
    user: &EdgeUser,
    server: &EdgeServer,
    topo: &Topology,
) -> Result<f64, NetworkError> {
    RoutingTable::new(topo).rtt_user_server_s(user.zone, server.zone)
}

/// Inter-task communication time for `task`, in seconds: zero when the
/// task has no predecessor, the predecessor is unassigned, or both tasks
/// share a server; otherwise the wired round trip between the hosting
/// zones. `placement` maps a task id to its hosting server's zone.
pub fn rtt_inter_task(
    task: &Task,
    placement: impl Fn(crate::scenario::TaskId) -> Option<ZoneId>,
    server_zone: ZoneId,
    table: &RoutingTable,
) -> Result<f64, NetworkError> {
    let Some(pred) = task.predecessor else {
        return Ok(0.0);
    };
    match placement(pred) {
        None => Ok(0.0),
        Some(z) if z == server_zone => Ok(0.0),
        Some(z) => table.rtt_server_server_s(z, server_zone),
    }
}

/// Provisioning time for a task's operational data to a server, in
/// seconds.
pub fn provisioning_time(
    task: &Task,
    user_zone: ZoneId,
    server: &EdgeServer,
    topo: &Topology,
) -> Result<f64, NetworkError> {
    RoutingTable::new(topo).provisioning_s(task.data_size_ram, user_zone, server.zone)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{preset_paper, TaskId};
    use proptest::prelude::*;

    fn line_topology(latencies_ms: &[f64], bw: f64) -> Topology {
        let zones: Vec<ZoneId> = (0..=latencies_ms.len() as u32).map(ZoneId).collect();
        let links = latencies_ms
            .iter()
            .enumerate()
            .map(|(i, &lat)| Link {
                a: ZoneId(i as u32),
                b: ZoneId(i as u32 + 1),
                latency_ms: lat,
                bandwidth_mbps: bw,
            })
            .collect();
        Topology {
            zones,
            links,
            server_zones: vec![],
            wireless_latency_ms: 1.0,
            provisioning_setup_s: 0.0,
        }
    }

    #[test]
    fn same_zone_rtt_is_twice_wireless() {
        let topo = line_topology(&[3.0], 100.0);
        let t = RoutingTable::new(&topo);
        assert_eq!(t.rtt_user_server_s(ZoneId(0), ZoneId(0)).unwrap(), 0.002);
    }

    #[test]
    fn one_hop_rtt() {
        let topo = line_topology(&[3.0], 100.0);
        let t = RoutingTable::new(&topo);
        // 2 x (1 ms wireless + 3 ms wired) = 8 ms.
        assert_eq!(t.rtt_user_server_s(ZoneId(0), ZoneId(1)).unwrap(), 0.008);
    }

    #[test]
    fn rtt_is_symmetric() {
        let topo = line_topology(&[3.0, 2.5, 0.7], 100.0);
        let t = RoutingTable::new(&topo);
        for a in 0..4u32 {
            for b in 0..4u32 {
                assert_eq!(
                    t.rtt_user_server_s(ZoneId(a), ZoneId(b)).unwrap(),
                    t.rtt_user_server_s(ZoneId(b), ZoneId(a)).unwrap()
                );
            }
        }
    }

    #[test]
    fn provisioning_divides_by_bottleneck() {
        let mut topo = line_topology(&[1.0, 1.0], 10.0);
        topo.links[1].bandwidth_mbps = 50.0;
        let t = RoutingTable::new(&topo);
        // 10 MB over a 10 MB/s bottleneck.
        assert_eq!(t.provisioning_s(10.0, ZoneId(0), ZoneId(2)).unwrap(), 1.0);
        let one = t.provisioning_s(1.0, ZoneId(0), ZoneId(1)).unwrap();
        assert_eq!(one, 0.1);
    }

    #[test]
    fn inter_task_term_cases() {
        let topo = line_topology(&[3.0], 100.0);
        let table = RoutingTable::new(&topo);
        let mut task = Task {
            id: TaskId(1),
            user_id: crate::scenario::UserId(0),
            arrival_time: 0.0,
            period: 0.0,
            deadline: 1.0,
            cpu_demand: 1.0,
            data_size_ram: 1.0,
            storage_demand: 0.0,
            predecessor: None,
            criticality_rank: 1,
        };
        let here = ZoneId(1);
        // No predecessor.
        assert_eq!(rtt_inter_task(&task, |_| None, here, &table).unwrap(), 0.0);
        task.predecessor = Some(TaskId(0));
        // Predecessor unassigned.
        assert_eq!(rtt_inter_task(&task, |_| None, here, &table).unwrap(), 0.0);
        // Co-located.
        assert_eq!(rtt_inter_task(&task, |_| Some(ZoneId(1)), here, &table).unwrap(), 0.0);
        // One 3 ms link away: 2 x 3 ms.
        assert_eq!(rtt_inter_task(&task, |_| Some(ZoneId(0)), here, &table).unwrap(), 0.006);
    }

    #[test]
    fn unreachable_zone_is_reported() {
        let topo = Topology {
            zones: vec![ZoneId(0), ZoneId(1)],
            links: vec![],
            server_zones: vec![],
            wireless_latency_ms: 1.0,
            provisioning_setup_s: 0.0,
        };
        let t = RoutingTable::new(&topo);
        assert_eq!(
            t.rtt_user_server_s(ZoneId(0), ZoneId(1)),
            Err(NetworkError::Unreachable(ZoneId(0), ZoneId(1)))
        );
        assert!(topo.validate().is_err());
    }

    /// Independent all-pairs shortest-path oracle (Floyd-Warshall on
    /// latency only).
    fn floyd_warshall(topo: &Topology) -> Vec<Vec<f64>> {
        let n = topo.zones.len();
        let idx: BTreeMap<ZoneId, usize> =
            topo.zones.iter().enumerate().map(|(i, z)| (*z, i)).collect();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for i in 0..n {
            d[i][i] = 0.0;
        }
        for l in &topo.links {
            let (a, b) = (idx[&l.a], idx[&l.b]);
            d[a][b] = d[a][b].min(l.latency_ms);
            d[b][a] = d[b][a].min(l.latency_ms);
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d
    }

    #[test]
    fn paper_topology_matches_floyd_warshall_oracle() {
        let sc = preset_paper(7);
        let table = RoutingTable::new(&sc.topology);
        let oracle = floyd_warshall(&sc.topology);
        let zones = &sc.topology.zones;
        let mut worst = (0.0f64, ZoneId(0), ZoneId(0));
        for (i, &a) in zones.iter().enumerate() {
            for (j, &b) in zones.iter().enumerate() {
                let got = table.path_latency_ms(a, b).unwrap();
                assert!(
                    (got - oracle[i][j]).abs() < 1e-9,
                    "path {a}->{b}: {got} vs oracle {}",
                    oracle[i][j]
                );
                if got > worst.0 {
                    worst = (got, a, b);
                }
            }
        }
        // Farthest pair RTT agrees with the oracle value.
        let (ms, a, b) = worst;
        let rtt = table.rtt_user_server_s(a, b).unwrap();
        assert_eq!(rtt, 2.0 * (sc.topology.wireless_latency_ms + ms) / 1000.0);
    }

    #[test]
    fn paper_bottleneck_matches_path_enumeration() {
        // Brute-force: enumerate all simple paths, pick the minimum
        // (latency, hops) path with the same deterministic preference,
        // compare bottlenecks.
        let sc = preset_paper(7);
        let topo = &sc.topology;
        let table = RoutingTable::new(topo);
        let idx: BTreeMap<ZoneId, usize> =
            topo.zones.iter().enumerate().map(|(i, z)| (*z, i)).collect();
        let n = topo.zones.len();
        let mut adj: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
        for l in &topo.links {
            let (a, b) = (idx[&l.a], idx[&l.b]);
            adj[a].push((b, l.latency_ms, l.bandwidth_mbps));
            adj[b].push((a, l.latency_ms, l.bandwidth_mbps));
        }

        fn dfs(
            u: usize,
            dst: usize,
            adj: &[Vec<(usize, f64, f64)>],
            seen: &mut Vec<bool>,
            lat: f64,
            hops: u32,
            bn: f64,
            best: &mut Option<(f64, u32, f64)>,
        ) {
            if u == dst {
                let cand = (lat, hops, bn);
                let better = match *best {
                    None => true,
                    Some((bl, bh, _)) => (lat, hops) < (bl, bh),
                };
                if better {
                    *best = Some(cand);
                }
                return;
            }
            for &(v, l, b) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    dfs(v, dst, adj, seen, lat + l, hops + 1, bn.min(b), best);
                    seen[v] = false;
                }
            }
        }

        // A handful of pairs is plenty; full enumeration over 22 zones is
        // slow in debug builds.
        for (src, dst) in [(0usize, 11usize), (3, 17), (5, 20), (9, 2)] {
            let mut seen = vec![false; n];
            seen[src] = true;
            let mut best = None;
            dfs(src, dst, &adj, &mut seen, 0.0, 0, f64::INFINITY, &mut best);
            let (lat, _hops, bn) = best.expect("paper topology is connected");
            let a = topo.zones[src];
            let b = topo.zones[dst];
            assert!((table.path_latency_ms(a, b).unwrap() - lat).abs() < 1e-9);
            // Uniform bandwidth in the full-scale preset, so any minimum path
            // shares the same bottleneck.
            assert_eq!(table.path_bottleneck_mbps(a, b).unwrap(), bn);
        }
    }

    proptest! {
        /// Adding a link never increases any shortest-path RTT.
        #[test]
        fn adding_a_link_is_monotone(
            lat in proptest::collection::vec(0.1f64..5.0, 3..8),
            extra_lat in 0.1f64..5.0,
            a in 0usize..8,
            b in 0usize..8,
        ) {
            let topo = line_topology(&lat, 100.0);
            let n = topo.zones.len();
            let (a, b) = (a % n, b % n);
            prop_assume!(a != b);
            let before = RoutingTable::new(&topo);
            let mut augmented = topo.clone();
            augmented.links.push(Link {
                a: ZoneId(a as u32),
                b: ZoneId(b as u32),
                latency_ms: extra_lat,
                bandwidth_mbps: 100.0,
            });
            let after = RoutingTable::new(&augmented);
            for x in 0..n as u32 {
                for y in 0..n as u32 {
                    let old = before.rtt_user_server_s(ZoneId(x), ZoneId(y)).unwrap();
                    let new = after.rtt_user_server_s(ZoneId(x), ZoneId(y)).unwrap();
                    prop_assert!(new <= old + 1e-12);
                }
            }
        }

        /// Latency outputs are finite and non-negative.
        #[test]
        fn latencies_nonnegative(lat in proptest::collection::vec(0.1f64..5.0, 1..6)) {
            let topo = line_topology(&lat, 50.0);
            let t = RoutingTable::new(&topo);
            let n = topo.zones.len() as u32;
            for x in 0..n {
                for y in 0..n {
                    let v = t.rtt_user_server_s(ZoneId(x), ZoneId(y)).unwrap();
                    prop_assert!(v.is_finite() && v >= 0.0);
                }
            }
        }
    }
}
