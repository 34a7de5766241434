//! In-process rank runtime: FIFO mailboxes per ordered rank pair, halo
//! exchange plans, fixed-order reductions and the overlapped exchange.
//!
//! Every collective carries an epoch tag. A rank that receives a message with
//! the wrong tag or epoch panics with a protocol error; [`RankWorld::run`]
//! turns rank panics into [`WorldError`]. Peers blocked on a failed rank see
//! its mailboxes disconnect and fail in turn, so a broken run never hangs.

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread;

use thiserror::Error;

use crate::geometry::LocalDomain;
use crate::problem::{EllMatrix, EllPattern, UNRESOLVED};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("rank {rank}: column {global} is owned by rank {owner}, which is not a neighbour")]
    NotNeighbour {
        rank: usize,
        global: usize,
        owner: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("rank {rank} failed: {message}")]
    RankFailed { rank: usize, message: String },
    #[error("a rank world needs at least one rank")]
    NoRanks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Halo,
    Reduce,
}

#[derive(Debug)]
struct Message {
    tag: Tag,
    epoch: u64,
    data: Vec<f64>,
}

/// One rank's endpoint.
pub struct Communicator {
    rank: usize,
    size: usize,
    tx: Vec<Sender<Message>>,
    rx: Vec<Receiver<Message>>,
    halo_epoch: u64,
    reduce_epoch: u64,
    halo_in_flight: bool,
}

impl Communicator {
    fn mesh(size: usize) -> Vec<Communicator> {
        // rx_of[dst][src] receives what src sends to dst.
        let mut tx_of: Vec<Vec<Sender<Message>>> = (0..size).map(|_| Vec::new()).collect();
        let mut rx_of: Vec<Vec<Receiver<Message>>> = (0..size).map(|_| Vec::new()).collect();
        for dst in 0..size {
            for src in 0..size {
                let (tx, rx) = channel();
                tx_of[src].push(tx);
                rx_of[dst].push(rx);
                debug_assert_eq!(tx_of[src].len() - 1, dst);
            }
        }
        tx_of
            .into_iter()
            .zip(rx_of)
            .enumerate()
            .map(|(rank, (tx, rx))| Communicator {
                rank,
                size,
                tx,
                rx,
                halo_epoch: 0,
                reduce_epoch: 0,
                halo_in_flight: false,
            })
            .collect()
    }

    /// Single-rank endpoint for use outside a [`RankWorld`].
    pub fn solo() -> Communicator {
        Self::mesh(1).pop().unwrap()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn send(&self, dst: usize, tag: Tag, epoch: u64, data: Vec<f64>) {
        if self.tx[dst].send(Message { tag, epoch, data }).is_err() {
            panic!("rank {}: peer {dst} disconnected", self.rank);
        }
    }

    fn recv(&self, src: usize, tag: Tag, epoch: u64) -> Vec<f64> {
        let msg = match self.rx[src].recv() {
            Ok(m) => m,
            Err(_) => panic!("rank {}: peer {src} disconnected", self.rank),
        };
        if msg.tag != tag || msg.epoch != epoch {
            panic!(
                "protocol error on rank {}: expected {tag:?}#{epoch} from {src}, got {:?}#{}",
                self.rank, msg.tag, msg.epoch
            );
        }
        msg.data
    }

    /// Sends `local` to every rank and returns all contributions in rank order.
    fn all_gather(&mut self, local: &[f64]) -> Vec<Vec<f64>> {
        let epoch = self.reduce_epoch;
        self.reduce_epoch += 1;
        for dst in (0..self.size).filter(|&d| d != self.rank) {
            self.send(dst, Tag::Reduce, epoch, local.to_vec());
        }
        (0..self.size)
            .map(|src| {
                if src == self.rank {
                    local.to_vec()
                } else {
                    let data = self.recv(src, Tag::Reduce, epoch);
                    if data.len() != local.len() {
                        panic!(
                            "protocol error on rank {}: reduction length {} from {src}, expected {}",
                            self.rank,
                            data.len(),
                            local.len()
                        );
                    }
                    data
                }
            })
            .collect()
    }

    /// Elementwise sum over ranks, accumulated in ascending rank order.
    /// Every rank gets the same bits.
    pub fn all_reduce_sum_slice(&mut self, values: &mut [f64]) {
        if self.size == 1 {
            return;
        }
        let parts = self.all_gather(values);
        values.copy_from_slice(&parts[0]);
        for part in &parts[1..] {
            for (acc, &v) in values.iter_mut().zip(part) {
                *acc += v;
            }
        }
    }

    pub fn all_reduce_sum(&mut self, value: f64) -> f64 {
        let mut v = [value];
        self.all_reduce_sum_slice(&mut v);
        v[0]
    }

    pub fn all_reduce_max(&mut self, value: f64) -> f64 {
        if self.size == 1 {
            return value;
        }
        self.all_gather(&[value])
            .into_iter()
            .map(|p| p[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rank 0's value on every rank.
    pub fn broadcast_from_root(&mut self, value: f64) -> f64 {
        if self.size == 1 {
            return value;
        }
        self.all_gather(&[value])[0][0]
    }

    /// Packs and posts the owned boundary values of `v` to every neighbour.
    pub fn begin_exchange<T: Real>(&mut self, v: &[T], plan: &HaloPlan) {
        assert!(
            !self.halo_in_flight,
            "protocol error on rank {}: exchange already in flight",
            self.rank
        );
        assert!(
            v.len() >= plan.n_ext(),
            "protocol error on rank {}: vector length {} < {}",
            self.rank,
            v.len(),
            plan.n_ext()
        );
        for link in &plan.neighbors {
            let buf = link.send_rows.iter().map(|&r| v[r].to_f64()).collect();
            self.send(link.rank, Tag::Halo, self.halo_epoch, buf);
        }
        self.halo_in_flight = true;
    }

    /// Receives this epoch's halo values into the tail of `v`.
    pub fn finish_exchange<T: Real>(&mut self, v: &mut [T], plan: &HaloPlan) {
        assert!(
            self.halo_in_flight,
            "protocol error on rank {}: no exchange in flight",
            self.rank
        );
        for link in &plan.neighbors {
            let data = self.recv(link.rank, Tag::Halo, self.halo_epoch);
            if data.len() != link.recv_count {
                panic!(
                    "protocol error on rank {}: {} halo values from {}, expected {}",
                    self.rank,
                    data.len(),
                    link.rank,
                    link.recv_count
                );
            }
            for (slot, val) in v[link.recv_start..link.recv_start + link.recv_count]
                .iter_mut()
                .zip(data)
            {
                *slot = T::from_f64(val);
            }
        }
        self.halo_epoch += 1;
        self.halo_in_flight = false;
    }

    /// Fills the halo tail of `v` with the neighbours' boundary values.
    pub fn exchange<T: Real>(&mut self, v: &mut [T], plan: &HaloPlan) {
        self.begin_exchange(v, plan);
        self.finish_exchange(v, plan);
    }

    /// Posts the boundary values, runs `interior` while messages are in
    /// flight, then receives the halo.
    ///
    /// `interior` may only touch rows that do not read halo columns, and any
    /// update it makes to owned entries happens after they were packed, so the
    /// final state equals `exchange` followed by the same work.
    pub fn exchange_overlapped<T: Real, F: FnOnce(&mut [T])>(
        &mut self,
        v: &mut [T],
        plan: &HaloPlan,
        interior: F,
    ) {
        self.begin_exchange(v, plan);
        interior(v);
        self.finish_exchange(v, plan);
    }
}

fn panic_message(p: Box<dyn Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}

/// Runs one worker thread per rank.
pub struct RankWorld;

impl RankWorld {
    /// Runs `f` on every rank and returns the per-rank results in rank order.
    pub fn run<R, F>(ranks: usize, f: F) -> Result<Vec<R>, WorldError>
    where
        R: Send,
        F: Fn(&mut Communicator) -> R + Sync,
    {
        if ranks == 0 {
            return Err(WorldError::NoRanks);
        }
        let comms = Communicator::mesh(ranks);
        let f = &f;
        let outcomes: Vec<thread::Result<R>> = thread::scope(|s| {
            let handles: Vec<_> = comms
                .into_iter()
                .map(|mut comm| {
                    thread::Builder::new()
                        .name(format!("rank-{}", comm.rank))
                        .spawn_scoped(s, move || f(&mut comm))
                        .expect("spawn rank worker")
                })
                .collect();
            handles.into_iter().map(|h| h.join()).collect()
        });

        let mut results = Vec::with_capacity(ranks);
        let mut failures = Vec::new();
        for (rank, out) in outcomes.into_iter().enumerate() {
            match out {
                Ok(r) => results.push(r),
                Err(p) => failures.push((rank, panic_message(p))),
            }
        }
        if failures.is_empty() {
            return Ok(results);
        }
        // Report the root cause rather than the cascade it triggered.
        let (rank, message) = failures
            .iter()
            .find(|(_, m)| !m.contains("disconnected"))
            .unwrap_or(&failures[0])
            .clone();
        Err(WorldError::RankFailed { rank, message })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborLink {
    pub rank: usize,
    /// Owned rows sent to this neighbour, ordered by ascending global index.
    pub send_rows: Vec<usize>,
    /// First halo slot (absolute vector index, `>= n_rows`) filled by this neighbour.
    pub recv_start: usize,
    pub recv_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaloPlan {
    pub n_rows: usize,
    /// Ordered by rank id.
    pub neighbors: Vec<NeighborLink>,
    /// Global index held by halo slot `n_rows + s`.
    pub halo_globals: Vec<usize>,
}

impl HaloPlan {
    pub fn empty(n_rows: usize) -> Self {
        Self {
            n_rows,
            neighbors: Vec::new(),
            halo_globals: Vec::new(),
        }
    }

    pub fn halo_size(&self) -> usize {
        self.halo_globals.len()
    }

    /// Length of a halo-extended vector.
    pub fn n_ext(&self) -> usize {
        self.n_rows + self.halo_size()
    }

    /// Renames send rows after a symmetric permutation (`iperm[old] = new`).
    pub fn permute_rows(&self, iperm: &[usize]) -> HaloPlan {
        let mut out = self.clone();
        for link in &mut out.neighbors {
            for r in &mut link.send_rows {
                *r = iperm[*r];
            }
        }
        out
    }
}

/// Maps every off-rank coupling of `a` to a halo slot and records what each
/// neighbour expects from this rank.
///
/// Slots are grouped by neighbour rank id and sorted by global index within a
/// neighbour. Rows keep their global-column order since only `col_idx` changes.
pub fn build_halo_plan<T: Real>(
    domain: &LocalDomain,
    a: &mut EllMatrix<T>,
) -> Result<HaloPlan, TopologyError> {
    let n = domain.num_rows();
    let me = domain.coords;
    let is_neighbour = |c: [usize; 3]| c != me && (0..3).all(|ax| c[ax].abs_diff(me[ax]) <= 1);

    let mut recv: BTreeSet<(usize, usize)> = BTreeSet::new();
    {
        let p = &a.pattern;
        for (e, &c) in p.col_idx.iter().enumerate() {
            if c == UNRESOLVED {
                let g = p.col_global[e] as usize;
                let oc = domain.owner_coords(domain.global_coords(g));
                let owner = domain.rank_of(oc);
                if !is_neighbour(oc) {
                    return Err(TopologyError::NotNeighbour {
                        rank: domain.rank,
                        global: g,
                        owner,
                    });
                }
                recv.insert((owner, g));
            }
        }
    }

    let mut send: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    let [nx, ny, nz] = domain.global;
    for row in 0..n {
        let [i, j, k] = domain.local_coords(row);
        let g = [
            domain.offset[0] + i,
            domain.offset[1] + j,
            domain.offset[2] + k,
        ];
        let gid = domain.global_index(g);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let q = [g[0] as i64 + dx, g[1] as i64 + dy, g[2] as i64 + dz];
                    if q.iter().any(|&v| v < 0)
                        || q[0] >= nx as i64
                        || q[1] >= ny as i64
                        || q[2] >= nz as i64
                    {
                        continue;
                    }
                    let oc = domain.owner_coords([q[0] as usize, q[1] as usize, q[2] as usize]);
                    if oc != me {
                        send.entry(domain.rank_of(oc)).or_default().insert(gid, row);
                    }
                }
            }
        }
    }

    let mut ranks: BTreeSet<usize> = send.keys().copied().collect();
    ranks.extend(recv.iter().map(|&(r, _)| r));

    let mut halo_globals = Vec::with_capacity(recv.len());
    let mut slot_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut neighbors = Vec::with_capacity(ranks.len());
    for rank in ranks {
        let recv_start = n + halo_globals.len();
        for &(_, g) in recv.range((rank, 0)..(rank + 1, 0)) {
            slot_of.insert(g, n + halo_globals.len());
            halo_globals.push(g);
        }
        neighbors.push(NeighborLink {
            rank,
            send_rows: send
                .get(&rank)
                .map(|m| m.values().copied().collect())
                .unwrap_or_default(),
            recv_start,
            recv_count: n + halo_globals.len() - recv_start,
        });
    }

    let p: &mut EllPattern = Arc::make_mut(&mut a.pattern);
    for e in 0..p.col_idx.len() {
        if p.col_idx[e] == UNRESOLVED {
            p.col_idx[e] = slot_of[&(p.col_global[e] as usize)] as i32;
        }
    }
    p.n_cols_ext = n + halo_globals.len();

    Ok(HaloPlan {
        n_rows: n,
        neighbors,
        halo_globals,
    })
}

/// Row sets for overlapping computation with a halo exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapSchedule {
    /// Rows reading no halo column.
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    /// First color block split the same way (Gauss-Seidel overlap).
    pub first_color_interior: Vec<usize>,
    pub first_color_boundary: Vec<usize>,
}

impl OverlapSchedule {
    pub fn new(pattern: &EllPattern, first_color: Range<usize>) -> Self {
        let (interior, boundary): (Vec<usize>, Vec<usize>) =
            (0..pattern.n_rows).partition(|&r| !pattern.row_touches_halo(r));
        let (first_color_interior, first_color_boundary) =
            first_color.partition(|&r| !pattern.row_touches_halo(r));
        Self {
            interior,
            boundary,
            first_color_interior,
            first_color_boundary,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GlobalProblem;
    use crate::problem::generate_matrix;

    fn plans(prob: &GlobalProblem) -> Vec<(LocalDomain, EllMatrix<f64>, HaloPlan)> {
        (0..prob.num_ranks())
            .map(|r| {
                let d = prob.domain(r);
                let mut a = generate_matrix(&d);
                let plan = build_halo_plan(&d, &mut a).unwrap();
                (d, a, plan)
            })
            .collect()
    }

    #[test]
    fn single_rank_plan_is_empty() {
        let prob = GlobalProblem::new([4, 4, 4], 1).unwrap();
        let (_, a, plan) = plans(&prob).pop().unwrap();
        assert_eq!(plan.halo_size(), 0);
        assert!(plan.neighbors.is_empty());
        assert_eq!(a.n_cols_ext(), 64);
    }

    #[test]
    fn two_ranks_split_along_x() {
        let prob = GlobalProblem::with_rank_grid([4, 4, 4], [2, 1, 1]).unwrap();
        for (_, a, plan) in plans(&prob) {
            assert_eq!(plan.neighbors.len(), 1);
            assert_eq!(plan.neighbors[0].send_rows.len(), 16);
            assert_eq!(plan.neighbors[0].recv_count, 16);
            assert_eq!(a.n_cols_ext(), 64 + 16);
        }
    }

    #[test]
    fn eight_rank_corner_neighbourhood() {
        let prob = GlobalProblem::new([2, 2, 2], 8).unwrap();
        for (_, _, plan) in plans(&prob) {
            assert_eq!(plan.neighbors.len(), 7);
        }
    }

    #[test]
    fn slots_are_distinct_offrank_columns() {
        let prob = GlobalProblem::new([3, 4, 2], 8).unwrap();
        for (d, a, plan) in plans(&prob) {
            let mut offrank = BTreeSet::new();
            for row in 0..a.n_rows() {
                for (&c, &g) in a
                    .pattern
                    .row_cols(row)
                    .iter()
                    .zip(a.pattern.row_globals(row))
                {
                    assert!((c as usize) < a.n_cols_ext());
                    if c as usize >= a.n_rows() {
                        assert_eq!(plan.halo_globals[c as usize - a.n_rows()], g as usize);
                        offrank.insert(g);
                    } else {
                        assert_eq!(d.row_global(c as usize), g as usize);
                    }
                }
            }
            assert_eq!(offrank.len(), plan.halo_size());
            let mut prev = None;
            for link in &plan.neighbors {
                let slots = &plan.halo_globals
                    [link.recv_start - a.n_rows()..link.recv_start - a.n_rows() + link.recv_count];
                assert!(slots.windows(2).all(|w| w[0] < w[1]));
                assert!(prev.is_none_or(|p| p < link.rank));
                prev = Some(link.rank);
            }
        }
    }

    #[test]
    fn topology_error_for_far_column() {
        let line = GlobalProblem::with_rank_grid([2, 2, 2], [3, 1, 1]).unwrap();
        let d0 = line.domain(0);
        let mut a = generate_matrix(&d0);
        let far = d0.global_index([5, 0, 0]);
        let p = Arc::make_mut(&mut a.pattern);
        p.col_idx[0] = UNRESOLVED;
        p.col_global[0] = far as i64;
        let err = build_halo_plan(&d0, &mut a).unwrap_err();
        assert_eq!(
            err,
            TopologyError::NotNeighbour {
                rank: 0,
                global: far,
                owner: 2
            }
        );
    }

    #[test]
    fn reductions() {
        let out = RankWorld::run(8, |c| c.all_reduce_sum(1.0)).unwrap();
        assert!(out.iter().all(|&v| v == 8.0));

        let mut solo = Communicator::solo();
        assert_eq!(solo.all_reduce_sum(0.3), 0.3);

        let out = RankWorld::run(4, |c| c.all_reduce_sum(0.1 * c.rank() as f64)).unwrap();
        let oracle: f64 = 0.0 + 0.1 + 0.1 * 2.0 + 0.1 * 3.0;
        assert!(out.iter().all(|&v| v.to_bits() == oracle.to_bits()));

        let out = RankWorld::run(3, |c| c.all_reduce_max(c.rank() as f64)).unwrap();
        assert_eq!(out, vec![2.0; 3]);
    }

    #[test]
    fn exchange_fills_halo_with_sources() {
        let prob = GlobalProblem::new([3, 2, 4], 8).unwrap();
        let out = RankWorld::run(prob.num_ranks(), |c| {
            let d = prob.domain(c.rank());
            let mut a = generate_matrix(&d);
            let plan = build_halo_plan(&d, &mut a).unwrap();
            let mut v = vec![-1.0f64; plan.n_ext()];
            for row in 0..d.num_rows() {
                v[row] = d.row_global(row) as f64;
            }
            let owned = v[..d.num_rows()].to_vec();
            c.exchange(&mut v, &plan);
            assert_eq!(&v[..d.num_rows()], &owned[..]);
            let slots_ok = plan
                .halo_globals
                .iter()
                .enumerate()
                .all(|(s, &g)| v[d.num_rows() + s] == g as f64);

            let mut ones = vec![0.0f32; plan.n_ext()];
            ones[..d.num_rows()].fill(1.0);
            c.exchange(&mut ones, &plan);
            slots_ok && ones.iter().all(|&x| x == 1.0)
        })
        .unwrap();
        assert!(out.into_iter().all(|ok| ok));
    }

    #[test]
    fn solo_exchange_is_noop() {
        let prob = GlobalProblem::new([2, 2, 2], 1).unwrap();
        let d = prob.domain(0);
        let mut a = generate_matrix(&d);
        let plan = build_halo_plan(&d, &mut a).unwrap();
        let mut v = vec![3.0f64; 8];
        let mut c = Communicator::solo();
        c.exchange(&mut v, &plan);
        c.exchange_overlapped(&mut v, &plan, |_| {});
        assert_eq!(v, vec![3.0; 8]);
    }

    #[test]
    fn mismatched_collectives_are_a_protocol_error() {
        let prob = GlobalProblem::with_rank_grid([2, 2, 2], [2, 1, 1]).unwrap();
        let err = RankWorld::run(2, |c| {
            let d = prob.domain(c.rank());
            let mut a = generate_matrix(&d);
            let plan = build_halo_plan(&d, &mut a).unwrap();
            if c.rank() == 0 {
                c.all_reduce_sum(1.0);
            } else {
                let mut v = vec![0.0f64; plan.n_ext()];
                c.exchange(&mut v, &plan);
            }
        })
        .unwrap_err();
        assert!(
            matches!(err, WorldError::RankFailed { ref message, .. } if message.contains("protocol error")),
            "{err:?}"
        );
    }

    #[test]
    fn halo_shape_mismatch_is_a_protocol_error() {
        let prob = GlobalProblem::with_rank_grid([2, 2, 2], [2, 1, 1]).unwrap();
        let err = RankWorld::run(2, |c| {
            let d = prob.domain(c.rank());
            let mut a = generate_matrix(&d);
            let mut plan = build_halo_plan(&d, &mut a).unwrap();
            if c.rank() == 1 {
                plan.neighbors[0].send_rows.pop();
            }
            let mut v = vec![0.0f64; plan.n_ext()];
            c.exchange(&mut v, &plan);
        })
        .unwrap_err();
        assert!(
            matches!(err, WorldError::RankFailed { rank: 0, ref message } if message.contains("protocol error"))
        );
    }
}
