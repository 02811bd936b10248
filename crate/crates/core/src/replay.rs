//! Per-agent experience replay with joint, index-aligned gathering.
//!
//! Each learner owns a fixed-capacity ring buffer stored as contiguous
//! per-field arrays. Transitions are inserted jointly so that slot `s` in
//! every buffer belongs to the same environment step; one index batch then
//! yields a coherent joint transition across all agents.
//!
//! Every gathered record counts as one lookup. A full update round gathers
//! `K` records from all `N` buffers for each of the `N` updating agents,
//! i.e. `N²·K` lookups.

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;

use ndarray::{Array1, Array2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

use crate::{Error, Result};

/// Default replay capacity per agent.
pub const DEFAULT_CAPACITY: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer for one agent. Storage grows lazily up to
/// `capacity`, then overwrites the oldest slot.
#[derive(Debug, Clone)]
pub struct AgentBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    dones: Vec<f64>,
    write_cursor: usize,
    len: usize,
}

impl AgentBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 || obs_dim == 0 || action_dim == 0 {
            return Err(Error::InvalidDimension(format!(
                "buffer capacity {capacity}, obs {obs_dim}, action {action_dim} must all be positive"
            )));
        }
        Ok(Self {
            capacity,
            obs_dim,
            action_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
            write_cursor: 0,
            len: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn check(&self, record: &TransitionRecord) -> Result<()> {
        if record.obs.len() != self.obs_dim
            || record.next_obs.len() != self.obs_dim
            || record.action.len() != self.action_dim
        {
            return Err(Error::ShapeMismatch(format!(
                "record dims obs {} / next_obs {} / action {} vs buffer {} / {}",
                record.obs.len(),
                record.next_obs.len(),
                record.action.len(),
                self.obs_dim,
                self.action_dim
            )));
        }
        let finite = record.reward.is_finite()
            && record.obs.iter().chain(&record.next_obs).chain(&record.action).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("transition record".into()));
        }
        Ok(())
    }

    fn push_unchecked(&mut self, record: &TransitionRecord) {
        let done = if record.done { 1.0 } else { 0.0 };
        if self.len < self.capacity {
            self.obs.extend_from_slice(&record.obs);
            self.actions.extend_from_slice(&record.action);
            self.rewards.push(record.reward);
            self.next_obs.extend_from_slice(&record.next_obs);
            self.dones.push(done);
            self.len += 1;
        } else {
            let s = self.write_cursor;
            let (od, ad) = (self.obs_dim, self.action_dim);
            self.obs[s * od..(s + 1) * od].copy_from_slice(&record.obs);
            self.actions[s * ad..(s + 1) * ad].copy_from_slice(&record.action);
            self.rewards[s] = record.reward;
            self.next_obs[s * od..(s + 1) * od].copy_from_slice(&record.next_obs);
            self.dones[s] = done;
        }
        self.write_cursor = (self.write_cursor + 1) % self.capacity;
    }

    pub fn push(&mut self, record: &TransitionRecord) -> Result<()> {
        self.check(record)?;
        self.push_unchecked(record);
        Ok(())
    }

    /// Record stored in physical slot `slot`.
    pub fn get(&self, slot: usize) -> Result<TransitionRecord> {
        if slot >= self.len {
            return Err(Error::IndexOutOfRange { index: slot, len: self.len });
        }
        let (od, ad) = (self.obs_dim, self.action_dim);
        Ok(TransitionRecord {
            obs: self.obs[slot * od..(slot + 1) * od].to_vec(),
            action: self.actions[slot * ad..(slot + 1) * ad].to_vec(),
            reward: self.rewards[slot],
            next_obs: self.next_obs[slot * od..(slot + 1) * od].to_vec(),
            done: self.dones[slot] != 0.0,
        })
    }

    /// Stored records from oldest to newest.
    pub fn records_oldest_first(&self) -> Vec<TransitionRecord> {
        let start = if self.len < self.capacity { 0 } else { self.write_cursor };
        (0..self.len).map(|k| self.get((start + k) % self.capacity).expect("slot in range")).collect()
    }

    fn copy_rows(&self, indices: &[usize], out: AgentBatchViewMut<'_>) {
        let (od, ad) = (self.obs_dim, self.action_dim);
        let obs = out.obs.into_slice().expect("contiguous rows");
        let actions = out.actions.into_slice().expect("contiguous rows");
        let next_obs = out.next_obs.into_slice().expect("contiguous rows");
        let mut rewards = out.rewards;
        let mut dones = out.dones;
        for (j, &i) in indices.iter().enumerate() {
            obs[j * od..(j + 1) * od].copy_from_slice(&self.obs[i * od..(i + 1) * od]);
            actions[j * ad..(j + 1) * ad].copy_from_slice(&self.actions[i * ad..(i + 1) * ad]);
            next_obs[j * od..(j + 1) * od].copy_from_slice(&self.next_obs[i * od..(i + 1) * od]);
            rewards[j] = self.rewards[i];
            dones[j] = self.dones[i];
        }
    }
}

/// Uniform draws with replacement from `[0, length)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexBatch(pub Vec<usize>);

impl IndexBatch {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn sample_indices<R: Rng + ?Sized>(rng: &mut R, batch_size: usize, length: usize) -> Result<IndexBatch> {
    if length == 0 {
        return Err(Error::EmptyBuffer);
    }
    Ok(IndexBatch((0..batch_size).map(|_| rng.random_range(0..length)).collect()))
}

/// One agent's slice of a joint mini-batch. `dones` holds 0.0 / 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBatch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub dones: Array1<f64>,
}

impl AgentBatch {
    fn zeros(rows: usize, obs_dim: usize, action_dim: usize) -> Self {
        Self {
            obs: Array2::zeros((rows, obs_dim)),
            actions: Array2::zeros((rows, action_dim)),
            rewards: Array1::zeros(rows),
            next_obs: Array2::zeros((rows, obs_dim)),
            dones: Array1::zeros(rows),
        }
    }

    fn view_mut(&mut self) -> AgentBatchViewMut<'_> {
        AgentBatchViewMut {
            obs: self.obs.view_mut(),
            actions: self.actions.view_mut(),
            rewards: self.rewards.view_mut(),
            next_obs: self.next_obs.view_mut(),
            dones: self.dones.view_mut(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

struct AgentBatchViewMut<'a> {
    obs: ArrayViewMut2<'a, f64>,
    actions: ArrayViewMut2<'a, f64>,
    rewards: ArrayViewMut1<'a, f64>,
    next_obs: ArrayViewMut2<'a, f64>,
    dones: ArrayViewMut1<'a, f64>,
}

/// Index-aligned rows from every agent's buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMinibatch {
    pub agents: Vec<AgentBatch>,
}

impl JointMinibatch {
    pub fn batch_size(&self) -> usize {
        self.agents.first().map_or(0, AgentBatch::len)
    }
}

/// One buffer per learner plus the shared lookup counter.
#[derive(Debug)]
pub struct BufferSet {
    buffers: Vec<AgentBuffer>,
    lookups: AtomicU64,
}

impl BufferSet {
    pub fn new(n_agents: usize, capacity: usize, obs_dims: &[usize], action_dim: usize) -> Result<Self> {
        if obs_dims.len() != n_agents || n_agents == 0 {
            return Err(Error::InvalidDimension(format!("{} observation sizes for {n_agents} agents", obs_dims.len())));
        }
        let buffers = obs_dims.iter().map(|&d| AgentBuffer::new(capacity, d, action_dim)).collect::<Result<_>>()?;
        Ok(Self { buffers, lookups: AtomicU64::new(0) })
    }

    pub fn n_agents(&self) -> usize {
        self.buffers.len()
    }

    /// Common length of all member buffers.
    pub fn len(&self) -> usize {
        self.buffers[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn buffers(&self) -> &[AgentBuffer] {
        &self.buffers
    }

    pub fn lookup_count(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    /// Appends one record per agent. All records are validated before any
    /// buffer is touched, so lengths stay equal.
    pub fn store_joint(&mut self, records: &[TransitionRecord]) -> Result<()> {
        if records.len() != self.buffers.len() {
            return Err(Error::ShapeMismatch(format!("{} records for {} agents", records.len(), self.buffers.len())));
        }
        for (buffer, record) in self.buffers.iter().zip(records) {
            buffer.check(record)?;
        }
        for (buffer, record) in self.buffers.iter_mut().zip(records) {
            buffer.push_unchecked(record);
        }
        Ok(())
    }

    fn check_indices(&self, indices: &IndexBatch) -> Result<()> {
        let len = self.len();
        match indices.0.iter().find(|&&i| i >= len) {
            Some(&index) => Err(Error::IndexOutOfRange { index, len }),
            None => Ok(()),
        }
    }

    fn empty_batch(&self, rows: usize) -> JointMinibatch {
        JointMinibatch {
            agents: self.buffers.iter().map(|b| AgentBatch::zeros(rows, b.obs_dim, b.action_dim)).collect(),
        }
    }

    /// Gathers the same slots from every buffer. Adds `N·K` to the lookup
    /// counter.
    pub fn gather_joint(&self, indices: &IndexBatch) -> Result<JointMinibatch> {
        self.check_indices(indices)?;
        let mut batch = self.empty_batch(indices.len());
        for (buffer, out) in self.buffers.iter().zip(batch.agents.iter_mut()) {
            buffer.copy_rows(&indices.0, out.view_mut());
        }
        self.count(indices.len());
        Ok(batch)
    }

    /// Same result as [`gather_joint`](Self::gather_joint), with the output
    /// rows split into contiguous ranges filled by `workers` threads.
    pub fn gather_joint_parallel(&self, indices: &IndexBatch, workers: usize) -> Result<JointMinibatch> {
        if workers == 0 {
            return Err(Error::InvalidConfig("worker count must be at least 1".into()));
        }
        self.check_indices(indices)?;
        let rows = indices.len();
        let mut batch = self.empty_batch(rows);
        if workers == 1 || rows <= 1 {
            for (buffer, out) in self.buffers.iter().zip(batch.agents.iter_mut()) {
                buffer.copy_rows(&indices.0, out.view_mut());
            }
        } else {
            let chunk = rows.div_ceil(workers);
            let n_chunks = rows.div_ceil(chunk);
            let mut per_worker: Vec<Vec<AgentBatchViewMut<'_>>> =
                (0..n_chunks).map(|_| Vec::with_capacity(self.buffers.len())).collect();
            for out in batch.agents.iter_mut() {
                let parts = out
                    .obs
                    .axis_chunks_iter_mut(Axis(0), chunk)
                    .zip(out.actions.axis_chunks_iter_mut(Axis(0), chunk))
                    .zip(out.rewards.axis_chunks_iter_mut(Axis(0), chunk))
                    .zip(out.next_obs.axis_chunks_iter_mut(Axis(0), chunk))
                    .zip(out.dones.axis_chunks_iter_mut(Axis(0), chunk));
                for (w, ((((obs, actions), rewards), next_obs), dones)) in parts.enumerate() {
                    per_worker[w].push(AgentBatchViewMut { obs, actions, rewards, next_obs, dones });
                }
            }
            thread::scope(|scope| {
                for (w, views) in per_worker.into_iter().enumerate() {
                    let slice = &indices.0[w * chunk..((w + 1) * chunk).min(rows)];
                    let buffers = &self.buffers;
                    scope.spawn(move || {
                        for (buffer, view) in buffers.iter().zip(views) {
                            buffer.copy_rows(slice, view);
                        }
                    });
                }
            });
        }
        self.count(rows);
        Ok(batch)
    }

    fn count(&self, rows: usize) {
        let n = (self.buffers.len() * rows) as u64;
        self.lookups.fetch_add(n, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn record(tag: f64) -> TransitionRecord {
        TransitionRecord {
            obs: vec![tag, tag + 0.5],
            action: vec![-tag],
            reward: tag * 10.0,
            next_obs: vec![tag + 1.0, tag + 1.5],
            done: tag as i64 % 2 == 0,
        }
    }

    fn joint(n: usize, tag: f64) -> Vec<TransitionRecord> {
        (0..n).map(|a| record(tag + a as f64 * 1000.0)).collect()
    }

    #[test]
    fn single_insertion() {
        let mut set = BufferSet::new(3, 10, &[2, 2, 2], 1).unwrap();
        set.store_joint(&joint(3, 0.0)).unwrap();
        assert!(set.buffers().iter().all(|b| b.len() == 1));
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = AgentBuffer::new(4, 2, 1).unwrap();
        for t in 0..6 {
            buf.push(&record(t as f64)).unwrap();
        }
        assert_eq!(buf.len(), 4);
        let tags: Vec<_> = buf.records_oldest_first().iter().map(|r| r.obs[0]).collect();
        assert_eq!(tags, vec![2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn store_rejects_wrong_count_and_keeps_lengths_equal() {
        let mut set = BufferSet::new(2, 10, &[2, 2], 1).unwrap();
        assert!(set.store_joint(&joint(3, 0.0)).is_err());
        let mut bad = joint(2, 0.0);
        bad[1].obs.push(0.0);
        assert!(set.store_joint(&bad).is_err());
        assert!(set.buffers().iter().all(|b| b.is_empty()));
    }

    #[test]
    fn sample_from_single_record() {
        let idx = sample_indices(&mut seeded_rng(1), 4, 1).unwrap();
        assert_eq!(idx.0, vec![0; 4]);
        assert!(matches!(sample_indices(&mut seeded_rng(1), 4, 0), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_indices(&mut seeded_rng(11), 64, 1000).unwrap();
        let b = sample_indices(&mut seeded_rng(11), 64, 1000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gather_counts_and_copies() {
        let mut set = BufferSet::new(3, 100, &[2, 2, 2], 1).unwrap();
        for t in 0..5 {
            set.store_joint(&joint(3, t as f64)).unwrap();
        }
        let idx = IndexBatch(vec![0; 1024]);
        let batch = set.gather_joint(&idx).unwrap();
        assert_eq!(set.lookup_count(), 3072);
        for (a, agent) in batch.agents.iter().enumerate() {
            let r0 = set.buffers()[a].get(0).unwrap();
            assert!(agent.obs.rows().into_iter().all(|row| row.to_vec() == r0.obs));
            assert!(agent.rewards.iter().all(|&r| r == r0.reward));
        }
        assert!(matches!(set.gather_joint(&IndexBatch(vec![5])), Err(Error::IndexOutOfRange { index: 5, len: 5 })));
    }

    #[test]
    fn parallel_gather_matches_serial() {
        let mut set = BufferSet::new(2, 50, &[2, 2], 1).unwrap();
        for t in 0..37 {
            set.store_joint(&joint(2, t as f64)).unwrap();
        }
        let idx = sample_indices(&mut seeded_rng(3), 101, set.len()).unwrap();
        let serial = set.gather_joint(&idx).unwrap();
        for workers in [1, 2, 3, 4, 8, 200] {
            assert_eq!(set.gather_joint_parallel(&idx, workers).unwrap(), serial);
        }
        assert_eq!(set.lookup_count(), 7 * 2 * 101);
        assert!(set.gather_joint_parallel(&idx, 0).is_err());
    }
}
