//! Trajectory segments, the bounded segment queue and pair features.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;

/// Default clip length in environment steps.
pub const SEGMENT_LENGTH: usize = 25;
pub const QUEUE_CAPACITY: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    /// Environment reward. Visible to the synthetic oracle only.
    pub true_reward: f64,
    /// Reward the policy was trained on at collection time.
    pub predicted_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SegmentRecord", into = "SegmentRecord")]
pub struct Segment {
    transitions: Vec<Transition>,
    true_return: f64,
    pub source_episode: u64,
    pub start_index: usize,
}

impl Segment {
    pub fn new(transitions: Vec<Transition>, source_episode: u64, start_index: usize) -> Self {
        let true_return = transitions.iter().map(|t| t.true_reward).sum();
        Self {
            transitions,
            true_return,
            source_episode,
            start_index,
        }
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn true_return(&self) -> f64 {
        self.true_return
    }

    pub fn obs_dim(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.observation.len())
    }

    pub fn act_dim(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.action.len())
    }

    /// Sum of true rewards recomputed from the transitions.
    pub fn recomputed_return(&self) -> f64 {
        self.transitions.iter().map(|t| t.true_reward).sum()
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("segment serializes")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::parse(1, e.to_string()))
    }
}

/// Flat wire form: `len`, dimensions, provenance and row-major transition data
/// `[obs.., act.., true_reward, predicted_reward]` per step.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentRecord {
    len: usize,
    obs_dim: usize,
    act_dim: usize,
    episode: u64,
    start: usize,
    data: Vec<f64>,
}

impl From<Segment> for SegmentRecord {
    fn from(s: Segment) -> Self {
        let (obs_dim, act_dim) = (s.obs_dim(), s.act_dim());
        let mut data = Vec::with_capacity(s.len() * (obs_dim + act_dim + 2));
        for t in &s.transitions {
            data.extend_from_slice(&t.observation);
            data.extend_from_slice(&t.action);
            data.push(t.true_reward);
            data.push(t.predicted_reward);
        }
        SegmentRecord {
            len: s.len(),
            obs_dim,
            act_dim,
            episode: s.source_episode,
            start: s.start_index,
            data,
        }
    }
}

impl TryFrom<SegmentRecord> for Segment {
    type Error = String;

    fn try_from(r: SegmentRecord) -> std::result::Result<Self, String> {
        let width = r.obs_dim + r.act_dim + 2;
        if r.data.len() != r.len * width {
            return Err(format!(
                "segment data has {} values, expected {} x {}",
                r.data.len(),
                r.len,
                width
            ));
        }
        let transitions = r
            .data
            .chunks_exact(width)
            .map(|row| Transition {
                observation: row[..r.obs_dim].to_vec(),
                action: row[r.obs_dim..r.obs_dim + r.act_dim].to_vec(),
                true_reward: row[width - 2],
                predicted_reward: row[width - 1],
            })
            .collect();
        Ok(Segment::new(transitions, r.episode, r.start))
    }
}

/// Cuts fixed-length windows at offsets `0, stride, 2·stride, …`; a trailing window
/// shorter than `length` is dropped.
pub fn extract_segments(
    episode: &[Transition],
    length: usize,
    stride: usize,
    episode_id: u64,
) -> Vec<Segment> {
    assert!(length > 0 && stride > 0);
    let mut out = Vec::new();
    let mut start = 0;
    while start + length <= episode.len() {
        out.push(Segment::new(
            episode[start..start + length].to_vec(),
            episode_id,
            start,
        ));
        start += stride;
    }
    out
}

/// Bounded FIFO of recent segments; evicts oldest first.
#[derive(Debug, Clone)]
pub struct SegmentQueue {
    buffer: VecDeque<Segment>,
    capacity: usize,
    total_pushed: u64,
    evicted: u64,
}

impl SegmentQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 2, "queue must hold a pair");
        Self {
            buffer: VecDeque::with_capacity(capacity),
            capacity,
            total_pushed: 0,
            evicted: 0,
        }
    }

    pub fn push(&mut self, segment: Segment) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
            self.evicted += 1;
        }
        self.buffer.push_back(segment);
        self.total_pushed += 1;
    }

    pub fn extend(&mut self, segments: impl IntoIterator<Item = Segment>) {
        for s in segments {
            self.push(s);
        }
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Segment> {
        self.buffer.iter()
    }

    /// Two distinct queue positions drawn uniformly without replacement. Pairs stay
    /// in the queue after sampling.
    pub fn sample_pair(&self, rng: &mut RngStream) -> Result<(Segment, Segment)> {
        let (i, j) = self.sample_positions(rng)?;
        Ok((self.buffer[i].clone(), self.buffer[j].clone()))
    }

    pub fn sample_positions(&self, rng: &mut RngStream) -> Result<(usize, usize)> {
        let n = self.buffer.len();
        if n < 2 {
            return Err(Error::NotReady { have: n });
        }
        let i = rng.index(n);
        let mut j = rng.index(n - 1);
        if j >= i {
            j += 1;
        }
        Ok((i, j))
    }
}

/// Fixed-length summary of a segment pair: for each segment, per-dimension
/// mean / population std / min / max over time of every observation and action
/// component, followed by one reserved slot that is always zero (returns are never
/// exposed to the estimator). The left segment's block comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures(pub Vec<f64>);

impl PairFeatures {
    pub fn dim(obs_dim: usize, act_dim: usize) -> usize {
        2 * segment_block_len(obs_dim, act_dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Features of the same pair presented in the opposite order.
    pub fn swapped(&self) -> PairFeatures {
        let half = self.0.len() / 2;
        let mut v = Vec::with_capacity(self.0.len());
        v.extend_from_slice(&self.0[half..]);
        v.extend_from_slice(&self.0[..half]);
        PairFeatures(v)
    }
}

fn segment_block_len(obs_dim: usize, act_dim: usize) -> usize {
    4 * (obs_dim + act_dim) + 1
}

fn segment_block(s: &Segment, out: &mut Vec<f64>) {
    let (od, ad) = (s.obs_dim(), s.act_dim());
    let n = s.len() as f64;
    for d in 0..od + ad {
        let value = |t: &Transition| if d < od { t.observation[d] } else { t.action[d - od] };
        let mean = s.transitions.iter().map(value).sum::<f64>() / n;
        let var = s.transitions.iter().map(|t| (value(t) - mean).powi(2)).sum::<f64>() / n;
        let min = s.transitions.iter().map(value).fold(f64::INFINITY, f64::min);
        let max = s.transitions.iter().map(value).fold(f64::NEG_INFINITY, f64::max);
        out.extend_from_slice(&[mean, var.sqrt(), min, max]);
    }
    out.push(0.0);
}

pub fn featurize_pair(left: &Segment, right: &Segment) -> PairFeatures {
    assert_eq!(left.obs_dim(), right.obs_dim(), "segment observation dims differ");
    assert_eq!(left.act_dim(), right.act_dim(), "segment action dims differ");
    let mut v = Vec::with_capacity(PairFeatures::dim(left.obs_dim(), left.act_dim()));
    segment_block(left, &mut v);
    segment_block(right, &mut v);
    PairFeatures(v)
}
