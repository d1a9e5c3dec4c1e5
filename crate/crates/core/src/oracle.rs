//! Synthetic preference labelers.
//!
//! [`ScalingContext::scale_preference`] turns a pair of segment returns into a weak
//! preference `ẑ ∈ [0, 1]`: the winning segment's return is min-max normalised against
//! the 10th/90th rank bounds of every return seen so far, and `ẑ` moves away from 0.5
//! by half that amount, towards 1 when the left segment wins and towards 0 when the
//! right one does. [`hard_preference`] is the fixed left/right/equal labeler.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envlib::EnvKind;
use crate::error::{Error, Result};
use crate::trajectory::Segment;

/// A preference label in `[0, 1]`; values above 0.5 favour the left segment.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PreferenceScale(f64);

impl PreferenceScale {
    pub const LEFT: PreferenceScale = PreferenceScale(1.0);
    pub const EQUAL: PreferenceScale = PreferenceScale(0.5);
    pub const RIGHT: PreferenceScale = PreferenceScale(0.0);

    pub fn new(z: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&z) {
            Ok(PreferenceScale(z))
        } else {
            Err(Error::Config(format!("preference {z} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Label of the same comparison with the segments presented in reverse order.
    pub fn flipped(self) -> Self {
        PreferenceScale(1.0 - self.0)
    }
}

impl TryFrom<f64> for PreferenceScale {
    type Error = Error;

    fn try_from(z: f64) -> Result<Self> {
        PreferenceScale::new(z)
    }
}

impl From<PreferenceScale> for f64 {
    fn from(z: PreferenceScale) -> f64 {
        z.0
    }
}

/// `1.0` if left is strictly better, `0.0` if right is, `0.5` on a tie.
pub fn hard_preference(r_left: f64, r_right: f64) -> PreferenceScale {
    if r_left > r_right {
        PreferenceScale::LEFT
    } else if r_left < r_right {
        PreferenceScale::RIGHT
    } else {
        PreferenceScale::EQUAL
    }
}

/// 1-indexed rank `⌈pct·n/100⌉`, computed in integers so that e.g. `n = 30` gives 3.
pub fn percentile_rank(pct: usize, n: usize) -> usize {
    (pct * n).div_ceil(100)
}

/// The running reward list with its rank bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScalingContext {
    sorted: Vec<f64>,
    /// Insertion order, kept only when a window is configured.
    history: VecDeque<f64>,
    /// Keep only the most recent `window` reward sets (pairs).
    window: Option<usize>,
}

impl ScalingContext {
    /// Cumulative context over every labelled pair.
    pub fn new() -> Self {
        Self::default()
    }

    /// Context over the most recent `sets` labelled pairs.
    pub fn windowed(sets: usize) -> Self {
        assert!(sets >= 1);
        Self {
            window: Some(sets),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Rewards in ascending order.
    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    fn insert(&mut self, r: f64) {
        // stable: equal values keep arrival order
        let at = self.sorted.partition_point(|x| *x <= r);
        self.sorted.insert(at, r);
    }

    fn remove_one(&mut self, r: f64) {
        let at = self.sorted.partition_point(|x| *x < r);
        debug_assert!(self.sorted.get(at) == Some(&r));
        self.sorted.remove(at);
    }

    /// Appends one reward set `(R_left, R_right)` to the list.
    pub fn update(&mut self, r_left: f64, r_right: f64) -> Result<()> {
        if !r_left.is_finite() || !r_right.is_finite() {
            return Err(Error::NonFinite("segment return".into()));
        }
        self.insert(r_left);
        self.insert(r_right);
        if let Some(sets) = self.window {
            self.history.push_back(r_left);
            self.history.push_back(r_right);
            while self.history.len() > 2 * sets {
                let old = self.history.pop_front().expect("non-empty");
                self.remove_one(old);
            }
        }
        Ok(())
    }

    /// `(R_min, R_max)`: the ⌈0.1·N⌉-th and ⌈0.9·N⌉-th smallest rewards.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        let n = self.sorted.len();
        if n == 0 {
            return None;
        }
        let lo = self.sorted[percentile_rank(10, n) - 1];
        let hi = self.sorted[percentile_rank(90, n) - 1];
        Some((lo, hi))
    }

    /// True when the bounds cannot normalise (fewer than two rewards or `R_max = R_min`).
    pub fn is_degenerate(&self) -> bool {
        match self.bounds() {
            Some((lo, hi)) => self.sorted.len() < 2 || hi <= lo,
            None => true,
        }
    }

    /// Weak preference for `(r_left, r_right)` against the current bounds. A
    /// degenerate context falls back to [`hard_preference`].
    pub fn scale_preference(&self, r_left: f64, r_right: f64) -> PreferenceScale {
        if self.is_degenerate() {
            return hard_preference(r_left, r_right);
        }
        let (lo, hi) = self.bounds().expect("non-empty");
        let normalise = |r: f64| ((r - lo) / (hi - lo)).min(1.0).max(0.0);
        if r_left > r_right {
            PreferenceScale(0.5 + 0.5 * normalise(r_left))
        } else if r_left < r_right {
            PreferenceScale(0.5 - 0.5 * normalise(r_right))
        } else {
            PreferenceScale::EQUAL
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    OracleScaled,
    OracleHard,
    HumanUi,
    Estimator,
}

impl LabelSource {
    pub fn name(self) -> &'static str {
        match self {
            LabelSource::OracleScaled => "oracle_scaled",
            LabelSource::OracleHard => "oracle_hard",
            LabelSource::HumanUi => "human_ui",
            LabelSource::Estimator => "estimator",
        }
    }

    /// Oracle and human labels count against the human budget.
    pub fn is_human_side(self) -> bool {
        !matches!(self, LabelSource::Estimator)
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "oracle_scaled" => Ok(LabelSource::OracleScaled),
            "oracle_hard" => Ok(LabelSource::OracleHard),
            "human_ui" => Ok(LabelSource::HumanUi),
            "estimator" => Ok(LabelSource::Estimator),
            other => Err(Error::Config(format!("unknown label source `{other}`"))),
        }
    }
}

/// One row of the preference database: `(σ¹, σ², ẑ)` plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub env: EnvKind,
    pub left: Segment,
    pub right: Segment,
    pub z: PreferenceScale,
    pub source: LabelSource,
    /// Environment steps taken when the label was recorded.
    pub timestep: u64,
}

/// Labeler that answers from hidden true returns.
#[derive(Debug, Clone)]
pub enum SyntheticOracle {
    Scaled(ScalingContext),
    Hard,
}

impl SyntheticOracle {
    pub fn source(&self) -> LabelSource {
        match self {
            SyntheticOracle::Scaled(_) => LabelSource::OracleScaled,
            SyntheticOracle::Hard => LabelSource::OracleHard,
        }
    }

    /// Labels a pair. The scaled oracle first adds the pair's returns to its reward list.
    pub fn label(&mut self, left: &Segment, right: &Segment) -> Result<PreferenceScale> {
        let (rl, rr) = (left.true_return(), right.true_return());
        match self {
            SyntheticOracle::Scaled(ctx) => {
                ctx.update(rl, rr)?;
                Ok(ctx.scale_preference(rl, rr))
            }
            SyntheticOracle::Hard => Ok(hard_preference(rl, rr)),
        }
    }

    /// Records a reward set without producing a label (e.g. for human answers).
    pub fn observe(&mut self, left: &Segment, right: &Segment) -> Result<()> {
        if let SyntheticOracle::Scaled(ctx) = self {
            ctx.update(left.true_return(), right.true_return())?;
        }
        Ok(())
    }
}
