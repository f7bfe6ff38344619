use std::ops::Range;

use rand::Rng;

use crate::error::{Result, SgpError};

/// One training example: the embedding row of `node` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleIndex {
    pub t: usize,
    pub node: usize,
}

/// Chronological train/val/test time ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    Fractions { train: f64, val: f64, test: f64 },
    /// First timestamps of the validation and test periods, and an optional
    /// exclusive end of the test period.
    Boundaries {
        val_start: i64,
        test_start: i64,
        end: Option<i64>,
    },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn resolve(&self, timestamps: &[i64]) -> Result<Split> {
        let steps = timestamps.len();
        match *self {
            SplitSpec::Fractions { train, val, test } => {
                let fr = [train, val, test];
                if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || train + val + test > 1.0 + 1e-9 {
                    return Err(SgpError::Config(format!(
                        "split fractions {train}/{val}/{test} must be in [0, 1] and sum to at most 1"
                    )));
                }
                let n_train = (steps as f64 * train).round() as usize;
                let n_val = ((steps as f64 * val).round() as usize).min(steps - n_train.min(steps));
                let a = n_train.min(steps);
                let b = a + n_val;
                let c = (b + (steps as f64 * test).round() as usize).min(steps);
                Ok(Split {
                    train: 0..a,
                    val: a..b,
                    test: b..c,
                })
            }
            SplitSpec::Boundaries {
                val_start,
                test_start,
                end,
            } => {
                let idx = |ts: i64| timestamps.partition_point(|&x| x < ts);
                let a = idx(val_start);
                let b = idx(test_start);
                let c = end.map_or(steps, idx);
                if val_start > test_start || end.is_some_and(|e| e < test_start) {
                    return Err(SgpError::Config(format!(
                        "split boundaries {val_start}, {test_start}, {end:?} are not ordered"
                    )));
                }
                Ok(Split {
                    train: 0..a,
                    val: a..b,
                    test: b..c,
                })
            }
        }
    }
}

/// Anchors `(t, node)` of a time range whose `H`-step target window stays
/// inside the range and whose embedding lies past the washout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    start: usize,
    end: usize,
    num_nodes: usize,
}

impl Region {
    pub fn new(range: &Range<usize>, washout: usize, horizon: usize, num_steps: usize, num_nodes: usize) -> Result<Self> {
        let start = range.start.max(washout);
        let end = range.end.min(num_steps).saturating_sub(horizon);
        if start >= end || num_nodes == 0 {
            return Err(SgpError::Config(format!(
                "time range {range:?} has no anchors with washout {washout} and horizon {horizon}"
            )));
        }
        Ok(Region {
            start,
            end,
            num_nodes,
        })
    }

    /// Valid anchor times.
    pub fn times(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) * self.num_nodes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `k`-th anchor in time-major order.
    pub fn get(&self, k: usize) -> SampleIndex {
        SampleIndex {
            t: self.start + k / self.num_nodes,
            node: k % self.num_nodes,
        }
    }

    pub fn contains(&self, s: &SampleIndex) -> bool {
        (self.start..self.end).contains(&s.t) && s.node < self.num_nodes
    }
}

/// `batch` anchors drawn uniformly with replacement.
pub fn sample_minibatch<R: Rng + ?Sized>(rng: &mut R, region: &Region, batch: usize) -> Vec<SampleIndex> {
    (0..batch).map(|_| region.get(rng.random_range(0..region.len()))).collect()
}
