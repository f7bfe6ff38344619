use std::fmt;

use crate::error::{Result, SgpError};

/// Targets with `|x|` below this are left out of MAPE.
pub const MAPE_GUARD: f64 = 1e-5;

/// Horizon steps (1-based) reported separately when the horizon reaches them.
pub const DEFAULT_HORIZON_OFFSETS: [usize; 3] = [3, 6, 12];

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Sums {
    abs: f64,
    sq: f64,
    ape: f64,
    count: u64,
    ape_count: u64,
}

impl Sums {
    fn add(&mut self, pred: f64, target: f64) {
        let e = pred - target;
        self.abs += e.abs();
        self.sq += e * e;
        self.count += 1;
        if target.abs() >= MAPE_GUARD {
            self.ape += (e / target).abs();
            self.ape_count += 1;
        }
    }

    fn merge(&mut self, o: &Sums) {
        self.abs += o.abs;
        self.sq += o.sq;
        self.ape += o.ape;
        self.count += o.count;
        self.ape_count += o.ape_count;
    }

    fn metrics(&self) -> Metrics {
        let n = self.count as f64;
        Metrics {
            mae: self.abs / n,
            mse: self.sq / n,
            mape: if self.ape_count == 0 {
                f64::NAN
            } else {
                self.ape / self.ape_count as f64
            },
            count: self.count,
        }
    }
}

/// Error statistics over a set of forecasts. MAPE is a fraction, not a percentage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub mape: f64,
    pub count: u64,
}

/// Accumulates forecast errors per horizon step, skipping unobserved targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricAccumulator {
    per_step: Vec<Sums>,
}

impl MetricAccumulator {
    pub fn new(horizon: usize) -> Self {
        MetricAccumulator {
            per_step: vec![Sums::default(); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.per_step.len()
    }

    /// Records one forecast made `step` (0-based) steps ahead.
    pub fn add(&mut self, step: usize, pred: f64, target: f64, observed: bool) {
        if observed {
            self.per_step[step].add(pred, target);
        }
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        for (a, b) in self.per_step.iter_mut().zip(&other.per_step) {
            a.merge(b);
        }
    }

    pub fn count(&self) -> u64 {
        self.per_step.iter().map(|s| s.count).sum()
    }

    pub fn overall(&self) -> Metrics {
        let mut total = Sums::default();
        for s in &self.per_step {
            total.merge(s);
        }
        total.metrics()
    }

    /// Metrics at a 1-based horizon step.
    pub fn at_step(&self, offset: usize) -> Option<Metrics> {
        offset.checked_sub(1).and_then(|i| self.per_step.get(i)).map(Sums::metrics)
    }

    pub fn report(&self, offsets: &[usize]) -> MetricReport {
        MetricReport {
            overall: self.overall(),
            horizons: offsets
                .iter()
                .filter_map(|&o| self.at_step(o).map(|m| (o, m)))
                .collect(),
        }
    }
}

/// Computes metrics over paired slices in one go.
pub fn compute(pred: &[f64], target: &[f64], observed: Option<&[bool]>) -> Result<Metrics> {
    if pred.len() != target.len() || observed.is_some_and(|m| m.len() != pred.len()) {
        return Err(SgpError::Shape("prediction, target and mask lengths differ".into()));
    }
    let mut acc = MetricAccumulator::new(1);
    for (k, (&p, &t)) in pred.iter().zip(target).enumerate() {
        acc.add(0, p, t, observed.is_none_or(|m| m[k]));
    }
    Ok(acc.overall())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub overall: Metrics,
    /// `(1-based horizon step, metrics)`
    pub horizons: Vec<(usize, Metrics)>,
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    /// Parses the key-value text written by `Display`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut overall = None;
        let mut horizons = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, rest) = line
                .split_once(' ')
                .ok_or_else(|| SgpError::Format(format!("bad metric line '{line}'")))?;
            let mut fields = [None; 4];
            for kv in rest.split_whitespace() {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| SgpError::Format(format!("bad field '{kv}'")))?;
                let slot = ["mae", "mse", "mape", "count"]
                    .iter()
                    .position(|n| *n == k)
                    .ok_or_else(|| SgpError::Format(format!("unknown metric '{k}'")))?;
                fields[slot] = Some(v.parse::<f64>().map_err(|e| SgpError::Format(format!("{kv}: {e}")))?);
            }
            let get = |i: usize| fields[i].ok_or_else(|| SgpError::Format(format!("missing field in '{line}'")));
            let m = Metrics {
                mae: get(0)?,
                mse: get(1)?,
                mape: get(2)?,
                count: get(3)? as u64,
            };
            match key {
                "overall" => overall = Some(m),
                h => {
                    let step = h
                        .strip_prefix("horizon_")
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| SgpError::Format(format!("bad metric key '{h}'")))?;
                    horizons.push((step, m));
                }
            }
        }
        Ok(MetricReport {
            overall: overall.ok_or_else(|| SgpError::Format("report has no overall line".into()))?,
            horizons,
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = |f: &mut fmt::Formatter<'_>, key: &str, m: &Metrics| {
            writeln!(f, "{key} mae={} mse={} mape={} count={}", m.mae, m.mse, m.mape, m.count)
        };
        line(f, "overall", &self.overall)?;
        for (h, m) in &self.horizons {
            line(f, &format!("horizon_{h}"), m)?;
        }
        Ok(())
    }
}
