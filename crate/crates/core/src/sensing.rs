//! Temperature sensors monitored through a lossy channel.
//!
//! Each node samples its signal every step and smooths it with a two-equation
//! level/rate filter (DEWMA). The sink holds the last pair it received and
//! extrapolates linearly; its penalty is `d * |x2_hat|` where `d` is the time
//! since the last successful update. The scheduler sees that penalty binned
//! into a small discrete state space.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{count_active, Action, ModelError, StateIndex};
use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum SensingError {
    #[error("sample interval must be positive")]
    ZeroDt,
    #[error("smoothing factor {name} must lie in (0, 1], got {value}")]
    InvalidSmoothing { name: &'static str, value: f64 },
    #[error("period must be positive, got {0}")]
    InvalidPeriod(f64),
    #[error("noise sigma must be non-negative, got {0}")]
    InvalidSigma(f64),
    #[error("need at least 2 bins, got {0}")]
    InvalidBins(usize),
    #[error("aoii_max must be positive and finite, got {0}")]
    InvalidAoiiMax(f64),
    #[error("probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("penalty must be a non-negative number, got {0}")]
    InvalidPenalty(f64),
    #[error("time {t} precedes the last update at {u}")]
    TimeBeforeUpdate { t: u64, u: u64 },
    #[error("unknown sensor category {0:?}")]
    UnknownCategory(String),
    #[error("trace has no readings for sensor {0}")]
    MissingTrace(usize),
    #[error("trace file {path}: {source}")]
    Trace { path: PathBuf, source: csv::Error },
}

pub type Result<T> = std::result::Result<T, SensingError>;

pub const BASELINE_CELSIUS: f64 = 20.0;

/// Signal of one sensor: `20 + A sin(2πt/P) + N(0, σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorTrace {
    pub amplitude: f64,
    pub period: f64,
    pub noise_sigma: f64,
    pub baseline: f64,
    pub category: String,
}

impl SensorTrace {
    pub fn new(amplitude: f64, period: f64, noise_sigma: f64, category: impl Into<String>) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(SensingError::InvalidPeriod(period));
        }
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(SensingError::InvalidSigma(noise_sigma));
        }
        Ok(Self {
            amplitude,
            period,
            noise_sigma,
            baseline: BASELINE_CELSIUS,
            category: category.into(),
        })
    }

    /// Noise-free value at step `t`.
    pub fn mean_at(&self, t: u64) -> f64 {
        self.baseline + self.amplitude * (2.0 * PI * t as f64 / self.period).sin()
    }
}

/// `(period, sigma)` of the three sensor categories: slow, medium, fast.
pub fn category_signal(category: &str) -> Result<(f64, f64)> {
    match category {
        "A" => Ok((500.0, 0.2)),
        "B" => Ok((200.0, 0.3)),
        "C" => Ok((50.0, 0.5)),
        other => Err(SensingError::UnknownCategory(other.to_string())),
    }
}

/// One reading; always consumes exactly one Gaussian draw.
pub fn simulate_temperature(trace: &SensorTrace, t: u64, rng: &mut RngStream) -> f64 {
    let noise = Normal::new(0.0, trace.noise_sigma).expect("sigma validated on construction");
    trace.mean_at(t) + noise.sample(rng)
}

fn check_smoothing(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(SensingError::InvalidSmoothing { name, value })
    }
}

/// Node-side level and rate estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeState {
    pub x1: f64,
    pub x2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl EdgeState {
    pub fn new(x1: f64, x2: f64, beta1: f64, beta2: f64) -> Result<Self> {
        check_smoothing("beta1", beta1)?;
        check_smoothing("beta2", beta2)?;
        Ok(Self { x1, x2, beta1, beta2 })
    }

    /// Level update first, then the rate update on the new level.
    pub fn dewma_update(&mut self, z: f64, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(SensingError::ZeroDt);
        }
        let prev = self.x1;
        self.x1 = self.beta1 * z + (1.0 - self.beta1) * (prev + self.x2 * dt);
        self.x2 = self.beta2 * (self.x1 - prev) / dt + (1.0 - self.beta2) * self.x2;
        Ok(())
    }
}

/// What the sink knows about one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkEstimate {
    pub x1: f64,
    pub x2: f64,
    /// Step of the last successful update.
    pub updated_at: u64,
}

impl SinkEstimate {
    pub fn new(x1: f64, x2: f64, updated_at: u64) -> Self {
        Self { x1, x2, updated_at }
    }

    pub fn aoi_of(&self, t: u64) -> Result<u64> {
        t.checked_sub(self.updated_at)
            .ok_or(SensingError::TimeBeforeUpdate { t, u: self.updated_at })
    }

    /// `(x1 + d x2, x2)` with `d = t - u`.
    pub fn extrapolate(&self, t: u64) -> Result<(f64, f64)> {
        let d = self.aoi_of(t)? as f64;
        Ok((self.x1 + d * self.x2, self.x2))
    }

    /// `d * |x2_hat|`.
    pub fn aoii_delta(&self, t: u64) -> Result<f64> {
        let d = self.aoi_of(t)? as f64;
        let (_, x2_hat) = self.extrapolate(t)?;
        Ok(d * x2_hat.abs())
    }

    pub fn receive(&mut self, edge: &EdgeState, t: u64) {
        self.x1 = edge.x1;
        self.x2 = edge.x2;
        self.updated_at = t;
    }
}

/// Uniform bins over `[0, aoii_max]`, clipped into the top bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationSpec {
    pub n_bins: usize,
    pub aoii_max: f64,
}

impl DiscretizationSpec {
    pub fn new(n_bins: usize, aoii_max: f64) -> Result<Self> {
        if n_bins < 2 {
            return Err(SensingError::InvalidBins(n_bins));
        }
        if !(aoii_max > 0.0) || !aoii_max.is_finite() {
            return Err(SensingError::InvalidAoiiMax(aoii_max));
        }
        Ok(Self { n_bins, aoii_max })
    }

    pub fn discretize(&self, value: f64) -> Result<StateIndex> {
        if !(value >= 0.0) {
            return Err(SensingError::InvalidPenalty(value));
        }
        let width = self.aoii_max / self.n_bins as f64;
        let bin = (value / width).floor();
        Ok(StateIndex((bin as usize).min(self.n_bins - 1)))
    }

    /// Lower edges of every bin, strictly increasing.
    pub fn edges(&self) -> Vec<f64> {
        let width = self.aoii_max / self.n_bins as f64;
        (0..self.n_bins).map(|k| k as f64 * width).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub success_prob: f64,
}

impl ChannelModel {
    pub fn new(success_prob: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&success_prob) {
            Ok(Self { success_prob })
        } else {
            Err(SensingError::InvalidProbability(success_prob))
        }
    }

    pub fn transmit(&self, rng: &mut RngStream) -> bool {
        rng.uniform() < self.success_prob
    }
}

fn default_amplitude() -> f64 {
    5.0
}
fn default_beta() -> f64 {
    0.5
}
fn default_bins() -> usize {
    5
}
fn default_aoii_max() -> f64 {
    10.0
}
fn default_success() -> f64 {
    0.9
}

/// Tunables of the sensing environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingParams {
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_beta")]
    pub beta1: f64,
    #[serde(default = "default_beta")]
    pub beta2: f64,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default = "default_aoii_max")]
    pub aoii_max: f64,
    #[serde(default = "default_success")]
    pub success_prob: f64,
    /// Per-category overrides of `success_prob`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub category_success: BTreeMap<String, f64>,
    /// CSV with columns `time,sensor_id,reading` replacing the synthetic signal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<PathBuf>,
}

impl Default for SensingParams {
    fn default() -> Self {
        Self {
            amplitude: default_amplitude(),
            beta1: default_beta(),
            beta2: default_beta(),
            n_bins: default_bins(),
            aoii_max: default_aoii_max(),
            success_prob: default_success(),
            category_success: BTreeMap::new(),
            trace_csv: None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    time: u64,
    sensor_id: usize,
    reading: f64,
}

/// Recorded readings, one sorted series per sensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceTable {
    series: BTreeMap<usize, Vec<(u64, f64)>>,
}

impl TraceTable {
    pub fn from_reader<R: std::io::Read>(reader: R) -> std::result::Result<Self, csv::Error> {
        let mut series: BTreeMap<usize, Vec<(u64, f64)>> = BTreeMap::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: TraceRow = row?;
            series.entry(row.sensor_id).or_default().push((row.time, row.reading));
        }
        for s in series.values_mut() {
            s.sort_by_key(|&(t, _)| t);
        }
        Ok(Self { series })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| SensingError::Trace {
            path: path.to_path_buf(),
            source: csv::Error::from(e),
        })?;
        Self::from_reader(file).map_err(|source| SensingError::Trace {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn has_sensor(&self, id: usize) -> bool {
        self.series.get(&id).is_some_and(|s| !s.is_empty())
    }

    /// Most recent reading at or before `t`; the first reading before the trace starts.
    pub fn reading(&self, id: usize, t: u64) -> Option<f64> {
        let s = self.series.get(&id)?;
        let k = s.partition_point(|&(time, _)| time <= t);
        s.get(k.saturating_sub(1)).map(|&(_, r)| r)
    }
}

enum Source {
    Synthetic(Vec<SensorTrace>),
    Recorded(TraceTable),
}

/// Stream ids within a run's seed.
pub const NOISE_STREAM: u64 = 1;
pub const CHANNEL_STREAM: u64 = 2;

/// The full node/sink pipeline for N sensors.
pub struct SensingEnv {
    source: Source,
    categories: Vec<String>,
    nodes: Vec<EdgeState>,
    sinks: Vec<SinkEstimate>,
    channels: Vec<ChannelModel>,
    disc: DiscretizationSpec,
    budget: usize,
    time: u64,
    states: Vec<StateIndex>,
    noise_rng: RngStream,
    channel_rng: RngStream,
    successes: Vec<u64>,
}

impl SensingEnv {
    /// Builds the environment at time 0 with every sink synced to its node.
    pub fn new(categories: Vec<String>, budget: usize, params: &SensingParams, seed: u64) -> Result<Self> {
        let source = match &params.trace_csv {
            Some(path) => {
                let table = TraceTable::from_path(path)?;
                if let Some(missing) = (0..categories.len()).find(|&i| !table.has_sensor(i)) {
                    return Err(SensingError::MissingTrace(missing));
                }
                Source::Recorded(table)
            }
            None => Source::Synthetic(
                categories
                    .iter()
                    .map(|c| {
                        let (period, sigma) = category_signal(c)?;
                        SensorTrace::new(params.amplitude, period, sigma, c.clone())
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        let channels = categories
            .iter()
            .map(|c| ChannelModel::new(params.category_success.get(c).copied().unwrap_or(params.success_prob)))
            .collect::<Result<Vec<_>>>()?;
        let disc = DiscretizationSpec::new(params.n_bins, params.aoii_max)?;
        let n = categories.len();
        let mut env = Self {
            source,
            categories,
            nodes: Vec::with_capacity(n),
            sinks: Vec::with_capacity(n),
            channels,
            disc,
            budget,
            time: 0,
            states: vec![StateIndex(0); n],
            noise_rng: RngStream::with_stream(seed, NOISE_STREAM),
            channel_rng: RngStream::with_stream(seed, CHANNEL_STREAM),
            successes: vec![0; n],
        };
        for i in 0..n {
            let z = env.read(i, 0);
            let node = EdgeState::new(z, 0.0, params.beta1, params.beta2)?;
            env.sinks.push(SinkEstimate::new(node.x1, node.x2, 0));
            env.nodes.push(node);
        }
        Ok(env)
    }

    fn read(&mut self, i: usize, t: u64) -> f64 {
        match &self.source {
            Source::Synthetic(traces) => simulate_temperature(&traces[i], t, &mut self.noise_rng),
            Source::Recorded(table) => table.reading(i, t).expect("presence checked on construction"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn states(&self) -> &[StateIndex] {
        &self.states
    }

    pub fn n_bins(&self) -> usize {
        self.disc.n_bins
    }

    pub fn nodes(&self) -> &[EdgeState] {
        &self.nodes
    }

    pub fn sinks(&self) -> &[SinkEstimate] {
        &self.sinks
    }

    /// Successful deliveries per sensor so far.
    pub fn successes(&self) -> &[u64] {
        &self.successes
    }

    /// Current continuous penalty of every sensor.
    pub fn aoii(&self) -> Vec<f64> {
        self.sinks
            .iter()
            .map(|s| s.aoii_delta(self.time).expect("sink never ahead of the clock"))
            .collect()
    }

    /// Current age of information of every sensor.
    pub fn aoi(&self) -> Vec<u64> {
        self.sinks.iter().map(|s| self.time - s.updated_at).collect()
    }

    /// Polls the selected sensors, then advances the clock by one step.
    ///
    /// The reward of each sensor is minus its penalty before the step. Every
    /// sensor draws one channel uniform and one noise sample per step whether
    /// or not it was polled.
    pub fn step_into(&mut self, actions: &[Action], rewards: &mut Vec<f64>) -> std::result::Result<(), ModelError> {
        if actions.len() != self.len() {
            return Err(ModelError::ActionCount {
                expected: self.len(),
                got: actions.len(),
            });
        }
        let count = count_active(actions);
        if count != self.budget {
            return Err(ModelError::BudgetViolation {
                count,
                budget: self.budget,
            });
        }
        rewards.clear();
        rewards.extend(self.aoii().into_iter().map(|p| -p));
        let t = self.time;
        for (i, a) in actions.iter().enumerate() {
            let delivered = self.channels[i].transmit(&mut self.channel_rng);
            if a.is_active() && delivered {
                self.sinks[i].receive(&self.nodes[i], t);
                self.successes[i] += 1;
            }
        }
        self.time += 1;
        for i in 0..self.len() {
            let z = self.read(i, self.time);
            self.nodes[i].dewma_update(z, 1.0).expect("unit step");
        }
        for (s, sink) in self.states.iter_mut().zip(&self.sinks) {
            let p = sink.aoii_delta(self.time).expect("sink never ahead of the clock");
            *s = self.disc.discretize(p).expect("penalty is non-negative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_signal() {
        let trace = SensorTrace::new(5.0, 4.0, 0.0, "A").unwrap();
        let mut rng = RngStream::new(0);
        assert!((simulate_temperature(&trace, 1, &mut rng) - 25.0).abs() < 1e-12);
        assert_eq!(simulate_temperature(&trace, 0, &mut rng), 20.0);
        assert_eq!(category_signal("A").unwrap(), (500.0, 0.2));
        assert!(SensorTrace::new(1.0, 0.0, 0.1, "A").is_err());
        assert!(SensorTrace::new(1.0, 10.0, -0.1, "A").is_err());
    }

    #[test]
    fn dewma_examples() {
        let mut e = EdgeState::new(10.0, 1.0, 0.5, 0.5).unwrap();
        e.dewma_update(14.0, 1.0).unwrap();
        assert!((e.x1 - 12.5).abs() < 1e-12);
        assert!((e.x2 - 1.75).abs() < 1e-12);

        let mut full = EdgeState::new(3.0, 0.7, 1.0, 0.3).unwrap();
        full.dewma_update(9.25, 1.0).unwrap();
        assert_eq!(full.x1, 9.25);

        let mut still = EdgeState::new(21.0, 0.0, 0.37, 0.81).unwrap();
        still.dewma_update(21.0, 1.0).unwrap();
        assert_eq!(still, EdgeState::new(21.0, 0.0, 0.37, 0.81).unwrap());

        assert!(matches!(e.dewma_update(1.0, 0.0), Err(SensingError::ZeroDt)));
        assert!(EdgeState::new(0.0, 0.0, 0.0, 0.5).is_err());
        assert!(EdgeState::new(0.0, 0.0, 0.5, 1.5).is_err());
    }

    #[test]
    fn sink_extrapolation_and_penalty() {
        let sink = SinkEstimate::new(20.0, 0.5, 6);
        assert_eq!(sink.extrapolate(6).unwrap(), (20.0, 0.5));
        assert_eq!(sink.extrapolate(10).unwrap(), (22.0, 0.5));
        assert_eq!(sink.aoii_delta(10).unwrap(), 2.0);
        assert_eq!(sink.aoii_delta(6).unwrap(), 0.0);
        assert_eq!(SinkEstimate::new(20.0, -0.5, 6).aoii_delta(10).unwrap(), 2.0);
        assert_eq!(SinkEstimate::new(7.0, 0.0, 0).extrapolate(1000).unwrap(), (7.0, 0.0));
        assert_eq!(sink.aoi_of(9).unwrap(), 3);
        assert!(sink.aoi_of(5).is_err());
    }

    #[test]
    fn discretization() {
        let d = DiscretizationSpec::new(5, 10.0).unwrap();
        assert_eq!(d.discretize(0.0).unwrap(), StateIndex(0));
        assert_eq!(d.discretize(4.9).unwrap(), StateIndex(2));
        assert_eq!(d.discretize(10.0).unwrap(), StateIndex(4));
        assert_eq!(d.discretize(1e9).unwrap(), StateIndex(4));
        assert!(d.discretize(-0.1).is_err());
        assert!(d.discretize(f64::NAN).is_err());
        assert_eq!(d.edges(), vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        assert!(DiscretizationSpec::new(1, 10.0).is_err());
        assert!(DiscretizationSpec::new(5, 0.0).is_err());
    }

    #[test]
    fn channel_rates() {
        let mut rng = RngStream::new(9);
        let always = ChannelModel::new(1.0).unwrap();
        let never = ChannelModel::new(0.0).unwrap();
        assert!((0..1000).all(|_| always.transmit(&mut rng)));
        assert!((0..1000).all(|_| !never.transmit(&mut rng)));
        let ch = ChannelModel::new(0.9).unwrap();
        let hits = (0..100_000).filter(|_| ch.transmit(&mut rng)).count();
        assert!((hits as f64 / 1e5 - 0.9).abs() < 0.005);
        assert!(ChannelModel::new(1.1).is_err());
    }

    #[test]
    fn linear_signal_is_extrapolated_exactly() {
        let (a, b) = (3.0, 0.25);
        let mut node = EdgeState::new(a, 0.0, 1.0, 1.0).unwrap();
        for t in 1..=2 {
            node.dewma_update(a + b * t as f64, 1.0).unwrap();
        }
        let mut sink = SinkEstimate::new(0.0, 0.0, 0);
        sink.receive(&node, 2);
        for t in 2..500 {
            let (x1, _) = sink.extrapolate(t).unwrap();
            assert!((x1 - (a + b * t as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn trace_table_holds_last_reading() {
        let csv = "time,sensor_id,reading\n0,0,20.0\n5,0,21.5\n0,1,19.0\n";
        let table = TraceTable::from_reader(csv.as_bytes()).unwrap();
        assert_eq!(table.reading(0, 0), Some(20.0));
        assert_eq!(table.reading(0, 4), Some(20.0));
        assert_eq!(table.reading(0, 9), Some(21.5));
        assert_eq!(table.reading(1, 3), Some(19.0));
        assert_eq!(table.reading(2, 3), None);
    }

    #[test]
    fn env_step_resets_on_delivery() {
        let cats: Vec<String> = ["A", "C"].iter().map(|s| s.to_string()).collect();
        let params = SensingParams {
            success_prob: 1.0,
            ..SensingParams::default()
        };
        let mut env = SensingEnv::new(cats, 1, &params, 4).unwrap();
        let mut rewards = Vec::new();
        for _ in 0..10 {
            env.step_into(&[Action::Passive, Action::Active], &mut rewards).unwrap();
        }
        assert_eq!(env.aoi(), vec![10, 1]);
        assert_eq!(env.successes(), &[0, 10]);
        assert!(env.step_into(&[Action::Active, Action::Active], &mut rewards).is_err());
        assert!(rewards.iter().all(|r| *r <= 0.0));
    }
}
