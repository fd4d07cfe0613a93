//! Seeded simulator of gNB MAC-layer telemetry for a single cell.
//!
//! A [`CellSimulator`] steps one measurement interval at a time. Each UE's
//! PRB demand follows its traffic profile (bursty on/off with linear ramps,
//! or constant background) plus multiplicative Gaussian jitter; the
//! [`scheduler`] then splits the cell's PRBs across UEs, honouring any active
//! PRB reservation. [`generate_trace`] runs the simulator open-loop and
//! collects a [`TelemetryTrace`].
//!
//! All randomness derives from the single `CellConfig::seed`: every UE owns a
//! ChaCha8 stream selected by its `ue_id`, and draws happen in a fixed order
//! per interval (demand, SNR, BLER), whether or not the UE is active.

mod io;
pub mod scheduler;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use io::{read_trace, sidecar_path, write_trace};
pub use scheduler::{proportional_share, schedule, Reservation};

/// Radio position class of a UE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UeClass {
    Center,
    Edge,
}

/// Which UEs a PRB reservation protects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetClass {
    Edge,
    Center,
    All,
}

impl TargetClass {
    pub fn matches(self, class: UeClass) -> bool {
        match self {
            TargetClass::All => true,
            TargetClass::Edge => class == UeClass::Edge,
            TargetClass::Center => class == UeClass::Center,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TargetClass::Edge => "edge",
            TargetClass::Center => "center",
            TargetClass::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficPattern {
    BurstyOnOff,
    ConstantBackground,
}

/// Traffic and radio profile of one UE.
///
/// Bursty UEs cycle through an idle period followed by a burst; the first
/// cycle starts idle. Onsets and offsets ramp linearly over
/// `ramp_intervals` intervals. Constant-background UEs ignore the on/off
/// fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeProfile {
    pub ue_id: u16,
    pub class: UeClass,
    pub traffic: TrafficPattern,
    pub peak_rate_mbps: f64,
    pub on_duration_s: f64,
    pub off_duration_s: f64,
    pub ramp_intervals: u32,
}

/// Phase of a bursty UE at a given interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BurstPhase {
    Idle,
    RampUp,
    On,
    RampDown,
}

impl UeProfile {
    pub fn bursty(ue_id: u16, class: UeClass, peak_rate_mbps: f64, on_s: f64, off_s: f64, ramp: u32) -> Self {
        UeProfile {
            ue_id,
            class,
            traffic: TrafficPattern::BurstyOnOff,
            peak_rate_mbps,
            on_duration_s: on_s,
            off_duration_s: off_s,
            ramp_intervals: ramp,
        }
    }

    pub fn background(ue_id: u16, class: UeClass, rate_mbps: f64) -> Self {
        UeProfile {
            ue_id,
            class,
            traffic: TrafficPattern::ConstantBackground,
            peak_rate_mbps: rate_mbps,
            on_duration_s: 1.0,
            off_duration_s: 1.0,
            ramp_intervals: 0,
        }
    }

    fn validate(&self) -> Result<(), TelemetryError> {
        let bad = |msg: String| Err(TelemetryError::Config(format!("ue {}: {msg}", self.ue_id)));
        if !self.peak_rate_mbps.is_finite() || self.peak_rate_mbps < 0.0 {
            return bad(format!("peak_rate_mbps must be finite and >= 0, got {}", self.peak_rate_mbps));
        }
        if self.traffic == TrafficPattern::BurstyOnOff {
            for (name, v) in [("on_duration_s", self.on_duration_s), ("off_duration_s", self.off_duration_s)] {
                if !v.is_finite() || v <= 0.0 {
                    return bad(format!("{name} must be > 0 for bursty traffic, got {v}"));
                }
            }
        }
        Ok(())
    }

    /// Phase and activity factor in [0, 1] at interval `t`.
    pub fn phase(&self, t: u32, interval_s: f64) -> (BurstPhase, f64) {
        if self.traffic == TrafficPattern::ConstantBackground {
            return (BurstPhase::On, 1.0);
        }
        let off_n = ((self.off_duration_s / interval_s).round() as u64).max(1);
        let on_n = ((self.on_duration_s / interval_s).round() as u64).max(1);
        let period = off_n + on_n;
        let t = u64::from(t);
        let cycle = t / period;
        let pos = t % period;
        let ramp = u64::from(self.ramp_intervals);
        let steps = (ramp + 1) as f64;
        if pos < off_n {
            if cycle > 0 && pos < ramp {
                (BurstPhase::RampDown, 1.0 - (pos + 1) as f64 / steps)
            } else {
                (BurstPhase::Idle, 0.0)
            }
        } else {
            let q = pos - off_n;
            if q < ramp {
                (BurstPhase::RampUp, (q + 1) as f64 / steps)
            } else {
                (BurstPhase::On, 1.0)
            }
        }
    }

    /// Mean SNR and BLER for this UE's class. The simulated channel is
    /// deterministic AWGN, so both stay close to these values.
    fn channel_means(&self) -> (f64, f64) {
        match self.class {
            UeClass::Center => (22.0, 0.02),
            UeClass::Edge => (6.0, 0.09),
        }
    }
}

/// Single-cell configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub total_prbs: u32,
    pub interval_ms: u32,
    pub duration_s: f64,
    /// Bits one PRB carries in one interval (fixed spectral-efficiency proxy).
    pub bits_per_prb_per_interval: f64,
    /// Standard deviation of the multiplicative demand jitter.
    pub demand_jitter_std: f64,
    pub seed: u64,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            total_prbs: 106,
            interval_ms: 100,
            duration_s: 1200.0,
            bits_per_prb_per_interval: 55_000.0,
            demand_jitter_std: 0.2,
            seed: 42,
        }
    }
}

impl CellConfig {
    pub fn interval_s(&self) -> f64 {
        f64::from(self.interval_ms) / 1000.0
    }

    pub fn validate(&self) -> Result<(), TelemetryError> {
        let cfg = |m: String| Err(TelemetryError::Config(m));
        if self.total_prbs == 0 {
            return cfg("total_prbs must be > 0".into());
        }
        if self.interval_ms == 0 {
            return cfg("interval_ms must be > 0".into());
        }
        if !self.duration_s.is_finite() || self.duration_s <= 0.0 {
            return cfg(format!("duration_s must be > 0, got {}", self.duration_s));
        }
        let count = self.duration_s * 1000.0 / f64::from(self.interval_ms);
        if (count - count.round()).abs() > 1e-6 || count.round() < 1.0 {
            return cfg(format!(
                "duration_s {} is not a whole number of {} ms intervals",
                self.duration_s, self.interval_ms
            ));
        }
        if !self.bits_per_prb_per_interval.is_finite() || self.bits_per_prb_per_interval <= 0.0 {
            return cfg("bits_per_prb_per_interval must be > 0".into());
        }
        if !(0.0..0.5).contains(&self.demand_jitter_std) {
            return cfg(format!("demand_jitter_std must be in [0, 0.5), got {}", self.demand_jitter_std));
        }
        Ok(())
    }

    /// Number of measurement intervals. Only meaningful after `validate`.
    pub fn interval_count(&self) -> u32 {
        (self.duration_s * 1000.0 / f64::from(self.interval_ms)).round() as u32
    }
}

/// The reference scenario: two center UEs bursting at 20 Mbps in six
/// idle/burst cycles over 20 minutes, one edge UE with a steady session.
pub fn default_scenario(seed: u64) -> (CellConfig, Vec<UeProfile>) {
    let cell = CellConfig { seed, ..CellConfig::default() };
    let ues = vec![
        UeProfile::bursty(1, UeClass::Center, 20.0, 100.0, 100.0, 5),
        UeProfile::bursty(2, UeClass::Center, 20.0, 100.0, 100.0, 5),
        UeProfile::background(3, UeClass::Edge, 11.0),
    ];
    (cell, ues)
}

/// One per-UE, per-interval MAC-layer measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpmRecord {
    pub t: u32,
    pub ue_id: u16,
    pub prb_allocated: u32,
    pub prb_demanded: u32,
    pub snr_db: f64,
    pub bler: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryTrace {
    pub cell: CellConfig,
    pub ues: Vec<UeProfile>,
    /// Sorted by `(t, ue_id)`, one record per UE per interval.
    pub records: Vec<KpmRecord>,
    /// Aggregate PRB utilization per interval.
    pub util: Vec<f64>,
}

impl TelemetryTrace {
    pub fn interval_count(&self) -> usize {
        self.util.len()
    }

    /// Records of interval `t`, in `ue_id` order.
    pub fn interval(&self, t: usize) -> &[KpmRecord] {
        let n = self.ues.len();
        &self.records[t * n..(t + 1) * n]
    }

    /// Assemble a trace from ordered records, recomputing utilization.
    pub(crate) fn from_records(cell: CellConfig, ues: Vec<UeProfile>, records: Vec<KpmRecord>) -> Self {
        let n = ues.len().max(1);
        let total = f64::from(cell.total_prbs);
        let util = records
            .chunks(n)
            .map(|chunk| f64::from(chunk.iter().map(|r| r.prb_allocated).sum::<u32>()) / total)
            .collect();
        TelemetryTrace { cell, ues, records, util }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TelemetryError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("interval {t} out of range (trace has {len} intervals)")]
    OutOfRange { t: usize, len: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{0}: no records")]
    Empty(String),
}

/// Outcome of one simulated interval.
#[derive(Debug, Clone)]
pub struct IntervalOutcome {
    pub t: u32,
    pub records: Vec<KpmRecord>,
    pub util: f64,
}

/// Per-UE demand and channel draw for one interval, before scheduling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeDemand {
    pub prb_demanded: u32,
    pub snr_db: f64,
    pub bler: f64,
}

/// Source of per-interval demand: live simulation or a stored trace.
pub trait DemandSource {
    fn cell(&self) -> &CellConfig;
    fn ues(&self) -> &[UeProfile];
    fn interval_count(&self) -> u32;
    /// Demand of every UE (in `ues()` order) at interval `t`. Must be called
    /// with consecutive `t` starting at 0.
    fn demands(&mut self, t: u32) -> Vec<UeDemand>;
}

/// Live, seeded demand generator.
pub struct CellSimulator {
    cell: CellConfig,
    ues: Vec<UeProfile>,
    rngs: Vec<ChaCha8Rng>,
}

impl CellSimulator {
    pub fn new(cell: CellConfig, mut ues: Vec<UeProfile>) -> Result<Self, TelemetryError> {
        cell.validate()?;
        if ues.is_empty() {
            return Err(TelemetryError::Config("at least one UE is required".into()));
        }
        for ue in &ues {
            ue.validate()?;
        }
        ues.sort_by_key(|u| u.ue_id);
        if ues.windows(2).any(|w| w[0].ue_id == w[1].ue_id) {
            return Err(TelemetryError::Config("duplicate ue_id".into()));
        }
        let rngs = ues
            .iter()
            .map(|ue| {
                let mut rng = ChaCha8Rng::seed_from_u64(cell.seed);
                rng.set_stream(u64::from(ue.ue_id));
                rng
            })
            .collect();
        Ok(CellSimulator { cell, ues, rngs })
    }
}

impl DemandSource for CellSimulator {
    fn cell(&self) -> &CellConfig {
        &self.cell
    }

    fn ues(&self) -> &[UeProfile] {
        &self.ues
    }

    fn interval_count(&self) -> u32 {
        self.cell.interval_count()
    }

    fn demands(&mut self, t: u32) -> Vec<UeDemand> {
        let interval_s = self.cell.interval_s();
        let jitter = self.cell.demand_jitter_std;
        let bits = self.cell.bits_per_prb_per_interval;
        self.ues
            .iter()
            .zip(self.rngs.iter_mut())
            .map(|(ue, rng)| {
                let z_demand: f64 = StandardNormal.sample(rng);
                let z_snr: f64 = StandardNormal.sample(rng);
                let z_bler: f64 = StandardNormal.sample(rng);
                let (_, activity) = ue.phase(t, interval_s);
                let base = ue.peak_rate_mbps * 1e6 * interval_s / bits;
                let demand = (base * activity * (1.0 + jitter * z_demand)).max(0.0).round();
                let (snr_mean, bler_mean) = ue.channel_means();
                UeDemand {
                    prb_demanded: demand as u32,
                    snr_db: snr_mean + 0.1 * z_snr,
                    bler: (bler_mean + 0.002 * z_bler).clamp(0.0, 1.0),
                }
            })
            .collect()
    }
}

/// Replays the demands stored in a trace. Allocations are recomputed by the
/// scheduler, so a replay under a different reservation policy is valid.
pub struct TraceReplay<'a> {
    trace: &'a TelemetryTrace,
}

impl<'a> TraceReplay<'a> {
    pub fn new(trace: &'a TelemetryTrace) -> Self {
        TraceReplay { trace }
    }
}

impl DemandSource for TraceReplay<'_> {
    fn cell(&self) -> &CellConfig {
        &self.trace.cell
    }

    fn ues(&self) -> &[UeProfile] {
        &self.trace.ues
    }

    fn interval_count(&self) -> u32 {
        self.trace.interval_count() as u32
    }

    fn demands(&mut self, t: u32) -> Vec<UeDemand> {
        self.trace
            .interval(t as usize)
            .iter()
            .map(|r| UeDemand { prb_demanded: r.prb_demanded, snr_db: r.snr_db, bler: r.bler })
            .collect()
    }
}

/// Schedule one interval's demands and emit its KPM records.
pub fn step_interval(
    source: &mut dyn DemandSource,
    t: u32,
    reservation: Option<&Reservation>,
) -> IntervalOutcome {
    let demands = source.demands(t);
    let ues = source.ues();
    let total = source.cell().total_prbs;
    let classes: Vec<UeClass> = ues.iter().map(|u| u.class).collect();
    let demanded: Vec<u32> = demands.iter().map(|d| d.prb_demanded).collect();
    let alloc = schedule(total, &classes, &demanded, reservation);
    let records: Vec<KpmRecord> = ues
        .iter()
        .zip(demands.iter().zip(alloc.iter()))
        .map(|(ue, (d, &a))| KpmRecord {
            t,
            ue_id: ue.ue_id,
            prb_allocated: a,
            prb_demanded: d.prb_demanded,
            snr_db: d.snr_db,
            bler: d.bler,
        })
        .collect();
    let util = f64::from(alloc.iter().sum::<u32>()) / f64::from(total);
    IntervalOutcome { t, records, util }
}

/// Run the simulator open-loop (no reservation) for the configured duration.
pub fn generate_trace(cell: &CellConfig, ues: &[UeProfile]) -> Result<TelemetryTrace, TelemetryError> {
    let mut sim = CellSimulator::new(cell.clone(), ues.to_vec())?;
    let count = sim.interval_count();
    let mut records = Vec::with_capacity(count as usize * ues.len());
    for t in 0..count {
        records.extend(step_interval(&mut sim, t, None).records);
    }
    let ues = sim.ues().to_vec();
    Ok(TelemetryTrace::from_records(cell.clone(), ues, records))
}

/// Aggregate cell PRB utilization at interval `t`, summed from the records.
pub fn aggregate_utilization(trace: &TelemetryTrace, t: usize) -> Result<f64, TelemetryError> {
    if t >= trace.interval_count() {
        return Err(TelemetryError::OutOfRange { t, len: trace.interval_count() });
    }
    let used: u32 = trace.interval(t).iter().map(|r| r.prb_allocated).sum();
    Ok(f64::from(used) / f64::from(trace.cell.total_prbs))
}
