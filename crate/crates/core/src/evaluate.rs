//! Detection campaigns over a database of random leak events and the
//! indicators used to judge a detector and a meter layout.
//!
//! Every event of the random database is turned into an observation
//! (its AMSI variations and, optionally noised, meter pressure drops) and
//! passed to the detector. The outcome records where the true pipe landed
//! in the inspection sequence, from which the indicators follow:
//!
//! - *true prediction*: share of events whose pipe is ranked first;
//! - *average prediction*: mean rank of the true pipe;
//! - *length to inspect*: mean pipe length walked before reaching it;
//! - *percentage to inspect*: the same over the total network length.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{inject_errors, DetectError, DetectionConfig, Detector, Evidence, NoiseModel};
use crate::network::{MeterConfig, Network, NetworkError};
use crate::scenariodb::{DbError, ScenarioDatabase};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("event database does not match the scenario database: {0}")]
    Mismatch(String),
    #[error("average position {p} is outside [1, {n}]")]
    PositionOutOfRange { p: f64, n: usize },
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Simulated field conditions of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub detection: DetectionConfig,
    /// Meter error magnitude, m. Zero for error-free runs.
    pub meter_error: f64,
    #[serde(default)]
    pub noise_model: NoiseModel,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            detection: DetectionConfig::default(),
            meter_error: 0.0,
            noise_model: NoiseModel::Uniform,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// The true DMA came out of phase 1 on top.
    Detected,
    /// Phase 1 flagged districts, but the true one was not the first.
    WrongDma,
    Undetected,
    /// The detector returned an error.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventResult {
    /// Position of the event in the random database.
    pub index: usize,
    /// Original id of the leaking pipe.
    pub pipe: String,
    pub dma: String,
    pub orifice_diameter: f64,
    pub demand_multiplier: f64,
    /// L/s.
    pub leak_outflow: f64,
    pub outcome: Outcome,
    pub identified: Vec<String>,
    /// Position of the true pipe in the sequence, 1-based, when detected.
    pub rank: Option<usize>,
    /// Pipes in the true DMA.
    pub n_pipes: usize,
    /// Length walked up to and including the true pipe, m.
    pub inspected_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EventResult {
    pub fn is_detected(&self) -> bool {
        self.outcome == Outcome::Detected
    }
}

fn check_compatible(events: &ScenarioDatabase, scenarios: &ScenarioDatabase) -> Result<(), EvalError> {
    let (e, s) = (&events.header, &scenarios.header);
    if e.network_fingerprint != s.network_fingerprint {
        return Err(EvalError::Mismatch("network fingerprints differ".into()));
    }
    if e.meters != s.meters {
        return Err(EvalError::Mismatch("meter layouts differ".into()));
    }
    if e.dmas != s.dmas {
        return Err(EvalError::Mismatch("district lists differ".into()));
    }
    Ok(())
}

/// Runs the detector on every event. Events are independent and run in
/// parallel on the current rayon pool; the result order is the event order.
pub fn run_campaign(
    net: &Network,
    events: &ScenarioDatabase,
    detector: &Detector<'_>,
    cfg: &CampaignConfig,
) -> Result<Vec<EventResult>, EvalError> {
    check_compatible(events, detector.database())?;
    let mut dma_sizes = BTreeMap::new();
    for dma in &events.header.dmas {
        dma_sizes.insert(dma.clone(), net.dma_subnetwork(dma)?.pipe_count);
    }
    let results = events
        .scenarios
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let pipe = net.pipe(events.pipe_id(s));
            let dma = pipe.and_then(|p| p.dma.clone()).unwrap_or_default();
            let mut result = EventResult {
                index,
                pipe: pipe.map_or_else(|| events.pipe_id(s).to_string(), |p| p.original_id().to_string()),
                n_pipes: dma_sizes.get(&dma).copied().unwrap_or(0),
                dma,
                orifice_diameter: s.orifice_diameter,
                demand_multiplier: s.demand_multiplier,
                leak_outflow: s.leak_outflow,
                outcome: Outcome::Undetected,
                identified: Vec::new(),
                rank: None,
                inspected_length: None,
                error: None,
            };
            let evidence = Evidence {
                amsi_deltas: s.dma_amsi_deltas.clone(),
                meter_deltas: inject_errors(&s.meter_deltas, cfg.meter_error, cfg.noise_model, cfg.seed, index as u64),
            };
            match detector.detect(&evidence) {
                Err(e) => {
                    result.outcome = Outcome::Failed;
                    result.error = Some(e.to_string());
                }
                Ok(report) => {
                    result.identified = report.identified.iter().map(|d| d.dma.clone()).collect();
                    match report.identified.first() {
                        None => {}
                        Some(first) if first.dma != result.dma => result.outcome = Outcome::WrongDma,
                        Some(first) => {
                            let step = first.sequence.iter().position(|st| st.pipe == result.pipe);
                            if let Some(pos) = step {
                                result.outcome = Outcome::Detected;
                                result.rank = Some(pos + 1);
                                result.inspected_length = Some(first.sequence[pos].cumulative_length);
                            } else {
                                result.outcome = Outcome::Failed;
                                result.error = Some(format!("pipe {} missing from the sequence", result.pipe));
                            }
                        }
                    }
                }
            }
            result
        })
        .collect();
    Ok(results)
}

/// Leak outflow classes, L/s. Upper bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutflowClass {
    /// [0.19, 1]
    Small,
    /// (1, 2]
    MediumSmall,
    /// (2, 3]
    MediumHigh,
    /// above 3
    High,
    /// Every event, including those below the smallest class.
    Any,
}

impl OutflowClass {
    pub const ALL: [OutflowClass; 5] = [
        OutflowClass::Small,
        OutflowClass::MediumSmall,
        OutflowClass::MediumHigh,
        OutflowClass::High,
        OutflowClass::Any,
    ];

    pub fn contains(self, outflow: f64) -> bool {
        match self {
            OutflowClass::Small => (0.19..=1.0).contains(&outflow),
            OutflowClass::MediumSmall => outflow > 1.0 && outflow <= 2.0,
            OutflowClass::MediumHigh => outflow > 2.0 && outflow <= 3.0,
            OutflowClass::High => outflow > 3.0,
            OutflowClass::Any => true,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            OutflowClass::Small => "small",
            OutflowClass::MediumSmall => "medium-small",
            OutflowClass::MediumHigh => "medium-high",
            OutflowClass::High => "high",
            OutflowClass::Any => "any",
        }
    }
}

/// Indicators of the detected events of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indicators {
    /// %.
    pub true_prediction: f64,
    /// Mean rank.
    pub average_prediction: f64,
    /// m.
    pub length_to_inspect: f64,
    /// %.
    pub percentage_to_inspect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIndicators {
    pub class: OutflowClass,
    pub n_events: usize,
    pub n_detected: usize,
    /// `None` when no event of the class was detected.
    pub indicators: Option<Indicators>,
}

/// Indicators per outflow class over detected events. `network_length` is
/// the length the percentage refers to, normally
/// [`Network::districted_length`].
pub fn detection_indicators(results: &[EventResult], network_length: f64) -> Vec<ClassIndicators> {
    OutflowClass::ALL
        .iter()
        .map(|&class| {
            let members: Vec<&EventResult> = results.iter().filter(|r| class.contains(r.leak_outflow)).collect();
            let detected: Vec<&EventResult> = members.iter().copied().filter(|r| r.is_detected()).collect();
            let n = detected.len() as f64;
            let indicators = (!detected.is_empty()).then(|| {
                let first = detected.iter().filter(|r| r.rank == Some(1)).count() as f64;
                let rank: f64 = detected.iter().map(|r| r.rank.unwrap_or(0) as f64).sum();
                let length: f64 = detected.iter().map(|r| r.inspected_length.unwrap_or(0.0)).sum();
                Indicators {
                    true_prediction: 100.0 * first / n,
                    average_prediction: rank / n,
                    length_to_inspect: length / n,
                    percentage_to_inspect: 100.0 * length / n / network_length,
                }
            });
            ClassIndicators { class, n_events: members.len(), n_detected: detected.len(), indicators }
        })
        .collect()
}

/// How consistently each pipe is ranked first across its events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingIndicators {
    /// % of pipes ranked first in every one of their events.
    pub always_predicted: f64,
    /// % of pipes never ranked first.
    pub never_predicted: f64,
    /// 100 − never.
    pub predicted: f64,
    /// 100 − always.
    pub not_predicted: f64,
    pub n_meters: usize,
    /// Pipes with at least one detected event.
    pub n_pipes: usize,
    /// Leak candidates left out for lack of detected events.
    pub excluded_pipes: Vec<String>,
}

/// Groups detected events by pipe. Pipes of `net` that can host a leak
/// but have no detected event are listed as excluded.
pub fn sampling_indicators(results: &[EventResult], net: &Network, n_meters: usize) -> SamplingIndicators {
    let mut per_pipe: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in results.iter().filter(|r| r.is_detected()) {
        let e = per_pipe.entry(r.pipe.as_str()).or_default();
        e.0 += 1;
        if r.rank == Some(1) {
            e.1 += 1;
        }
    }
    let n = per_pipe.len();
    let always = per_pipe.values().filter(|(all, first)| first == all).count();
    let never = per_pipe.values().filter(|(_, first)| *first == 0).count();
    let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
    let (always, never) = (pct(always), pct(never));
    let excluded_pipes = net
        .leak_candidates()
        .into_iter()
        .map(|k| net.pipes[k].original_id())
        .filter(|id| !per_pipe.contains_key(id))
        .map(str::to_string)
        .collect();
    SamplingIndicators {
        always_predicted: always,
        never_predicted: never,
        predicted: 100.0 - never,
        not_predicted: 100.0 - always,
        n_meters,
        n_pipes: n,
        excluded_pipes,
    }
}

/// Maps an average sequence position `p` among `n` pipes onto [1, 2]:
/// 1 when the pipe is always first, 2 when always last. A DMA with a
/// single pipe scores 1.
pub fn prediction_index(p: f64, n: usize) -> Result<f64, EvalError> {
    if n == 0 || !(p >= 1.0 && p <= n as f64) {
        return Err(EvalError::PositionOutOfRange { p, n });
    }
    if n == 1 {
        return Ok(1.0);
    }
    Ok(1.0 + (p - 1.0) / (n as f64 - 1.0))
}

/// Expected percentage of the network walked when the pipes of the right
/// DMA are inspected in random order, with `n` equally sized DMAs.
pub fn random_baseline(n_dmas: usize) -> f64 {
    50.0 / n_dmas as f64
}

/// Monte Carlo counterpart of [`random_baseline`]: each event's DMA is
/// inspected in a random order and the walked length is averaged.
pub fn random_inspection(net: &Network, events: &ScenarioDatabase, seed: u64) -> Result<f64, EvalError> {
    let mut districts: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for dma in &events.header.dmas {
        let sub = net.dma_subnetwork(dma)?;
        let pipes = sub.pipes.iter().map(|&k| (net.pipes[k].id.as_str(), net.pipes[k].length)).collect();
        districts.insert(dma.as_str(), pipes);
    }
    let mut walked = 0.0;
    for (i, s) in events.scenarios.iter().enumerate() {
        let truth = events.pipe_id(s);
        let dma = net
            .pipe(truth)
            .and_then(|p| p.dma.as_deref())
            .ok_or_else(|| EvalError::Mismatch(format!("pipe {truth} is not in a DMA")))?;
        let mut order = districts[dma].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        order.shuffle(&mut rng);
        for (id, length) in order {
            walked += length;
            if id == truth {
                break;
            }
        }
    }
    Ok(100.0 * walked / events.len().max(1) as f64 / net.districted_length())
}

/// One row of the per-DMA table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmaEvalRow {
    pub dma: String,
    pub n_pipes: usize,
    /// m.
    pub total_length: f64,
    pub avg_pipe_length: f64,
    /// Detected events whose leak was in this DMA.
    pub n_events: usize,
    /// L/s; `None` (like the fields below) when the DMA has no detected event.
    pub avg_outflow: Option<f64>,
    pub average_position: Option<f64>,
    pub prediction_index: Option<f64>,
    /// m.
    pub avg_inspection_length: Option<f64>,
}

pub fn dma_table(results: &[EventResult], net: &Network) -> Result<Vec<DmaEvalRow>, EvalError> {
    let mut rows = Vec::with_capacity(net.dmas.len());
    for dma in &net.dmas {
        let sub = net.dma_subnetwork(&dma.id)?;
        let members: Vec<&EventResult> = results.iter().filter(|r| r.is_detected() && r.dma == dma.id).collect();
        let n = members.len() as f64;
        let mean = |f: &dyn Fn(&EventResult) -> f64| (!members.is_empty()).then(|| members.iter().map(|r| f(r)).sum::<f64>() / n);
        let average_position = mean(&|r| r.rank.unwrap_or(0) as f64);
        rows.push(DmaEvalRow {
            dma: dma.id.clone(),
            n_pipes: sub.pipe_count,
            total_length: sub.total_length,
            avg_pipe_length: if sub.pipe_count > 0 { sub.total_length / sub.pipe_count as f64 } else { 0.0 },
            n_events: members.len(),
            avg_outflow: mean(&|r| r.leak_outflow),
            prediction_index: average_position.map(|p| prediction_index(p, sub.pipe_count)).transpose()?,
            average_position,
            avg_inspection_length: mean(&|r| r.inspected_length.unwrap_or(0.0)),
        });
    }
    Ok(rows)
}

/// Everything reported about one campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub n_events: usize,
    pub detected: usize,
    pub wrong_dma: usize,
    pub undetected: usize,
    pub failed: usize,
    /// %.
    pub detection_rate: f64,
    /// Mean prediction index over the DMAs with detected events.
    pub mean_prediction_index: Option<f64>,
    /// %, for the number of DMAs of the network.
    pub random_baseline: f64,
    pub classes: Vec<ClassIndicators>,
    pub sampling: SamplingIndicators,
    pub dmas: Vec<DmaEvalRow>,
}

pub fn summarize(results: &[EventResult], net: &Network, n_meters: usize) -> Result<CampaignSummary, EvalError> {
    let count = |o: Outcome| results.iter().filter(|r| r.outcome == o).count();
    let dmas = dma_table(results, net)?;
    let indices: Vec<f64> = dmas.iter().filter_map(|d| d.prediction_index).collect();
    let detected = count(Outcome::Detected);
    Ok(CampaignSummary {
        n_events: results.len(),
        detected,
        wrong_dma: count(Outcome::WrongDma),
        undetected: count(Outcome::Undetected),
        failed: count(Outcome::Failed),
        detection_rate: if results.is_empty() { 0.0 } else { 100.0 * detected as f64 / results.len() as f64 },
        mean_prediction_index: (!indices.is_empty()).then(|| indices.iter().sum::<f64>() / indices.len() as f64),
        random_baseline: random_baseline(net.dmas.len()),
        classes: detection_indicators(results, net.districted_length()),
        sampling: sampling_indicators(results, net, n_meters),
        dmas,
    })
}

/// Sampling indicators of a campaign per meter layout. Both databases are
/// narrowed to each layout's meters, which gives the same deltas as
/// rebuilding them with that layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterComparisonRow {
    pub config: String,
    pub sampling: SamplingIndicators,
    pub detection_rate: f64,
}

pub fn compare_meter_configs(
    net: &Network,
    scenarios: &ScenarioDatabase,
    events: &ScenarioDatabase,
    configs: &[MeterConfig],
    cfg: &CampaignConfig,
) -> Result<Vec<MeterComparisonRow>, EvalError> {
    configs
        .iter()
        .map(|meters| {
            let db = scenarios.project_meters(meters)?;
            let ev = events.project_meters(meters)?;
            let detector = Detector::new(net, &db, cfg.detection)?;
            let results = run_campaign(net, &ev, &detector, cfg)?;
            let summary = summarize(&results, net, meters.len())?;
            Ok(MeterComparisonRow {
                config: meters.name.clone(),
                sampling: summary.sampling,
                detection_rate: summary.detection_rate,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per event.
pub fn events_csv(results: &[EventResult]) -> String {
    let mut out = String::from(
        "event,pipe,dma,orifice_diameter_m,demand_multiplier,leak_outflow_lps,outcome,identified,rank,n_pipes,inspected_length_m\n",
    );
    for r in results {
        let outcome = match r.outcome {
            Outcome::Detected => "detected",
            Outcome::WrongDma => "wrong_dma",
            Outcome::Undetected => "undetected",
            Outcome::Failed => "failed",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.pipe,
            r.dma,
            r.orifice_diameter,
            r.demand_multiplier,
            r.leak_outflow,
            outcome,
            r.identified.join(";"),
            r.rank.map(|x| x.to_string()).unwrap_or_default(),
            r.n_pipes,
            opt(r.inspected_length)
        );
    }
    out
}

/// Reads back a table written by [`events_csv`]; leading `#` comment
/// lines are skipped.
pub fn parse_events_csv(text: &str) -> Result<Vec<EventResult>, String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    match lines.next() {
        Some(h) if h.starts_with("event,pipe,dma,") => {}
        _ => return Err("missing event table header".into()),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(format!("row {}: expected 11 fields, found {}", n + 1, f.len()));
            }
            let bad = |what: &str| format!("row {}: bad {what}", n + 1);
            let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
            let outcome = match f[6] {
                "detected" => Outcome::Detected,
                "wrong_dma" => Outcome::WrongDma,
                "undetected" => Outcome::Undetected,
                "failed" => Outcome::Failed,
                _ => return Err(bad("outcome")),
            };
            Ok(EventResult {
                index: f[0].parse().map_err(|_| bad("event"))?,
                pipe: f[1].to_string(),
                dma: f[2].to_string(),
                orifice_diameter: num(f[3], "orifice diameter")?,
                demand_multiplier: num(f[4], "demand multiplier")?,
                leak_outflow: num(f[5], "outflow")?,
                outcome,
                identified: f[7].split(';').filter(|s| !s.is_empty()).map(str::to_string).collect(),
                rank: if f[8].is_empty() { None } else { Some(f[8].parse().map_err(|_| bad("rank"))?) },
                n_pipes: f[9].parse().map_err(|_| bad("n_pipes"))?,
                inspected_length: if f[10].is_empty() { None } else { Some(num(f[10], "inspected length")?) },
                error: None,
            })
        })
        .collect()
}

/// Class × indicator table, ready for a bar chart.
pub fn classes_csv(classes: &[ClassIndicators]) -> String {
    let mut out = String::from(
        "class,n_events,n_detected,true_prediction_pct,average_prediction,length_to_inspect_m,percentage_to_inspect_pct\n",
    );
    for c in classes {
        let i = c.indicators.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.class.label(),
            c.n_events,
            c.n_detected,
            opt(i.map(|i| i.true_prediction)),
            opt(i.map(|i| i.average_prediction)),
            opt(i.map(|i| i.length_to_inspect)),
            opt(i.map(|i| i.percentage_to_inspect))
        );
    }
    out
}

pub fn dma_csv(rows: &[DmaEvalRow]) -> String {
    let mut out = String::from(
        "dma,n_pipes,total_length_m,avg_pipe_length_m,n_events,avg_outflow_lps,average_position,prediction_index,avg_inspection_length_m\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.dma,
            r.n_pipes,
            r.total_length,
            r.avg_pipe_length,
            r.n_events,
            opt(r.avg_outflow),
            opt(r.average_position),
            opt(r.prediction_index),
            opt(r.avg_inspection_length)
        );
    }
    out
}

pub fn comparison_csv(rows: &[MeterComparisonRow]) -> String {
    let mut out = String::from(
        "config,n_meters,always_predicted_pct,never_predicted_pct,predicted_pct,not_predicted_pct,detection_rate_pct\n",
    );
    for r in rows {
        let s = &r.sampling;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.config, s.n_meters, s.always_predicted, s.never_predicted, s.predicted, s.not_predicted, r.detection_rate
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_bounds() {
        assert!(OutflowClass::Small.contains(1.0));
        assert!(OutflowClass::Small.contains(0.19));
        assert!(!OutflowClass::Small.contains(0.18));
        assert!(OutflowClass::MediumSmall.contains(2.0));
        assert!(!OutflowClass::MediumSmall.contains(1.0));
        assert!(OutflowClass::MediumHigh.contains(3.0));
        assert!(OutflowClass::High.contains(3.5));
        assert!(!OutflowClass::High.contains(3.0));
        assert!(OutflowClass::Any.contains(0.01));
    }

    #[test]
    fn prediction_index_values() {
        assert_eq!(prediction_index(1.0, 151).unwrap(), 1.0);
        assert_eq!(prediction_index(151.0, 151).unwrap(), 2.0);
        assert_eq!(prediction_index(76.0, 151).unwrap(), 1.5);
        assert!((prediction_index(1.75, 151).unwrap() - 1.005).abs() < 1e-15);
        assert_eq!(prediction_index(1.0, 1).unwrap(), 1.0);
        assert!(prediction_index(0.5, 10).is_err());
        assert!(prediction_index(11.0, 10).is_err());
    }

    #[test]
    fn baseline_values() {
        assert_eq!(random_baseline(1), 50.0);
        assert_eq!(random_baseline(5), 10.0);
        assert!((random_baseline(9) - 5.5556).abs() < 1e-4);
    }
}
