//! Two-phase leak detection.
//!
//! Phase 1 flags the DMAs whose AMSI rose by more than a threshold over
//! the leak-free baseline. Phase 2 ranks the pipes of each flagged DMA by
//! the Pearson correlation between the observed meter pressure drops and
//! the simulated drops of each pipe's leak scenarios; the ranking is the
//! sequence in which a field crew should inspect the pipes.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenariodb::ScenarioDatabase;
use crate::network::Network;

/// Correlations closer than this to the leader count as ties: the
/// rounding band of a Pearson coefficient over a few hundred meters.
/// Wider bands start lumping genuinely distinct but nearly collinear
/// signatures (pipes on an unmetered branch) together with exact ties.
pub const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least 2 values, got {0}")]
    TooShort(usize),
    #[error("no baseline for DMA `{0}`")]
    MissingBaseline(String),
    #[error("DMA `{0}` is unknown to the scenario database")]
    UnknownDma(String),
    #[error("no scenarios for the pipes of DMA `{0}`")]
    EmptyDma(String),
    #[error("observation lacks meter `{0}`")]
    MissingMeter(String),
    #[error("invalid detection setting: {0}")]
    Config(String),
}

/// How a pipe's scenario correlations are combined into its score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Best-matching scenario.
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    /// Minimum AMSI rise that flags a DMA.
    pub amsi_threshold: f64,
    /// Meters whose pressure drop does not exceed this (m) are ignored.
    pub meter_error_bound: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            amsi_threshold: 0.1,
            meter_error_bound: 0.5,
            aggregation: Aggregation::Max,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.amsi_threshold >= 0.0) {
            return Err(DetectError::Config("AMSI threshold must be >= 0".into()));
        }
        if !(self.meter_error_bound >= 0.0) {
            return Err(DetectError::Config("meter error bound must be >= 0".into()));
        }
        Ok(())
    }
}

/// Sample Pearson correlation; zero-variance inputs give `r = 0` flagged
/// as degenerate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub degenerate: bool,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, DetectError> {
    if x.len() != y.len() {
        return Err(DetectError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(DetectError::TooShort(x.len()));
    }
    Ok(pearson_unchecked(x.iter().copied().zip(y.iter().copied())))
}

fn pearson_unchecked(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> Correlation {
    let n = pairs.clone().count() as f64;
    let (sx, sy) = pairs.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxy, mut sxx, mut syy, mut qx, mut qy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
        qx += x * x;
        qy += y * y;
    }
    // relative test so that round-off on a constant vector is not read
    // as variance
    if sxx <= 1e-24 * qx || syy <= 1e-24 * qy || sxx == 0.0 || syy == 0.0 {
        return Correlation { r: 0.0, degenerate: true };
    }
    Correlation {
        r: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// DMAs whose AMSI rose by more than the threshold, largest rise first
/// (ties by id). An empty list means nothing was detected.
pub fn identify_dmas(dmas: &[String], amsi_deltas: &[f64], threshold: f64) -> Vec<(String, f64)> {
    let mut hits: Vec<(String, f64)> = dmas
        .iter()
        .zip(amsi_deltas)
        .filter(|(_, d)| **d > threshold)
        .map(|(id, d)| (id.clone(), *d))
        .collect();
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    hits
}

/// Meters whose |delta| exceeds the error bound; all meters when fewer
/// than two survive, since a correlation needs two points.
pub fn filter_meters(deltas: &[f64], error_bound: f64) -> Vec<usize> {
    let kept: Vec<usize> = (0..deltas.len()).filter(|&i| deltas[i].abs() > error_bound).collect();
    if kept.len() < 2 {
        (0..deltas.len()).collect()
    } else {
        kept
    }
}

/// Noise distribution of simulated pressure measurement errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Uniform on `[-magnitude, magnitude]`.
    #[default]
    Uniform,
    /// Zero-mean normal with standard deviation `magnitude`.
    Gaussian,
}

/// Adds independent measurement errors to each delta. `stream` selects an
/// independent random stream for the same seed (e.g. the event index).
pub fn inject_errors(deltas: &[f64], magnitude: f64, model: NoiseModel, seed: u64, stream: u64) -> Vec<f64> {
    if magnitude == 0.0 {
        return deltas.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    match model {
        NoiseModel::Uniform => deltas.iter().map(|d| d + rng.gen_range(-magnitude..=magnitude)).collect(),
        NoiseModel::Gaussian => {
            let normal = Normal::new(0.0, magnitude).expect("finite magnitude");
            deltas.iter().map(|d| d + normal.sample(&mut rng)).collect()
        }
    }
}

/// Leak-free reference of one DMA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmaBaseline {
    pub dma: String,
    pub p_ref: f64,
    pub alpha_ref: f64,
    pub leak_density: f64,
    pub amsi: f64,
}

/// Field data of one DMA: metered water-loss density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmaObservation {
    pub dma: String,
    /// m³/day/km.
    pub leak_density: f64,
    /// Reference pressure, m; the baseline's when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_ref: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterReading {
    pub node: String,
    /// Measured pressure, m.
    pub pressure: f64,
    /// Leak-free pressure at the same demand level, m.
    pub baseline: f64,
}

/// An observed anomaly as read from the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Demand level the baselines refer to.
    #[serde(default = "one")]
    pub demand_multiplier: f64,
    pub dmas: Vec<DmaObservation>,
    pub meters: Vec<MeterReading>,
}

fn one() -> f64 {
    1.0
}

/// Detector input in database layout: AMSI variation per database DMA and
/// pressure drop per database meter.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub amsi_deltas: Vec<f64>,
    pub meter_deltas: Vec<f64>,
}

impl Observation {
    /// Aligns the observation with the database layout. DMAs without an
    /// observation are taken as unchanged.
    pub fn evidence(&self, baselines: &[DmaBaseline], db: &ScenarioDatabase) -> Result<Evidence, DetectError> {
        let mut amsi_deltas = Vec::with_capacity(db.header.dmas.len());
        for dma in &db.header.dmas {
            let base = baselines
                .iter()
                .find(|b| &b.dma == dma)
                .ok_or_else(|| DetectError::MissingBaseline(dma.clone()))?;
            let delta = match self.dmas.iter().find(|o| &o.dma == dma) {
                Some(o) => {
                    let p_ref = o.p_ref.unwrap_or(base.p_ref);
                    o.leak_density / p_ref.powf(base.alpha_ref) - base.amsi
                }
                None => 0.0,
            };
            amsi_deltas.push(delta);
        }
        if let Some(o) = self.dmas.iter().find(|o| !db.header.dmas.contains(&o.dma)) {
            return Err(DetectError::UnknownDma(o.dma.clone()));
        }
        let meter_deltas = db
            .header
            .meters
            .iter()
            .map(|node| {
                self.meters
                    .iter()
                    .find(|m| &m.node == node)
                    .map(|m| m.baseline - m.pressure)
                    .ok_or_else(|| DetectError::MissingMeter(node.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Evidence { amsi_deltas, meter_deltas })
    }
}

/// One entry of an inspection sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionStep {
    pub pipe: String,
    pub score: f64,
    /// No usable correlation (constant vectors or no scenarios).
    pub degenerate: bool,
    pub length: f64,
    pub cumulative_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedDma {
    pub dma: String,
    pub amsi_delta: f64,
    pub sequence: Vec<InspectionStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub identified: Vec<IdentifiedDma>,
    /// Meters kept after error filtering.
    pub meters_used: Vec<String>,
}

impl DetectionReport {
    pub fn is_empty(&self) -> bool {
        self.identified.is_empty()
    }

    /// One row per inspection step of every identified DMA.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dma,amsi_delta,rank,pipe,score,degenerate,length_m,cumulative_length_m\n");
        for d in &self.identified {
            for (i, s) in d.sequence.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    d.dma,
                    d.amsi_delta,
                    i + 1,
                    s.pipe,
                    s.score,
                    s.degenerate,
                    s.length,
                    s.cumulative_length
                );
            }
        }
        out
    }
}

/// A scenario database indexed for repeated detections on one network.
#[derive(Debug)]
pub struct Detector<'a> {
    db: &'a ScenarioDatabase,
    /// Per database DMA: its pipes (network order) with their scenario indices.
    districts: Vec<Vec<DistrictPipe>>,
    config: DetectionConfig,
}

#[derive(Debug, Clone)]
struct DistrictPipe {
    id: String,
    length: f64,
    scenarios: Vec<usize>,
}

impl<'a> Detector<'a> {
    pub fn new(net: &Network, db: &'a ScenarioDatabase, config: DetectionConfig) -> Result<Self, DetectError> {
        config.validate()?;
        let mut by_pipe: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, s) in db.scenarios.iter().enumerate() {
            by_pipe.entry(db.pipe_id(s)).or_default().push(i);
        }
        let mut districts = Vec::with_capacity(db.header.dmas.len());
        for dma in &db.header.dmas {
            let sub = net.dma_subnetwork(dma).map_err(|_| DetectError::UnknownDma(dma.clone()))?;
            districts.push(
                sub.pipes
                    .iter()
                    .map(|&k| {
                        let p = &net.pipes[k];
                        DistrictPipe {
                            id: p.original_id().to_string(),
                            length: p.length,
                            scenarios: by_pipe.get(p.id.as_str()).cloned().unwrap_or_default(),
                        }
                    })
                    .collect(),
            );
        }
        Ok(Self { db, districts, config })
    }

    pub fn config(&self) -> &DetectionConfig {
        &self.config
    }

    pub fn database(&self) -> &ScenarioDatabase {
        self.db
    }

    fn dma_slot(&self, dma: &str) -> Result<usize, DetectError> {
        self.db
            .header
            .dmas
            .iter()
            .position(|d| d == dma)
            .ok_or_else(|| DetectError::UnknownDma(dma.to_string()))
    }

    /// Inspection sequence of one DMA for the given meter deltas, using
    /// only the meters in `meters`.
    pub fn rank_pipes(&self, deltas: &[f64], meters: &[usize], dma: &str) -> Result<Vec<InspectionStep>, DetectError> {
        if deltas.len() != self.db.header.meters.len() {
            return Err(DetectError::LengthMismatch(deltas.len(), self.db.header.meters.len()));
        }
        let pipes = &self.districts[self.dma_slot(dma)?];
        if pipes.iter().all(|p| p.scenarios.is_empty()) {
            return Err(DetectError::EmptyDma(dma.to_string()));
        }
        let observed: Vec<f64> = meters.iter().map(|&i| deltas[i]).collect();
        let mut scored: Vec<(bool, f64, &DistrictPipe)> = pipes
            .iter()
            .map(|p| {
                let mut best = f64::NEG_INFINITY;
                let (mut sum, mut usable) = (0.0, false);
                for &s in &p.scenarios {
                    let sim = &self.db.scenarios[s].meter_deltas;
                    let c = pearson_unchecked(observed.iter().copied().zip(meters.iter().map(|&i| sim[i])));
                    usable |= !c.degenerate;
                    best = best.max(c.r);
                    sum += c.r;
                }
                let score = match (usable, self.config.aggregation) {
                    (false, _) => 0.0,
                    (true, Aggregation::Max) => best,
                    (true, Aggregation::Mean) => sum / p.scenarios.len() as f64,
                };
                (!usable, score, p)
            })
            .collect();
        scored.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then_with(|| b.1.total_cmp(&a.1))
                .then_with(|| a.2.id.cmp(&b.2.id))
        });
        let mut cumulative = 0.0;
        Ok(scored
            .into_iter()
            .map(|(degenerate, score, p)| {
                cumulative += p.length;
                InspectionStep {
                    pipe: p.id.clone(),
                    score,
                    degenerate,
                    length: p.length,
                    cumulative_length: cumulative,
                }
            })
            .collect())
    }

    /// Runs both phases.
    pub fn detect(&self, evidence: &Evidence) -> Result<DetectionReport, DetectError> {
        if evidence.amsi_deltas.len() != self.db.header.dmas.len() {
            return Err(DetectError::LengthMismatch(evidence.amsi_deltas.len(), self.db.header.dmas.len()));
        }
        let meters = filter_meters(&evidence.meter_deltas, self.config.meter_error_bound);
        let mut identified = Vec::new();
        for (dma, amsi_delta) in identify_dmas(&self.db.header.dmas, &evidence.amsi_deltas, self.config.amsi_threshold) {
            let sequence = self.rank_pipes(&evidence.meter_deltas, &meters, &dma)?;
            identified.push(IdentifiedDma { dma, amsi_delta, sequence });
        }
        Ok(DetectionReport {
            identified,
            meters_used: meters.iter().map(|&i| self.db.header.meters[i].clone()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_hand_values() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(pearson(&x, &x).unwrap().r, 1.0);
        assert_eq!(pearson(&x, &[-1.0, -2.0, -3.0]).unwrap().r, -1.0);
        // sxy = 5, sxx = 2, syy = 12.667: r = 5 / sqrt(25.333)
        let r = pearson(&x, &[2.0, 4.0, 7.0]).unwrap().r;
        assert!((r - 5.0 / (2.0f64 * 38.0 / 3.0).sqrt()).abs() < 1e-15);
        assert!((r - 0.99339).abs() < 1e-5);
    }

    #[test]
    fn pearson_degenerate_and_errors() {
        let c = pearson(&[0.1, 0.1, 0.1], &[1.0, 2.0, 3.0]).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.r, 0.0);
        assert_eq!(pearson(&[1.0], &[1.0]), Err(DetectError::TooShort(1)));
        assert_eq!(pearson(&[1.0, 2.0], &[1.0]), Err(DetectError::LengthMismatch(2, 1)));
    }

    #[test]
    fn meter_filter() {
        assert_eq!(filter_meters(&[0.1, 0.7, 0.6], 0.0), vec![0, 1, 2]);
        assert_eq!(filter_meters(&[0.1, 0.7, 0.6], 0.5), vec![1, 2]);
        assert_eq!(filter_meters(&[0.1, 0.7, 0.2], 0.5), vec![0, 1, 2]);
        assert_eq!(filter_meters(&[0.1, -0.7, -0.6], 0.5), vec![1, 2]);
    }

    #[test]
    fn identification() {
        let dmas = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        assert!(identify_dmas(&dmas, &[0.0, 0.0, 0.0], 0.1).is_empty());
        assert_eq!(identify_dmas(&dmas, &[0.0, 0.2, 0.0], 0.1), vec![("B".to_string(), 0.2)]);
        let both = identify_dmas(&dmas, &[0.3, 0.2, 0.5], 0.1);
        assert_eq!(both.iter().map(|d| d.0.as_str()).collect::<Vec<_>>(), ["C", "A", "B"]);
    }

    #[test]
    fn noise_is_bounded_reproducible_and_centred() {
        let zeros = vec![0.0; 1_000_000];
        assert_eq!(inject_errors(&[1.0, 2.0], 0.0, NoiseModel::Uniform, 3, 0), vec![1.0, 2.0]);
        let a = inject_errors(&zeros, 0.5, NoiseModel::Uniform, 3, 0);
        assert_eq!(a, inject_errors(&zeros, 0.5, NoiseModel::Uniform, 3, 0));
        assert_ne!(a[..10], inject_errors(&zeros, 0.5, NoiseModel::Uniform, 3, 1)[..10]);
        assert!(a.iter().all(|e| e.abs() <= 0.5));
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        // sd of the mean: (0.5 / sqrt 3) / 1000
        assert!(mean.abs() < 3.0 * 0.5 / 3f64.sqrt() / 1000.0, "{mean}");
        let g = inject_errors(&zeros[..10_000], 0.5, NoiseModel::Gaussian, 3, 0);
        let var = g.iter().map(|e| e * e).sum::<f64>() / g.len() as f64;
        assert!((var.sqrt() - 0.5).abs() < 0.02);
    }
}
