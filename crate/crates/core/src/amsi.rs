//! Leak density and the Active Management Scaled Index (AMSI) at pipe and
//! district level.
//!
//! The density `D` is leakage volume per day per km of pipe. AMSI divides
//! it by the reference pressure raised to the reference exponent, which
//! makes it a pressure-independent measure of deterioration: under the
//! power law, `AMSI = 8.64e7 · β` whatever the pressure.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::hydraulics::{mean_state, HydraulicState};
use crate::network::{LeakModel, LeakParams, Network, NetworkError};

/// Seconds per day over metres per km: converts m³/s per m of pipe into
/// m³/day per km.
pub const DENSITY_SCALE: f64 = 86_400.0 * 1_000.0;

#[derive(Debug, Error)]
pub enum AmsiError {
    #[error("reference pressure must be positive, got {0} m")]
    NonPositivePressure(f64),
    #[error("DMA `{0}` has no open pipes")]
    EmptyDma(String),
    #[error("length must be positive, got {0} km")]
    NonPositiveLength(f64),
    #[error("no hydraulic states given")]
    NoStates,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Density and AMSI of one pipe or one DMA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmsiRecord {
    /// Pipe id or DMA id.
    pub scope: String,
    /// m³/day/km.
    pub leak_density: f64,
    /// m.
    pub p_ref: f64,
    pub alpha_ref: f64,
    pub amsi: f64,
}

/// `D / p_ref^alpha_ref`.
pub fn pipe_amsi(density: f64, p_ref: f64, alpha_ref: f64) -> Result<f64, AmsiError> {
    if !(p_ref > 0.0) {
        return Err(AmsiError::NonPositivePressure(p_ref));
    }
    Ok(density / p_ref.powf(alpha_ref))
}

/// Cycle-mean diffuse leak density of pipe `k`, m³/day/km.
pub fn pipe_leak_density(net: &Network, states: &[HydraulicState], k: usize) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    let mean_leak = states.iter().map(|s| s.pipe_leaks[k]).sum::<f64>() / states.len() as f64;
    DENSITY_SCALE * mean_leak / net.pipes[k].length
}

/// Pressure elasticity of the leak law, `d ln q / d ln P`, at `pressure`.
///
/// For the power law this is just `α`. For FAVAD it is
/// `(β/2 + 3MP/2) / (β + MP)`, which falls to 1/2 for rigid orifices.
pub fn leak_exponent(params: &LeakParams, pressure: f64) -> f64 {
    match params.model {
        LeakModel::Power => params.alpha,
        LeakModel::Favad => {
            let mp = params.m_coeff * pressure.max(0.0);
            let denom = params.beta + mp;
            if denom > 0.0 {
                (0.5 * params.beta + 1.5 * mp) / denom
            } else {
                0.5
            }
        }
    }
}

/// Reference pressure (cycle mean of `P_k`) and exponent of pipe `k`.
pub fn pipe_reference(net: &Network, states: &[HydraulicState], k: usize) -> (f64, f64) {
    let p_ref = states.iter().map(|s| s.pipe_pressures[k]).sum::<f64>() / states.len() as f64;
    (p_ref, leak_exponent(&net.pipes[k].leak, p_ref))
}

pub fn pipe_record(net: &Network, states: &[HydraulicState], k: usize) -> Result<AmsiRecord, AmsiError> {
    if states.is_empty() {
        return Err(AmsiError::NoStates);
    }
    let density = pipe_leak_density(net, states, k);
    let (p_ref, alpha_ref) = pipe_reference(net, states, k);
    Ok(AmsiRecord {
        scope: net.pipes[k].id.clone(),
        leak_density: density,
        p_ref,
        alpha_ref,
        amsi: pipe_amsi(density, p_ref, alpha_ref)?,
    })
}

/// Length-weighted reference pressure and exponent of a DMA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmaReference {
    pub dma: String,
    /// Total open pipe length, km.
    pub length_km: f64,
    pub p_ref: f64,
    pub alpha_ref: f64,
}

impl DmaReference {
    /// AMSI of a density measured in this DMA.
    pub fn amsi(&self, density: f64) -> Result<f64, AmsiError> {
        pipe_amsi(density, self.p_ref, self.alpha_ref)
    }
}

pub fn dma_reference(net: &Network, states: &[HydraulicState], dma: &str) -> Result<DmaReference, AmsiError> {
    if states.is_empty() {
        return Err(AmsiError::NoStates);
    }
    let sub = net.dma_subnetwork(dma)?;
    if sub.pipes.is_empty() {
        return Err(AmsiError::EmptyDma(dma.to_string()));
    }
    let (mut p, mut a) = (0.0, 0.0);
    for &k in &sub.pipes {
        let (p_ref, alpha_ref) = pipe_reference(net, states, k);
        let l = net.pipes[k].length;
        p += l * p_ref;
        a += l * alpha_ref;
    }
    Ok(DmaReference {
        dma: dma.to_string(),
        length_km: sub.total_length / 1000.0,
        p_ref: p / sub.total_length,
        alpha_ref: a / sub.total_length,
    })
}

/// Cycle-mean density of every unbilled outflow of a DMA — diffuse pipe
/// leakage plus any orifice outflow at its junctions — which is what a
/// flow-meter balance of the district measures. m³/day/km.
pub fn dma_water_loss_density(net: &Network, states: &[HydraulicState], dma: &str) -> Result<f64, AmsiError> {
    if states.is_empty() {
        return Err(AmsiError::NoStates);
    }
    let sub = net.dma_subnetwork(dma)?;
    if sub.pipes.is_empty() {
        return Err(AmsiError::EmptyDma(dma.to_string()));
    }
    let state = mean_state(states);
    let diffuse: f64 = sub.pipes.iter().map(|&k| state.pipe_leaks[k]).sum();
    let punctual: f64 = net
        .junctions
        .iter()
        .enumerate()
        .filter(|(_, j)| j.dma == dma)
        .map(|(i, _)| state.punctual_outflows[i])
        .sum();
    Ok(DENSITY_SCALE * (diffuse + punctual) / sub.total_length)
}

/// [`dma_water_loss_density`] of several districts from one state in a
/// single pass over the network.
pub fn dma_water_loss_densities(net: &Network, state: &HydraulicState, dmas: &[String]) -> Vec<f64> {
    let slot = |d: &str| dmas.iter().position(|x| x == d);
    let mut loss = vec![0.0; dmas.len()];
    let mut length = vec![0.0; dmas.len()];
    for (k, p) in net.pipes.iter().enumerate() {
        if let (true, Some(i)) = (p.is_open(), p.dma.as_deref().and_then(slot)) {
            loss[i] += state.pipe_leaks[k];
            length[i] += p.length;
        }
    }
    for (j, junction) in net.junctions.iter().enumerate() {
        if let Some(i) = slot(&junction.dma) {
            loss[i] += state.punctual_outflows[j];
        }
    }
    loss.iter()
        .zip(&length)
        .map(|(q, l)| if *l > 0.0 { DENSITY_SCALE * q / l } else { 0.0 })
        .collect()
}

/// District AMSI from model states. With `density` given (for instance a
/// metered balance) it replaces the modelled water-loss density.
pub fn dma_amsi(
    net: &Network,
    states: &[HydraulicState],
    dma: &str,
    density: Option<f64>,
) -> Result<AmsiRecord, AmsiError> {
    let reference = dma_reference(net, states, dma)?;
    let leak_density = match density {
        Some(d) => d,
        None => dma_water_loss_density(net, states, dma)?,
    };
    Ok(AmsiRecord {
        scope: dma.to_string(),
        leak_density,
        p_ref: reference.p_ref,
        alpha_ref: reference.alpha_ref,
        amsi: reference.amsi(leak_density)?,
    })
}

/// Water-loss density from a district's flow balance, all volumes in
/// m³/day. A negative balance (meter error) is floored at zero.
pub fn metered_dma_density(
    inflow: f64,
    outflow: f64,
    consumption: f64,
    length_km: f64,
) -> Result<f64, AmsiError> {
    if !(length_km > 0.0) {
        return Err(AmsiError::NonPositiveLength(length_km));
    }
    let balance = (inflow - outflow - consumption) / length_km;
    if balance < 0.0 {
        warn!(balance, "negative district water balance, density floored at zero");
        return Ok(0.0);
    }
    Ok(balance)
}

/// CSV with one row per record: the record itself, the matching baseline
/// AMSI and the variation.
pub fn amsi_csv(records: &[AmsiRecord], baselines: &[AmsiRecord]) -> String {
    let mut out = String::from("scope,leak_density,p_ref,alpha_ref,amsi,baseline_amsi,delta\n");
    for r in records {
        let base = baselines.iter().find(|b| b.scope == r.scope).map(|b| b.amsi);
        let (b, d) = match base {
            Some(b) => (b.to_string(), (r.amsi - b).to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scope, r.leak_density, r.p_ref, r.alpha_ref, r.amsi, b, d
        );
    }
    out
}
