//! Two-phase punctual leak detection for DMA-partitioned water
//! distribution networks.
//!
//! The pipeline is: solve the leak-free network ([`hydraulics`]), compute
//! district leakage indicators ([`amsi`]), build a database of simulated
//! midpoint leak scenarios ([`scenariodb`]), then, for an observed event,
//! flag districts whose indicator rose and rank their pipes by how well the
//! observed pressure deltas correlate with each scenario ([`detect`]).
//! [`evaluate`] runs whole campaigns of synthetic events and reports the
//! usual detection and inspection-effort indicators.

pub mod amsi;
pub mod detect;
pub mod evaluate;
pub mod hydraulics;
pub mod network;
pub mod provenance;
pub mod scenariodb;
pub mod synthetic;
