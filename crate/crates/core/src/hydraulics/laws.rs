//! Constitutive laws: pipe head loss, pressure-driven demand, diffuse pipe
//! leakage and orifice discharge. Each law comes with its derivative for the
//! Newton Jacobian.

use std::f64::consts::PI;

use crate::network::{DemandModel, HeadlossModel, LeakModel, LeakParams, Pipe};

pub const GRAVITY: f64 = 9.81;

/// Kinematic viscosity of water at about 20 °C, m²/s.
pub const KINEMATIC_VISCOSITY: f64 = 1.0e-6;

const HW_EXPONENT: f64 = 1.852;
const HW_COEFFICIENT: f64 = 10.667;
const HW_DIAMETER_EXPONENT: f64 = 4.871;

/// Pressures below this are treated as this value when differentiating
/// square-root-like laws, whose slope is unbounded at zero.
const PRESSURE_FLOOR_FOR_SLOPE: f64 = 1e-3;

/// Hazen-Williams resistance per metre of pipe, `h = r·L·Q·|Q|^0.852`.
pub fn hazen_williams_resistance(diameter: f64, c: f64) -> f64 {
    HW_COEFFICIENT * c.powf(-HW_EXPONENT) * diameter.powf(-HW_DIAMETER_EXPONENT)
}

/// Head loss (m) along an open pipe carrying `q` m³/s from `from` to `to`.
/// Odd in `q`.
pub fn head_loss(model: HeadlossModel, pipe: &Pipe, q: f64) -> f64 {
    pipe_head_loss(model, pipe.length, pipe.diameter, pipe.roughness, q).0
}

/// `(h, dh/dq)` for a pipe.
pub(crate) fn pipe_head_loss(
    model: HeadlossModel,
    length: f64,
    diameter: f64,
    roughness: f64,
    q: f64,
) -> (f64, f64) {
    match model {
        HeadlossModel::HazenWilliams => {
            let r = hazen_williams_resistance(diameter, roughness) * length;
            let a = q.abs().powf(HW_EXPONENT - 1.0);
            (r * q * a, HW_EXPONENT * r * a)
        }
        HeadlossModel::DarcyWeisbach => darcy_weisbach(length, diameter, roughness * 1e-3, q),
    }
}

fn darcy_weisbach(length: f64, diameter: f64, eps: f64, q: f64) -> (f64, f64) {
    let aq = q.abs();
    if aq == 0.0 {
        return (0.0, 0.0);
    }
    // h = f · k · q|q| with k = 8 L / (g π² D⁵)
    let k = 8.0 * length / (GRAVITY * PI * PI * diameter.powi(5));
    let re = 4.0 * aq / (PI * diameter * KINEMATIC_VISCOSITY);
    let (f, df_dre) = friction_factor(re, eps / diameter);
    let h = f * k * q * aq;
    let dre_dq = re / aq;
    let dh = 2.0 * f * k * aq + k * aq * aq * df_dre * dre_dq;
    (h, dh)
}

/// Darcy friction factor and its derivative in Re: laminar below 2000,
/// Swamee-Jain above 4000, linear blend in between.
fn friction_factor(re: f64, rel_roughness: f64) -> (f64, f64) {
    const LAMINAR: f64 = 2000.0;
    const TURBULENT: f64 = 4000.0;
    if re <= LAMINAR {
        return (64.0 / re, -64.0 / (re * re));
    }
    if re >= TURBULENT {
        return swamee_jain(re, rel_roughness);
    }
    let f_lo = 64.0 / LAMINAR;
    let (f_hi, _) = swamee_jain(TURBULENT, rel_roughness);
    let slope = (f_hi - f_lo) / (TURBULENT - LAMINAR);
    (f_lo + slope * (re - LAMINAR), slope)
}

fn swamee_jain(re: f64, rel_roughness: f64) -> (f64, f64) {
    let b = 5.74 * re.powf(-0.9);
    let arg = rel_roughness / 3.7 + b;
    let y = arg.log10();
    let f = 0.25 / (y * y);
    let dy = (-0.9 * b / re) / (arg * std::f64::consts::LN_10);
    (f, -0.5 / (y * y * y) * dy)
}

/// Minor-loss head drop across a fully open valve.
pub(crate) fn valve_head_loss(diameter: f64, minor_loss: f64, q: f64) -> (f64, f64) {
    let m = minor_loss * 8.0 / (GRAVITY * PI * PI * diameter.powi(4));
    (m * q * q.abs(), 2.0 * m * q.abs())
}

/// Served demand (m³/s) at pressure `p` under the Wagner square-root law.
pub fn nodal_demand(pressure: f64, base: f64, multiplier: f64, model: DemandModel) -> f64 {
    nodal_demand_with_slope(pressure, base * multiplier, model).0
}

pub(crate) fn nodal_demand_with_slope(pressure: f64, required: f64, model: DemandModel) -> (f64, f64) {
    if required == 0.0 || pressure <= model.p_min {
        return (0.0, 0.0);
    }
    if pressure >= model.p_service {
        return (required, 0.0);
    }
    let span = model.p_service - model.p_min;
    let ratio = (pressure - model.p_min) / span;
    let served = required * ratio.sqrt();
    let slope_ratio = ratio.max(PRESSURE_FLOOR_FOR_SLOPE / span);
    (served, required / (2.0 * span * slope_ratio.sqrt()))
}

/// Diffuse leakage outflow (m³/s) of a pipe of length `length` at mean
/// pressure `pressure`. Negative pressures leak nothing.
pub fn pipe_diffuse_leak(params: &LeakParams, length: f64, pressure: f64) -> f64 {
    pipe_diffuse_leak_with_slope(params, length, pressure).0
}

pub(crate) fn pipe_diffuse_leak_with_slope(params: &LeakParams, length: f64, pressure: f64) -> (f64, f64) {
    if pressure <= 0.0 || (params.beta == 0.0 && params.m_coeff == 0.0) {
        return (0.0, 0.0);
    }
    let ps = pressure.max(PRESSURE_FLOOR_FOR_SLOPE);
    match params.model {
        LeakModel::Power => {
            let q = params.beta * pressure.powf(params.alpha) * length;
            let dq = params.alpha * params.beta * ps.powf(params.alpha - 1.0) * length;
            (q, dq)
        }
        LeakModel::Favad => {
            let q = (params.beta + params.m_coeff * pressure) * pressure.sqrt() * length;
            let dq = (0.5 * params.beta / ps.sqrt() + 1.5 * params.m_coeff * ps.sqrt()) * length;
            (q, dq)
        }
    }
}

/// Torricelli discharge (m³/s) of a circular orifice of diameter `diameter`.
pub fn orifice_outflow(diameter: f64, pressure: f64, cd: f64) -> f64 {
    orifice_outflow_with_slope(diameter, pressure, cd).0
}

pub(crate) fn orifice_outflow_with_slope(diameter: f64, pressure: f64, cd: f64) -> (f64, f64) {
    if diameter <= 0.0 || pressure <= 0.0 {
        return (0.0, 0.0);
    }
    let k = cd * PI * diameter * diameter / 4.0 * (2.0 * GRAVITY).sqrt();
    let ps = pressure.max(PRESSURE_FLOOR_FOR_SLOPE);
    (k * pressure.sqrt(), 0.5 * k / ps.sqrt())
}

/// Mean pipe pressure from its end-node pressures, floored at zero.
pub fn mean_pipe_pressure(p_from: f64, p_to: f64) -> f64 {
    (0.5 * (p_from + p_to)).max(0.0)
}
