use std::time::Instant;

use approx::assert_relative_eq;
use leakhunt::hydraulics::{
    loop_energy_residuals, mass_residuals, solve_cycle, solve_steady_state, solve_with_guess,
    HydraulicState, SolveError, SolverSettings, ValveState,
};
use leakhunt::network::{HeadlossModel, Network, NodeRef, OperativeCycle};
use leakhunt::synthetic;

fn settings() -> SolverSettings {
    SolverSettings::default()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn assert_balanced(net: &Network, state: &HydraulicState) {
    assert!(state.converged);
    let mass = max_abs(&mass_residuals(net, state));
    let energy = max_abs(&loop_energy_residuals(net, state));
    assert!(mass <= 1e-6, "{}: mass residual {mass:e}", net.name);
    assert!(energy <= 1e-5, "{}: loop residual {energy:e}", net.name);
}

#[test]
fn single_pipe_matches_closed_form() {
    let net = synthetic::single_pipe(50.0, 0.0);
    let s = solve_steady_state(&net, 1.0, &settings()).unwrap();
    // full service: Q = 10 L/s, H = H0 − r·L·Q^1.852
    let r = 10.667 * 130f64.powf(-1.852) * 0.2f64.powf(-4.871);
    let expected = 50.0 - r * 1000.0 * 0.01f64.powf(1.852);
    assert_relative_eq!(s.heads[0], expected, epsilon = 1e-7);
    assert_relative_eq!(s.pipe_flows[0], 0.01, epsilon = 1e-9);
}

#[test]
fn single_pipe_below_service_pressure_serves_partial_demand() {
    // reservoir 12 m above the junction: pressure settles where the
    // Wagner law and the pipe loss agree
    let net = synthetic::single_pipe(12.0, 0.0);
    let s = solve_steady_state(&net, 1.0, &settings()).unwrap();
    let p = s.heads[0];
    assert!(p > 0.0 && p < 12.0);
    let wagner = 0.01 * (p / 20.0).sqrt();
    assert_relative_eq!(s.served_demand[0], wagner, epsilon = 1e-9);
    assert_relative_eq!(s.pipe_flows[0], wagner, epsilon = 1e-8);
}

/// Independent solution of the triangle: nested bisection on the two
/// junction heads using only the textbook laws, no Newton, no Jacobian.
fn triangle_oracle(net: &Network) -> (f64, f64) {
    let res = &net.reservoirs[0];
    let pipe_q = |k: usize, h_from: f64, h_to: f64| {
        let p = &net.pipes[k];
        let r = 10.667 * p.roughness.powf(-1.852) * p.diameter.powf(-4.871) * p.length;
        let dh = h_from - h_to;
        dh.signum() * (dh.abs() / r).powf(1.0 / 1.852)
    };
    let leak = |k: usize, p_a: f64, p_b: f64| {
        let p = &net.pipes[k];
        p.leak.beta * (0.5 * (p_a + p_b)).max(0.0) * p.length
    };
    let demand = |j: usize, h: f64| {
        let jn = &net.junctions[j];
        let p = h - jn.elevation;
        jn.demand * (p.clamp(0.0, 20.0) / 20.0).sqrt()
    };
    let (e1, e2) = (net.junctions[0].elevation, net.junctions[1].elevation);
    let p0 = res.head - res.elevation;
    // J2 imbalance for given heads (P2: J1→J2, P3: R→J2)
    let f2 = |h1: f64, h2: f64| {
        pipe_q(1, h1, h2) + pipe_q(2, res.head, h2)
            - demand(1, h2)
            - 0.5 * leak(1, h1 - e1, h2 - e2)
            - 0.5 * leak(2, p0, h2 - e2)
    };
    let bisect = |f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let h2_of = |h1: f64| bisect(&|h2| f2(h1, h2), 0.0, res.head);
    let f1 = |h1: f64| {
        let h2 = h2_of(h1);
        pipe_q(0, res.head, h1) - pipe_q(1, h1, h2)
            - demand(0, h1)
            - 0.5 * leak(0, p0, h1 - e1)
            - 0.5 * leak(1, h1 - e1, h2 - e2)
    };
    let h1 = bisect(&f1, 0.0, res.head);
    (h1, h2_of(h1))
}

#[test]
fn triangle_matches_brute_force_oracle() {
    let net = synthetic::triangle();
    let s = solve_steady_state(&net, 1.0, &settings()).unwrap();
    let (h1, h2) = triangle_oracle(&net);
    assert!((s.heads[0] - h1).abs() < 1e-4, "{} vs {h1}", s.heads[0]);
    assert!((s.heads[1] - h2).abs() < 1e-4, "{} vs {h2}", s.heads[1]);
    assert_balanced(&net, &s);
    assert!(s.total_diffuse_leak() > 0.0);
}

#[test]
fn all_fixtures_satisfy_mass_and_energy_balance() {
    for net in [
        synthetic::single_pipe(50.0, 0.0),
        synthetic::triangle(),
        synthetic::three_dma(),
        synthetic::five_dma_200(),
        synthetic::nine_dma(),
        synthetic::town_853(),
    ] {
        for m in [0.5, 1.0, 1.5] {
            let s = solve_steady_state(&net, m, &settings()).unwrap();
            assert_balanced(&net, &s);
            assert_eq!(s.heads.len(), net.n_junctions());
        }
    }
}

#[test]
fn darcy_weisbach_network_balances() {
    let mut net = synthetic::five_dma_200();
    net.headloss = HeadlossModel::DarcyWeisbach;
    for p in &mut net.pipes {
        p.roughness = 0.1;
    }
    let s = solve_steady_state(&net, 1.0, &settings()).unwrap();
    assert_balanced(&net, &s);
}

#[test]
fn closed_pipes_carry_no_flow() {
    let net = synthetic::five_dma_200();
    let s = solve_steady_state(&net, 1.0, &settings()).unwrap();
    for (k, p) in net.pipes.iter().enumerate() {
        if !p.is_open() {
            assert_eq!(s.pipe_flows[k], 0.0);
            assert_eq!(s.pipe_leaks[k], 0.0);
        }
    }
}

#[test]
fn reducing_valves_hold_their_setting() {
    let net = synthetic::town_853();
    let s = solve_steady_state(&net, 1.0, &settings()).unwrap();
    for (v, valve) in net.valves.iter().enumerate() {
        assert_eq!(s.valve_states[v], ValveState::Active, "{}", valve.id);
        let NodeRef::Junction(j) = valve.to else { panic!() };
        assert_relative_eq!(s.pressure(&net, j), valve.setting, epsilon = 1e-9);
        assert!(s.valve_flows[v] > 0.0);
    }
}

#[test]
fn reducing_valve_opens_when_upstream_head_is_too_low() {
    let mut net = synthetic::town_853();
    net.valves[0].setting = 200.0;
    let s = solve_steady_state(&net, 1.0, &settings()).unwrap();
    assert_eq!(s.valve_states[0], ValveState::Open);
    assert_balanced(&net, &s);
}

#[test]
fn cycle_mean_is_the_arithmetic_mean_of_snapshots() {
    let net = synthetic::three_dma();
    let cycle = OperativeCycle { dt: 43_200.0, multipliers: vec![0.5, 1.5] };
    let sol = solve_cycle(&net, &cycle, &settings()).unwrap();
    assert_eq!(sol.states.len(), 2);
    for k in 0..net.n_pipes() {
        let mean = 0.5 * (sol.states[0].pipe_pressures[k] + sol.states[1].pipe_pressures[k]);
        assert!((sol.mean.pipe_pressures[k] - mean).abs() <= 1e-12);
    }
    // higher demand, lower pressure
    assert!(sol.states[1].heads.iter().zip(&sol.states[0].heads).all(|(a, b)| a < b));
}

#[test]
fn warm_start_reaches_the_same_state_in_fewer_iterations() {
    let net = synthetic::five_dma_200();
    let cold = solve_steady_state(&net, 1.0, &settings()).unwrap();
    let warm = solve_with_guess(&net, 1.0, &settings(), Some(&cold)).unwrap();
    assert!(warm.iterations <= cold.iterations);
    for (a, b) in cold.heads.iter().zip(&warm.heads) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn zero_orifice_leak_leaves_heads_unchanged() {
    let mut net = synthetic::three_dma();
    for p in &mut net.pipes {
        p.leak.beta = 0.0;
    }
    let base = solve_steady_state(&net, 1.0, &settings()).unwrap();
    for pipe in ["A3", "B7", "C10"] {
        let split = net.insert_midpoint_leak(pipe, 0.0).unwrap();
        let s = solve_with_guess(&split, 1.0, &settings(), Some(&base)).unwrap();
        for j in 0..net.n_junctions() {
            assert!((s.heads[j] - base.heads[j]).abs() < 1e-9, "{pipe} junction {j}");
        }
        assert_eq!(s.total_punctual_outflow(), 0.0);
    }
}

#[test]
fn leak_outflow_lowers_heads_and_diffuse_leakage() {
    let net = synthetic::three_dma();
    let base = solve_steady_state(&net, 1.0, &settings()).unwrap();
    let split = net.insert_midpoint_leak("B4", 0.015).unwrap();
    let s = solve_with_guess(&split, 1.0, &settings(), Some(&base)).unwrap();
    assert_balanced(&split, &s);
    assert!(s.total_punctual_outflow() > 1e-4);
    for j in 0..net.n_junctions() {
        assert!(s.heads[j] <= base.heads[j] + 1e-6);
    }
    assert!(s.total_diffuse_leak() <= base.total_diffuse_leak() + 1e-9);
}

#[test]
fn solve_of_200_pipe_fixture_is_fast() {
    let net = synthetic::five_dma_200();
    solve_steady_state(&net, 1.0, &settings()).unwrap();
    let t = Instant::now();
    let s = solve_steady_state(&net, 1.0, &settings()).unwrap();
    let elapsed = t.elapsed();
    assert!(s.converged);
    assert!(elapsed.as_millis() < 50, "{elapsed:?}");
}

#[test]
fn iteration_cap_reports_non_convergence_with_last_state() {
    let net = synthetic::five_dma_200();
    let tight = SolverSettings { max_iterations: 1, ..settings() };
    match solve_steady_state(&net, 1.0, &tight) {
        Err(SolveError::NotConverged { state }) => {
            assert!(!state.converged);
            assert_eq!(state.heads.len(), net.n_junctions());
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn invalid_settings_are_rejected() {
    let net = synthetic::triangle();
    let bad = SolverSettings { head_tolerance: 0.0, ..settings() };
    assert!(matches!(
        solve_steady_state(&net, 1.0, &bad),
        Err(SolveError::InvalidSettings(_))
    ));
}
