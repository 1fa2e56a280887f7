#![allow(dead_code)]

use harmfilt_core::grid::{
    attach_harmonic_config, parse_cdf, Branch, Bus, BusKind, CandidateSelection, CurrentBasis, NetworkCase,
    StudyCase, StudyConfig,
};

pub const IEEE14: &str = include_str!("../../data/ieee14.cdf");
pub const IEEE118: &str = include_str!("../../data/ieee118.cdf");
pub const IEEE118_STUDY: &str = include_str!("../../data/ieee118_study.toml");

/// Five 138 kV buses, two generators and three nonlinear loads. A shunt
/// capacitor at bus 4 puts a parallel resonance between the 5th and 7th.
pub fn five_bus() -> StudyCase {
    let buses = vec![
        Bus::new(1, BusKind::Slack, 138.0).with_generation(0.0, 1.02),
        Bus::new(2, BusKind::Pv, 138.0).with_generation(40.0, 1.01),
        Bus::new(3, BusKind::Pq, 138.0).with_load(45.0, 15.0),
        Bus::new(4, BusKind::Pq, 138.0).with_load(30.0, 10.0).with_shunt(0.0, 0.15),
        Bus::new(5, BusKind::Pq, 138.0).with_load(25.0, 8.0),
    ];
    let branches = vec![
        Branch::line(1, 2, 0.02, 0.06, 0.03),
        Branch::line(1, 3, 0.05, 0.19, 0.02),
        Branch::line(2, 3, 0.06, 0.17, 0.02),
        Branch::line(2, 4, 0.06, 0.18, 0.02),
        Branch::line(3, 4, 0.01, 0.04, 0.01),
        Branch::line(4, 5, 0.08, 0.24, 0.02),
    ];
    let net = NetworkCase::new(100.0, buses, branches).unwrap();
    let config = StudyConfig {
        nonlinear_buses: Some(vec![3, 4, 5]),
        ..StudyConfig::default()
    };
    attach_harmonic_config(net, config).unwrap()
}

/// IEEE 14-bus with six 138 kV filter candidates and a capacity cap that
/// makes the cheapest compliant placement a pair (6 MVAR) or a triple (5 MVAR).
pub fn fourteen_bus(q_cap_mvar: f64, d: f64) -> StudyCase {
    let net = parse_cdf(IEEE14).unwrap();
    let mut config = StudyConfig {
        v_max_pu: 1.1,
        q_filter_max_mvar: q_cap_mvar,
        current_basis: CurrentBasis::TotalLoad,
        ..StudyConfig::default()
    };
    config.search.candidates = CandidateSelection::Buses(vec![6, 7, 8, 11, 12, 13]);
    config.search.capacity_grid = vec![q_cap_mvar, q_cap_mvar / 2.0];
    config.search.max_filters = 3;
    config.search.d_quantiles = vec![d];
    attach_harmonic_config(net, config).unwrap()
}

pub const LC_X_LINE: f64 = 0.1;
pub const LC_B_SHUNT: f64 = 0.08;

/// Generator behind a line feeding a shunt capacitor. Series reactance
/// X_g + X_line against B resonates at f0 / √((X_g + X_line)·B).
pub fn lc_two_bus() -> StudyCase {
    let buses = vec![
        Bus::new(1, BusKind::Slack, 138.0).with_generation(0.0, 1.0),
        Bus::new(2, BusKind::Pq, 138.0).with_shunt(0.0, LC_B_SHUNT),
    ];
    let branches = vec![Branch::line(1, 2, 1e-4, LC_X_LINE, 0.0)];
    let net = NetworkCase::new(100.0, buses, branches).unwrap();
    attach_harmonic_config(net, StudyConfig::default()).unwrap()
}

/// Closed-form parallel resonance of [`lc_two_bus`].
pub fn lc_resonance_hz(case: &StudyCase) -> f64 {
    let x_g = case.generators[0].x_system(case.base_mva());
    case.config.fundamental_hz / ((x_g + LC_X_LINE) * LC_B_SHUNT).sqrt()
}

pub fn ieee118() -> StudyCase {
    let net = parse_cdf(IEEE118).unwrap();
    attach_harmonic_config(net, StudyConfig::from_toml(IEEE118_STUDY).unwrap()).unwrap()
}

/// Prints one acceptance line and returns whether it passed.
pub fn report(id: u32, name: &str, pass: bool, detail: &str) -> bool {
    println!("criterion {id:>2} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}
