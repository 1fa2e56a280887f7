//! Fundamental-frequency Newton-Raphson power flow (polar form) and the
//! voltage/current constraint check applied to every filter scenario.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BusId, BusKind, StudyCase};
use crate::harmonic::{branch_terms, shunt_admittance};
use crate::linalg::CMatrix;
use crate::scenario::PlacementScenario;

pub const MAX_ITERATIONS: usize = 30;
pub const TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PfSolution {
    pub vm: Vec<f64>,
    /// Radians.
    pub va: Vec<f64>,
    /// Larger of the two terminal current magnitudes per branch, pu.
    pub branch_current: Vec<f64>,
    /// Net complex power injected at each bus, pu.
    pub injection: Vec<Complex64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PfSolution {
    pub fn voltage(&self, index: usize) -> Complex64 {
        Complex64::from_polar(self.vm[index], self.va[index])
    }

    /// Flat 1 pu profile, used where a study needs no power flow.
    pub fn flat(n: usize) -> Self {
        PfSolution {
            vm: vec![1.0; n],
            va: vec![0.0; n],
            branch_current: Vec::new(),
            injection: vec![Complex64::new(0.0, 0.0); n],
            iterations: 0,
            max_mismatch: 0.0,
        }
    }

    /// `bus,vm,va_deg` rows in case order.
    pub fn to_csv(&self, case: &StudyCase) -> String {
        let mut out = String::from("bus,vm_pu,va_deg\n");
        for (i, b) in case.network.buses.iter().enumerate() {
            out.push_str(&format!("{},{:.8},{:.6}\n", b.id, self.vm[i], self.va[i].to_degrees()));
        }
        out
    }
}

/// Fundamental bus admittance matrix for a scenario, in pu. A filter replaces
/// any shunt capacitor at its bus and enters as the susceptance Q / S_base.
pub fn fundamental_admittance(case: &StudyCase, scenario: &PlacementScenario) -> Result<CMatrix> {
    let net = &case.network;
    let n = net.len();
    let mut y = CMatrix::zeros(n, n);
    for br in &net.branches {
        let (f, t) = (net.bus_index(br.from_bus)?, net.bus_index(br.to_bus)?);
        let [yff, yft, ytf, ytt] = branch_terms(br, 1.0, false, true);
        y[(f, f)] += yff;
        y[(f, t)] += yft;
        y[(t, f)] += ytf;
        y[(t, t)] += ytt;
    }
    for (i, bus) in net.buses.iter().enumerate() {
        let has_filter = scenario.filter_at(bus.id).is_some();
        let b = if has_filter && bus.shunt_b > 0.0 { 0.0 } else { bus.shunt_b };
        y[(i, i)] += shunt_admittance(bus.shunt_g, b, 1.0);
    }
    for (i, filter) in scenario.designs(case)? {
        y[(i, i)] += Complex64::new(0.0, filter.fundamental_susceptance_pu(case.base_mva()));
    }
    Ok(y)
}

fn calc_power(y: &CMatrix, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let mut cur = Complex64::new(0.0, 0.0);
            for k in 0..n {
                cur += y[(i, k)] * v[k];
            }
            v[i] * cur.conj()
        })
        .collect()
}

pub fn solve_power_flow(case: &StudyCase, scenario: &PlacementScenario) -> Result<PfSolution> {
    let net = &case.network;
    let n = net.len();
    let base = net.base_mva;
    let y = fundamental_admittance(case, scenario)?;

    let spec: Vec<Complex64> = net
        .buses
        .iter()
        .map(|b| Complex64::new(b.p_gen - b.p_load, b.q_gen - b.q_load) / base)
        .collect();
    let pvpq: Vec<usize> = (0..n).filter(|&i| net.buses[i].kind != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| net.buses[i].kind == BusKind::Pq).collect();
    let (npv, npq) = (pvpq.len(), pq.len());

    let mut vm: Vec<f64> = net
        .buses
        .iter()
        .map(|b| if b.kind.has_generator() { b.held_voltage() } else { 1.0 })
        .collect();
    let mut va = vec![0.0; n];

    let mismatch = |v: &[Complex64]| -> (Vec<f64>, f64) {
        let s = calc_power(&y, v);
        let mut f = Vec::with_capacity(npv + npq);
        f.extend(pvpq.iter().map(|&i| s[i].re - spec[i].re));
        f.extend(pq.iter().map(|&i| s[i].im - spec[i].im));
        let worst = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        (f, worst)
    };

    let mut iterations = 0;
    loop {
        let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
        let (f, worst) = mismatch(&v);
        if !worst.is_finite() {
            return Err(Error::Divergence { iterations, mismatch: worst });
        }
        if worst < TOLERANCE {
            return Ok(finish(case, &y, &v, iterations, worst));
        }
        if iterations == MAX_ITERATIONS {
            return Err(Error::Divergence { iterations, mismatch: worst });
        }
        iterations += 1;

        let current: Vec<Complex64> = (0..n)
            .map(|i| (0..n).map(|k| y[(i, k)] * v[k]).sum())
            .collect();
        // dS/dθ and dS/d|V|, evaluated only where the Jacobian needs them.
        let ds_dva = |i: usize, k: usize| -> Complex64 {
            let delta = if i == k { current[i] } else { Complex64::new(0.0, 0.0) };
            Complex64::i() * v[i] * (delta - y[(i, k)] * v[k]).conj()
        };
        let ds_dvm = |i: usize, k: usize| -> Complex64 {
            let unit_k = v[k] / vm[k];
            let mut d = v[i] * (y[(i, k)] * unit_k).conj();
            if i == k {
                d += current[i].conj() * unit_k;
            }
            d
        };
        let dim = npv + npq;
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for (r, &i) in pvpq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                if i == k || y[(i, k)] != Complex64::new(0.0, 0.0) {
                    jac[(r, c)] = ds_dva(i, k).re;
                }
            }
            for (c, &k) in pq.iter().enumerate() {
                if i == k || y[(i, k)] != Complex64::new(0.0, 0.0) {
                    jac[(r, npv + c)] = ds_dvm(i, k).re;
                }
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                if i == k || y[(i, k)] != Complex64::new(0.0, 0.0) {
                    jac[(npv + r, c)] = ds_dva(i, k).im;
                }
            }
            for (c, &k) in pq.iter().enumerate() {
                if i == k || y[(i, k)] != Complex64::new(0.0, 0.0) {
                    jac[(npv + r, npv + c)] = ds_dvm(i, k).im;
                }
            }
        }
        let rhs = DVector::from_iterator(dim, f.iter().map(|x| -x));
        let lu = jac.lu();
        let dx = lu
            .solve(&rhs)
            .filter(|d| d.iter().all(|x| x.is_finite()))
            .ok_or_else(|| Error::Singular("power flow Jacobian".into()))?;
        for (r, &i) in pvpq.iter().enumerate() {
            va[i] += dx[r];
        }
        for (c, &i) in pq.iter().enumerate() {
            vm[i] += dx[npv + c];
        }
    }
}

fn finish(case: &StudyCase, y: &CMatrix, v: &[Complex64], iterations: usize, worst: f64) -> PfSolution {
    let net = &case.network;
    let branch_current = net
        .branches
        .iter()
        .map(|br| {
            let (f, t) = (net.bus_index(br.from_bus).unwrap(), net.bus_index(br.to_bus).unwrap());
            let [yff, yft, ytf, ytt] = branch_terms(br, 1.0, false, true);
            let i_f = yff * v[f] + yft * v[t];
            let i_t = ytf * v[f] + ytt * v[t];
            i_f.norm().max(i_t.norm())
        })
        .collect();
    PfSolution {
        vm: v.iter().map(|x| x.norm()).collect(),
        va: v.iter().map(|x| x.arg()).collect(),
        branch_current,
        injection: calc_power(y, v),
        iterations,
        max_mismatch: worst,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    OverVoltage { bus: BusId, vm: f64, limit: f64 },
    OverCurrent { from: BusId, to: BusId, circuit: u32, current: f64, rating: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub violations: Vec<Violation>,
}

impl ConstraintReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Slack allowed above a limit before it counts as violated, so voltages held
/// exactly at the limit by generators do not trip on rounding.
const LIMIT_SLACK: f64 = 1e-9;

pub fn check_constraints(sol: &PfSolution, case: &StudyCase) -> ConstraintReport {
    let net = &case.network;
    let mut violations = Vec::new();
    for (i, bus) in net.buses.iter().enumerate() {
        if sol.vm[i] > bus.v_max + LIMIT_SLACK {
            violations.push(Violation::OverVoltage {
                bus: bus.id,
                vm: sol.vm[i],
                limit: bus.v_max,
            });
        }
    }
    for (k, br) in net.branches.iter().enumerate() {
        let rating = if br.current_rating.is_finite() {
            br.current_rating
        } else {
            case.config.branch_rating_pu
        };
        if let Some(&current) = sol.branch_current.get(k) {
            if current > rating + LIMIT_SLACK {
                violations.push(Violation::OverCurrent {
                    from: br.from_bus,
                    to: br.to_bus,
                    circuit: br.circuit,
                    current,
                    rating,
                });
            }
        }
    }
    ConstraintReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{attach_harmonic_config, Branch, Bus, NetworkCase, StudyConfig};
    use crate::scenario::FilterPlacement;
    use approx::assert_relative_eq;

    fn two_bus(p_mw: f64, x: f64) -> StudyCase {
        let net = NetworkCase::new(
            100.0,
            vec![
                Bus::new(1, BusKind::Slack, 138.0).with_generation(0.0, 1.0),
                Bus::new(2, BusKind::Pq, 138.0).with_load(p_mw, 0.0),
            ],
            vec![Branch::line(1, 2, 0.0, x, 0.0)],
        )
        .unwrap();
        attach_harmonic_config(net, StudyConfig::default()).unwrap()
    }

    #[test]
    fn no_load_is_flat() {
        let case = two_bus(0.0, 0.1);
        let sol = solve_power_flow(&case, &PlacementScenario::base()).unwrap();
        assert_relative_eq!(sol.vm[1], 1.0, epsilon = 1e-12);
        assert!(sol.va[1].abs() < 1e-12);
        assert!(sol.branch_current[0] < 1e-12);
    }

    #[test]
    fn two_bus_matches_closed_form() {
        // Lossless line, unity power factor load P: V⁴ - V² + (P x)² = 0 on the high root.
        let (p, x) = (1.0, 0.1);
        let case = two_bus(p * 100.0, x);
        let sol = solve_power_flow(&case, &PlacementScenario::base()).unwrap();
        let v2 = (1.0 + (1.0 - 4.0 * (p * x).powi(2)).sqrt()) / 2.0;
        assert_relative_eq!(sol.vm[1], v2.sqrt(), max_relative = 1e-9);
        assert_relative_eq!(sol.va[1].sin(), -p * x / sol.vm[1], max_relative = 1e-7);
        assert!(sol.max_mismatch < TOLERANCE);
    }

    #[test]
    fn slack_keeps_setpoint_and_balance_holds() {
        let case = two_bus(60.0, 0.1);
        let sol = solve_power_flow(&case, &PlacementScenario::base()).unwrap();
        assert_eq!(sol.vm[0], 1.0);
        let total: Complex64 = sol.injection.iter().sum();
        // Lossless network: net active injection is zero.
        assert!(total.re.abs() < 1e-6);
    }

    #[test]
    fn filter_raises_voltage_and_flags_limit() {
        let case = two_bus(0.0, 0.1);
        let filt = PlacementScenario::new(vec![FilterPlacement { bus: 2, q: 1.0, q_mvar: 20.0 }]).unwrap();
        let sol = solve_power_flow(&case, &filt).unwrap();
        // Shunt susceptance 0.2 pu behind x = 0.1: V = 1 / (1 - 0.02).
        assert_relative_eq!(sol.vm[1], 1.0 / 0.98, max_relative = 1e-9);
        let rep = check_constraints(&sol, &case);
        assert!(rep.is_feasible());

        let mut hi = sol.clone();
        hi.vm[1] = 1.06;
        let rep = check_constraints(&hi, &case);
        assert_eq!(rep.violations.len(), 1);
        assert!(matches!(rep.violations[0], Violation::OverVoltage { bus: 2, .. }));
    }

    #[test]
    fn filter_replaces_capacitor() {
        let mut case = two_bus(0.0, 0.1);
        case.network.buses[1].shunt_b = 0.5;
        let filt = PlacementScenario::new(vec![FilterPlacement { bus: 2, q: 1.0, q_mvar: 20.0 }]).unwrap();
        let y = fundamental_admittance(&case, &filt).unwrap();
        assert_relative_eq!(y[(1, 1)].im, -10.0 + 0.2, max_relative = 1e-12);
    }

    #[test]
    fn overcurrent_is_reported() {
        let mut case = two_bus(100.0, 0.1);
        case.network.branches[0].current_rating = 0.5;
        let sol = solve_power_flow(&case, &PlacementScenario::base()).unwrap();
        let rep = check_constraints(&sol, &case);
        assert!(matches!(rep.violations[..], [Violation::OverCurrent { from: 1, to: 2, .. }]));
    }

    #[test]
    fn heavy_load_diverges() {
        let case = two_bus(600.0, 0.1);
        assert!(matches!(
            solve_power_flow(&case, &PlacementScenario::base()),
            Err(Error::Divergence { .. }) | Err(Error::Singular(_))
        ));
    }
}
