//! Harmonic network model: per-order admittance assembly, transfer
//! impedances, and the U/θ injection basis that maps stochastic load
//! harmonics to bus voltage distortion.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AggregateLoad, AlphaDistribution, Branch, BusId, CurrentBasis, NetworkCase, StudyCase};
use crate::linalg::{self, CMatrix};
use crate::pf::PfSolution;
use crate::scenario::PlacementScenario;

/// π-model stamps `[y_ff, y_ft, y_tf, y_tt]` at harmonic order `h`.
/// Series impedance is r + j·h·x (r·√h with `skin`), charging j·h·b/2 per end.
pub fn branch_terms(br: &Branch, h: f64, skin: bool, with_shift: bool) -> [Complex64; 4] {
    let r = if skin { br.r * h.sqrt() } else { br.r };
    let ys = Complex64::new(r, h * br.x).inv();
    let bc = Complex64::new(0.0, h * br.b_charging / 2.0);
    let shift = if with_shift { br.shift_deg.to_radians() } else { 0.0 };
    let a = Complex64::from_polar(br.effective_tap(), shift);
    [
        (ys + bc) / a.norm_sqr(),
        -ys / a.conj(),
        -ys / a,
        ys + bc,
    ]
}

/// Bus shunt at order `h`: capacitive susceptance grows with h, inductive falls.
pub fn shunt_admittance(g: f64, b: f64, h: f64) -> Complex64 {
    let b_h = if b >= 0.0 { b * h } else { b / h };
    Complex64::new(g, b_h)
}

/// Branch-only admittance matrix (no shunts, loads, generators or filters).
pub fn branch_admittance(net: &NetworkCase, h: f64, skin: bool) -> CMatrix {
    let n = net.len();
    let mut y = CMatrix::zeros(n, n);
    for br in &net.branches {
        let f = net.bus_index(br.from_bus).expect("validated case");
        let t = net.bus_index(br.to_bus).expect("validated case");
        let [yff, yft, ytf, ytt] = branch_terms(br, h, skin, false);
        y[(f, f)] += yff;
        y[(f, t)] += yft;
        y[(t, f)] += ytf;
        y[(t, t)] += ytt;
    }
    y
}

/// Linear share of an aggregate load at order `h`, seen from the transformer's
/// low-voltage side: R ∥ jh·X_L sized from the (1 − K_E) share at `v_mag`.
/// `None` when there is no linear share.
pub fn linear_load_impedance(load: &AggregateLoad, v_mag: f64, base_mva: f64, h: f64) -> Option<Complex64> {
    let share = 1.0 - load.k_e;
    let p = share * load.p_mw / base_mva;
    let q = share * load.q_mvar / base_mva;
    let v2 = v_mag * v_mag;
    let g = if p > 0.0 { p / v2 } else { 0.0 };
    // Inductive: B = -Q/(h V²); capacitive: B = -h Q/V².
    let b = if q >= 0.0 { -q / (v2 * h) } else { -q * h / v2 };
    let y = Complex64::new(g, b);
    if y.norm() == 0.0 {
        None
    } else {
        Some(y.inv())
    }
}

/// Current division from the nonlinear source to the system side:
/// Z_L / (Z_L + jX), with X the transformer reactance already at order h.
pub fn transfer_multiplier(z_l: Option<Complex64>, x_tr_h: f64) -> Result<Complex64> {
    match z_l {
        None => Ok(Complex64::new(1.0, 0.0)),
        Some(z) => {
            let den = z + Complex64::new(0.0, x_tr_h);
            if den.norm() <= f64::EPSILON * z.norm().max(1.0) {
                Err(Error::Singular("linear load resonates with its transformer".into()))
            } else {
                Ok(z / den)
            }
        }
    }
}

/// System-side multiplier at order `h` and the nonlinear share's fundamental
/// current magnitude (pu) for one aggregate load.
pub fn transfer_injection(case: &StudyCase, load: &AggregateLoad, h: f64, pf: &PfSolution) -> Result<(Complex64, f64)> {
    let base = case.base_mva();
    let v = pf.vm[load.index];
    let z_l = linear_load_impedance(load, v, base, h);
    let m = transfer_multiplier(z_l, h * load.x_tr_system(base))?;
    Ok((m, injection_current(case, load, v)))
}

/// Fundamental current magnitude the α ratios refer to; zero without a nonlinear share.
pub fn injection_current(case: &StudyCase, load: &AggregateLoad, v_mag: f64) -> f64 {
    if !load.is_nonlinear() {
        return 0.0;
    }
    let s = load.s_total / case.base_mva() / v_mag;
    match case.config.current_basis {
        CurrentBasis::NonlinearShare => load.k_e * s,
        CurrentBasis::TotalLoad => s,
    }
}

fn check_order(h: f64) -> Result<()> {
    if h >= 2.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::HarmonicOrder(h))
    }
}

pub fn build_harmonic_admittance(
    case: &StudyCase,
    scenario: &PlacementScenario,
    h: f64,
    pf: &PfSolution,
) -> Result<CMatrix> {
    check_order(h)?;
    assemble(case, scenario, h, pf)
}

/// Assembly without the order check, for frequency sweeps below the 2nd harmonic.
pub fn assemble(case: &StudyCase, scenario: &PlacementScenario, h: f64, pf: &PfSolution) -> Result<CMatrix> {
    let net = &case.network;
    let base = net.base_mva;
    let mut y = branch_admittance(net, h, case.config.skin_effect);
    for (i, bus) in net.buses.iter().enumerate() {
        let has_filter = scenario.filter_at(bus.id).is_some();
        let b = if has_filter && bus.shunt_b > 0.0 { 0.0 } else { bus.shunt_b };
        y[(i, i)] += shunt_admittance(bus.shunt_g, b, h);
    }
    for load in &case.loads {
        if let Some(z_l) = linear_load_impedance(load, pf.vm[load.index], base, h) {
            let z = z_l + Complex64::new(0.0, h * load.x_tr_system(base));
            if z.norm() == 0.0 {
                return Err(Error::Singular(format!("load branch at bus {} is a short", load.bus)));
            }
            y[(load.index, load.index)] += z.inv();
        }
    }
    for g in &case.generators {
        y[(g.index, g.index)] += Complex64::new(0.0, h * g.x_system(base)).inv();
    }
    for (i, filter) in scenario.designs(case)? {
        y[(i, i)] += filter.admittance_pu(h, base);
    }
    Ok(y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicImpedanceSet {
    pub scenario_id: String,
    pub harmonics: Vec<u32>,
    pub z: Vec<CMatrix>,
}

impl HarmonicImpedanceSet {
    /// `h,bus,re,im` rows of the driving-point impedances.
    pub fn diagonal_csv(&self, case: &StudyCase) -> String {
        let mut out = String::from("h,bus,z_re,z_im\n");
        for (k, &h) in self.harmonics.iter().enumerate() {
            for (i, b) in case.network.buses.iter().enumerate() {
                let z = self.z[k][(i, i)];
                out.push_str(&format!("{h},{},{:.10e},{:.10e}\n", b.id, z.re, z.im));
            }
        }
        out
    }
}

pub fn build_impedance_set(case: &StudyCase, scenario: &PlacementScenario, pf: &PfSolution) -> Result<HarmonicImpedanceSet> {
    let z = case
        .harmonics()
        .iter()
        .map(|&h| linalg::invert(build_harmonic_admittance(case, scenario, h as f64, pf)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(HarmonicImpedanceSet {
        scenario_id: scenario.id.clone(),
        harmonics: case.harmonics().to_vec(),
        z,
    })
}

/// One nonlinear load as seen by the distortion model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injector {
    pub bus: BusId,
    pub index: usize,
    /// Fundamental current magnitude of the nonlinear share, pu.
    pub current: f64,
    /// Fundamental current angle, radians.
    pub angle: f64,
    pub spectrum: BTreeMap<u32, AlphaDistribution>,
}

/// Per harmonic, U (N × J, nonnegative) and θ (N × J) over the J injectors,
/// so V_k = Σ_j U_kj α_j e^{i(θ_kj + φ_j)} in per unit of rated voltage.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionBasis {
    pub harmonics: Vec<u32>,
    pub n_buses: usize,
    pub injectors: Vec<Injector>,
    pub u: Vec<DMatrix<f64>>,
    pub theta: Vec<DMatrix<f64>>,
}

impl InjectionBasis {
    /// U ∘ e^{jθ} for harmonic slot `k`.
    pub fn complex(&self, k: usize) -> CMatrix {
        self.u[k].zip_map(&self.theta[k], |u, t| Complex64::from_polar(u, t))
    }

    /// U for slot `k` expanded to N × N, with zero columns at non-injecting buses.
    pub fn u_full(&self, k: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_buses, self.n_buses);
        for (j, inj) in self.injectors.iter().enumerate() {
            out.set_column(inj.index, &self.u[k].column(j));
        }
        out
    }

    pub fn alpha(&self, k: usize, j: usize) -> &AlphaDistribution {
        &self.injectors[j].spectrum[&self.harmonics[k]]
    }

    /// `h,bus,injector_bus,u,theta` rows.
    pub fn to_csv(&self, case: &StudyCase) -> String {
        let mut out = String::from("h,bus,injector,u,theta\n");
        for (k, &h) in self.harmonics.iter().enumerate() {
            for (i, b) in case.network.buses.iter().enumerate() {
                for (j, inj) in self.injectors.iter().enumerate() {
                    out.push_str(&format!(
                        "{h},{},{},{:.10e},{:.10e}\n",
                        b.id, inj.bus, self.u[k][(i, j)], self.theta[k][(i, j)]
                    ));
                }
            }
        }
        out
    }
}

fn injectors(case: &StudyCase, pf: &PfSolution) -> Vec<Injector> {
    case.loads
        .iter()
        .filter(|l| l.is_nonlinear())
        .map(|l| {
            let v = pf.voltage(l.index);
            Injector {
                bus: l.bus,
                index: l.index,
                current: injection_current(case, l, v.norm()),
                angle: v.arg() - l.q_mvar.atan2(l.p_mw),
                spectrum: l.spectrum.clone(),
            }
        })
        .collect()
}

pub fn build_injection_basis(case: &StudyCase, scenario: &PlacementScenario, pf: &PfSolution) -> Result<InjectionBasis> {
    let inj = injectors(case, pf);
    let cols: Vec<usize> = inj.iter().map(|i| i.index).collect();
    let n = case.len();
    let mut u = Vec::with_capacity(case.harmonics().len());
    let mut theta = Vec::with_capacity(case.harmonics().len());
    for &h in case.harmonics() {
        let hf = h as f64;
        let y = build_harmonic_admittance(case, scenario, hf, pf)?;
        let z = linalg::inverse_columns(y, &cols)?;
        let mut uh = DMatrix::zeros(n, cols.len());
        let mut th = DMatrix::zeros(n, cols.len());
        for (j, injector) in inj.iter().enumerate() {
            let load = case.load_at(injector.bus).expect("injector built from a load");
            let (m, _) = transfer_injection(case, load, hf, pf)?;
            let phase = m.arg() + hf * injector.angle;
            for k in 0..n {
                let zm = z[(k, j)] * m;
                uh[(k, j)] = zm.norm() * injector.current;
                th[(k, j)] = z[(k, j)].arg() + phase;
            }
        }
        u.push(uh);
        theta.push(th);
    }
    Ok(InjectionBasis {
        harmonics: case.harmonics().to_vec(),
        n_buses: n,
        injectors: inj,
        u,
        theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::CTypeFilter;
    use crate::grid::{attach_harmonic_config, Bus, BusKind, StudyConfig};
    use crate::pf::solve_power_flow;
    use crate::scenario::FilterPlacement;
    use approx::assert_relative_eq;

    fn three_bus(k_e: f64) -> StudyCase {
        let net = NetworkCase::new(
            100.0,
            vec![
                Bus::new(1, BusKind::Slack, 138.0).with_generation(0.0, 1.0),
                Bus::new(2, BusKind::Pq, 138.0).with_load(40.0, 15.0),
                Bus::new(3, BusKind::Pq, 138.0).with_load(25.0, 10.0).with_shunt(0.0, 0.1),
            ],
            vec![
                Branch::line(1, 2, 0.01, 0.08, 0.02),
                Branch::line(2, 3, 0.02, 0.10, 0.02),
                Branch::line(1, 3, 0.01, 0.12, 0.03),
            ],
        )
        .unwrap();
        let mut cfg = StudyConfig::default();
        cfg.k_e = k_e;
        attach_harmonic_config(net, cfg).unwrap()
    }

    #[test]
    fn lossless_line_scales_linearly() {
        let br = Branch::line(1, 2, 0.0, 0.1, 0.0);
        let [yff, ..] = branch_terms(&br, 5.0, false, false);
        assert_relative_eq!(yff.inv().im, 0.5, max_relative = 1e-14);
        assert_eq!(yff.inv().re, 0.0);
    }

    #[test]
    fn multiplier_cases() {
        assert_eq!(transfer_multiplier(Some(Complex64::new(0.3, 0.4)), 0.0).unwrap(), Complex64::new(1.0, 0.0));
        assert_eq!(transfer_multiplier(None, 0.13).unwrap(), Complex64::new(1.0, 0.0));
        let m = transfer_multiplier(Some(Complex64::new(0.0, 1.0)), 0.13).unwrap();
        assert_relative_eq!(m.re, 1.0 / 1.13, max_relative = 1e-14);
        assert!(m.im.abs() < 1e-15);
        let big = transfer_multiplier(Some(Complex64::new(1e12, 0.0)), 0.13).unwrap();
        assert!((big - 1.0).norm() < 1e-12);
        assert!(transfer_multiplier(Some(Complex64::new(0.0, -0.13)), 0.13).is_err());
    }

    #[test]
    fn harmonic_order_below_two_is_rejected() {
        let case = three_bus(0.2);
        let pf = PfSolution::flat(3);
        assert!(matches!(
            build_harmonic_admittance(&case, &PlacementScenario::base(), 1.0, &pf),
            Err(Error::HarmonicOrder(_))
        ));
    }

    #[test]
    fn single_bus_filter_only() {
        let net = NetworkCase::new(100.0, vec![Bus::new(1, BusKind::Slack, 138.0)], vec![]).unwrap();
        let mut case = attach_harmonic_config(net, StudyConfig::default()).unwrap();
        case.generators.clear();
        let s = PlacementScenario::new(vec![FilterPlacement { bus: 1, q: 1.0, q_mvar: 20.0 }]).unwrap();
        let y = build_harmonic_admittance(&case, &s, 3.0, &PfSolution::flat(1)).unwrap();
        let f = CTypeFilter::design(1, 138.0, 20.0, 3.0, 1.0, 50.0).unwrap();
        let oracle = crate::filter::impedance_oracle(&f.elements(), 3.0) / (138.0 * 138.0 / 100.0);
        assert!((y[(0, 0)] * oracle - 1.0).norm() < 1e-9);
    }

    #[test]
    fn impedance_set_is_symmetric_inverse() {
        let case = three_bus(0.2);
        let pf = solve_power_flow(&case, &PlacementScenario::base()).unwrap();
        let set = build_impedance_set(&case, &PlacementScenario::base(), &pf).unwrap();
        for (k, &h) in set.harmonics.iter().enumerate() {
            let y = build_harmonic_admittance(&case, &PlacementScenario::base(), h as f64, &pf).unwrap();
            let prod = &set.z[k] * &y;
            for r in 0..3 {
                for c in 0..3 {
                    let e = if r == c { 1.0 } else { 0.0 };
                    assert!((prod[(r, c)] - e).norm() < 1e-9);
                    let z = &set.z[k];
                    assert!((z[(r, c)] - z[(c, r)]).norm() <= 1e-10 * z[(r, c)].norm());
                }
            }
        }
    }

    #[test]
    fn zero_k_e_gives_empty_basis() {
        let case = three_bus(0.0);
        let pf = solve_power_flow(&case, &PlacementScenario::base()).unwrap();
        let basis = build_injection_basis(&case, &PlacementScenario::base(), &pf).unwrap();
        assert!(basis.injectors.is_empty());
        assert!(basis.u_full(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_ihd_equals_phasor_sum() {
        let case = three_bus(0.2);
        let scen = PlacementScenario::base();
        let pf = solve_power_flow(&case, &scen).unwrap();
        let basis = build_injection_basis(&case, &scen, &pf).unwrap();
        let phis = [0.3, 2.1];
        for (k, &h) in case.harmonics().iter().enumerate() {
            let hf = h as f64;
            let z = linalg::invert(build_harmonic_admittance(&case, &scen, hf, &pf).unwrap()).unwrap();
            // Source currents transferred through each load's transformer, then Z·I.
            let mut inj = vec![Complex64::new(0.0, 0.0); 3];
            for (j, load) in case.loads.iter().enumerate() {
                let alpha = load.spectrum[&h].mean;
                let v = pf.voltage(load.index);
                let s = Complex64::new(load.p_mw, load.q_mvar) * load.k_e / 100.0;
                let i1 = (s / v).conj();
                let i_nl = Complex64::from_polar(alpha * i1.norm(), hf * i1.arg() + phis[j]);
                let z_l = linear_load_impedance(load, v.norm(), 100.0, hf).unwrap();
                let x = Complex64::new(0.0, hf * load.x_tr_system(100.0));
                inj[load.index] += z_l / (z_l + x) * i_nl;
            }
            for bus in 0..3 {
                let direct: Complex64 = (0..3).map(|j| z[(bus, j)] * inj[j]).sum();
                let via_basis: Complex64 = (0..basis.injectors.len())
                    .map(|j| {
                        let a = basis.alpha(k, j).mean;
                        Complex64::from_polar(basis.u[k][(bus, j)] * a, basis.theta[k][(bus, j)] + phis[j])
                    })
                    .sum();
                assert_relative_eq!(via_basis.norm(), direct.norm(), max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn reactor_scales_inversely() {
        assert_eq!(shunt_admittance(0.0, -0.5, 5.0).im, -0.1);
        assert_eq!(shunt_admittance(0.0, 0.5, 5.0).im, 2.5);
    }
}
