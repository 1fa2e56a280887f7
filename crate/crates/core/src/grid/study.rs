//! Study case: the network plus per-load stochastic harmonic models.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::config::StudyConfig;
use super::limits::{IscIlClass, StandardLimits, VoltageLimit};
use super::{BusId, NetworkCase};
use crate::error::{Error, Result};
use crate::linalg;

/// Harmonic current magnitude as a fraction of the nonlinear load's
/// fundamental current, modeled as a beta variable scaled to `[0, support_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaDistribution {
    pub mean: f64,
    pub sd: f64,
    pub support_max: f64,
}

impl AlphaDistribution {
    /// A zero standard deviation gives a point mass at `mean`.
    pub fn new(mean: f64, sd: f64, support_max: f64) -> Result<Self> {
        let d = AlphaDistribution { mean, sd, support_max };
        d.check()?;
        Ok(d)
    }

    pub fn point(value: f64) -> Self {
        AlphaDistribution {
            mean: value,
            sd: 0.0,
            support_max: value.max(f64::MIN_POSITIVE),
        }
    }

    fn check(&self) -> Result<()> {
        let bad = || Error::InfeasibleBeta {
            mean: self.mean,
            sd: self.sd,
            support_max: self.support_max,
        };
        if !(self.mean.is_finite() && self.sd.is_finite() && self.support_max.is_finite()) {
            return Err(bad());
        }
        if self.sd == 0.0 {
            return if self.mean >= 0.0 && self.mean <= self.support_max {
                Ok(())
            } else {
                Err(bad())
            };
        }
        let room = self.mean * (self.support_max - self.mean);
        if self.sd > 0.0 && self.mean > 0.0 && self.mean < self.support_max && self.sd * self.sd < room {
            Ok(())
        } else {
            Err(bad())
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.sd == 0.0
    }

    /// Beta shape parameters (a, b) on the unit interval; `None` for a point mass.
    pub fn beta_shape(&self) -> Option<(f64, f64)> {
        if self.is_deterministic() {
            return None;
        }
        let m = self.mean / self.support_max;
        let v = (self.sd / self.support_max).powi(2);
        let c = m * (1.0 - m) / v - 1.0;
        Some((m * c, (1.0 - m) * c))
    }

    /// Inverse CDF at `u` in [0, 1].
    pub fn quantile(&self, u: f64) -> f64 {
        match self.beta_shape() {
            None => self.mean,
            Some((a, b)) => self.support_max * crate::special::inv_beta_reg(a, b, u),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        AlphaDistribution {
            mean: self.mean * c,
            sd: self.sd * c,
            support_max: self.support_max * c,
        }
    }
}

/// Bus-level aggregate of downstream loads: a nonlinear share `k_e` that
/// injects harmonic current and a linear parallel R-L remainder, both behind
/// a step-down transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateLoad {
    pub bus: BusId,
    pub index: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
    pub s_total: f64,
    pub k_e: f64,
    /// Transformer reactance on its own rating.
    pub x_tr: f64,
    pub transformer_mva: f64,
    pub isc_il_ratio: f64,
    pub isc_il_class: IscIlClass,
    pub spectrum: BTreeMap<u32, AlphaDistribution>,
}

impl AggregateLoad {
    /// Transformer reactance on the system base.
    pub fn x_tr_system(&self, base_mva: f64) -> f64 {
        self.x_tr * base_mva / self.transformer_mva
    }

    pub fn is_nonlinear(&self) -> bool {
        self.k_e > 0.0
    }
}

/// Least multiple of `step` that is at least `s` (and at least one step).
pub fn transformer_rating(s_mva: f64, step_mva: f64) -> f64 {
    let n = (s_mva / step_mva * (1.0 - 1e-12)).ceil().max(1.0);
    n * step_mva
}

/// Synchronous machine seen at harmonic frequencies as a subtransient reactance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub bus: BusId,
    pub index: usize,
    pub machine_mva: f64,
    /// Subtransient reactance on machine base.
    pub x_subtransient: f64,
}

impl GeneratorModel {
    pub fn x_system(&self, base_mva: f64) -> f64 {
        self.x_subtransient * base_mva / self.machine_mva
    }
}

/// Immutable network plus harmonic study data; shared read-only by all workers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyCase {
    pub network: NetworkCase,
    pub config: StudyConfig,
    pub loads: Vec<AggregateLoad>,
    pub generators: Vec<GeneratorModel>,
}

impl StudyCase {
    pub fn base_mva(&self) -> f64 {
        self.network.base_mva
    }

    pub fn len(&self) -> usize {
        self.network.len()
    }

    pub fn is_empty(&self) -> bool {
        self.network.is_empty()
    }

    pub fn harmonics(&self) -> &[u32] {
        &self.config.harmonics
    }

    pub fn limits(&self) -> &StandardLimits {
        &self.config.limits
    }

    pub fn voltage_limit(&self, index: usize) -> &VoltageLimit {
        self.config.limits.voltage_limit(self.network.buses[index].base_kv)
    }

    pub fn load_at(&self, bus: BusId) -> Option<&AggregateLoad> {
        self.loads.iter().find(|l| l.bus == bus)
    }

    pub fn nonlinear_loads(&self) -> impl Iterator<Item = &AggregateLoad> {
        self.loads.iter().filter(|l| l.is_nonlinear())
    }
}

pub fn attach_harmonic_config(mut network: NetworkCase, config: StudyConfig) -> Result<StudyCase> {
    config.validate()?;
    for bus in &mut network.buses {
        bus.v_max = config.v_max_pu;
    }
    for &bus in config
        .nonlinear_buses
        .iter()
        .flatten()
        .chain(config.k_e_overrides.keys())
    {
        let b = network.bus(bus)?;
        if b.load_mva() == 0.0 {
            return Err(Error::Config(format!("nonlinear load configured at bus {bus}, which carries no load")));
        }
    }

    let base = network.base_mva;
    let generators: Vec<GeneratorModel> = network
        .buses
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind.has_generator())
        .map(|(index, b)| {
            let q_cap = b.q_max.abs().max(b.q_min.abs());
            GeneratorModel {
                bus: b.id,
                index,
                machine_mva: b.p_gen.hypot(q_cap).max(config.gen_min_mva),
                x_subtransient: config.gen_subtransient_pu,
            }
        })
        .collect();

    let load_buses: Vec<usize> = (0..network.len())
        .filter(|&i| network.buses[i].load_mva() > 0.0)
        .collect();
    let z_diag = driving_point_impedances(&network, &generators, config.skin_effect)?;

    let mut loads = Vec::with_capacity(load_buses.len());
    for index in load_buses {
        let bus = &network.buses[index];
        let s_total = bus.load_mva();
        let ratio = short_circuit_ratio(z_diag[index], s_total / base);
        if ratio.is_nan() {
            return Err(Error::NoPath(bus.id));
        }
        let class = config.limits.current_class(ratio);
        let k_e = config.k_e_for(bus.id);
        let spectrum = spectrum_for(&config, class)?;
        loads.push(AggregateLoad {
            bus: bus.id,
            index,
            p_mw: bus.p_load,
            q_mvar: bus.q_load,
            s_total,
            k_e,
            x_tr: config.x_tr_pu,
            transformer_mva: transformer_rating(s_total, config.transformer_step_mva),
            isc_il_ratio: ratio,
            isc_il_class: class,
            spectrum,
        });
    }

    Ok(StudyCase {
        network,
        config,
        loads,
        generators,
    })
}

fn spectrum_for(config: &StudyConfig, class: IscIlClass) -> Result<BTreeMap<u32, AlphaDistribution>> {
    let row = config
        .spectrum_row(class)
        .ok_or_else(|| Error::Config(format!("no spectrum row for Isc/IL class {}", class.label())))?;
    let limit = config.limits.current_limit(class).harmonic_pct / 100.0;
    let support = config.support_factor * limit;
    config
        .harmonics
        .iter()
        .map(|&h| {
            let &(mean, sd) = row.harmonics.get(&h).ok_or_else(|| {
                Error::Config(format!("spectrum row {} has no entry for harmonic {h}", class.label()))
            })?;
            Ok((h, AlphaDistribution::new(mean / 100.0, sd / 100.0, support)?))
        })
        .collect()
}

/// Short-circuit to load current ratio at 1 pu prefault voltage.
fn short_circuit_ratio(z_kk: Complex64, load_pu: f64) -> f64 {
    let isc = 1.0 / z_kk.norm();
    if !isc.is_finite() || isc == 0.0 {
        return f64::NAN;
    }
    if load_pu == 0.0 {
        f64::INFINITY
    } else {
        isc / load_pu
    }
}

/// Diagonal of the fundamental impedance matrix with loads and bus shunts
/// removed and generators behind subtransient reactance. Buses without a
/// path to a generator get NaN.
fn driving_point_impedances(
    network: &NetworkCase,
    generators: &[GeneratorModel],
    skin_effect: bool,
) -> Result<Vec<Complex64>> {
    let roots: Vec<usize> = generators.iter().map(|g| g.index).collect();
    let reach = network.reachable_from(&roots);
    let keep: Vec<usize> = (0..network.len()).filter(|&i| reach[i]).collect();

    let mut y = crate::harmonic::branch_admittance(network, 1.0, skin_effect);
    for g in generators {
        y[(g.index, g.index)] += Complex64::new(0.0, -1.0 / g.x_system(network.base_mva));
    }
    let y_sub = y.select_rows(&keep).select_columns(&keep);
    let z = linalg::invert(y_sub).map_err(|_| Error::Singular("fundamental short-circuit admittance".into()))?;

    let mut diag = vec![Complex64::new(f64::NAN, f64::NAN); network.len()];
    for (k, &i) in keep.iter().enumerate() {
        diag[i] = z[(k, k)];
    }
    Ok(diag)
}

/// Isc/IL at `bus`, from the driving-point impedance with loads removed.
pub fn isc_il_ratio(case: &StudyCase, bus: BusId) -> Result<f64> {
    let index = case.network.bus_index(bus)?;
    let z = driving_point_impedances(&case.network, &case.generators, case.config.skin_effect)?;
    let load = case.network.buses[index].load_mva() / case.base_mva();
    let ratio = short_circuit_ratio(z[index], load);
    if ratio.is_nan() {
        Err(Error::NoPath(bus))
    } else {
        Ok(ratio)
    }
}
