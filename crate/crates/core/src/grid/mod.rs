//! Fundamental-frequency network data and the stochastic study case built on it.

mod cdf;
mod config;
mod limits;
mod study;

pub use cdf::{parse_cdf, write_cdf};
pub use config::{default_spectra, CandidateSelection, CurrentBasis, FilterConfig, SearchConfig, SpectrumRow, StudyConfig};
pub use limits::{CurrentLimit, IscIlClass, StandardLimits, VoltageLimit};
pub use study::{
    attach_harmonic_config, isc_il_ratio, AggregateLoad, AlphaDistribution, GeneratorModel,
    StudyCase,
};

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};

pub type BusId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum BusKind {
    Pq,
    Pv,
    Slack,
}

impl BusKind {
    pub fn has_generator(self) -> bool {
        matches!(self, BusKind::Pv | BusKind::Slack)
    }
}

/// One bus card. Powers are in MW/MVAR, shunts in per unit on the system base.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub name: String,
    pub area: u32,
    pub zone: u32,
    pub kind: BusKind,
    /// CDF type code (0 and 1 both map to PQ); kept for round-tripping.
    pub cdf_type: u8,
    pub v_final: f64,
    pub angle_final_deg: f64,
    pub p_load: f64,
    pub q_load: f64,
    pub p_gen: f64,
    pub q_gen: f64,
    pub base_kv: f64,
    pub v_setpoint: f64,
    pub q_max: f64,
    pub q_min: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
    pub remote_bus: u32,
    pub v_max: f64,
}

impl Bus {
    pub fn new(id: BusId, kind: BusKind, base_kv: f64) -> Self {
        Bus {
            id,
            name: format!("Bus {id}"),
            area: 1,
            zone: 1,
            kind,
            cdf_type: match kind {
                BusKind::Pq => 0,
                BusKind::Pv => 2,
                BusKind::Slack => 3,
            },
            v_final: 1.0,
            angle_final_deg: 0.0,
            p_load: 0.0,
            q_load: 0.0,
            p_gen: 0.0,
            q_gen: 0.0,
            base_kv,
            v_setpoint: 1.0,
            q_max: 0.0,
            q_min: 0.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
            remote_bus: 0,
            v_max: 1.05,
        }
    }

    pub fn with_load(mut self, p_mw: f64, q_mvar: f64) -> Self {
        self.p_load = p_mw;
        self.q_load = q_mvar;
        self
    }

    pub fn with_generation(mut self, p_mw: f64, v_setpoint: f64) -> Self {
        self.p_gen = p_mw;
        self.v_setpoint = v_setpoint;
        self.v_final = v_setpoint;
        self
    }

    pub fn with_shunt(mut self, g: f64, b: f64) -> Self {
        self.shunt_g = g;
        self.shunt_b = b;
        self
    }

    /// Voltage magnitude held by PV/slack buses.
    pub fn held_voltage(&self) -> f64 {
        if self.v_setpoint > 0.0 {
            self.v_setpoint
        } else if self.v_final > 0.0 {
            self.v_final
        } else {
            1.0
        }
    }

    pub fn load_mva(&self) -> f64 {
        self.p_load.hypot(self.q_load)
    }
}

/// Branch card. Impedances in per unit on the system base.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub area: u32,
    pub zone: u32,
    pub circuit: u32,
    pub cdf_type: u8,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    pub rating_mva: [f64; 3],
    pub control_bus: u32,
    pub side: u32,
    /// Off-nominal turns ratio at the from side; 0 in the file means nominal.
    pub tap_ratio: f64,
    pub shift_deg: f64,
    pub tap_min: f64,
    pub tap_max: f64,
    pub step: f64,
    pub limit_min: f64,
    pub limit_max: f64,
    /// Thermal current limit, per unit of base current.
    pub current_rating: f64,
}

impl Branch {
    pub fn line(from_bus: BusId, to_bus: BusId, r: f64, x: f64, b_charging: f64) -> Self {
        Branch {
            from_bus,
            to_bus,
            area: 1,
            zone: 1,
            circuit: 1,
            cdf_type: 0,
            r,
            x,
            b_charging,
            rating_mva: [0.0; 3],
            control_bus: 0,
            side: 0,
            tap_ratio: 0.0,
            shift_deg: 0.0,
            tap_min: 0.0,
            tap_max: 0.0,
            step: 0.0,
            limit_min: 0.0,
            limit_max: 0.0,
            current_rating: f64::INFINITY,
        }
    }

    pub fn effective_tap(&self) -> f64 {
        if self.tap_ratio == 0.0 {
            1.0
        } else {
            self.tap_ratio
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct NetworkCase {
    pub title: String,
    pub date: String,
    pub originator: String,
    pub base_mva: f64,
    pub year: u32,
    pub season: char,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(skip)]
    index: HashMap<BusId, usize>,
}

impl PartialEq for NetworkCase {
    fn eq(&self, other: &Self) -> bool {
        self.title == other.title
            && self.date == other.date
            && self.originator == other.originator
            && self.base_mva == other.base_mva
            && self.year == other.year
            && self.season == other.season
            && self.buses == other.buses
            && self.branches == other.branches
    }
}

impl NetworkCase {
    /// Builds a case and checks the structural invariants: unique bus ids,
    /// exactly one slack, positive base voltages, valid branch endpoints and
    /// nonzero series reactance.
    pub fn new(base_mva: f64, buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Self> {
        let mut case = NetworkCase {
            title: String::new(),
            date: String::new(),
            originator: String::new(),
            base_mva,
            year: 0,
            season: 'S',
            buses,
            branches,
            index: HashMap::new(),
        };
        case.reindex()?;
        case.validate()?;
        Ok(case)
    }

    pub(crate) fn reindex(&mut self) -> Result<()> {
        self.index.clear();
        for (i, bus) in self.buses.iter().enumerate() {
            if self.index.insert(bus.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", bus.id)));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(Error::Validation(format!("base MVA {} must be positive", self.base_mva)));
        }
        let slacks: Vec<BusId> = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .collect();
        match slacks.len() {
            0 => return Err(Error::Validation("no slack bus".into())),
            1 => {}
            _ => return Err(Error::Validation(format!("multiple slack buses {slacks:?}"))),
        }
        for bus in &self.buses {
            if !(bus.base_kv > 0.0) {
                return Err(Error::Validation(format!("bus {} has base kV {}", bus.id, bus.base_kv)));
            }
            if bus.v_max < 1.0 {
                return Err(Error::Validation(format!("bus {} has v_max {} < 1.0", bus.id, bus.v_max)));
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            for end in [br.from_bus, br.to_bus] {
                if !self.index.contains_key(&end) {
                    return Err(Error::Validation(format!("branch {k} references unknown bus {end}")));
                }
            }
            if br.from_bus == br.to_bus {
                return Err(Error::Validation(format!("branch {k} connects bus {} to itself", br.from_bus)));
            }
            if br.x == 0.0 {
                return Err(Error::Validation(format!(
                    "branch {}-{} has zero series reactance",
                    br.from_bus, br.to_bus
                )));
            }
        }
        Ok(())
    }

    /// Buses not reachable from the slack through branches.
    pub fn islanded_buses(&self) -> Vec<BusId> {
        let reach = self.reachable_from(&[self.slack_index()]);
        self.buses
            .iter()
            .zip(reach)
            .filter(|(_, r)| !r)
            .map(|(b, _)| b.id)
            .collect()
    }

    pub fn validate_connectivity(&self) -> Result<()> {
        let islanded = self.islanded_buses();
        if islanded.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("buses not connected to the slack: {islanded:?}")))
        }
    }

    pub(crate) fn reachable_from(&self, roots: &[usize]) -> Vec<bool> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            let (f, t) = (self.index[&br.from_bus], self.index[&br.to_bus]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = roots.iter().copied().collect();
        for &r in roots {
            seen[r] = true;
        }
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    }

    pub fn len(&self) -> usize {
        self.buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }

    pub fn bus_index(&self, id: BusId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownBus(id))
    }

    pub fn bus(&self, id: BusId) -> Result<&Bus> {
        Ok(&self.buses[self.bus_index(id)?])
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn bus_ids(&self) -> Vec<BusId> {
        self.buses.iter().map(|b| b.id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus() -> (Vec<Bus>, Vec<Branch>) {
        (
            vec![
                Bus::new(1, BusKind::Slack, 138.0).with_generation(0.0, 1.0),
                Bus::new(2, BusKind::Pq, 138.0).with_load(10.0, 5.0),
            ],
            vec![Branch::line(1, 2, 0.01, 0.1, 0.0)],
        )
    }

    #[test]
    fn valid_case_builds() {
        let (buses, branches) = two_bus();
        let case = NetworkCase::new(100.0, buses, branches).unwrap();
        assert_eq!(case.len(), 2);
        assert_eq!(case.bus_index(2).unwrap(), 1);
        assert!(case.islanded_buses().is_empty());
    }

    #[test]
    fn rejects_missing_or_duplicate_slack() {
        let (mut buses, branches) = two_bus();
        buses[0].kind = BusKind::Pv;
        assert!(matches!(NetworkCase::new(100.0, buses.clone(), branches.clone()), Err(Error::Validation(_))));
        buses[0].kind = BusKind::Slack;
        buses[1].kind = BusKind::Slack;
        assert!(NetworkCase::new(100.0, buses, branches).is_err());
    }

    #[test]
    fn rejects_bad_branches() {
        let (buses, _) = two_bus();
        assert!(NetworkCase::new(100.0, buses.clone(), vec![Branch::line(1, 2, 0.0, 0.0, 0.0)]).is_err());
        assert!(NetworkCase::new(100.0, buses.clone(), vec![Branch::line(2, 2, 0.0, 0.1, 0.0)]).is_err());
        assert!(NetworkCase::new(100.0, buses, vec![Branch::line(1, 9, 0.0, 0.1, 0.0)]).is_err());
    }

    #[test]
    fn detects_islands() {
        let (mut buses, branches) = two_bus();
        buses.push(Bus::new(3, BusKind::Pq, 138.0));
        let case = NetworkCase::new(100.0, buses, branches).unwrap();
        assert_eq!(case.islanded_buses(), vec![3]);
        assert!(case.validate_connectivity().is_err());
    }
}
