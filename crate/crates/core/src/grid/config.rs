//! Study configuration, loadable from JSON or TOML.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::limits::{IscIlClass, StandardLimits};
use super::BusId;
use crate::error::{Error, Result};

/// Harmonic current spectrum (percent of fundamental) for one short-circuit
/// ratio class: harmonic order → (mean %, standard deviation %).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub class: IscIlClass,
    pub harmonics: BTreeMap<u32, (f64, f64)>,
}

/// Default aggregate-load spectra for 69–161 kV loads. The `>1000` row is the
/// `100-1000` row scaled by the ratio of their TDD limits (10 / 7.5).
pub fn default_spectra() -> Vec<SpectrumRow> {
    let rows: [(IscIlClass, [(f64, f64); 3]); 4] = [
        (IscIlClass::Below20, [(0.20, 0.11), (1.00, 0.53), (0.72, 0.38)]),
        (IscIlClass::From20To50, [(0.32, 0.17), (1.61, 0.85), (1.15, 0.61)]),
        (IscIlClass::From50To100, [(0.48, 0.26), (2.41, 1.28), (1.72, 0.91)]),
        (IscIlClass::From100To1000, [(0.60, 0.32), (3.01, 1.60), (2.15, 1.14)]),
    ];
    let mut out: Vec<SpectrumRow> = rows
        .iter()
        .map(|(class, cells)| SpectrumRow {
            class: *class,
            harmonics: [3, 5, 7].into_iter().zip(cells.iter().copied()).collect(),
        })
        .collect();
    let scale = 10.0 / 7.5;
    let top = out[3]
        .harmonics
        .iter()
        .map(|(&h, &(m, s))| (h, (m * scale, s * scale)))
        .collect();
    out.push(SpectrumRow {
        class: IscIlClass::Above1000,
        harmonics: top,
    });
    out
}

/// Fundamental current that the harmonic ratios α are expressed against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentBasis {
    /// The nonlinear share K_E·|S| / |V|.
    #[default]
    NonlinearShare,
    /// The whole bus load current |S| / |V| (the demand current I_L of the
    /// current-distortion limits). K_E then only sizes the linear remainder.
    TotalLoad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub h_t: f64,
    pub q_min: f64,
    pub q_max: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            h_t: 3.0,
            q_min: 1.0,
            q_max: 2.3,
        }
    }
}

/// Which buses may host a filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSelection {
    /// Buses whose base voltage equals this value (within 0.5 kV).
    BaseKv(f64),
    Buses(Vec<BusId>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub q_grid: Vec<f64>,
    /// MVAR values tried when the maximum capacity violates constraints,
    /// in preference order.
    pub capacity_grid: Vec<f64>,
    /// d⁰, d¹, …; the last entry repeats for deeper levels.
    pub d_quantiles: Vec<f64>,
    pub max_filters: usize,
    pub candidates: CandidateSelection,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            q_grid: (0..=13).map(|i| 1.0 + 0.1 * i as f64).map(|q| (q * 10.0).round() / 10.0).collect(),
            capacity_grid: vec![20.0, 15.0, 10.0, 5.0],
            d_quantiles: vec![0.5],
            max_filters: 8,
            candidates: CandidateSelection::BaseKv(138.0),
        }
    }
}

impl SearchConfig {
    pub fn d_at(&self, level: usize) -> f64 {
        self.d_quantiles
            .get(level)
            .or(self.d_quantiles.last())
            .copied()
            .unwrap_or(0.5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub harmonics: Vec<u32>,
    pub fundamental_hz: f64,
    /// Nonlinear share of each load's apparent power.
    pub k_e: f64,
    pub k_e_overrides: BTreeMap<BusId, f64>,
    /// Restrict nonlinear loads to these buses (default: every load bus).
    pub nonlinear_buses: Option<Vec<BusId>>,
    /// Load transformer reactance on its own rating.
    pub x_tr_pu: f64,
    pub transformer_step_mva: f64,
    pub v_max_pu: f64,
    pub q_filter_max_mvar: f64,
    /// Thermal rating applied to branches without one in the case file.
    pub branch_rating_pu: f64,
    /// Generator subtransient reactance on machine base.
    pub gen_subtransient_pu: f64,
    /// Lower bound for the machine rating used to convert the subtransient
    /// reactance to the system base.
    pub gen_min_mva: f64,
    /// Beta support upper bound as a multiple of the per-harmonic current limit.
    pub support_factor: f64,
    /// Scale branch resistance by √h at harmonic order h.
    pub skin_effect: bool,
    pub current_basis: CurrentBasis,
    pub spectra: Vec<SpectrumRow>,
    pub limits: StandardLimits,
    pub filter: FilterConfig,
    pub search: SearchConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            harmonics: vec![3, 5, 7],
            fundamental_hz: 50.0,
            k_e: 0.2,
            k_e_overrides: BTreeMap::new(),
            nonlinear_buses: None,
            x_tr_pu: 0.13,
            transformer_step_mva: 50.0,
            v_max_pu: 1.05,
            q_filter_max_mvar: 20.0,
            branch_rating_pu: 999.0,
            gen_subtransient_pu: 0.2,
            gen_min_mva: 50.0,
            support_factor: 2.0,
            skin_effect: false,
            current_basis: CurrentBasis::NonlinearShare,
            spectra: default_spectra(),
            limits: StandardLimits::default(),
            filter: FilterConfig::default(),
            search: SearchConfig::default(),
        }
    }
}

impl StudyConfig {
    /// Loads a config from `.toml` or JSON (anything else).
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let cfg = if is_toml {
            Self::from_toml(&text)?
        } else {
            Self::from_json(&text)?
        };
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.harmonics.is_empty() {
            return Err(Error::Config("at least one harmonic order is required".into()));
        }
        if let Some(&h) = self.harmonics.iter().find(|&&h| h < 2) {
            return Err(Error::Config(format!("harmonic order {h} must be >= 2")));
        }
        let mut hs = self.harmonics.clone();
        hs.sort_unstable();
        hs.dedup();
        if hs.len() != self.harmonics.len() {
            return Err(Error::Config("duplicate harmonic orders".into()));
        }
        let frac_ok = |k: f64| (0.0..=1.0).contains(&k);
        if !frac_ok(self.k_e) {
            return Err(Error::Config(format!("k_e = {} outside [0, 1]", self.k_e)));
        }
        if let Some((bus, k)) = self.k_e_overrides.iter().find(|(_, &k)| !frac_ok(k)) {
            return Err(Error::Config(format!("k_e override {k} for bus {bus} outside [0, 1]")));
        }
        for (name, v) in [
            ("fundamental_hz", self.fundamental_hz),
            ("transformer_step_mva", self.transformer_step_mva),
            ("q_filter_max_mvar", self.q_filter_max_mvar),
            ("branch_rating_pu", self.branch_rating_pu),
            ("gen_subtransient_pu", self.gen_subtransient_pu),
            ("gen_min_mva", self.gen_min_mva),
            ("support_factor", self.support_factor),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.x_tr_pu < 0.0 {
            return Err(Error::Config("x_tr_pu must be nonnegative".into()));
        }
        if self.v_max_pu < 1.0 {
            return Err(Error::Config("v_max_pu must be >= 1.0".into()));
        }
        if !(self.filter.h_t > 1.0) {
            return Err(Error::Config(format!("filter h_t = {} must exceed 1", self.filter.h_t)));
        }
        if !(self.filter.q_min > 0.0 && self.filter.q_min <= self.filter.q_max) {
            return Err(Error::Config("filter q bounds must satisfy 0 < q_min <= q_max".into()));
        }
        let s = &self.search;
        if s.q_grid.is_empty() || s.capacity_grid.is_empty() || s.d_quantiles.is_empty() {
            return Err(Error::Config("search grids must be nonempty".into()));
        }
        if let Some(q) = s
            .q_grid
            .iter()
            .find(|&&q| q < self.filter.q_min - 1e-12 || q > self.filter.q_max + 1e-12)
        {
            return Err(Error::Config(format!("q grid value {q} outside filter q bounds")));
        }
        if s.capacity_grid.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::Config("capacity grid values must be positive".into()));
        }
        if s.d_quantiles.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config("d quantiles must be positive".into()));
        }
        if s.max_filters == 0 {
            return Err(Error::Config("max_filters must be >= 1".into()));
        }
        self.limits.validate()?;
        Ok(())
    }

    pub fn k_e_for(&self, bus: BusId) -> f64 {
        if let Some(&k) = self.k_e_overrides.get(&bus) {
            return k;
        }
        match &self.nonlinear_buses {
            Some(list) if !list.contains(&bus) => 0.0,
            _ => self.k_e,
        }
    }

    pub fn spectrum_row(&self, class: IscIlClass) -> Option<&SpectrumRow> {
        self.spectra.iter().find(|r| r.class == class)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = StudyConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.harmonics, vec![3, 5, 7]);
        assert_eq!(cfg.search.q_grid.len(), 14);
        assert_eq!(cfg.search.q_grid[13], 2.3);
    }

    #[test]
    fn table_spectrum_values() {
        let cfg = StudyConfig::default();
        let row = cfg.spectrum_row(IscIlClass::Below20).unwrap();
        assert_eq!(row.harmonics[&5], (1.00, 0.53));
        let top = cfg.spectrum_row(IscIlClass::Above1000).unwrap();
        assert!((top.harmonics[&5].0 - 3.01 * 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn json_and_toml_partial_configs() {
        let j = StudyConfig::from_json(r#"{"harmonics":[5,7],"k_e":0.3,"search":{"max_filters":3}}"#).unwrap();
        assert_eq!(j.harmonics, vec![5, 7]);
        assert_eq!(j.k_e, 0.3);
        assert_eq!(j.search.max_filters, 3);
        assert_eq!(j.search.capacity_grid, vec![20.0, 15.0, 10.0, 5.0]);

        let t = StudyConfig::from_toml("k_e = 0.1\nv_max_pu = 1.06\n[search]\ncandidates = { buses = [4, 5] }\n").unwrap();
        assert_eq!(t.k_e, 0.1);
        assert_eq!(t.search.candidates, CandidateSelection::Buses(vec![4, 5]));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(StudyConfig::from_json(r#"{"k_e": 1.5}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"harmonics": [1, 5]}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"unknown_key": 1}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"filter": {"h_t": 1.0}}"#).is_err());
    }

    #[test]
    fn full_round_trip() {
        let cfg = StudyConfig::default();
        let back = StudyConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn k_e_selection() {
        let mut cfg = StudyConfig::default();
        cfg.nonlinear_buses = Some(vec![2]);
        cfg.k_e_overrides.insert(3, 0.5);
        assert_eq!(cfg.k_e_for(2), 0.2);
        assert_eq!(cfg.k_e_for(3), 0.5);
        assert_eq!(cfg.k_e_for(4), 0.0);
    }
}
