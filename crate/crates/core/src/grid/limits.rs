//! IEEE-519 style limit tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voltage distortion limits for buses rated at or below `kv_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageLimit {
    #[serde(with = "unbounded", default = "unbounded::infinity")]
    pub kv_max: f64,
    pub ihd_pct: f64,
    pub thd_pct: f64,
}

/// Current distortion limits for short-circuit ratios below `ratio_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentLimit {
    #[serde(with = "unbounded", default = "unbounded::infinity")]
    pub ratio_max: f64,
    pub harmonic_pct: f64,
    pub tdd_pct: f64,
}

/// Short-circuit to load current ratio class, one per current-limit row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IscIlClass {
    Below20,
    From20To50,
    From50To100,
    From100To1000,
    Above1000,
}

impl IscIlClass {
    pub const ALL: [IscIlClass; 5] = [
        IscIlClass::Below20,
        IscIlClass::From20To50,
        IscIlClass::From50To100,
        IscIlClass::From100To1000,
        IscIlClass::Above1000,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            IscIlClass::Below20 => "<20",
            IscIlClass::From20To50 => "20-50",
            IscIlClass::From50To100 => "50-100",
            IscIlClass::From100To1000 => "100-1000",
            IscIlClass::Above1000 => ">1000",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardLimits {
    /// Sorted ascending by `kv_max`; the last row should cover infinity.
    pub voltage: Vec<VoltageLimit>,
    /// Sorted ascending by `ratio_max`, one row per [`IscIlClass`].
    pub current: Vec<CurrentLimit>,
}

impl Default for StandardLimits {
    fn default() -> Self {
        StandardLimits {
            voltage: vec![
                VoltageLimit { kv_max: 1.0, ihd_pct: 5.0, thd_pct: 8.0 },
                VoltageLimit { kv_max: 69.0, ihd_pct: 3.0, thd_pct: 5.0 },
                VoltageLimit { kv_max: 161.0, ihd_pct: 1.5, thd_pct: 2.5 },
                VoltageLimit { kv_max: f64::INFINITY, ihd_pct: 1.0, thd_pct: 1.5 },
            ],
            current: vec![
                CurrentLimit { ratio_max: 20.0, harmonic_pct: 2.0, tdd_pct: 2.5 },
                CurrentLimit { ratio_max: 50.0, harmonic_pct: 3.5, tdd_pct: 4.0 },
                CurrentLimit { ratio_max: 100.0, harmonic_pct: 5.0, tdd_pct: 6.0 },
                CurrentLimit { ratio_max: 1000.0, harmonic_pct: 6.0, tdd_pct: 7.5 },
                CurrentLimit { ratio_max: f64::INFINITY, harmonic_pct: 7.5, tdd_pct: 10.0 },
            ],
        }
    }
}

impl StandardLimits {
    pub fn validate(&self) -> Result<()> {
        if self.voltage.is_empty() {
            return Err(Error::Config("voltage limit table is empty".into()));
        }
        if self.current.len() != IscIlClass::ALL.len() {
            return Err(Error::Config(format!(
                "current limit table needs {} rows, got {}",
                IscIlClass::ALL.len(),
                self.current.len()
            )));
        }
        for w in self.voltage.windows(2) {
            if w[1].kv_max <= w[0].kv_max {
                return Err(Error::Config("voltage classes must be sorted by kv_max".into()));
            }
        }
        for w in self.current.windows(2) {
            if w[1].ratio_max <= w[0].ratio_max {
                return Err(Error::Config("current classes must be sorted by ratio_max".into()));
            }
        }
        for v in &self.voltage {
            if !(v.ihd_pct > 0.0 && v.thd_pct > 0.0) || v.ihd_pct > v.thd_pct {
                return Err(Error::Config(format!(
                    "voltage class up to {} kV: need 0 < IHD ({}) <= THD ({})",
                    v.kv_max, v.ihd_pct, v.thd_pct
                )));
            }
        }
        for c in &self.current {
            if !(c.harmonic_pct > 0.0 && c.tdd_pct > 0.0) {
                return Err(Error::Config("current limits must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn voltage_limit(&self, kv: f64) -> &VoltageLimit {
        self.voltage
            .iter()
            .find(|v| kv <= v.kv_max)
            .unwrap_or_else(|| self.voltage.last().expect("validated table"))
    }

    pub fn current_class(&self, ratio: f64) -> IscIlClass {
        let idx = self
            .current
            .iter()
            .position(|c| ratio < c.ratio_max)
            .unwrap_or(self.current.len() - 1);
        IscIlClass::ALL[idx.min(IscIlClass::ALL.len() - 1)]
    }

    pub fn current_limit(&self, class: IscIlClass) -> &CurrentLimit {
        &self.current[class.index()]
    }
}

/// Upper bounds serialize infinity as `null` so JSON round-trips.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn infinity() -> f64 {
        f64::INFINITY
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
