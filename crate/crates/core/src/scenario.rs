//! Filter placement scenarios: which buses carry a C-type filter and how it is sized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::CTypeFilter;
use crate::grid::{BusId, StudyCase};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterPlacement {
    pub bus: BusId,
    pub q: f64,
    pub q_mvar: f64,
}

/// A set of filters, at most one per bus, kept sorted by bus id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlacementScenario {
    pub id: String,
    pub filters: Vec<FilterPlacement>,
}

impl PlacementScenario {
    pub fn base() -> Self {
        PlacementScenario {
            id: "base".into(),
            filters: Vec::new(),
        }
    }

    pub fn new(mut filters: Vec<FilterPlacement>) -> Result<Self> {
        filters.sort_by_key(|f| f.bus);
        if let Some(w) = filters.windows(2).find(|w| w[0].bus == w[1].bus) {
            return Err(Error::InvalidArgument(format!("two filters at bus {}", w[0].bus)));
        }
        let id = if filters.is_empty() {
            "base".to_string()
        } else {
            filters
                .iter()
                .map(|f| format!("{}:{}:{}", f.bus, f.q, f.q_mvar))
                .collect::<Vec<_>>()
                .join("+")
        };
        Ok(PlacementScenario { id, filters })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn is_base(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn buses(&self) -> Vec<BusId> {
        self.filters.iter().map(|f| f.bus).collect()
    }

    pub fn filter_at(&self, bus: BusId) -> Option<&FilterPlacement> {
        self.filters.iter().find(|f| f.bus == bus)
    }

    /// Designs every filter for the case, returning (bus index, design) pairs.
    pub fn designs(&self, case: &StudyCase) -> Result<Vec<(usize, CTypeFilter)>> {
        let fc = &case.config.filter;
        self.filters
            .iter()
            .map(|f| {
                let index = case.network.bus_index(f.bus)?;
                let kv = case.network.buses[index].base_kv;
                if f.q_mvar > case.config.q_filter_max_mvar + 1e-9 {
                    return Err(Error::FilterDomain(format!(
                        "filter at bus {} rated {} MVAR above the {} MVAR cap",
                        f.bus, f.q_mvar, case.config.q_filter_max_mvar
                    )));
                }
                let design = CTypeFilter::design_bounded(
                    f.bus,
                    kv,
                    f.q_mvar,
                    fc.h_t,
                    f.q,
                    case.config.fundamental_hz,
                    (fc.q_min, fc.q_max),
                )?;
                Ok((index, design))
            })
            .collect()
    }
}
