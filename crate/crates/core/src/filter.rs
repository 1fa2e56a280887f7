//! C-type harmonic filter: C1 in series with R_p ∥ (L + C2), where L and C2
//! resonate at the fundamental so the damping resistor carries no
//! fundamental current.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BusId;

/// Practical range of the quality factor.
pub const Q_BOUNDS: (f64, f64) = (1.0, 2.3);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterElements {
    /// Farads.
    pub c1: f64,
    pub c2: f64,
    /// Henries.
    pub l: f64,
    /// Ohms.
    pub r_p: f64,
    /// Fundamental angular frequency, rad/s.
    pub omega0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CTypeFilter {
    pub bus: BusId,
    pub v_rated_kv: f64,
    pub q_mvar: f64,
    pub h_t: f64,
    pub q: f64,
    pub fundamental_hz: f64,
    /// Fundamental impedance magnitude, ohms.
    pub z_b: f64,
    pub r_p: f64,
    pub c1: f64,
    pub c2: f64,
    pub l: f64,
}

impl CTypeFilter {
    /// Designs a filter with `q` restricted to [`Q_BOUNDS`].
    pub fn design(bus: BusId, v_rated_kv: f64, q_mvar: f64, h_t: f64, q: f64, fundamental_hz: f64) -> Result<Self> {
        Self::design_bounded(bus, v_rated_kv, q_mvar, h_t, q, fundamental_hz, Q_BOUNDS)
    }

    pub fn design_bounded(
        bus: BusId,
        v_rated_kv: f64,
        q_mvar: f64,
        h_t: f64,
        q: f64,
        fundamental_hz: f64,
        q_bounds: (f64, f64),
    ) -> Result<Self> {
        if !(q_mvar > 0.0 && q_mvar.is_finite()) {
            return Err(Error::FilterDomain(format!("reactive capacity {q_mvar} MVAR must be positive")));
        }
        if !(v_rated_kv > 0.0 && v_rated_kv.is_finite()) {
            return Err(Error::FilterDomain(format!("rated voltage {v_rated_kv} kV must be positive")));
        }
        if !(h_t > 1.0 && h_t.is_finite()) {
            return Err(Error::FilterDomain(format!("tuning order {h_t} must exceed 1")));
        }
        // Small slack so grid points such as 1.0 + 13 * 0.1 are accepted.
        let eps = 1e-9;
        if !(q >= q_bounds.0 - eps && q <= q_bounds.1 + eps) {
            return Err(Error::FilterDomain(format!(
                "quality factor {q} outside [{}, {}]",
                q_bounds.0, q_bounds.1
            )));
        }
        if !(fundamental_hz > 0.0) {
            return Err(Error::FilterDomain(format!("fundamental frequency {fundamental_hz} Hz")));
        }
        let z_b = v_rated_kv * v_rated_kv / q_mvar;
        let omega0 = 2.0 * std::f64::consts::PI * fundamental_hz;
        let c1 = 1.0 / (omega0 * z_b);
        let c2 = c1 * (h_t * h_t - 1.0);
        let l = 1.0 / (omega0 * omega0 * c2);
        Ok(CTypeFilter {
            bus,
            v_rated_kv,
            q_mvar,
            h_t,
            q,
            fundamental_hz,
            z_b,
            r_p: q * z_b / h_t,
            c1,
            c2,
            l,
        })
    }

    pub fn elements(&self) -> FilterElements {
        FilterElements {
            c1: self.c1,
            c2: self.c2,
            l: self.l,
            r_p: self.r_p,
            omega0: 2.0 * std::f64::consts::PI * self.fundamental_hz,
        }
    }

    /// Closed-form impedance in ohms at harmonic order `h` (any real h > 0).
    pub fn impedance(&self, h: f64) -> Complex64 {
        let (q, ht) = (self.q, self.h_t);
        let a = h * h - 1.0;
        let b = ht * ht - 1.0;
        let den = ht * ht * a * a + q * q * h * h * b * b;
        let damped = Complex64::new(ht * a, q * h * b) * (q * a / den);
        (damped - Complex64::new(0.0, 1.0 / h)) * self.z_b
    }

    /// Impedance in per unit on the system base.
    pub fn impedance_pu(&self, h: f64, base_mva: f64) -> Complex64 {
        self.impedance(h) / (self.v_rated_kv * self.v_rated_kv / base_mva)
    }

    pub fn admittance_pu(&self, h: f64, base_mva: f64) -> Complex64 {
        self.impedance_pu(h, base_mva).inv()
    }

    /// Fundamental admittance in per unit: a pure susceptance Q / S_base.
    pub fn fundamental_susceptance_pu(&self, base_mva: f64) -> f64 {
        self.q_mvar / base_mva
    }
}

/// Composes the circuit from raw element values, independent of the closed form.
pub fn impedance_oracle(el: &FilterElements, h: f64) -> Complex64 {
    let w = el.omega0 * h;
    let j = Complex64::i();
    let z_c1 = -j / (w * el.c1);
    let z_lc2 = j * (w * el.l) - j / (w * el.c2);
    let z_r = Complex64::new(el.r_p, 0.0);
    let parallel = if z_lc2.norm() == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        z_r * z_lc2 / (z_r + z_lc2)
    };
    z_c1 + parallel
}
