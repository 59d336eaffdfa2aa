//! Mean wind profile and its composition with frozen turbulence.
//!
//! Internally the turbulence grid uses x = North, y = East, z = altitude
//! (up). The returned wind vector is NED: `(V_N, V_E, V_D)` with
//! `V_D = -w'`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::turbulence::TurbulentField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanWindParams {
    /// Speed at `z_ref`, m/s.
    pub u_ref: f64,
    /// Reference height, m.
    pub z_ref: f64,
    /// Power-law shear exponent.
    pub alpha: f64,
    /// Direction the wind blows from at the surface, degrees.
    pub gamma0: f64,
    /// Veer, degrees per 100 m.
    pub kappa_veer: f64,
    /// Gust amplitude, m/s.
    pub delta_u: f64,
    /// Gust period, s.
    pub t_gust: f64,
}

impl Default for MeanWindParams {
    fn default() -> Self {
        Self {
            u_ref: 5.0,
            z_ref: 10.0,
            alpha: 0.14,
            gamma0: 0.0,
            kappa_veer: 2.0,
            delta_u: 0.0,
            t_gust: 60.0,
        }
    }
}

impl MeanWindParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.u_ref,
            self.z_ref,
            self.alpha,
            self.gamma0,
            self.kappa_veer,
            self.delta_u,
            self.t_gust,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("mean wind parameters must be finite".into()));
        }
        if self.z_ref <= 0.0 || self.t_gust <= 0.0 || self.u_ref < 0.0 {
            return Err(Error::Config(format!(
                "mean wind needs z_ref > 0, t_gust > 0 and u_ref >= 0 (got {}, {}, {})",
                self.z_ref, self.t_gust, self.u_ref
            )));
        }
        Ok(())
    }

    /// Gust-free speed `U_ref (max(z, z_ref)/z_ref)^α`.
    pub fn base_speed(&self, z: f64) -> f64 {
        self.u_ref * (z.max(self.z_ref) / self.z_ref).powf(self.alpha)
    }

    /// Horizontal (N, E) mean components for a given speed at height `z`.
    fn components(&self, speed: f64, z: f64) -> (f64, f64) {
        let g = direction(z, self).to_radians();
        (-speed * g.cos(), -speed * g.sin())
    }

    /// Frozen-field displacement of the turbulence at height `z` after
    /// time `t`, in grid coordinates (x = N, y = E, z up).
    pub fn frozen_shift(&self, z: f64, t: f64) -> [f64; 3] {
        let (un, ue) = self.components(self.base_speed(z), z);
        [un * t, ue * t, 0.0]
    }
}

/// Effective mean speed at height `z` and time `t`.
pub fn mean_speed(z: f64, p: &MeanWindParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    Ok(p.base_speed(z) + p.delta_u * (2.0 * PI * t / p.t_gust).sin())
}

/// Mean wind direction (blowing from) at height `z`, degrees.
pub fn direction(z: f64, p: &MeanWindParams) -> f64 {
    p.gamma0 + p.kappa_veer * z / 100.0
}

/// Mean wind in NED at height `z` and time `t`; the vertical part is zero.
pub fn mean_wind(z: f64, p: &MeanWindParams, t: f64) -> Result<[f64; 3]> {
    let u = mean_speed(z, p, t)?;
    let (un, ue) = p.components(u, z);
    Ok([un, ue, 0.0])
}

/// The ground-truth wind: a mean profile plus an advected turbulent field.
#[derive(Clone, Debug)]
pub struct WindModel {
    pub mean: MeanWindParams,
    pub field: Arc<TurbulentField>,
}

impl WindModel {
    pub fn new(mean: MeanWindParams, field: TurbulentField) -> Result<Self> {
        mean.validate()?;
        Ok(Self {
            mean,
            field: Arc::new(field),
        })
    }

    /// Upper end of the queryable column, m.
    pub fn top(&self) -> f64 {
        self.field.spec.domain_size[2]
    }

    /// Total wind `(V_N, V_E, V_D)` at `position` (x = N, y = E, z up).
    pub fn total_wind(&self, position: [f64; 3], t: f64) -> Result<[f64; 3]> {
        let z = position[2];
        if !(0.0..=self.top()).contains(&z) {
            return Err(Error::Domain(format!(
                "height {z} m is outside the wind column [0, {}]",
                self.top()
            )));
        }
        let mean = mean_wind(z, &self.mean, t)?;
        let fluct = self
            .field
            .sample(position, self.mean.frozen_shift(z, t))?;
        Ok([mean[0] + fluct[0], mean[1] + fluct[1], -fluct[2]])
    }

    /// Turbulence-free reference wind at `position`.
    pub fn mean_only(&self, position: [f64; 3], t: f64) -> Result<[f64; 3]> {
        mean_wind(position[2], &self.mean, t)
    }
}
