//! Rigid-body quadrotor dynamics.
//!
//! The simulator frame has x = North, y = East and z = altitude (up), so
//! gravity is `-m g ẑ` and thrust acts along the body z-axis. Wind enters
//! in NED and is converted on the way in.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub mass: f64,
    /// Principal moments of inertia, kg m².
    pub inertia: [f64; 3],
    pub arm: f64,
    /// Rotor thrust coefficient, N s²/rad².
    pub k_t: f64,
    /// Ratio k_M / k_T of rotor drag torque to thrust, m.
    pub k_m_ratio: f64,
    pub spin: [f64; 4],
    pub tau_motor: f64,
    pub omega_max: f64,
    pub rho: f64,
    pub cd_xy: f64,
    pub cd_z: f64,
    pub g: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 2.59,
            inertia: [0.078, 0.082, 0.14],
            arm: 0.25,
            k_t: 1.1e-5,
            k_m_ratio: 0.055,
            spin: [1.0, -1.0, 1.0, -1.0],
            tau_motor: 0.10,
            omega_max: 1200.0,
            rho: 1.225,
            cd_xy: 0.072,
            cd_z: 0.10,
            g: 9.81,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.mass,
            self.inertia[0],
            self.inertia[1],
            self.inertia[2],
            self.arm,
            self.k_t,
            self.k_m_ratio,
            self.tau_motor,
            self.omega_max,
            self.rho,
            self.cd_xy,
            self.cd_z,
            self.g,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(
                "vehicle constants must all be positive and finite".into(),
            ));
        }
        if self.spin.iter().any(|s| *s != 1.0 && *s != -1.0) {
            return Err(Error::Config(format!(
                "rotor spin signs must be +1 or -1, got {:?}",
                self.spin
            )));
        }
        Ok(())
    }

    /// Rotor speed at which the four rotors together carry the weight.
    pub fn hover_speed(&self) -> f64 {
        (self.mass * self.g / (4.0 * self.k_t)).sqrt()
    }

    fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Roll, pitch, yaw (φ, θ, ψ), rad.
    pub attitude: Vector3<f64>,
    /// Body rates (p, q, r), rad/s.
    pub body_rates: Vector3<f64>,
    pub rotor_speeds: [f64; 4],
}

impl VehicleState {
    /// At rest, level, at `position`, with rotors spinning at `omega`.
    pub fn at_rest(position: Vector3<f64>, omega: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: Vector3::zeros(),
            body_rates: Vector3::zeros(),
            rotor_speeds: [omega; 4],
        }
    }

    fn axpy(&self, h: f64, d: &VehicleState) -> VehicleState {
        VehicleState {
            position: self.position + d.position * h,
            velocity: self.velocity + d.velocity * h,
            attitude: self.attitude + d.attitude * h,
            body_rates: self.body_rates + d.body_rates * h,
            rotor_speeds: std::array::from_fn(|i| self.rotor_speeds[i] + h * d.rotor_speeds[i]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.attitude.iter().all(|v| v.is_finite())
            && self.body_rates.iter().all(|v| v.is_finite())
            && self.rotor_speeds.iter().all(|v| v.is_finite())
    }
}

/// Body-to-inertial rotation for the yaw-pitch-roll sequence.
pub fn rotation_matrix(attitude: &Vector3<f64>) -> Matrix3<f64> {
    let (sp, cp) = attitude[0].sin_cos();
    let (st, ct) = attitude[1].sin_cos();
    let (ss, cs) = attitude[2].sin_cos();
    Matrix3::new(
        cs * ct,
        cs * st * sp - ss * cp,
        cs * st * cp + ss * sp,
        ss * ct,
        ss * st * sp + cs * cp,
        ss * st * cp - cs * sp,
        -st,
        ct * sp,
        ct * cp,
    )
}

/// Body z-axis expressed in the inertial frame.
pub fn body_z(attitude: &Vector3<f64>) -> Vector3<f64> {
    rotation_matrix(attitude).column(2).into_owned()
}

/// Maps body rates to Euler-angle rates.
pub fn euler_rate_matrix(phi: f64, theta: f64) -> Matrix3<f64> {
    let (sp, cp) = phi.sin_cos();
    let (tt, ct) = (theta.tan(), theta.cos());
    Matrix3::new(
        1.0,
        sp * tt,
        cp * tt,
        0.0,
        cp,
        -sp,
        0.0,
        sp / ct,
        cp / ct,
    )
}

/// Per-rotor thrusts `k_T ω²`.
pub fn rotor_forces(speeds: &[f64; 4], params: &VehicleParams) -> [f64; 4] {
    speeds.map(|w| params.k_t * w * w)
}

/// Total thrust and body torques produced by the rotors.
pub fn rotor_wrench(speeds: &[f64; 4], params: &VehicleParams) -> (f64, Vector3<f64>) {
    let f = rotor_forces(speeds, params);
    let total = f.iter().sum();
    let yaw: f64 = f.iter().zip(&params.spin).map(|(fi, s)| s * fi).sum();
    let tau = Vector3::new(
        params.arm * (f[3] - f[1]),
        params.arm * (f[0] - f[2]),
        params.k_m_ratio * yaw,
    );
    (total, tau)
}

/// Air-relative velocity in the simulator frame for a NED wind vector.
pub fn air_velocity(velocity: &Vector3<f64>, wind_ned: [f64; 3]) -> Vector3<f64> {
    velocity - Vector3::new(wind_ned[0], wind_ned[1], -wind_ned[2])
}

/// Quadratic drag on the air-relative velocity.
pub fn drag_force(velocity: &Vector3<f64>, wind_ned: [f64; 3], params: &VehicleParams) -> Vector3<f64> {
    let v_air = air_velocity(velocity, wind_ned);
    let speed = v_air.norm();
    let c = Vector3::new(params.cd_xy, params.cd_xy, params.cd_z);
    -0.5 * params.rho * speed * c.component_mul(&v_air)
}

/// Time derivative of the full state.
pub fn derivatives(
    state: &VehicleState,
    rotor_cmd: &[f64; 4],
    wind_ned: [f64; 3],
    params: &VehicleParams,
) -> Result<VehicleState> {
    let (phi, theta) = (state.attitude[0], state.attitude[1]);
    if theta.abs() >= PI / 2.0 || !theta.is_finite() {
        return Err(Error::Numerical(format!(
            "pitch {theta:.4} rad reached the Euler singularity"
        )));
    }
    let (thrust, tau) = rotor_wrench(&state.rotor_speeds, params);
    let drag = drag_force(&state.velocity, wind_ned, params);
    let gravity = Vector3::new(0.0, 0.0, params.mass * params.g);
    let accel = (thrust * body_z(&state.attitude) + drag - gravity) / params.mass;

    let j = params.inertia_matrix();
    let w = state.body_rates;
    let gyro = w.cross(&(j * w));
    let ang_accel = Vector3::from_fn(|i, _| (tau[i] - gyro[i]) / params.inertia[i]);

    Ok(VehicleState {
        position: state.velocity,
        velocity: accel,
        attitude: euler_rate_matrix(phi, theta) * w,
        body_rates: ang_accel,
        rotor_speeds: std::array::from_fn(|i| {
            (rotor_cmd[i] - state.rotor_speeds[i]) / params.tau_motor
        }),
    })
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// One RK4 step of length `dt` from time `t`. `wind` is queried with the
/// stage position and time and returns NED wind.
pub fn step(
    state: &VehicleState,
    t: f64,
    rotor_cmd: &[f64; 4],
    wind: &mut dyn FnMut(&Vector3<f64>, f64) -> Result<[f64; 3]>,
    dt: f64,
    params: &VehicleParams,
) -> Result<VehicleState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    let eval = |s: &VehicleState, tt: f64, wind: &mut dyn FnMut(&Vector3<f64>, f64) -> Result<[f64; 3]>| {
        let w = wind(&s.position, tt)?;
        derivatives(s, rotor_cmd, w, params)
    };
    let k1 = eval(state, t, wind)?;
    let k2 = eval(&state.axpy(0.5 * dt, &k1), t + 0.5 * dt, wind)?;
    let k3 = eval(&state.axpy(0.5 * dt, &k2), t + 0.5 * dt, wind)?;
    let k4 = eval(&state.axpy(dt, &k3), t + dt, wind)?;
    let mut next = state
        .axpy(dt / 6.0, &k1)
        .axpy(dt / 3.0, &k2)
        .axpy(dt / 3.0, &k3)
        .axpy(dt / 6.0, &k4);
    for w in next.rotor_speeds.iter_mut() {
        *w = w.clamp(0.0, params.omega_max);
    }
    next.attitude = next.attitude.map(wrap_angle);
    if !next.is_finite() {
        return Err(Error::Numerical("non-finite vehicle state".into()));
    }
    if next.attitude[1].abs() >= PI / 2.0 {
        return Err(Error::Numerical(format!(
            "pitch {:.4} rad reached the Euler singularity",
            next.attitude[1]
        )));
    }
    Ok(next)
}
