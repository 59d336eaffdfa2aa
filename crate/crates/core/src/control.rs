//! Cascaded multirotor controller: horizontal PID with back-calculation,
//! velocity-limited altitude loop, acceleration-to-attitude map, attitude
//! PD and rotor allocation.

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{body_z, VehicleParams, VehicleState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlGains {
    pub kp_xy: [f64; 2],
    pub ki_xy: [f64; 2],
    pub kd_xy: [f64; 2],
    pub a_xy_max: f64,
    pub aw_xy: f64,
    pub k_v: f64,
    pub vz_max: f64,
    pub kp_v: f64,
    pub kd_v: f64,
    pub ki_v: f64,
    pub az_max: f64,
    pub aw_z: f64,
    pub kp_att: [f64; 3],
    pub kd_att: [f64; 3],
    pub tau_max: [f64; 3],
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            kp_xy: [1.3, 1.3],
            ki_xy: [0.15, 0.08],
            kd_xy: [1.4, 1.4],
            a_xy_max: 0.95 * 9.81 * 35f64.to_radians().tan(),
            aw_xy: 0.5,
            k_v: 1.1,
            vz_max: 4.0,
            kp_v: 5.0,
            kd_v: 0.20,
            ki_v: 0.04,
            az_max: 5.0,
            aw_z: 0.3,
            kp_att: [1.3, 1.3, 1.2],
            kd_att: [0.9, 0.9, 0.7],
            tau_max: [4.0, 4.0, 3.0],
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<()> {
        let gains = self
            .kp_xy
            .iter()
            .chain(&self.ki_xy)
            .chain(&self.kd_xy)
            .chain(&self.kp_att)
            .chain(&self.kd_att)
            .chain([&self.aw_xy, &self.k_v, &self.kp_v, &self.kd_v, &self.ki_v, &self.aw_z]);
        if gains.into_iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Config("controller gains must be finite and >= 0".into()));
        }
        let limits = self
            .tau_max
            .iter()
            .chain([&self.a_xy_max, &self.vz_max, &self.az_max]);
        if limits.into_iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Config("controller limits must be positive".into()));
        }
        Ok(())
    }
}

/// Integrator memory of the position loops.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControllerState {
    pub integ_x: f64,
    pub integ_y: f64,
    pub integ_z: f64,
}

/// Horizontal PID with vector saturation and back-calculation.
pub fn horizontal_accel(
    e_xy: [f64; 2],
    v_xy: [f64; 2],
    cstate: &ControllerState,
    gains: &ControlGains,
    dt: f64,
) -> Result<([f64; 2], ControllerState)> {
    check_dt(dt)?;
    let mut next = *cstate;
    next.integ_x += e_xy[0] * dt;
    next.integ_y += e_xy[1] * dt;
    let integ = [next.integ_x, next.integ_y];
    let pid: [f64; 2] = std::array::from_fn(|i| {
        gains.kp_xy[i] * e_xy[i] + gains.ki_xy[i] * integ[i] - gains.kd_xy[i] * v_xy[i]
    });
    let mag = pid[0].hypot(pid[1]);
    if mag <= gains.a_xy_max {
        return Ok((pid, next));
    }
    let scale = gains.a_xy_max / mag;
    let cmd = [pid[0] * scale, pid[1] * scale];
    if gains.ki_xy[0] > 0.0 {
        next.integ_x -= gains.aw_xy * (pid[0] - cmd[0]) / gains.ki_xy[0];
    }
    if gains.ki_xy[1] > 0.0 {
        next.integ_y -= gains.aw_xy * (pid[1] - cmd[1]) / gains.ki_xy[1];
    }
    Ok((cmd, next))
}

/// Altitude loop: saturated velocity reference, PI-D acceleration command.
pub fn vertical_accel(
    z: f64,
    z_ref: f64,
    v_z: f64,
    cstate: &ControllerState,
    gains: &ControlGains,
    dt: f64,
) -> Result<(f64, ControllerState)> {
    check_dt(dt)?;
    let mut next = *cstate;
    let e_z = z_ref - z;
    next.integ_z += e_z * dt;
    let v_ref = (gains.k_v * e_z).clamp(-gains.vz_max, gains.vz_max);
    let raw = gains.kp_v * (v_ref - v_z) + gains.ki_v * next.integ_z - gains.kd_v * v_z;
    let cmd = raw.clamp(-gains.az_max, gains.az_max);
    if cmd != raw && gains.ki_v > 0.0 {
        next.integ_z -= gains.aw_z * (raw - cmd) / gains.ki_v;
    }
    Ok((cmd, next))
}

/// Desired roll, pitch and thrust direction for a commanded acceleration,
/// with yaw held at zero.
pub fn attitude_map(a_des: [f64; 3], g: f64) -> Result<(f64, f64, Vector3<f64>)> {
    let v = Vector3::new(a_des[0], a_des[1], g + a_des[2]);
    let n = v.norm();
    if !(n > 1e-12 && n.is_finite()) {
        return Err(Error::Domain(format!(
            "desired specific force {v:?} has no direction"
        )));
    }
    let t = v / n;
    let theta = t[0].atan2(t[2]);
    let phi = (-t[1]).clamp(-1.0, 1.0).asin();
    Ok((phi, theta, t))
}

/// Attitude PD with per-axis torque limits.
pub fn attitude_pd(
    eta_des: &Vector3<f64>,
    eta: &Vector3<f64>,
    body_rates: &Vector3<f64>,
    gains: &ControlGains,
) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        let tau = gains.kp_att[i] * (eta_des[i] - eta[i]) - gains.kd_att[i] * body_rates[i];
        tau.clamp(-gains.tau_max[i], gains.tau_max[i])
    })
}

/// Collective thrust with tilt compensation floored at `0.2`.
pub fn thrust_command(a_z_cmd: f64, z_bz: f64, mass: f64, g: f64) -> f64 {
    mass * (g + a_z_cmd) / z_bz.max(0.2)
}

/// Inverse of the thrust/torque allocation matrix for a parameter set.
#[derive(Clone, Debug)]
pub struct Allocator {
    inverse: Matrix4<f64>,
    k_t: f64,
    omega_max: f64,
}

impl Allocator {
    pub fn new(params: &VehicleParams) -> Result<Self> {
        let (l, k) = (params.arm, params.k_m_ratio);
        let s = params.spin;
        let a = Matrix4::new(
            1.0,
            1.0,
            1.0,
            1.0,
            0.0,
            -l,
            0.0,
            l,
            l,
            0.0,
            -l,
            0.0,
            k * s[0],
            k * s[1],
            k * s[2],
            k * s[3],
        );
        let inverse = a.try_inverse().ok_or_else(|| {
            Error::Config(format!(
                "allocation matrix is singular for arm {l}, k_m_ratio {k}, spin {s:?}"
            ))
        })?;
        if !(params.k_t > 0.0) {
            return Err(Error::Config("k_t must be positive".into()));
        }
        Ok(Self {
            inverse,
            k_t: params.k_t,
            omega_max: params.omega_max,
        })
    }

    /// Unclipped rotor forces for a thrust/torque demand.
    pub fn forces(&self, thrust: f64, tau: &Vector3<f64>) -> [f64; 4] {
        let f = self.inverse * Vector4::new(thrust, tau[0], tau[1], tau[2]);
        [f[0], f[1], f[2], f[3]]
    }

    /// Rotor speed commands: negative forces clipped, speeds saturated.
    pub fn speeds(&self, thrust: f64, tau: &Vector3<f64>) -> [f64; 4] {
        self.forces(thrust, tau)
            .map(|f| (f.max(0.0) / self.k_t).sqrt().clamp(0.0, self.omega_max))
    }
}

/// One-shot allocation; see [`Allocator`] for repeated use.
pub fn allocate(thrust: f64, tau: &Vector3<f64>, params: &VehicleParams) -> Result<[f64; 4]> {
    Ok(Allocator::new(params)?.speeds(thrust, tau))
}

/// Everything the cascade produces in one update.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlOutput {
    pub rotor_cmd: [f64; 4],
    pub thrust: f64,
    pub torque: Vector3<f64>,
    pub accel_cmd: [f64; 3],
    pub attitude_des: Vector3<f64>,
}

/// A controller bound to one vehicle's parameters.
#[derive(Clone, Debug)]
pub struct Controller {
    pub gains: ControlGains,
    pub params: VehicleParams,
    allocator: Allocator,
}

impl Controller {
    pub fn new(gains: ControlGains, params: VehicleParams) -> Result<Self> {
        gains.validate()?;
        params.validate()?;
        let allocator = Allocator::new(&params)?;
        Ok(Self {
            gains,
            params,
            allocator,
        })
    }

    /// Runs the full cascade for one tick.
    pub fn update(
        &self,
        state: &VehicleState,
        reference: [f64; 3],
        cstate: &ControllerState,
        dt: f64,
    ) -> Result<(ControlOutput, ControllerState)> {
        let g = self.params.g;
        let e_xy = [
            reference[0] - state.position[0],
            reference[1] - state.position[1],
        ];
        let v_xy = [state.velocity[0], state.velocity[1]];
        let (a_xy, cs) = horizontal_accel(e_xy, v_xy, cstate, &self.gains, dt)?;
        let (a_z, cs) = vertical_accel(
            state.position[2],
            reference[2],
            state.velocity[2],
            &cs,
            &self.gains,
            dt,
        )?;
        let accel_cmd = [a_xy[0], a_xy[1], a_z];
        let (phi_des, theta_des, _) = attitude_map(accel_cmd, g)?;
        let attitude_des = Vector3::new(phi_des, theta_des, 0.0);
        let torque = attitude_pd(&attitude_des, &state.attitude, &state.body_rates, &self.gains);
        let z_bz = body_z(&state.attitude)[2];
        let thrust = thrust_command(a_z, z_bz, self.params.mass, g);
        let rotor_cmd = self.allocator.speeds(thrust, &torque);
        Ok((
            ControlOutput {
                rotor_cmd,
                thrust,
                torque,
                accel_cmd,
                attitude_des,
            },
            cs,
        ))
    }
}

/// Free-function form of [`Controller::update`].
pub fn controller_update(
    state: &VehicleState,
    reference: [f64; 3],
    cstate: &ControllerState,
    gains: &ControlGains,
    params: &VehicleParams,
    dt: f64,
) -> Result<([f64; 4], ControllerState)> {
    let c = Controller::new(gains.clone(), params.clone())?;
    let (out, cs) = c.update(state, reference, cstate, dt)?;
    Ok((out.rotor_cmd, cs))
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time step must be positive, got {dt}")))
    }
}
