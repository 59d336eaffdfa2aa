//! Closed-loop hover in a uniform wind, paired with drag-inversion
//! estimates at every logged tick after the settling time.

use nalgebra::Vector3;
use swarmwind::control::{ControlGains, Controller, ControllerState};
use swarmwind::estimator::drag_inversion_estimate;
use swarmwind::meanflow::{MeanWindParams, WindModel};
use swarmwind::mission::LogRow;
use swarmwind::turbulence::{TurbulenceSpec, TurbulentField};
use swarmwind::vehicle::{derivatives, step, VehicleParams, VehicleState};

/// Returns (estimate, truth) pairs sampled at 10 Hz over `[settle, end)`.
pub fn hover_estimates(speed: f64, from_deg: f64, settle: f64, end: f64) -> Vec<([f64; 3], [f64; 3])> {
    let spec = TurbulenceSpec {
        grid: [8, 8, 16],
        target_sigma: 0.0,
        ..TurbulenceSpec::default()
    };
    let mean = MeanWindParams {
        u_ref: speed,
        alpha: 0.0,
        kappa_veer: 0.0,
        gamma0: from_deg,
        delta_u: 0.0,
        ..MeanWindParams::default()
    };
    let wind = WindModel::new(mean, TurbulentField::zeros(&spec).unwrap()).unwrap();
    let params = VehicleParams::default();
    let controller = Controller::new(ControlGains::default(), params.clone()).unwrap();
    let reference = [0.0, 0.0, 100.0];
    let mut state = VehicleState::at_rest(Vector3::from(reference), params.hover_speed());
    let mut cstate = ControllerState::default();
    let mut query = |p: &Vector3<f64>, t: f64| wind.total_wind([p[0], p[1], p[2]], t);
    let dt = 0.01;
    let mut out_pairs = Vec::new();
    for tick in 0..(end / dt).round() as usize {
        let t = tick as f64 * dt;
        let (out, next) = controller.update(&state, reference, &cstate, dt).unwrap();
        cstate = next;
        if t >= settle && tick % 10 == 0 {
            let w = query(&state.position, t).unwrap();
            let d = derivatives(&state, &out.rotor_cmd, w, &params).unwrap();
            let row = LogRow {
                t,
                position: state.position.into(),
                velocity: state.velocity.into(),
                accel: d.velocity.into(),
                thrust_cmd: out.thrust,
                phi: state.attitude[0],
                theta: state.attitude[1],
                dx: state.position[0] - reference[0],
                dy: state.position[1] - reference[1],
                wind: w,
            };
            out_pairs.push((drag_inversion_estimate(&row, &params).wind, w));
        }
        state = step(&state, t, &out.rotor_cmd, &mut query, dt, &params).unwrap();
    }
    out_pairs
}
