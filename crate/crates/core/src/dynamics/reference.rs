//! Independent check on the closed-form engine: both branches integrated
//! separately in absolute coordinates with an embedded Dormand–Prince 5(4)
//! pair, the force taken directly from the Hamiltonian gradient, and tooth
//! crossings located by bisection on the field sign.

use crate::error::{Error, Result};
use crate::field::{IdealToothField, Polarity};
use crate::model::{derive_quantities, Scenario};
use crate::schedule::PulseSchedule;

use super::{check_bounds, make_sample, recombination_from, stops, BranchState, SampleKind, SegmentPiece, SimulationResult, SpinLabel};

/// Crossings are bracketed to this width before the step is cut there, s.
const EVENT_TIME_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepControl {
    /// Error-controlled steps at the given relative tolerance.
    Adaptive { rel_tol: f64 },
    /// Fixed nominal step (still cut at events), fifth-order solution.
    Fixed { step: f64 },
}

// Dormand–Prince 5(4) tableau
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

type State = [f64; 4];

/// Transverse force on one branch, straight from the energy gradient.
struct ForceModel {
    moment: f64,
    diamagnetic: f64,
    gradient: f64,
    bias: f64,
    tilt_force: f64,
    inertia: f64,
}

impl ForceModel {
    fn new(s: &Scenario) -> Self {
        let c = &s.constants;
        let d = &s.diamond;
        Self {
            moment: d.g_factor_parallel * c.bohr_magneton,
            diamagnetic: d.susceptibility.abs() * d.volume / c.vacuum_permeability,
            gradient: s.geometry.gradient_magnitude,
            bias: s.geometry.bias_field,
            tilt_force: d.mass * c.g_surface * s.frame.phi.sin(),
            inertia: s.oscillator_mass(),
        }
    }

    /// −∂H/∂x divided by the oscillator mass.
    fn accel(&self, x: f64, spin: SpinLabel, sigma: Polarity) -> f64 {
        let gp = sigma.value() * self.gradient;
        let field = gp * x + self.bias;
        -(self.moment * spin.sz() * gp + self.diamagnetic * field * gp + self.tilt_force) / self.inertia
    }

    fn rhs(&self, y: &State, spins: (SpinLabel, SpinLabel), sigma: Polarity) -> State {
        [y[1], self.accel(y[0], spins.0, sigma), y[3], self.accel(y[2], spins.1, sigma)]
    }

    fn equilibrium(&self, spin: SpinLabel, sigma: Polarity) -> f64 {
        // a(x) is affine: x_eq = -a(0)/a'(x)
        let a0 = self.accel(0.0, spin, sigma);
        let a1 = self.accel(1.0, spin, sigma) - a0;
        -a0 / a1
    }
}

fn dp_step(f: &ForceModel, y: &State, h: f64, spins: (SpinLabel, SpinLabel), sigma: Polarity) -> (State, State) {
    let mut k = [[0.0; 4]; 7];
    for i in 0..7 {
        let mut yi = *y;
        for (j, kj) in k.iter().enumerate().take(i) {
            for n in 0..4 {
                yi[n] += h * A[i][j] * kj[n];
            }
        }
        k[i] = f.rhs(&yi, spins, sigma);
    }
    let mut y5 = *y;
    let mut err = [0.0; 4];
    for i in 0..7 {
        for n in 0..4 {
            y5[n] += h * B5[i] * k[i][n];
            err[n] += h * (B5[i] - B4[i]) * k[i][n];
        }
    }
    (y5, err)
}

/// Same contract as [`super::simulate_branches`], by adaptive numerical
/// integration at relative tolerance `rel_tol` (1e-12 ..= 1e-6).
pub fn integrate_reference(scenario: &Scenario, schedule: &PulseSchedule, rel_tol: f64) -> Result<SimulationResult> {
    if !(1e-12..=1e-6).contains(&rel_tol) {
        return Err(Error::InvalidArgument(format!("relTol must lie in [1e-12, 1e-6], got {rel_tol}")));
    }
    integrate_reference_with(scenario, schedule, StepControl::Adaptive { rel_tol })
}

pub fn integrate_reference_with(scenario: &Scenario, schedule: &PulseSchedule, control: StepControl) -> Result<SimulationResult> {
    let derived = derive_quantities(scenario)?;
    let force = ForceModel::new(scenario);
    let field = IdealToothField::new(scenario.geometry);
    let kin = schedule.kinematics;
    let close = schedule.close_time();
    let stops = stops(schedule, scenario.sampling_interval);

    let scale_x = derived.equilibrium_offset;
    let scale_v = derived.equilibrium_offset * derived.angular_frequency;
    // no step may span two crossings
    let shortest_tooth = scenario.geometry.tooth_width * scenario.geometry.first_tooth_fraction.min(1.0);
    let h_max = 0.4 * shortest_tooth / kin.velocity(close);

    let sign = |t: f64| field.sign_at(kin.position(t));
    let mut spins = (SpinLabel::MinusOne, SpinLabel::Zero);
    let mut y: State = [0.0; 4];
    let mut t = 0.0f64;
    let mut sigma = sign(0.0)?;
    let mut h = match control {
        StepControl::Adaptive { .. } => 1e-6f64.min(h_max),
        StepControl::Fixed { step } => step,
    };

    let state_of = |y: &State, spins: (SpinLabel, SpinLabel), t: f64| {
        (
            BranchState { x: y[0], vx: y[1], spin: spins.0, t },
            BranchState { x: y[2], vx: y[3], spin: spins.1, t },
        )
    };
    let (a0, b0) = state_of(&y, spins, 0.0);
    let mut samples = vec![make_sample(0.0, a0, b0, SampleKind::Event)];
    let mut segments = Vec::new();
    let mut seg_start = 0.0;

    let push_segment = |segments: &mut Vec<SegmentPiece>, from: f64, to: f64, sigma: Polarity, spins: (SpinLabel, SpinLabel)| {
        if to > from {
            segments.push(SegmentPiece {
                t_start: from,
                t_end: to,
                sigma,
                spin_a: spins.0,
                spin_b: spins.1,
                x_eq_a: force.equilibrium(spins.0, sigma),
                x_eq_b: force.equilibrium(spins.1, sigma),
                angular_frequency: derived.angular_frequency,
            });
        }
    };

    for stop in &stops {
        while t < stop.t {
            let remaining = stop.t - t;
            let nominal = match control {
                StepControl::Adaptive { .. } => h.min(h_max),
                StepControl::Fixed { step } => step.min(h_max),
            };
            let step = nominal.min(remaining);
            let (y_new, err) = dp_step(&force, &y, step, spins, sigma);

            if let StepControl::Adaptive { rel_tol } = control {
                let norm = error_norm(&y, &y_new, &err, rel_tol, scale_x, scale_v);
                if norm > 1.0 {
                    h = step * (0.9 * norm.powf(-0.2)).max(0.2);
                    if h < 1e-15 * t.max(1.0) {
                        return Err(Error::Integration { t, step: h });
                    }
                    continue;
                }
                h = step * (0.9 * norm.max(1e-10).powf(-0.2)).min(5.0);
            }

            let t_new = if step == remaining { stop.t } else { t + step };
            let sigma_new = sign(t_new)?;
            if sigma_new != sigma {
                // bracket the crossing and land exactly on its upper end
                let (mut lo, mut hi) = (t, t_new);
                while hi - lo > EVENT_TIME_TOLERANCE {
                    let mid = 0.5 * (lo + hi);
                    if sign(mid)? == sigma {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let (y_cross, _) = dp_step(&force, &y, hi - t, spins, sigma);
                y = y_cross;
                push_segment(&mut segments, seg_start, hi, sigma, spins);
                seg_start = hi;
                t = hi;
                sigma = sign(t)?;
                let (a, b) = state_of(&y, spins, t);
                check_bounds(t, &a, &b)?;
                if t == stop.t {
                    break;
                }
                samples.push(make_sample(t, a, b, SampleKind::Event));
                continue;
            }
            y = y_new;
            t = t_new;
        }

        let (a, b) = state_of(&y, spins, t);
        check_bounds(t, &a, &b)?;
        let kind = if stop.cadence { SampleKind::Cadence } else { SampleKind::Event };
        samples.push(make_sample(t, a, b, kind));
        if stop.flip {
            push_segment(&mut segments, seg_start, t, sigma, spins);
            seg_start = t;
            spins = (spins.0.flipped(), spins.1.flipped());
        }
    }
    push_segment(&mut segments, seg_start, t, sigma, spins);

    let recombination = recombination_from(&samples, &[schedule.period, close]);
    Ok(SimulationResult {
        samples,
        segments,
        recombination,
        period: derived.period,
        equilibrium_offset: derived.equilibrium_offset,
        angular_frequency: derived.angular_frequency,
    })
}

fn error_norm(y: &State, y_new: &State, err: &State, rel_tol: f64, scale_x: f64, scale_v: f64) -> f64 {
    let mut worst = 0.0f64;
    for n in 0..4 {
        let abs_scale = if n % 2 == 0 { scale_x } else { scale_v };
        let tol = rel_tol * (abs_scale + y[n].abs().max(y_new[n].abs()));
        worst = worst.max(err[n].abs() / tol);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{separation_deviation, simulate_branches};
    use crate::schedule::schedule_for;

    fn tooth_free(bias: f64) -> Scenario {
        let mut s = Scenario::paper_2022();
        s.geometry.bias_field = bias;
        s.geometry.tooth_width = 10.0;
        s
    }

    #[test]
    fn reference_matches_analytic_form_without_teeth() {
        let s = tooth_free(0.0);
        let sched = schedule_for(&s).unwrap();
        let r = integrate_reference(&s, &sched, 1e-10).unwrap();
        let dev = r.analytic_deviation();
        assert!(dev < 1e-14, "{dev}");
    }

    #[test]
    fn step_halving_converges_at_high_order() {
        // coarse cadence so that the nominal step is not cut by samples
        let mut s = tooth_free(0.0);
        s.sampling_interval = 0.02;
        let sched = schedule_for(&s).unwrap();
        let exact = simulate_branches(&s, &sched).unwrap();
        let err = |h: f64| {
            let r = integrate_reference_with(&s, &sched, StepControl::Fixed { step: h }).unwrap();
            separation_deviation(&r, &exact)
        };
        let (e1, e2) = (err(4e-3), err(2e-3));
        assert!(e2 < e1);
        // fifth order: ratio near 32
        assert!(e1 / e2 > 16.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn reference_agrees_with_closed_form_on_the_preset_run() {
        let s = Scenario::paper_2022();
        let sched = schedule_for(&s).unwrap();
        let exact = simulate_branches(&s, &sched).unwrap();
        let r = integrate_reference(&s, &sched, 1e-10).unwrap();
        let dev = separation_deviation(&r, &exact);
        assert!(dev < 1e-11, "{dev}");
        assert!(r.recombined());
    }

    #[test]
    fn rel_tol_range_is_enforced() {
        let s = Scenario::paper_2022();
        let sched = schedule_for(&s).unwrap();
        assert!(integrate_reference(&s, &sched, 1e-3).is_err());
        assert!(integrate_reference(&s, &sched, 1e-14).is_err());
    }

    #[test]
    fn equilibrium_from_force_matches_force_balance() {
        let s = Scenario::paper_2022();
        let f = ForceModel::new(&s);
        for spin in [SpinLabel::Zero, SpinLabel::MinusOne] {
            for sigma in [Polarity::Plus, Polarity::Minus] {
                let a = f.equilibrium(spin, sigma);
                let b = crate::dynamics::segment_equilibrium(spin, sigma, &s);
                assert!((a - b).abs() < 1e-15, "{a} {b}");
            }
        }
    }
}
