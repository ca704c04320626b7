//! Transverse (x) motion of the two superposition branches.
//!
//! Between consecutive events the force on each branch is linear in x, so
//! each branch is a harmonic oscillator about a segment-dependent
//! equilibrium and is advanced in closed form by [`propagate_segment`].
//! Events are tooth crossings (the gradient sign σ flips) and π pulses
//! (both spins flip).
//!
//! The engine evolves the common mode `(x_A + x_B)/2` and the separation
//! `x_A − x_B` rather than the two branches. The separation equilibrium is
//! built from the spin term alone, so the ±447 µm bias-field equilibria
//! never pass through the nanometre-scale separation.

mod reference;

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{IdealToothField, Polarity};
use crate::model::{derive_quantities, Scenario};
use crate::schedule::{crossing_times, Horizon, PulseKind, PulseSchedule};

pub use reference::{integrate_reference, integrate_reference_with, StepControl};

/// Branches beyond this transverse offset have hit the magnets, m.
pub const CRASH_BOUND: f64 = 1e-3;
/// Largest |x_A − x_B| accepted as recombined, m.
pub const RECOMBINATION_DX: f64 = 2e-9;
/// Largest |v_A − v_B| accepted as recombined, m/s.
pub const RECOMBINATION_DV: f64 = 1e-7;

/// NV⁻ spin projection carried by one branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SpinLabel {
    Zero,
    MinusOne,
}

impl SpinLabel {
    /// Eigenvalue of S_z′.
    pub fn sz(self) -> f64 {
        match self {
            SpinLabel::Zero => 0.0,
            SpinLabel::MinusOne => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            SpinLabel::Zero => SpinLabel::MinusOne,
            SpinLabel::MinusOne => SpinLabel::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchState {
    /// m.
    pub x: f64,
    /// m/s.
    pub vx: f64,
    pub spin: SpinLabel,
    /// s.
    pub t: f64,
}

/// Force-balance equilibrium of one branch, split by origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumTerms {
    /// Stern-Gerlach term, spin dependent.
    pub spin: f64,
    /// Gravity component along x from the tilt.
    pub tilt: f64,
    /// Diamagnetic push from the bias field.
    pub bias: f64,
}

impl EquilibriumTerms {
    pub fn total(&self) -> f64 {
        self.spin + self.tilt + self.bias
    }
}

pub fn equilibrium_terms(spin: SpinLabel, sigma: Polarity, scenario: &Scenario) -> EquilibriumTerms {
    let c = &scenario.constants;
    let d = &scenario.diamond;
    let g = &scenario.geometry;
    let stiffness = scenario.diamagnetic_stiffness();
    let signed_gradient = sigma.value() * g.gradient_magnitude;
    let diamagnetic = d.susceptibility.abs() * d.volume / c.vacuum_permeability;
    EquilibriumTerms {
        spin: -(d.g_factor_parallel * c.bohr_magneton * spin.sz() * signed_gradient) / stiffness,
        tilt: -(d.mass * c.g_surface * scenario.frame.phi.sin()) / stiffness,
        bias: -(diamagnetic * g.bias_field * signed_gradient) / stiffness,
    }
}

/// Equilibrium x of a branch with `spin` in a segment of polarity `sigma`.
///
/// ```
/// use nanodrop::dynamics::{segment_equilibrium, SpinLabel};
/// use nanodrop::field::Polarity;
/// use nanodrop::model::{derive_quantities, Scenario};
///
/// let mut s = Scenario::paper_2022();
/// s.geometry.bias_field = 0.0;
/// let x = segment_equilibrium(SpinLabel::MinusOne, Polarity::Plus, &s);
/// let d = derive_quantities(&s).unwrap();
/// assert!((x - d.equilibrium_offset).abs() < 1e-20);
/// ```
pub fn segment_equilibrium(spin: SpinLabel, sigma: Polarity, scenario: &Scenario) -> f64 {
    equilibrium_terms(spin, sigma, scenario).total()
}

/// Closed-form harmonic step of length `dt` about `x_eq`.
pub fn propagate_segment(state: BranchState, x_eq: f64, omega: f64, dt: f64) -> BranchState {
    let (x, vx) = rotate(state.x, state.vx, x_eq, omega, dt);
    BranchState {
        x,
        vx,
        spin: state.spin,
        t: state.t + dt,
    }
}

fn rotate(x: f64, v: f64, x_eq: f64, omega: f64, dt: f64) -> (f64, f64) {
    if dt == 0.0 {
        return (x, v);
    }
    let (s, c) = (omega * dt).sin_cos();
    let u = x - x_eq;
    (x_eq + u * c + v / omega * s, -omega * u * s + v * c)
}

/// One closed-form propagation piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SegmentPiece {
    pub t_start: f64,
    pub t_end: f64,
    #[serde(skip)]
    pub sigma: Polarity,
    pub spin_a: SpinLabel,
    pub spin_b: SpinLabel,
    pub x_eq_a: f64,
    pub x_eq_b: f64,
    pub angular_frequency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SampleKind {
    /// On the uniform output grid.
    Cadence,
    /// At a crossing, pulse, or report time.
    Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub a: BranchState,
    pub b: BranchState,
    /// x_A − x_B, m.
    pub separation: f64,
    /// v_A − v_B, m/s.
    pub separation_velocity: f64,
    /// (x_A + x_B)/2, m.
    pub common_mode: f64,
    pub kind: SampleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Recombination {
    pub t: f64,
    /// |x_A − x_B|, m.
    pub dx: f64,
    /// |v_A − v_B|, m/s.
    pub dv: f64,
    /// Signed x_A − x_B, m.
    pub separation: f64,
}

impl Recombination {
    pub fn is_recombined(&self) -> bool {
        self.dx < RECOMBINATION_DX && self.dv < RECOMBINATION_DV
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub samples: Vec<Sample>,
    pub segments: Vec<SegmentPiece>,
    /// At T and at 2T.
    pub recombination: Vec<Recombination>,
    pub period: f64,
    pub equilibrium_offset: f64,
    pub angular_frequency: f64,
}

impl SimulationResult {
    /// Time of the largest |x_A − x_B|, and that separation.
    pub fn max_separation(&self) -> (f64, f64) {
        self.samples
            .iter()
            .map(|s| (s.t, s.separation.abs()))
            .fold((0.0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    pub fn peak_common_mode(&self) -> f64 {
        self.samples.iter().map(|s| s.common_mode.abs()).fold(0.0, f64::max)
    }

    /// Both recombination checks pass.
    pub fn recombined(&self) -> bool {
        !self.recombination.is_empty() && self.recombination.iter().all(Recombination::is_recombined)
    }

    /// Readout recombination at 2T.
    pub fn final_recombination(&self) -> Recombination {
        *self.recombination.last().expect("simulation always reports 2T")
    }

    /// Worst deviation of |x_A − x_B| from the two-oscillator form
    /// `Δx_eq(1 − cos ωt)` over all samples.
    pub fn analytic_deviation(&self) -> f64 {
        let (dx, w) = (self.equilibrium_offset, self.angular_frequency);
        self.samples
            .iter()
            .map(|s| (s.separation.abs() - dx * (1.0 - (w * s.t).cos())).abs())
            .fold(0.0, f64::max)
    }

    /// Accumulated time spent in |−1⟩ by branch A and branch B.
    pub fn time_in_minus_one(&self) -> [f64; 2] {
        let mut acc = [crate::numeric::Neumaier::default(), crate::numeric::Neumaier::default()];
        for seg in &self.segments {
            let dt = seg.t_end - seg.t_start;
            if seg.spin_a == SpinLabel::MinusOne {
                acc[0].add(dt);
            }
            if seg.spin_b == SpinLabel::MinusOne {
                acc[1].add(dt);
            }
        }
        [acc[0].sum(), acc[1].sum()]
    }

    /// CSV with columns `t_s,xA_m,vA_ms,spinA,xB_m,vB_ms,spinB,dx_m,common_m`.
    pub fn write_csv<W: Write>(&self, out: W, cadence_only: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "xA_m", "vA_ms", "spinA", "xB_m", "vB_ms", "spinB", "dx_m", "common_m"])?;
        let spin = |s: SpinLabel| if s == SpinLabel::MinusOne { "-1" } else { "0" };
        for s in self.samples.iter().filter(|s| !cadence_only || s.kind == SampleKind::Cadence) {
            w.write_record([
                s.t.to_string(),
                s.a.x.to_string(),
                s.a.vx.to_string(),
                spin(s.a.spin).to_string(),
                s.b.x.to_string(),
                s.b.vx.to_string(),
                spin(s.b.spin).to_string(),
                s.separation.to_string(),
                s.common_mode.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Largest |Δ separation| between two runs over their shared cadence samples.
pub fn separation_deviation(a: &SimulationResult, b: &SimulationResult) -> f64 {
    let grid = |r: &SimulationResult| -> Vec<Sample> {
        r.samples.iter().filter(|s| s.kind == SampleKind::Cadence).copied().collect()
    };
    let (ga, gb) = (grid(a), grid(b));
    assert_eq!(ga.len(), gb.len(), "runs sampled on different grids");
    ga.iter()
        .zip(&gb)
        .map(|(p, q)| {
            debug_assert_eq!(p.t, q.t);
            (p.separation - q.separation).abs()
        })
        .fold(0.0, f64::max)
}

/// Stop points shared by both propagation engines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stop {
    pub t: f64,
    pub flip: bool,
    pub cadence: bool,
    pub report: bool,
}

/// Pulse, cadence and report times in `(0, close]`, merged and sorted.
pub(crate) fn stops(schedule: &PulseSchedule, sampling_interval: f64) -> Vec<Stop> {
    let close = schedule.close_time();
    let mut out: Vec<Stop> = Vec::new();
    for e in schedule.events() {
        if e.time <= 0.0 {
            continue;
        }
        let flip = e.kind.is_pi() && !e.absorbs_crossing;
        out.push(Stop {
            t: e.time,
            flip,
            cadence: false,
            report: e.kind == PulseKind::PiHalfClose,
        });
    }
    out.push(Stop {
        t: schedule.period,
        flip: false,
        cadence: false,
        report: true,
    });
    let mut k = 1u64;
    loop {
        let t = k as f64 * sampling_interval;
        if t >= close {
            break;
        }
        out.push(Stop {
            t,
            flip: false,
            cadence: true,
            report: false,
        });
        k += 1;
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut merged: Vec<Stop> = Vec::with_capacity(out.len());
    for s in out {
        match merged.last_mut() {
            Some(last) if last.t == s.t => {
                last.flip ^= s.flip;
                last.cadence |= s.cadence;
                last.report |= s.report;
            }
            _ => merged.push(s),
        }
    }
    merged
}

pub(crate) fn check_bounds(t: f64, a: &BranchState, b: &BranchState) -> Result<()> {
    for (name, s) in [('A', a), ('B', b)] {
        if !s.x.is_finite() || s.x.abs() > CRASH_BOUND {
            return Err(Error::Crashed { branch: name, x: s.x, t });
        }
    }
    Ok(())
}

pub(crate) fn make_sample(t: f64, a: BranchState, b: BranchState, kind: SampleKind) -> Sample {
    Sample {
        t,
        a,
        b,
        separation: a.x - b.x,
        separation_velocity: a.vx - b.vx,
        common_mode: 0.5 * (a.x + b.x),
        kind,
    }
}

pub(crate) fn recombination_from(samples: &[Sample], times: &[f64]) -> Vec<Recombination> {
    times
        .iter()
        .filter_map(|&t| samples.iter().rev().find(|s| s.t == t))
        .map(|s| Recombination {
            t: s.t,
            dx: s.separation.abs(),
            dv: s.separation_velocity.abs(),
            separation: s.separation,
        })
        .collect()
}

/// Propagate both branches through the schedule with the exact
/// piecewise-harmonic engine.
///
/// Branch A starts in |−1⟩ and branch B in |0⟩, both at rest on x = 0 when
/// the opening π/2 fires. Tooth positions come from `scenario.geometry`;
/// the fall and pulse times come from `schedule`, which may have been
/// compiled for a different geometry.
pub fn simulate_branches(scenario: &Scenario, schedule: &PulseSchedule) -> Result<SimulationResult> {
    let derived = derive_quantities(scenario)?;
    let omega = derived.angular_frequency;
    let field = IdealToothField::new(scenario.geometry);
    let kin = schedule.kinematics;
    let close = schedule.close_time();

    // σ is piecewise constant between consecutive stops and crossings
    let crossings = crossing_times(&kin, &scenario.geometry, Horizon::Before(close));
    let stops = stops(schedule, scenario.sampling_interval);

    let (mut spin_a, mut spin_b) = (SpinLabel::MinusOne, SpinLabel::Zero);
    let (mut c, mut vc, mut d, mut vd) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let branch = |c: f64, vc: f64, d: f64, vd: f64, sa, sb, t| {
        (
            BranchState { x: c + 0.5 * d, vx: vc + 0.5 * vd, spin: sa, t },
            BranchState { x: c - 0.5 * d, vx: vc - 0.5 * vd, spin: sb, t },
        )
    };

    let mut samples = Vec::with_capacity(stops.len() + crossings.len() + 1);
    let mut segments = Vec::with_capacity(stops.len() + crossings.len());
    let (a0, b0) = branch(c, vc, d, vd, spin_a, spin_b, 0.0);
    samples.push(make_sample(0.0, a0, b0, SampleKind::Event));

    let mut t = 0.0;
    let mut ci = 0usize;
    let mut si = 0usize;
    while si < stops.len() {
        // next boundary: a crossing strictly before the next stop, or the stop
        let stop = stops[si];
        while ci < crossings.len() && crossings[ci] <= t {
            ci += 1;
        }
        let (t_next, is_stop) = match crossings.get(ci) {
            Some(&tc) if tc < stop.t => (tc, false),
            _ => (stop.t, true),
        };

        let sigma = field.sign_at(kin.position(0.5 * (t + t_next)))?;
        let eq_a = equilibrium_terms(spin_a, sigma, scenario);
        let eq_b = equilibrium_terms(spin_b, sigma, scenario);
        let c_eq = 0.5 * (eq_a.total() + eq_b.total());
        let d_eq = eq_a.spin - eq_b.spin;
        let dt = t_next - t;
        (c, vc) = rotate(c, vc, c_eq, omega, dt);
        (d, vd) = rotate(d, vd, d_eq, omega, dt);
        segments.push(SegmentPiece {
            t_start: t,
            t_end: t_next,
            sigma,
            spin_a,
            spin_b,
            x_eq_a: eq_a.total(),
            x_eq_b: eq_b.total(),
            angular_frequency: omega,
        });
        t = t_next;

        let (a, b) = branch(c, vc, d, vd, spin_a, spin_b, t);
        check_bounds(t, &a, &b)?;
        let kind = if is_stop && stop.cadence { SampleKind::Cadence } else { SampleKind::Event };
        samples.push(make_sample(t, a, b, kind));

        if is_stop {
            if stop.flip {
                spin_a = spin_a.flipped();
                spin_b = spin_b.flipped();
            }
            si += 1;
        }
    }

    let recombination = recombination_from(&samples, &[schedule.period, close]);
    Ok(SimulationResult {
        samples,
        segments,
        recombination,
        period: derived.period,
        equilibrium_offset: derived.equilibrium_offset,
        angular_frequency: omega,
    })
}
