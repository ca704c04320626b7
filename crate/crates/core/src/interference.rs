//! Interferometer phase: the closed-form tilt phase of the two-oscillation
//! scheme, a phase functional over simulated trajectories, and the fringe
//! P_A(φ) = cos²(Δφ/2).
//!
//! Sign convention: Δφ = total(B) − total(A), where each branch total is
//! (1/ħ)∫E dt. With branch A on the upper path during the first
//! oscillation this agrees in sign with φ₂ − φ₁.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate_branches, SimulationResult, SpinLabel};
use crate::error::{Error, Result};
use crate::model::{derive_quantities, Scenario, MAX_TILT};
use crate::numeric::{hermite_panel, Neumaier};
use crate::plot::LinePlot;
use crate::schedule::{schedule_for, DropKinematics};

/// Local gravity along the drop, linearised in the distance fallen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GravityModel {
    pub g0: f64,
    pub earth_radius: f64,
    pub gradient_enabled: bool,
    /// Height already fallen when the teeth region starts, m.
    pub datum: f64,
}

impl GravityModel {
    pub fn new(g0: f64, earth_radius: f64, gradient_enabled: bool, datum: f64) -> Result<Self> {
        if !(g0 > 0.0 && g0.is_finite()) {
            return Err(Error::InvalidArgument(format!("g0 must be positive, got {g0}")));
        }
        if !(earth_radius > 0.0 && earth_radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("earthRadius must be positive, got {earth_radius}")));
        }
        if !(datum >= 0.0 && datum.is_finite()) {
            return Err(Error::InvalidArgument(format!("datum must be non-negative, got {datum}")));
        }
        Ok(Self { g0, earth_radius, gradient_enabled, datum })
    }

    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let datum = if scenario.gravity_datum_includes_pre_drop { scenario.geometry.homogeneous_length } else { 0.0 };
        Self::new(scenario.constants.g_surface, scenario.constants.earth_radius, scenario.gravity_gradient_enabled, datum)
    }

    /// Same model with the Earth-gradient term switched off.
    pub fn constant(self) -> Self {
        Self { gradient_enabled: false, ..self }
    }

    /// g after falling `z_fallen` metres from the surface reference.
    pub fn gravity_at(&self, z_fallen: f64) -> f64 {
        debug_assert!(z_fallen >= 0.0);
        if self.gradient_enabled {
            self.g0 * (1.0 + 2.0 * z_fallen / self.earth_radius)
        } else {
            self.g0
        }
    }

    /// g(t_b) − g(t_a), formed from the fall distance so it keeps full
    /// precision.
    fn change_between(&self, kin: &DropKinematics, t_a: f64, t_b: f64) -> f64 {
        if self.gradient_enabled {
            2.0 * self.g0 * (kin.position(t_b) - kin.position(t_a)) / self.earth_radius
        } else {
            0.0
        }
    }

    /// g and dg/dt at time `t` after teeth entry.
    fn along(&self, kin: &DropKinematics, t: f64) -> (f64, f64) {
        if self.gradient_enabled {
            let g = self.gravity_at(self.datum + kin.position(t));
            (g, 2.0 * self.g0 * kin.velocity(t) / self.earth_radius)
        } else {
            (self.g0, 0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalyticPhases {
    pub phi1: f64,
    pub phi2: f64,
    pub delta: f64,
}

/// Tilt phases of the two oscillations, with g taken at their temporal
/// midpoints T/2 and 3T/2.
pub fn analytic_phases(scenario: &Scenario, period: f64) -> Result<AnalyticPhases> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidArgument(format!("period must be positive, got {period}")));
    }
    let derived = derive_quantities(scenario)?;
    let model = GravityModel::from_scenario(scenario)?;
    let kin = DropKinematics::from_scenario(scenario)?;
    let k = scenario.diamond.mass * period * derived.equilibrium_offset * scenario.frame.phi.sin() / scenario.constants.hbar;
    let g2 = model.along(&kin, 0.5 * period).0;
    let g4 = model.along(&kin, 1.5 * period).0;
    Ok(AnalyticPhases {
        phi1: k * g2,
        phi2: k * g4,
        delta: k * model.change_between(&kin, 0.5 * period, 1.5 * period),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Oscillations {
    /// Path inversion at T: only the change of g between oscillations counts.
    Two,
    /// One oscillation at constant g, no inversion.
    Single,
}

/// Tilt span (rad) over which Δφ advances by 2π, small-angle.
pub fn fringe_period(scenario: &Scenario, variant: Oscillations) -> Result<f64> {
    let derived = derive_quantities(scenario)?;
    let model = GravityModel::from_scenario(scenario)?;
    let t = derived.period;
    let per_g = scenario.diamond.mass * t * derived.equilibrium_offset / scenario.constants.hbar;
    let dg = match variant {
        Oscillations::Two => {
            let kin = DropKinematics::from_scenario(scenario)?;
            model.change_between(&kin, 0.5 * t, 1.5 * t)
        }
        Oscillations::Single => model.g0,
    };
    Ok(2.0 * PI / (per_g * dg).abs())
}

/// Accumulated phase of one branch, or of B − A, split by energy term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PhaseLedger {
    pub gravity: f64,
    pub zeeman_bias: f64,
    pub zeeman_gradient: f64,
    pub zfs: f64,
}

impl PhaseLedger {
    pub fn total(&self) -> f64 {
        [self.gravity, self.zeeman_bias, self.zeeman_gradient, self.zfs].into_iter().collect::<Neumaier>().sum()
    }
}

impl std::ops::Add for PhaseLedger {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            gravity: self.gravity + o.gravity,
            zeeman_bias: self.zeeman_bias + o.zeeman_bias,
            zeeman_gradient: self.zeeman_gradient + o.zeeman_gradient,
            zfs: self.zfs + o.zfs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NumericPhase {
    pub branch_a: PhaseLedger,
    pub branch_b: PhaseLedger,
    /// B − A, each term accumulated as a difference.
    pub difference: PhaseLedger,
    pub delta_phi: f64,
    /// (time A spends in |−1⟩) − (time B spends in |−1⟩), s.
    pub time_imbalance: f64,
    pub coarse_sampling: bool,
}

/// One stretch of constant spin assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinStretch {
    pub duration: f64,
    /// Spin of branch A; branch B holds the other label.
    pub spin_a: SpinLabel,
}

/// Σ (time A in |−1⟩) − (time B in |−1⟩), formed pair by pair from
/// consecutive stretches so that equal times cancel before summation.
pub fn paired_imbalance(stretches: &[SpinStretch]) -> f64 {
    let signed = |s: &SpinStretch| match s.spin_a {
        SpinLabel::MinusOne => s.duration,
        SpinLabel::Zero => -s.duration,
    };
    stretches.chunks(2).map(|pair| pair.iter().map(signed).sum::<f64>()).collect::<Neumaier>().sum()
}

fn spin_stretches(result: &SimulationResult) -> Vec<SpinStretch> {
    let mut out: Vec<(f64, f64, SpinLabel)> = Vec::new();
    for seg in &result.segments {
        match out.last_mut() {
            Some(last) if last.2 == seg.spin_a => last.1 = seg.t_end,
            _ => out.push((seg.t_start, seg.t_end, seg.spin_a)),
        }
    }
    out.into_iter().map(|(a, b, spin_a)| SpinStretch { duration: b - a, spin_a }).collect()
}

fn time_in_minus_one(stretches: &[SpinStretch], branch_a: bool) -> f64 {
    stretches
        .iter()
        .filter(|s| (s.spin_a == SpinLabel::MinusOne) == branch_a)
        .map(|s| s.duration)
        .collect::<Neumaier>()
        .sum()
}

/// Phase functional over a simulated run; refuses runs that did not
/// recombine.
pub fn numeric_phase(result: &SimulationResult, scenario: &Scenario, model: &GravityModel) -> Result<NumericPhase> {
    let rec = result.final_recombination();
    if !rec.is_recombined() {
        return Err(Error::NotSeparable { t: rec.t, dx: rec.dx, dv: rec.dv });
    }
    let kin = DropKinematics::from_scenario(scenario)?;
    let c = &scenario.constants;
    let d = &scenario.diamond;
    let hbar = c.hbar;
    let moment = d.g_factor_parallel * c.bohr_magneton;
    let tilt = d.mass * scenario.frame.phi.sin() / hbar;
    let grad = moment * scenario.geometry.gradient_magnitude / hbar;
    let zeeman_rate = moment * scenario.geometry.bias_field / hbar;
    let zfs_rate = 2.0 * PI * d.zfs;

    let coarse_sampling = scenario.sampling_interval > result.period / 1000.0;
    if coarse_sampling {
        log::warn!(
            "sampling interval {:.3e} s exceeds T/1000 = {:.3e} s; phase quadrature may be inaccurate",
            scenario.sampling_interval,
            result.period / 1000.0
        );
    }

    let mut grav = [Neumaier::default(); 3];
    let mut zgrad = [Neumaier::default(); 3];
    let mut seg = 0usize;
    for w in result.samples.windows(2) {
        let (p, q) = (&w[0], &w[1]);
        let h = q.t - p.t;
        if h <= 0.0 {
            continue;
        }
        let mid = 0.5 * (p.t + q.t);
        while seg + 1 < result.segments.len() && result.segments[seg].t_end <= mid {
            seg += 1;
        }
        let piece = &result.segments[seg];
        let sigma = piece.sigma.value();
        let (sa, sb) = (piece.spin_a.sz(), piece.spin_b.sz());
        let (g0, dg0) = model.along(&kin, p.t);
        let (g1, dg1) = model.along(&kin, q.t);

        // ∫ g·x dt per branch and for the separation d = x_A − x_B
        let gx = |x0: f64, v0: f64, x1: f64, v1: f64| hermite_panel(h, g0 * x0, g1 * x1, dg0 * x0 + g0 * v0, dg1 * x1 + g1 * v1);
        grav[0].add(gx(p.a.x, p.a.vx, q.a.x, q.a.vx));
        grav[1].add(gx(p.b.x, p.b.vx, q.b.x, q.b.vx));
        grav[2].add(gx(p.separation, p.separation_velocity, q.separation, q.separation_velocity));

        // ∫ σ·x·S_z dt; the difference only sees the branch in |−1⟩
        let sx = |x0: f64, v0: f64, x1: f64, v1: f64, s: f64| s * sigma * hermite_panel(h, x0, x1, v0, v1);
        let a = sx(p.a.x, p.a.vx, q.a.x, q.a.vx, sa);
        let b = sx(p.b.x, p.b.vx, q.b.x, q.b.vx, sb);
        zgrad[0].add(a);
        zgrad[1].add(b);
        zgrad[2].add(b - a);
    }

    let stretches = spin_stretches(result);
    let t_a = time_in_minus_one(&stretches, true);
    let t_b = time_in_minus_one(&stretches, false);
    let imbalance = paired_imbalance(&stretches);

    let branch = |i: usize, t_minus: f64| PhaseLedger {
        gravity: tilt * grav[i].sum(),
        zeeman_bias: -zeeman_rate * t_minus,
        zeeman_gradient: grad * zgrad[i].sum(),
        zfs: zfs_rate * t_minus,
    };
    let difference = PhaseLedger {
        gravity: -tilt * grav[2].sum(),
        zeeman_bias: zeeman_rate * imbalance,
        zeeman_gradient: grad * zgrad[2].sum(),
        zfs: -zfs_rate * imbalance,
    };
    Ok(NumericPhase {
        branch_a: branch(0, t_a),
        branch_b: branch(1, t_b),
        difference,
        delta_phi: difference.total(),
        time_imbalance: imbalance,
        coarse_sampling,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    #[default]
    Analytic,
    Numeric,
}

impl std::str::FromStr for PhaseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "analytic" => Ok(Self::Analytic),
            "numeric" => Ok(Self::Numeric),
            other => Err(Error::InvalidArgument(format!("unknown phase mode '{other}' (analytic, numeric)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FringePoint {
    pub phi: f64,
    pub dphi: f64,
    pub p_a: f64,
}

impl FringePoint {
    pub fn new(phi: f64, dphi: f64) -> Self {
        let c = (0.5 * dphi).cos();
        Self { phi, dphi, p_a: c * c }
    }

    pub fn p_b(&self) -> f64 {
        1.0 - self.p_a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FringeResult {
    pub mode: PhaseMode,
    pub points: Vec<FringePoint>,
}

impl FringeResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phi_rad", "dphi_rad", "pA"])?;
        for p in &self.points {
            w.write_record([format!("{:e}", p.phi), format!("{:e}", p.dphi), format!("{:e}", p.p_a)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_svg(&self) -> String {
        LinePlot::new("Fringe", "tilt φ (rad)", "P_A")
            .series("P_A", self.points.iter().map(|p| (p.phi, p.p_a)).collect())
            .to_svg()
    }

    /// Number of sign changes of dP_A/dφ plus one, a crude fringe count.
    pub fn extrema(&self) -> usize {
        let diffs: Vec<f64> = self.points.windows(2).map(|w| w[1].p_a - w[0].p_a).filter(|d| *d != 0.0).collect();
        diffs.windows(2).filter(|w| w[0].signum() != w[1].signum()).count()
    }
}

/// Tilt angles spaced evenly over `[phi_min, phi_max]`.
pub fn tilt_grid(phi_min: f64, phi_max: f64, n_points: usize) -> Result<Vec<f64>> {
    if !(phi_min.is_finite() && phi_max.is_finite()) || phi_min > phi_max {
        return Err(Error::InvalidArgument(format!("bad tilt range [{phi_min}, {phi_max}]")));
    }
    if phi_min.abs() > MAX_TILT || phi_max.abs() > MAX_TILT {
        return Err(Error::InvalidArgument(format!("tilt range must lie within ±{MAX_TILT} rad")));
    }
    if phi_min == phi_max {
        return Ok(vec![phi_min]);
    }
    if n_points < 2 {
        return Err(Error::InvalidArgument("a tilt scan needs at least 2 points".into()));
    }
    let step = (phi_max - phi_min) / (n_points - 1) as f64;
    Ok((0..n_points).map(|i| if i + 1 == n_points { phi_max } else { phi_min + i as f64 * step }).collect())
}

/// Δφ(φ) and P_A(φ) over a tilt scan. Numeric mode simulates each point
/// and keeps the gravity (tilt-dependent) part of the phase difference.
pub fn fringe_scan(scenario: &Scenario, phi_min: f64, phi_max: f64, n_points: usize, mode: PhaseMode) -> Result<FringeResult> {
    let grid = tilt_grid(phi_min, phi_max, n_points)?;
    let derived = derive_quantities(scenario)?;
    let points = match mode {
        PhaseMode::Analytic => grid
            .iter()
            .map(|&phi| {
                let s = Scenario { frame: crate::model::TiltedFrame { phi }, ..scenario.clone() };
                analytic_phases(&s, derived.period).map(|p| FringePoint::new(phi, p.delta))
            })
            .collect::<Result<Vec<_>>>()?,
        PhaseMode::Numeric => {
            let schedule = schedule_for(scenario)?;
            let model = GravityModel::from_scenario(scenario)?;
            grid.par_iter()
                .map(|&phi| {
                    let s = Scenario { frame: crate::model::TiltedFrame { phi }, ..scenario.clone() };
                    let run = simulate_branches(&s, &schedule)?;
                    let phase = numeric_phase(&run, &s, &model)?;
                    Ok(FringePoint::new(phi, phase.difference.gravity))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(FringeResult { mode, points })
}
