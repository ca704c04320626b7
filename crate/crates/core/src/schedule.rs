//! Free-fall kinematics along the drop axis and compilation of the microwave
//! pulse schedule from tooth crossings.
//!
//! Times are region-local: `t = 0` is teeth entry, where the opening π/2
//! pulse fires. A π pulse follows every tooth crossing in `(0, 2T)`, an
//! extra π at `T` inverts the paths for the second oscillation, and the
//! closing π/2 fires at `2T`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::IdealToothField;
use crate::model::{MagnetGeometry, Scenario};

/// Two pulses closer than this are one flip.
pub const MERGE_TOLERANCE: f64 = 1e-9;

/// XY8 phase cycle applied over consecutive π pulses.
pub const XY8: [Axis; 8] = [
    Axis::X,
    Axis::Y,
    Axis::X,
    Axis::Y,
    Axis::Y,
    Axis::X,
    Axis::Y,
    Axis::X,
];

/// Free fall through the toothed region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DropKinematics {
    /// Speed at teeth entry, m/s.
    pub entry_velocity: f64,
    /// m/s².
    pub g_vertical: f64,
    /// m.
    pub teeth_region_length: f64,
}

/// Speed gained falling `length` from rest: `√(2gL)`.
pub fn entry_velocity(length: f64, g: f64) -> Result<f64> {
    if !(length >= 0.0) || !(g > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "entry velocity needs length >= 0 and g > 0 (got {length}, {g})"
        )));
    }
    Ok((2.0 * g * length).sqrt())
}

impl DropKinematics {
    pub fn new(entry_velocity: f64, g_vertical: f64, teeth_region_length: f64) -> Result<Self> {
        if !(entry_velocity >= 0.0) || !(g_vertical > 0.0) || !(teeth_region_length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kinematics need v0 >= 0, g > 0, length > 0 (got {entry_velocity}, {g_vertical}, {teeth_region_length})"
            )));
        }
        Ok(Self {
            entry_velocity,
            g_vertical,
            teeth_region_length,
        })
    }

    /// Nominal kinematics: the diamond starts from rest above the homogeneous
    /// section and falls with surface gravity.
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let g = scenario.constants.g_surface;
        Self::new(
            entry_velocity(scenario.geometry.homogeneous_length, g)?,
            g,
            scenario.geometry.teeth_region_length,
        )
    }

    /// Distance fallen since teeth entry.
    pub fn position(&self, t: f64) -> f64 {
        self.entry_velocity * t + 0.5 * self.g_vertical * t * t
    }

    pub fn velocity(&self, t: f64) -> f64 {
        self.entry_velocity + self.g_vertical * t
    }

    /// Positive root of `v0·t + ½gt² = z`, in the cancellation-free form.
    pub fn time_at(&self, z: f64) -> f64 {
        let v0 = self.entry_velocity;
        let disc = (v0 * v0 + 2.0 * self.g_vertical * z).sqrt();
        2.0 * z / (v0 + disc)
    }
}

/// Where [`crossing_times`] stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Every crossing inside the toothed region.
    RegionEnd,
    /// Every crossing strictly before the given time.
    Before(f64),
}

/// Times at which the diamond crosses each tooth boundary.
pub fn crossing_times(kinematics: &DropKinematics, geometry: &MagnetGeometry, horizon: Horizon) -> Vec<f64> {
    let field = IdealToothField::new(*geometry);
    let mut out = Vec::new();
    for k in 0.. {
        let z = field.breakpoint(k);
        let t = kinematics.time_at(z);
        let done = match horizon {
            Horizon::RegionEnd => z > kinematics.teeth_region_length,
            Horizon::Before(limit) => t >= limit,
        };
        if done {
            break;
        }
        out.push(t);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PulseKind {
    PiHalfOpen,
    Pi,
    PiMidpoint,
    PiHalfClose,
}

impl PulseKind {
    pub fn is_pi(self) -> bool {
        matches!(self, PulseKind::Pi | PulseKind::PiMidpoint)
    }
}

impl fmt::Display for PulseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PulseKind::PiHalfOpen => "PI_HALF_OPEN",
            PulseKind::Pi => "PI",
            PulseKind::PiMidpoint => "PI_MIDPOINT",
            PulseKind::PiHalfClose => "PI_HALF_CLOSE",
        })
    }
}

impl FromStr for PulseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "PI_HALF_OPEN" => Ok(PulseKind::PiHalfOpen),
            "PI" => Ok(PulseKind::Pi),
            "PI_MIDPOINT" => Ok(PulseKind::PiMidpoint),
            "PI_HALF_CLOSE" => Ok(PulseKind::PiHalfClose),
            other => Err(Error::InvalidSchedule(format!("unknown pulse kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Axis {
    X,
    Y,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "X",
            Axis::Y => "Y",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "X" => Ok(Axis::X),
            "Y" => Ok(Axis::Y),
            other => Err(Error::InvalidSchedule(format!("unknown pulse axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PulseEvent {
    pub time: f64,
    pub kind: PulseKind,
    pub axis: Axis,
    pub index: usize,
    /// A midpoint π that fell within [`MERGE_TOLERANCE`] of a crossing and
    /// replaced that crossing's π. Net effect on the spin: none.
    pub absorbs_crossing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PulseSchedule {
    events: Vec<PulseEvent>,
    pub kinematics: DropKinematics,
    pub geometry: MagnetGeometry,
    /// Oscillation period T, s.
    pub period: f64,
}

impl PulseSchedule {
    /// Assemble a schedule from explicit events, checking ordering and the
    /// open/close bracketing. Used for replay and after jitter.
    pub fn from_events(
        mut events: Vec<PulseEvent>,
        kinematics: DropKinematics,
        geometry: MagnetGeometry,
        period: f64,
    ) -> Result<Self> {
        if events.len() < 2 {
            return Err(Error::InvalidSchedule("need at least the two π/2 pulses".into()));
        }
        let first = events[0];
        let last = events[events.len() - 1];
        if first.kind != PulseKind::PiHalfOpen || first.time != 0.0 {
            return Err(Error::InvalidSchedule("first event must be PI_HALF_OPEN at t = 0".into()));
        }
        if last.kind != PulseKind::PiHalfClose || last.time != 2.0 * period {
            return Err(Error::InvalidSchedule("last event must be PI_HALF_CLOSE at t = 2T".into()));
        }
        for pair in events.windows(2) {
            if !(pair[1].time > pair[0].time) {
                return Err(Error::InvalidSchedule(format!(
                    "event times must be strictly increasing (index {} at {} s, index {} at {} s)",
                    pair[0].index, pair[0].time, pair[1].index, pair[1].time
                )));
            }
        }
        for e in &events[1..events.len() - 1] {
            if !e.kind.is_pi() {
                return Err(Error::InvalidSchedule(format!("unexpected {} inside the schedule", e.kind)));
            }
        }
        // the absorbed-crossing flag is not serialised; recover it
        let crossings = crossing_times(&kinematics, &geometry, Horizon::Before(2.0 * period));
        let pi_times: Vec<f64> = events.iter().filter(|e| e.kind == PulseKind::Pi).map(|e| e.time).collect();
        let near = |times: &[f64], t: f64| times.iter().any(|&p| (p - t).abs() <= MERGE_TOLERANCE);
        for e in events.iter_mut().filter(|e| e.kind == PulseKind::PiMidpoint) {
            e.absorbs_crossing = crossings
                .iter()
                .find(|&&c| (c - e.time).abs() <= MERGE_TOLERANCE)
                .is_some_and(|&c| !near(&pi_times, c));
        }
        Ok(Self {
            events,
            kinematics,
            geometry,
            period,
        })
    }

    pub fn events(&self) -> &[PulseEvent] {
        &self.events
    }

    /// Number of π and midpoint-π events.
    pub fn pi_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind.is_pi()).count()
    }

    /// Number of tooth crossings covered by π pulses in `(0, 2T)`.
    pub fn crossing_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind == PulseKind::Pi || e.absorbs_crossing)
            .count()
    }

    pub fn midpoint(&self) -> Option<&PulseEvent> {
        self.events.iter().find(|e| e.kind == PulseKind::PiMidpoint)
    }

    /// End of the interferometer, 2T.
    pub fn close_time(&self) -> f64 {
        self.events[self.events.len() - 1].time
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "time_s", "kind", "axis"])?;
        for e in &self.events {
            w.write_record([e.index.to_string(), e.time.to_string(), e.kind.to_string(), e.axis.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a schedule written by [`PulseSchedule::write_csv`].
    pub fn read_csv<R: Read>(
        input: R,
        kinematics: DropKinematics,
        geometry: MagnetGeometry,
        period: f64,
    ) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let expect = ["index", "time_s", "kind", "axis"];
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(Error::InvalidSchedule(format!(
                "expected header {}, got {}",
                expect.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut events = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse_err = |what: &str| Error::InvalidSchedule(format!("bad {what} in row {:?}", rec.position()));
            events.push(PulseEvent {
                index: rec[0].trim().parse().map_err(|_| parse_err("index"))?,
                time: rec[1].trim().parse().map_err(|_| parse_err("time_s"))?,
                kind: rec[2].parse()?,
                axis: rec[3].parse()?,
                absorbs_crossing: false,
            });
        }
        Self::from_events(events, kinematics, geometry, period)
    }
}

/// Compile the full pulse schedule for one two-oscillation run.
pub fn build_schedule(kinematics: &DropKinematics, geometry: &MagnetGeometry, period: f64) -> Result<PulseSchedule> {
    if !(period > 0.0) {
        return Err(Error::InvalidArgument(format!("period must be positive, got {period}")));
    }
    let close = 2.0 * period;
    let needed = kinematics.position(close);
    if needed > kinematics.teeth_region_length {
        return Err(Error::ScheduleTruncated {
            needed,
            available: kinematics.teeth_region_length,
            shortfall: needed - kinematics.teeth_region_length,
        });
    }

    let crossings = crossing_times(kinematics, geometry, Horizon::Before(close));
    let merged_with = crossings
        .iter()
        .position(|&t| (t - period).abs() <= MERGE_TOLERANCE);

    let mut pulses: Vec<(f64, PulseKind, bool)> = Vec::with_capacity(crossings.len() + 3);
    pulses.push((0.0, PulseKind::PiHalfOpen, false));
    let mut midpoint_placed = false;
    for (i, &t) in crossings.iter().enumerate() {
        if Some(i) == merged_with {
            pulses.push((period, PulseKind::PiMidpoint, true));
            midpoint_placed = true;
            continue;
        }
        if !midpoint_placed && t > period {
            pulses.push((period, PulseKind::PiMidpoint, false));
            midpoint_placed = true;
        }
        pulses.push((t, PulseKind::Pi, false));
    }
    if !midpoint_placed {
        pulses.push((period, PulseKind::PiMidpoint, false));
    }
    pulses.push((close, PulseKind::PiHalfClose, false));

    let mut pi_ordinal = 0usize;
    let events = pulses
        .into_iter()
        .enumerate()
        .map(|(index, (time, kind, absorbs_crossing))| {
            let axis = if kind.is_pi() {
                let a = XY8[pi_ordinal % XY8.len()];
                pi_ordinal += 1;
                a
            } else {
                Axis::X
            };
            PulseEvent {
                time,
                kind,
                axis,
                index,
                absorbs_crossing,
            }
        })
        .collect();

    Ok(PulseSchedule {
        events,
        kinematics: *kinematics,
        geometry: *geometry,
        period,
    })
}

/// Convenience: nominal kinematics, geometry and analytic T of a scenario.
pub fn schedule_for(scenario: &Scenario) -> Result<PulseSchedule> {
    let derived = crate::model::derive_quantities(scenario)?;
    build_schedule(&DropKinematics::from_scenario(scenario)?, &scenario.geometry, derived.period)
}

/// Perturb every π pulse time by an independent N(0, σ²) draw.
///
/// The π/2 pulses stay at 0 and 2T. The generator is seeded explicitly, so
/// equal seeds give equal schedules.
pub fn apply_jitter(schedule: &PulseSchedule, sigma: f64, seed: u64) -> Result<PulseSchedule> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("jitter sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(schedule.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = schedule.events.clone();
    for e in events.iter_mut().filter(|e| e.kind.is_pi()) {
        e.time += normal.sample(&mut rng);
    }
    for pair in events.windows(2) {
        if !(pair[1].time > pair[0].time) {
            return Err(Error::JitterReorder {
                first: pair[0].index,
                second: pair[1].index,
            });
        }
    }
    Ok(PulseSchedule {
        events,
        ..schedule.clone()
    })
}

/// Fitted free-fall parameters from optical timing gates.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GateCalibration {
    pub gate_z: Vec<f64>,
    pub gate_times: Vec<f64>,
    /// Speed at the moment the fitted clock reads `fitted_time_offset`, m/s.
    pub fitted_v0: f64,
    /// Time at which the diamond passes z = 0, s.
    pub fitted_time_offset: f64,
    /// RMS of measured minus predicted gate times, s.
    pub residual: f64,
}

/// Least-squares fit of `z(t) = v0(t − t0) + ½g(t − t0)²` to gate passages.
///
/// With `u = z − ½gt²` the model is linear, `u = a + bt`; then
/// `v0 = √(b² − 2ga)` and `t0 = (v0 − b)/g`.
pub fn calibrate_from_gates(gate_z: &[f64], gate_times: &[f64], g: f64) -> Result<GateCalibration> {
    if gate_z.len() != gate_times.len() {
        return Err(Error::Calibration("gate positions and times differ in length".into()));
    }
    if gate_z.len() < 2 {
        return Err(Error::Calibration("need at least two gates".into()));
    }
    if !(g > 0.0) {
        return Err(Error::Calibration("g must be positive".into()));
    }
    let z0 = gate_z[0];
    if gate_z.iter().all(|&z| z == z0) {
        return Err(Error::Calibration("degenerate gate placement: all gates at the same z".into()));
    }
    let n = gate_z.len() as f64;
    let t_mean = gate_times.iter().sum::<f64>() / n;
    let u: Vec<f64> = gate_z
        .iter()
        .zip(gate_times)
        .map(|(&z, &t)| z - 0.5 * g * t * t)
        .collect();
    let u_mean = u.iter().sum::<f64>() / n;
    let (mut stt, mut stu) = (0.0, 0.0);
    for (&t, &ui) in gate_times.iter().zip(&u) {
        stt += (t - t_mean) * (t - t_mean);
        stu += (t - t_mean) * (ui - u_mean);
    }
    if stt == 0.0 {
        return Err(Error::Calibration("degenerate gate placement: all gates at the same time".into()));
    }
    let b = stu / stt;
    let a = u_mean - b * t_mean;
    let disc = b * b - 2.0 * g * a;
    if disc < 0.0 {
        return Err(Error::Calibration("gate data inconsistent with free fall".into()));
    }
    let v0 = disc.sqrt();
    if !(v0 > 0.0) {
        return Err(Error::Calibration("fitted entry speed is not positive".into()));
    }
    let t0 = (v0 - b) / g;

    let kin = DropKinematics {
        entry_velocity: v0,
        g_vertical: g,
        teeth_region_length: f64::INFINITY,
    };
    let sq: f64 = gate_z
        .iter()
        .zip(gate_times)
        .map(|(&z, &t)| {
            // gates above the fitted origin are passed before t0
            let predicted = if z >= 0.0 {
                t0 + kin.time_at(z)
            } else {
                t0 - (v0 - (v0 * v0 + 2.0 * g * z).max(0.0).sqrt()) / g
            };
            (t - predicted).powi(2)
        })
        .sum();
    Ok(GateCalibration {
        gate_z: gate_z.to_vec(),
        gate_times: gate_times.to_vec(),
        fitted_v0: v0,
        fitted_time_offset: t0,
        residual: (sq / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::IdealToothField;
    use crate::model::derive_quantities;
    use proptest::prelude::*;
    use rand::Rng;

    fn paper() -> (DropKinematics, MagnetGeometry, f64) {
        let s = Scenario::paper_2022();
        let d = derive_quantities(&s).unwrap();
        (DropKinematics::from_scenario(&s).unwrap(), s.geometry, d.period)
    }

    #[test]
    fn entry_velocity_examples() {
        // oracle: energy conservation, ½v² = gL
        let v = entry_velocity(1.27, 9.81).unwrap();
        assert!((0.5 * v * v - 9.81 * 1.27).abs() < 1e-12);
        assert!((v - 4.992).abs() < 1e-3);
        assert_eq!(entry_velocity(0.0, 9.81).unwrap(), 0.0);
        assert!((entry_velocity(5.08, 9.81).unwrap() - 2.0 * v).abs() < 1e-12);
        assert!(entry_velocity(-1.0, 9.81).is_err());
    }

    #[test]
    fn single_breakpoint_from_rest() {
        let kin = DropKinematics::new(0.0, 9.81, 10.0).unwrap();
        let g = MagnetGeometry {
            tooth_width: 9.81,
            first_tooth_fraction: 0.5,
            ..MagnetGeometry::default()
        };
        let t = crossing_times(&kin, &g, Horizon::Before(1.5));
        assert_eq!(t.len(), 1);
        assert!((t[0] - 1.0).abs() < 1e-15);
    }

    /// Brute-force oracle: step z(t) on a fine grid and count boundary passages.
    fn count_by_stepping(kin: &DropKinematics, g: &MagnetGeometry) -> usize {
        let field = IdealToothField::new(*g);
        let t_end = kin.time_at(kin.teeth_region_length);
        let n = 2_000_000;
        let mut prev = field.segment_index(0.0).unwrap();
        let mut count = 0;
        for i in 1..=n {
            let z = kin.position(t_end * i as f64 / n as f64).min(kin.teeth_region_length);
            let idx = field.segment_index(z).unwrap();
            count += idx - prev;
            prev = idx;
        }
        count
    }

    #[test]
    fn paper_crossing_count_and_duration() {
        let (kin, g, _) = paper();
        let t = crossing_times(&kin, &g, Horizon::RegionEnd);
        assert_eq!(t.len(), count_by_stepping(&kin, &g));
        assert_eq!(t.len(), 9826);
        assert!(((t.len() as f64) - 9800.0).abs() / 9800.0 < 0.02);
        let last = *t.last().unwrap();
        assert!((last - 0.19).abs() / 0.19 < 0.01, "last crossing {last}");
    }

    #[test]
    fn gaps_strictly_decrease() {
        let (kin, g, _) = paper();
        let t = crossing_times(&kin, &g, Horizon::RegionEnd);
        for w in t.windows(3) {
            assert!(w[2] - w[1] < w[1] - w[0]);
        }
    }

    #[test]
    fn pi_events_sit_on_field_sign_changes() {
        let (kin, g, period) = paper();
        let s = build_schedule(&kin, &g, period).unwrap();
        let field = IdealToothField::new(g);
        let mut k = 0;
        for e in s.events().iter().filter(|e| e.kind == PulseKind::Pi) {
            let z = kin.position(e.time);
            assert!((z - field.breakpoint(k)).abs() < 1e-12, "event {} off by {}", e.index, z - field.breakpoint(k));
            k += 1;
        }
    }

    #[test]
    fn paper_schedule_shape() {
        let (kin, g, period) = paper();
        let s = build_schedule(&kin, &g, period).unwrap();
        let ev = s.events();
        assert_eq!(ev[0].kind, PulseKind::PiHalfOpen);
        assert_eq!(ev[0].time, 0.0);
        assert_eq!(ev.last().unwrap().kind, PulseKind::PiHalfClose);
        assert_eq!(ev.last().unwrap().time, 2.0 * period);
        let mid = s.midpoint().unwrap();
        assert_eq!(mid.time, period);
        assert!(!mid.absorbs_crossing);
        assert_eq!(s.crossing_count(), 9745);
        assert_eq!(s.pi_count(), 9746);
        assert!((s.pi_count() as f64 - 9801.0).abs() / 9801.0 < 0.02);
        let axes: Vec<Axis> = ev.iter().filter(|e| e.kind.is_pi()).take(8).map(|e| e.axis).collect();
        assert_eq!(axes, XY8.to_vec());
        for (i, e) in ev.iter().enumerate() {
            assert_eq!(e.index, i);
        }
    }

    #[test]
    fn tooth_free_schedule() {
        let (kin, mut g, period) = paper();
        g.tooth_width = 10.0;
        let s = build_schedule(&kin, &g, period).unwrap();
        let kinds: Vec<PulseKind> = s.events().iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![PulseKind::PiHalfOpen, PulseKind::PiMidpoint, PulseKind::PiHalfClose]);
    }

    #[test]
    fn midpoint_merges_with_nearby_crossing() {
        let (kin, mut g, _) = paper();
        g.tooth_width = 1e-3;
        let crossings = crossing_times(&kin, &g, Horizon::Before(0.18));
        let period = crossings[400] + 0.4e-9;
        let s = build_schedule(&kin, &g, period).unwrap();
        assert_eq!(s.events().iter().filter(|e| e.kind == PulseKind::PiMidpoint).count(), 1);
        let mid = s.midpoint().unwrap();
        assert!(mid.absorbs_crossing);
        assert_eq!(mid.time, period);
        assert_eq!(s.pi_count(), crossing_times(&kin, &g, Horizon::Before(2.0 * period)).len());
        // the flag survives a CSV round trip
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = PulseSchedule::read_csv(buf.as_slice(), kin, g, period).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn too_short_region_is_truncated() {
        let (mut kin, g, period) = paper();
        kin.teeth_region_length = 1.0;
        match build_schedule(&kin, &g, period) {
            Err(Error::ScheduleTruncated { shortfall, .. }) => assert!((shortfall - 0.1206).abs() < 1e-3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let (kin, g, period) = paper();
        let s = build_schedule(&kin, &g, period).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("index,time_s,kind,axis\n0,0,PI_HALF_OPEN,X\n"));
        let back = PulseSchedule::read_csv(buf.as_slice(), kin, g, period).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn jitter_zero_is_identity_and_seeded() {
        let (kin, g, period) = paper();
        let s = build_schedule(&kin, &g, period).unwrap();
        assert_eq!(apply_jitter(&s, 0.0, 1).unwrap(), s);
        let a = apply_jitter(&s, 1e-9, 7).unwrap();
        let b = apply_jitter(&s, 1e-9, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, s);
        assert_ne!(apply_jitter(&s, 1e-9, 8).unwrap(), a);
        assert_eq!(a.events()[0].time, 0.0);
        assert_eq!(a.close_time(), 2.0 * period);
    }

    #[test]
    fn nanosecond_jitter_keeps_order() {
        let (kin, g, period) = paper();
        let s = build_schedule(&kin, &g, period).unwrap();
        // min gap = w / v_max
        let min_gap = s.events().windows(2).map(|w| w[1].time - w[0].time).fold(f64::INFINITY, f64::min);
        let v_max = kin.velocity(2.0 * period);
        assert!(min_gap > 1.0e-6 && min_gap < g.tooth_width / v_max * 1.001, "{min_gap}");
        assert!(v_max > 6.8 && v_max < 7.0);
        let j = apply_jitter(&s, 1e-9, 3).unwrap();
        assert!(j.events().windows(2).all(|w| w[1].time > w[0].time));
    }

    #[test]
    fn extreme_jitter_reorders() {
        let (kin, g, period) = paper();
        let s = build_schedule(&kin, &g, period).unwrap();
        assert!(matches!(apply_jitter(&s, 1e-4, 1), Err(Error::JitterReorder { .. })));
        assert!(apply_jitter(&s, -1.0, 1).is_err());
    }

    fn gate_times(z: &[f64], v0: f64, offset: f64, g: f64) -> Vec<f64> {
        z.iter().map(|&z| offset + (-v0 + (v0 * v0 + 2.0 * g * z).sqrt()) / g).collect()
    }

    #[test]
    fn two_gates_exact() {
        let z = [0.5, 1.0];
        let t = gate_times(&z, 3.0, 0.0, 9.81);
        let c = calibrate_from_gates(&z, &t, 9.81).unwrap();
        assert!((c.fitted_v0 - 3.0).abs() < 1e-9);
        assert!(c.fitted_time_offset.abs() < 1e-9);
        assert!(c.residual < 1e-12);
    }

    #[test]
    fn five_noisy_gates() {
        // synthetic-data round trip
        let z = [0.1, 0.35, 0.6, 0.85, 1.1];
        let mut t = gate_times(&z, 0.4, 0.012, 9.81);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for ti in &mut t {
            *ti += if rng.random::<bool>() { 1e-9 } else { -1e-9 };
        }
        let c = calibrate_from_gates(&z, &t, 9.81).unwrap();
        assert!((c.fitted_v0 - 0.4).abs() < 1e-5, "{}", c.fitted_v0);
        assert!(c.residual < 2e-9);
    }

    #[test]
    fn degenerate_gates() {
        assert!(calibrate_from_gates(&[0.5, 0.5], &[0.1, 0.2], 9.81).is_err());
        assert!(calibrate_from_gates(&[0.5], &[0.1], 9.81).is_err());
    }

    proptest! {
        #[test]
        fn noiseless_calibration_is_identity(v0 in 0.5f64..6.0, offset in -0.05f64..0.05, n in 2usize..7) {
            let z: Vec<f64> = (0..n).map(|i| 0.1 + 0.2 * i as f64).collect();
            let t = gate_times(&z, v0, offset, 9.81);
            let c = calibrate_from_gates(&z, &t, 9.81).unwrap();
            prop_assert!((c.fitted_v0 - v0).abs() < 1e-8);
            prop_assert!((c.fitted_time_offset - offset).abs() < 1e-9);
        }
    }
}
