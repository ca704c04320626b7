//! Physical constants, scenario parameters, validation, and the closed-form
//! quantities every other module is anchored to.
//!
//! All values are SI. The default of every type is the `paper-2022` preset:
//! a 250 nm diamond (m = 2.9e-17 kg, χ = −2.2e-5) falling 1.27 m through a
//! homogeneous field and then 1.13 m through 115 µm magnetic teeth with an
//! average gradient of 940 T/m over a 0.42 T bias.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result, ValidationErrors};

/// Name of the built-in parameter preset.
pub const PAPER_PRESET: &str = "paper-2022";

/// Largest tilt accepted by [`TiltedFrame`], rad.
pub const MAX_TILT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct PhysicalConstants {
    /// μB, J/T.
    pub bohr_magneton: f64,
    /// μ0, T·m/A.
    pub vacuum_permeability: f64,
    /// ħ, J·s.
    pub hbar: f64,
    /// Surface gravitational acceleration, m/s².
    pub g_surface: f64,
    /// m.
    pub earth_radius: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            bohr_magneton: 9.274_010_078_3e-24,
            vacuum_permeability: 1.256_637_062_12e-6,
            hbar: 1.054_571_817e-34,
            g_surface: 9.81,
            earth_radius: 6.371e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct DiamondParams {
    /// kg.
    pub mass: f64,
    /// m³.
    pub volume: f64,
    /// Volume magnetic susceptibility (negative: diamagnetic).
    pub susceptibility: f64,
    /// kg/m³.
    pub density: f64,
    /// NV⁻ g factor along the symmetry axis.
    pub g_factor_parallel: f64,
    /// Zero-field splitting D, Hz.
    pub zfs: f64,
}

impl Default for DiamondParams {
    fn default() -> Self {
        Self {
            mass: 2.9e-17,
            volume: 8.2e-21,
            susceptibility: -2.2e-5,
            density: 3510.0,
            g_factor_parallel: 2.0029,
            zfs: 2.87e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct MagnetGeometry {
    /// Length of the homogeneous pre-drop, m.
    pub homogeneous_length: f64,
    /// Tooth pitch along the drop axis, m.
    pub tooth_width: f64,
    /// Width of the first tooth as a fraction of `tooth_width`.
    pub first_tooth_fraction: f64,
    /// Average gradient magnitude B′, T/m.
    pub gradient_magnitude: f64,
    /// Bias field B₀ at x = 0, T.
    pub bias_field: f64,
    /// Length of the toothed region, m.
    pub teeth_region_length: f64,
}

impl Default for MagnetGeometry {
    fn default() -> Self {
        Self {
            homogeneous_length: 1.27,
            tooth_width: 115e-6,
            first_tooth_fraction: 0.5,
            gradient_magnitude: 940.0,
            bias_field: 0.42,
            teeth_region_length: 1.13,
        }
    }
}

/// Tilt of the magnet z axis away from the gravitational vertical.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct TiltedFrame {
    /// rad.
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct Scenario {
    pub constants: PhysicalConstants,
    pub diamond: DiamondParams,
    pub geometry: MagnetGeometry,
    pub frame: TiltedFrame,
    /// Trajectory output cadence, s.
    pub sampling_interval: f64,
    /// Let g grow as the diamond approaches the Earth's centre.
    pub gravity_gradient_enabled: bool,
    /// Count the homogeneous pre-drop in the height used for g(z).
    pub gravity_datum_includes_pre_drop: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            constants: PhysicalConstants::default(),
            diamond: DiamondParams::default(),
            geometry: MagnetGeometry::default(),
            frame: TiltedFrame::default(),
            sampling_interval: 5e-5,
            gravity_gradient_enabled: true,
            gravity_datum_includes_pre_drop: true,
        }
    }
}

/// Closed-form quantities of the effective two-oscillator model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalyticDerived {
    /// Δx_eq, m.
    pub equilibrium_offset: f64,
    /// s = 2Δx_eq, m.
    pub max_separation: f64,
    /// ω, rad/s.
    pub angular_frequency: f64,
    /// T = 2π/ω, s.
    pub period: f64,
    /// Spin-independent diamagnetic acceleration a₀ = |χ|V·B′·B₀/(m·μ0), m/s².
    pub common_mode_accel: f64,
    /// Stern-Gerlach acceleration a_s = g∥μB·B′/m, m/s².
    pub spin_accel: f64,
}

impl Scenario {
    /// The built-in preset, identical to `Scenario::default()`.
    pub fn paper_2022() -> Self {
        Self::default()
    }

    /// Parse a JSON scenario document; absent fields take preset values.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with_overrides(text, &[])
    }

    /// Parse a JSON scenario and apply dotted-key overrides
    /// (`geometry.toothWidth=230e-6`) before deserialising.
    pub fn from_json_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc: Value = if text.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(text).map_err(|e| Error::Parse {
                path: "<config>".into(),
                message: e.to_string(),
            })?
        };
        for (key, raw) in overrides {
            apply_override(&mut doc, key, raw)?;
        }
        serde_json::from_value(doc).map_err(|e| Error::Parse {
            path: "<config>".into(),
            message: e.to_string(),
        })
    }

    /// Dotted-key override applied to an existing scenario.
    pub fn with_override(&self, key: &str, raw: &str) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        apply_override(&mut doc, key, raw)?;
        serde_json::from_value(doc).map_err(|e| Error::Override {
            key: key.to_string(),
            message: e.to_string(),
        })
    }

    /// Check every invariant and report all violations together.
    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut errs = ValidationErrors::default();
        let c = &self.constants;
        for (name, v) in [
            ("constants.bohrMagneton", c.bohr_magneton),
            ("constants.vacuumPermeability", c.vacuum_permeability),
            ("constants.hbar", c.hbar),
            ("constants.gSurface", c.g_surface),
            ("constants.earthRadius", c.earth_radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                errs.push(name, "must be finite and strictly positive");
            }
        }

        let d = &self.diamond;
        for (name, v) in [
            ("diamond.mass", d.mass),
            ("diamond.volume", d.volume),
            ("diamond.density", d.density),
        ] {
            if !(v.is_finite() && v > 0.0) {
                errs.push(name, "must be finite and strictly positive");
            }
        }
        if !(d.susceptibility.is_finite() && d.susceptibility < 0.0) {
            errs.push("diamond.susceptibility", "susceptibility must be negative");
        }
        if !(d.g_factor_parallel > 1.9 && d.g_factor_parallel < 2.1) {
            errs.push("diamond.gFactorParallel", "must lie in (1.9, 2.1)");
        }
        if !d.zfs.is_finite() {
            errs.push("diamond.zfs", "must be finite");
        }

        let g = &self.geometry;
        for (name, v) in [
            ("geometry.homogeneousLength", g.homogeneous_length),
            ("geometry.toothWidth", g.tooth_width),
            ("geometry.teethRegionLength", g.teeth_region_length),
            ("geometry.gradientMagnitude", g.gradient_magnitude),
        ] {
            if !(v.is_finite() && v > 0.0) {
                errs.push(name, "must be finite and strictly positive");
            }
        }
        if !(g.first_tooth_fraction > 0.0 && g.first_tooth_fraction <= 1.0) {
            errs.push("geometry.firstToothFraction", "must lie in (0, 1]");
        }
        if !g.bias_field.is_finite() {
            errs.push("geometry.biasField", "must be finite");
        }

        if !(self.frame.phi.is_finite() && self.frame.phi.abs() < MAX_TILT) {
            errs.push(
                "frame.phi",
                format!("tilt outside small-angle regime (|phi| must be < {MAX_TILT} rad)"),
            );
        }

        if !(self.sampling_interval.is_finite() && self.sampling_interval > 0.0) {
            errs.push("samplingInterval", "must be strictly positive");
        } else if let Ok(derived) = derive_quantities(self) {
            if self.sampling_interval >= derived.period {
                errs.push(
                    "samplingInterval",
                    format!("must be shorter than the period T = {} s", derived.period),
                );
            }
        }

        if errs.is_empty() {
            for w in self.warnings() {
                log::warn!("{w}");
            }
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Soft consistency checks that do not block a run.
    pub fn warnings(&self) -> Vec<String> {
        let d = &self.diamond;
        let implied = d.density * d.volume;
        let mut out = Vec::new();
        if implied > 0.0 && ((d.mass - implied) / implied).abs() > 0.02 {
            out.push(format!(
                "diamond.mass {} kg differs from density*volume {} kg by more than 2%",
                d.mass, implied
            ));
        }
        out
    }

    /// `validate`, lifted into the crate error type.
    pub fn validated(self) -> Result<Self> {
        self.validate().map_err(Error::InvalidScenario)?;
        Ok(self)
    }

    /// Stiffness of the diamagnetic restoring force, |χ|V·B′²/μ0, N/m.
    pub fn diamagnetic_stiffness(&self) -> f64 {
        let b1 = self.geometry.gradient_magnitude;
        self.diamond.susceptibility.abs() * self.diamond.volume * b1 * b1
            / self.constants.vacuum_permeability
    }

    /// Inertial mass of the x oscillator, ρV.
    ///
    /// This is the mass for which the segment frequency √(k/m) equals the
    /// closed-form ω = √(|χ|/ρμ0)·B′.
    pub fn oscillator_mass(&self) -> f64 {
        self.diamond.density * self.diamond.volume
    }
}

/// Load a scenario from a JSON file. Missing keys take preset values,
/// unknown keys are rejected, and the result is validated.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    load_scenario_with_overrides(path, &[])
}

pub fn load_scenario_with_overrides(
    path: impl AsRef<Path>,
    overrides: &[(String, String)],
) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json_with_overrides(&text, overrides).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })?
    .validated()
}

/// Split `key=value` as given on a command line.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let (k, v) = arg.split_once('=').ok_or_else(|| Error::Override {
        key: arg.to_string(),
        message: "expected key=value".into(),
    })?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::Override {
            key: arg.to_string(),
            message: "empty key".into(),
        });
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Override {
                key: key.to_string(),
                message: "empty path segment".into(),
            });
        }
        let obj = node.as_object_mut().ok_or_else(|| Error::Override {
            key: key.to_string(),
            message: format!("`{}` is not a section", parts[..i].join(".")),
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one segment")
}

/// Closed-form quantities for a scenario.
///
/// ```
/// use nanodrop::model::{derive_quantities, Scenario};
///
/// let d = derive_quantities(&Scenario::paper_2022()).unwrap();
/// assert!((d.max_separation - 276e-9).abs() < 1e-9);
/// assert_eq!(d.max_separation, 2.0 * d.equilibrium_offset);
/// ```
pub fn derive_quantities(scenario: &Scenario) -> Result<AnalyticDerived> {
    let c = &scenario.constants;
    let d = &scenario.diamond;
    let g = &scenario.geometry;
    let chi = d.susceptibility.abs();

    let mut errs = ValidationErrors::default();
    if chi == 0.0 || !chi.is_finite() {
        errs.push("diamond.susceptibility", "must be nonzero");
    }
    if d.volume == 0.0 || !d.volume.is_finite() {
        errs.push("diamond.volume", "must be nonzero");
    }
    if g.gradient_magnitude == 0.0 || !g.gradient_magnitude.is_finite() {
        errs.push("geometry.gradientMagnitude", "must be nonzero");
    }
    if d.density <= 0.0 || d.mass <= 0.0 {
        errs.push("diamond.density", "density and mass must be positive");
    }
    if !errs.is_empty() {
        return Err(Error::InvalidScenario(errs));
    }

    let moment = d.g_factor_parallel * c.bohr_magneton;
    let equilibrium_offset =
        moment * c.vacuum_permeability / (d.volume * chi * g.gradient_magnitude);
    let angular_frequency = (chi / (d.density * c.vacuum_permeability)).sqrt() * g.gradient_magnitude;
    Ok(AnalyticDerived {
        equilibrium_offset,
        max_separation: 2.0 * equilibrium_offset,
        angular_frequency,
        period: 2.0 * PI / angular_frequency,
        common_mode_accel: chi * d.volume * g.gradient_magnitude * g.bias_field
            / (d.mass * c.vacuum_permeability),
        spin_accel: moment * g.gradient_magnitude / d.mass,
    })
}
