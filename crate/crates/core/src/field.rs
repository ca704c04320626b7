//! Magnetic field models along the drop axis.
//!
//! [`IdealToothField`] is the square-wave gradient used by the dynamics:
//! `Bx = σ(z)·B′·x + B₀` with σ alternating at every tooth boundary.
//! [`FieldMap`] holds exported finite-element samples; it is ingested,
//! summarised by [`fit_square_wave`], and never fed into the dynamics.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::MagnetGeometry;

/// Direction of the x gradient in one tooth segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Plus,
    Minus,
}

impl Polarity {
    pub fn value(self) -> f64 {
        match self {
            Polarity::Plus => 1.0,
            Polarity::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Plus => Polarity::Minus,
            Polarity::Minus => Polarity::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdealToothField {
    pub geometry: MagnetGeometry,
}

impl IdealToothField {
    pub fn new(geometry: MagnetGeometry) -> Self {
        Self { geometry }
    }

    /// Position of the k-th sign change, measured from teeth entry.
    pub fn breakpoint(&self, k: usize) -> f64 {
        let w = self.geometry.tooth_width;
        w * self.geometry.first_tooth_fraction + k as f64 * w
    }

    /// Index of the segment containing `z`; segment 0 is the first tooth.
    ///
    /// Right-continuous: `z == breakpoint(k)` belongs to segment `k + 1`.
    pub fn segment_index(&self, z: f64) -> Result<usize> {
        if !(z >= 0.0) {
            return Err(Error::FieldDomain { z });
        }
        let w = self.geometry.tooth_width;
        let first = w * self.geometry.first_tooth_fraction;
        if z < first {
            return Ok(0);
        }
        let mut idx = ((z - first) / w).floor() as usize + 1;
        // the float estimate can be one off next to a breakpoint
        while z >= self.breakpoint(idx) {
            idx += 1;
        }
        while idx > 0 && z < self.breakpoint(idx - 1) {
            idx -= 1;
        }
        Ok(idx)
    }

    pub fn sign_at(&self, z: f64) -> Result<Polarity> {
        Ok(if self.segment_index(z)? % 2 == 0 {
            Polarity::Plus
        } else {
            Polarity::Minus
        })
    }

    /// `(Bx, dBx/dx)` at transverse offset `x` and drop position `z`.
    pub fn evaluate(&self, x: f64, z: f64) -> Result<(f64, f64)> {
        let gradient = self.sign_at(z)?.value() * self.geometry.gradient_magnitude;
        Ok((gradient * x + self.geometry.bias_field, gradient))
    }

    /// Number of sign changes in `[0, length]`.
    pub fn breakpoints_within(&self, length: f64) -> usize {
        if length < self.breakpoint(0) {
            return 0;
        }
        let mut n = ((length - self.breakpoint(0)) / self.geometry.tooth_width).floor() as usize + 1;
        while self.breakpoint(n) <= length {
            n += 1;
        }
        while n > 0 && self.breakpoint(n - 1) > length {
            n -= 1;
        }
        n
    }
}

/// One row of an exported field map. Gradients in T/m, positions in m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldSample {
    pub z: f64,
    pub dbx_dx: f64,
    pub dby_dx: Option<f64>,
    pub dbz_dx: Option<f64>,
    pub bx: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldMap {
    samples: Vec<FieldSample>,
    /// Rows discarded during ingestion (NaN or unparsable).
    pub dropped_rows: usize,
}

impl FieldMap {
    /// Sort by z, average duplicate positions, and require two samples.
    pub fn new(samples: Vec<FieldSample>) -> Result<Self> {
        Self::from_raw(samples, 0)
    }

    fn from_raw(mut samples: Vec<FieldSample>, dropped_rows: usize) -> Result<Self> {
        samples.sort_by(|a, b| a.z.total_cmp(&b.z));
        let mut merged: Vec<FieldSample> = Vec::with_capacity(samples.len());
        let mut run: Vec<FieldSample> = Vec::new();
        for s in samples {
            if run.last().is_some_and(|r| r.z != s.z) {
                merged.push(average(&run));
                run.clear();
            }
            run.push(s);
        }
        if !run.is_empty() {
            merged.push(average(&run));
        }
        if merged.len() < 2 {
            return Err(Error::TooFewSamples {
                usable: merged.len(),
                dropped: dropped_rows,
            });
        }
        Ok(Self {
            samples: merged,
            dropped_rows,
        })
    }

    pub fn samples(&self) -> &[FieldSample] {
        &self.samples
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.samples[0].z, self.samples[self.samples.len() - 1].z)
    }

    /// Write the map as CSV that [`ingest_field_map`] reads back with
    /// [`ColumnSpec::default`].
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["z_m", "dBx_dx_T_per_m", "dBy_dx_T_per_m", "dBz_dx_T_per_m", "Bx_T"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.samples {
            w.write_record([
                s.z.to_string(),
                s.dbx_dx.to_string(),
                opt(s.dby_dx),
                opt(s.dbz_dx),
                opt(s.bx),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn average(run: &[FieldSample]) -> FieldSample {
    let n = run.len() as f64;
    let mean_opt = |f: fn(&FieldSample) -> Option<f64>| {
        let vals: Vec<f64> = run.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    FieldSample {
        z: run[0].z,
        dbx_dx: run.iter().map(|s| s.dbx_dx).sum::<f64>() / n,
        dby_dx: mean_opt(|s| s.dby_dx),
        dbz_dx: mean_opt(|s| s.dbz_dx),
        bx: mean_opt(|s| s.bx),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientUnit {
    TeslaPerMetre,
    TeslaPerMillimetre,
}

impl GradientUnit {
    fn scale(self) -> f64 {
        match self {
            GradientUnit::TeslaPerMetre => 1.0,
            GradientUnit::TeslaPerMillimetre => 1e3,
        }
    }
}

impl std::str::FromStr for GradientUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "t/m" => Ok(GradientUnit::TeslaPerMetre),
            "t/mm" => Ok(GradientUnit::TeslaPerMillimetre),
            other => Err(Error::InvalidArgument(format!("unknown gradient unit `{other}` (T/m or T/mm)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthUnit {
    Metre,
    Millimetre,
}

impl std::str::FromStr for LengthUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" => Ok(LengthUnit::Metre),
            "mm" => Ok(LengthUnit::Millimetre),
            other => Err(Error::InvalidArgument(format!("unknown length unit `{other}` (m or mm)"))),
        }
    }
}

impl LengthUnit {
    fn scale(self) -> f64 {
        match self {
            LengthUnit::Metre => 1.0,
            LengthUnit::Millimetre => 1e-3,
        }
    }
}

/// Maps header names onto [`FieldSample`] fields.
///
/// Units left as `None` are read from the header (`dBx_dx [T/mm]`,
/// `z (mm)`, `..._per_mm`); otherwise SI is assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub z: String,
    pub dbx_dx: String,
    pub dby_dx: Option<String>,
    pub dbz_dx: Option<String>,
    pub bx: Option<String>,
    pub gradient_unit: Option<GradientUnit>,
    pub z_unit: Option<LengthUnit>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            z: "z_m".into(),
            dbx_dx: "dBx_dx_T_per_m".into(),
            dby_dx: Some("dBy_dx_T_per_m".into()),
            dbz_dx: Some("dBz_dx_T_per_m".into()),
            bx: Some("Bx_T".into()),
            gradient_unit: None,
            z_unit: None,
        }
    }
}

fn header_matches(header: &str, wanted: &str) -> bool {
    let h = header.trim();
    if h == wanted {
        return true;
    }
    // allow a trailing unit annotation: `dBx_dx [T/mm]`, `z (mm)`
    h.strip_prefix(wanted)
        .map(|rest| {
            let rest = rest.trim_start();
            rest.starts_with('[') || rest.starts_with('(')
        })
        .unwrap_or(false)
}

fn gradient_unit_from_header(h: &str) -> GradientUnit {
    let l = h.to_ascii_lowercase();
    if l.contains("t/mm") || l.ends_with("per_mm") {
        GradientUnit::TeslaPerMillimetre
    } else {
        GradientUnit::TeslaPerMetre
    }
}

fn length_unit_from_header(h: &str) -> LengthUnit {
    let l = h.to_ascii_lowercase();
    if l.contains("[mm]") || l.contains("(mm)") || l.ends_with("_mm") {
        LengthUnit::Millimetre
    } else {
        LengthUnit::Metre
    }
}

/// Read a comma- or tab-delimited field map with a header row.
pub fn ingest_field_map(path: impl AsRef<Path>, spec: &ColumnSpec) -> Result<FieldMap> {
    let mut text = String::new();
    std::fs::File::open(path.as_ref())?.read_to_string(&mut text)?;
    parse_field_map(&text, spec)
}

pub fn parse_field_map(text: &str, spec: &ColumnSpec) -> Result<FieldMap> {
    let header_line = text.lines().next().unwrap_or_default();
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let find = |wanted: &str| headers.iter().position(|h| header_matches(h, wanted));

    let z_col = find(&spec.z).ok_or_else(|| Error::MissingColumn(spec.z.clone()))?;
    let dbx_col = find(&spec.dbx_dx).ok_or_else(|| Error::MissingColumn(spec.dbx_dx.clone()))?;
    let opt_col = |name: &Option<String>| name.as_deref().and_then(find);
    let dby_col = opt_col(&spec.dby_dx);
    let dbz_col = opt_col(&spec.dbz_dx);
    let bx_col = opt_col(&spec.bx);

    let gscale = spec
        .gradient_unit
        .unwrap_or_else(|| gradient_unit_from_header(&headers[dbx_col]))
        .scale();
    let zscale = spec
        .z_unit
        .unwrap_or_else(|| length_unit_from_header(&headers[z_col]))
        .scale();

    let mut samples = Vec::new();
    let mut dropped = 0usize;
    for record in rdr.records() {
        let record = record?;
        let get = |i: usize| -> Option<f64> { record.get(i).and_then(|s| s.parse::<f64>().ok()) };
        let opt = |col: Option<usize>, scale: f64| -> std::result::Result<Option<f64>, ()> {
            match col {
                None => Ok(None),
                Some(i) => match record.get(i).map(str::trim) {
                    None | Some("") => Ok(None),
                    Some(s) => match s.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(Some(v * scale)),
                        _ => Err(()),
                    },
                },
            }
        };
        let (Some(z), Some(dbx)) = (get(z_col), get(dbx_col)) else {
            dropped += 1;
            continue;
        };
        if !z.is_finite() || !dbx.is_finite() {
            dropped += 1;
            continue;
        }
        let (Ok(dby), Ok(dbz), Ok(bx)) = (opt(dby_col, gscale), opt(dbz_col, gscale), opt(bx_col, 1.0)) else {
            dropped += 1;
            continue;
        };
        samples.push(FieldSample {
            z: z * zscale,
            dbx_dx: dbx * gscale,
            dby_dx: dby,
            dbz_dx: dbz,
            bx,
        });
    }
    if dropped > 0 {
        log::warn!("field map: dropped {dropped} rows with missing or non-finite values");
    }
    FieldMap::from_raw(samples, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SquareWaveFit {
    /// Trapezoid-weighted mean of |dBx/dx| over the range, T/m.
    pub avg_gradient_magnitude: f64,
    /// Mean spacing between sign changes, m; `None` when fewer than two.
    pub fitted_pitch: Option<f64>,
    /// Mean Bx over the range, T; `None` when the map has no Bx column.
    pub fitted_bias: Option<f64>,
    /// RMS deviation of |dBx/dx| from its mean, T/m.
    pub residual_rms: f64,
    pub sign_changes: usize,
    /// Mean y and z gradient components over the range, reported only.
    pub mean_dby_dx: Option<f64>,
    pub mean_dbz_dx: Option<f64>,
}

/// Summarise a field map over `z_range` as an ideal square wave.
pub fn fit_square_wave(map: &FieldMap, z_range: Option<(f64, f64)>) -> Result<SquareWaveFit> {
    let (lo, hi) = z_range.unwrap_or_else(|| map.z_range());
    let (zmin, zmax) = map.z_range();
    if !(lo < hi) || lo < zmin || hi > zmax {
        return Err(Error::FieldMap(format!(
            "z range [{lo}, {hi}] must be increasing and inside the sample domain [{zmin}, {zmax}]"
        )));
    }
    let pts: Vec<&FieldSample> = map.samples().iter().filter(|s| s.z >= lo && s.z <= hi).collect();
    if pts.len() < 2 {
        return Err(Error::FieldMap("fewer than 2 samples inside the z range".into()));
    }

    let trapezoid_mean = |f: &dyn Fn(&FieldSample) -> f64| -> f64 {
        let mut acc = crate::numeric::Neumaier::default();
        for pair in pts.windows(2) {
            acc.add(0.5 * (pair[1].z - pair[0].z) * (f(pair[0]) + f(pair[1])));
        }
        acc.sum() / (pts[pts.len() - 1].z - pts[0].z)
    };

    let avg = trapezoid_mean(&|s| s.dbx_dx.abs());
    let residual_rms = trapezoid_mean(&|s| (s.dbx_dx.abs() - avg).powi(2)).sqrt();

    let mut crossings = Vec::new();
    let mut last: Option<&FieldSample> = None;
    for s in &pts {
        if s.dbx_dx == 0.0 {
            continue;
        }
        if let Some(p) = last {
            if p.dbx_dx.signum() != s.dbx_dx.signum() {
                let frac = p.dbx_dx / (p.dbx_dx - s.dbx_dx);
                crossings.push(p.z + frac * (s.z - p.z));
            }
        }
        last = Some(s);
    }
    let fitted_pitch = (crossings.len() >= 2)
        .then(|| (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64);
    if fitted_pitch.is_none() {
        log::warn!("field map: fewer than two gradient sign changes in range, pitch unset");
    }

    let mean_of = |f: fn(&FieldSample) -> Option<f64>| {
        let v: Vec<f64> = pts.iter().filter_map(|s| f(s)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };

    Ok(SquareWaveFit {
        avg_gradient_magnitude: avg,
        fitted_pitch,
        fitted_bias: mean_of(|s| s.bx),
        residual_rms,
        sign_changes: crossings.len(),
        mean_dby_dx: mean_of(|s| s.dby_dx),
        mean_dbz_dx: mean_of(|s| s.dbz_dx),
    })
}

/// Map of header name to column values, used by the CLI to describe a map.
pub fn column_summary(map: &FieldMap) -> BTreeMap<&'static str, usize> {
    let s = map.samples();
    BTreeMap::from([
        ("samples", s.len()),
        ("dropped", map.dropped_rows),
        ("with_dBy_dx", s.iter().filter(|x| x.dby_dx.is_some()).count()),
        ("with_dBz_dx", s.iter().filter(|x| x.dbz_dx.is_some()).count()),
        ("with_Bx", s.iter().filter(|x| x.bx.is_some()).count()),
    ])
}
