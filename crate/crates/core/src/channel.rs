//! Link geometry, large-scale path loss and Rician small-scale fading.
//!
//! Every link (source to destination, source to tag `m`, tag `m` to
//! destination) carries a [`LinkGeometry`] for its average attenuation and a
//! [`RicianSpec`] for its flat-fading coefficient. Channels of different links
//! are drawn independently.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380649e-23;

/// Free-space wavelength in meters for a carrier in hertz.
pub fn wavelength(carrier_hz: f64) -> Result<f64> {
    if !(carrier_hz > 0.0) || !carrier_hz.is_finite() {
        return Err(invalid(format!("carrier frequency must be positive, got {carrier_hz}")));
    }
    Ok(SPEED_OF_LIGHT / carrier_hz)
}

/// Parameters of the simplified large-scale path-loss model of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    /// Link length in meters.
    pub distance: f64,
    /// Reference distance `d0` in meters.
    pub ref_distance: f64,
    /// Path-loss exponent.
    pub exponent: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
}

impl LinkGeometry {
    pub fn new(distance: f64, ref_distance: f64, exponent: f64, wavelength: f64) -> Result<Self> {
        let geom = Self { distance, ref_distance, exponent, wavelength };
        geom.validate()?;
        Ok(geom)
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("distance", self.distance),
            ("ref_distance", self.ref_distance),
            ("exponent", self.exponent),
            ("wavelength", self.wavelength),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(invalid(format!("link {name} must be positive and finite, got {value}")));
            }
        }
        Ok(())
    }
}

/// Linear power gain `(λ / (4π d0))² (d0 / d)^v`.
///
/// The proportionality constant of the model is fixed to one, so at `d = d0`
/// the value is the free-space loss at the reference distance.
pub fn path_loss(geom: &LinkGeometry) -> Result<f64> {
    geom.validate()?;
    let free_space = geom.wavelength / (4.0 * PI * geom.ref_distance);
    Ok(free_space * free_space * (geom.ref_distance / geom.distance).powf(geom.exponent))
}

/// How the phase of the line-of-sight component is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LosPhase {
    /// Uniform in `[0, 2π)`, drawn independently for every sample.
    Random,
    /// Fixed phase in radians.
    Fixed(f64),
}

/// Rician fading law of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RicianSpec {
    /// LoS-to-scatter power ratio; zero gives Rayleigh fading.
    pub kappa: f64,
    /// `E[|h|²]`.
    pub mean_power: f64,
    pub los_phase: LosPhase,
}

impl RicianSpec {
    pub fn new(kappa: f64, mean_power: f64) -> Result<Self> {
        if !(kappa >= 0.0) || kappa.is_nan() {
            return Err(invalid(format!("Rician factor must be non-negative, got {kappa}")));
        }
        if !(mean_power > 0.0) || !mean_power.is_finite() {
            return Err(invalid(format!("mean power must be positive, got {mean_power}")));
        }
        Ok(Self { kappa, mean_power, los_phase: LosPhase::Random })
    }

    pub fn rayleigh() -> Self {
        Self { kappa: 0.0, mean_power: 1.0, los_phase: LosPhase::Random }
    }

    pub fn with_los_phase(mut self, phase: LosPhase) -> Self {
        self.los_phase = phase;
        self
    }

    /// Power carried by the deterministic component.
    pub fn los_power(&self) -> f64 {
        if self.kappa.is_infinite() {
            return self.mean_power;
        }
        self.kappa / (self.kappa + 1.0) * self.mean_power
    }

    /// Power carried by the circularly symmetric scatter component.
    pub fn scatter_power(&self) -> f64 {
        if self.kappa.is_infinite() {
            return 0.0;
        }
        self.mean_power / (self.kappa + 1.0)
    }
}

/// Circularly symmetric complex Gaussian with `E[|z|²] = variance`.
pub fn sample_complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let scale = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

/// One draw of a Rician channel coefficient.
pub fn sample_rician<R: Rng + ?Sized>(spec: &RicianSpec, rng: &mut R) -> Complex64 {
    let theta = match spec.los_phase {
        LosPhase::Random => rng.random::<f64>() * TAU,
        LosPhase::Fixed(theta) => theta,
    };
    let los = Complex64::from_polar(spec.los_power().sqrt(), theta);
    los + sample_complex_gaussian(spec.scatter_power(), rng)
}

/// Cascaded source-tag-destination coefficient.
#[inline]
pub fn cascade(h_st: Complex64, h_td: Complex64) -> Complex64 {
    h_st * h_td
}

/// Receiver thermal noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Receiver temperature in kelvin.
    pub temperature: f64,
    /// Receiver bandwidth in hertz.
    pub bandwidth: f64,
}

impl NoiseSpec {
    pub fn new(temperature: f64, bandwidth: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(invalid(format!("temperature must be positive, got {temperature}")));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { temperature, bandwidth })
    }
}

/// Noise power `k_b T B` in watts.
pub fn noise_power(spec: &NoiseSpec) -> f64 {
    BOLTZMANN * spec.temperature * spec.bandwidth
}

/// Direct and cascaded coefficients, the only channel quantities the
/// received signal depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    pub direct: Complex64,
    pub cascade: Vec<Complex64>,
}

impl EffectiveChannels {
    pub fn len(&self) -> usize {
        self.cascade.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cascade.is_empty()
    }
}

/// One realization of every link coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h0: Complex64,
    pub h_st: Vec<Complex64>,
    pub h_td: Vec<Complex64>,
    pub h_cascade: Vec<Complex64>,
}

impl ChannelSet {
    pub fn from_links(h0: Complex64, h_st: Vec<Complex64>, h_td: Vec<Complex64>) -> Result<Self> {
        if h_st.len() != h_td.len() {
            return Err(invalid(format!(
                "source-tag and tag-destination link counts differ ({} vs {})",
                h_st.len(),
                h_td.len()
            )));
        }
        let h_cascade = h_st.iter().zip(&h_td).map(|(&a, &b)| cascade(a, b)).collect();
        Ok(Self { h0, h_st, h_td, h_cascade })
    }

    /// Number of surface elements.
    pub fn len(&self) -> usize {
        self.h_cascade.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h_cascade.is_empty()
    }

    /// Phase of the cascaded channel of element `m`, defined by `h_m = |h_m| e^{-jφ_m}`.
    pub fn cascade_phase(&self, m: usize) -> f64 {
        -self.h_cascade[m].arg()
    }

    pub fn effective(&self) -> EffectiveChannels {
        EffectiveChannels { direct: self.h0, cascade: self.h_cascade.clone() }
    }
}

/// Fading laws per link class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingProfile {
    pub direct: RicianSpec,
    pub source_tag: RicianSpec,
    pub tag_dest: RicianSpec,
}

impl FadingProfile {
    pub fn uniform(kappa: f64) -> Result<Self> {
        let spec = RicianSpec::new(kappa, 1.0)?;
        Ok(Self { direct: spec, source_tag: spec, tag_dest: spec })
    }
}

/// Draws `h_SD` followed by `(h_ST_m, h_T_mD)` for every element in order.
pub fn draw_channels<R: Rng + ?Sized>(profile: &FadingProfile, elements: usize, rng: &mut R) -> ChannelSet {
    let h0 = sample_rician(&profile.direct, rng);
    let mut h_st = Vec::with_capacity(elements);
    let mut h_td = Vec::with_capacity(elements);
    for _ in 0..elements {
        h_st.push(sample_rician(&profile.source_tag, rng));
        h_td.push(sample_rician(&profile.tag_dest, rng));
    }
    ChannelSet::from_links(h0, h_st, h_td).expect("equal link counts by construction")
}

/// Placement and propagation parameters of a surface scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometrySpec {
    pub elements: usize,
    /// Element pitch along the axis parallel to the source-destination link.
    pub spacing_x: f64,
    /// Element pitch along the orthogonal in-plane axis.
    pub spacing_y: f64,
    /// Source-destination separation.
    pub d_sd: f64,
    /// Perpendicular distance of the source-destination line from the surface.
    pub d_ris_sd: f64,
    pub ref_distance: f64,
    pub wavelength: f64,
    pub exponent_sd: f64,
    pub exponent_st: f64,
    pub exponent_td: f64,
}

/// Positions and per-link geometries of a surface scenario.
///
/// The surface lies in the `y = 0` plane; its rows run along `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGeometry {
    pub rows: usize,
    pub cols: usize,
    pub positions: Vec<[f64; 3]>,
    pub source: [f64; 3],
    pub destination: [f64; 3],
    pub direct: LinkGeometry,
    pub source_tag: Vec<LinkGeometry>,
    pub tag_dest: Vec<LinkGeometry>,
}

impl SurfaceGeometry {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Near-square grid dimensions `(rows, cols)` with `cols = ceil(sqrt(M))`.
pub fn grid_shape(elements: usize) -> (usize, usize) {
    if elements == 0 {
        return (0, 0);
    }
    let mut cols = (elements as f64).sqrt().ceil() as usize;
    // guard against sqrt rounding for perfect squares
    while cols * cols < elements {
        cols += 1;
    }
    while cols > 1 && (cols - 1) * (cols - 1) >= elements {
        cols -= 1;
    }
    let rows = elements.div_ceil(cols);
    (rows, cols)
}

/// Lays the elements row-major on a grid centered at the origin and places
/// source and destination on a line parallel to the rows.
pub fn build_geometry(spec: &GeometrySpec) -> Result<SurfaceGeometry> {
    let positive = [
        ("spacing_x", spec.spacing_x),
        ("spacing_y", spec.spacing_y),
        ("d_sd", spec.d_sd),
        ("d_ris_sd", spec.d_ris_sd),
    ];
    for (name, value) in positive {
        if !(value > 0.0) || !value.is_finite() {
            return Err(invalid(format!("{name} must be positive, got {value}")));
        }
    }

    let (rows, cols) = grid_shape(spec.elements);
    let x_center = (cols.saturating_sub(1)) as f64 / 2.0;
    let z_center = (rows.saturating_sub(1)) as f64 / 2.0;
    let positions: Vec<[f64; 3]> = (0..spec.elements)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            [(c as f64 - x_center) * spec.spacing_x, 0.0, (r as f64 - z_center) * spec.spacing_y]
        })
        .collect();

    let source = [-spec.d_sd / 2.0, spec.d_ris_sd, 0.0];
    let destination = [spec.d_sd / 2.0, spec.d_ris_sd, 0.0];
    let link = |d: f64, v: f64| LinkGeometry::new(d, spec.ref_distance, v, spec.wavelength);

    let direct = link(spec.d_sd, spec.exponent_sd)?;
    let source_tag = positions
        .iter()
        .map(|&p| link(distance(source, p), spec.exponent_st))
        .collect::<Result<Vec<_>>>()?;
    let tag_dest = positions
        .iter()
        .map(|&p| link(distance(p, destination), spec.exponent_td))
        .collect::<Result<Vec<_>>>()?;

    Ok(SurfaceGeometry { rows, cols, positions, source, destination, direct, source_tag, tag_dest })
}
