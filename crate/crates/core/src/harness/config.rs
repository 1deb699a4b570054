//! Scenario configuration.
//!
//! Each experiment starts from a preset matching its published setup; a TOML
//! file given on the command line overrides any subset of the fields.
//!
//! ```toml
//! seed = 7
//! trials = 2000
//!
//! [surface]
//! elements = 64
//! spacing_x = 0.1
//! spacing_y = 0.05
//!
//! [link]
//! d_ris_sd = 2.0
//! kappa_sd = 0.0
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{
    build_geometry, noise_power, path_loss, wavelength, FadingProfile, GeometrySpec, LosPhase, NoiseSpec, RicianSpec,
    SurfaceGeometry,
};
use crate::error::{invalid, Result, RisError};
use crate::gen2::Gen2Timing;
use crate::loads::{calibrated_varactor_set, element_gain, direct_gain, read_load_table, LoadSet};
use crate::optimizer::LinkGains;
use crate::units::{db_to_linear, dbm_to_watts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub trials: usize,
    pub surface: SurfaceConfig,
    pub link: LinkConfig,
    pub noise: NoiseConfig,
    pub loads: LoadConfig,
    pub estimation: EstimationConfig,
    pub gen2: Gen2Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub elements: usize,
    /// Horizontal element spacing in meters; half a wavelength when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_x: Option<f64>,
    /// Vertical element spacing in meters; half a wavelength when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_y: Option<f64>,
    /// Backscatter efficiency of each tag.
    pub eta: f64,
    /// Tag antenna gain relative to the source and destination antennas.
    pub rel_antenna_gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub power_dbm: f64,
    pub carrier_hz: f64,
    pub d_sd: f64,
    pub d_ris_sd: f64,
    pub ref_distance: f64,
    pub exponent_sd: f64,
    pub exponent_st: f64,
    pub exponent_td: f64,
    pub kappa_sd: f64,
    pub kappa_st: f64,
    pub kappa_td: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub temperature_k: f64,
    pub bandwidth_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    /// Number of varactor states of the multi-load set.
    pub varactor_count: usize,
    /// Arc spanned by the varactor reflection coefficients, in degrees.
    pub arc_deg: f64,
    /// Angular spread of the backscattered symbols the structural mode is tuned to.
    pub span_target_deg: f64,
    /// Optional measured table replacing the synthesized varactor set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    pub coherence_symbols: f64,
    /// Fixed pilot fraction; the default policy picks it from `M` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gen2Config {
    pub blf_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_select: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t4: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_delay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_pu: Option<f64>,
    pub rounds: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::distance_preset()
    }
}

impl ScenarioConfig {
    /// Gain versus surface distance: 100 elements at half-wavelength spacing,
    /// Rician links with `κ = 8`.
    pub fn distance_preset() -> Self {
        Self {
            seed: 1,
            trials: 10_000,
            surface: SurfaceConfig { elements: 100, spacing_x: None, spacing_y: None, eta: 0.1, rel_antenna_gain_db: 10.0 },
            link: LinkConfig {
                power_dbm: 5.0,
                carrier_hz: 870e6,
                d_sd: 3.0,
                d_ris_sd: 1.0,
                ref_distance: 3.0,
                exponent_sd: 3.0,
                exponent_st: 3.0,
                exponent_td: 3.0,
                kappa_sd: 8.0,
                kappa_st: 8.0,
                kappa_td: 8.0,
            },
            noise: NoiseConfig { temperature_k: 290.0, bandwidth_hz: 48e6 },
            loads: LoadConfig { varactor_count: 21, arc_deg: 120.0, span_target_deg: 60.0, table: None },
            estimation: EstimationConfig { coherence_symbols: 2.4e6, alpha: None },
            gen2: Gen2Config { blf_hz: 40e3, t_select: None, t4: None, t_delay: None, t_pu: None, rounds: 10 },
        }
    }

    /// Gain versus element count, surface 1 m from a 3 m link.
    pub fn elements_preset() -> Self {
        let mut cfg = Self::distance_preset();
        cfg.link.d_sd = 3.0;
        cfg.link.d_ris_sd = 1.0;
        cfg
    }

    /// Channel-estimation study: Rayleigh links, 15 m link 8 m from the surface.
    pub fn csi_preset() -> Self {
        let mut cfg = Self::distance_preset();
        cfg.link.kappa_sd = 0.0;
        cfg.link.kappa_st = 0.0;
        cfg.link.kappa_td = 0.0;
        cfg.link.d_ris_sd = 8.0;
        cfg.link.d_sd = 15.0;
        cfg.trials = 2_000;
        cfg
    }

    /// Random configuration search over a 100-tag prototype with 10 cm by
    /// 5 cm spacing.
    pub fn search_preset() -> Self {
        let mut cfg = Self::distance_preset();
        cfg.surface.spacing_x = Some(0.1);
        cfg.surface.spacing_y = Some(0.05);
        cfg.link.d_sd = 1.4;
        cfg.link.d_ris_sd = 1.0;
        cfg
    }

    /// Applies the TOML overrides in `text` on top of `self`.
    pub fn overlay(&self, text: &str) -> Result<Self> {
        let patch: toml::Table = toml::from_str(text).map_err(|e| config_error(&e))?;
        let mut base = toml::Table::try_from(self).map_err(|e| invalid(format!("config encoding: {e}")))?;
        merge(&mut base, patch);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| config_error(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn overlay_file(&self, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| RisError::Io { path: path.to_path_buf(), source })?;
        self.overlay(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        let s = &self.surface;
        let l = &self.link;
        let positive = [
            ("surface.eta", s.eta),
            ("link.carrier_hz", l.carrier_hz),
            ("link.d_sd", l.d_sd),
            ("link.d_ris_sd", l.d_ris_sd),
            ("link.ref_distance", l.ref_distance),
            ("link.exponent_sd", l.exponent_sd),
            ("link.exponent_st", l.exponent_st),
            ("link.exponent_td", l.exponent_td),
            ("noise.temperature_k", self.noise.temperature_k),
            ("noise.bandwidth_hz", self.noise.bandwidth_hz),
            ("loads.arc_deg", self.loads.arc_deg),
            ("loads.span_target_deg", self.loads.span_target_deg),
            ("estimation.coherence_symbols", self.estimation.coherence_symbols),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if s.eta > 1.0 {
            return Err(invalid(format!("surface.eta must not exceed 1, got {}", s.eta)));
        }
        for (name, v) in [("surface.spacing_x", s.spacing_x), ("surface.spacing_y", s.spacing_y)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(invalid(format!("{name} must be positive, got {v}")));
                }
            }
        }
        for (name, k) in [("link.kappa_sd", l.kappa_sd), ("link.kappa_st", l.kappa_st), ("link.kappa_td", l.kappa_td)] {
            if !(k >= 0.0) || !k.is_finite() {
                return Err(invalid(format!("{name} must be non-negative, got {k}")));
            }
        }
        if self.loads.varactor_count < 2 {
            return Err(invalid("loads.varactor_count must be at least 2"));
        }
        self.timing()?;
        Ok(())
    }

    pub fn wavelength(&self) -> Result<f64> {
        wavelength(self.link.carrier_hz)
    }

    pub fn power_watts(&self) -> f64 {
        dbm_to_watts(self.link.power_dbm)
    }

    pub fn noise_watts(&self) -> Result<f64> {
        Ok(noise_power(&NoiseSpec::new(self.noise.temperature_k, self.noise.bandwidth_hz)?))
    }

    pub fn fading(&self) -> Result<FadingProfile> {
        let spec = |k: f64| RicianSpec::new(k, 1.0).map(|s| s.with_los_phase(LosPhase::Random));
        Ok(FadingProfile {
            direct: spec(self.link.kappa_sd)?,
            source_tag: spec(self.link.kappa_st)?,
            tag_dest: spec(self.link.kappa_td)?,
        })
    }

    pub fn geometry(&self) -> Result<SurfaceGeometry> {
        let lambda = self.wavelength()?;
        build_geometry(&GeometrySpec {
            elements: self.surface.elements,
            spacing_x: self.surface.spacing_x.unwrap_or(lambda / 2.0),
            spacing_y: self.surface.spacing_y.unwrap_or(lambda / 2.0),
            d_sd: self.link.d_sd,
            d_ris_sd: self.link.d_ris_sd,
            ref_distance: self.link.ref_distance,
            wavelength: lambda,
            exponent_sd: self.link.exponent_sd,
            exponent_st: self.link.exponent_st,
            exponent_td: self.link.exponent_td,
        })
    }

    /// Large-scale gains of the direct link and of each element for `loads`.
    pub fn link_gains(&self, loads: &LoadSet) -> Result<LinkGains> {
        let geometry = self.geometry()?;
        gains_for(&geometry, loads, self.surface.eta, self.surface.rel_antenna_gain_db)
    }

    /// The multi-state varactor set, from the table file when configured.
    pub fn varactor_loads(&self) -> Result<LoadSet> {
        let set = match &self.loads.table {
            Some(path) => read_load_table(Path::new(path))?,
            None => calibrated_varactor_set(self.loads.varactor_count, self.loads.arc_deg, self.loads.span_target_deg)?,
        };
        set.with_eta(self.surface.eta)
    }

    pub fn binary_loads(&self) -> Result<LoadSet> {
        LoadSet::binary().with_eta(self.surface.eta)
    }

    pub fn timing(&self) -> Result<Gen2Timing> {
        let g = &self.gen2;
        let base = Gen2Timing::with_blf(g.blf_hz)?;
        Gen2Timing::new(
            g.blf_hz,
            g.t_select.unwrap_or(base.t_select),
            g.t4.unwrap_or(base.t4),
            g.t_delay.unwrap_or(base.t_delay),
            g.t_pu.unwrap_or(base.t_pu),
        )
    }
}

/// `g_0 = L_SD` and `g_m = η L_ST L_TD · msd · G`.
pub fn gains_for(geometry: &SurfaceGeometry, loads: &LoadSet, eta: f64, rel_gain_db: f64) -> Result<LinkGains> {
    let direct = direct_gain(path_loss(&geometry.direct)?)?;
    let msd = loads.mean_square_deviation();
    let gain = db_to_linear(rel_gain_db);
    let elements = geometry
        .source_tag
        .iter()
        .zip(&geometry.tag_dest)
        .map(|(st, td)| element_gain(eta, path_loss(st)?, path_loss(td)?, msd, gain))
        .collect::<Result<Vec<f64>>>()?;
    Ok(LinkGains { direct, elements })
}

fn config_error(e: &dyn std::fmt::Display) -> RisError {
    invalid(format!("config: {}", e.to_string().trim_end()))
}

fn merge(base: &mut toml::Table, patch: toml::Table) {
    for (key, value) in patch {
        let merged = match (base.remove(&key), value) {
            (Some(toml::Value::Table(mut b)), toml::Value::Table(p)) => {
                merge(&mut b, p);
                toml::Value::Table(b)
            }
            // integers are accepted where the field is a float
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        base.insert(key, merged);
    }
}
