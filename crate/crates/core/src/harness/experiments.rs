//! Monte Carlo sweeps.
//!
//! Every trial draws from its own generator, seeded from the scenario seed, a
//! per-experiment salt and the trial index. The same trial index therefore
//! sees the same fading at every sweep point (common random numbers), which
//! keeps trends across the sweep free of independent sampling noise. Trials
//! run in parallel and are reduced in index order, so results do not depend
//! on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{gains_for, ScenarioConfig};
use super::report::Report;
use crate::channel::{draw_channels, EffectiveChannels};
use crate::error::{invalid, Result};
use crate::estimation::{channel_snr, csi_trial, pilot_fraction, EstimationSpec};
use crate::gen2::{inventory_power_trace, random_search, select_configuration, generate_population, ConfigurationTrace};
use crate::loads::{modulation_alphabet, LoadSet, ModulationAlphabet};
use crate::optimizer::{
    brute_force, element_terms, optimal_config, optimal_config_general, random_alphabet_instance,
    random_gaussian_instance, relative_gap, ElementTerms, LinkGains,
};
use crate::units::linear_to_db;

const SALT_DISTANCE: u64 = 0x6469_7374;
const SALT_ELEMENTS: u64 = 0x656c_656d;
const SALT_CSI: u64 = 0x6373_6900;
const SALT_SEARCH: u64 = 0x7365_6172;
const SALT_ORACLE: u64 = 0x6f72_6163;
const SALT_TRACE: u64 = 0x7472_6163;

/// Default distance grid in meters.
pub fn default_distance_grid() -> Vec<f64> {
    (1..=20).map(|i| 0.5 * i as f64).collect()
}

/// Default element-count grid.
pub fn default_element_grid() -> Vec<usize> {
    vec![1, 5, 10, 15, 20, 25, 50, 75, 100, 125, 150, 175, 200]
}

pub const DEFAULT_MU_LIST: [usize; 4] = [1, 10, 25, 50];

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `index` of a run with the given seed and salt.
pub fn stream_seed(seed: u64, salt: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ salt) ^ index)
}

pub fn stream_rng(seed: u64, salt: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, salt, index))
}

/// Summary of per-trial power ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainStats {
    /// `10 log10` of the mean ratio.
    pub gain_db: f64,
    /// Mean of the per-trial ratios in dB.
    pub db_mean: f64,
    /// 95% confidence half-width of the mean, in dB above the mean.
    pub ci_db: f64,
    pub trials: usize,
}

pub fn summarize(ratios: &[f64]) -> GainStats {
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let db_mean = ratios.iter().map(|&r| linear_to_db(r)).sum::<f64>() / n;
    let var = if ratios.len() > 1 {
        ratios.iter().map(|&r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let half = 1.96 * (var / n).sqrt();
    GainStats { gain_db: linear_to_db(mean), db_mean, ci_db: linear_to_db((mean + half) / mean), trials: ratios.len() }
}

/// `|y_opt|² / |y0|²` for one set of element terms.
pub fn optimal_ratio(terms: &ElementTerms) -> Result<f64> {
    let best = optimal_config(terms);
    Ok(terms.combined(&best.config)?.norm_sqr() / terms.y0().norm_sqr())
}

struct Surface {
    gains: LinkGains,
    alphabet: ModulationAlphabet,
}

impl Surface {
    fn new(cfg: &ScenarioConfig, loads: &LoadSet) -> Result<Self> {
        let geometry = cfg.geometry()?;
        Ok(Self {
            gains: gains_for(&geometry, loads, cfg.surface.eta, cfg.surface.rel_antenna_gain_db)?,
            alphabet: modulation_alphabet(loads)?,
        })
    }

    fn ratio(&self, channels: &EffectiveChannels) -> Result<f64> {
        optimal_ratio(&element_terms(channels, &self.gains, &self.alphabet)?)
    }
}

fn run_trials<T, F>(trials: usize, trial: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..trials as u64).into_par_iter().map(trial).collect()
}

/// Mean gain of the optimal configuration over the direct link, per surface
/// distance, for the binary load set, the multi-state varactor set, and the
/// two end states of the varactor set.
pub fn run_gain_vs_distance(cfg: &ScenarioConfig, grid: &[f64]) -> Result<Report> {
    cfg.validate()?;
    let binary = cfg.binary_loads()?;
    let multi = cfg.varactor_loads()?;
    let k = multi.len();
    let ends = multi.subset(&[0, k - 1])?;
    let mut report = Report::new([
        "d_ris_sd_m".to_string(),
        "baseline_db".into(),
        "gain_k2_db".into(),
        format!("gain_k{k}_db"),
        "gap_db".into(),
        "gain_k2_arc_ends_db".into(),
        "gain_k2_dbmean".into(),
        format!("gain_k{k}_dbmean"),
        "ci_k2_db".into(),
        format!("ci_k{k}_db"),
        "trials".into(),
    ]);
    let profile = cfg.fading()?;
    for &d in grid {
        let mut point = cfg.clone();
        point.link.d_ris_sd = d;
        let two = Surface::new(&point, &binary)?;
        let many = Surface::new(&point, &multi)?;
        let pair = Surface::new(&point, &ends)?;
        let m = point.surface.elements;
        let ratios = run_trials(cfg.trials, |t| {
            let mut rng = stream_rng(cfg.seed, SALT_DISTANCE, t);
            let channels = draw_channels(&profile, m, &mut rng).effective();
            Ok([two.ratio(&channels)?, many.ratio(&channels)?, pair.ratio(&channels)?])
        })?;
        let column = |i: usize| summarize(&ratios.iter().map(|r| r[i]).collect::<Vec<f64>>());
        let (s2, sk, se) = (column(0), column(1), column(2));
        report.push(vec![
            d,
            0.0,
            s2.gain_db,
            sk.gain_db,
            sk.gain_db - s2.gain_db,
            se.gain_db,
            s2.db_mean,
            sk.db_mean,
            s2.ci_db,
            sk.ci_db,
            cfg.trials as f64,
        ]);
    }
    Ok(report)
}

/// Element spacing used by [`run_gain_vs_elements`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpacingMode {
    /// 10 cm by 5 cm, closer than half a wavelength.
    Dense,
    HalfLambda,
}

impl SpacingMode {
    pub fn name(self) -> &'static str {
        match self {
            SpacingMode::Dense => "dense",
            SpacingMode::HalfLambda => "half_lambda",
        }
    }

    pub fn apply(self, cfg: &mut ScenarioConfig) {
        match self {
            SpacingMode::Dense => {
                cfg.surface.spacing_x = Some(0.1);
                cfg.surface.spacing_y = Some(0.05);
            }
            SpacingMode::HalfLambda => {
                cfg.surface.spacing_x = None;
                cfg.surface.spacing_y = None;
            }
        }
    }
}

/// Mean two-load gain per element count, with the backward-difference
/// marginal gain in dB per added element.
pub fn run_gain_vs_elements(cfg: &ScenarioConfig, grid: &[usize], modes: &[SpacingMode]) -> Result<Report> {
    cfg.validate()?;
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("element grid must be strictly increasing"));
    }
    let loads = cfg.binary_loads()?;
    let profile = cfg.fading()?;
    let mut columns = vec!["elements".to_string(), "baseline_db".to_string()];
    for mode in modes {
        let n = mode.name();
        columns.extend([format!("{n}_gain_db"), format!("{n}_gain_dbmean"), format!("{n}_ci_db"), format!("{n}_marginal_db")]);
    }
    columns.push("trials".into());
    let mut report = Report::new(columns);

    let mut per_mode: Vec<Vec<GainStats>> = Vec::new();
    for &mode in modes {
        let mut stats = Vec::with_capacity(grid.len());
        for &m in grid {
            let mut point = cfg.clone();
            mode.apply(&mut point);
            point.surface.elements = m;
            let surface = Surface::new(&point, &loads)?;
            let ratios = run_trials(cfg.trials, |t| {
                let mut rng = stream_rng(cfg.seed, SALT_ELEMENTS, t);
                surface.ratio(&draw_channels(&profile, m, &mut rng).effective())
            })?;
            stats.push(summarize(&ratios));
        }
        per_mode.push(stats);
    }
    for (i, &m) in grid.iter().enumerate() {
        let mut row = vec![m as f64, 0.0];
        for stats in &per_mode {
            let s = stats[i];
            let marginal = if i == 0 { f64::NAN } else { (s.gain_db - stats[i - 1].gain_db) / (m - grid[i - 1]) as f64 };
            row.extend([s.gain_db, s.db_mean, s.ci_db, marginal]);
        }
        row.push(cfg.trials as f64);
        report.push(row);
    }
    Ok(report)
}

/// Mean gain with perfect and with estimated channel knowledge per element
/// count. `mmse_override` replaces every estimation error variance.
pub fn run_csi_impact(cfg: &ScenarioConfig, grid: &[usize], mmse_override: Option<f64>) -> Result<Report> {
    cfg.validate()?;
    let loads = cfg.binary_loads()?;
    let profile = cfg.fading()?;
    let power = cfg.power_watts();
    let noise = cfg.noise_watts()?;
    let mut report = Report::new([
        "elements",
        "alpha",
        "mmse_direct",
        "mmse_element_mean",
        "gain_true_db",
        "gain_est_db",
        "gap_db",
        "gain_true_dbmean",
        "gain_est_dbmean",
        "trials",
    ]);
    for &m in grid {
        let mut point = cfg.clone();
        point.surface.elements = m;
        let surface = Surface::new(&point, &loads)?;
        let alpha = match cfg.estimation.alpha {
            Some(a) => a,
            None => pilot_fraction(m, cfg.estimation.coherence_symbols)?,
        };
        let snr = std::iter::once(surface.gains.direct)
            .chain(surface.gains.elements.iter().copied())
            .map(|g| channel_snr(power, g, noise))
            .collect();
        let spec = EstimationSpec::new(alpha, cfg.estimation.coherence_symbols, snr)?;
        let mmse = match mmse_override {
            Some(e) => vec![e; m + 1],
            None => spec.mmse_variances(),
        };
        let outcomes = run_trials(cfg.trials, |t| {
            let mut rng = stream_rng(cfg.seed, SALT_CSI, t);
            let truth = draw_channels(&profile, m, &mut rng).effective();
            csi_trial(&truth, &surface.gains, &surface.alphabet, &mmse, profile.direct.mean_power, &mut rng)
        })?;
        let truth: Vec<f64> = outcomes.iter().map(|o| o.true_csi).collect();
        let est: Vec<f64> = outcomes.iter().map(|o| o.estimated_csi).collect();
        let (st, se) = (summarize(&truth), summarize(&est));
        let element_mean = if m == 0 { f64::NAN } else { mmse[1..].iter().sum::<f64>() / m as f64 };
        report.push(vec![
            m as f64,
            alpha,
            mmse[0],
            element_mean,
            st.gain_db,
            se.gain_db,
            st.gain_db - se.gain_db,
            st.db_mean,
            se.db_mean,
            cfg.trials as f64,
        ]);
    }
    Ok(report)
}

/// Running-max improvement of random `μ`-tag configurations over one static
/// channel realization, per `μ`, next to the two-load optimum.
pub fn run_random_search_experiment(
    cfg: &ScenarioConfig,
    mu_list: &[usize],
    n_configs: usize,
    repetitions: usize,
) -> Result<Report> {
    cfg.validate()?;
    let loads = cfg.binary_loads()?;
    let surface = Surface::new(cfg, &loads)?;
    let profile = cfg.fading()?;
    let channels = draw_channels(&profile, cfg.surface.elements, &mut stream_rng(cfg.seed, SALT_SEARCH, 0)).effective();
    let terms = element_terms(&channels, &surface.gains, &surface.alphabet)?;
    let optimum = linear_to_db(optimal_ratio(&terms)?);

    let series = mu_list
        .par_iter()
        .enumerate()
        .map(|(i, &mu)| {
            let mut rng = stream_rng(cfg.seed, SALT_SEARCH, 1 + i as u64);
            random_search(&terms, mu, n_configs, repetitions, &mut rng)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    let mut columns = vec!["configs".to_string()];
    columns.extend(mu_list.iter().map(|mu| format!("mu_{mu}_db")));
    columns.push("optimum_db".into());
    let mut report = Report::new(columns);
    for n in 0..n_configs {
        let mut row = vec![(n + 1) as f64];
        row.extend(series.iter().map(|s| s[n]));
        row.push(optimum);
        report.push(row);
    }
    Ok(report)
}

/// Power trace of `configs` successive random `μ`-tag configurations set up
/// through Select commands on a seeded tag population.
pub fn run_power_trace(cfg: &ScenarioConfig, mu: usize, configs: usize) -> Result<ConfigurationTrace> {
    cfg.validate()?;
    let m = cfg.surface.elements;
    if mu == 0 || mu > m {
        return Err(invalid(format!("cannot activate {mu} of {m} tags")));
    }
    let loads = cfg.binary_loads()?;
    let surface = Surface::new(cfg, &loads)?;
    let profile = cfg.fading()?;
    let mut rng = stream_rng(cfg.seed, SALT_TRACE, 0);
    let channels = draw_channels(&profile, m, &mut rng).effective();
    let terms = element_terms(&channels, &surface.gains, &surface.alphabet)?;
    let timing = cfg.timing()?;
    let mut population = generate_population(m, &mut rng);
    let mut trace = ConfigurationTrace::default();
    for _ in 0..configs {
        let chosen = rand::seq::index::sample(&mut rng, m, mu).into_vec();
        let selected = select_configuration(&mut population, &chosen)?;
        let part = inventory_power_trace(&selected, &terms, cfg.power_watts(), &timing, cfg.gen2.rounds, &mut rng)?;
        trace.extend(&part);
    }
    Ok(trace)
}

/// Outcome of comparing the sweep optimizer against exhaustive search.
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub terms: ElementTerms,
    pub sweep: f64,
    pub brute: f64,
}

impl OracleCase {
    pub fn relative_gap(&self) -> f64 {
        relative_gap(self.sweep, self.brute)
    }
}

/// `binary_cases` Gaussian two-load instances with 1 to 12 elements and
/// `multi_cases` instances over the varactor alphabet with 1 to 4 elements.
pub fn oracle_cases(cfg: &ScenarioConfig, binary_cases: usize, multi_cases: usize) -> Result<Vec<OracleCase>> {
    let alphabet = modulation_alphabet(&cfg.varactor_loads()?)?;
    let total = binary_cases + multi_cases;
    (0..total as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, SALT_ORACLE, i);
            let terms = if (i as usize) < binary_cases {
                random_gaussian_instance(1 + i as usize % 12, 2, &mut rng)
            } else {
                random_alphabet_instance(1 + i as usize % 4, &alphabet, &mut rng)
            };
            let sweep = optimal_config_general(&terms)?.amplitude;
            let brute = brute_force(&terms)?.amplitude;
            Ok(OracleCase { terms, sweep, brute })
        })
        .collect()
}

pub fn oracle_report(cases: &[OracleCase]) -> Report {
    let mut report = Report::new(["instance", "loads", "elements", "sweep_amplitude", "brute_amplitude", "relative_gap"]);
    for (i, c) in cases.iter().enumerate() {
        report.push(vec![
            i as f64,
            c.terms.loads() as f64,
            c.terms.elements() as f64,
            c.sweep,
            c.brute,
            c.relative_gap(),
        ]);
    }
    report
}
