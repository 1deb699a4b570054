//! Imperfect channel knowledge.
//!
//! Pilot-based MMSE estimation leaves a residual error of variance
//! `MMSE_m = 1 / (1 + SNR_m / (M + 1) · α · L)` on each of the `M + 1` unknown
//! channels. The optimizer then works on the estimates while the received
//! power is scored on the true channels.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{draw_channels, sample_complex_gaussian, EffectiveChannels, FadingProfile};
use crate::error::{invalid, Result};
use crate::loads::ModulationAlphabet;
use crate::optimizer::{element_terms, optimal_config, LinkGains};

/// Smallest pilot fraction the default policy uses.
pub const MIN_PILOT_FRACTION: f64 = 0.01;
/// Largest pilot fraction the default policy uses.
pub const MAX_PILOT_FRACTION: f64 = 0.11;

/// Pilot budget and per-channel SNRs (`snr[0]` is the direct link).
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationSpec {
    alpha: f64,
    coherence_symbols: f64,
    snr: Vec<f64>,
}

impl EstimationSpec {
    pub fn new(alpha: f64, coherence_symbols: f64, snr: Vec<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("pilot fraction must lie in (0, 1), got {alpha}")));
        }
        if !(coherence_symbols > 0.0) || !coherence_symbols.is_finite() {
            return Err(invalid(format!("coherence length must be positive, got {coherence_symbols}")));
        }
        if snr.is_empty() {
            return Err(invalid("at least the direct channel must be estimated"));
        }
        if snr.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(invalid("SNRs must be finite and non-negative"));
        }
        check_pilot_budget(alpha, coherence_symbols, snr.len() - 1)?;
        Ok(Self { alpha, coherence_symbols, snr })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn coherence_symbols(&self) -> f64 {
        self.coherence_symbols
    }

    pub fn snr(&self) -> &[f64] {
        &self.snr
    }

    /// Number of surface elements `M`.
    pub fn elements(&self) -> usize {
        self.snr.len() - 1
    }

    /// `MMSE_m` for every channel, direct first.
    pub fn mmse_variances(&self) -> Vec<f64> {
        let m = self.elements();
        self.snr
            .iter()
            .map(|&s| mmse_formula(s, self.alpha, self.coherence_symbols, m))
            .collect()
    }
}

fn check_pilot_budget(alpha: f64, coherence_symbols: f64, elements: usize) -> Result<()> {
    let pilots = alpha * coherence_symbols;
    let unknowns = (elements + 1) as f64;
    if pilots < unknowns {
        return Err(invalid(format!("{pilots} pilot symbols cannot resolve {unknowns} channels")));
    }
    Ok(())
}

fn mmse_formula(snr: f64, alpha: f64, coherence_symbols: f64, elements: usize) -> f64 {
    1.0 / (1.0 + snr / (elements + 1) as f64 * alpha * coherence_symbols)
}

/// Residual estimation error variance for one channel.
pub fn mmse_variance(snr: f64, alpha: f64, coherence_symbols: f64, elements: usize) -> Result<f64> {
    if !(snr >= 0.0) || !(alpha > 0.0) || !(coherence_symbols > 0.0) {
        return Err(invalid("SNR must be non-negative, pilot fraction and coherence length positive"));
    }
    check_pilot_budget(alpha, coherence_symbols, elements)?;
    Ok(mmse_formula(snr, alpha, coherence_symbols, elements))
}

/// Default pilot fraction: the smallest whole percentage covering `M + 1`
/// pilots, between 1% and 11%.
pub fn pilot_fraction(elements: usize, coherence_symbols: f64) -> Result<f64> {
    let needed = ((elements + 1) as f64 * 100.0 / coherence_symbols).ceil() / 100.0;
    let alpha = needed.max(MIN_PILOT_FRACTION);
    if alpha > MAX_PILOT_FRACTION + 1e-12 {
        return Err(invalid(format!(
            "{} channels need more than {:.0}% of a {coherence_symbols}-symbol coherence block",
            elements + 1,
            MAX_PILOT_FRACTION * 100.0
        )));
    }
    Ok(alpha)
}

/// `SNR = 2P g / (N0 B)`.
pub fn channel_snr(power: f64, gain: f64, noise_power: f64) -> f64 {
    2.0 * power * gain / noise_power
}

/// Estimation spec for a surface with the given link gains, using the
/// default pilot policy.
pub fn estimation_for_gains(gains: &LinkGains, power: f64, noise_power: f64, coherence_symbols: f64) -> Result<EstimationSpec> {
    let alpha = pilot_fraction(gains.elements.len(), coherence_symbols)?;
    let snr = std::iter::once(gains.direct)
        .chain(gains.elements.iter().copied())
        .map(|g| channel_snr(power, g, noise_power))
        .collect();
    EstimationSpec::new(alpha, coherence_symbols, snr)
}

/// Draws channel estimates `ĥ` with `E|h - ĥ|² = MMSE · σ²` given the true
/// channels, where `σ²` is the channels' mean power.
///
/// The estimate is drawn from its conditional law given `h`,
/// `ĥ | h ~ CN((1 - e) h, σ² e (1 - e))`, so that `ĥ` and the error `h - ĥ`
/// are uncorrelated as for a linear MMSE estimator. `e = 0` returns `h`
/// exactly and `e = 1` returns zero.
pub fn sample_estimated_channels<R: Rng + ?Sized>(
    truth: &EffectiveChannels,
    mmse: &[f64],
    channel_power: f64,
    rng: &mut R,
) -> Result<EffectiveChannels> {
    if mmse.len() != truth.len() + 1 {
        return Err(invalid(format!("{} MMSE values for {} channels", mmse.len(), truth.len() + 1)));
    }
    if let Some(bad) = mmse.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(invalid(format!("MMSE variance {bad} outside [0, 1]")));
    }
    if !(channel_power >= 0.0) {
        return Err(invalid("channel power must be non-negative"));
    }
    let mut estimate = |h: Complex64, e: f64| -> Complex64 {
        let spread = sample_complex_gaussian(channel_power * e * (1.0 - e), rng);
        if e == 0.0 {
            h
        } else {
            (1.0 - e) * h + spread
        }
    };
    let direct = estimate(truth.direct, mmse[0]);
    let cascade = truth.cascade.iter().zip(&mmse[1..]).map(|(&h, &e)| estimate(h, e)).collect();
    Ok(EffectiveChannels { direct, cascade })
}

/// Estimation error `h̃ = h - ĥ` per channel, direct first.
pub fn estimation_error(truth: &EffectiveChannels, estimate: &EffectiveChannels) -> Vec<Complex64> {
    std::iter::once(truth.direct - estimate.direct)
        .chain(truth.cascade.iter().zip(&estimate.cascade).map(|(h, e)| h - e))
        .collect()
}

/// Power ratios `|y_opt|² / |y0|²` obtained with perfect and with estimated
/// channel knowledge, both scored on the true channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsiOutcome {
    pub true_csi: f64,
    pub estimated_csi: f64,
}

/// One realization: optimize on `truth` and on a fresh estimate of it.
pub fn csi_trial<R: Rng + ?Sized>(
    truth: &EffectiveChannels,
    gains: &LinkGains,
    alphabet: &ModulationAlphabet,
    mmse: &[f64],
    channel_power: f64,
    rng: &mut R,
) -> Result<CsiOutcome> {
    let estimate = sample_estimated_channels(truth, mmse, channel_power, rng)?;
    let true_terms = element_terms(truth, gains, alphabet)?;
    let est_terms = element_terms(&estimate, gains, alphabet)?;
    let baseline = true_terms.y0().norm_sqr();
    let best = true_terms.combined(&optimal_config(&true_terms).config)?.norm_sqr();
    let achieved = true_terms.combined(&optimal_config(&est_terms).config)?.norm_sqr();
    Ok(CsiOutcome { true_csi: best / baseline, estimated_csi: achieved / baseline })
}

/// Mean gains in dB over `trials` fresh channel draws.
pub fn gain_under_estimation<R: Rng + ?Sized>(
    profile: &FadingProfile,
    gains: &LinkGains,
    alphabet: &ModulationAlphabet,
    spec: &EstimationSpec,
    trials: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    if spec.elements() != gains.elements.len() {
        return Err(invalid("estimation spec and gains disagree on the element count"));
    }
    let mmse = spec.mmse_variances();
    let (mut sum_true, mut sum_est) = (0.0, 0.0);
    for _ in 0..trials {
        let truth = draw_channels(profile, gains.elements.len(), rng).effective();
        let outcome = csi_trial(&truth, gains, alphabet, &mmse, profile.direct.mean_power, rng)?;
        sum_true += outcome.true_csi;
        sum_est += outcome.estimated_csi;
    }
    let n = trials as f64;
    Ok((10.0 * (sum_true / n).log10(), 10.0 * (sum_est / n).log10()))
}
