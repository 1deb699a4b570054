//! Tag load sets, the structural mode and the normalized backscatter alphabet.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{invalid, Result, RisError};

/// Tolerance on `|Γ| ≤ 1` for loads read from measured tables.
const PASSIVE_TOLERANCE: f64 = 1e-12;

/// Axis (radians) the synthesized varactor arc is centered on.
pub const DEFAULT_ARC_AXIS: f64 = PI;

/// The `K` reflection coefficients a tag can switch between, plus the
/// load-independent structural mode `A_s` and the scattering efficiency `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSet {
    gammas: Vec<Complex64>,
    structural_mode: Complex64,
    eta: f64,
}

impl LoadSet {
    pub fn new(gammas: Vec<Complex64>, structural_mode: Complex64, eta: f64) -> Result<Self> {
        if gammas.len() < 2 {
            return Err(invalid(format!("a load set needs at least two loads, got {}", gammas.len())));
        }
        if let Some((k, g)) = gammas.iter().enumerate().find(|(_, g)| !(g.norm() <= 1.0 + PASSIVE_TOLERANCE)) {
            return Err(invalid(format!("load {k} has |Γ| = {} > 1; passive tags cannot amplify", g.norm())));
        }
        if !structural_mode.re.is_finite() || !structural_mode.im.is_finite() {
            return Err(invalid("structural mode must be finite"));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(invalid(format!("scattering efficiency must lie in (0, 1], got {eta}")));
        }
        if mean_square_deviation(&gammas, structural_mode)? <= 0.0 {
            return Err(RisError::DegenerateLoadSet);
        }
        Ok(Self { gammas, structural_mode, eta })
    }

    /// Commercial two-state tag: `Γ = {+1, -1}`, minimum-scattering antenna.
    pub fn binary() -> Self {
        Self::new(vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)], Complex64::new(0.0, 0.0), 1.0)
            .expect("valid binary load set")
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(invalid(format!("scattering efficiency must lie in (0, 1], got {eta}")));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn gammas(&self) -> &[Complex64] {
        &self.gammas
    }

    pub fn structural_mode(&self) -> Complex64 {
        self.structural_mode
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Number of loads `K`.
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// `(1/K) Σ |A_s - Γ_k|²`.
    pub fn mean_square_deviation(&self) -> f64 {
        mean_square_deviation(&self.gammas, self.structural_mode).expect("non-empty by invariant")
    }

    /// `A_s - Γ_k` for every load.
    pub fn deviations(&self) -> Vec<Complex64> {
        self.gammas.iter().map(|&g| self.structural_mode - g).collect()
    }

    /// Keeps only the loads at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let gammas = indices
            .iter()
            .map(|&i| self.gammas.get(i).copied().ok_or_else(|| invalid(format!("load index {i} out of range"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(gammas, self.structural_mode, self.eta)
    }
}

/// `(1/K) Σ |A_s - Γ_k|²`, the mean power of the tag modulation before
/// normalization.
pub fn mean_square_deviation(gammas: &[Complex64], structural_mode: Complex64) -> Result<f64> {
    if gammas.is_empty() {
        return Err(invalid("mean square deviation of an empty load set"));
    }
    let sum: f64 = gammas.iter().map(|&g| (structural_mode - g).norm_sqr()).sum();
    Ok(sum / gammas.len() as f64)
}

/// Unit mean-square symbols `Y_k = (A_s - Γ_k) / ζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationAlphabet {
    pub symbols: Vec<Complex64>,
    /// `ζ = sqrt((1/K) Σ |A_s - Γ_k|²)`.
    pub norm_factor: f64,
}

impl ModulationAlphabet {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len() as f64
    }
}

pub fn modulation_alphabet(loads: &LoadSet) -> Result<ModulationAlphabet> {
    let msd = mean_square_deviation(&loads.gammas, loads.structural_mode)?;
    if !(msd > 0.0) {
        return Err(RisError::DegenerateLoadSet);
    }
    let norm_factor = msd.sqrt();
    let symbols = loads.deviations().into_iter().map(|d| d / norm_factor).collect();
    Ok(ModulationAlphabet { symbols, norm_factor })
}

/// Unit-magnitude reflection coefficients evenly spaced over an arc of
/// `arc_span_deg` degrees centered on `axis` radians.
pub fn varactor_arc(count: usize, arc_span_deg: f64, axis: f64) -> Result<Vec<Complex64>> {
    if count < 2 {
        return Err(invalid(format!("a varactor set needs at least two loads, got {count}")));
    }
    if !(arc_span_deg > 0.0 && arc_span_deg <= 360.0) {
        return Err(invalid(format!("arc span must lie in (0, 360] degrees, got {arc_span_deg}")));
    }
    let span = arc_span_deg.to_radians();
    let step = span / (count - 1) as f64;
    Ok((0..count).map(|k| Complex64::from_polar(1.0, axis - span / 2.0 + step * k as f64)).collect())
}

/// Synthesized varactor load set on the default axis.
pub fn synth_varactor_set(count: usize, arc_span_deg: f64, structural_mode: Complex64) -> Result<LoadSet> {
    synth_varactor_set_on_axis(count, arc_span_deg, DEFAULT_ARC_AXIS, structural_mode)
}

pub fn synth_varactor_set_on_axis(
    count: usize,
    arc_span_deg: f64,
    axis: f64,
    structural_mode: Complex64,
) -> Result<LoadSet> {
    LoadSet::new(varactor_arc(count, arc_span_deg, axis)?, structural_mode, 1.0)
}

/// Angular extent in degrees of a cluster of complex points, measured from the
/// origin around their mean direction.
pub fn angular_span_deg(points: &[Complex64]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let sum: Complex64 = points.iter().sum();
    let reference = if sum.norm() > 0.0 { sum.arg() } else { points[0].arg() };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in points {
        let mut d = p.arg() - reference;
        d = (d + PI).rem_euclid(TAU) - PI;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (hi - lo).to_degrees()
}

/// Structural mode `A_s = -a e^{j axis}` (real and positive on the default
/// axis) whose magnitude `a` is bisected so that `{A_s - Γ_k}` spans
/// `target_span_deg`.
pub fn calibrate_structural_mode(count: usize, arc_span_deg: f64, axis: f64, target_span_deg: f64) -> Result<Complex64> {
    let gammas = varactor_arc(count, arc_span_deg, axis)?;
    let direction = -Complex64::from_polar(1.0, axis);
    let span_at = |a: f64| {
        let a_s = direction * a;
        let devs: Vec<Complex64> = gammas.iter().map(|&g| a_s - g).collect();
        angular_span_deg(&devs)
    };
    let at_zero = span_at(0.0);
    if !(target_span_deg > 0.0 && target_span_deg <= at_zero) {
        return Err(invalid(format!(
            "target span {target_span_deg}° must lie in (0, {at_zero}°] for this arc"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while span_at(hi) > target_span_deg {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(invalid("structural mode calibration diverged"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if span_at(mid) > target_span_deg {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(direction * (0.5 * (lo + hi)))
}

/// The `K = 21`, 120° varactor set with its structural mode calibrated so the
/// deviations `A_s - Γ_k` span 60°.
pub fn calibrated_varactor_set(count: usize, arc_span_deg: f64, target_span_deg: f64) -> Result<LoadSet> {
    let a_s = calibrate_structural_mode(count, arc_span_deg, DEFAULT_ARC_AXIS, target_span_deg)?;
    synth_varactor_set(count, arc_span_deg, a_s)
}

/// `g = η L_ST L_TD E|A_s - Γ|² G_rel`; the direct-link gain is the same
/// product with every other factor set to one.
pub fn element_gain(eta: f64, loss_st: f64, loss_td: f64, msd: f64, rel_antenna_gain: f64) -> Result<f64> {
    let factors = [
        ("eta", eta),
        ("loss_st", loss_st),
        ("loss_td", loss_td),
        ("msd", msd),
        ("rel_antenna_gain", rel_antenna_gain),
    ];
    for (name, value) in factors {
        if !(value > 0.0) || !value.is_finite() {
            return Err(invalid(format!("{name} must be positive, got {value}")));
        }
    }
    Ok(eta * loss_st * loss_td * msd * rel_antenna_gain)
}

pub fn direct_gain(loss_sd: f64) -> Result<f64> {
    element_gain(1.0, loss_sd, 1.0, 1.0, 1.0)
}

/// Parses a load table:
///
/// ```text
/// # comment
/// A_s 0.5 0.0
/// eta 0.1
/// 1.0 0.0
/// -1.0 0.0
/// ```
///
/// Header lines may appear in any order before or between load lines; a
/// missing `A_s` defaults to zero and a missing `eta` to one.
pub fn parse_load_table(text: &str) -> Result<LoadSet> {
    let mut structural_mode = Complex64::new(0.0, 0.0);
    let mut eta = 1.0;
    let mut gammas = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| RisError::Parse { line: line_no, msg: format!("bad number {s:?}: {e}") })
        };
        match fields[0] {
            "A_s" | "a_s" => {
                if fields.len() != 3 {
                    return Err(RisError::Parse { line: line_no, msg: "expected `A_s <re> <im>`".into() });
                }
                structural_mode = Complex64::new(num(fields[1])?, num(fields[2])?);
            }
            "eta" => {
                if fields.len() != 2 {
                    return Err(RisError::Parse { line: line_no, msg: "expected `eta <value>`".into() });
                }
                eta = num(fields[1])?;
            }
            _ => {
                if fields.len() != 2 {
                    return Err(RisError::Parse { line: line_no, msg: "expected `<re> <im>`".into() });
                }
                gammas.push(Complex64::new(num(fields[0])?, num(fields[1])?));
            }
        }
    }
    LoadSet::new(gammas, structural_mode, eta)
}

pub fn format_load_table(loads: &LoadSet) -> String {
    let mut out = String::new();
    let a = loads.structural_mode;
    writeln!(out, "A_s {:e} {:e}", a.re, a.im).unwrap();
    writeln!(out, "eta {:e}", loads.eta).unwrap();
    for g in &loads.gammas {
        writeln!(out, "{:e} {:e}", g.re, g.im).unwrap();
    }
    out
}

pub fn read_load_table(path: &Path) -> Result<LoadSet> {
    let text = std::fs::read_to_string(path).map_err(|source| RisError::Io { path: path.to_path_buf(), source })?;
    parse_load_table(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn msd_examples() {
        let pm = [c(1.0, 0.0), c(-1.0, 0.0)];
        assert_eq!(mean_square_deviation(&pm, c(0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(mean_square_deviation(&pm, c(0.5, 0.0)).unwrap(), 1.25);
        let flat = [c(0.3, 0.0), c(0.3, 0.0)];
        assert_eq!(mean_square_deviation(&flat, c(0.3, 0.0)).unwrap(), 0.0);
        assert!(matches!(LoadSet::new(flat.to_vec(), c(0.3, 0.0), 1.0), Err(RisError::DegenerateLoadSet)));
        assert!(mean_square_deviation(&[], c(0.0, 0.0)).is_err());
    }

    #[test]
    fn load_set_invariants() {
        assert!(LoadSet::new(vec![c(1.0, 0.0)], c(0.0, 0.0), 1.0).is_err());
        assert!(LoadSet::new(vec![c(1.1, 0.0), c(-1.0, 0.0)], c(0.0, 0.0), 1.0).is_err());
        assert!(LoadSet::new(vec![c(1.0, 0.0), c(-1.0, 0.0)], c(0.0, 0.0), 0.0).is_err());
        assert!(LoadSet::new(vec![c(1.0, 0.0), c(-1.0, 0.0)], c(0.0, 0.0), 1.5).is_err());
    }

    #[test]
    fn alphabet_examples() {
        let a = modulation_alphabet(&LoadSet::binary()).unwrap();
        assert_eq!(a.symbols, vec![c(-1.0, 0.0), c(1.0, 0.0)]);

        let shifted = LoadSet::new(vec![c(1.0, 0.0), c(-1.0, 0.0)], c(0.5, 0.0), 1.0).unwrap();
        let a = modulation_alphabet(&shifted).unwrap();
        assert!((a.symbols[0].re - -0.4472).abs() < 1e-4 && a.symbols[0].im == 0.0);
        assert!((a.symbols[1].re - 1.3416).abs() < 1e-4);
        assert!((a.norm_factor - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn varactor_two_point_arc_is_antipodal() {
        let set = synth_varactor_set(2, 180.0, c(0.0, 0.0)).unwrap();
        let g = set.gammas();
        let sep = (g[0].arg() - g[1].arg()).abs().to_degrees();
        assert!((sep - 180.0).abs() < 1e-9);
        assert!(synth_varactor_set(1, 120.0, c(0.0, 0.0)).is_err());
        assert!(synth_varactor_set(4, 0.0, c(0.0, 0.0)).is_err());
        assert!(synth_varactor_set(4, 361.0, c(0.0, 0.0)).is_err());
    }

    #[test]
    fn varactor_spans_without_structural_mode() {
        let set = synth_varactor_set(21, 120.0, c(0.0, 0.0)).unwrap();
        assert!((angular_span_deg(set.gammas()) - 120.0).abs() < 1e-9);
        assert!((angular_span_deg(&set.deviations()) - 120.0).abs() < 1e-9);
        let alpha = modulation_alphabet(&set).unwrap();
        assert!((angular_span_deg(&alpha.symbols) - 120.0).abs() < 1e-9);
    }

    #[test]
    fn calibrated_structural_mode_halves_the_span() {
        let set = calibrated_varactor_set(21, 120.0, 60.0).unwrap();
        let span = angular_span_deg(&set.deviations());
        assert!((span - 60.0).abs() < 5.0, "span {span}");
        assert!((span - 60.0).abs() < 1e-6);
        // A 120° unit arc seen from a unit offset opposite its center spans
        // exactly half the angle.
        let a_s = set.structural_mode();
        assert!((a_s - c(1.0, 0.0)).norm() < 1e-9, "{a_s}");
        assert!(calibrate_structural_mode(21, 120.0, PI, 150.0).is_err());
    }

    #[test]
    fn element_gain_examples() {
        assert_eq!(element_gain(1.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        let g = element_gain(0.1, 8.357e-5, 8.357e-5, 1.25, 10.0).unwrap();
        assert!((g - 8.729e-9).abs() < 1e-3 * 8.729e-9);
        let full = element_gain(1.0, 8.357e-5, 8.357e-5, 1.25, 10.0).unwrap();
        assert!((g - 0.1 * full).abs() < 1e-15 * full);
        assert!(element_gain(0.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(element_gain(1.0, -1.0, 1.0, 1.0, 1.0).is_err());
        assert_eq!(direct_gain(3.5e-4).unwrap(), 3.5e-4);
    }

    #[test]
    fn load_table_round_trip() {
        let set = calibrated_varactor_set(21, 120.0, 60.0).unwrap().with_eta(0.1).unwrap();
        let parsed = parse_load_table(&format_load_table(&set)).unwrap();
        assert_eq!(parsed, set);
        let text = "# two loads\nA_s 0.5 0\neta 0.25\n1 0\n-1 0 # second\n";
        let parsed = parse_load_table(text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed.structural_mode(), c(0.5, 0.0));
        assert_eq!(parsed.eta(), 0.25);
        assert!(matches!(parse_load_table("1 0\n-1 x\n"), Err(RisError::Parse { line: 2, .. })));
        assert!(parse_load_table("1 0 3\n").is_err());
    }

    proptest! {
        #[test]
        fn alphabet_has_unit_mean_power(
            k in 2usize..30,
            seed in prop::collection::vec((0.0f64..1.0, 0.0f64..TAU), 30),
            a_re in -2.0f64..2.0,
            a_im in -2.0f64..2.0,
        ) {
            let gammas: Vec<Complex64> = seed[..k].iter().map(|&(r, t)| Complex64::from_polar(r, t)).collect();
            if let Ok(set) = LoadSet::new(gammas, c(a_re, a_im), 1.0) {
                let alpha = modulation_alphabet(&set).unwrap();
                prop_assert!((alpha.mean_power() - 1.0).abs() <= 1e-12);
                for (y, d) in alpha.symbols.iter().zip(set.deviations()) {
                    prop_assert!((y * alpha.norm_factor - d).norm() <= 1e-12 * (1.0 + d.norm()));
                }
            }
        }

        #[test]
        fn element_gain_is_multiplicative(
            f in prop::collection::vec(1e-6f64..10.0, 5),
            which in 0usize..5,
        ) {
            let base = element_gain(f[0].min(1.0), f[1], f[2], f[3], f[4]).unwrap();
            let mut g = f.clone();
            g[0] = g[0].min(1.0);
            let doubled_input = g[which] * 2.0;
            g[which] = doubled_input;
            let doubled = element_gain(g[0], g[1], g[2], g[3], g[4]).unwrap();
            prop_assert!((doubled - 2.0 * base).abs() <= 1e-12 * base);
        }
    }
}
