//! Optimal per-element load selection.
//!
//! The received amplitude is `|y0 + Σ_m y_m[c_m]|`, where `y_m[k]` is the
//! contribution of element `m` when terminated at load `k`. Introducing an
//! auxiliary phase `φ`,
//!
//! ```text
//! max_c |y0 + Σ y_m[c_m]| = max_φ ( Re{e^{-jφ} y0} + Σ_m max_k Re{e^{-jφ} y_m[k]} )
//! ```
//!
//! and for fixed `φ` the inner problem separates per element. Each element's
//! decision only changes at a handful of angles (two per element for `K = 2`,
//! one per convex-hull vertex of `{y_m[k]}` in general), so sorting those
//! angles and walking the intervals between them visits every configuration
//! that can be optimal. Each crossing flips one element, so the running sum is
//! updated in constant time and the sort dominates: `O(M log M)` for fixed `K`.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{sample_complex_gaussian, EffectiveChannels};
use crate::error::{invalid, Result, RisError};
use crate::loads::ModulationAlphabet;

/// Breakpoints closer than this (radians) are treated as one.
pub const BREAKPOINT_DEDUP: f64 = 1e-12;

/// Upper bound on `K^M` accepted by [`brute_force`].
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// Direct term `y0` and the `M x K` table of element contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementTerms {
    y0: Complex64,
    loads: usize,
    terms: Vec<Complex64>,
}

impl ElementTerms {
    /// `terms` is row-major: element `m` occupies `terms[m*loads..(m+1)*loads]`.
    pub fn new(y0: Complex64, loads: usize, terms: Vec<Complex64>) -> Result<Self> {
        if loads == 0 {
            return Err(invalid("at least one load per element is required"));
        }
        if !terms.len().is_multiple_of(loads) {
            return Err(invalid(format!("{} terms do not split into rows of {loads}", terms.len())));
        }
        Ok(Self { y0, loads, terms })
    }

    pub fn from_rows(y0: Complex64, rows: &[Vec<Complex64>]) -> Result<Self> {
        let loads = rows.first().map_or(2, Vec::len);
        if rows.iter().any(|r| r.len() != loads) {
            return Err(invalid("all elements must have the same number of loads"));
        }
        Self::new(y0, loads, rows.concat())
    }

    pub fn y0(&self) -> Complex64 {
        self.y0
    }

    /// Number of elements `M`.
    pub fn elements(&self) -> usize {
        self.terms.len() / self.loads
    }

    /// Number of loads `K`.
    pub fn loads(&self) -> usize {
        self.loads
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.terms[m * self.loads..(m + 1) * self.loads]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Complex64]> {
        self.terms.chunks_exact(self.loads)
    }

    /// Multiplies `y0` and every term by `factor`.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self { y0: self.y0 * factor, loads: self.loads, terms: self.terms.iter().map(|&t| t * factor).collect() }
    }

    /// Sum `y0 + Σ_m terms[m][config[m]]`.
    pub fn combined(&self, config: &Configuration) -> Result<Complex64> {
        config.check(self)?;
        Ok(self.y0 + self.rows().zip(&config.choice).map(|(row, &c)| row[c]).sum::<Complex64>())
    }
}

/// Large-scale gains entering the element terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    /// `g_0`.
    pub direct: f64,
    /// `g_m` per element.
    pub elements: Vec<f64>,
}

/// `y0 = sqrt(g0) h0` and `y_m[k] = sqrt(g_m) h_m Y_k`.
pub fn element_terms(channels: &EffectiveChannels, gains: &LinkGains, alphabet: &ModulationAlphabet) -> Result<ElementTerms> {
    if channels.cascade.len() != gains.elements.len() {
        return Err(invalid(format!(
            "{} cascaded channels but {} element gains",
            channels.cascade.len(),
            gains.elements.len()
        )));
    }
    if alphabet.is_empty() {
        return Err(invalid("empty modulation alphabet"));
    }
    if gains.direct < 0.0 || gains.elements.iter().any(|&g| g < 0.0) {
        return Err(invalid("link gains must be non-negative"));
    }
    let y0 = gains.direct.sqrt() * channels.direct;
    let mut terms = Vec::with_capacity(channels.cascade.len() * alphabet.len());
    for (&h, &g) in channels.cascade.iter().zip(&gains.elements) {
        let w = g.sqrt() * h;
        terms.extend(alphabet.symbols.iter().map(|&y| w * y));
    }
    ElementTerms::new(y0, alphabet.len(), terms)
}

/// Load index chosen for every element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    pub choice: Vec<usize>,
}

impl Configuration {
    pub fn new(choice: Vec<usize>) -> Self {
        Self { choice }
    }

    pub fn uniform(elements: usize, load: usize) -> Self {
        Self { choice: vec![load; elements] }
    }

    pub fn len(&self) -> usize {
        self.choice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choice.is_empty()
    }

    fn check(&self, terms: &ElementTerms) -> Result<()> {
        if self.choice.len() != terms.elements() {
            return Err(invalid(format!(
                "configuration has {} entries for {} elements",
                self.choice.len(),
                terms.elements()
            )));
        }
        if let Some((m, &c)) = self.choice.iter().enumerate().find(|(_, &c)| c >= terms.loads()) {
            return Err(invalid(format!("element {m} selects load {c} of {}", terms.loads())));
        }
        Ok(())
    }
}

impl std::fmt::Display for Configuration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, c) in self.choice.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Sorted decision-change angles in `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakpointList {
    pub angles: Vec<f64>,
}

impl BreakpointList {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

/// An optimized configuration and its amplitude `|y0 + Σ y_m[c_m]|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub config: Configuration,
    pub amplitude: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// `Re{e^{-jφ} z}`.
#[inline]
fn projection(phi_rot: Complex64, z: Complex64) -> f64 {
    phi_rot.re * z.re + phi_rot.im * z.im
}

/// Two-load decision at phase `φ`: load 0 iff `cos(φ - ∠(y[0] - y[1])) ≥ 0`.
pub fn load_decision(phi: f64, terms_m: [Complex64; 2]) -> usize {
    let rot = Complex64::from_polar(1.0, phi);
    decide_pair(rot, terms_m[0], terms_m[1])
}

#[inline]
fn decide_pair(rot: Complex64, t0: Complex64, t1: Complex64) -> usize {
    if projection(rot, t0 - t1) >= 0.0 {
        0
    } else {
        1
    }
}

/// `argmax_k Re{e^{-jφ} y[k]}`, lowest index on ties.
#[inline]
fn decide_any(rot: Complex64, row: &[Complex64]) -> usize {
    let mut best = 0;
    for k in 1..row.len() {
        if projection(rot, row[k] - row[best]) > 0.0 {
            best = k;
        }
    }
    best
}

fn pair_breakpoints(t0: Complex64, t1: Complex64) -> Option<[f64; 2]> {
    let diff = t0 - t1;
    if diff == Complex64::new(0.0, 0.0) {
        return None;
    }
    let base = diff.arg();
    Some([wrap_angle(base + FRAC_PI_2), wrap_angle(base - FRAC_PI_2)])
}

fn k2_events(terms: &ElementTerms) -> Vec<(f64, usize)> {
    let mut events = Vec::with_capacity(2 * terms.elements());
    for (m, row) in terms.rows().enumerate() {
        if let Some(angles) = pair_breakpoints(row[0], row[1]) {
            events.extend(angles.iter().map(|&a| (a, m)));
        }
    }
    events
}

fn sort_dedup(mut angles: Vec<f64>) -> Vec<f64> {
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|next, kept| (*next - *kept).abs() <= BREAKPOINT_DEDUP);
    angles
}

/// The `2M` angles `±π/2 + ∠(y_m[0] - y_m[1])` at which two-load decisions
/// change, sorted. Elements whose two terms coincide contribute nothing.
pub fn breakpoints_k2(terms: &ElementTerms) -> Result<BreakpointList> {
    if terms.loads() != 2 {
        return Err(invalid(format!("two-load breakpoints need K = 2, got K = {}", terms.loads())));
    }
    let mut angles: Vec<f64> = k2_events(terms).into_iter().map(|(a, _)| a).collect();
    angles.sort_by(f64::total_cmp);
    Ok(BreakpointList { angles })
}

fn cross(o: Complex64, a: Complex64, b: Complex64) -> f64 {
    (a.re - o.re) * (b.im - o.im) - (a.im - o.im) * (b.re - o.re)
}

/// Counter-clockwise convex hull, collinear and duplicate points dropped.
fn convex_hull(points: &[Complex64]) -> Vec<Complex64> {
    let mut pts: Vec<Complex64> = points.to_vec();
    pts.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<Complex64> = Vec::with_capacity(pts.len() + 1);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Angles in `[0, 2π)` where `argmax_k Re{e^{-jφ} terms_m[k]}` changes.
///
/// These are the outward normals of the convex-hull edges of the terms, so at
/// most `K` of them exist (and `K ≤ 2(K-1)` for `K ≥ 2`).
pub fn envelope_breakpoints(terms_m: &[Complex64]) -> Vec<f64> {
    if terms_m.len() == 2 {
        return pair_breakpoints(terms_m[0], terms_m[1])
            .map(|a| sort_dedup(a.to_vec()))
            .unwrap_or_default();
    }
    let hull = convex_hull(terms_m);
    if hull.len() < 2 {
        return Vec::new();
    }
    let angles = (0..hull.len())
        .map(|i| {
            let edge = hull[(i + 1) % hull.len()] - hull[i];
            wrap_angle(edge.arg() - FRAC_PI_2)
        })
        .collect();
    sort_dedup(angles)
}

/// Same angles as [`envelope_breakpoints`], found by testing every pairwise
/// crossing `±π/2 + ∠(y[a] - y[b])` and keeping those where the crossing pair
/// attains the maximum. `O(K³)` per element; kept as an independent check.
pub fn envelope_breakpoints_by_pairs(terms_m: &[Complex64]) -> Vec<f64> {
    let scale = terms_m.iter().map(|t| t.norm()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut angles = Vec::new();
    for a in 0..terms_m.len() {
        for b in a + 1..terms_m.len() {
            let Some(candidates) = pair_breakpoints(terms_m[a], terms_m[b]) else {
                continue;
            };
            for phi in candidates {
                let rot = Complex64::from_polar(1.0, phi);
                let level = projection(rot, terms_m[a]).max(projection(rot, terms_m[b]));
                let top = terms_m.iter().map(|&t| projection(rot, t)).fold(f64::NEG_INFINITY, f64::max);
                if level >= top - tol {
                    angles.push(phi);
                }
            }
        }
    }
    let mut angles = sort_dedup(angles);
    // 0 and 2π - ε describe the same direction
    if angles.len() > 1 && TAU - angles[angles.len() - 1] + angles[0] <= BREAKPOINT_DEDUP {
        angles.pop();
    }
    angles
}

/// Walks the intervals between sorted `(angle, element)` events, probing
/// `φ = 0` first, then the wrap-around interval, then each interval in order.
/// Returns the first configuration of maximal `|sum|²`.
fn sweep<D>(terms: &ElementTerms, mut events: Vec<(f64, usize)>, decide: D) -> Solution
where
    D: Fn(Complex64, &[Complex64]) -> usize,
{
    let decide_all = |phi: f64| -> Vec<usize> {
        let rot = Complex64::from_polar(1.0, phi);
        terms.rows().map(|row| decide(rot, row)).collect()
    };
    let total = |choices: &[usize]| -> Complex64 {
        terms.y0() + terms.rows().zip(choices).map(|(row, &c)| row[c]).sum::<Complex64>()
    };

    let at_zero = decide_all(0.0);
    let zero_power = total(&at_zero).norm_sqr();
    let finish = |choice: Vec<usize>| {
        let config = Configuration::new(choice);
        let amplitude = terms.combined(&config).expect("sweep produces valid configurations").norm();
        Solution { config, amplitude }
    };
    if events.is_empty() {
        return finish(at_zero);
    }

    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut group_starts = vec![0usize];
    for i in 1..events.len() {
        if events[i].0 - events[group_starts[group_starts.len() - 1]].0 > BREAKPOINT_DEDUP {
            group_starts.push(i);
        }
    }
    let group_count = group_starts.len();
    let group_angle = |g: usize| events[group_starts[g]].0;
    let group_members = |g: usize| {
        let end = if g + 1 < group_count { group_starts[g + 1] } else { events.len() };
        &events[group_starts[g]..end]
    };

    let wrap_mid = wrap_angle(0.5 * (group_angle(group_count - 1) + group_angle(0) + TAU));
    let start = decide_all(wrap_mid);
    let mut choices = start.clone();
    let mut sum = total(&choices);

    // Step 0 is the wrap-around interval; step g + 1 the interval after group g.
    let mut best_power = zero_power;
    let mut best_step: Option<usize> = None;
    if sum.norm_sqr() > best_power {
        best_power = sum.norm_sqr();
        best_step = Some(0);
    }
    let mut changes: Vec<(usize, usize)> = Vec::new();
    let mut step_end = vec![0usize];
    for g in 0..group_count - 1 {
        let mid = 0.5 * (group_angle(g) + group_angle(g + 1));
        let rot = Complex64::from_polar(1.0, mid);
        for &(_, m) in group_members(g) {
            let row = terms.row(m);
            let next = decide(rot, row);
            if next != choices[m] {
                sum += row[next] - row[choices[m]];
                choices[m] = next;
                changes.push((m, next));
            }
        }
        step_end.push(changes.len());
        let power = sum.norm_sqr();
        if power > best_power {
            best_power = power;
            best_step = Some(g + 1);
        }
    }

    match best_step {
        None => finish(at_zero),
        Some(step) => {
            let mut choice = start;
            for &(m, k) in &changes[..step_end[step]] {
                choice[m] = k;
            }
            finish(choice)
        }
    }
}

/// Exact optimum for two loads per element in `O(M log M)`.
pub fn optimal_config_k2(terms: &ElementTerms) -> Result<Solution> {
    if terms.loads() != 2 {
        return Err(invalid(format!("two-load optimizer needs K = 2, got K = {}", terms.loads())));
    }
    Ok(sweep(terms, k2_events(terms), |rot, row| decide_pair(rot, row[0], row[1])))
}

/// Exact optimum for any number of loads; identical to
/// [`optimal_config_k2`] when `K = 2`.
pub fn optimal_config_general(terms: &ElementTerms) -> Result<Solution> {
    if terms.loads() == 2 {
        return optimal_config_k2(terms);
    }
    let mut events = Vec::new();
    for (m, row) in terms.rows().enumerate() {
        events.extend(envelope_breakpoints(row).into_iter().map(|a| (a, m)));
    }
    Ok(sweep(terms, events, decide_any))
}

/// Dispatches on `K`.
pub fn optimal_config(terms: &ElementTerms) -> Solution {
    optimal_config_general(terms).expect("general optimizer accepts any K")
}

/// Exhaustive search over all `K^M` configurations; ties go to the
/// lexicographically smallest configuration.
pub fn brute_force(terms: &ElementTerms) -> Result<Solution> {
    let m = terms.elements();
    let k = terms.loads();
    let count = (k as f64).powi(m as i32);
    if count > BRUTE_FORCE_LIMIT as f64 {
        return Err(RisError::Capacity { configurations: count, limit: BRUTE_FORCE_LIMIT });
    }
    let mut digits = vec![0usize; m];
    let mut best = digits.clone();
    let mut best_power = f64::NEG_INFINITY;
    loop {
        let sum = terms.y0() + terms.rows().zip(&digits).map(|(row, &c)| row[c]).sum::<Complex64>();
        let power = sum.norm_sqr();
        if power > best_power {
            best_power = power;
            best.copy_from_slice(&digits);
        }
        // odometer with the last element varying fastest
        let mut pos = m;
        loop {
            if pos == 0 {
                let config = Configuration::new(best);
                let amplitude = terms.combined(&config)?.norm();
                return Ok(Solution { config, amplitude });
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < k {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// `|y0 + Σ_m terms[m][config[m]]|`; received power is `2P` times its square.
pub fn received_amplitude(terms: &ElementTerms, config: &Configuration) -> Result<f64> {
    Ok(terms.combined(config)?.norm())
}

/// Random instance with i.i.d. `CN(0, 1)` direct term and element terms.
pub fn random_gaussian_instance<R: Rng + ?Sized>(elements: usize, loads: usize, rng: &mut R) -> ElementTerms {
    let y0 = sample_complex_gaussian(1.0, rng);
    let terms = (0..elements * loads).map(|_| sample_complex_gaussian(1.0, rng)).collect();
    ElementTerms::new(y0, loads, terms).expect("loads > 0")
}

/// Random instance with element terms `w_m Y_k`, `w_m ~ CN(0, 1)`, as produced
/// by a physical surface with a shared alphabet.
pub fn random_alphabet_instance<R: Rng + ?Sized>(elements: usize, alphabet: &ModulationAlphabet, rng: &mut R) -> ElementTerms {
    let y0 = sample_complex_gaussian(1.0, rng);
    let mut terms = Vec::with_capacity(elements * alphabet.len());
    for _ in 0..elements {
        let w = sample_complex_gaussian(1.0, rng);
        terms.extend(alphabet.symbols.iter().map(|&y| w * y));
    }
    ElementTerms::new(y0, alphabet.len(), terms).expect("non-empty alphabet")
}

/// Text dump of an instance: a `re im` line for `y0`, then one line of `K`
/// `re im` pairs per element. `#` starts a comment.
pub fn format_instance(terms: &ElementTerms) -> String {
    let mut out = String::new();
    writeln!(out, "# y0, then {} elements x {} loads", terms.elements(), terms.loads()).unwrap();
    writeln!(out, "{:e} {:e}", terms.y0().re, terms.y0().im).unwrap();
    for row in terms.rows() {
        let line: Vec<String> = row.iter().map(|t| format!("{:e} {:e}", t.re, t.im)).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    out
}

pub fn parse_instance(text: &str) -> Result<ElementTerms> {
    let mut y0 = None;
    let mut loads = None;
    let mut terms = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| RisError::Parse { line: line_no, msg: format!("bad number {s:?}: {e}") }))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() % 2 != 0 {
            return Err(RisError::Parse { line: line_no, msg: "odd number of values; expected re/im pairs".into() });
        }
        let pairs: Vec<Complex64> = values.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        if y0.is_none() {
            if pairs.len() != 1 {
                return Err(RisError::Parse { line: line_no, msg: "first line must hold y0 as one re/im pair".into() });
            }
            y0 = Some(pairs[0]);
            continue;
        }
        match loads {
            None => loads = Some(pairs.len()),
            Some(k) if k != pairs.len() => {
                return Err(RisError::Parse {
                    line: line_no,
                    msg: format!("element has {} loads, previous elements had {k}", pairs.len()),
                })
            }
            _ => {}
        }
        terms.extend(pairs);
    }
    let y0 = y0.ok_or(RisError::Parse { line: 0, msg: "missing y0 line".into() })?;
    ElementTerms::new(y0, loads.unwrap_or(2), terms)
}

/// Relative difference `|a - b| / max(|a|, |b|, tiny)`.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    (a - b).abs() / scale
}

/// Ordering helper for amplitude comparisons with a relative tolerance.
pub fn compare_amplitudes(a: f64, b: f64, rel_tol: f64) -> Ordering {
    if relative_gap(a, b) <= rel_tol {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loads::{calibrated_varactor_set, modulation_alphabet, LoadSet};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn polar(r: f64, t: f64) -> Complex64 {
        Complex64::from_polar(r, t)
    }

    #[test]
    fn element_terms_examples() {
        let alpha = modulation_alphabet(&LoadSet::binary()).unwrap();
        let empty = EffectiveChannels { direct: c(0.5, 0.0), cascade: vec![] };
        let t = element_terms(&empty, &LinkGains { direct: 4.0, elements: vec![] }, &alpha).unwrap();
        assert_eq!(t.elements(), 0);
        assert_eq!(t.y0(), c(1.0, 0.0));

        let ch = EffectiveChannels { direct: c(1.0, 0.0), cascade: vec![c(1.0, 0.0)] };
        let t = element_terms(&ch, &LinkGains { direct: 1.0, elements: vec![1.0] }, &alpha).unwrap();
        assert_eq!(t.row(0), &[c(-1.0, 0.0), c(1.0, 0.0)]);

        let one = ModulationAlphabet { symbols: vec![c(1.0, 0.0)], norm_factor: 1.0 };
        let ch = EffectiveChannels { direct: c(1.0, 0.0), cascade: vec![c(0.0, 1.0)] };
        let t = element_terms(&ch, &LinkGains { direct: 1.0, elements: vec![4.0] }, &one).unwrap();
        assert_eq!(t.row(0), &[c(0.0, 2.0)]);

        assert!(element_terms(&ch, &LinkGains { direct: 1.0, elements: vec![] }, &alpha).is_err());
    }

    #[test]
    fn load_decision_examples() {
        assert_eq!(load_decision(0.0, [c(1.0, 0.0), c(-1.0, 0.0)]), 0);
        assert_eq!(load_decision(PI, [c(1.0, 0.0), c(-1.0, 0.0)]), 1);
        assert_eq!(load_decision(0.0, [c(0.0, 1.0), c(0.0, -1.0)]), 0);
    }

    #[test]
    fn breakpoints_k2_examples() {
        let t = ElementTerms::from_rows(c(0.0, 0.0), &[vec![c(1.0, 0.0), c(-1.0, 0.0)]]).unwrap();
        let b = breakpoints_k2(&t).unwrap().angles;
        assert!((b[0] - PI / 2.0).abs() < 1e-15 && (b[1] - 3.0 * PI / 2.0).abs() < 1e-15);

        let d = polar(1.0, PI / 4.0);
        let t = ElementTerms::from_rows(c(0.0, 0.0), &[vec![d, c(0.0, 0.0)]]).unwrap();
        let b = breakpoints_k2(&t).unwrap().angles;
        assert!((b[0] - 3.0 * PI / 4.0).abs() < 1e-15 && (b[1] - 7.0 * PI / 4.0).abs() < 1e-15);

        let same = ElementTerms::from_rows(c(0.0, 0.0), &[vec![c(0.3, 0.1), c(0.3, 0.1)]]).unwrap();
        assert!(breakpoints_k2(&same).unwrap().is_empty());

        let k3 = ElementTerms::from_rows(c(0.0, 0.0), &[vec![c(1.0, 0.0); 3]]).unwrap();
        assert!(breakpoints_k2(&k3).is_err());
    }

    #[test]
    fn breakpoints_k2_match_decision_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let t = random_gaussian_instance(2, 2, &mut rng);
            let b = breakpoints_k2(&t).unwrap().angles;
            assert_eq!(b.len(), 4);
            assert!(b.windows(2).all(|w| w[0] <= w[1]));
            // direct evaluation of cos(φ - ∠(y[0]-y[1])) = 0 at each angle
            for &phi in &b {
                let hits = t.rows().filter(|row| (phi - (row[0] - row[1]).arg()).cos().abs() < 1e-12).count();
                assert!(hits >= 1);
            }
            // decisions are constant strictly between consecutive breakpoints
            for w in b.windows(2) {
                let probes: Vec<Vec<usize>> = (1..10)
                    .map(|i| {
                        let phi = w[0] + (w[1] - w[0]) * i as f64 / 10.0;
                        t.rows().map(|r| load_decision(phi, [r[0], r[1]])).collect()
                    })
                    .collect();
                assert!(probes.windows(2).all(|p| p[0] == p[1]));
            }
        }
    }

    #[test]
    fn k2_small_examples() {
        let t = ElementTerms::from_rows(c(1.0, 0.0), &[vec![c(0.5, 0.0), c(-0.5, 0.0)]]).unwrap();
        let s = optimal_config_k2(&t).unwrap();
        assert_eq!(s.config.choice, vec![0]);
        assert!((s.amplitude - 1.5).abs() < 1e-15);

        let t = ElementTerms::from_rows(c(0.0, 0.0), &[vec![polar(0.3, PI), polar(0.8, PI / 3.0)]]).unwrap();
        let s = optimal_config_k2(&t).unwrap();
        assert_eq!(s.config.choice, vec![1]);
        assert!((s.amplitude - 0.8).abs() < 1e-15);

        let none = ElementTerms::new(c(0.7, -0.2), 2, vec![]).unwrap();
        assert_eq!(optimal_config_k2(&none).unwrap().amplitude, c(0.7, -0.2).norm());
    }

    #[test]
    fn k2_matches_brute_force_m12() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let t = random_gaussian_instance(12, 2, &mut rng);
            let fast = optimal_config_k2(&t).unwrap();
            let exact = brute_force(&t).unwrap();
            assert!(relative_gap(fast.amplitude, exact.amplitude) <= 1e-9, "{} vs {}", fast.amplitude, exact.amplitude);
        }
    }

    #[test]
    fn envelope_examples() {
        let t = [c(1.0, 0.0), c(-1.0, 0.0)];
        let t2 = ElementTerms::from_rows(c(0.0, 0.0), &[t.to_vec()]).unwrap();
        assert_eq!(envelope_breakpoints(&t), breakpoints_k2(&t2).unwrap().angles);

        let third = [polar(1.0, 0.0), polar(1.0, 2.0 * PI / 3.0), polar(1.0, -2.0 * PI / 3.0)];
        let b = envelope_breakpoints(&third);
        let expected = [PI / 3.0, PI, 5.0 * PI / 3.0];
        assert_eq!(b.len(), 3);
        for (got, want) in b.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{b:?}");
        }

        // collinear, same phase: the smaller copy wins whenever cos φ < 0
        let b = envelope_breakpoints(&[c(10.0, 0.0), c(0.1, 0.0)]);
        assert!((b[0] - PI / 2.0).abs() < 1e-15 && (b[1] - 3.0 * PI / 2.0).abs() < 1e-15);

        assert!(envelope_breakpoints(&[c(0.2, 0.2); 4]).is_empty());
    }

    /// Fine-grid oracle: angles where the argmax changes between samples.
    fn grid_switches(terms_m: &[Complex64], samples: usize) -> Vec<f64> {
        let arg = |phi: f64| decide_any(polar(1.0, phi), terms_m);
        let step = TAU / samples as f64;
        let mut out = Vec::new();
        let mut prev = arg(0.0);
        for i in 1..=samples {
            let phi = step * i as f64;
            let cur = arg(phi);
            if cur != prev {
                out.push(phi - step / 2.0);
                prev = cur;
            }
        }
        out
    }

    #[test]
    fn envelope_matches_fine_grid_sweep() {
        let third = [polar(1.0, 0.0), polar(1.0, 2.0 * PI / 3.0), polar(1.0, -2.0 * PI / 3.0)];
        let grid = grid_switches(&third, 1_000_000);
        let b = envelope_breakpoints(&third);
        assert_eq!(grid.len(), b.len());
        for (g, e) in grid.iter().zip(&b) {
            assert!((g - e).abs() < 1e-5);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for k in [3usize, 5, 8] {
            for _ in 0..5 {
                let row: Vec<Complex64> = (0..k).map(|_| sample_complex_gaussian(1.0, &mut rng)).collect();
                let grid = grid_switches(&row, 200_000);
                let b = envelope_breakpoints(&row);
                // switches closer than the grid pitch may merge; none here in practice
                let mut b_cmp = b.clone();
                if grid.len() + 1 == b.len() && b[0] < 1e-4 {
                    b_cmp.remove(0);
                }
                assert_eq!(grid.len(), b_cmp.len(), "{grid:?} {b:?}");
                for (g, e) in grid.iter().zip(&b_cmp) {
                    assert!((g - e).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn hull_and_pairwise_envelopes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let varactor = modulation_alphabet(&calibrated_varactor_set(21, 120.0, 60.0).unwrap()).unwrap();
        for trial in 0..300 {
            let row: Vec<Complex64> = if trial % 2 == 0 {
                let k = 2 + trial % 9;
                (0..k).map(|_| sample_complex_gaussian(1.0, &mut rng)).collect()
            } else {
                let w = sample_complex_gaussian(1.0, &mut rng);
                varactor.symbols.iter().map(|&y| w * y).collect()
            };
            let hull = envelope_breakpoints(&row);
            let pairs = envelope_breakpoints_by_pairs(&row);
            assert_eq!(hull.len(), pairs.len(), "{hull:?} {pairs:?}");
            for (a, b) in hull.iter().zip(&pairs) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn envelope_count_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..10_000 {
            let k = 2 + i % 20;
            let row: Vec<Complex64> = (0..k).map(|_| sample_complex_gaussian(1.0, &mut rng)).collect();
            assert!(envelope_breakpoints(&row).len() <= 2 * (k - 1));
        }
    }

    #[test]
    fn general_single_element_is_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for k in 2..12 {
            let t = random_gaussian_instance(1, k, &mut rng);
            let best = t.row(0).iter().map(|&x| (t.y0() + x).norm()).fold(0.0, f64::max);
            let s = optimal_config_general(&t).unwrap();
            assert!(relative_gap(s.amplitude, best) <= 1e-12);
        }
    }

    #[test]
    fn general_matches_brute_force_k21() {
        let alpha = modulation_alphabet(&calibrated_varactor_set(21, 120.0, 60.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let t = random_alphabet_instance(4, &alpha, &mut rng);
            let fast = optimal_config_general(&t).unwrap();
            let exact = brute_force(&t).unwrap();
            assert!(relative_gap(fast.amplitude, exact.amplitude) <= 1e-9);
        }
    }

    #[test]
    fn general_and_brute_force_cross_check_k3() {
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let t = random_gaussian_instance(3, 3, &mut rng);
        let fast = optimal_config_general(&t).unwrap();
        let exact = brute_force(&t).unwrap();
        assert_eq!(fast.config, exact.config);
        assert!(relative_gap(fast.amplitude, exact.amplitude) <= 1e-12);
        assert!(relative_gap(received_amplitude(&t, &exact.config).unwrap(), fast.amplitude) <= 1e-12);
    }

    #[test]
    fn general_is_k2_for_two_loads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in 0..40 {
            let t = random_gaussian_instance(m, 2, &mut rng);
            assert_eq!(optimal_config_general(&t).unwrap(), optimal_config_k2(&t).unwrap());
        }
    }

    #[test]
    fn brute_force_examples() {
        let t = ElementTerms::new(c(0.3, 0.4), 2, vec![]).unwrap();
        let s = brute_force(&t).unwrap();
        assert!(s.config.is_empty() && (s.amplitude - 0.5).abs() < 1e-15);

        let t = ElementTerms::from_rows(c(0.0, 0.0), &[vec![c(0.2, 0.0), c(0.0, -0.7)]]).unwrap();
        assert!((brute_force(&t).unwrap().amplitude - 0.7).abs() < 1e-15);

        // tie: both loads give the same amplitude, lowest index wins
        let t = ElementTerms::from_rows(c(0.0, 0.0), &[vec![c(1.0, 0.0), c(-1.0, 0.0)]]).unwrap();
        assert_eq!(brute_force(&t).unwrap().config.choice, vec![0]);

        let big = random_gaussian_instance(24, 2, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(brute_force(&big), Err(RisError::Capacity { .. })));
    }

    #[test]
    fn received_amplitude_examples() {
        let t = ElementTerms::from_rows(c(0.6, 0.8), &vec![vec![c(0.0, 0.0); 2]; 3]).unwrap();
        assert_eq!(received_amplitude(&t, &Configuration::uniform(3, 1)).unwrap(), 1.0);

        let t = ElementTerms::from_rows(c(0.0, 0.0), &[vec![c(1.0, 0.0), c(5.0, 0.0)], vec![c(1.0, 0.0), c(5.0, 0.0)]]).unwrap();
        assert_eq!(received_amplitude(&t, &Configuration::new(vec![0, 0])).unwrap(), 2.0);

        let t = ElementTerms::from_rows(c(1.0, 0.0), &[vec![polar(1.0, PI)]]).unwrap();
        assert!(received_amplitude(&t, &Configuration::new(vec![0])).unwrap() < 1e-15);

        assert!(received_amplitude(&t, &Configuration::new(vec![1])).is_err());
        assert!(received_amplitude(&t, &Configuration::new(vec![0, 0])).is_err());
    }

    #[test]
    fn coincident_breakpoints_are_handled() {
        // identical elements share every breakpoint
        let row = vec![c(0.3, 0.2), c(-0.1, 0.5)];
        let t = ElementTerms::from_rows(c(0.05, -0.4), &vec![row; 6]).unwrap();
        let fast = optimal_config_k2(&t).unwrap();
        let exact = brute_force(&t).unwrap();
        assert!(relative_gap(fast.amplitude, exact.amplitude) <= 1e-12);

        // a breakpoint exactly at zero
        let t = ElementTerms::from_rows(c(0.0, 1.0), &[vec![c(0.0, 1.0), c(0.0, -1.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]]).unwrap();
        let fast = optimal_config_k2(&t).unwrap();
        assert!(relative_gap(fast.amplitude, brute_force(&t).unwrap().amplitude) <= 1e-12);
    }

    #[test]
    fn instance_dump_round_trip() {
        let t = random_gaussian_instance(5, 3, &mut ChaCha8Rng::seed_from_u64(6));
        assert_eq!(parse_instance(&format_instance(&t)).unwrap(), t);
        assert!(parse_instance("1 0\n1 0 2 0\n1 0\n").is_err());
        assert!(parse_instance("1 0 2\n").is_err());
        assert!(parse_instance("# nothing\n").is_err());
        let only_y0 = parse_instance("0.5 0.5\n").unwrap();
        assert_eq!(only_y0.elements(), 0);
    }

    fn instance_strategy(max_m: usize, k: usize) -> impl Strategy<Value = ElementTerms> {
        (0..=max_m, any::<u64>()).prop_map(move |(m, seed)| random_gaussian_instance(m, k, &mut ChaCha8Rng::seed_from_u64(seed)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn sweep_equals_brute_force_k2(t in instance_strategy(14, 2)) {
            let fast = optimal_config_k2(&t).unwrap();
            let exact = brute_force(&t).unwrap();
            prop_assert!(relative_gap(fast.amplitude, exact.amplitude) <= 1e-9);
        }

        #[test]
        fn sweep_equals_brute_force_general(k in 3usize..7, seed in any::<u64>()) {
            let m = match k { 3 => 8, 4 => 7, 5 => 6, _ => 5 };
            let t = random_gaussian_instance(m, k, &mut ChaCha8Rng::seed_from_u64(seed));
            let fast = optimal_config_general(&t).unwrap();
            let exact = brute_force(&t).unwrap();
            prop_assert!(relative_gap(fast.amplitude, exact.amplitude) <= 1e-9);
        }

        #[test]
        fn optimum_dominates_random_configurations(t in instance_strategy(40, 3), seed in any::<u64>()) {
            let best = optimal_config_general(&t).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..64 {
                let cfg = Configuration::new((0..t.elements()).map(|_| rng.random_range(0..t.loads())).collect());
                prop_assert!(received_amplitude(&t, &cfg).unwrap() <= best.amplitude * (1.0 + 1e-12));
            }
        }

        #[test]
        fn phase_rotation_is_unobservable(t in instance_strategy(30, 2), alpha in 0.0f64..TAU) {
            let base = optimal_config_k2(&t).unwrap();
            let rotated = optimal_config_k2(&t.scaled(polar(1.0, alpha))).unwrap();
            prop_assert!(relative_gap(base.amplitude, rotated.amplitude) <= 1e-12);
            prop_assert_eq!(base.config, rotated.config);
        }

        #[test]
        fn real_scaling_is_covariant(t in instance_strategy(30, 4), s in 1e-3f64..1e3) {
            let base = optimal_config_general(&t).unwrap();
            let scaled = optimal_config_general(&t.scaled(c(s, 0.0))).unwrap();
            prop_assert!(relative_gap(scaled.amplitude, s * base.amplitude) <= 1e-12);
            prop_assert_eq!(base.config, scaled.config);
        }
    }
}
