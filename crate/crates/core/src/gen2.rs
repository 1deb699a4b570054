//! Reader-driven control of a tag surface through EPC Gen2 commands.
//!
//! A configuration is set by asserting the SL flag of each chosen tag with
//! its own Select, after which single-slot inventory rounds (Query, RN16
//! reply, ACK) make all selected tags backscatter at once. Their replies
//! start with a common preamble, so during the preamble every selected
//! element sits on the same load and the destination sees the coherent
//! power of that configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;

use crate::error::{invalid, Result, RisError};
use crate::optimizer::ElementTerms;
use crate::units::{format_sig6, linear_to_db, watts_to_dbm};

/// Length of an EPC in bits.
pub const EPC_BITS: usize = 96;

/// Preamble symbols shared by every tag reply; bit `b` drives load `b`.
pub const PREAMBLE: [u8; 6] = [1, 0, 1, 0, 0, 1];

/// Load index held by tags that are not replying.
pub const IDLE_LOAD: usize = 1;

pub const BLF_MIN: f64 = 40e3;
pub const BLF_MAX: f64 = 640e3;

/// A 96-bit EPC. Bit 0 is the most significant bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Epc(u128);

impl Epc {
    const MASK: u128 = (1u128 << EPC_BITS) - 1;

    pub fn new(value: u128) -> Result<Self> {
        if value & !Self::MASK != 0 {
            return Err(invalid(format!("EPC value {value:#x} exceeds {EPC_BITS} bits")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> u128 {
        self.0
    }

    pub fn bit(self, i: usize) -> bool {
        debug_assert!(i < EPC_BITS);
        (self.0 >> (EPC_BITS - 1 - i)) & 1 == 1
    }

    /// Bits `offset..offset+len`, most significant first.
    pub fn bits(self, offset: usize, len: usize) -> Vec<bool> {
        (offset..offset + len).map(|i| self.bit(i)).collect()
    }

    pub fn from_hex(text: &str) -> Result<Self> {
        let digits = text.trim().trim_start_matches("0x");
        if digits.len() != EPC_BITS / 4 {
            return Err(invalid(format!("EPC {text:?} must have {} hex digits", EPC_BITS / 4)));
        }
        let value = u128::from_str_radix(digits, 16).map_err(|e| invalid(format!("EPC {text:?}: {e}")))?;
        Self::new(value)
    }

    pub fn to_hex(self) -> String {
        format!("{:024X}", self.0)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(rng.random::<u128>() & Self::MASK)
    }
}

/// One tag of the surface.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagRecord {
    pub epc: Epc,
    /// SL flag.
    pub selected: bool,
    pub element_index: usize,
}

/// Select action field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectAction {
    /// `001`: matching tags assert SL, the others are unaffected.
    Assert,
    /// `000`: matching tags deassert SL.
    Deassert,
}

impl SelectAction {
    pub fn bits(self) -> [u8; 3] {
        match self {
            SelectAction::Assert => [0, 0, 1],
            SelectAction::Deassert => [0, 0, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectCommand {
    pub action: SelectAction,
    pub mask: Vec<bool>,
    pub mask_offset: usize,
    /// Clears every tag regardless of the mask.
    pub broadcast: bool,
}

impl SelectCommand {
    /// Asserts the tag whose EPC equals `epc`.
    pub fn assert_tag(epc: Epc) -> Self {
        Self { action: SelectAction::Assert, mask: epc.bits(0, EPC_BITS), mask_offset: 0, broadcast: false }
    }

    /// Deasserts every tag.
    pub fn deassert_all() -> Self {
        Self { action: SelectAction::Deassert, mask: Vec::new(), mask_offset: 0, broadcast: true }
    }
}

/// True iff the EPC bits at the mask offset equal the mask.
pub fn select_matches(cmd: &SelectCommand, tag: &TagRecord) -> Result<bool> {
    if cmd.mask_offset + cmd.mask.len() > EPC_BITS {
        return Err(invalid(format!(
            "mask of {} bits at offset {} runs past the {EPC_BITS}-bit EPC",
            cmd.mask.len(),
            cmd.mask_offset
        )));
    }
    Ok(cmd.mask.iter().enumerate().all(|(i, &b)| tag.epc.bit(cmd.mask_offset + i) == b))
}

pub fn apply_select(cmd: &SelectCommand, population: &mut [TagRecord]) -> Result<()> {
    if cmd.broadcast && cmd.action == SelectAction::Deassert {
        population.iter_mut().for_each(|t| t.selected = false);
        return Ok(());
    }
    for tag in population.iter_mut() {
        if select_matches(cmd, tag)? {
            tag.selected = cmd.action == SelectAction::Assert;
        }
    }
    Ok(())
}

/// Element indices with the SL flag asserted, ascending.
pub fn selected_elements(population: &[TagRecord]) -> Vec<usize> {
    let mut out: Vec<usize> = population.iter().filter(|t| t.selected).map(|t| t.element_index).collect();
    out.sort_unstable();
    out
}

/// Tags with distinct random EPCs, one per element.
pub fn generate_population<R: Rng + ?Sized>(elements: usize, rng: &mut R) -> Vec<TagRecord> {
    let mut seen = std::collections::HashSet::with_capacity(elements);
    let mut tags = Vec::with_capacity(elements);
    while tags.len() < elements {
        let epc = Epc::random(rng);
        if seen.insert(epc) {
            tags.push(TagRecord { epc, selected: false, element_index: tags.len() });
        }
    }
    tags
}

/// One hex EPC per line; `#` starts a comment. Line order gives the element index.
pub fn parse_population(text: &str) -> Result<Vec<TagRecord>> {
    let mut seen = std::collections::HashSet::new();
    let mut tags = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let epc = Epc::from_hex(line).map_err(|e| RisError::Parse { line: idx + 1, msg: e.to_string() })?;
        if !seen.insert(epc) {
            return Err(RisError::Parse { line: idx + 1, msg: format!("duplicate EPC {line}") });
        }
        tags.push(TagRecord { epc, selected: false, element_index: tags.len() });
    }
    Ok(tags)
}

pub fn read_population(path: &Path) -> Result<Vec<TagRecord>> {
    let text = fs::read_to_string(path).map_err(|source| RisError::Io { path: path.to_path_buf(), source })?;
    parse_population(&text)
}

/// Command durations in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gen2Timing {
    pub blf: f64,
    pub t_select: f64,
    pub t4: f64,
    pub t_delay: f64,
    pub t_pu: f64,
}

impl Gen2Timing {
    pub fn new(blf: f64, t_select: f64, t4: f64, t_delay: f64, t_pu: f64) -> Result<Self> {
        check_blf(blf)?;
        if [t_select, t4, t_delay, t_pu].iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(invalid("command durations must be positive"));
        }
        Ok(Self { blf, t_select, t4, t_delay, t_pu })
    }

    /// Select of 61 link periods, 0.15 ms turnaround, 30 ms release delay
    /// and 184 link periods of power-up carrier.
    pub fn with_blf(blf: f64) -> Result<Self> {
        check_blf(blf)?;
        Self::new(blf, 61.0 / blf, 0.15e-3, 30e-3, 184.0 / blf)
    }

    /// Duration of one reply symbol.
    pub fn symbol(&self) -> f64 {
        1.0 / self.blf
    }
}

fn check_blf(blf: f64) -> Result<()> {
    if !(BLF_MIN..=BLF_MAX).contains(&blf) {
        return Err(invalid(format!("BLF {blf} Hz outside [{BLF_MIN}, {BLF_MAX}] Hz")));
    }
    Ok(())
}

/// `t_c = (μ + 1)(t_select + t4) + t_delay + t_pu`: `μ` asserting Selects,
/// one clearing Select, the release delay and the power-up carrier.
pub fn config_switch_time(mu: usize, timing: &Gen2Timing) -> Result<f64> {
    if mu == 0 {
        return Err(invalid("a configuration selects at least one tag"));
    }
    check_blf(timing.blf)?;
    Ok((mu as f64 + 1.0) * (timing.t_select + timing.t4) + timing.t_delay + timing.t_pu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    PowerUp,
    Select,
    Query,
    Preamble,
    Rn16,
    Ack,
    Delay,
}

impl TraceEvent {
    pub fn name(self) -> &'static str {
        match self {
            TraceEvent::PowerUp => "powerup",
            TraceEvent::Select => "select",
            TraceEvent::Query => "query",
            TraceEvent::Preamble => "preamble",
            TraceEvent::Rn16 => "rn16",
            TraceEvent::Ack => "ack",
            TraceEvent::Delay => "delay",
        }
    }

    /// Symbols of a tag reply.
    pub fn is_reply(self) -> bool {
        matches!(self, TraceEvent::Preamble | TraceEvent::Rn16)
    }
}

/// Start time, event and destination power while the event lasts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub time: f64,
    pub event: TraceEvent,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigurationTrace {
    pub samples: Vec<TraceSample>,
    /// Time at which the last event ends.
    pub end: f64,
}

impl ConfigurationTrace {
    fn push(&mut self, event: TraceEvent, duration: f64, power: f64) {
        self.samples.push(TraceSample { time: self.end, event, power });
        self.end += duration;
    }

    /// Appends `next`, shifted to start where this trace ends.
    pub fn extend(&mut self, next: &ConfigurationTrace) {
        let offset = self.end;
        self.samples.extend(next.samples.iter().map(|s| TraceSample { time: s.time + offset, ..*s }));
        self.end += next.end;
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,event,power_w,power_dbm\n");
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{},{}",
                format_sig6(s.time),
                s.event.name(),
                format_sig6(s.power),
                format_sig6(watts_to_dbm(s.power))
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|source| RisError::Io { path: path.to_path_buf(), source })
    }
}

/// Sum `y0 + Σ_m terms[m][load_m]` with the selected tags at `reply_load`
/// and every other tag idle.
fn superposition(terms: &ElementTerms, selected: &[bool], reply_load: usize) -> Complex64 {
    let loads: Vec<usize> = selected.iter().map(|&sel| if sel { reply_load } else { IDLE_LOAD }).collect();
    sum_for_loads(terms, &loads)
}

fn sum_for_loads(terms: &ElementTerms, loads: &[usize]) -> Complex64 {
    terms.y0() + terms.rows().zip(loads).map(|(row, &k)| row[k]).sum::<Complex64>()
}

fn selection_mask(elements: usize, selected: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; elements];
    for &m in selected {
        if m >= elements {
            return Err(invalid(format!("selected element {m} of {elements}")));
        }
        mask[m] = true;
    }
    Ok(mask)
}

/// Power trace of one configuration: power-up carrier, one Select per
/// selected tag, `rn16.len()` inventory rounds, the clearing Select and the
/// release delay. `rn16[r][i]` is the reply of the `i`-th selected tag (in
/// ascending element order) in round `r`, sent most significant bit first.
pub fn inventory_power_trace_with_rn16(
    selected: &[usize],
    terms: &ElementTerms,
    power: f64,
    timing: &Gen2Timing,
    rn16: &[Vec<u16>],
) -> Result<ConfigurationTrace> {
    if terms.loads() != 2 {
        return Err(invalid(format!("tag replies need two loads, got {}", terms.loads())));
    }
    let mask = selection_mask(terms.elements(), selected)?;
    let mut order: Vec<usize> = selected.to_vec();
    order.sort_unstable();
    order.dedup();
    if let Some(r) = rn16.iter().position(|round| round.len() != order.len()) {
        return Err(invalid(format!("round {r} has {} RN16 values for {} tags", rn16[r].len(), order.len())));
    }

    let level = |z: Complex64| 2.0 * power * z.norm_sqr();
    let idle = level(superposition(terms, &mask, IDLE_LOAD));
    let preamble_levels = [level(superposition(terms, &mask, 0)), level(superposition(terms, &mask, 1))];
    let symbol = timing.symbol();

    let mut trace = ConfigurationTrace::default();
    trace.push(TraceEvent::PowerUp, timing.t_pu, idle);
    for _ in &order {
        trace.push(TraceEvent::Select, timing.t_select + timing.t4, idle);
    }
    for round in rn16 {
        trace.push(TraceEvent::Query, timing.t4, idle);
        for &b in &PREAMBLE {
            trace.push(TraceEvent::Preamble, symbol, preamble_levels[b as usize]);
        }
        for bit in (0..16).rev() {
            let mut loads = vec![IDLE_LOAD; terms.elements()];
            for (&m, &word) in order.iter().zip(round) {
                loads[m] = ((word >> bit) & 1) as usize;
            }
            trace.push(TraceEvent::Rn16, symbol, level(sum_for_loads(terms, &loads)));
        }
        trace.push(TraceEvent::Ack, timing.t4, idle);
    }
    trace.push(TraceEvent::Select, timing.t_select + timing.t4, idle);
    trace.push(TraceEvent::Delay, timing.t_delay, idle);
    Ok(trace)
}

/// [`inventory_power_trace_with_rn16`] with uniformly drawn RN16 values.
pub fn inventory_power_trace<R: Rng + ?Sized>(
    selected: &[usize],
    terms: &ElementTerms,
    power: f64,
    timing: &Gen2Timing,
    rounds: usize,
    rng: &mut R,
) -> Result<ConfigurationTrace> {
    let mut tags: Vec<usize> = selected.to_vec();
    tags.sort_unstable();
    tags.dedup();
    let rn16: Vec<Vec<u16>> = (0..rounds).map(|_| tags.iter().map(|_| rng.random()).collect()).collect();
    inventory_power_trace_with_rn16(selected, terms, power, timing, &rn16)
}

/// Issues the Selects of a configuration against a population and returns
/// the element indices that end up asserted.
pub fn select_configuration(population: &mut [TagRecord], chosen: &[usize]) -> Result<Vec<usize>> {
    apply_select(&SelectCommand::deassert_all(), population)?;
    for &m in chosen {
        let tag = population
            .iter()
            .find(|t| t.element_index == m)
            .ok_or_else(|| invalid(format!("no tag drives element {m}")))?;
        apply_select(&SelectCommand::assert_tag(tag.epc), population)?;
    }
    Ok(selected_elements(population))
}

/// Coherent preamble power of a configuration relative to `|y0|²`: the larger
/// of the two preamble levels.
pub fn configuration_improvement(terms: &ElementTerms, selected: &[bool]) -> f64 {
    let base = terms.y0().norm_sqr();
    let a = superposition(terms, selected, 0).norm_sqr();
    let b = superposition(terms, selected, 1).norm_sqr();
    a.max(b) / base
}

/// Random configuration search: each test draws a uniform `μ`-subset, and the
/// series holds the best improvement (dB) seen after `n` tests, maximized over
/// independent repetitions.
pub fn random_search<R: Rng + ?Sized>(
    terms: &ElementTerms,
    mu: usize,
    n_configs: usize,
    repetitions: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let m = terms.elements();
    if terms.loads() != 2 {
        return Err(invalid(format!("random search drives two-load tags, got K = {}", terms.loads())));
    }
    if mu > m {
        return Err(invalid(format!("cannot activate {mu} of {m} tags")));
    }
    if repetitions == 0 {
        return Err(invalid("at least one repetition is required"));
    }
    let base = terms.y0().norm_sqr();
    let idle = superposition(terms, &vec![false; m], IDLE_LOAD);
    let deltas: Vec<Complex64> = terms.rows().map(|row| row[0] - row[IDLE_LOAD]).collect();
    let idle_ratio = idle.norm_sqr() / base;

    let mut best = vec![f64::NEG_INFINITY; n_configs];
    for _ in 0..repetitions {
        let mut running = f64::NEG_INFINITY;
        for slot in best.iter_mut() {
            let flipped: Complex64 = index::sample(rng, m, mu).iter().map(|i| deltas[i]).sum();
            let ratio = ((idle + flipped).norm_sqr() / base).max(idle_ratio);
            running = running.max(ratio);
            *slot = slot.max(running);
        }
    }
    Ok(best.into_iter().map(linear_to_db).collect())
}

/// Best improvement over every subset of tags, by enumeration.
pub fn best_subset_improvement(terms: &ElementTerms) -> Result<f64> {
    let m = terms.elements();
    if m > 24 {
        return Err(RisError::Capacity { configurations: 2f64.powi(m as i32), limit: 1 << 24 });
    }
    let mut best = f64::NEG_INFINITY;
    let mut mask = vec![false; m];
    for bits in 0u32..(1u32 << m) {
        for (i, slot) in mask.iter_mut().enumerate() {
            *slot = bits >> i & 1 == 1;
        }
        best = best.max(configuration_improvement(terms, &mask));
    }
    Ok(best)
}
