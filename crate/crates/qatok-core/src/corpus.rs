//! Quality-annotated corpora and the statistics the merge loop runs on.
//!
//! A corpus is a list of [`AtomicSequence`]s over a base alphabet of symbol
//! ids. The current tokenization of the corpus is a [`Segmentation`] that,
//! for every sequence, tracks both the token ids and the atomic span each
//! token covers, so occurrence-level qualities stay recoverable after any
//! number of merges. [`PairStats`] holds token and adjacent-pair counts and
//! is updated incrementally by [`apply_merge`]; recounting from scratch with
//! [`count_pairs`] must always agree, which the tests enforce.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::quality::{finance_element_quality, FinanceContext, FinanceQualityParams, LobWindow};
use crate::{SymbolId, TokenId};

/// One ingested sequence: symbol ids plus a unit-interval quality per element.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicSequence {
    pub elements: Vec<SymbolId>,
    pub qualities: Vec<f64>,
    pub source_id: String,
}

impl AtomicSequence {
    /// Builds a sequence and checks its invariants against `alphabet_size`.
    pub fn new(
        elements: Vec<SymbolId>,
        qualities: Vec<f64>,
        source_id: String,
        alphabet_size: u32,
    ) -> Result<Self> {
        if elements.len() != qualities.len() {
            return Err(Error::LengthMismatch {
                elements: elements.len(),
                qualities: qualities.len(),
            });
        }
        for (i, &s) in elements.iter().enumerate() {
            if s >= alphabet_size {
                return Err(Error::UnknownSymbol {
                    position: i,
                    symbol: s,
                });
            }
        }
        for &q in &qualities {
            if !(0.0..=1.0).contains(&q) || !q.is_finite() {
                return Err(Error::QualityOutOfRange(q));
            }
        }
        Ok(Self {
            elements,
            qualities,
            source_id,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Token and adjacent-pair frequencies over the current segmentation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairStats {
    token_freqs: BTreeMap<TokenId, u64>,
    pair_freqs: BTreeMap<(TokenId, TokenId), u64>,
    total_tokens: u64,
}

impl PairStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn freq(&self, t: TokenId) -> u64 {
        self.token_freqs.get(&t).copied().unwrap_or(0)
    }

    pub fn pair_freq(&self, a: TokenId, b: TokenId) -> u64 {
        self.pair_freqs.get(&(a, b)).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Pairs with non-zero count in ascending `(a, b)` order.
    pub fn pairs(&self) -> impl Iterator<Item = ((TokenId, TokenId), u64)> + '_ {
        self.pair_freqs.iter().map(|(&p, &c)| (p, c))
    }

    /// Tokens with non-zero count in ascending id order.
    pub fn tokens(&self) -> impl Iterator<Item = (TokenId, u64)> + '_ {
        self.token_freqs.iter().map(|(&t, &c)| (t, c))
    }

    /// Counts one token list into the stats.
    pub fn absorb_tokens(&mut self, tokens: &[TokenId]) {
        for &t in tokens {
            *self.token_freqs.entry(t).or_insert(0) += 1;
        }
        for w in tokens.windows(2) {
            *self.pair_freqs.entry((w[0], w[1])).or_insert(0) += 1;
        }
        self.total_tokens += tokens.len() as u64;
    }

    /// Commutative merge of two partial counts; shard order does not matter.
    pub fn absorb(&mut self, other: &PairStats) {
        for (&t, &c) in &other.token_freqs {
            *self.token_freqs.entry(t).or_insert(0) += c;
        }
        for (&p, &c) in &other.pair_freqs {
            *self.pair_freqs.entry(p).or_insert(0) += c;
        }
        self.total_tokens += other.total_tokens;
    }

    fn dec_token(&mut self, t: TokenId) {
        match self.token_freqs.get_mut(&t) {
            Some(c) if *c > 1 => *c -= 1,
            Some(_) => {
                self.token_freqs.remove(&t);
            }
            None => debug_assert!(false, "decrement of absent token {t}"),
        }
    }

    fn inc_token(&mut self, t: TokenId) {
        *self.token_freqs.entry(t).or_insert(0) += 1;
    }

    fn dec_pair(&mut self, a: TokenId, b: TokenId) {
        match self.pair_freqs.get_mut(&(a, b)) {
            Some(c) if *c > 1 => *c -= 1,
            Some(_) => {
                self.pair_freqs.remove(&(a, b));
            }
            None => debug_assert!(false, "decrement of absent pair ({a}, {b})"),
        }
    }

    fn inc_pair(&mut self, a: TokenId, b: TokenId) {
        *self.pair_freqs.entry((a, b)).or_insert(0) += 1;
    }

    /// Checks `f(a,b) <= min(f(a), f(b))` for every counted pair.
    pub fn check_pair_bound(&self) -> Result<()> {
        for (&(a, b), &c) in &self.pair_freqs {
            let bound = self.freq(a).min(self.freq(b));
            if c > bound {
                return Err(Error::Invariant(alloc::format!(
                    "pair ({a},{b}) count {c} exceeds min constituent count {bound}"
                )));
            }
        }
        Ok(())
    }
}

/// Current partition of every sequence into tokens, with atomic spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    /// Token ids per sequence.
    tokens: Vec<Vec<TokenId>>,
    /// Half-open atomic span `[start, end)` per token, parallel to `tokens`.
    spans: Vec<Vec<(u32, u32)>>,
}

impl Segmentation {
    /// Base segmentation: every element is its own token (token id == symbol id).
    pub fn from_base(corpus: &[AtomicSequence]) -> Self {
        let mut tokens = Vec::with_capacity(corpus.len());
        let mut spans = Vec::with_capacity(corpus.len());
        for seq in corpus {
            tokens.push(seq.elements.clone());
            spans.push((0..seq.elements.len() as u32).map(|i| (i, i + 1)).collect());
        }
        Self { tokens, spans }
    }

    /// Segmentation from explicit token lists and spans. Spans must tile each
    /// sequence contiguously from zero.
    pub fn from_parts(tokens: Vec<Vec<TokenId>>, spans: Vec<Vec<(u32, u32)>>) -> Result<Self> {
        if tokens.len() != spans.len() {
            return Err(Error::Invariant(alloc::format!(
                "{} token lists vs {} span lists",
                tokens.len(),
                spans.len()
            )));
        }
        for (toks, sps) in tokens.iter().zip(&spans) {
            if toks.len() != sps.len() {
                return Err(Error::Invariant(alloc::format!(
                    "{} tokens vs {} spans in one sequence",
                    toks.len(),
                    sps.len()
                )));
            }
            let mut at = 0u32;
            for &(s, e) in sps {
                if s != at || e <= s {
                    return Err(Error::Invariant(alloc::format!(
                        "span ({s}, {e}) does not tile the sequence at {at}"
                    )));
                }
                at = e;
            }
        }
        Ok(Self { tokens, spans })
    }

    pub fn num_sequences(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens_of(&self, seq: usize) -> &[TokenId] {
        &self.tokens[seq]
    }

    pub fn spans_of(&self, seq: usize) -> &[(u32, u32)] {
        &self.spans[seq]
    }

    pub fn total_tokens(&self) -> u64 {
        self.tokens.iter().map(|t| t.len() as u64).sum()
    }

    /// Atomic qualities covered by each occurrence of `token`, in corpus order.
    pub fn occurrence_qualities<'a>(
        &self,
        corpus: &'a [AtomicSequence],
        token: TokenId,
    ) -> Vec<&'a [f64]> {
        let mut out = Vec::new();
        for (si, toks) in self.tokens.iter().enumerate() {
            for (ti, &t) in toks.iter().enumerate() {
                if t == token {
                    let (s, e) = self.spans[si][ti];
                    out.push(&corpus[si].qualities[s as usize..e as usize]);
                }
            }
        }
        out
    }

    /// Atomic spans of each occurrence of `token` as `(sequence, start, end)`.
    pub fn occurrence_spans(&self, token: TokenId) -> Vec<(usize, u32, u32)> {
        let mut out = Vec::new();
        for (si, toks) in self.tokens.iter().enumerate() {
            for (ti, &t) in toks.iter().enumerate() {
                if t == token {
                    let (s, e) = self.spans[si][ti];
                    out.push((si, s, e));
                }
            }
        }
        out
    }
}

/// Exact counts over the current segmentation. Deterministic regardless of
/// how sequences are sharded, because addition commutes and maps are ordered.
pub fn count_pairs(seg: &Segmentation, vocab_size: u32) -> Result<PairStats> {
    let mut stats = PairStats::new();
    for si in 0..seg.num_sequences() {
        for &t in seg.tokens_of(si) {
            if t >= vocab_size {
                return Err(Error::InvalidSegmentation { token: t });
            }
        }
        stats.absorb_tokens(seg.tokens_of(si));
    }
    Ok(stats)
}

/// Result flags for [`apply_merge`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeOutcome {
    /// Number of occurrences replaced.
    pub replaced: u64,
    /// True when the pair had zero count and nothing changed.
    pub noop: bool,
}

/// Replaces every adjacent `(a, b)` occurrence with `new_id`, left to right
/// and non-overlapping, updating `stats` incrementally so only counts
/// touching affected positions change.
pub fn apply_merge(
    stats: &mut PairStats,
    seg: &mut Segmentation,
    pair: (TokenId, TokenId),
    new_id: TokenId,
) -> MergeOutcome {
    let (a, b) = pair;
    if stats.pair_freq(a, b) == 0 {
        return MergeOutcome {
            replaced: 0,
            noop: true,
        };
    }
    let mut replaced = 0u64;
    for si in 0..seg.tokens.len() {
        let old = &seg.tokens[si];
        if old.len() < 2 {
            continue;
        }
        // Skip sequences without the pair to avoid rebuilding them.
        if !old.windows(2).any(|w| w[0] == a && w[1] == b) {
            continue;
        }
        let old_spans = &seg.spans[si];
        let mut toks = Vec::with_capacity(old.len());
        let mut spans = Vec::with_capacity(old.len());
        let mut i = 0;
        while i < old.len() {
            if i + 1 < old.len() && old[i] == a && old[i + 1] == b {
                stats.dec_pair(a, b);
                if let Some(&left) = toks.last() {
                    stats.dec_pair(left, a);
                    stats.inc_pair(left, new_id);
                }
                if i + 2 < old.len() {
                    stats.dec_pair(b, old[i + 2]);
                    stats.inc_pair(new_id, old[i + 2]);
                }
                stats.dec_token(a);
                stats.dec_token(b);
                stats.inc_token(new_id);
                stats.total_tokens -= 1;
                toks.push(new_id);
                spans.push((old_spans[i].0, old_spans[i + 1].1));
                replaced += 1;
                i += 2;
            } else {
                toks.push(old[i]);
                spans.push(old_spans[i]);
                i += 1;
            }
        }
        seg.tokens[si] = toks;
        seg.spans[si] = spans;
    }
    MergeOutcome {
        replaced,
        noop: false,
    }
}

// ---------------------------------------------------------------------------
// Limit-order-book ingestion
// ---------------------------------------------------------------------------

/// LOB event categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventType {
    Trade,
    Cancel,
    LimitOrder,
}

impl EventType {
    fn index(self) -> usize {
        match self {
            EventType::Trade => 0,
            EventType::Cancel => 1,
            EventType::LimitOrder => 2,
        }
    }
}

/// One raw LOB event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LobEvent {
    /// Mid-price change in ticks.
    pub delta_mid: f64,
    /// Spread change in ticks.
    pub delta_spread: f64,
    /// Signed volume imbalance fraction in `[-1, 1]`.
    pub vol_imbalance: f64,
    pub event_type: EventType,
    /// Inter-event time in seconds, strictly positive.
    pub delta_t: f64,
}

/// Number of consecutive events collapsed into one atomic symbol.
pub const EVENTS_PER_SYMBOL: usize = 5;

/// Number of event-type categories.
pub const EVENT_TYPE_COUNT: usize = 3;

/// Discretization grid for LOB event groups.
#[derive(Debug, Clone, PartialEq)]
pub struct BinConfig {
    pub price_bins: usize,
    pub spread_bins: usize,
    pub imbalance_bins: usize,
    pub time_bins: usize,
    /// Price and spread changes are binned uniformly over `+-range_ticks`.
    pub range_ticks: f64,
    /// Time bins are log-spaced over `[time_min_s, time_max_s]`.
    pub time_min_s: f64,
    pub time_max_s: f64,
    /// Level the running mid-price starts from, in ticks.
    pub initial_mid: f64,
    /// Level the running spread starts from, in ticks.
    pub initial_spread: f64,
}

impl Default for BinConfig {
    fn default() -> Self {
        Self {
            price_bins: 10,
            spread_bins: 10,
            imbalance_bins: 5,
            time_bins: 5,
            range_ticks: 5.0,
            time_min_s: 1e-3,
            time_max_s: 60.0,
            initial_mid: 10_000.0,
            initial_spread: 1.0,
        }
    }
}

impl BinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.price_bins == 0
            || self.spread_bins == 0
            || self.imbalance_bins == 0
            || self.time_bins == 0
        {
            return Err(Error::BadBinConfig("bin counts must be positive"));
        }
        if !self.range_ticks.is_finite() || self.range_ticks <= 0.0 {
            return Err(Error::BadBinConfig("range_ticks must be positive"));
        }
        if !self.time_min_s.is_finite()
            || !self.time_max_s.is_finite()
            || self.time_min_s <= 0.0
            || self.time_max_s <= self.time_min_s
        {
            return Err(Error::BadBinConfig("time range must satisfy 0 < min < max"));
        }
        if !self.initial_mid.is_finite() || self.initial_mid <= 0.0 {
            return Err(Error::BadBinConfig("initial_mid must be positive"));
        }
        Ok(())
    }

    /// Size of the atomic alphabet induced by this grid.
    pub fn alphabet_size(&self) -> u32 {
        (self.price_bins * self.spread_bins * self.imbalance_bins * EVENT_TYPE_COUNT
            * self.time_bins) as u32
    }
}

fn uniform_bin(x: f64, lo: f64, hi: f64, n: usize) -> usize {
    let t = (x - lo) / (hi - lo);
    ((t * n as f64).floor() as i64).clamp(0, n as i64 - 1) as usize
}

fn log_bin(x: f64, lo: f64, hi: f64, n: usize) -> usize {
    let t = (x.max(lo).ln() - lo.ln()) / (hi.ln() - lo.ln());
    ((t * n as f64).floor() as i64).clamp(0, n as i64 - 1) as usize
}

/// Per-group aggregate of raw events.
struct GroupFeatures {
    net_mid: f64,
    net_spread: f64,
    mean_imbalance: f64,
    modal_type: usize,
    total_time: f64,
    window: LobWindow,
}

fn group_features(events: &[LobEvent], mid_before: f64, spread_before: f64) -> GroupFeatures {
    let n = events.len() as f64;
    let net_mid: f64 = events.iter().map(|e| e.delta_mid).sum();
    let net_spread: f64 = events.iter().map(|e| e.delta_spread).sum();
    let mean_imbalance = events.iter().map(|e| e.vol_imbalance).sum::<f64>() / n;
    let total_time: f64 = events.iter().map(|e| e.delta_t).sum();
    let mut type_counts = [0usize; EVENT_TYPE_COUNT];
    for e in events {
        type_counts[e.event_type.index()] += 1;
    }
    // Modal event type; ties resolve to the lowest index for determinism.
    let modal_type = (0..EVENT_TYPE_COUNT)
        .max_by_key(|&i| (type_counts[i], EVENT_TYPE_COUNT - i))
        .unwrap();

    let mean_dmid = net_mid / n;
    let realized_vol = (events
        .iter()
        .map(|e| (e.delta_mid - mean_dmid) * (e.delta_mid - mean_dmid))
        .sum::<f64>()
        / n)
        .sqrt();
    let window = LobWindow {
        // Order-flow magnitude stands in for traded volume; the raw feed
        // carries only the signed imbalance fraction.
        volume: events.iter().map(|e| e.vol_imbalance.abs()).sum(),
        spread: (spread_before + net_spread).abs(),
        mid: mid_before + net_mid,
        realized_vol,
    };
    GroupFeatures {
        net_mid,
        net_spread,
        mean_imbalance,
        modal_type,
        total_time,
        window,
    }
}

/// Rolling finance context fed by successive group windows.
struct RollingContext {
    volumes: Vec<f64>,
    expected_vol: Option<f64>,
    lookback: usize,
    gamma: f64,
}

impl RollingContext {
    fn new(lookback: usize, gamma: f64) -> Self {
        Self {
            volumes: Vec::new(),
            expected_vol: None,
            lookback,
            gamma,
        }
    }

    /// Context as of *before* observing `window`. The first group warm-starts
    /// the statistics from itself (median of one sample, EWMA initialized to
    /// the first realized volatility).
    fn context_for(&mut self, window: &LobWindow) -> FinanceContext {
        let volumes: &[f64] = if self.volumes.is_empty() {
            core::slice::from_ref(&window.volume)
        } else {
            &self.volumes
        };
        let expected = *self
            .expected_vol
            .get_or_insert(window.realized_vol.max(1e-12));
        let mut sorted: Vec<f64> = volumes.iter().map(|v| v.max(1e-12)).collect();
        sorted.sort_by(f64::total_cmp);
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        let logs: Vec<f64> = sorted.iter().map(|v| v.ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / logs.len() as f64;
        FinanceContext {
            median_volume: median.max(1e-12),
            sigma_log_volume: var.sqrt(),
            expected_vol: expected.max(1e-12),
            q_info: 0.5,
        }
    }

    fn push(&mut self, window: &LobWindow) {
        self.volumes.push(window.volume.max(1e-12));
        if self.volumes.len() > self.lookback {
            self.volumes.remove(0);
        }
        let e = self.expected_vol.unwrap_or(window.realized_vol.max(1e-12));
        self.expected_vol = Some(self.gamma * e + (1.0 - self.gamma) * window.realized_vol);
    }
}

/// Discretizes a LOB event stream into one quality-annotated atomic sequence.
///
/// Consecutive non-overlapping groups of [`EVENTS_PER_SYMBOL`] events collapse
/// into one symbol; the trailing remainder is dropped. Group quality is the
/// finance composite over the group's window and the rolling context.
pub fn discretize_lob(
    events: &[LobEvent],
    bins: &BinConfig,
    qparams: &FinanceQualityParams,
    source_id: &str,
) -> Result<AtomicSequence> {
    discretize_lob_features(events, bins, qparams, source_id).map(|(seq, _)| seq)
}

/// Like [`discretize_lob`], additionally returning per-symbol component
/// vectors `[q_liq, q_sig, vol_ratio, q_info]` (the stability slot carries
/// the realized/expected ratio so downstream learners can re-apply their own
/// `beta_vol`).
pub fn discretize_lob_features(
    events: &[LobEvent],
    bins: &BinConfig,
    qparams: &FinanceQualityParams,
    source_id: &str,
) -> Result<(AtomicSequence, Vec<[f64; 4]>)> {
    bins.validate()?;
    qparams.validate()?;
    if events.is_empty() {
        return Err(Error::EmptyEvents);
    }
    for (i, e) in events.iter().enumerate() {
        if !e.delta_t.is_finite() || e.delta_t <= 0.0 {
            return Err(Error::BadEvent {
                index: i,
                what: "delta_t must be > 0",
            });
        }
        if !(-1.0..=1.0).contains(&e.vol_imbalance) {
            return Err(Error::BadEvent {
                index: i,
                what: "vol_imbalance outside [-1, 1]",
            });
        }
    }

    let mut elements = Vec::new();
    let mut qualities = Vec::new();
    let mut components = Vec::new();
    let mut mid = bins.initial_mid;
    let mut spread = bins.initial_spread;
    let mut rolling = RollingContext::new(qparams.vol_lookback, qparams.gamma_vol);

    for group in events.chunks_exact(EVENTS_PER_SYMBOL) {
        let feats = group_features(group, mid, spread);
        let p = uniform_bin(feats.net_mid, -bins.range_ticks, bins.range_ticks, bins.price_bins);
        let s = uniform_bin(
            feats.net_spread,
            -bins.range_ticks,
            bins.range_ticks,
            bins.spread_bins,
        );
        let im = uniform_bin(feats.mean_imbalance, -1.0, 1.0, bins.imbalance_bins);
        let t = log_bin(feats.total_time, bins.time_min_s, bins.time_max_s, bins.time_bins);
        let id = ((p * bins.spread_bins + s) * bins.imbalance_bins + im) * EVENT_TYPE_COUNT
            * bins.time_bins
            + feats.modal_type * bins.time_bins
            + t;
        elements.push(id as SymbolId);

        if feats.window.mid <= 0.0 {
            return Err(Error::NonPositiveMid(feats.window.mid));
        }
        let ctx = rolling.context_for(&feats.window);
        qualities.push(finance_element_quality(&feats.window, &ctx, qparams)?);
        let comps = crate::quality::finance_components(&feats.window, &ctx, qparams)?;
        components.push([
            comps[0],
            comps[1],
            crate::quality::volatility_ratio(&feats.window, &ctx),
            comps[3],
        ]);
        rolling.push(&feats.window);

        mid = feats.window.mid;
        spread += feats.net_spread;
    }

    let seq = AtomicSequence::new(
        elements,
        qualities,
        String::from(source_id),
        bins.alphabet_size(),
    )?;
    Ok((seq, components))
}
