//! Quality-aware merge scoring and greedy vocabulary construction.
//!
//! The merge score couples a PMI-like association term with the average
//! constituent quality raised to a learnable exponent:
//!
//! ```text
//! w(a,b) = f(a,b) / (f(a) f(b) + eps_f) * ((q_a + q_b)/2 + eps_q)^alpha * psi(a,b)
//! ```
//!
//! Greedy construction repeatedly executes the argmax merge, with ties broken
//! by ascending `(a, b)`. A brute-force enumerator over all short merge
//! sequences serves as the oracle the greedy run is checked against.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{apply_merge, count_pairs, AtomicSequence, PairStats, Segmentation};
use crate::error::{Error, Result};
use crate::quality::{arithmetic_token_quality, geometric_token_quality};
use crate::{DomainMode, SymbolId, TokenId};

/// How a token came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Base(SymbolId),
    Merged(TokenId, TokenId),
}

/// One vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenInfo {
    pub id: TokenId,
    pub kind: TokenKind,
    /// Length in atomic units.
    pub atom_len: u32,
    /// Aggregated quality, mean over occurrence-level aggregates.
    pub quality: f64,
}

/// One learned merge rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeRule {
    pub a: TokenId,
    pub b: TokenId,
    pub new_id: TokenId,
    /// Aggregated quality of the merged token at creation time.
    pub quality: f64,
}

/// Base alphabet plus the ordered merge table built on top of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<TokenInfo>,
    merges: Vec<MergeRule>,
    base_size: u32,
}

impl Vocabulary {
    /// Vocabulary containing only the base alphabet, all qualities 1.
    pub fn base(base_size: u32) -> Self {
        let tokens = (0..base_size)
            .map(|id| TokenInfo {
                id,
                kind: TokenKind::Base(id),
                atom_len: 1,
                quality: 1.0,
            })
            .collect();
        Self {
            tokens,
            merges: Vec::new(),
            base_size,
        }
    }

    pub fn base_size(&self) -> u32 {
        self.base_size
    }

    pub fn size(&self) -> u32 {
        self.tokens.len() as u32
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn tokens(&self) -> &[TokenInfo] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Result<&TokenInfo> {
        self.tokens.get(id as usize).ok_or(Error::UnknownToken(id))
    }

    pub fn set_quality(&mut self, id: TokenId, q: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::QualityOutOfRange(q));
        }
        let slot = self
            .tokens
            .get_mut(id as usize)
            .ok_or(Error::UnknownToken(id))?;
        slot.quality = q;
        if let TokenKind::Merged(a, b) = slot.kind {
            if let Some(rule) = self
                .merges
                .iter_mut()
                .find(|r| r.new_id == id && r.a == a && r.b == b)
            {
                rule.quality = q;
            }
        }
        Ok(())
    }

    /// Appends a merge of existing tokens; the new id is `base_size + merges`.
    pub fn push_merge(&mut self, a: TokenId, b: TokenId, quality: f64) -> Result<TokenId> {
        let new_id = self.tokens.len() as TokenId;
        if a >= new_id || b >= new_id {
            return Err(Error::UnknownToken(a.max(b)));
        }
        if !(0.0..=1.0).contains(&quality) {
            return Err(Error::QualityOutOfRange(quality));
        }
        let atom_len = self.tokens[a as usize].atom_len + self.tokens[b as usize].atom_len;
        self.tokens.push(TokenInfo {
            id: new_id,
            kind: TokenKind::Merged(a, b),
            atom_len,
            quality,
        });
        self.merges.push(MergeRule {
            a,
            b,
            new_id,
            quality,
        });
        Ok(new_id)
    }

    /// Expands a token into its atomic symbols.
    pub fn expand(&self, id: TokenId) -> Result<Vec<SymbolId>> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(t) = stack.pop() {
            match self.token(t)?.kind {
                TokenKind::Base(s) => out.push(s),
                TokenKind::Merged(a, b) => {
                    // Right constituent is pushed first so the left pops first.
                    stack.push(b);
                    stack.push(a);
                }
            }
        }
        Ok(out)
    }

    /// Checks contiguous merge ids, topological constituents and quality bounds.
    pub fn validate(&self) -> Result<()> {
        for (i, rule) in self.merges.iter().enumerate() {
            let expect = self.base_size + i as u32;
            if rule.new_id != expect {
                return Err(Error::Invariant(alloc::format!(
                    "merge {i} has id {} (expected {expect})",
                    rule.new_id
                )));
            }
            if rule.a >= rule.new_id || rule.b >= rule.new_id {
                return Err(Error::Invariant(alloc::format!(
                    "merge {i} references constituents >= its own id"
                )));
            }
        }
        for t in &self.tokens {
            if !(0.0..=1.0).contains(&t.quality) {
                return Err(Error::QualityOutOfRange(t.quality));
            }
        }
        Ok(())
    }
}

/// Merge-score parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeScoreParams {
    /// Quality sensitivity exponent, `>= 0`.
    pub alpha: f64,
    /// Stabilizer in the association denominator.
    pub epsilon_f: f64,
    /// Stabilizer in the quality base.
    pub epsilon_q: f64,
}

impl Default for MergeScoreParams {
    fn default() -> Self {
        Self {
            alpha: 0.72,
            epsilon_f: 1e-8,
            epsilon_q: 1e-8,
        }
    }
}

impl MergeScoreParams {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Default::default()
        }
    }
}

/// Optional domain-constraint hook `psi(a, b) -> [0, 1]`.
pub type DomainConstraint<'a> = &'a dyn Fn(TokenId, TokenId) -> f64;

/// Quality-aware merge score with `psi = 1`.
pub fn merge_score(
    f_ab: f64,
    f_a: f64,
    f_b: f64,
    q_a: f64,
    q_b: f64,
    params: &MergeScoreParams,
) -> f64 {
    merge_score_with_constraint(f_ab, f_a, f_b, q_a, q_b, params, 1.0)
}

/// Quality-aware merge score with an explicit `psi(a, b)` value.
pub fn merge_score_with_constraint(
    f_ab: f64,
    f_a: f64,
    f_b: f64,
    q_a: f64,
    q_b: f64,
    params: &MergeScoreParams,
    psi: f64,
) -> f64 {
    let assoc = f_ab / (f_a * f_b + params.epsilon_f);
    let q_bar = 0.5 * (q_a + q_b);
    assoc * (q_bar + params.epsilon_q).powf(params.alpha) * psi
}

/// Aggregated quality of a merged token, plus a flag marking the
/// constituent-level fallback used when no occurrences are available.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenQuality {
    pub value: f64,
    pub fallback: bool,
}

/// Quality of the token formed by merging `a` and `b`.
///
/// Genomics aggregates each occurrence's atomic span geometrically and then
/// averages across occurrences; finance uses the length-weighted average of
/// the constituent qualities. Without occurrences the genomics path falls
/// back to a length-weighted geometric combination of `q_a` and `q_b`.
pub fn token_quality_on_merge(
    mode: DomainMode,
    a: &TokenInfo,
    b: &TokenInfo,
    occurrence_qualities: &[&[f64]],
    epsilon_q: f64,
) -> TokenQuality {
    match mode {
        DomainMode::Finance => {
            let la = a.atom_len as f64;
            let lb = b.atom_len as f64;
            TokenQuality {
                value: ((la * a.quality + lb * b.quality) / (la + lb)).clamp(0.0, 1.0),
                fallback: false,
            }
        }
        DomainMode::Genomics => {
            if occurrence_qualities.is_empty() {
                let la = a.atom_len as f64;
                let lb = b.atom_len as f64;
                let log_mix = (la * (a.quality + epsilon_q).ln()
                    + lb * (b.quality + epsilon_q).ln())
                    / (la + lb);
                return TokenQuality {
                    value: log_mix.exp().clamp(0.0, 1.0),
                    fallback: true,
                };
            }
            let mut acc = 0.0;
            for occ in occurrence_qualities {
                acc += geometric_token_quality(occ, epsilon_q).unwrap_or(0.0);
            }
            TokenQuality {
                value: (acc / occurrence_qualities.len() as f64).clamp(0.0, 1.0),
                fallback: false,
            }
        }
    }
}

/// Occurrence-level aggregate used for objective evaluation and base-token
/// qualities: geometric for genomics, arithmetic for finance.
pub fn occurrence_quality(mode: DomainMode, qualities: &[f64], epsilon_q: f64) -> Result<f64> {
    match mode {
        DomainMode::Genomics => geometric_token_quality(qualities, epsilon_q),
        DomainMode::Finance => arithmetic_token_quality(qualities),
    }
}

/// One scored merge candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub a: TokenId,
    pub b: TokenId,
    pub score: f64,
    pub pair_freq: u64,
    pub q_a: f64,
    pub q_b: f64,
    pub len_a: u32,
    pub len_b: u32,
}

/// Scores every live pair and returns the top `k` by descending score, ties
/// broken by ascending `(a, b)`. Fewer than `k` entries are returned when
/// fewer pairs exist.
pub fn build_priority_queue(
    stats: &PairStats,
    vocab: &Vocabulary,
    params: &MergeScoreParams,
    k: usize,
    psi: Option<DomainConstraint<'_>>,
) -> Vec<Candidate> {
    let mut candidates: Vec<Candidate> = stats
        .pairs()
        .map(|((a, b), f_ab)| {
            let ta = &vocab.tokens()[a as usize];
            let tb = &vocab.tokens()[b as usize];
            let psi_v = psi.map_or(1.0, |f| f(a, b));
            let score = merge_score_with_constraint(
                f_ab as f64,
                stats.freq(a) as f64,
                stats.freq(b) as f64,
                ta.quality,
                tb.quality,
                params,
                psi_v,
            );
            Candidate {
                a,
                b,
                score,
                pair_freq: f_ab,
                q_a: ta.quality,
                q_b: tb.quality,
                len_a: ta.atom_len,
                len_b: tb.atom_len,
            }
        })
        .collect();
    // Stable sort on descending score keeps the ascending (a, b) iteration
    // order of the stats map as the tie-break.
    candidates.sort_by(|x, y| y.score.total_cmp(&x.score));
    candidates.truncate(k);
    candidates
}

fn best_candidate(
    stats: &PairStats,
    vocab: &Vocabulary,
    params: &MergeScoreParams,
    psi: Option<DomainConstraint<'_>>,
) -> Option<(TokenId, TokenId)> {
    let mut best: Option<(f64, (TokenId, TokenId))> = None;
    for ((a, b), f_ab) in stats.pairs() {
        let ta = &vocab.tokens()[a as usize];
        let tb = &vocab.tokens()[b as usize];
        let psi_v = psi.map_or(1.0, |f| f(a, b));
        let score = merge_score_with_constraint(
            f_ab as f64,
            stats.freq(a) as f64,
            stats.freq(b) as f64,
            ta.quality,
            tb.quality,
            params,
            psi_v,
        );
        // Strictly-greater keeps the first (lexicographically smallest) pair
        // on exact ties.
        match best {
            Some((s, _)) if score <= s => {}
            _ => best = Some((score, (a, b))),
        }
    }
    best.map(|(_, p)| p)
}

/// Everything the greedy builder tracks while constructing a vocabulary.
#[derive(Debug, Clone)]
pub struct BuildState {
    pub vocab: Vocabulary,
    pub seg: Segmentation,
    pub stats: PairStats,
    pub mode: DomainMode,
}

impl BuildState {
    /// Base state: one token per element, base-token qualities set to the
    /// mean element quality over that symbol's occurrences.
    pub fn from_corpus(corpus: &[AtomicSequence], base_size: u32, mode: DomainMode) -> Result<Self> {
        let seg = Segmentation::from_base(corpus);
        let stats = count_pairs(&seg, base_size)?;
        let mut vocab = Vocabulary::base(base_size);
        let mut sums = vec![0.0f64; base_size as usize];
        let mut counts = vec![0u64; base_size as usize];
        for seq in corpus {
            for (&s, &q) in seq.elements.iter().zip(&seq.qualities) {
                sums[s as usize] += q;
                counts[s as usize] += 1;
            }
        }
        for id in 0..base_size {
            if counts[id as usize] > 0 {
                vocab.set_quality(id, (sums[id as usize] / counts[id as usize] as f64).clamp(0.0, 1.0))?;
            }
        }
        Ok(Self {
            vocab,
            seg,
            stats,
            mode,
        })
    }

    /// Executes one merge and recomputes the new token's aggregated quality
    /// from its occurrence spans.
    pub fn execute_merge(
        &mut self,
        corpus: &[AtomicSequence],
        pair: (TokenId, TokenId),
        epsilon_q: f64,
    ) -> Result<TokenId> {
        let a = *self.vocab.token(pair.0)?;
        let b = *self.vocab.token(pair.1)?;
        let new_id = self.vocab.push_merge(pair.0, pair.1, 0.0)?;
        let outcome = apply_merge(&mut self.stats, &mut self.seg, pair, new_id);
        debug_assert!(!outcome.noop, "greedy selected a pair with zero count");
        let occ = self.seg.occurrence_qualities(corpus, new_id);
        let q = token_quality_on_merge(self.mode, &a, &b, &occ, epsilon_q);
        self.vocab.set_quality(new_id, q.value)?;
        Ok(new_id)
    }
}

/// Result of greedy construction.
#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub vocab: Vocabulary,
    pub merges_requested: usize,
    pub merges_executed: usize,
}

/// Greedy vocabulary construction: executes `min(k, available)` merges, each
/// the argmax of the merge score under the tie-break rule. Deterministic for
/// fixed inputs.
pub fn greedy_build(
    corpus: &[AtomicSequence],
    base_size: u32,
    mode: DomainMode,
    params: &MergeScoreParams,
    k: usize,
    psi: Option<DomainConstraint<'_>>,
) -> Result<BuildOutcome> {
    let mut state = BuildState::from_corpus(corpus, base_size, mode)?;
    let mut executed = 0;
    for _ in 0..k {
        let Some(pair) = best_candidate(&state.stats, &state.vocab, params, psi) else {
            break;
        };
        state.execute_merge(corpus, pair, params.epsilon_q)?;
        executed += 1;
    }
    Ok(BuildOutcome {
        vocab: state.vocab,
        merges_requested: k,
        merges_executed: executed,
    })
}

/// Weights of the three objective components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub lambda_lm: f64,
    pub lambda_comp: f64,
    pub lambda_qual: f64,
    /// Exponent of the concave quality aggregator `g(x) = (x + eps_q)^alpha`.
    pub alpha: f64,
    pub epsilon_q: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            lambda_lm: 1.0,
            lambda_comp: 0.01,
            lambda_qual: 1.0,
            alpha: 0.5,
            epsilon_q: 1e-8,
        }
    }
}

/// Empirical entropy (natural log) of the atomic symbols inside a token;
/// zero for single-element tokens.
pub fn token_entropy(vocab: &Vocabulary, id: TokenId) -> Result<f64> {
    let atoms = vocab.expand(id)?;
    let n = atoms.len() as f64;
    let mut counts: alloc::collections::BTreeMap<SymbolId, u64> = alloc::collections::BTreeMap::new();
    for s in atoms {
        *counts.entry(s).or_insert(0) += 1;
    }
    let mut h = 0.0;
    for (_, c) in counts {
        let p = c as f64 / n;
        h -= p * p.ln();
    }
    Ok(h)
}

/// Evaluates the tokenization objective
/// `J = lm * LL/token - comp * (|V| ln |V| + sum |t| H(t)) + qual * mean g(q)`
/// over the current segmentation.
pub fn evaluate_objective(
    vocab: &Vocabulary,
    corpus: &[AtomicSequence],
    seg: &Segmentation,
    mode: DomainMode,
    weights: &ObjectiveWeights,
) -> Result<f64> {
    let stats = count_pairs(seg, vocab.size())?;
    let total = stats.total_tokens();
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    let t_f = total as f64;

    // Unigram pseudo-log-likelihood per token under ML estimates.
    let mut ll = 0.0;
    for (_, c) in stats.tokens() {
        let p = c as f64 / t_f;
        ll += c as f64 * p.ln();
    }
    ll /= t_f;

    // MDL complexity over the full vocabulary.
    let v = vocab.size() as f64;
    let mut phi = v * v.ln();
    for t in vocab.tokens() {
        phi += t.atom_len as f64 * token_entropy(vocab, t.id)?;
    }

    // Concave quality aggregate over occurrence-level qualities.
    let mut qual = 0.0;
    for (si, seq) in corpus.iter().enumerate() {
        for &(s, e) in seg.spans_of(si) {
            let q = occurrence_quality(
                mode,
                &seq.qualities[s as usize..e as usize],
                weights.epsilon_q,
            )?;
            qual += (q + weights.epsilon_q).powf(weights.alpha);
        }
    }
    qual /= t_f;

    Ok(weights.lambda_lm * ll - weights.lambda_comp * phi + weights.lambda_qual * qual)
}

/// Outcome of the brute-force search.
#[derive(Debug, Clone)]
pub struct ExhaustiveResult {
    pub best_objective: f64,
    pub best_sequence: Vec<(TokenId, TokenId)>,
    pub nodes_visited: u64,
}

/// Enumeration guard for [`exhaustive_optimum`].
pub const ENUMERATION_BOUND: u64 = 1_000_000;

/// Enumerates every ordered merge sequence of length `<= k` over reachable
/// pairs and returns the best objective value found. Intended as a test
/// oracle on tiny instances; refuses anything that would exceed the
/// enumeration guard.
pub fn exhaustive_optimum(
    corpus: &[AtomicSequence],
    base_size: u32,
    mode: DomainMode,
    weights: &ObjectiveWeights,
    k: usize,
) -> Result<ExhaustiveResult> {
    let state = BuildState::from_corpus(corpus, base_size, mode)?;
    let mut nodes = 0u64;
    let mut best = ExhaustiveResult {
        best_objective: f64::NEG_INFINITY,
        best_sequence: Vec::new(),
        nodes_visited: 0,
    };
    let mut prefix = Vec::new();
    search(
        corpus, &state, mode, weights, k, &mut prefix, &mut best, &mut nodes,
    )?;
    best.nodes_visited = nodes;
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn search(
    corpus: &[AtomicSequence],
    state: &BuildState,
    mode: DomainMode,
    weights: &ObjectiveWeights,
    depth_left: usize,
    prefix: &mut Vec<(TokenId, TokenId)>,
    best: &mut ExhaustiveResult,
    nodes: &mut u64,
) -> Result<()> {
    *nodes += 1;
    if *nodes > ENUMERATION_BOUND {
        return Err(Error::InstanceTooLarge {
            nodes: *nodes,
            bound: ENUMERATION_BOUND,
        });
    }
    let value = evaluate_objective(&state.vocab, corpus, &state.seg, mode, weights)?;
    if value > best.best_objective {
        best.best_objective = value;
        best.best_sequence = prefix.clone();
    }
    if depth_left == 0 {
        return Ok(());
    }
    let pairs: Vec<(TokenId, TokenId)> = state.stats.pairs().map(|(p, _)| p).collect();
    for pair in pairs {
        let mut next = state.clone();
        next.execute_merge(corpus, pair, weights.epsilon_q)?;
        prefix.push(pair);
        search(corpus, &next, mode, weights, depth_left - 1, prefix, best, nodes)?;
        prefix.pop();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;
    use approx::assert_relative_eq;

    fn seq(elements: &[u32], qualities: &[f64], alphabet: u32) -> AtomicSequence {
        AtomicSequence::new(
            elements.to_vec(),
            qualities.to_vec(),
            String::from("t"),
            alphabet,
        )
        .unwrap()
    }

    fn uniform(elements: &[u32], alphabet: u32) -> AtomicSequence {
        seq(elements, &vec![1.0; elements.len()], alphabet)
    }

    #[test]
    fn merge_score_reference_value() {
        // Brute-force oracle: direct formula evaluation.
        let params = MergeScoreParams {
            alpha: 0.5,
            epsilon_f: 1e-8,
            epsilon_q: 1e-8,
        };
        let expected = (60.0 / (100.0 * 80.0 + 1e-8)) * (0.8f64 + 1e-8).sqrt();
        let got = merge_score(60.0, 100.0, 80.0, 0.9, 0.7, &params);
        assert_relative_eq!(got, expected, max_relative = 1e-15);
        assert_relative_eq!(got, 6.7082e-3, max_relative = 1e-4);
    }

    #[test]
    fn merge_score_alpha_zero_is_pure_association() {
        let params = MergeScoreParams::with_alpha(0.0);
        let w = merge_score(60.0, 100.0, 80.0, 0.2, 0.3, &params);
        assert_relative_eq!(w, 60.0 / (8000.0 + 1e-8), max_relative = 1e-12);
    }

    #[test]
    fn merge_score_zero_cooccurrence_is_zero() {
        let params = MergeScoreParams::default();
        assert_eq!(merge_score(0.0, 10.0, 10.0, 0.9, 0.9, &params), 0.0);
    }

    #[test]
    fn token_quality_finance_weighted_average() {
        let a = TokenInfo {
            id: 0,
            kind: TokenKind::Base(0),
            atom_len: 2,
            quality: 0.8,
        };
        let b = TokenInfo {
            id: 1,
            kind: TokenKind::Base(1),
            atom_len: 1,
            quality: 0.5,
        };
        let q = token_quality_on_merge(DomainMode::Finance, &a, &b, &[], 1e-8);
        assert_relative_eq!(q.value, 0.7, max_relative = 1e-12);
        assert!(!q.fallback);

        // Equal lengths reduce to the simple average.
        let b_long = TokenInfo {
            atom_len: 2,
            ..b
        };
        let q = token_quality_on_merge(DomainMode::Finance, &a, &b_long, &[], 1e-8);
        assert_relative_eq!(q.value, (0.8 + 0.5) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn token_quality_genomics_equal_inputs_and_fallback() {
        let a = TokenInfo {
            id: 0,
            kind: TokenKind::Base(0),
            atom_len: 1,
            quality: 0.9,
        };
        let b = TokenInfo {
            id: 1,
            kind: TokenKind::Base(1),
            atom_len: 1,
            quality: 0.9,
        };
        let occ: [&[f64]; 2] = [&[0.9, 0.9], &[0.9, 0.9]];
        let q = token_quality_on_merge(DomainMode::Genomics, &a, &b, &occ, 1e-8);
        assert_relative_eq!(q.value, 0.9, epsilon = 1e-7);
        assert!(!q.fallback);

        let fb = token_quality_on_merge(DomainMode::Genomics, &a, &b, &[], 1e-8);
        assert!(fb.fallback);
        assert_relative_eq!(fb.value, 0.9, epsilon = 1e-7);
    }

    #[test]
    fn queue_orders_by_score_then_pair() {
        // "ABAB": f(A,B)=2 beats f(B,A)=1 with identical denominators.
        let corpus = [uniform(&[0, 1, 0, 1], 2)];
        let state = BuildState::from_corpus(&corpus, 2, DomainMode::Genomics).unwrap();
        let q = build_priority_queue(
            &state.stats,
            &state.vocab,
            &MergeScoreParams::with_alpha(0.5),
            10,
            None,
        );
        assert_eq!((q[0].a, q[0].b), (0, 1));
        assert_eq!(q.len(), 2);

        // Equal scores tie-break lexicographically: (0,1) and (2,3) have
        // identical counts and marginals here.
        let corpus = [uniform(&[0, 1, 0, 1], 4), uniform(&[2, 3, 2, 3], 4)];
        let state = BuildState::from_corpus(&corpus, 4, DomainMode::Genomics).unwrap();
        let q = build_priority_queue(
            &state.stats,
            &state.vocab,
            &MergeScoreParams::with_alpha(0.0),
            2,
            None,
        );
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].score, q[1].score);
        assert_eq!((q[0].a, q[0].b), (0, 1));
        assert_eq!((q[1].a, q[1].b), (2, 3));
    }

    #[test]
    fn queue_respects_k_and_small_pair_counts() {
        let corpus = [uniform(&[0, 1], 2)];
        let state = BuildState::from_corpus(&corpus, 2, DomainMode::Genomics).unwrap();
        let q = build_priority_queue(
            &state.stats,
            &state.vocab,
            &MergeScoreParams::default(),
            50,
            None,
        );
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn greedy_zero_budget_returns_base() {
        let corpus = [uniform(&[0, 1, 0, 1], 2)];
        let out = greedy_build(
            &corpus,
            2,
            DomainMode::Genomics,
            &MergeScoreParams::default(),
            0,
            None,
        )
        .unwrap();
        assert_eq!(out.vocab.size(), 2);
        assert_eq!(out.merges_executed, 0);
    }

    #[test]
    fn greedy_ababab_picks_ab_first() {
        let corpus = [uniform(&[0, 1, 0, 1, 0, 1], 2)];
        let out = greedy_build(
            &corpus,
            2,
            DomainMode::Genomics,
            &MergeScoreParams::with_alpha(1.0),
            1,
            None,
        )
        .unwrap();
        assert_eq!(out.merges_executed, 1);
        let rule = out.vocab.merges()[0];
        assert_eq!((rule.a, rule.b), (0, 1));
    }

    #[test]
    fn greedy_stops_early_when_pairs_run_out() {
        let corpus = [uniform(&[0, 1], 2)];
        let out = greedy_build(
            &corpus,
            2,
            DomainMode::Genomics,
            &MergeScoreParams::default(),
            10,
            None,
        )
        .unwrap();
        assert_eq!(out.merges_requested, 10);
        assert!(out.merges_executed < 10);
        out.vocab.validate().unwrap();
    }

    #[test]
    fn entropy_reference_values() {
        let mut vocab = Vocabulary::base(2);
        // token "AC"
        let ac = vocab.push_merge(0, 1, 1.0).unwrap();
        // token "AA"
        let aa = vocab.push_merge(0, 0, 1.0).unwrap();
        assert_eq!(token_entropy(&vocab, 0).unwrap(), 0.0);
        assert_relative_eq!(
            token_entropy(&vocab, ac).unwrap(),
            core::f64::consts::LN_2,
            max_relative = 1e-12
        );
        assert_eq!(token_entropy(&vocab, aa).unwrap(), 0.0);
    }

    #[test]
    fn expand_reverses_merges() {
        let mut vocab = Vocabulary::base(3);
        let x = vocab.push_merge(0, 1, 1.0).unwrap();
        let y = vocab.push_merge(x, 2, 1.0).unwrap();
        assert_eq!(vocab.expand(y).unwrap(), vec![0, 1, 2]);
        assert_eq!(vocab.token(y).unwrap().atom_len, 3);
    }

    #[test]
    fn objective_errors_on_empty_corpus() {
        let corpus: [AtomicSequence; 0] = [];
        let seg = Segmentation::from_base(&corpus);
        let vocab = Vocabulary::base(2);
        assert!(matches!(
            evaluate_objective(
                &vocab,
                &corpus,
                &seg,
                DomainMode::Genomics,
                &ObjectiveWeights::default()
            ),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn exhaustive_contains_base_and_dominates_greedy() {
        let corpus = [seq(
            &[0, 1, 0, 1, 2, 0, 1],
            &[0.9, 0.8, 0.9, 0.8, 0.4, 0.9, 0.8],
            3,
        )];
        let weights = ObjectiveWeights::default();
        let exh = exhaustive_optimum(&corpus, 3, DomainMode::Genomics, &weights, 2).unwrap();

        let greedy = greedy_build(
            &corpus,
            3,
            DomainMode::Genomics,
            &MergeScoreParams::with_alpha(0.5),
            2,
            None,
        )
        .unwrap();
        // Re-simulate the greedy sequence to evaluate its objective.
        let mut state = BuildState::from_corpus(&corpus, 3, DomainMode::Genomics).unwrap();
        for rule in greedy.vocab.merges() {
            state.execute_merge(&corpus, (rule.a, rule.b), weights.epsilon_q).unwrap();
        }
        let greedy_value =
            evaluate_objective(&state.vocab, &corpus, &state.seg, DomainMode::Genomics, &weights)
                .unwrap();
        assert!(exh.best_objective >= greedy_value - 1e-12);

        // K = 0 reduces to the base objective.
        let base = exhaustive_optimum(&corpus, 3, DomainMode::Genomics, &weights, 0).unwrap();
        assert!(base.best_sequence.is_empty());
        assert!(exh.best_objective >= base.best_objective);
    }

    #[test]
    fn exhaustive_guard_refuses_large_instances() {
        // A long four-symbol corpus explodes at depth 3.
        let elements: Vec<u32> = (0..400).map(|i| (i % 4) as u32).collect();
        let corpus = [uniform(&elements, 4)];
        let weights = ObjectiveWeights::default();
        // Depth 3 over dozens of pairs visits > 1e6 nodes only for huge pair
        // sets; instead check the guard directly with an absurd depth.
        let r = exhaustive_optimum(&corpus, 4, DomainMode::Genomics, &weights, 6);
        match r {
            Err(Error::InstanceTooLarge { .. }) => {}
            Ok(res) => assert!(res.nodes_visited <= ENUMERATION_BOUND),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
