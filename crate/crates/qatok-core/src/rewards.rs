//! Multi-objective reward components and their EMA normalization.
//!
//! Raw components (quality, information, complexity, domain) are standardized
//! with running exponential statistics before being combined by softmax
//! weights. Normalization uses the *previous* step's mean and deviation, then
//! updates them, so replaying a logged stream reproduces the statistics
//! bit-exactly.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::merge::{token_quality_on_merge, TokenInfo};
use crate::DomainMode;

/// Reward component identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RewardComponent {
    Quality,
    Information,
    Complexity,
    Domain,
}

impl RewardComponent {
    pub fn name(self) -> &'static str {
        match self {
            RewardComponent::Quality => "quality",
            RewardComponent::Information => "information",
            RewardComponent::Complexity => "complexity",
            RewardComponent::Domain => "domain",
        }
    }

    pub const ALL: [RewardComponent; 4] = [
        RewardComponent::Quality,
        RewardComponent::Information,
        RewardComponent::Complexity,
        RewardComponent::Domain,
    ];
}

/// Running EMA mean/variance for one reward component.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardStats {
    mean: f64,
    var: f64,
    beta: f64,
    epsilon_r: f64,
    count: u64,
}

impl Default for RewardStats {
    fn default() -> Self {
        Self::new(0.01, 1e-8)
    }
}

impl RewardStats {
    /// Warm start with mean 0 and variance 1, which keeps the very first
    /// normalization away from the `1/epsilon` blow-up.
    pub fn new(beta: f64, epsilon_r: f64) -> Self {
        Self::with_init(0.0, 1.0, beta, epsilon_r)
    }

    /// Warm start from explicit initial statistics.
    pub fn with_init(mean: f64, var: f64, beta: f64, epsilon_r: f64) -> Self {
        assert!((0.0..1.0).contains(&beta), "momentum must lie in (0, 1)");
        assert!(epsilon_r > 0.0, "epsilon_r must be positive");
        assert!(var >= 0.0, "variance must be non-negative");
        Self {
            mean,
            var,
            beta,
            epsilon_r,
            count: 0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.var
    }

    pub fn sigma(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Normalizes `raw` against the pre-update statistics, then folds it in:
    ///
    /// ```text
    /// out   = (raw - mean_{t-1}) / (sigma_{t-1} + eps_R)
    /// mean_t = (1-b) mean_{t-1} + b raw
    /// var_t  = (1-b) var_{t-1}  + b (raw - mean_{t-1})(raw - mean_t)
    /// ```
    pub fn ema_update(&mut self, raw: f64) -> f64 {
        let normalized = (raw - self.mean) / (self.sigma() + self.epsilon_r);
        let prev_mean = self.mean;
        self.mean = (1.0 - self.beta) * self.mean + self.beta * raw;
        self.var = (1.0 - self.beta) * self.var + self.beta * (raw - prev_mean) * (raw - self.mean);
        // The update form keeps the variance non-negative: the cross term is
        // b(1-b)(raw-mean)^2 >= 0 when expanded.
        debug_assert!(self.var >= 0.0);
        self.count += 1;
        normalized
    }
}

/// Softmax-parameterized weights over reward components.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardWeights {
    logits: Vec<(RewardComponent, f64)>,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl RewardWeights {
    /// Zero logits: uniform weights over whichever components are present.
    pub fn uniform() -> Self {
        Self {
            logits: RewardComponent::ALL.iter().map(|&c| (c, 0.0)).collect(),
        }
    }

    pub fn from_logits(logits: &[(RewardComponent, f64)]) -> Result<Self> {
        for (i, (c, _)) in logits.iter().enumerate() {
            if logits[..i].iter().any(|(d, _)| d == c) {
                return Err(Error::ComponentMismatch("duplicate component logit"));
            }
        }
        Ok(Self {
            logits: logits.to_vec(),
        })
    }

    pub fn logit(&self, c: RewardComponent) -> Option<f64> {
        self.logits.iter().find(|(d, _)| *d == c).map(|(_, l)| *l)
    }

    /// Softmax weights restricted to `present`, renormalized over them.
    pub fn weights_for(&self, present: &[RewardComponent]) -> Result<Vec<f64>> {
        if present.is_empty() {
            return Err(Error::ComponentMismatch("no components present"));
        }
        let mut logits = Vec::with_capacity(present.len());
        for (i, c) in present.iter().enumerate() {
            if present[..i].contains(c) {
                return Err(Error::ComponentMismatch("duplicate component"));
            }
            let l = self
                .logit(*c)
                .ok_or(Error::ComponentMismatch("component without a weight"))?;
            logits.push(l);
        }
        let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Ok(exps.iter().map(|e| e / sum).collect())
    }
}

/// Weighted sum of normalized components under softmax weights.
pub fn total_reward(components: &[(RewardComponent, f64)], weights: &RewardWeights) -> Result<f64> {
    let present: Vec<RewardComponent> = components.iter().map(|(c, _)| *c).collect();
    let w = weights.weights_for(&present)?;
    Ok(components
        .iter()
        .zip(&w)
        .map(|((_, v), wi)| wi * v)
        .sum())
}

/// Raw quality reward of a merge: the merged token's aggregated quality.
pub fn raw_quality_reward(
    mode: DomainMode,
    a: &TokenInfo,
    b: &TokenInfo,
    occurrence_qualities: &[&[f64]],
    epsilon_q: f64,
) -> f64 {
    token_quality_on_merge(mode, a, b, occurrence_qualities, epsilon_q).value
}

/// PMI-style information reward in probability form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoReward {
    pub value: f64,
    /// True when `f_ab` was zero and the log floor sentinel was returned.
    pub floored: bool,
}

/// `log((f_ab/T) / ((f_a/T)(f_b/T) + eps_p))`; a zero co-occurrence count
/// returns the `ln(eps_p)` floor, flagged.
pub fn raw_information_reward(f_ab: u64, f_a: u64, f_b: u64, total: u64, epsilon_p: f64) -> InfoReward {
    debug_assert!(total > 0, "information reward needs a non-empty corpus");
    if f_ab == 0 {
        return InfoReward {
            value: epsilon_p.ln(),
            floored: true,
        };
    }
    let t = total as f64;
    let p_ab = f_ab as f64 / t;
    let p_a = f_a as f64 / t;
    let p_b = f_b as f64 / t;
    InfoReward {
        value: (p_ab / (p_a * p_b + epsilon_p)).ln(),
        floored: false,
    }
}

/// Volatility inputs for the finance complexity penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolatilityContext {
    pub sigma_current: f64,
    pub sigma_historical: f64,
}

impl VolatilityContext {
    /// `(1 + max(0, (sig_c - sig_h)/(sig_h + eps)))^beta_vol`
    pub fn scale(&self, beta_vol: f64) -> f64 {
        let eps = 1e-8;
        let excess = ((self.sigma_current - self.sigma_historical)
            / (self.sigma_historical + eps))
            .max(0.0);
        (1.0 + excess).powf(beta_vol)
    }
}

/// Non-positive complexity penalty for a merge.
///
/// Genomics pays the merged length; finance additionally scales by vocabulary
/// size and the volatility regime.
pub fn raw_complexity_penalty(
    merged_len: u32,
    vocab_size: u32,
    mode: DomainMode,
    beta_vol: f64,
    vol: Option<VolatilityContext>,
) -> f64 {
    let len = merged_len as f64;
    match mode {
        DomainMode::Genomics => -len,
        DomainMode::Finance => {
            let scale = vol.map_or(1.0, |v| v.scale(beta_vol));
            -(len * ((vocab_size as f64) + 1.0).ln() * scale)
        }
    }
}

/// Jaccard overlap of `[start, end)` intervals.
fn jaccard(a: (u64, u64), b: (u64, u64)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Genomics domain reward: per occurrence, the best Jaccard overlap between
/// the merged token's span and any annotated feature span; averaged over
/// occurrences. Zero when there are no occurrences or no features.
pub fn raw_overlap_reward(occurrence_spans: &[(u64, u64)], features: &[(u64, u64)]) -> f64 {
    if occurrence_spans.is_empty() || features.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for &span in occurrence_spans {
        let best = features
            .iter()
            .map(|&f| jaccard(span, f))
            .fold(0.0f64, f64::max);
        acc += best;
    }
    acc / occurrence_spans.len() as f64
}

/// Plug-in mutual information (natural log) between token presence and a
/// 3-bin return label, from a 2x3 contingency table of counts.
pub fn mutual_information(counts: &[[u64; 3]; 2]) -> f64 {
    let total: u64 = counts.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    let row: Vec<f64> = counts.iter().map(|r| r.iter().sum::<u64>() as f64 / t).collect();
    let mut col = [0.0f64; 3];
    for r in counts {
        for (j, &c) in r.iter().enumerate() {
            col[j] += c as f64 / t;
        }
    }
    let mut mi = 0.0;
    for (i, r) in counts.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let p = c as f64 / t;
            mi += p * (p / (row[i] * col[j])).ln();
        }
    }
    mi.max(0.0)
}

/// Default window for the adaptive MI normalizer.
pub const MI_WINDOW: usize = 1000;

/// Rolling 95th-percentile normalizer for raw MI values.
#[derive(Debug, Clone)]
pub struct MiNormalizer {
    ring: Vec<f64>,
    head: usize,
    filled: bool,
    capacity: usize,
    epsilon_mi: f64,
}

impl Default for MiNormalizer {
    fn default() -> Self {
        Self::new(MI_WINDOW, 1e-8)
    }
}

impl MiNormalizer {
    pub fn new(capacity: usize, epsilon_mi: f64) -> Self {
        Self {
            ring: Vec::with_capacity(capacity.max(1)),
            head: 0,
            filled: false,
            capacity: capacity.max(1),
            epsilon_mi,
        }
    }

    /// Records a raw MI observation and returns `raw / (p95 + eps_MI)` where
    /// the percentile is taken over the window *including* this observation.
    pub fn normalize(&mut self, raw: f64) -> f64 {
        if self.ring.len() < self.capacity && !self.filled {
            self.ring.push(raw);
            if self.ring.len() == self.capacity {
                self.filled = true;
            }
        } else {
            self.ring[self.head] = raw;
            self.head = (self.head + 1) % self.capacity;
        }
        raw / (self.percentile(0.95) + self.epsilon_mi)
    }

    /// Linear-interpolated percentile of the current window.
    pub fn percentile(&self, q: f64) -> f64 {
        if self.ring.is_empty() {
            return 0.0;
        }
        let mut sorted = self.ring.clone();
        sorted.sort_by(f64::total_cmp);
        let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        if lo == hi {
            sorted[lo]
        } else {
            let frac = pos - lo as f64;
            sorted[lo] * (1.0 - frac) + sorted[hi] * frac
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge::TokenKind;
    use approx::assert_relative_eq;

    #[test]
    fn ema_update_reference_step() {
        // Direct evaluation of the three update equations.
        let mut stats = RewardStats::new(0.01, 1e-8);
        let normalized = stats.ema_update(1.0);
        assert_relative_eq!(normalized, 1.0 / (1.0 + 1e-8), max_relative = 1e-12);
        assert_relative_eq!(stats.mean(), 0.01, max_relative = 1e-12);
        assert_relative_eq!(stats.variance(), 0.9999, max_relative = 1e-12);
    }

    #[test]
    fn ema_constant_stream_from_warm_mean_normalizes_to_zero() {
        let mut stats = RewardStats::with_init(3.5, 1.0, 0.01, 1e-8);
        for _ in 0..1000 {
            let n = stats.ema_update(3.5);
            assert_eq!(n, 0.0, "zero deviation must normalize to exactly 0");
        }
        assert_relative_eq!(stats.mean(), 3.5, max_relative = 1e-12);
    }

    #[test]
    fn ema_variance_stays_non_negative() {
        let mut stats = RewardStats::new(0.05, 1e-8);
        let mut x = 1.0f64;
        for i in 0..10_000 {
            // A deterministic oscillating stream.
            x = -x * (1.0 + (i as f64 * 0.1).sin() * 0.5);
            stats.ema_update(x);
            assert!(stats.variance() >= 0.0);
            assert!(stats.sigma() > 0.0);
        }
    }

    #[test]
    fn information_reward_reference_points() {
        // Independence: p_ab == p_a p_b gives ~0.
        let r = raw_information_reward(25, 50, 50, 100, 1e-8);
        assert!(!r.floored);
        assert_relative_eq!(r.value, (0.25f64 / (0.25 + 1e-8)).ln(), max_relative = 1e-9);
        assert!(r.value.abs() < 1e-7);
        // Perfect association: (1/2)/((1/2)(1/2)) = 2.
        let r = raw_information_reward(10, 10, 10, 20, 1e-8);
        assert_relative_eq!(r.value, 2.0f64.ln(), epsilon = 1e-7);
        // Zero co-occurrence floors at ln(eps).
        let r = raw_information_reward(0, 10, 10, 20, 1e-8);
        assert!(r.floored);
        assert_relative_eq!(r.value, 1e-8f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn complexity_penalty_reference_points() {
        assert_eq!(
            raw_complexity_penalty(3, 10, DomainMode::Genomics, 0.5, None),
            -3.0
        );
        let flat = VolatilityContext {
            sigma_current: 0.2,
            sigma_historical: 0.2,
        };
        assert_relative_eq!(flat.scale(0.5), 1.0, max_relative = 1e-6);
        let spike = VolatilityContext {
            sigma_current: 0.4,
            sigma_historical: 0.2,
        };
        assert_relative_eq!(spike.scale(0.5), 2f64.sqrt(), max_relative = 1e-6);
        let pen = raw_complexity_penalty(2, 7, DomainMode::Finance, 0.5, Some(spike));
        assert_relative_eq!(pen, -(2.0 * 8f64.ln() * 2f64.sqrt()), max_relative = 1e-6);
        assert!(pen <= 0.0);
    }

    #[test]
    fn quality_reward_reference_points() {
        let a = TokenInfo {
            id: 0,
            kind: TokenKind::Base(0),
            atom_len: 1,
            quality: 1.0,
        };
        let b = TokenInfo {
            id: 1,
            kind: TokenKind::Base(1),
            atom_len: 1,
            quality: 0.0,
        };
        assert_relative_eq!(
            raw_quality_reward(DomainMode::Finance, &a, &b, &[], 1e-8),
            0.5
        );
        let occ: [&[f64]; 1] = [&[0.9, 0.9, 0.4, 0.4]];
        let got = raw_quality_reward(DomainMode::Genomics, &a, &b, &occ, 1e-8);
        assert_relative_eq!(got, (0.9f64 * 0.4).sqrt(), epsilon = 1e-6);
        assert_relative_eq!(got, 0.6, epsilon = 1e-6);
    }

    #[test]
    fn overlap_reward_reference_points() {
        // Token exactly covering a feature.
        assert_eq!(raw_overlap_reward(&[(10, 20)], &[(10, 20)]), 1.0);
        // Disjoint from all features.
        assert_eq!(raw_overlap_reward(&[(0, 5)], &[(10, 20)]), 0.0);
        // Half overlap.
        assert_relative_eq!(
            raw_overlap_reward(&[(0, 10)], &[(5, 15)]),
            5.0 / 15.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn mutual_information_independence_and_association() {
        // Independent presence and labels.
        let mi = mutual_information(&[[10, 10, 10], [10, 10, 10]]);
        assert!(mi.abs() < 1e-12);
        // Perfectly informative presence.
        let mi = mutual_information(&[[30, 0, 0], [0, 15, 15]]);
        assert!(mi > 0.5);
    }

    #[test]
    fn mi_normalizer_tracks_p95() {
        let mut norm = MiNormalizer::new(100, 1e-8);
        for i in 0..100 {
            norm.normalize(i as f64 / 99.0);
        }
        assert_relative_eq!(norm.percentile(0.95), 0.95, epsilon = 1e-9);
        let out = norm.normalize(0.95);
        assert!(out <= 1.0 + 1e-6);
    }

    #[test]
    fn total_reward_reference_points() {
        // Uniform logits, equal components.
        let w = RewardWeights::uniform();
        let comps = [
            (RewardComponent::Quality, 1.0),
            (RewardComponent::Information, 1.0),
            (RewardComponent::Complexity, 1.0),
        ];
        assert_relative_eq!(total_reward(&comps, &w).unwrap(), 1.0, max_relative = 1e-12);

        // Log-weights reproduce an exact dot product.
        let w = RewardWeights::from_logits(&[
            (RewardComponent::Quality, 0.35f64.ln()),
            (RewardComponent::Information, 0.25f64.ln()),
            (RewardComponent::Complexity, 0.15f64.ln()),
            (RewardComponent::Domain, 0.25f64.ln()),
        ])
        .unwrap();
        let comps = [
            (RewardComponent::Quality, 1.0),
            (RewardComponent::Information, 0.0),
            (RewardComponent::Complexity, -1.0),
            (RewardComponent::Domain, 0.0),
        ];
        assert_relative_eq!(total_reward(&comps, &w).unwrap(), 0.20, max_relative = 1e-12);

        // A dominant logit selects its component.
        let w = RewardWeights::from_logits(&[
            (RewardComponent::Quality, 50.0),
            (RewardComponent::Information, 0.0),
        ])
        .unwrap();
        let comps = [
            (RewardComponent::Quality, 0.7),
            (RewardComponent::Information, -5.0),
        ];
        assert_relative_eq!(total_reward(&comps, &w).unwrap(), 0.7, epsilon = 1e-9);
    }

    #[test]
    fn absent_components_renormalize() {
        let w = RewardWeights::uniform();
        // Domain absent: remaining three get weight 1/3 each.
        let comps = [
            (RewardComponent::Quality, 0.9),
            (RewardComponent::Information, 0.3),
            (RewardComponent::Complexity, -0.3),
        ];
        assert_relative_eq!(
            total_reward(&comps, &w).unwrap(),
            (0.9 + 0.3 - 0.3) / 3.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn mismatched_components_error() {
        let w = RewardWeights::from_logits(&[(RewardComponent::Quality, 0.0)]).unwrap();
        let comps = [(RewardComponent::Information, 1.0)];
        assert!(total_reward(&comps, &w).is_err());
        let dup = [
            (RewardComponent::Quality, 1.0),
            (RewardComponent::Quality, 2.0),
        ];
        assert!(total_reward(&dup, &w).is_err());
    }
}
