//! Per-element and per-token quality scores.
//!
//! Genomics reads carry Phred scores that are converted to base-call
//! confidences and decayed toward the read ends; tokens aggregate by
//! geometric mean so a single unreliable base drags the whole token down.
//! Finance windows combine four microstructure dimensions (liquidity,
//! signal, stability, information) with learnable weights and aggregate
//! arithmetically. Every output is clamped to `[0, 1]`.

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Highest Phred score accepted on input.
pub const MAX_PHRED: u32 = 93;

/// Parameters for position-adjusted genomic quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenomicQualityParams {
    /// Position-decay rate toward read ends.
    pub beta_pos: f64,
    /// Stabilizer in the decay denominator.
    pub epsilon_len: f64,
    /// Stabilizer inside the geometric-mean logarithm.
    pub epsilon_q: f64,
}

impl Default for GenomicQualityParams {
    fn default() -> Self {
        // beta_pos defaults to the converged genomics value.
        Self {
            beta_pos: 0.014,
            epsilon_len: 1e-6,
            epsilon_q: 1e-8,
        }
    }
}

/// Parameters for the composite finance quality score.
#[derive(Debug, Clone, PartialEq)]
pub struct FinanceQualityParams {
    /// Component weights `[liquidity, signal, stability, information]`;
    /// must be non-negative and sum to 1.
    pub weights: [f64; 4],
    /// Volatility sensitivity in the stability component.
    pub beta_vol: f64,
    /// EWMA decay for expected volatility.
    pub gamma_vol: f64,
    /// Spread tolerance relative to mid-price in the signal component.
    pub alpha_spread: f64,
    /// Rolling lookback (in atomic groups) for volume statistics.
    pub vol_lookback: usize,
}

impl Default for FinanceQualityParams {
    fn default() -> Self {
        // Only the liquidity weight has a converged reference value (0.45);
        // the remaining mass is split over the other components.
        Self {
            weights: [0.45, 0.25, 0.15, 0.15],
            beta_vol: 0.50,
            gamma_vol: 0.94,
            alpha_spread: 0.01,
            vol_lookback: 252,
        }
    }
}

impl FinanceQualityParams {
    /// Checks the weight simplex constraint.
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::BadWeights("negative or non-finite component weight"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::BadWeights("component weights must sum to 1"));
        }
        if self.gamma_vol <= 0.0 || self.gamma_vol >= 1.0 {
            return Err(Error::BadWeights("gamma_vol must lie in (0, 1)"));
        }
        if self.alpha_spread <= 0.0 {
            return Err(Error::NonPositiveParam("alpha_spread"));
        }
        if self.vol_lookback == 0 {
            return Err(Error::NonPositiveParam("vol_lookback"));
        }
        Ok(())
    }
}

/// Observables for one atomic group of LOB events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LobWindow {
    /// Activity proxy for the group (order-flow magnitude).
    pub volume: f64,
    /// Absolute bid-ask spread level at the end of the group, in ticks.
    pub spread: f64,
    /// Mid-price level at the end of the group, in ticks.
    pub mid: f64,
    /// Realized volatility of mid-price changes within the group.
    pub realized_vol: f64,
}

/// Rolling statistics the finance quality score is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinanceContext {
    /// Median group volume over the lookback window.
    pub median_volume: f64,
    /// Rolling standard deviation of log-volume (clipped to `[0.1, 10]`
    /// inside the score).
    pub sigma_log_volume: f64,
    /// EWMA of realized volatility.
    pub expected_vol: f64,
    /// Information-quality estimate in `[0, 1]`; constant 0.5 at encode time.
    pub q_info: f64,
}

/// Converts a Phred score to a base-call confidence `1 - 10^(-phred/10)`.
pub fn phred_to_quality(phred: u32) -> Result<f64> {
    if phred > MAX_PHRED {
        return Err(Error::PhredOutOfRange(phred));
    }
    Ok(1.0 - 10f64.powf(-(phred as f64) / 10.0))
}

/// Applies the centered position decay
/// `q' = q * exp(-beta_pos * |i - (L-1)/2| / ((L-1)/2 + eps_len))`.
///
/// The decay factor is 1 at the read center and largest at the ends, so
/// `q' <= q` always holds.
pub fn position_adjust(q: f64, index: usize, len: usize, params: &GenomicQualityParams) -> f64 {
    assert!(len >= 1 && index < len, "index {index} out of read of length {len}");
    let half = (len as f64 - 1.0) / 2.0;
    let dist = (index as f64 - half).abs();
    q * (-params.beta_pos * dist / (half + params.epsilon_len)).exp()
}

/// Geometric-mean aggregation `exp(mean(log(q + eps_q)))`, clamped to `[0, 1]`.
pub fn geometric_token_quality(qualities: &[f64], epsilon_q: f64) -> Result<f64> {
    if qualities.is_empty() {
        return Err(Error::EmptyQualityList);
    }
    let mut acc = 0.0;
    for &q in qualities {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::QualityOutOfRange(q));
        }
        acc += (q + epsilon_q).ln();
    }
    Ok((acc / qualities.len() as f64).exp().clamp(0.0, 1.0))
}

/// Arithmetic-mean aggregation.
pub fn arithmetic_token_quality(qualities: &[f64]) -> Result<f64> {
    if qualities.is_empty() {
        return Err(Error::EmptyQualityList);
    }
    let mut acc = 0.0;
    for &q in qualities {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::QualityOutOfRange(q));
        }
        acc += q;
    }
    Ok((acc / qualities.len() as f64).clamp(0.0, 1.0))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The four finance component scores `[q_liq, q_sig, q_stb, q_info]`.
pub fn finance_components(
    window: &LobWindow,
    ctx: &FinanceContext,
    params: &FinanceQualityParams,
) -> Result<[f64; 4]> {
    params.validate()?;
    if !ctx.median_volume.is_finite() || ctx.median_volume <= 0.0 {
        return Err(Error::MissingContext("median_volume"));
    }
    if !ctx.sigma_log_volume.is_finite() {
        return Err(Error::MissingContext("sigma_log_volume"));
    }
    if !ctx.expected_vol.is_finite() || ctx.expected_vol <= 0.0 {
        return Err(Error::MissingContext("expected_vol"));
    }
    if !(0.0..=1.0).contains(&ctx.q_info) {
        return Err(Error::MissingContext("q_info"));
    }
    if window.mid <= 0.0 {
        return Err(Error::NonPositiveMid(window.mid));
    }

    let sigma = ctx.sigma_log_volume.clamp(0.1, 10.0);
    let q_liq = if window.volume > 0.0 {
        sigmoid((window.volume / ctx.median_volume).ln() / sigma)
    } else {
        0.0
    };
    let q_sig = (1.0 - window.spread.abs() / (window.mid * params.alpha_spread)).max(0.0);
    let q_stb = (-params.beta_vol * volatility_ratio(window, ctx)).exp();
    Ok([q_liq, q_sig, q_stb, ctx.q_info])
}

/// Realized-over-expected volatility ratio used by the stability component.
pub fn volatility_ratio(window: &LobWindow, ctx: &FinanceContext) -> f64 {
    window.realized_vol.max(0.0) / ctx.expected_vol
}

/// Composite finance quality for one atomic group:
/// `q = w_liq*q_liq + w_sig*q_sig + w_stb*q_stb + w_info*q_info`, clamped.
pub fn finance_element_quality(
    window: &LobWindow,
    ctx: &FinanceContext,
    params: &FinanceQualityParams,
) -> Result<f64> {
    let comps = finance_components(window, ctx, params)?;
    let q: f64 = params.weights.iter().zip(&comps).map(|(w, c)| w * c).sum();
    Ok(q.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn phred_endpoints_and_reference_values() {
        assert_eq!(phred_to_quality(0).unwrap(), 0.0);
        // Direct evaluation of 1 - 10^(-Q/10).
        assert_relative_eq!(phred_to_quality(10).unwrap(), 0.9, max_relative = 1e-12);
        assert_relative_eq!(phred_to_quality(30).unwrap(), 0.999, max_relative = 1e-12);
        assert_relative_eq!(
            phred_to_quality(40).unwrap(),
            1.0 - 1e-4,
            max_relative = 1e-12
        );
        assert!(phred_to_quality(94).is_err());
    }

    #[test]
    fn position_decay_center_and_end() {
        let params = GenomicQualityParams {
            beta_pos: 0.014,
            ..Default::default()
        };
        // Center of an odd-length read: zero decay.
        let mid = position_adjust(0.7, 74, 149, &params);
        assert_relative_eq!(mid, 0.7, max_relative = 1e-12);
        // Last base of a 150bp read: exp(-0.014 * 74.5/(74.5 + 1e-6)).
        let expected = (-0.014f64 * 74.5 / (74.5 + 1e-6)).exp();
        let got = position_adjust(1.0, 149, 150, &params);
        assert_relative_eq!(got, expected, max_relative = 1e-15);
        assert_relative_eq!(got, 0.98610, max_relative = 1e-4);
    }

    #[test]
    fn zero_decay_rate_is_identity() {
        let params = GenomicQualityParams {
            beta_pos: 0.0,
            ..Default::default()
        };
        for i in 0..20 {
            assert_relative_eq!(position_adjust(0.42, i, 20, &params), 0.42);
        }
    }

    #[test]
    fn single_element_read_has_no_decay() {
        let params = GenomicQualityParams::default();
        assert_relative_eq!(position_adjust(0.9, 0, 1, &params), 0.9);
    }

    #[test]
    fn geometric_mean_reference_values() {
        let eps = 1e-8;
        // Equal values are a fixed point.
        assert_relative_eq!(
            geometric_token_quality(&[0.99, 0.99, 0.99], eps).unwrap(),
            0.99,
            epsilon = 1e-7
        );
        // sqrt(1 * 0.25), up to the epsilon shift inside the logs.
        let expected = (0.5 * ((1.0f64 + eps).ln() + (0.25f64 + eps).ln())).exp();
        let got = geometric_token_quality(&[1.0, 0.25], eps).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-15);
        assert_relative_eq!(got, 0.5, epsilon = 1e-7);
        // A zero element collapses the aggregate to ~sqrt(eps).
        assert_relative_eq!(
            geometric_token_quality(&[0.0, 1.0], eps).unwrap(),
            1e-4,
            max_relative = 1e-6
        );
        assert!(geometric_token_quality(&[], eps).is_err());
    }

    #[test]
    fn arithmetic_mean_reference_values() {
        assert_relative_eq!(arithmetic_token_quality(&[0.4, 0.6]).unwrap(), 0.5);
        assert_relative_eq!(arithmetic_token_quality(&[1.0]).unwrap(), 1.0);
        assert_relative_eq!(
            arithmetic_token_quality(&[0.2, 0.3, 0.7]).unwrap(),
            0.4,
            max_relative = 1e-12
        );
        assert!(arithmetic_token_quality(&[]).is_err());
    }

    fn test_window() -> LobWindow {
        LobWindow {
            volume: 1.0,
            spread: 0.0,
            mid: 100.0,
            realized_vol: 0.5,
        }
    }

    fn test_ctx() -> FinanceContext {
        FinanceContext {
            median_volume: 1.0,
            sigma_log_volume: 1.0,
            expected_vol: 0.5,
            q_info: 0.5,
        }
    }

    #[test]
    fn finance_components_hit_reference_points() {
        let params = FinanceQualityParams::default();
        // volume == median -> q_liq = sigmoid(0) = 0.5; spread 0 -> q_sig = 1;
        // realized == expected with beta_vol = 0.5 -> q_stb = exp(-0.5).
        let comps = finance_components(&test_window(), &test_ctx(), &params).unwrap();
        assert_relative_eq!(comps[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(comps[1], 1.0, max_relative = 1e-12);
        assert_relative_eq!(comps[2], (-0.5f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(comps[2], 0.6065, epsilon = 1e-4);
        assert_relative_eq!(comps[3], 0.5, max_relative = 1e-12);

        let q = finance_element_quality(&test_window(), &test_ctx(), &params).unwrap();
        let expected = 0.45 * 0.5 + 0.25 * 1.0 + 0.15 * (-0.5f64).exp() + 0.15 * 0.5;
        assert_relative_eq!(q, expected, max_relative = 1e-12);
    }

    #[test]
    fn finance_rejects_bad_inputs() {
        let params = FinanceQualityParams::default();
        let mut w = test_window();
        w.mid = 0.0;
        assert!(matches!(
            finance_element_quality(&w, &test_ctx(), &params),
            Err(Error::NonPositiveMid(_))
        ));
        let mut ctx = test_ctx();
        ctx.expected_vol = 0.0;
        assert!(finance_element_quality(&test_window(), &ctx, &params).is_err());
        let bad = FinanceQualityParams {
            weights: [0.5, 0.5, 0.5, 0.5],
            ..Default::default()
        };
        assert!(finance_element_quality(&test_window(), &test_ctx(), &bad).is_err());
    }

    #[test]
    fn outputs_stay_in_unit_interval() {
        let eps = 1e-8;
        let qs = [0.0, 1.0, 0.3, 0.9999];
        assert!((0.0..=1.0).contains(&geometric_token_quality(&qs, eps).unwrap()));
        assert!((0.0..=1.0).contains(&arithmetic_token_quality(&qs).unwrap()));
    }

    #[test]
    fn noise_monotonicity_for_both_aggregators() {
        let eps = 1e-8;
        let base = [0.9, 0.8, 0.7];
        let noisy = [0.9, 0.5, 0.7];
        assert!(
            geometric_token_quality(&noisy, eps).unwrap()
                <= geometric_token_quality(&base, eps).unwrap()
        );
        assert!(
            arithmetic_token_quality(&noisy).unwrap() <= arithmetic_token_quality(&base).unwrap()
        );
    }

    #[test]
    fn geometric_never_exceeds_arithmetic() {
        let eps = 1e-12;
        let cases: [&[f64]; 4] = [
            &[0.2, 0.9],
            &[0.5, 0.5, 0.5],
            &[0.1, 0.2, 0.99],
            &[1.0, 0.0],
        ];
        for qs in cases {
            let g = geometric_token_quality(qs, eps).unwrap();
            let a = arithmetic_token_quality(qs).unwrap();
            assert!(g <= a + 1e-12, "geometric {g} > arithmetic {a}");
        }
    }
}
