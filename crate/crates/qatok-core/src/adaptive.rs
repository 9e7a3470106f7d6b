//! Gradient-based learning of the process parameters (quality sensitivity,
//! domain decay factors, quality and reward weights) through Gumbel-Softmax
//! relaxed merge selection.
//!
//! Each optimization step simulates a few greedy merge rounds per sequence.
//! At every round the top-K candidates get composite logits
//! `l(a,b) = w(a,b; alpha) + sum_j lambda_j R_raw_j(a,b)` built on the tape,
//! a Gumbel-Softmax sample `y` selects softly among them, and the per-step
//! batch representation is the y-weighted combination of candidate features
//! (quality, merged length, PMI). A plug-in task loss closes the graph and
//! plain SGD with an inverse-sqrt step size and non-negativity projection
//! updates the parameters.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::corpus::AtomicSequence;
use crate::error::{Error, Result};
use crate::merge::{build_priority_queue, BuildState, MergeScoreParams};
use crate::tape::{grad_of, Tape, Var};
use crate::{DomainMode, SymbolId};

/// Learnable process parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveParams {
    /// Quality sensitivity exponent, projected to `>= 0`.
    pub alpha: f64,
    /// Genomics positional decay, projected to `>= 0`.
    pub beta_pos: f64,
    /// Finance volatility scaling, projected to `>= 0`.
    pub beta_vol: f64,
    /// Logits of the finance quality-component weights `[liq, sig, stb, info]`.
    pub quality_weight_logits: [f64; 4],
    /// Logits of the reward-component weights `[quality, information, complexity]`.
    pub reward_weight_logits: Vec<f64>,
    /// L2 regularization strength.
    pub lambda_reg: f64,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            alpha: 0.72,
            beta_pos: 0.014,
            beta_vol: 0.50,
            quality_weight_logits: [0.0; 4],
            reward_weight_logits: vec![0.0; 3],
            lambda_reg: 1e-4,
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

impl AdaptiveParams {
    /// Softmax of the quality-component logits.
    pub fn quality_weights(&self) -> [f64; 4] {
        let w = softmax(&self.quality_weight_logits);
        [w[0], w[1], w[2], w[3]]
    }

    /// Softmax of the reward-component logits.
    pub fn reward_weights(&self) -> Vec<f64> {
        softmax(&self.reward_weight_logits)
    }

    /// Clamp the constrained coordinates to their feasible set.
    pub fn project(&mut self) {
        self.alpha = self.alpha.max(0.0);
        self.beta_pos = self.beta_pos.max(0.0);
        self.beta_vol = self.beta_vol.max(0.0);
    }
}

/// Exponential temperature annealing with a floor:
/// `tau(t) = max(tau_floor, tau_init * exp(-beta_anneal * t / total_steps))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub tau_init: f64,
    pub beta_anneal: f64,
    pub total_steps: usize,
    pub tau_floor: f64,
}

impl AnnealSchedule {
    pub fn new(total_steps: usize) -> Self {
        Self {
            tau_init: 1.0,
            beta_anneal: 3.0,
            total_steps,
            tau_floor: 0.1,
        }
    }

    pub fn tau(&self, step: usize) -> f64 {
        let t = self.tau_init
            * (-self.beta_anneal * step as f64 / self.total_steps.max(1) as f64).exp();
        t.max(self.tau_floor)
    }
}

/// Composite logit `l = w_ab + sum_j lambda_j r_j` (raw rewards, value-level).
pub fn composite_logit(w_ab: f64, rewards: &[f64], lambdas: &[f64]) -> f64 {
    assert_eq!(rewards.len(), lambdas.len(), "reward/weight arity mismatch");
    w_ab + rewards.iter().zip(lambdas).map(|(r, l)| r * l).sum::<f64>()
}

/// Standard Gumbel(0, 1) noise `-ln(-ln(u))`.
pub fn gumbel_noise<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            -(-(u.ln())).ln()
        })
        .collect()
}

/// Numeric Gumbel-Softmax sample `y_i = softmax((l_i + g_i)/tau)`, computed
/// with max subtraction. `noise` doubles as the deterministic test hook.
pub fn gumbel_softmax_sample(logits: &[f64], tau: f64, noise: &[f64]) -> Vec<f64> {
    assert_eq!(logits.len(), noise.len());
    assert!(tau > 0.0);
    let shifted: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(l, g)| (l + g) / tau)
        .collect();
    let m = shifted.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = shifted.iter().map(|s| (s - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Analytic Jacobian `dy_i/dl_j = y_i (delta_ij - y_j) / tau`.
pub fn gumbel_jacobian(y: &[f64], tau: f64) -> Vec<Vec<f64>> {
    assert!(tau > 0.0);
    let k = y.len();
    let mut jac = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let delta = if i == j { 1.0 } else { 0.0 };
            jac[i][j] = y[i] * (delta - y[j]) / tau;
        }
    }
    jac
}

// ---------------------------------------------------------------------------
// Differentiable corpus representation
// ---------------------------------------------------------------------------

/// Per-element quality ingredients, kept raw so the learnable parameters can
/// act on them inside the tape.
#[derive(Debug, Clone, PartialEq)]
pub enum AtomFeatures {
    /// Genomics: `(raw base quality, positional decay coefficient)` per
    /// element; effective quality is `q * exp(-beta_pos * coeff)`.
    Genomic(Vec<(f64, f64)>),
    /// Finance: `[q_liq, q_sig, vol_ratio, q_info]` per element; the
    /// stability slot holds the realized/expected ratio so that
    /// `q_stb = exp(-beta_vol * vol_ratio)`.
    Finance(Vec<[f64; 4]>),
    /// Fixed per-element qualities with no learnable dependence.
    Plain(Vec<f64>),
}

impl AtomFeatures {
    fn len(&self) -> usize {
        match self {
            AtomFeatures::Genomic(v) => v.len(),
            AtomFeatures::Finance(v) => v.len(),
            AtomFeatures::Plain(v) => v.len(),
        }
    }
}

/// One sequence prepared for differentiable simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSequence {
    pub elements: Vec<SymbolId>,
    pub atoms: AtomFeatures,
}

impl SoftSequence {
    pub fn new(elements: Vec<SymbolId>, atoms: AtomFeatures) -> Result<Self> {
        if elements.len() != atoms.len() {
            return Err(Error::LengthMismatch {
                elements: elements.len(),
                qualities: atoms.len(),
            });
        }
        Ok(Self { elements, atoms })
    }

    /// Genomics sequence with decay coefficients derived from read positions.
    pub fn genomic(elements: Vec<SymbolId>, raw_qualities: Vec<f64>, epsilon_len: f64) -> Result<Self> {
        if elements.len() != raw_qualities.len() {
            return Err(Error::LengthMismatch {
                elements: elements.len(),
                qualities: raw_qualities.len(),
            });
        }
        let len = elements.len();
        let half = (len as f64 - 1.0) / 2.0;
        let atoms = raw_qualities
            .into_iter()
            .enumerate()
            .map(|(i, q)| (q, (i as f64 - half).abs() / (half + epsilon_len)))
            .collect();
        Ok(Self {
            elements,
            atoms: AtomFeatures::Genomic(atoms),
        })
    }

    /// Sequence whose qualities are treated as fixed constants.
    pub fn plain(seq: &AtomicSequence) -> Self {
        Self {
            elements: seq.elements.clone(),
            atoms: AtomFeatures::Plain(seq.qualities.clone()),
        }
    }

    /// Numeric per-element qualities under the current parameter values.
    pub fn numeric_qualities(&self, params: &AdaptiveParams) -> Vec<f64> {
        match &self.atoms {
            AtomFeatures::Plain(qs) => qs.clone(),
            AtomFeatures::Genomic(v) => v
                .iter()
                .map(|(q, c)| (q * (-params.beta_pos * c).exp()).clamp(0.0, 1.0))
                .collect(),
            AtomFeatures::Finance(v) => {
                let w = params.quality_weights();
                v.iter()
                    .map(|[liq, sig, ratio, info]| {
                        let stb = (-params.beta_vol * ratio).exp();
                        (w[0] * liq + w[1] * sig + w[2] * stb + w[3] * info).clamp(0.0, 1.0)
                    })
                    .collect()
            }
        }
    }
}

/// Tape handles of the learnable parameters.
pub struct ParamVars {
    pub alpha: Var,
    pub beta_pos: Var,
    pub beta_vol: Var,
    pub quality_logits: Vec<Var>,
    pub reward_logits: Vec<Var>,
}

impl ParamVars {
    pub fn leaves(tape: &mut Tape, params: &AdaptiveParams) -> Self {
        Self {
            alpha: tape.leaf(params.alpha),
            beta_pos: tape.leaf(params.beta_pos),
            beta_vol: tape.leaf(params.beta_vol),
            quality_logits: params
                .quality_weight_logits
                .iter()
                .map(|&l| tape.leaf(l))
                .collect(),
            reward_logits: params
                .reward_weight_logits
                .iter()
                .map(|&l| tape.leaf(l))
                .collect(),
        }
    }
}

/// Mean atom quality of a set of occurrence spans as a tape expression.
fn quality_expr(
    tape: &mut Tape,
    pvars: &ParamVars,
    atoms: &AtomFeatures,
    spans: &[(u32, u32)],
    mode: DomainMode,
    epsilon_q: f64,
) -> Var {
    debug_assert!(!spans.is_empty());
    match atoms {
        AtomFeatures::Plain(qs) => {
            // No learnable dependence; aggregate numerically.
            let mut acc = 0.0;
            for &(s, e) in spans {
                let slice = &qs[s as usize..e as usize];
                acc += crate::merge::occurrence_quality(mode, slice, epsilon_q).unwrap_or(0.0);
            }
            tape.constant(acc / spans.len() as f64)
        }
        AtomFeatures::Genomic(v) => {
            let mut occ_vars = Vec::with_capacity(spans.len());
            for &(s, e) in spans {
                let atoms = &v[s as usize..e as usize];
                let mut logs = Vec::with_capacity(atoms.len());
                for &(q_raw, coeff) in atoms {
                    // ln(q_raw * exp(-beta_pos * coeff) + eps)
                    let decay_arg = tape.scale(pvars.beta_pos, -coeff);
                    let decay = tape.exp(decay_arg);
                    let adjusted = tape.scale(decay, q_raw);
                    let shifted = tape.add_const(adjusted, epsilon_q);
                    logs.push(tape.ln(shifted));
                }
                let total = tape.sum(&logs);
                let mean = tape.scale(total, 1.0 / atoms.len() as f64);
                occ_vars.push(tape.exp(mean));
            }
            let total = tape.sum(&occ_vars);
            tape.scale(total, 1.0 / occ_vars.len() as f64)
        }
        AtomFeatures::Finance(v) => {
            // Pooled arithmetic mean: constant component means except the
            // stability channel, which carries the beta_vol dependence.
            let mut n = 0usize;
            let mut liq = 0.0;
            let mut sig = 0.0;
            let mut info = 0.0;
            let mut stb_terms = Vec::new();
            for &(s, e) in spans {
                for [l, g, ratio, i] in &v[s as usize..e as usize] {
                    liq += l;
                    sig += g;
                    info += i;
                    let arg = tape.scale(pvars.beta_vol, -ratio);
                    stb_terms.push(tape.exp(arg));
                    n += 1;
                }
            }
            let inv = 1.0 / n as f64;
            let stb_sum = tape.sum(&stb_terms);
            let stb_mean = tape.scale(stb_sum, inv);
            let w = tape.softmax(&pvars.quality_logits);
            let t_liq = tape.scale(w[0], liq * inv);
            let t_sig = tape.scale(w[1], sig * inv);
            let t_stb = tape.mul(w[2], stb_mean);
            let t_info = tape.scale(w[3], info * inv);
            tape.sum(&[t_liq, t_sig, t_stb, t_info])
        }
    }
}

/// How raw reward components enter the composite logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogitRewardNorm {
    /// Raw values, directly differentiable.
    #[default]
    Identity,
    /// Standardized across the step's candidate set.
    Batch,
}

/// Configuration of the differentiable simulation.
#[derive(Debug, Clone)]
pub struct SoftTokenizeConfig {
    pub base_size: u32,
    pub mode: DomainMode,
    /// Top-K candidates offered to the Gumbel-Softmax at each step.
    pub k_candidates: usize,
    /// Merge rounds simulated per sequence.
    pub steps_per_sequence: usize,
    pub epsilon_f: f64,
    pub epsilon_q: f64,
    pub epsilon_p: f64,
    /// Deterministic zero-noise hook for tests.
    pub zero_noise: bool,
    pub reward_norm: LogitRewardNorm,
}

impl SoftTokenizeConfig {
    pub fn new(base_size: u32, mode: DomainMode) -> Self {
        Self {
            base_size,
            mode,
            k_candidates: 8,
            steps_per_sequence: 3,
            epsilon_f: 1e-8,
            epsilon_q: 1e-8,
            epsilon_p: 1e-8,
            zero_noise: false,
            reward_norm: LogitRewardNorm::Identity,
        }
    }
}

/// Standardizes a candidate set of tape values: `(x - mean) / sqrt(var + eps)`.
fn batch_norm_vars(tape: &mut Tape, vars: &[Var]) -> Vec<Var> {
    if vars.len() < 2 {
        return vars.to_vec();
    }
    let inv_n = 1.0 / vars.len() as f64;
    let total = tape.sum(vars);
    let mean = tape.scale(total, inv_n);
    let centered: Vec<Var> = vars.iter().map(|v| tape.sub(*v, mean)).collect();
    let squares: Vec<Var> = centered.iter().map(|c| tape.mul(*c, *c)).collect();
    let sq_total = tape.sum(&squares);
    let var_mean = tape.scale(sq_total, inv_n);
    let var_eps = tape.add_const(var_mean, 1e-8);
    let std = tape.powf_const(var_eps, 0.5);
    centered.iter().map(|c| tape.div(*c, std)).collect()
}

/// Per-sequence differentiable summary: y-weighted `[quality, length, pmi]`
/// candidate features averaged over simulated steps.
pub type SummaryVars = [Var; 3];

/// Left-to-right non-overlapping spans the pair `(a, b)` would merge into.
fn merged_spans(tokens: &[u32], spans: &[(u32, u32)], a: u32, b: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if i + 1 < tokens.len() && tokens[i] == a && tokens[i + 1] == b {
            out.push((spans[i].0, spans[i + 1].1));
            i += 2;
        } else {
            i += 1;
        }
    }
    out
}

/// Runs the relaxed simulation for one batch, returning per-sequence
/// summaries on the tape. Gradients flow to every learnable parameter through
/// the composite logits and the fused Gumbel-Softmax node.
pub fn soft_tokenize(
    tape: &mut Tape,
    batch: &[SoftSequence],
    pvars: &ParamVars,
    params: &AdaptiveParams,
    cfg: &SoftTokenizeConfig,
    tau: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<SummaryVars>> {
    let lambda_vars = tape.softmax(&pvars.reward_logits);
    let score_params = MergeScoreParams {
        alpha: params.alpha,
        epsilon_f: cfg.epsilon_f,
        epsilon_q: cfg.epsilon_q,
    };

    let mut summaries = Vec::with_capacity(batch.len());
    for soft_seq in batch {
        let numeric = AtomicSequence::new(
            soft_seq.elements.clone(),
            soft_seq.numeric_qualities(params),
            alloc::string::String::from("soft"),
            cfg.base_size,
        )?;
        let corpus = [numeric];
        let mut state = BuildState::from_corpus(&corpus, cfg.base_size, cfg.mode)?;

        let mut step_feats: Vec<[Var; 3]> = Vec::new();
        for _ in 0..cfg.steps_per_sequence {
            let queue = build_priority_queue(
                &state.stats,
                &state.vocab,
                &score_params,
                cfg.k_candidates,
                None,
            );
            if queue.is_empty() {
                break;
            }

            let total = state.stats.total_tokens();
            let mut w_vars = Vec::with_capacity(queue.len());
            let mut rq_vars = Vec::with_capacity(queue.len());
            let mut ri_vars = Vec::with_capacity(queue.len());
            let mut rc_vars = Vec::with_capacity(queue.len());
            let mut feats = Vec::with_capacity(queue.len());
            for cand in &queue {
                let spans_a = span_list(&state, cand.a);
                let spans_b = span_list(&state, cand.b);
                let q_a = quality_expr(tape, pvars, &soft_seq.atoms, &spans_a, cfg.mode, cfg.epsilon_q);
                let q_b = quality_expr(tape, pvars, &soft_seq.atoms, &spans_b, cfg.mode, cfg.epsilon_q);

                // w = pmi * (q_bar + eps)^alpha, with the exponent on the tape.
                let pmi = cand.pair_freq as f64
                    / (state.stats.freq(cand.a) as f64 * state.stats.freq(cand.b) as f64
                        + cfg.epsilon_f);
                let q_sum = tape.add(q_a, q_b);
                let q_bar = tape.scale(q_sum, 0.5);
                let q_base = tape.add_const(q_bar, cfg.epsilon_q);
                let log_q = tape.ln(q_base);
                let powed = tape.mul(pvars.alpha, log_q);
                let quality_factor = tape.exp(powed);
                let w_var = tape.scale(quality_factor, pmi);

                // Raw rewards: quality expression, constant information
                // reward, and the (possibly beta_vol-scaled) complexity term.
                let r_q = match cfg.mode {
                    DomainMode::Genomics => {
                        let spans_m = merged_spans(
                            state.seg.tokens_of(0),
                            state.seg.spans_of(0),
                            cand.a,
                            cand.b,
                        );
                        if spans_m.is_empty() {
                            let la = cand.len_a as f64;
                            let lb = cand.len_b as f64;
                            let mixed_a = tape.scale(q_a, la / (la + lb));
                            let mixed_b = tape.scale(q_b, lb / (la + lb));
                            tape.add(mixed_a, mixed_b)
                        } else {
                            quality_expr(tape, pvars, &soft_seq.atoms, &spans_m, cfg.mode, cfg.epsilon_q)
                        }
                    }
                    DomainMode::Finance => {
                        let la = cand.len_a as f64;
                        let lb = cand.len_b as f64;
                        let wa = tape.scale(q_a, la / (la + lb));
                        let wb = tape.scale(q_b, lb / (la + lb));
                        tape.add(wa, wb)
                    }
                };
                let r_i = crate::rewards::raw_information_reward(
                    cand.pair_freq,
                    state.stats.freq(cand.a),
                    state.stats.freq(cand.b),
                    total,
                    cfg.epsilon_p,
                )
                .value;
                let merged_len = (cand.len_a + cand.len_b) as f64;
                // The simulation has no volatility series, so the finance
                // penalty runs at flat volatility (scale 1); beta_vol still
                // reaches the loss through the stability quality channel.
                let r_c = match cfg.mode {
                    DomainMode::Genomics => tape.constant(-merged_len),
                    DomainMode::Finance => {
                        tape.constant(-merged_len * ((state.vocab.size() as f64) + 1.0).ln())
                    }
                };

                w_vars.push(w_var);
                rq_vars.push(r_q);
                ri_vars.push(tape.constant(r_i));
                rc_vars.push(r_c);

                // Constant per-candidate features combined by y.
                let q_bar_val = 0.5 * (tape_value(tape, q_a) + tape_value(tape, q_b));
                feats.push([q_bar_val, merged_len, pmi]);
            }

            if cfg.reward_norm == LogitRewardNorm::Batch {
                rq_vars = batch_norm_vars(tape, &rq_vars);
                ri_vars = batch_norm_vars(tape, &ri_vars);
                rc_vars = batch_norm_vars(tape, &rc_vars);
            }
            let logits: Vec<Var> = (0..queue.len())
                .map(|i| {
                    let t_q = tape.mul(lambda_vars[0], rq_vars[i]);
                    let t_i = tape.mul(lambda_vars[1], ri_vars[i]);
                    let t_c = tape.mul(lambda_vars[2], rc_vars[i]);
                    let reward_sum = tape.sum(&[t_q, t_i, t_c]);
                    tape.add(w_vars[i], reward_sum)
                })
                .collect();

            let noise = if cfg.zero_noise {
                vec![0.0; logits.len()]
            } else {
                gumbel_noise(rng, logits.len())
            };
            let y = tape.gumbel_softmax(&logits, &noise, tau);

            // y-weighted feature combination for this step.
            let mut combo = [None::<Var>; 3];
            for (yi, f) in y.iter().zip(&feats) {
                for (slot, &c) in combo.iter_mut().zip(f) {
                    let term = tape.scale(*yi, c);
                    *slot = Some(match *slot {
                        Some(acc) => tape.add(acc, term),
                        None => term,
                    });
                }
            }
            step_feats.push([
                combo[0].unwrap(),
                combo[1].unwrap(),
                combo[2].unwrap(),
            ]);

            // Hard transition: argmax of the perturbed logits, which is the
            // argmax of y.
            let pick = logits
                .iter()
                .zip(&noise)
                .map(|(l, g)| tape_value(tape, *l) + g)
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .unwrap();
            let cand = queue[pick];
            state.execute_merge(&corpus, (cand.a, cand.b), cfg.epsilon_q)?;
        }

        let summary = if step_feats.is_empty() {
            [tape.constant(0.0), tape.constant(0.0), tape.constant(0.0)]
        } else {
            let inv = 1.0 / step_feats.len() as f64;
            let mut out = [None::<Var>; 3];
            for f in &step_feats {
                for (slot, &v) in out.iter_mut().zip(f) {
                    *slot = Some(match *slot {
                        Some(acc) => tape.add(acc, v),
                        None => v,
                    });
                }
            }
            [
                tape.scale(out[0].unwrap(), inv),
                tape.scale(out[1].unwrap(), inv),
                tape.scale(out[2].unwrap(), inv),
            ]
        };
        summaries.push(summary);
    }
    Ok(summaries)
}

fn tape_value(tape: &Tape, v: Var) -> f64 {
    tape.value(v)
}

fn span_list(state: &BuildState, token: u32) -> Vec<(u32, u32)> {
    state
        .seg
        .occurrence_spans(token)
        .into_iter()
        .map(|(_, s, e)| (s, e))
        .collect()
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Downstream task plugged into the relaxed simulation.
pub trait TaskLoss {
    /// Builds the scalar task loss over per-sequence summaries.
    fn loss(&self, tape: &mut Tape, summaries: &[SummaryVars], labels: &[f64]) -> Var;
}

/// Built-in desk-scale task: a fixed logistic readout of the quality feature
/// against binary labels, with the stable softplus form of the cross entropy.
#[derive(Debug, Clone, Copy)]
pub struct QualityCorrelatedTask {
    pub steepness: f64,
    pub threshold: f64,
}

impl Default for QualityCorrelatedTask {
    fn default() -> Self {
        Self {
            steepness: 8.0,
            threshold: 0.5,
        }
    }
}

impl TaskLoss for QualityCorrelatedTask {
    fn loss(&self, tape: &mut Tape, summaries: &[SummaryVars], labels: &[f64]) -> Var {
        assert_eq!(summaries.len(), labels.len());
        let mut terms = Vec::with_capacity(summaries.len());
        for (s, &y) in summaries.iter().zip(labels) {
            let shifted = tape.add_const(s[0], -self.threshold);
            let x = tape.scale(shifted, self.steepness);
            // ln(1 + e^x) - y*x
            let e = tape.exp(x);
            let one_plus = tape.add_const(e, 1.0);
            let softplus = tape.ln(one_plus);
            let yx = tape.scale(x, y);
            terms.push(tape.sub(softplus, yx));
        }
        let total = tape.sum(&terms);
        tape.scale(total, 1.0 / terms.len() as f64)
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iter: usize,
    pub tau: f64,
    pub task_loss: f64,
    pub total_loss: f64,
    pub alpha: f64,
}

/// Result of [`train_adaptive`].
#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub params: AdaptiveParams,
    pub trace: Vec<TraceRow>,
}

/// Abort payload carrying the last finite checkpoint.
#[derive(Debug, Clone)]
pub struct TrainAbort {
    pub error: Error,
    pub last_finite: AdaptiveParams,
    pub trace: Vec<TraceRow>,
}

/// Gradient descent on `L_task + lambda_reg * ||theta||^2` with step size
/// `eta_0 / sqrt(t)`, temperature annealing and projection after every step.
// The abort payload deliberately carries the last finite checkpoint.
#[allow(clippy::too_many_arguments, clippy::result_large_err)]
pub fn train_adaptive(
    task: &dyn TaskLoss,
    batch: &[SoftSequence],
    labels: &[f64],
    params_0: &AdaptiveParams,
    cfg: &SoftTokenizeConfig,
    schedule: &AnnealSchedule,
    iterations: usize,
    eta_0: f64,
    seed: u64,
) -> core::result::Result<AdaptiveOutcome, TrainAbort> {
    let mut params = params_0.clone();
    let mut trace = Vec::with_capacity(iterations);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    for iter in 0..iterations {
        let tau = schedule.tau(iter);
        let mut tape = Tape::new();
        let pvars = ParamVars::leaves(&mut tape, &params);
        let summaries = match soft_tokenize(&mut tape, batch, &pvars, &params, cfg, tau, &mut rng) {
            Ok(s) => s,
            Err(error) => {
                return Err(TrainAbort {
                    error,
                    last_finite: params,
                    trace,
                })
            }
        };
        let task_var = task.loss(&mut tape, &summaries, labels);
        let task_loss = tape.value(task_var);

        // L2 regularizer on the tape.
        let mut reg_terms = Vec::new();
        for v in [pvars.alpha, pvars.beta_pos, pvars.beta_vol]
            .iter()
            .chain(pvars.quality_logits.iter())
            .chain(pvars.reward_logits.iter())
        {
            reg_terms.push(tape.mul(*v, *v));
        }
        let reg_sum = tape.sum(&reg_terms);
        let reg = tape.scale(reg_sum, params.lambda_reg);
        let total_var = tape.add(task_var, reg);
        let total_loss = tape.value(total_var);

        if !total_loss.is_finite() {
            return Err(TrainAbort {
                error: Error::NonFiniteLoss {
                    step: iter,
                    what: "adaptive loss",
                },
                last_finite: params,
                trace,
            });
        }

        let adj = tape.backward(total_var);
        let eta = eta_0 / ((iter + 1) as f64).sqrt();
        params.alpha -= eta * grad_of(&adj, pvars.alpha);
        params.beta_pos -= eta * grad_of(&adj, pvars.beta_pos);
        params.beta_vol -= eta * grad_of(&adj, pvars.beta_vol);
        for (p, v) in params
            .quality_weight_logits
            .iter_mut()
            .zip(&pvars.quality_logits)
        {
            *p -= eta * grad_of(&adj, *v);
        }
        for (p, v) in params
            .reward_weight_logits
            .iter_mut()
            .zip(&pvars.reward_logits)
        {
            *p -= eta * grad_of(&adj, *v);
        }
        params.project();

        trace.push(TraceRow {
            iter,
            tau,
            task_loss,
            total_loss,
            alpha: params.alpha,
        });
    }

    Ok(AdaptiveOutcome { params, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn schedule_endpoints_and_floor() {
        let s = AnnealSchedule::new(100);
        assert_relative_eq!(s.tau(0), 1.0);
        // tau(T) = max(0.1, e^-3) = 0.1.
        assert_relative_eq!(s.tau(100), 0.1);
        let mut prev = f64::INFINITY;
        for t in 0..=100 {
            let cur = s.tau(t);
            assert!(cur <= prev + 1e-15);
            prev = cur;
        }
    }

    #[test]
    fn composite_logit_reference_points() {
        // Equal weights cancel opposite rewards.
        assert_relative_eq!(composite_logit(0.5, &[1.0, -1.0], &[0.5, 0.5]), 0.5);
        // Zero rewards pass the merge score through.
        assert_relative_eq!(composite_logit(0.37, &[0.0, 0.0, 0.0], &[0.2, 0.3, 0.5]), 0.37);
    }

    #[test]
    fn gumbel_sample_reference_points() {
        // Symmetric logits with the zero-noise hook.
        let y = gumbel_softmax_sample(&[1.0, 1.0, 1.0], 1.0, &[0.0; 3]);
        for v in &y {
            assert_relative_eq!(*v, 1.0 / 3.0, max_relative = 1e-12);
        }
        // softmax([2, 0]).
        let y = gumbel_softmax_sample(&[2.0, 0.0], 1.0, &[0.0; 2]);
        assert_relative_eq!(y[0], 0.8808, epsilon = 1e-4);
        assert_relative_eq!(y[1], 0.1192, epsilon = 1e-4);
        // Low temperature approaches one-hot at the argmax.
        let y = gumbel_softmax_sample(&[2.0, 0.0], 1e-3, &[0.0; 2]);
        assert!(y[0] > 0.999999);
        assert_relative_eq!(y.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn jacobian_reference_points() {
        // Uniform y over k: diagonal (1/tau)(1/k)(1 - 1/k).
        let k = 4;
        let y = vec![0.25; k];
        let tau = 0.5;
        let jac = gumbel_jacobian(&y, tau);
        for (i, row) in jac.iter().enumerate() {
            assert_relative_eq!(row[i], (1.0 / tau) * 0.25 * 0.75, max_relative = 1e-12);
            let row_sum: f64 = row.iter().sum();
            assert!(row_sum.abs() < 1e-15);
        }
        // One-hot y is a zero matrix.
        let jac = gumbel_jacobian(&[1.0, 0.0, 0.0], 1.0);
        for row in &jac {
            for v in row {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let logits = [0.3, -0.4, 1.1, 0.0, -2.0];
        let tau = 0.65;
        let noise = [0.0; 5];
        let y = gumbel_softmax_sample(&logits, tau, &noise);
        let jac = gumbel_jacobian(&y, tau);
        let h = 1e-6;
        for j in 0..logits.len() {
            let mut plus = logits;
            plus[j] += h;
            let mut minus = logits;
            minus[j] -= h;
            let yp = gumbel_softmax_sample(&plus, tau, &noise);
            let ym = gumbel_softmax_sample(&minus, tau, &noise);
            for i in 0..logits.len() {
                let fd = (yp[i] - ym[i]) / (2.0 * h);
                let denom = fd.abs().max(jac[i][j].abs()).max(1e-12);
                assert!(
                    ((fd - jac[i][j]) / denom).abs() < 1e-5,
                    "({i},{j}): fd {fd} vs analytic {}",
                    jac[i][j]
                );
            }
        }
    }

    #[test]
    fn merge_score_alpha_gradient_is_w_times_log_qbar() {
        // d/d alpha of pmi * (q + eps)^alpha = w * ln(q + eps).
        let mut tape = Tape::new();
        let alpha = tape.leaf(0.7);
        let q_bar = 0.62;
        let eps = 1e-8;
        let pmi = 0.0123;
        let log_q = (q_bar + eps).ln();
        let arg = tape.scale(alpha, log_q);
        let factor = tape.exp(arg);
        let w = tape.scale(factor, pmi);
        let adj = tape.backward(w);
        let expected = tape.value(w) * log_q;
        assert_relative_eq!(grad_of(&adj, alpha), expected, max_relative = 1e-12);
        // And against finite differences.
        let f = |a: f64| pmi * (q_bar + eps).powf(a);
        let h = 1e-7;
        let fd = (f(0.7 + h) - f(0.7 - h)) / (2.0 * h);
        assert_relative_eq!(grad_of(&adj, alpha), fd, max_relative = 1e-6);
    }

    fn toy_batch() -> (Vec<SoftSequence>, Vec<f64>) {
        // Two sequences over {0,1}: one high quality, one low.
        let hi = SoftSequence::new(
            vec![0, 1, 0, 1, 0, 1],
            AtomFeatures::Genomic(vec![(0.95, 0.0); 6]),
        )
        .unwrap();
        let lo = SoftSequence::new(
            vec![0, 1, 0, 1, 0, 1],
            AtomFeatures::Genomic(vec![(0.30, 0.0); 6]),
        )
        .unwrap();
        (vec![hi, lo], vec![1.0, 0.0])
    }

    #[test]
    fn soft_tokenize_is_deterministic_per_seed() {
        let (batch, _) = toy_batch();
        let params = AdaptiveParams::default();
        let cfg = SoftTokenizeConfig::new(2, DomainMode::Genomics);
        let run = |seed: u64| {
            let mut tape = Tape::new();
            let pvars = ParamVars::leaves(&mut tape, &params);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let s = soft_tokenize(&mut tape, &batch, &pvars, &params, &cfg, 0.7, &mut rng).unwrap();
            s.iter()
                .map(|sv| sv.map(|v| tape.value(v)))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn zero_noise_at_floor_matches_greedy_argmax() {
        let (batch, _) = toy_batch();
        let params = AdaptiveParams {
            reward_weight_logits: vec![0.0; 3],
            ..Default::default()
        };
        let mut cfg = SoftTokenizeConfig::new(2, DomainMode::Genomics);
        cfg.zero_noise = true;
        cfg.steps_per_sequence = 1;
        let mut tape = Tape::new();
        let pvars = ParamVars::leaves(&mut tape, &params);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let s = soft_tokenize(&mut tape, &batch, &pvars, &params, &cfg, 0.1, &mut rng).unwrap();
        // With a single dominant candidate the quality feature approaches the
        // argmax candidate's quality.
        assert!(tape.value(s[0][0]) > tape.value(s[1][0]));
    }

    #[test]
    fn end_to_end_alpha_gradient_matches_finite_differences() {
        let (batch, labels) = toy_batch();
        let cfg = {
            let mut c = SoftTokenizeConfig::new(2, DomainMode::Genomics);
            c.zero_noise = true;
            c.steps_per_sequence = 2;
            c
        };
        let task = QualityCorrelatedTask::default();
        let loss_at = |alpha: f64| -> f64 {
            let params = AdaptiveParams {
                alpha,
                lambda_reg: 0.0,
                ..Default::default()
            };
            let mut tape = Tape::new();
            let pvars = ParamVars::leaves(&mut tape, &params);
            let mut rng = ChaCha12Rng::seed_from_u64(1);
            let s =
                soft_tokenize(&mut tape, &batch, &pvars, &params, &cfg, 0.5, &mut rng).unwrap();
            let l = task.loss(&mut tape, &s, &labels);
            tape.value(l)
        };
        let alpha0 = 0.4;
        let params = AdaptiveParams {
            alpha: alpha0,
            lambda_reg: 0.0,
            ..Default::default()
        };
        let mut tape = Tape::new();
        let pvars = ParamVars::leaves(&mut tape, &params);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let s = soft_tokenize(&mut tape, &batch, &pvars, &params, &cfg, 0.5, &mut rng).unwrap();
        let l = task.loss(&mut tape, &s, &labels);
        let adj = tape.backward(l);
        let analytic = grad_of(&adj, pvars.alpha);
        let h = 1e-5;
        let fd = (loss_at(alpha0 + h) - loss_at(alpha0 - h)) / (2.0 * h);
        let denom = fd.abs().max(analytic.abs()).max(1e-10);
        assert!(
            ((fd - analytic) / denom).abs() < 1e-3,
            "fd {fd} vs analytic {analytic}"
        );
    }

    #[test]
    fn batch_norm_toggle_changes_logits_but_stays_valid() {
        // Candidates with distinct qualities, so reweighting the reward
        // scale moves the quality feature the task loss reads.
        let seq = SoftSequence::new(
            vec![0, 1, 0, 1, 2, 3, 2, 3],
            AtomFeatures::Genomic(
                [0.9, 0.9, 0.9, 0.9, 0.4, 0.4, 0.4, 0.4]
                    .iter()
                    .map(|&q| (q, 0.0))
                    .collect(),
            ),
        )
        .unwrap();
        let batch = vec![seq];
        let labels = vec![1.0];
        let params = AdaptiveParams::default();
        let run = |norm: LogitRewardNorm| {
            let mut cfg = SoftTokenizeConfig::new(4, DomainMode::Genomics);
            cfg.zero_noise = true;
            cfg.reward_norm = norm;
            let mut tape = Tape::new();
            let pvars = ParamVars::leaves(&mut tape, &params);
            let mut rng = ChaCha12Rng::seed_from_u64(2);
            let s = soft_tokenize(&mut tape, &batch, &pvars, &params, &cfg, 0.8, &mut rng).unwrap();
            let l = QualityCorrelatedTask::default().loss(&mut tape, &s, &labels);
            tape.value(l)
        };
        let identity = run(LogitRewardNorm::Identity);
        let batch_norm = run(LogitRewardNorm::Batch);
        assert!(identity.is_finite() && batch_norm.is_finite());
        assert_ne!(identity, batch_norm);
    }

    #[test]
    fn batch_norm_standardizes() {
        let mut tape = Tape::new();
        let vars: Vec<Var> = [1.0, 2.0, 3.0, 6.0].iter().map(|&v| tape.leaf(v)).collect();
        let normed = batch_norm_vars(&mut tape, &vars);
        let vals: Vec<f64> = normed.iter().map(|v| tape.value(*v)).collect();
        let mean: f64 = vals.iter().sum::<f64>() / 4.0;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert_relative_eq!(var, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (batch, labels) = toy_batch();
        let cfg = SoftTokenizeConfig::new(2, DomainMode::Genomics);
        let task = QualityCorrelatedTask::default();
        let p0 = AdaptiveParams::default();
        let out = train_adaptive(
            &task,
            &batch,
            &labels,
            &p0,
            &cfg,
            &AnnealSchedule::new(5),
            5,
            0.0,
            3,
        )
        .unwrap();
        assert_eq!(out.params, p0);
    }

    #[test]
    fn heavy_regularization_shrinks_params() {
        let (batch, labels) = toy_batch();
        let cfg = SoftTokenizeConfig::new(2, DomainMode::Genomics);
        // A task with zero gradient: constant loss.
        struct ConstantLoss;
        impl TaskLoss for ConstantLoss {
            fn loss(&self, tape: &mut Tape, _s: &[SummaryVars], _l: &[f64]) -> Var {
                tape.constant(1.0)
            }
        }
        let p0 = AdaptiveParams {
            alpha: 1.0,
            beta_pos: 0.5,
            beta_vol: 0.5,
            quality_weight_logits: [0.4, -0.4, 0.2, -0.2],
            reward_weight_logits: vec![0.3, -0.3, 0.1],
            lambda_reg: 10.0,
        };
        let out = train_adaptive(
            &ConstantLoss,
            &batch,
            &labels,
            &p0,
            &cfg,
            &AnnealSchedule::new(200),
            200,
            0.05,
            3,
        )
        .unwrap();
        assert!(out.params.alpha < 0.05, "alpha {}", out.params.alpha);
        assert!(out.params.alpha >= 0.0);
        assert!(out.params.beta_pos < 0.05);
        for l in &out.params.reward_weight_logits {
            assert!(l.abs() < 0.05);
        }
    }
}
