//! The tokenization MDP and a small PPO trainer.
//!
//! States flatten the vocabulary summary, the top-K candidate queue, corpus
//! histograms and the progress counter into a fixed-width vector of dimension
//! `5 + 6*K + 20 + 1` (326 at K = 50). Actions index the candidate queue;
//! transitions execute the chosen merge deterministically; rewards are the
//! EMA-normalized weighted components from [`crate::rewards`]. Reward
//! statistics persist across episodes within a training run.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::corpus::{AtomicSequence, PairStats};
use crate::error::{Error, Result};
use crate::merge::{
    build_priority_queue, occurrence_quality, BuildState, Candidate, MergeScoreParams, Vocabulary,
};
use crate::nn::{masked_softmax, Adam, Mlp, MlpGrads};
use crate::rewards::{
    mutual_information, raw_complexity_penalty, raw_information_reward, raw_overlap_reward,
    raw_quality_reward, MiNormalizer, RewardComponent, RewardStats, RewardWeights,
    VolatilityContext,
};
use crate::DomainMode;

/// Default candidate-queue width.
pub const DEFAULT_K_PQ: usize = 50;

/// Bins in each state histogram block.
pub const HISTOGRAM_BINS: usize = 10;

/// State dimension for a queue width of `k_pq`.
pub const fn state_dim(k_pq: usize) -> usize {
    5 + 6 * k_pq + 2 * HISTOGRAM_BINS + 1
}

/// Encodes the MDP state vector.
///
/// Layout: vocabulary block `[|V|/|S|, mean |t|, std |t|, mean q, std q]`,
/// then `[w, q_a, q_b, |a|, |b|, ln f(a,b)]` per candidate (zero-padded to
/// `k_pq`), a 10-bin quality histogram over `[0,1]`, a 10-bin log-frequency
/// histogram over `log_freq_range`, and progress `t/horizon`.
#[allow(clippy::too_many_arguments)]
pub fn encode_state(
    vocab: &Vocabulary,
    stats: &PairStats,
    queue: &[Candidate],
    occurrence_qualities: &[f64],
    t: usize,
    horizon: usize,
    k_pq: usize,
    log_freq_range: (f64, f64),
) -> Vec<f64> {
    let mut out = Vec::with_capacity(state_dim(k_pq));

    let tokens = vocab.tokens();
    let n = tokens.len() as f64;
    let mean_len = tokens.iter().map(|t| t.atom_len as f64).sum::<f64>() / n;
    let var_len = tokens
        .iter()
        .map(|t| (t.atom_len as f64 - mean_len).powi(2))
        .sum::<f64>()
        / n;
    let mean_q = tokens.iter().map(|t| t.quality).sum::<f64>() / n;
    let var_q = tokens.iter().map(|t| (t.quality - mean_q).powi(2)).sum::<f64>() / n;
    out.push(n / vocab.base_size() as f64);
    out.push(mean_len);
    out.push(var_len.sqrt());
    out.push(mean_q);
    out.push(var_q.sqrt());

    for i in 0..k_pq {
        if let Some(c) = queue.get(i) {
            out.push(c.score);
            out.push(c.q_a);
            out.push(c.q_b);
            out.push(c.len_a as f64);
            out.push(c.len_b as f64);
            out.push((c.pair_freq as f64).ln());
        } else {
            out.extend_from_slice(&[0.0; 6]);
        }
    }

    let mut qhist = [0.0f64; HISTOGRAM_BINS];
    for &q in occurrence_qualities {
        let bin = ((q * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        qhist[bin] += 1.0;
    }
    let qsum: f64 = qhist.iter().sum();
    if qsum > 0.0 {
        for b in &mut qhist {
            *b /= qsum;
        }
    }
    out.extend_from_slice(&qhist);

    let mut fhist = [0.0f64; HISTOGRAM_BINS];
    let (lo, hi) = log_freq_range;
    for (_, c) in stats.tokens() {
        let lf = (c as f64).ln();
        let bin = if hi > lo {
            (((lf - lo) / (hi - lo) * HISTOGRAM_BINS as f64) as i64)
                .clamp(0, HISTOGRAM_BINS as i64 - 1) as usize
        } else {
            0
        };
        fhist[bin] += 1.0;
    }
    let fsum: f64 = fhist.iter().sum();
    if fsum > 0.0 {
        for b in &mut fhist {
            *b /= fsum;
        }
    }
    out.extend_from_slice(&fhist);

    out.push(if horizon > 0 {
        t as f64 / horizon as f64
    } else {
        0.0
    });
    debug_assert_eq!(out.len(), state_dim(k_pq));
    out
}

/// One step's result.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Anything PPO can train on.
pub trait Environment {
    /// Starts a new episode and returns the initial state.
    fn reset(&mut self) -> Vec<f64>;
    /// Executes `action`; errors on padded slots.
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
    /// Width of the action head (logit count).
    fn action_slots(&self) -> usize;
    /// Number of currently valid actions, `<= action_slots()`.
    fn live_actions(&self) -> usize;
    fn state_dim(&self) -> usize;
}

/// Domain annotations for the optional reward component.
#[derive(Debug, Clone, Default)]
pub struct DomainAnnotations {
    /// Genomics: annotated feature intervals per sequence, atomic coordinates.
    pub feature_spans: Option<Vec<Vec<(u64, u64)>>>,
    /// Finance: one 3-bin future-return label per sequence.
    pub return_bins: Option<Vec<u8>>,
}

/// Configuration of the tokenization environment.
#[derive(Debug, Clone)]
pub struct TokenizeEnvConfig {
    pub base_size: u32,
    pub mode: DomainMode,
    pub score_params: MergeScoreParams,
    pub k_pq: usize,
    pub horizon: usize,
    pub reward_weights: RewardWeights,
    pub beta_norm: f64,
    pub epsilon_r: f64,
    pub epsilon_p: f64,
    pub beta_vol: f64,
    pub volatility: Option<VolatilityContext>,
    pub annotations: DomainAnnotations,
}

impl TokenizeEnvConfig {
    pub fn new(base_size: u32, mode: DomainMode, horizon: usize) -> Self {
        Self {
            base_size,
            mode,
            score_params: MergeScoreParams::default(),
            k_pq: DEFAULT_K_PQ,
            horizon,
            reward_weights: RewardWeights::uniform(),
            beta_norm: 0.01,
            epsilon_r: 1e-8,
            epsilon_p: 1e-8,
            beta_vol: 0.50,
            volatility: None,
            annotations: DomainAnnotations::default(),
        }
    }
}

/// The vocabulary-construction MDP over a fixed corpus.
pub struct TokenizeEnv {
    corpus: Vec<AtomicSequence>,
    cfg: TokenizeEnvConfig,
    state: BuildState,
    queue: Vec<Candidate>,
    t: usize,
    log_freq_range: (f64, f64),
    reward_stats: Vec<(RewardComponent, RewardStats)>,
    mi_norm: MiNormalizer,
    /// Raw/normalized reward pairs recorded for audit, `(step, component, raw, normalized)`.
    pub reward_trace: Vec<(usize, RewardComponent, f64, f64)>,
}

impl TokenizeEnv {
    pub fn new(corpus: Vec<AtomicSequence>, cfg: TokenizeEnvConfig) -> Result<Self> {
        let state = BuildState::from_corpus(&corpus, cfg.base_size, cfg.mode)?;
        let reward_stats = RewardComponent::ALL
            .iter()
            .map(|&c| (c, RewardStats::new(cfg.beta_norm, cfg.epsilon_r)))
            .collect();
        let mut env = Self {
            corpus,
            cfg,
            state,
            queue: Vec::new(),
            t: 0,
            log_freq_range: (0.0, 0.0),
            reward_stats,
            mi_norm: MiNormalizer::default(),
            reward_trace: Vec::new(),
        };
        env.rebuild(true);
        Ok(env)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.state.vocab
    }

    pub fn queue(&self) -> &[Candidate] {
        &self.queue
    }

    fn rebuild(&mut self, freeze_range: bool) {
        self.queue = build_priority_queue(
            &self.state.stats,
            &self.state.vocab,
            &self.cfg.score_params,
            self.cfg.k_pq,
            None,
        );
        if freeze_range {
            // The log-frequency histogram range is fixed at episode start so
            // state coordinates stay comparable across the episode.
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (_, c) in self.state.stats.tokens() {
                let lf = (c as f64).ln();
                lo = lo.min(lf);
                hi = hi.max(lf);
            }
            self.log_freq_range = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
        }
    }

    fn occurrence_qualities(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for si in 0..self.state.seg.num_sequences() {
            for (ti, _) in self.state.seg.tokens_of(si).iter().enumerate() {
                let (s, e) = self.state.seg.spans_of(si)[ti];
                let q = occurrence_quality(
                    self.cfg.mode,
                    &self.corpus[si].qualities[s as usize..e as usize],
                    self.cfg.score_params.epsilon_q,
                )
                .unwrap_or(0.0);
                out.push(q);
            }
        }
        out
    }

    fn encode(&self) -> Vec<f64> {
        encode_state(
            &self.state.vocab,
            &self.state.stats,
            &self.queue,
            &self.occurrence_qualities(),
            self.t,
            self.cfg.horizon,
            self.cfg.k_pq,
            self.log_freq_range,
        )
    }

    fn domain_reward(&mut self, new_id: u32) -> Option<f64> {
        if let Some(features) = &self.cfg.annotations.feature_spans {
            let occ = self.state.seg.occurrence_spans(new_id);
            let mut acc = 0.0;
            let mut n = 0usize;
            for (si, s, e) in occ {
                let spans = [(s as u64, e as u64)];
                acc += raw_overlap_reward(&spans, &features[si]);
                n += 1;
            }
            return Some(if n == 0 { 0.0 } else { acc / n as f64 });
        }
        if let Some(bins) = &self.cfg.annotations.return_bins {
            // Presence of the merged token per sequence against the
            // sequence's return bin.
            let mut table = [[0u64; 3]; 2];
            for (si, &bin) in bins.iter().enumerate().take(self.state.seg.num_sequences()) {
                let present = self.state.seg.tokens_of(si).contains(&new_id);
                let row = usize::from(!present);
                table[row][(bin as usize).min(2)] += 1;
            }
            let mi = mutual_information(&table);
            return Some(self.mi_norm.normalize(mi));
        }
        None
    }

    fn normalize(&mut self, component: RewardComponent, raw: f64) -> f64 {
        let slot = self
            .reward_stats
            .iter_mut()
            .find(|(c, _)| *c == component)
            .expect("all components have stats");
        let normalized = slot.1.ema_update(raw);
        self.reward_trace.push((self.t, component, raw, normalized));
        normalized
    }
}

impl Environment for TokenizeEnv {
    fn reset(&mut self) -> Vec<f64> {
        // Reward statistics persist across episodes within a run.
        self.state = BuildState::from_corpus(&self.corpus, self.cfg.base_size, self.cfg.mode)
            .expect("corpus validated at construction");
        self.t = 0;
        self.rebuild(true);
        self.encode()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= self.queue.len() {
            return Err(Error::PaddedAction {
                index: action,
                live: self.queue.len(),
            });
        }
        let cand = self.queue[action];
        let a_info = *self.state.vocab.token(cand.a)?;
        let b_info = *self.state.vocab.token(cand.b)?;
        let total = self.state.stats.total_tokens();
        let f_a = self.state.stats.freq(cand.a);
        let f_b = self.state.stats.freq(cand.b);

        let new_id = self
            .state
            .execute_merge(&self.corpus, (cand.a, cand.b), self.cfg.score_params.epsilon_q)?;

        let occ = self.state.seg.occurrence_qualities(&self.corpus, new_id);
        let r_q = raw_quality_reward(
            self.cfg.mode,
            &a_info,
            &b_info,
            &occ,
            self.cfg.score_params.epsilon_q,
        );
        let r_i = raw_information_reward(cand.pair_freq, f_a, f_b, total, self.cfg.epsilon_p).value;
        let merged_len = a_info.atom_len + b_info.atom_len;
        let r_c = raw_complexity_penalty(
            merged_len,
            self.state.vocab.size(),
            self.cfg.mode,
            self.cfg.beta_vol,
            self.cfg.volatility,
        );
        let r_d = self.domain_reward(new_id);

        let mut components = vec![
            (RewardComponent::Quality, self.normalize(RewardComponent::Quality, r_q)),
            (
                RewardComponent::Information,
                self.normalize(RewardComponent::Information, r_i),
            ),
            (
                RewardComponent::Complexity,
                self.normalize(RewardComponent::Complexity, r_c),
            ),
        ];
        if let Some(raw) = r_d {
            components.push((RewardComponent::Domain, self.normalize(RewardComponent::Domain, raw)));
        }
        let reward = crate::rewards::total_reward(&components, &self.cfg.reward_weights)?;

        self.t += 1;
        self.rebuild(false);
        let done = self.t >= self.cfg.horizon || self.queue.is_empty();
        Ok(StepOutcome {
            state: self.encode(),
            reward,
            done,
        })
    }

    fn action_slots(&self) -> usize {
        self.cfg.k_pq
    }

    fn live_actions(&self) -> usize {
        self.queue.len()
    }

    fn state_dim(&self) -> usize {
        state_dim(self.cfg.k_pq)
    }
}

/// Bandit-style synthetic environment: one arm always pays 1, the rest 0.
/// State carries no information; the policy has to find the arm.
pub struct SyntheticBanditEnv {
    pub arms: usize,
    pub target: usize,
    pub horizon: usize,
    t: usize,
    dim: usize,
}

impl SyntheticBanditEnv {
    pub fn new(arms: usize, target: usize, horizon: usize) -> Self {
        assert!(target < arms);
        Self {
            arms,
            target,
            horizon,
            t: 0,
            dim: 8,
        }
    }

    fn constant_state(&self) -> Vec<f64> {
        let mut s = vec![1.0; self.dim];
        s[self.dim - 1] = self.t as f64 / self.horizon.max(1) as f64;
        s
    }
}

impl Environment for SyntheticBanditEnv {
    fn reset(&mut self) -> Vec<f64> {
        self.t = 0;
        self.constant_state()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= self.arms {
            return Err(Error::PaddedAction {
                index: action,
                live: self.arms,
            });
        }
        let reward = if action == self.target { 1.0 } else { 0.0 };
        self.t += 1;
        Ok(StepOutcome {
            state: self.constant_state(),
            reward,
            done: self.t >= self.horizon,
        })
    }

    fn action_slots(&self) -> usize {
        self.arms
    }

    fn live_actions(&self) -> usize {
        self.arms
    }

    fn state_dim(&self) -> usize {
        self.dim
    }
}

/// PPO hyperparameters.
#[derive(Debug, Clone)]
pub struct PpoConfig {
    pub clip: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub epochs_per_update: usize,
    pub episodes_per_update: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    /// Exploration rate annealed exponentially from start to final.
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    pub seed: u64,
    /// Hidden widths of policy and value networks.
    pub hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gae_lambda: 0.95,
            gamma: 0.99,
            value_coef: 0.5,
            entropy_coef: 0.01,
            epochs_per_update: 4,
            episodes_per_update: 4,
            lr_policy: 3e-4,
            lr_value: 1e-3,
            epsilon_start: 0.5,
            epsilon_final: 0.05,
            seed: 0,
            hidden: vec![256, 128],
        }
    }
}

impl PpoConfig {
    /// Checks the coefficients against their documented ranges.
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("clip", self.clip, 0.1, 0.3),
            ("gae_lambda", self.gae_lambda, 0.9, 0.99),
            ("gamma", self.gamma, 0.95, 1.0),
            ("value_coef", self.value_coef, 0.25, 1.0),
            ("entropy_coef", self.entropy_coef, 0.0, 0.05),
        ];
        for (name, v, lo, hi) in checks {
            if !(lo..=hi).contains(&v) {
                return Err(Error::Invariant(alloc::format!(
                    "{name} = {v} outside [{lo}, {hi}]"
                )));
            }
        }
        if !(3..=20).contains(&self.epochs_per_update) {
            return Err(Error::Invariant(alloc::format!(
                "epochs_per_update = {} outside [3, 20]",
                self.epochs_per_update
            )));
        }
        Ok(())
    }
}

/// Exploration rate for episode `e` of `total`: exponential decay from
/// `eps0` to `eps_final`, hitting both endpoints exactly.
pub fn exploration_rate(eps0: f64, eps_final: f64, episode: usize, total: usize) -> f64 {
    if total <= 1 {
        return eps_final;
    }
    let frac = episode as f64 / (total - 1) as f64;
    eps0 * (eps_final / eps0).powf(frac)
}

/// Per-episode training log row.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeLog {
    pub episode: usize,
    pub mean_reward: f64,
    pub entropy: f64,
    pub value_loss: f64,
}

/// Trained networks plus the per-episode log.
pub struct PpoArtifacts {
    pub policy: Mlp,
    pub value: Mlp,
    pub log: Vec<EpisodeLog>,
}

struct Transition {
    state: Vec<f64>,
    action: usize,
    old_prob: f64,
    reward: f64,
    value: f64,
    live: usize,
    advantage: f64,
    ret: f64,
}

/// Trains a policy with clipped-surrogate PPO, GAE advantages, an entropy
/// bonus and a value MSE head. All randomness flows from `config.seed`.
/// The environment is returned so callers can inspect traces it kept.
pub fn train_ppo<E, F>(
    make_env: F,
    config: &PpoConfig,
    episodes: usize,
) -> Result<(PpoArtifacts, E)>
where
    E: Environment,
    F: FnOnce(u64) -> E,
{
    config.validate()?;
    let mut env = make_env(config.seed);
    let mut rng = ChaCha12Rng::seed_from_u64(crate::seed::derive_seed(config.seed, "ppo"));
    let dim = env.state_dim();
    let actions = env.action_slots();
    let mut policy = Mlp::with_hidden(dim, &config.hidden, actions, crate::seed::derive_seed(config.seed, "policy"));
    let mut value = Mlp::with_hidden(dim, &config.hidden, 1, crate::seed::derive_seed(config.seed, "value"));
    let mut opt_policy = Adam::new(config.lr_policy, policy.param_count());
    let mut opt_value = Adam::new(config.lr_value, value.param_count());

    let mut log: Vec<EpisodeLog> = Vec::with_capacity(episodes);
    let mut batch: Vec<Transition> = Vec::new();
    let mut batch_episodes = 0usize;
    let mut last_value_loss = 0.0;

    for episode in 0..episodes {
        let eps = exploration_rate(config.epsilon_start, config.epsilon_final, episode, episodes);
        let mut state = env.reset();
        let mut done = false;
        let mut ep_rewards: Vec<f64> = Vec::new();
        let mut ep_entropy = 0.0;
        let ep_start = batch.len();

        while !done {
            let live = env.live_actions().min(actions).max(1);
            let logits = policy.infer(&state);
            let probs = masked_softmax(&logits, live);
            let entropy = -probs[..live]
                .iter()
                .filter(|p| **p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>();
            ep_entropy += entropy;

            let action = if rng.random::<f64>() < eps {
                rng.random_range(0..live)
            } else {
                sample_categorical(&probs[..live], &mut rng)
            };
            let v = value.infer(&state)[0];
            let outcome = env.step(action)?;
            batch.push(Transition {
                state: core::mem::take(&mut state),
                action,
                old_prob: probs[action].max(1e-12),
                reward: outcome.reward,
                value: v,
                live,
                advantage: 0.0,
                ret: 0.0,
            });
            ep_rewards.push(outcome.reward);
            state = outcome.state;
            done = outcome.done;
        }

        // GAE over this episode; terminal bootstrap is zero.
        let mut gae = 0.0;
        for i in (ep_start..batch.len()).rev() {
            let next_value = if i + 1 < batch.len() {
                batch[i + 1].value
            } else {
                0.0
            };
            let not_last = if i + 1 < batch.len() { 1.0 } else { 0.0 };
            let delta = batch[i].reward + config.gamma * next_value * not_last - batch[i].value;
            gae = delta + config.gamma * config.gae_lambda * not_last * gae;
            batch[i].advantage = gae;
            batch[i].ret = gae + batch[i].value;
        }
        batch_episodes += 1;

        let steps = ep_rewards.len().max(1);
        let mean_reward = ep_rewards.iter().sum::<f64>() / steps as f64;
        let mean_entropy = ep_entropy / steps as f64;

        if batch_episodes >= config.episodes_per_update || episode + 1 == episodes {
            last_value_loss = ppo_update(
                &mut policy,
                &mut value,
                &mut opt_policy,
                &mut opt_value,
                &batch,
                config,
                episode,
            )?;
            batch.clear();
            batch_episodes = 0;
        }

        log.push(EpisodeLog {
            episode,
            mean_reward,
            entropy: mean_entropy,
            value_loss: last_value_loss,
        });
    }

    Ok((PpoArtifacts { policy, value, log }, env))
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn ppo_update(
    policy: &mut Mlp,
    value: &mut Mlp,
    opt_policy: &mut Adam,
    opt_value: &mut Adam,
    batch: &[Transition],
    config: &PpoConfig,
    episode: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    // Advantage normalization stabilizes the tiny batches used here.
    let n = batch.len() as f64;
    let adv_mean = batch.iter().map(|t| t.advantage).sum::<f64>() / n;
    let adv_var = batch
        .iter()
        .map(|t| (t.advantage - adv_mean).powi(2))
        .sum::<f64>()
        / n;
    let adv_std = adv_var.sqrt().max(1e-8);

    let mut value_loss_out = 0.0;
    for _ in 0..config.epochs_per_update {
        let mut pgrads = MlpGrads::zeros_like(policy);
        let mut vgrads = MlpGrads::zeros_like(value);
        let mut policy_loss = 0.0;
        let mut value_loss = 0.0;

        for tr in batch {
            let adv = (tr.advantage - adv_mean) / adv_std;
            let cache = policy.forward(&tr.state);
            let probs = masked_softmax(cache.output(), tr.live);
            let p_a = probs[tr.action].max(1e-12);
            let ratio = p_a / tr.old_prob;
            let clipped = ratio.clamp(1.0 - config.clip, 1.0 + config.clip);
            let surr1 = ratio * adv;
            let surr2 = clipped * adv;
            policy_loss -= surr1.min(surr2);

            // d(-min)/d ratio: the unclipped branch when it is the minimum,
            // or the clip passthrough while unsaturated; zero once saturated.
            let unsaturated = ratio > 1.0 - config.clip && ratio < 1.0 + config.clip;
            let dmin_dratio = if surr1 <= surr2 || unsaturated { adv } else { 0.0 };
            let dloss_dpa = -dmin_dratio / tr.old_prob;

            let entropy: f64 = -probs[..tr.live]
                .iter()
                .filter(|p| **p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>();
            policy_loss -= config.entropy_coef * entropy;

            // Gradient w.r.t. logits through the masked softmax.
            let mut grad_logits = vec![0.0; cache.output().len()];
            for j in 0..tr.live {
                let delta = if j == tr.action { 1.0 } else { 0.0 };
                let dpa_dlj = p_a * (delta - probs[j]);
                let dent_dlj = -probs[j] * (probs[j].max(1e-300).ln() + entropy);
                grad_logits[j] = dloss_dpa * dpa_dlj - config.entropy_coef * dent_dlj;
            }
            pgrads.add(&policy.backward(&cache, &grad_logits));

            let vcache = value.forward(&tr.state);
            let v = vcache.output()[0];
            let err = v - tr.ret;
            value_loss += config.value_coef * err * err;
            vgrads.add(&value.backward(&vcache, &[config.value_coef * 2.0 * err]));
        }

        policy_loss /= n;
        value_loss /= n;
        if !policy_loss.is_finite() || !value_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: episode,
                what: "ppo loss",
            });
        }
        pgrads.scale(1.0 / n);
        vgrads.scale(1.0 / n);
        opt_policy.step(policy, &pgrads);
        opt_value.step(value, &vgrads);
        value_loss_out = value_loss;
    }
    Ok(value_loss_out)
}

/// Mean episode return of a policy (greedy over masked softmax when
/// `greedy`, sampled otherwise).
pub fn evaluate_policy<E: Environment>(
    env: &mut E,
    policy: &Mlp,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut state = env.reset();
        let mut done = false;
        while !done {
            let live = env.live_actions().min(env.action_slots()).max(1);
            let probs = masked_softmax(&policy.infer(&state), live);
            let action = if greedy {
                probs[..live]
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            } else {
                sample_categorical(&probs[..live], &mut rng)
            };
            let out = env.step(action)?;
            total += out.reward;
            state = out.state;
            done = out.done;
        }
    }
    Ok(total / episodes as f64)
}

/// Mean episode return of the uniform-random policy.
pub fn evaluate_random<E: Environment>(env: &mut E, episodes: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut done = false;
        env.reset();
        while !done {
            let live = env.live_actions().max(1);
            let action = rng.random_range(0..live);
            let out = env.step(action)?;
            total += out.reward;
            done = out.done;
        }
    }
    Ok(total / episodes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;

    fn corpus() -> Vec<AtomicSequence> {
        let mk = |e: &[u32], q: &[f64]| {
            AtomicSequence::new(e.to_vec(), q.to_vec(), String::from("s"), 4).unwrap()
        };
        vec![
            mk(&[0, 1, 0, 1, 2, 3], &[0.9, 0.8, 0.9, 0.8, 0.4, 0.5]),
            mk(&[0, 1, 2, 3, 2, 3], &[0.9, 0.9, 0.5, 0.4, 0.5, 0.4]),
        ]
    }

    #[test]
    fn state_dim_is_326_at_default_k() {
        assert_eq!(state_dim(DEFAULT_K_PQ), 326);
    }

    #[test]
    fn empty_queue_encodes_to_zero_candidate_block() {
        let corpus = [
            AtomicSequence::new(vec![0], vec![0.9], String::from("a"), 4).unwrap(),
            AtomicSequence::new(vec![1], vec![0.9], String::from("b"), 4).unwrap(),
        ];
        let state = BuildState::from_corpus(&corpus, 4, DomainMode::Genomics).unwrap();
        let s = encode_state(
            &state.vocab,
            &state.stats,
            &[],
            &[0.9, 0.9],
            0,
            5,
            DEFAULT_K_PQ,
            (0.0, 1.0),
        );
        assert_eq!(s.len(), state_dim(DEFAULT_K_PQ));
        let block = &s[5..5 + 6 * DEFAULT_K_PQ];
        assert!(block.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn encode_state_pads_and_has_exact_length() {
        let cfg = TokenizeEnvConfig::new(4, DomainMode::Genomics, 3);
        let env = TokenizeEnv::new(corpus(), cfg).unwrap();
        let s = env.encode();
        assert_eq!(s.len(), state_dim(DEFAULT_K_PQ));
        // Progress starts at zero.
        assert_eq!(*s.last().unwrap(), 0.0);
        // Histogram blocks each sum to 1.
        let qstart = 5 + 6 * DEFAULT_K_PQ;
        let qsum: f64 = s[qstart..qstart + 10].iter().sum();
        let fsum: f64 = s[qstart + 10..qstart + 20].iter().sum();
        assert!((qsum - 1.0).abs() < 1e-9);
        assert!((fsum - 1.0).abs() < 1e-9);
        // Live candidates sit before all-zero padded slots.
        let live = env.live_actions();
        let pad_start = 5 + 6 * live;
        assert!(s[pad_start..qstart].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn step_is_deterministic_and_flags_done() {
        let cfg = TokenizeEnvConfig::new(4, DomainMode::Genomics, 2);
        let mut a = TokenizeEnv::new(corpus(), cfg.clone()).unwrap();
        let mut b = TokenizeEnv::new(corpus(), cfg).unwrap();
        a.reset();
        b.reset();
        let oa = a.step(0).unwrap();
        let ob = b.step(0).unwrap();
        assert_eq!(oa.state, ob.state);
        assert_eq!(oa.reward, ob.reward);
        assert!(!oa.done);
        let oa2 = a.step(0).unwrap();
        assert!(oa2.done);
    }

    #[test]
    fn padded_action_is_rejected() {
        let cfg = TokenizeEnvConfig::new(4, DomainMode::Genomics, 2);
        let mut env = TokenizeEnv::new(corpus(), cfg).unwrap();
        env.reset();
        let live = env.live_actions();
        assert!(matches!(
            env.step(live + 5),
            Err(Error::PaddedAction { .. })
        ));
    }

    #[test]
    fn replaying_actions_reproduces_trajectory() {
        let cfg = TokenizeEnvConfig::new(4, DomainMode::Genomics, 3);
        let mut env = TokenizeEnv::new(corpus(), cfg.clone()).unwrap();
        env.reset();
        let mut first = Vec::new();
        let mut done = false;
        while !done {
            let out = env.step(0).unwrap();
            first.push((out.state.clone(), out.reward.to_bits()));
            done = out.done;
        }
        // Fresh env (fresh reward stats) replays bit-identically.
        let mut env2 = TokenizeEnv::new(corpus(), cfg).unwrap();
        env2.reset();
        let mut second = Vec::new();
        let mut done = false;
        while !done {
            let out = env2.step(0).unwrap();
            second.push((out.state.clone(), out.reward.to_bits()));
            done = out.done;
        }
        assert_eq!(first, second);
    }

    #[test]
    fn config_ranges_are_enforced() {
        assert!(PpoConfig::default().validate().is_ok());
        let bad = PpoConfig {
            clip: 0.9,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(train_ppo(|_| SyntheticBanditEnv::new(2, 0, 2), &bad, 1).is_err());
    }

    #[test]
    fn exploration_anneals_to_endpoints() {
        let e0 = exploration_rate(0.5, 0.05, 0, 100);
        let ef = exploration_rate(0.5, 0.05, 99, 100);
        assert!((e0 - 0.5).abs() < 1e-12);
        assert!((ef - 0.05).abs() < 1e-12);
        let mid = exploration_rate(0.5, 0.05, 50, 100);
        assert!(mid < 0.5 && mid > 0.05);
    }

    #[test]
    fn zero_lr_leaves_policy_unchanged() {
        let config = PpoConfig {
            lr_policy: 0.0,
            lr_value: 0.0,
            hidden: vec![16, 8],
            seed: 1,
            ..Default::default()
        };
        let fresh = Mlp::with_hidden(
            8,
            &config.hidden,
            3,
            crate::seed::derive_seed(config.seed, "policy"),
        );
        let (arts, _env) = train_ppo(|_| SyntheticBanditEnv::new(3, 1, 4), &config, 10).unwrap();
        assert_eq!(arts.policy.flat_params(), fresh.flat_params());
    }

    #[test]
    fn ppo_learns_the_rewarding_arm() {
        let config = PpoConfig {
            hidden: vec![16, 8],
            lr_policy: 5e-3,
            lr_value: 5e-3,
            episodes_per_update: 2,
            seed: 7,
            ..Default::default()
        };
        let (arts, _env) = train_ppo(|_| SyntheticBanditEnv::new(4, 2, 8), &config, 150).unwrap();
        let probs = masked_softmax(&arts.policy.infer(&SyntheticBanditEnv::new(4, 2, 8).reset()), 4);
        assert!(
            probs[2] > 0.9,
            "policy prob on rewarding arm only {}",
            probs[2]
        );
    }

    #[test]
    fn forced_single_candidate_matches_greedy() {
        // One live candidate: every policy takes the same trajectory.
        let mk = |e: &[u32]| {
            AtomicSequence::new(e.to_vec(), vec![1.0; e.len()], String::from("s"), 2).unwrap()
        };
        let cfg = TokenizeEnvConfig::new(2, DomainMode::Genomics, 1);
        let mut env = TokenizeEnv::new(vec![mk(&[0, 1])], cfg).unwrap();
        env.reset();
        assert_eq!(env.live_actions(), 1);
        let out = env.step(0).unwrap();
        assert!(out.done);
    }
}
