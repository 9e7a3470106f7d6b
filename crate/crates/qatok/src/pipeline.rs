//! Training and evaluation workflows behind the CLI subcommands.

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use qatok_core::adaptive::{
    train_adaptive, AdaptiveParams, AnnealSchedule, AtomFeatures, QualityCorrelatedTask,
    SoftSequence, SoftTokenizeConfig,
};
use qatok_core::corpus::{count_pairs, AtomicSequence, BinConfig, PairStats, Segmentation};
use qatok_core::merge::{
    evaluate_objective, greedy_build, MergeScoreParams, ObjectiveWeights, Vocabulary,
};
use qatok_core::quality::{FinanceQualityParams, GenomicQualityParams};
use qatok_core::rewards::RewardWeights;
use qatok_core::rl_env::{train_ppo, PpoConfig, TokenizeEnv, TokenizeEnvConfig};
use qatok_core::sampler::stratified_sample;
use qatok_core::seed::derive_seed;
use qatok_core::tokenizer::{decode, encode};
use qatok_core::{DomainMode, TokenId};

use crate::config::{Config, TrainMode};
use crate::fastq::{read_fastq, symbol_to_base, GENOMIC_BASE_SIZE};
use crate::lob::read_lob_csv;
use crate::manifest::{write_manifest_file, Manifest};
use crate::vocab_file::{read_vocab_file, write_vocab_file, VocabMeta};
use crate::{checkpoint, logs, IoFormatError, Result};

/// Rayon pool sized by the `QATOK_THREADS` env var (unset or 0 = default).
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var("QATOK_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool construction")
}

/// Sharded pair counting with the commutative reduction; equal to the
/// sequential count for any shard split.
pub fn parallel_count(token_lists: &[Vec<TokenId>]) -> PairStats {
    thread_pool().install(|| {
        token_lists
            .par_iter()
            .fold(PairStats::new, |mut acc, toks| {
                acc.absorb_tokens(toks);
                acc
            })
            .reduce(PairStats::new, |mut a, b| {
                a.absorb(&b);
                a
            })
    })
}

/// Loaded corpus plus the raw ingredients Stage 2 differentiates through.
pub struct LoadedCorpus {
    pub base_size: u32,
    pub domain: DomainMode,
    /// Raw per-element data: genomic `(q_raw, decay_coeff)` or finance
    /// component vectors, one entry per sequence.
    soft: Vec<SoftSequence>,
}

impl LoadedCorpus {
    /// Materializes the training corpus under the given process parameters.
    pub fn training_corpus(&self, params: &AdaptiveParams) -> Result<Vec<AtomicSequence>> {
        self.soft
            .iter()
            .enumerate()
            .map(|(i, s)| {
                AtomicSequence::new(
                    s.elements.clone(),
                    s.numeric_qualities(params),
                    format!("seq{i}"),
                    self.base_size,
                )
                .map_err(IoFormatError::Core)
            })
            .collect()
    }

    pub fn soft_batch(&self) -> &[SoftSequence] {
        &self.soft
    }

    pub fn total_atoms(&self) -> usize {
        self.soft.iter().map(|s| s.elements.len()).sum()
    }
}

fn genomic_quality_params(cfg: &Config) -> Result<GenomicQualityParams> {
    Ok(GenomicQualityParams {
        beta_pos: cfg.get_f64("quality.beta_pos", 0.014)?,
        epsilon_len: cfg.get_f64("quality.epsilon_len", 1e-6)?,
        epsilon_q: cfg.get_f64("merge.epsilon_q", 1e-8)?,
    })
}

fn finance_quality_params(cfg: &Config) -> Result<FinanceQualityParams> {
    let defaults = FinanceQualityParams::default();
    let params = FinanceQualityParams {
        weights: [
            cfg.get_f64("quality.w_liq", defaults.weights[0])?,
            cfg.get_f64("quality.w_sig", defaults.weights[1])?,
            cfg.get_f64("quality.w_stb", defaults.weights[2])?,
            cfg.get_f64("quality.w_info", defaults.weights[3])?,
        ],
        beta_vol: cfg.get_f64("quality.beta_vol", defaults.beta_vol)?,
        gamma_vol: cfg.get_f64("quality.gamma_vol", defaults.gamma_vol)?,
        alpha_spread: cfg.get_f64("quality.alpha_spread", defaults.alpha_spread)?,
        vol_lookback: cfg.get_usize("quality.vol_lookback", defaults.vol_lookback)?,
    };
    params.validate().map_err(IoFormatError::Core)?;
    Ok(params)
}

fn bin_config(cfg: &Config) -> Result<BinConfig> {
    let d = BinConfig::default();
    let bins = BinConfig {
        price_bins: cfg.get_usize("lob.price_bins", d.price_bins)?,
        spread_bins: cfg.get_usize("lob.spread_bins", d.spread_bins)?,
        imbalance_bins: cfg.get_usize("lob.imbalance_bins", d.imbalance_bins)?,
        time_bins: cfg.get_usize("lob.time_bins", d.time_bins)?,
        range_ticks: cfg.get_f64("lob.range_ticks", d.range_ticks)?,
        time_min_s: cfg.get_f64("lob.time_min_s", d.time_min_s)?,
        time_max_s: cfg.get_f64("lob.time_max_s", d.time_max_s)?,
        initial_mid: cfg.get_f64("lob.initial_mid", d.initial_mid)?,
        initial_spread: cfg.get_f64("lob.initial_spread", d.initial_spread)?,
    };
    bins.validate().map_err(IoFormatError::Core)?;
    Ok(bins)
}

/// Window length finance streams are chopped into for corpus purposes.
const FINANCE_WINDOW: usize = 32;

/// Loads the input per domain, keeping raw quality ingredients.
pub fn load_corpus(cfg: &Config) -> Result<LoadedCorpus> {
    let domain = cfg.domain()?;
    let input = cfg.input_path()?;
    let file = std::fs::File::open(&input)?;
    match domain {
        DomainMode::Genomics => {
            let qp = genomic_quality_params(cfg)?;
            let raw = read_fastq(BufReader::new(file))?;
            let soft = thread_pool().install(|| {
                raw.par_iter()
                    .map(|seq| {
                        SoftSequence::genomic(
                            seq.elements.clone(),
                            seq.qualities.clone(),
                            qp.epsilon_len,
                        )
                        .expect("lengths validated by the parser")
                    })
                    .collect()
            });
            Ok(LoadedCorpus {
                base_size: GENOMIC_BASE_SIZE,
                domain,
                soft,
            })
        }
        DomainMode::Finance => {
            let bins = bin_config(cfg)?;
            let qp = finance_quality_params(cfg)?;
            let events = read_lob_csv(BufReader::new(file))?;
            let (seq, components) = qatok_core::corpus::discretize_lob_features(
                &events,
                &bins,
                &qp,
                input.to_string_lossy().as_ref(),
            )
            .map_err(IoFormatError::Core)?;
            // Chop into windows so the corpus has more than one sequence.
            let mut soft = Vec::new();
            let mut at = 0;
            while at < seq.elements.len() {
                let end = (at + FINANCE_WINDOW).min(seq.elements.len());
                soft.push(
                    SoftSequence::new(
                        seq.elements[at..end].to_vec(),
                        AtomFeatures::Finance(components[at..end].to_vec()),
                    )
                    .map_err(IoFormatError::Core)?,
                );
                at = end;
            }
            Ok(LoadedCorpus {
                base_size: bins.alphabet_size(),
                domain,
                soft,
            })
        }
    }
}

/// Initial adaptive parameters from the config.
pub fn initial_params(cfg: &Config, domain: DomainMode) -> Result<AdaptiveParams> {
    let finance = finance_quality_params(cfg)?;
    Ok(AdaptiveParams {
        alpha: cfg.alpha(domain)?,
        beta_pos: cfg.get_f64("quality.beta_pos", 0.014)?,
        beta_vol: cfg.get_f64("quality.beta_vol", 0.50)?,
        // Softmax logits reproducing the configured component weights.
        quality_weight_logits: finance.weights.map(|w| w.max(1e-12).ln()),
        reward_weight_logits: vec![0.0; 3],
        lambda_reg: cfg.get_f64("stage2.lambda_reg", 1e-4)?,
    })
}

/// Genomic soft sequences use the centered decay; applying the numeric
/// parameters must agree with `position_adjust`. Used by tests.
pub fn adjusted_corpus(
    soft: &[SoftSequence],
    base_size: u32,
    params: &AdaptiveParams,
) -> Result<Vec<AtomicSequence>> {
    soft.iter()
        .enumerate()
        .map(|(i, s)| {
            AtomicSequence::new(
                s.elements.clone(),
                s.numeric_qualities(params),
                format!("seq{i}"),
                base_size,
            )
            .map_err(IoFormatError::Core)
        })
        .collect()
}

/// Everything `train` writes, for reporting.
pub struct TrainArtifacts {
    pub vocab_path: PathBuf,
    pub params_path: PathBuf,
    pub policy_path: Option<PathBuf>,
    pub merges_executed: usize,
}

fn config_err(what: impl Into<String>) -> IoFormatError {
    IoFormatError::ConfigValue(what.into())
}

/// Runs the configured training mode and writes all artifacts.
pub fn cmd_train(cfg: &Config, out_override: Option<&Path>) -> Result<TrainArtifacts> {
    let corpus_src = load_corpus(cfg)?;
    let domain = corpus_src.domain;
    let mode = cfg.train_mode()?;
    let seed = cfg.seed()?;
    let merges = cfg.get_usize("merges", 64)?;
    let out_dir = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir());
    std::fs::create_dir_all(&out_dir)?;

    let mut params = initial_params(cfg, domain)?;

    let mut policy_path = None;
    if mode == TrainMode::Full {
        if corpus_src.total_atoms() > 10_000 {
            return Err(config_err(format!(
                "full mode is toy-scale: corpus has {} atoms (max 10000)",
                corpus_src.total_atoms()
            )));
        }
        let horizon = cfg.get_usize("rl.horizon", 8)?;
        if horizon > 200 {
            return Err(config_err("rl.horizon must be <= 200"));
        }
        let corpus = corpus_src.training_corpus(&params)?;
        let mut env_cfg = TokenizeEnvConfig::new(corpus_src.base_size, domain, horizon);
        env_cfg.k_pq = cfg.get_usize("rl.k_pq", env_cfg.k_pq)?;
        env_cfg.score_params = MergeScoreParams {
            alpha: params.alpha,
            epsilon_f: cfg.get_f64("merge.epsilon_f", 1e-8)?,
            epsilon_q: cfg.get_f64("merge.epsilon_q", 1e-8)?,
        };
        env_cfg.beta_vol = params.beta_vol;
        env_cfg.reward_weights = RewardWeights::uniform();

        let ppo = PpoConfig {
            clip: cfg.get_f64("rl.clip", 0.2)?,
            gae_lambda: cfg.get_f64("rl.gae_lambda", 0.95)?,
            gamma: cfg.get_f64("rl.gamma", 0.99)?,
            value_coef: cfg.get_f64("rl.value_coef", 0.5)?,
            entropy_coef: cfg.get_f64("rl.entropy_coef", 0.01)?,
            epochs_per_update: cfg.get_usize("rl.epochs_per_update", 4)?,
            episodes_per_update: cfg.get_usize("rl.episodes_per_update", 4)?,
            lr_policy: cfg.get_f64("rl.lr_policy", 3e-4)?,
            lr_value: cfg.get_f64("rl.lr_value", 1e-3)?,
            epsilon_start: cfg.get_f64("rl.epsilon_start", 0.5)?,
            epsilon_final: cfg.get_f64("rl.epsilon_final", 0.05)?,
            seed: derive_seed(seed, "stage1"),
            hidden: vec![256, 128],
        };
        let episodes = cfg.get_usize("rl.episodes", 30)?;
        let env_corpus = corpus.clone();
        let (arts, env) = train_ppo::<TokenizeEnv, _>(
            move |_| {
                TokenizeEnv::new(env_corpus, env_cfg).expect("corpus validated during loading")
            },
            &ppo,
            episodes,
        )
        .map_err(IoFormatError::Core)?;

        let p = out_dir.join("policy.ckpt");
        checkpoint::write_networks_file(&p, &[&arts.policy, &arts.value])?;
        logs::write_training_log(&out_dir.join("train_log.csv"), &arts.log)?;
        logs::write_reward_trace(&out_dir.join("reward_trace.csv"), &env.reward_trace)?;
        policy_path = Some(p);
    }

    if matches!(mode, TrainMode::GreedyStage2 | TrainMode::Full) {
        let soft_cfg = SoftTokenizeConfig {
            base_size: corpus_src.base_size,
            mode: domain,
            k_candidates: cfg.get_usize("stage2.k_candidates", 8)?,
            steps_per_sequence: cfg.get_usize("stage2.steps", 3)?,
            epsilon_f: cfg.get_f64("merge.epsilon_f", 1e-8)?,
            epsilon_q: cfg.get_f64("merge.epsilon_q", 1e-8)?,
            epsilon_p: 1e-8,
            zero_noise: false,
            reward_norm: match cfg.get("stage2.reward_norm").unwrap_or("identity") {
                "identity" => qatok_core::adaptive::LogitRewardNorm::Identity,
                "batch" => qatok_core::adaptive::LogitRewardNorm::Batch,
                other => {
                    return Err(config_err(format!(
                        "stage2.reward_norm must be identity or batch, got {other:?}"
                    )))
                }
            },
        };
        let iterations = cfg.get_usize("stage2.iterations", 40)?;
        let schedule = AnnealSchedule {
            tau_init: cfg.get_f64("stage2.tau_init", 1.0)?,
            beta_anneal: cfg.get_f64("stage2.beta_anneal", 3.0)?,
            total_steps: iterations,
            tau_floor: cfg.get_f64("stage2.tau_floor", 0.1)?,
        };
        // Labels: does the sequence carry above-threshold mean quality under
        // the initial parameters.
        let task = QualityCorrelatedTask::default();
        let labels: Vec<f64> = corpus_src
            .soft_batch()
            .iter()
            .map(|s| {
                let qs = s.numeric_qualities(&params);
                let mean = qs.iter().sum::<f64>() / qs.len().max(1) as f64;
                f64::from(u8::from(mean > task.threshold))
            })
            .collect();
        let eta = cfg.get_f64("stage2.eta", 0.05)?;
        let outcome = train_adaptive(
            &task,
            corpus_src.soft_batch(),
            &labels,
            &params,
            &soft_cfg,
            &schedule,
            iterations,
            eta,
            derive_seed(seed, "stage2"),
        )
        .map_err(|abort| IoFormatError::Core(abort.error))?;
        logs::write_loss_trace(&out_dir.join("stage2_trace.csv"), &outcome.trace)?;
        params = outcome.params;
    }

    // Final greedy construction with the (possibly learned) parameters.
    let corpus = corpus_src.training_corpus(&params)?;
    let score_params = MergeScoreParams {
        alpha: params.alpha,
        epsilon_f: cfg.get_f64("merge.epsilon_f", 1e-8)?,
        epsilon_q: cfg.get_f64("merge.epsilon_q", 1e-8)?,
    };
    let outcome = greedy_build(
        &corpus,
        corpus_src.base_size,
        domain,
        &score_params,
        merges,
        None,
    )
    .map_err(IoFormatError::Core)?;

    let vocab_path = out_dir.join("vocab.qvocab");
    write_vocab_file(
        &vocab_path,
        &outcome.vocab,
        &VocabMeta {
            alpha: params.alpha,
            domain,
        },
    )?;
    let params_path = out_dir.join("theta.qparams");
    checkpoint::write_params_file(&params_path, &params)?;

    Ok(TrainArtifacts {
        vocab_path,
        params_path,
        policy_path,
        merges_executed: outcome.merges_executed,
    })
}

/// Encodes the configured input with a trained vocabulary; one line of
/// whitespace-separated token ids per sequence.
pub fn cmd_encode(cfg: &Config, out: Option<&Path>) -> Result<()> {
    let (vocab, _meta) = read_vocab_file(&cfg.vocab_path()?)?;
    let corpus_src = load_corpus(cfg)?;
    let params = initial_params(cfg, corpus_src.domain)?;
    let corpus = corpus_src.training_corpus(&params)?;
    let mut lines = String::new();
    for seq in &corpus {
        let ids = encode(&seq.elements, &vocab).map_err(IoFormatError::Core)?;
        let mut first = true;
        for id in ids {
            if !first {
                lines.push(' ');
            }
            lines.push_str(&id.to_string());
            first = false;
        }
        lines.push('\n');
    }
    write_output(out, &lines)
}

/// Decodes token-id lines back into symbols.
pub fn cmd_decode(cfg: &Config, out: Option<&Path>) -> Result<()> {
    let (vocab, meta) = read_vocab_file(&cfg.vocab_path()?)?;
    let input = std::fs::read_to_string(cfg.input_path()?)?;
    let mut lines = String::new();
    for (idx, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            lines.push('\n');
            continue;
        }
        let ids: Vec<u32> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>().map_err(|e| IoFormatError::Csv {
                    line: idx,
                    what: format!("bad token id {t:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        let symbols = decode(&ids, &vocab).map_err(IoFormatError::Core)?;
        match meta.domain {
            DomainMode::Genomics => {
                for s in symbols {
                    let c = symbol_to_base(s).ok_or_else(|| IoFormatError::Csv {
                        line: idx,
                        what: format!("symbol {s} outside the genomic alphabet"),
                    })?;
                    lines.push(c as char);
                }
            }
            DomainMode::Finance => {
                let mut first = true;
                for s in symbols {
                    if !first {
                        lines.push(' ');
                    }
                    lines.push_str(&s.to_string());
                    first = false;
                }
            }
        }
        lines.push('\n');
    }
    write_output(out, &lines)
}

/// Prints vocabulary statistics and, when configured, the parameter
/// checkpoint values.
pub fn cmd_inspect(cfg: &Config, out: Option<&Path>) -> Result<()> {
    let (vocab, meta) = read_vocab_file(&cfg.vocab_path()?)?;
    let mut text = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(text, "vocab size: {}", vocab.size());
    let _ = writeln!(text, "base alphabet: {}", vocab.base_size());
    let _ = writeln!(text, "merges: {}", vocab.merges().len());
    let _ = writeln!(
        text,
        "domain: {}",
        match meta.domain {
            DomainMode::Genomics => "genomics",
            DomainMode::Finance => "finance",
        }
    );
    let _ = writeln!(text, "alpha: {}", meta.alpha);
    let tokens = vocab.tokens();
    let mean_len =
        tokens.iter().map(|t| t.atom_len as f64).sum::<f64>() / tokens.len().max(1) as f64;
    let max_len = tokens.iter().map(|t| t.atom_len).max().unwrap_or(0);
    let _ = writeln!(text, "mean token length: {mean_len:.4}");
    let _ = writeln!(text, "max token length: {max_len}");
    if !vocab.merges().is_empty() {
        let mut qs: Vec<f64> = vocab.merges().iter().map(|m| m.quality).collect();
        qs.sort_by(f64::total_cmp);
        let mean_q = qs.iter().sum::<f64>() / qs.len() as f64;
        let _ = writeln!(
            text,
            "merged-token quality min/median/mean/max: {}/{}/{:.6}/{}",
            qs[0],
            qs[qs.len() / 2],
            mean_q,
            qs[qs.len() - 1]
        );
    }
    if let Some(path) = cfg.get("params") {
        let p = checkpoint::read_params_file(Path::new(path))?;
        let _ = writeln!(text, "theta.alpha: {}", p.alpha);
        let _ = writeln!(text, "theta.beta_pos: {}", p.beta_pos);
        let _ = writeln!(text, "theta.beta_vol: {}", p.beta_vol);
        let w = p.quality_weights();
        let _ = writeln!(
            text,
            "theta.quality_weights: {} {} {} {}",
            w[0], w[1], w[2], w[3]
        );
        let l = p.reward_weights();
        let _ = write!(text, "theta.reward_weights:");
        for v in l {
            let _ = write!(text, " {v}");
        }
        let _ = writeln!(text);
    }
    write_output(out, &text)
}

/// Evaluates the tokenization objective of a vocabulary on the configured
/// corpus and prints it.
pub fn cmd_eval(cfg: &Config, out: Option<&Path>) -> Result<()> {
    let (vocab, meta) = read_vocab_file(&cfg.vocab_path()?)?;
    let corpus_src = load_corpus(cfg)?;
    let params = initial_params(cfg, corpus_src.domain)?;
    let corpus = corpus_src.training_corpus(&params)?;
    let seg = segment_with_vocab(&corpus, &vocab)?;
    // The concavity exponent comes from the vocabulary header so the
    // objective matches the parameters the vocabulary was built with.
    let weights = ObjectiveWeights {
        lambda_lm: cfg.get_f64("eval.lambda_lm", 1.0)?,
        lambda_comp: cfg.get_f64("eval.lambda_comp", 0.01)?,
        lambda_qual: cfg.get_f64("eval.lambda_qual", 1.0)?,
        alpha: meta.alpha,
        epsilon_q: cfg.get_f64("merge.epsilon_q", 1e-8)?,
    };
    let j = evaluate_objective(&vocab, &corpus, &seg, corpus_src.domain, &weights)
        .map_err(IoFormatError::Core)?;
    write_output(out, &format!("objective: {j}\n"))
}

/// Draws a quality-variance importance sample and writes the manifest.
pub fn cmd_sample(cfg: &Config, out: Option<&Path>) -> Result<PathBuf> {
    let corpus_src = load_corpus(cfg)?;
    let params = initial_params(cfg, corpus_src.domain)?;
    let corpus = corpus_src.training_corpus(&params)?;
    let ratio = cfg.get_f64("sample.ratio", 0.5)?;
    let eps = cfg.get_f64(
        "sample.epsilon_base",
        qatok_core::sampler::DEFAULT_EPSILON_BASE,
    )?;
    let seed = cfg.seed()?;
    let ids = stratified_sample(&corpus, ratio, eps, derive_seed(seed, "sampler"))
        .map_err(IoFormatError::Core)?;
    let manifest = Manifest {
        seed,
        ratio,
        epsilon_base: eps,
        ids,
    };
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir().join("manifest.txt"));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_manifest_file(&path, &manifest)?;
    Ok(path)
}

/// Segments a corpus by replaying the vocabulary's merges, reconstructing
/// spans from token lengths.
pub fn segment_with_vocab(
    corpus: &[AtomicSequence],
    vocab: &Vocabulary,
) -> Result<Segmentation> {
    let mut tokens = Vec::with_capacity(corpus.len());
    let mut spans = Vec::with_capacity(corpus.len());
    for seq in corpus {
        let ids = encode(&seq.elements, vocab).map_err(IoFormatError::Core)?;
        let mut sp = Vec::with_capacity(ids.len());
        let mut at = 0u32;
        for &id in &ids {
            let len = vocab.token(id).map_err(IoFormatError::Core)?.atom_len;
            sp.push((at, at + len));
            at += len;
        }
        tokens.push(ids);
        spans.push(sp);
    }
    Segmentation::from_parts(tokens, spans).map_err(IoFormatError::Core)
}

/// Consistency guard used by tests: sharded counting equals sequential.
pub fn count_both_ways(seg: &Segmentation, vocab_size: u32) -> Result<(PairStats, PairStats)> {
    let sequential = count_pairs(seg, vocab_size).map_err(IoFormatError::Core)?;
    let lists: Vec<Vec<TokenId>> = (0..seg.num_sequences())
        .map(|i| seg.tokens_of(i).to_vec())
        .collect();
    let parallel = parallel_count(&lists);
    Ok((sequential, parallel))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            std::fs::write(path, text)?;
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}
