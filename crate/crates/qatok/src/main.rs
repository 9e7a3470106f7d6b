use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qatok::config::Config;
use qatok::{pipeline, IoFormatError};

const CONFIG_HELP: &str = "\
Config file: `key = value` lines, `#` comments. Keys and defaults:
  domain                genomics | finance (required)
  mode                  greedy | greedy+stage2 | full   [greedy]
  input                 input path: FASTQ (genomics) or LOB CSV (finance)
  vocab                 vocabulary file (encode/decode/inspect/eval)
  params                parameter checkpoint shown by inspect
  merges                merge budget for train             [64]
  seed                  root seed                          [0]
  out_dir               artifact directory                 [qatok-out]
  merge.alpha           quality sensitivity    [0.72 genomics / 0.95 finance]
  merge.epsilon_f       association stabilizer             [1e-8]
  merge.epsilon_q       quality stabilizer                 [1e-8]
  quality.beta_pos      genomics positional decay          [0.014]
  quality.epsilon_len   decay denominator stabilizer       [1e-6]
  quality.beta_vol      finance volatility scaling         [0.5]
  quality.gamma_vol     expected-vol EWMA decay            [0.94]
  quality.alpha_spread  spread tolerance                   [0.01]
  quality.vol_lookback  volume stats lookback              [252]
  quality.w_liq/w_sig/w_stb/w_info  component weights [0.45/0.25/0.15/0.15]
  lob.price_bins/spread_bins/imbalance_bins/time_bins  [10/10/5/5]
  lob.range_ticks       price & spread bin range           [5]
  lob.time_min_s / lob.time_max_s  log-spaced time range   [0.001 / 60]
  lob.initial_mid / lob.initial_spread  starting levels    [10000 / 1]
  rl.episodes           stage-1 episodes                   [30]
  rl.horizon            merges per episode (max 200)       [8]
  rl.k_pq               candidate queue width              [50]
  rl.clip / rl.gae_lambda / rl.gamma      [0.2 / 0.95 / 0.99]
  rl.value_coef / rl.entropy_coef         [0.5 / 0.01]
  rl.epochs_per_update / rl.episodes_per_update  [4 / 4]
  rl.lr_policy / rl.lr_value              [3e-4 / 1e-3]
  rl.epsilon_start / rl.epsilon_final     [0.5 / 0.05]
  stage2.iterations     adaptive-learning steps            [40]
  stage2.eta            initial learning rate              [0.05]
  stage2.k_candidates   relaxed-selection width            [8]
  stage2.steps          simulated merges per sequence      [3]
  stage2.lambda_reg     L2 regularization                  [1e-4]
  stage2.tau_init / stage2.beta_anneal / stage2.tau_floor  [1.0 / 3.0 / 0.1]
  stage2.reward_norm    identity | batch                   [identity]
  eval.lambda_lm / eval.lambda_comp / eval.lambda_qual  [1.0 / 0.01 / 1.0]
  sample.ratio          subset ratio in (0, 1]             [0.5]
  sample.epsilon_base   variance floor                     [1e-6]

Env: QATOK_THREADS caps worker threads.";

#[derive(Parser)]
#[command(
    name = "qatok",
    about = "Quality-aware subword vocabulary training and tokenization",
    after_long_help = CONFIG_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Path to the config file.
    #[arg(long)]
    config: PathBuf,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (train: artifact directory; others: output file).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a vocabulary per the configured mode.
    Train(Common),
    /// Encode input sequences into token ids.
    Encode(Common),
    /// Decode token-id lines back into symbols.
    Decode(Common),
    /// Print vocabulary and parameter statistics.
    Inspect(Common),
    /// Evaluate the tokenization objective of a vocabulary.
    Eval(Common),
    /// Draw a quality-variance importance sample.
    Sample(Common),
}

fn load_config(common: &Common) -> Result<Config, IoFormatError> {
    let mut cfg = Config::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.set("seed", seed.to_string());
    }
    Ok(cfg)
}

fn exit_code_for(err: &IoFormatError) -> u8 {
    match err {
        IoFormatError::Config { .. } | IoFormatError::ConfigValue(_) => 2,
        IoFormatError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 2,
        IoFormatError::Core(qatok_core::Error::NonFiniteLoss { .. }) => 3,
        _ => 1,
    }
}

fn run() -> Result<(), IoFormatError> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(common) => {
            let cfg = load_config(common)?;
            let arts = pipeline::cmd_train(&cfg, common.out.as_deref())?;
            println!("vocab: {}", arts.vocab_path.display());
            println!("params: {}", arts.params_path.display());
            if let Some(p) = &arts.policy_path {
                println!("policy: {}", p.display());
            }
            println!("merges executed: {}", arts.merges_executed);
            Ok(())
        }
        Command::Encode(common) => {
            let cfg = load_config(common)?;
            pipeline::cmd_encode(&cfg, common.out.as_deref())
        }
        Command::Decode(common) => {
            let cfg = load_config(common)?;
            pipeline::cmd_decode(&cfg, common.out.as_deref())
        }
        Command::Inspect(common) => {
            let cfg = load_config(common)?;
            pipeline::cmd_inspect(&cfg, common.out.as_deref())
        }
        Command::Eval(common) => {
            let cfg = load_config(common)?;
            pipeline::cmd_eval(&cfg, common.out.as_deref())
        }
        Command::Sample(common) => {
            let cfg = load_config(common)?;
            let path = pipeline::cmd_sample(&cfg, common.out.as_deref())?;
            println!("manifest: {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
