//! CSV audit logs written during training.

use std::io::Write;
use std::path::Path;

use qatok_core::adaptive::TraceRow;
use qatok_core::rewards::RewardComponent;
use qatok_core::rl_env::EpisodeLog;

use crate::Result;

/// `step,component,raw,normalized` rows from the reward engine.
pub fn write_reward_trace(
    path: &Path,
    trace: &[(usize, RewardComponent, f64, f64)],
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "step,component,raw,normalized")?;
    for (step, component, raw, normalized) in trace {
        writeln!(f, "{step},{},{raw},{normalized}", component.name())?;
    }
    Ok(())
}

/// `episode,mean_reward,entropy,value_loss` rows from PPO training.
pub fn write_training_log(path: &Path, log: &[EpisodeLog]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "episode,mean_reward,entropy,value_loss")?;
    for row in log {
        writeln!(
            f,
            "{},{},{},{}",
            row.episode, row.mean_reward, row.entropy, row.value_loss
        )?;
    }
    Ok(())
}

/// `iter,tau,task_loss,total_loss,alpha` rows from adaptive training.
pub fn write_loss_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "iter,tau,task_loss,total_loss,alpha")?;
    for row in trace {
        writeln!(
            f,
            "{},{},{},{},{}",
            row.iter, row.tau, row.task_loss, row.total_loss, row.alpha
        )?;
    }
    Ok(())
}
