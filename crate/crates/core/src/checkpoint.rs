//! Versioned checkpoint files for single networks and full agent ensembles.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::maddpg::AgentEnsemble;
use crate::tensor::Net;
use crate::{Error, Result};

const NET_FORMAT: &str = "cordex-net";
const ENSEMBLE_FORMAT: &str = "cordex-ensemble";
const VERSION: u32 = 1;

/// One network with its format tag: layer dims plus row-major parameters.
#[derive(Debug, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format: String,
    pub version: u32,
    pub net: Net,
}

impl NetCheckpoint {
    pub fn new(net: Net) -> Self {
        NetCheckpoint {
            format: NET_FORMAT.to_string(),
            version: VERSION,
            net,
        }
    }
}

pub fn save_net(path: &Path, net: &Net) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        file,
        &NetCheckpoint {
            format: NET_FORMAT.to_string(),
            version: VERSION,
            net: net.clone(),
        },
    )?;
    Ok(())
}

pub fn load_net(path: &Path) -> Result<Net> {
    let file = BufReader::new(File::open(path)?);
    let ckpt: NetCheckpoint = serde_json::from_reader(file)?;
    if ckpt.format != NET_FORMAT {
        return Err(Error::Format(format!("not a net checkpoint: {}", ckpt.format)));
    }
    if ckpt.version != VERSION {
        return Err(Error::Format(format!("unsupported net version {}", ckpt.version)));
    }
    Ok(ckpt.net)
}

/// A full training snapshot: config, influencer assignment, and every
/// online/target network.
#[derive(Debug, Serialize, Deserialize)]
pub struct EnsembleCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub influencer: usize,
    pub episodes_trained: usize,
    pub actors: Vec<Net>,
    pub critics: Vec<Net>,
    pub target_actors: Vec<Net>,
    pub target_critics: Vec<Net>,
}

impl EnsembleCheckpoint {
    pub fn from_ensemble(
        ensemble: &AgentEnsemble,
        config: &RunConfig,
        episodes_trained: usize,
    ) -> Self {
        EnsembleCheckpoint {
            format: ENSEMBLE_FORMAT.to_string(),
            version: VERSION,
            config: config.clone(),
            influencer: ensemble.influencer,
            episodes_trained,
            actors: ensemble.actors.clone(),
            critics: ensemble.critics.clone(),
            target_actors: ensemble.target_actors.clone(),
            target_critics: ensemble.target_critics.clone(),
        }
    }

    /// Rebuilds a usable ensemble; optimizer moments restart from zero.
    pub fn into_ensemble(self) -> Result<(AgentEnsemble, RunConfig, usize)> {
        let spec = crate::envs::make_env(self.config.env).spec().clone();
        let mut ensemble = AgentEnsemble::new(
            &spec,
            &self.config.hidden,
            self.config.layer_norm,
            self.config.actor_lr,
            self.config.critic_lr,
            self.config.gamma,
            self.influencer,
            self.config.seed,
        )?;
        let n = ensemble.n_agents;
        if self.actors.len() != n || self.critics.len() != n {
            return Err(Error::Format("checkpoint net count mismatch".into()));
        }
        for i in 0..n {
            ensemble.actors[i].copy_params_from(&self.actors[i]);
            ensemble.critics[i].copy_params_from(&self.critics[i]);
            ensemble.target_actors[i].copy_params_from(&self.target_actors[i]);
            ensemble.target_critics[i].copy_params_from(&self.target_critics[i]);
        }
        Ok((ensemble, self.config, self.episodes_trained))
    }
}

pub fn save_ensemble(path: &Path, ckpt: &EnsembleCheckpoint) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer(file, ckpt)?;
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<EnsembleCheckpoint> {
    let file = BufReader::new(File::open(path)?);
    let ckpt: EnsembleCheckpoint = serde_json::from_reader(file)?;
    if ckpt.format != ENSEMBLE_FORMAT {
        return Err(Error::Format(format!(
            "not an ensemble checkpoint: {}",
            ckpt.format
        )));
    }
    if ckpt.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported ensemble version {}",
            ckpt.version
        )));
    }
    Ok(ckpt)
}
