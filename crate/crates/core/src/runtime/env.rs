use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Duration;

use crate::wire::Origin;
use crate::world::{Endpoint, Rank, VersionTag};

pub const ENV_RANK: &str = "ELASTIC_RANK";
pub const ENV_WORLD_SIZE: &str = "ELASTIC_WORLD_SIZE";
pub const ENV_CONTROLLER: &str = "ELASTIC_CONTROLLER";
pub const ENV_EPOCH: &str = "ELASTIC_EPOCH";
pub const ENV_PENDING: &str = "ELASTIC_PENDING";
pub const ENV_ORIGIN: &str = "ELASTIC_ORIGIN";
pub const ENV_RESTORE: &str = "ELASTIC_RESTORE";
pub const ENV_JOBID: &str = "ELASTIC_JOBID";
pub const ENV_CONFIG: &str = "ELASTIC_CONFIG";
pub const ENV_CONNECT_TIMEOUT_MS: &str = "ELASTIC_CONNECT_TIMEOUT_MS";

/// Everything a rank learns from its launcher.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuntimeEnv {
    pub rank: Rank,
    pub world_size: u32,
    pub controller: Endpoint,
    pub epoch: VersionTag,
    /// Set for ranks that must wait in init for `epoch` to commit.
    pub pending: bool,
    pub origin: Origin,
    pub restore: Option<PathBuf>,
    pub jobid: String,
    pub config: Option<PathBuf>,
    pub connect_timeout: Duration,
}

impl RuntimeEnv {
    pub fn from_env() -> Result<RuntimeEnv, String> {
        RuntimeEnv::from_map(&std::env::vars().collect())
    }

    pub fn from_map(vars: &HashMap<String, String>) -> Result<RuntimeEnv, String> {
        let get = |k: &str| vars.get(k).map(String::as_str);
        let need = |k: &str| get(k).ok_or_else(|| format!("{k} is not set"));
        let num = |k: &str| -> Result<u32, String> {
            need(k)?
                .parse::<u32>()
                .map_err(|_| format!("{k} is not a non-negative integer"))
        };
        let rank = num(ENV_RANK)?;
        let world_size = num(ENV_WORLD_SIZE)?;
        if world_size == 0 {
            return Err(format!("{ENV_WORLD_SIZE} must be positive"));
        }
        let controller: Endpoint = need(ENV_CONTROLLER)?.parse()?;
        let epoch = match get(ENV_EPOCH) {
            Some(_) => VersionTag(num(ENV_EPOCH)?),
            None => VersionTag::INITIAL,
        };
        let pending = matches!(get(ENV_PENDING), Some("1") | Some("true"));
        let origin = match get(ENV_ORIGIN) {
            Some(s) => Origin::parse(s).ok_or_else(|| format!("{ENV_ORIGIN}={s:?} is unknown"))?,
            None if pending => Origin::GrowNew,
            None => Origin::Launched,
        };
        let restore = get(ENV_RESTORE).filter(|s| !s.is_empty()).map(PathBuf::from);
        if matches!(origin, Origin::Restored | Origin::ForkChild) && restore.is_none() {
            return Err(format!("{ENV_RESTORE} is required for {} ranks", origin.as_str()));
        }
        let connect_timeout = match get(ENV_CONNECT_TIMEOUT_MS) {
            Some(ms) => Duration::from_millis(
                ms.parse()
                    .map_err(|_| format!("{ENV_CONNECT_TIMEOUT_MS} is not a number"))?,
            ),
            None => Duration::from_secs(10),
        };
        Ok(RuntimeEnv {
            rank,
            world_size,
            controller,
            epoch,
            pending,
            origin,
            restore,
            jobid: get(ENV_JOBID).unwrap_or("job").to_string(),
            config: get(ENV_CONFIG).map(PathBuf::from),
            connect_timeout,
        })
    }

    /// Inverse of [`from_map`](Self::from_map), used by the fault daemons.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![
            (ENV_RANK.to_string(), self.rank.to_string()),
            (ENV_WORLD_SIZE.to_string(), self.world_size.to_string()),
            (ENV_CONTROLLER.to_string(), self.controller.to_string()),
            (ENV_EPOCH.to_string(), self.epoch.0.to_string()),
            (
                ENV_PENDING.to_string(),
                if self.pending { "1" } else { "0" }.to_string(),
            ),
            (ENV_ORIGIN.to_string(), self.origin.as_str().to_string()),
            (ENV_JOBID.to_string(), self.jobid.clone()),
            (
                ENV_CONNECT_TIMEOUT_MS.to_string(),
                self.connect_timeout.as_millis().to_string(),
            ),
        ];
        if let Some(p) = &self.restore {
            out.push((ENV_RESTORE.to_string(), p.display().to_string()));
        }
        if let Some(p) = &self.config {
            out.push((ENV_CONFIG.to_string(), p.display().to_string()));
        }
        out
    }
}
