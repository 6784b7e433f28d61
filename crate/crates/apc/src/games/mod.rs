//! Concrete mixed-motive environments behind the [`Environment`] trait.

pub mod coin;
pub mod foraging;
pub mod grid;
pub mod ipgg;
pub mod snowdrift;
pub mod stag;

use crate::env::Environment;
use serde::{Deserialize, Serialize};

pub use ipgg::{ipgg_rewards, mipgg_rewards, ContributionLevel, IpggParams, PublicGoodsEnv};

/// The seven shipped games.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    Ipgg,
    Mipgg,
    CoinGame,
    Ssg,
    Ssh,
    Mssh,
    Foraging,
}

impl GameKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GameKind::Ipgg => "ipgg",
            GameKind::Mipgg => "mipgg",
            GameKind::CoinGame => "coin_game",
            GameKind::Ssg => "ssg",
            GameKind::Ssh => "ssh",
            GameKind::Mssh => "mssh",
            GameKind::Foraging => "foraging",
        }
    }

    /// Matrix games key their harm model on exact contexts; gridworlds use
    /// the function approximator.
    pub fn is_tabular(&self) -> bool {
        matches!(self, GameKind::Ipgg | GameKind::Mipgg)
    }
}

/// Environment-specific knobs a config may override.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvParams {
    pub name: GameKind,
    /// Agent count (public goods games only; gridworlds fix their roster).
    pub num_agents: Option<usize>,
    pub endowment: Option<f64>,
    pub multiplier: Option<f64>,
    pub horizon: Option<usize>,
}

impl EnvParams {
    pub fn named(name: GameKind) -> Self {
        EnvParams {
            name,
            num_agents: None,
            endowment: None,
            multiplier: None,
            horizon: None,
        }
    }
}

pub fn build_env(params: &EnvParams) -> Result<Box<dyn Environment>, crate::env::EnvError> {
    let env: Box<dyn Environment> = match params.name {
        GameKind::Ipgg | GameKind::Mipgg => {
            let ipgg = IpggParams {
                n: params.num_agents.unwrap_or(5),
                e: params.endowment.unwrap_or(1.0),
                r: params.multiplier.unwrap_or(3.0),
            };
            ipgg.validate()?;
            let graded = params.name == GameKind::Mipgg;
            Box::new(PublicGoodsEnv::new(
                ipgg,
                graded,
                params.horizon.unwrap_or(10),
            ))
        }
        GameKind::CoinGame => Box::new(coin::CoinGameEnv::new(params.horizon.unwrap_or(50))),
        GameKind::Ssg => Box::new(snowdrift::SnowdriftEnv::new(params.horizon.unwrap_or(50))),
        GameKind::Ssh => Box::new(stag::StagHuntEnv::new(false, params.horizon.unwrap_or(50))),
        GameKind::Mssh => Box::new(stag::StagHuntEnv::new(true, params.horizon.unwrap_or(50))),
        GameKind::Foraging => Box::new(foraging::ForagingEnv::new(params.horizon.unwrap_or(100))),
    };
    env.spec().validate()?;
    Ok(env)
}
