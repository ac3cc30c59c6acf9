//! Visual action planning under data scarcity: latent space roadmaps extended
//! with dataset augmentation, roadmap shortcuts and targeted exploration.

pub mod ace;
pub mod data;
pub mod embed;
pub mod eval;
pub mod learn;
pub mod lpm;
pub mod mapping;
pub mod roadmap;
pub mod sim;
pub mod suggestion;

pub use sim::{ActionTable, BoxWorld, GridAction, Observation, SimConfig, UnderlyingState};
