//! Campaigns, file formats and the command-line front end.

pub mod campaign;
pub mod error;
pub mod formats;
pub mod parallel;
pub mod store;

pub use campaign::{run_campaign, CampaignSpec, Command, LimitStateKind, Summary};
pub use error::{Error, Result};
