//! Knowledge sharing between connected vehicles over regional DAG ledgers.
//!
//! Vehicles train a small driving model locally, publish it as a ledger site
//! that approves two earlier sites, and an RSU per region folds accepted
//! uploads into a global model. The modules build up in that order:
//! [`site`] and [`ledger`] hold the data structure, [`regions`] adds
//! cross-region authentication, [`learning`] the training and aggregation
//! rules, [`analysis`] the closed-form side, and [`sim`] ties them together.

// Validation uses `!(x > 0.0)` style checks on purpose so that NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod crypto;
pub mod error;
pub mod learning;
pub mod ledger;
pub mod model;
pub mod regions;
pub mod sim;
pub mod site;

pub use crypto::{CryptoSuite, Digest, IdentityRef, KeyedDigestScheme, SigningKey};
pub use error::{Error, Result};
pub use learning::{AlphaRule, GlobalModel, SgdConfig, SyntheticTask};
pub use ledger::{AppendOutcome, Ledger, Rejection, RthParams, TipSelection, TipSnapshot};
pub use model::{Dataset, ModelParams, StyleIndicator, TestGap};
pub use regions::{AuthState, Network, RegionId, TopologyConfig};
pub use sim::{run_scenario, EventLog, SimConfig};
pub use site::{Payload, Site, SiteKind};
