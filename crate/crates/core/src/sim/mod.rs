//! Seeded discrete-event simulation of vehicles sharing knowledge through
//! regional ledgers.

pub mod adl;
pub mod config;
pub mod events;
pub mod ledger_run;
pub mod output;
pub mod population;
pub mod scenarios;
pub mod thinning;

pub use adl::{run_adl, run_central, run_fedave, AdlOutcome, AdlSettings, Environment, Gate};
pub use config::{ArrivalModel, AttackMode, SimConfig};
pub use events::{Event, EventQueue};
pub use ledger_run::{relative_drift, sample_arrivals, LedgerRun};
pub use output::{write_outputs, CsvFamily, EventLog, RoundRecord, RunManifest, Series, MANIFEST_FILE};
pub use population::{stream_rng, Icv, Population, Role};
pub use scenarios::{run_scenario, SCENARIOS};
pub use thinning::simulate_interval_approvals;
