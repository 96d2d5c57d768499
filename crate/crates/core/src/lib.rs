pub mod canonical;
pub mod contract;
pub mod crypto;
pub mod ledger;
pub mod replication;
pub mod store;
pub mod tx;
pub mod workload;
