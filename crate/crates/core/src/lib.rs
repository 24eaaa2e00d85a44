//! Identity control plane core: identity normalization, IPL policy
//! evaluation, transaction-token brokering, trust-bundle federation and a
//! hash-chained audit log.

pub mod audit;
pub mod broker;
pub mod canonical;
pub mod clock;
pub mod federation;
pub mod identity;
pub mod policy;
