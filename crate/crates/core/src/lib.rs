//! A desk-scale laboratory for the All-Path family of Ethernet switching
//! protocols.
//!
//! - [`topology`]: bridge/host graphs, grid generators and path enumeration.
//! - [`protocol`]: per-bridge state machines for ARP-Path, Flow-Path and
//!   Bridge-Path.
//! - [`simnet`]: deterministic discrete-event simulator driving the protocols
//!   over a topology, with packet-level control frames and fluid data flows.
//! - [`scalability`]: closed forms for path counts and table sizes.
//! - [`qbd`]: the two-path Markov model of join-max-available-capacity routing,
//!   solved densely and by block elimination.
//! - [`balance`]: flow-level simulation of the same scheduler over N paths,
//!   including a mice/elephant data-center mixture.

pub mod balance;
pub mod format;
pub mod protocol;
pub mod qbd;
pub mod scalability;
pub mod simnet;
pub mod topology;
