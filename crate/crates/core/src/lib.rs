//! Deterministic discrete-event simulator of a wireless train backbone:
//! backbone nodes discover the train and run a two-phase inauguration over
//! a radio layer built from measured channel models and LTE PER curves,
//! while function-domain traffic is measured against its requirements.

pub mod backbone;
pub mod channel;
pub mod engine;
pub mod scenario;
pub mod sim;
pub mod topology;
pub mod traffic;
