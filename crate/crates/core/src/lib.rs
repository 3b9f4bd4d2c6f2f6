//! Interactive graph discovery.
//!
//! Maintains a signed-confidence prediction over every directed variable
//! pair, spends an experiment budget on the pairs it is least sure about and
//! propagates each binary outcome to neighbouring pairs through local
//! predictor updates.

pub mod graph;
pub mod predictor;
pub mod analysis;
pub mod engine;
pub mod synth;
