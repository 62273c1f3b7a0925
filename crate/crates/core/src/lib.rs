pub mod attack;
pub mod defense;
pub mod harness;
pub mod metrics;
pub mod score;
pub mod tensor;
pub mod vfl;
