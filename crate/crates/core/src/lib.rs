pub mod autograd;
pub mod cli;
pub mod corpus;
pub mod curriculum;
pub mod decoder;
pub mod encoder;
pub mod ial;
pub mod metrics;
pub mod model;
pub mod retrieval;
pub mod synthetic;
pub mod trainer;
