pub mod autograd;
pub mod cli;
pub mod corpus;
pub mod dropout;
pub mod eval;
pub mod model;
pub mod rng;
pub mod trainer;
