pub mod cli;
pub mod embed;
pub mod model;
pub mod perturb;
pub mod score;
pub mod structure;
pub mod vocab;
