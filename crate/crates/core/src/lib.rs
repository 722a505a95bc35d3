pub mod autodiff;
pub mod cli;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod model;
pub mod train;
