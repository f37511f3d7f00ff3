pub mod env;
pub mod eval;
pub mod planner;

pub use env::*;
pub use eval::*;
pub use planner::*;
