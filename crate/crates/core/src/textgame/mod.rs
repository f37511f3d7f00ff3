//! Text-game evaluation: technical validity, judged compliance and
//! alignment, and agent-played winnability.

pub mod eval;
pub mod game;

pub use eval::*;
pub use game::*;
