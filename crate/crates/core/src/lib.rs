pub mod ann;
pub mod distance;
pub mod eval;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod representation;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod types;
pub mod ward;

pub use error::{Error, Result};
pub use rng::Rng;
pub use types::{ActionKind, ActionLog, ActionRecord, Embedding, PinId, PinStore, UserId};
