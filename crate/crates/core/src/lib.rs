pub mod arch;
pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod study;
pub mod tensor;
pub mod trainer;

pub use error::{NlcError, Result};
