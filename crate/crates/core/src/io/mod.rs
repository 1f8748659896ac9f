pub mod config;
pub mod field_io;
pub mod scenario;

pub use config::*;
pub use field_io::*;
pub use scenario::*;
