pub mod cbc;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod rig;
pub mod seed;
pub mod signals;
pub mod surface;
pub mod sysid;

pub use error::{Error, Result};
