pub mod archive;
pub mod dds;
pub mod error;
pub mod gcc;
pub mod graph;
pub mod harness;
pub mod io;
pub mod mrl;
pub mod room;
pub mod rtf;
pub mod synth;

pub use error::{Error, Result};
pub use rustfft::num_complex::Complex64;
