pub mod basis;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod io;
pub mod quadrature;
pub mod regularizer;
pub mod scalespace;
mod spectral;
pub mod toytrain;
pub mod transition;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/bases.md")]
    mod bases {}
    #[doc = include_str!("../../../book/src/transition.md")]
    mod transition {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/scalespace.md")]
    mod scalespace {}
    #[doc = include_str!("../../../book/src/regularizer.md")]
    mod regularizer {}
    #[doc = include_str!("../../../book/src/toytrain.md")]
    mod toytrain {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
