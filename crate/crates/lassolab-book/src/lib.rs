//! The guide's code samples, compiled and run by `cargo test --doc`.
//!
//! mdbook renders `book/src` but cannot execute snippets against crate
//! dependencies, so each chapter is also included here as a doc comment and
//! rustdoc runs the fenced Rust blocks as doctests. One module per chapter,
//! so a failing doctest names the chapter it came from.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/program-family.md")]
pub mod program_family {}

#[doc = include_str!("../../../book/src/solving.md")]
pub mod solving {}

#[doc = include_str!("../../../book/src/certificates.md")]
pub mod certificates {}

#[doc = include_str!("../../../book/src/dictionaries.md")]
pub mod dictionaries {}

#[doc = include_str!("../../../book/src/random-instances.md")]
pub mod random_instances {}

#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
