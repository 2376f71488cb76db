//! File formats and command-line front end for [`ocvcap_core`].

pub mod cli;
pub mod io;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeDoctests;
