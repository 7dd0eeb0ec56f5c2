//! Doctest harness for the mdbook guide in `book/`.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/zero-shot.md")]
pub mod zero_shot {}

#[doc = include_str!("../../../book/src/linear-probe.md")]
pub mod linear_probe {}

#[doc = include_str!("../../../book/src/anchor-penalties.md")]
pub mod anchor_penalties {}

#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/protocols.md")]
pub mod protocols {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
