//! The guide under `book/`, compiled so that its code listings run as doctests.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}
#[doc = include_str!("../../../book/src/saliency.md")]
pub mod saliency {}
#[doc = include_str!("../../../book/src/oamix.md")]
pub mod oamix {}
#[doc = include_str!("../../../book/src/oaloss.md")]
pub mod oaloss {}
#[doc = include_str!("../../../book/src/detector.md")]
pub mod detector {}
#[doc = include_str!("../../../book/src/benchmark.md")]
pub mod benchmark {}
#[doc = include_str!("../../../book/src/determinism.md")]
pub mod determinism {}
