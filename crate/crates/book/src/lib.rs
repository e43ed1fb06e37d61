//! Runs the code blocks of the guide in `book/src` as doc-tests.
//!
//! One module per chapter, so a failing snippet points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/fields.md")]
pub mod fields {}
#[doc = include_str!("../../../book/src/integrability.md")]
pub mod integrability {}
#[doc = include_str!("../../../book/src/charts.md")]
pub mod charts {}
#[doc = include_str!("../../../book/src/level-sets.md")]
pub mod level_sets {}
#[doc = include_str!("../../../book/src/quasi-convexity.md")]
pub mod quasi_convexity {}
#[doc = include_str!("../../../book/src/kkt.md")]
pub mod kkt {}
#[doc = include_str!("../../../book/src/gallery.md")]
pub mod gallery {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
