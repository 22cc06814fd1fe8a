//! The book chapters, compiled as doctests.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../book/src/distortion.md")]
pub mod distortion {}
#[doc = include_str!("../../book/src/identifiability.md")]
pub mod identifiability {}
#[doc = include_str!("../../book/src/second-order.md")]
pub mod second_order {}
#[doc = include_str!("../../book/src/non-gaussian.md")]
pub mod non_gaussian {}
#[doc = include_str!("../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../README.md")]
pub mod readme {}
