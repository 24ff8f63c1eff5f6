//! Weakly supervised instance-segmentation dataset factory.
//!
//! Turns single-class turntable photographs into annotated training data:
//! [`labeler`] extracts instance masks by background subtraction and saliency
//! thresholding, [`augment`] pastes the harvested objects into synthetic
//! scenes, [`relight`] re-shades composites from depth with a Phong
//! spotlight, and [`dataset`] handles persistence, COCO interchange and mask
//! mAP evaluation.

// `!(a > b)` checks double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod dataset;
pub mod error;
pub mod imaging;
pub mod labeler;
pub mod relight;
pub mod synthetic;

pub use error::{Error, Result};
pub use labeler::InstanceAnnotation;
