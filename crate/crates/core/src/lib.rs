//! Unsupervised person re-identification from 3D skeleton sequences.
//!
//! Skeletons are turned into part, body and hyper-body graphs
//! ([`skeldata`]), encoded by structural and collaborative relation layers
//! ([`relnet`]), trained without labels by alternating density clustering
//! with prototype contrastive learning ([`spc`]), and evaluated with
//! CMC, mAP, mACT and mRCL ([`evalkit`]).

pub mod error;
pub mod evalkit;
pub mod numkit;
pub mod relnet;
pub mod skeldata;
pub mod spc;
pub mod synthgait;

pub use error::{Error, Result};
