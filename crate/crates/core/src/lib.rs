//! Segmentation training with synthetic-data augmentation.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`volio`]: NIFTI-1 volume decoding, axial slicing, power-of-two padding
//!   and lossless grayscale PNG slices.
//! - [`dataset`]: manifests, splits, class remapping, normalization
//!   statistics, class weights and real/synthetic mixing.
//! - [`qc`]: per-pixel Z-score filtering of synthetic label masks.
//! - [`swd`]: sliced Wasserstein distance over Laplacian-pyramid patches and
//!   generator checkpoint selection.
//! - [`unet`]: a from-scratch U-Net with explicit backward passes, weighted
//!   Dice loss and Adam.
//! - [`synthsrc`]: label-range codecs, procedural phantoms and an intensity
//!   renderer standing in for generative models.

pub mod dataset;
pub mod qc;
pub mod seed;
pub mod swd;
pub mod synthsrc;
pub mod unet;
pub mod volio;
