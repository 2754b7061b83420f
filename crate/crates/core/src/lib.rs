//! Fixed-length pictorial text encodings.
//!
//! Text is cleaned, split into subwords, embedded and compressed by a
//! convolution + TSLFN variational autoencoder into a vector of `dim_e`
//! values, which is min-max normalised, scaled to 8 bits and reshaped into a
//! grayscale (or RGB) image. A twin-channel TSLFN classifier scores semantic
//! similarity between two such images.

pub mod corpus;
pub mod imager;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod sts;
pub mod synthetic;
pub mod tokenizer;
pub mod training;
pub mod vae;
