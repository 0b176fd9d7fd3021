//! On-disk formats: FDMT tensor files, checkpoint containers, raster images.

pub mod fdmt;
pub mod img;
