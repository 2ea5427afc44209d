pub mod linalg;
pub mod polyforms;
pub mod quadrature;
pub mod complex;
pub mod fesystem;
pub mod harmonic;
pub mod tensorfes;
pub mod mirrors;
pub mod assembly;
pub mod smoothing;
pub mod fixtures;
