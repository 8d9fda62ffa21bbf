//! Polarimetric forward rendering and inverse material recovery for scenes
//! mixing conductors and dielectrics.

pub mod fresnel;
pub mod imageio;
pub mod inverse;
pub mod math;
pub mod pbrdf;
pub mod polcore;
pub mod renderer;
pub mod scene;
