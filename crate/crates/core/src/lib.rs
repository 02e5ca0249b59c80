pub mod geom;
pub mod pnm;
pub mod surfaces;
pub mod shading;
pub mod detect;
pub mod canonical;
pub mod model;
pub mod eval;
