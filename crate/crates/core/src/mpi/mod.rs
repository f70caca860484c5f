//! The expanded multiplane image: storage, rendering and filtering.

pub mod composite;
pub mod filter;
pub mod render;
pub mod resample;
pub mod volume;

pub use composite::{composite, composite_pixel};
pub use filter::{bilateral_filter, BilateralKernel};
pub use render::{render_view, Rendering, ViewGeometry};
pub use resample::resample_plane;
pub use volume::{init_mpi, plane_depths, FreezeMask, MpiInit, MpiVolume, PlaneSpacing};
