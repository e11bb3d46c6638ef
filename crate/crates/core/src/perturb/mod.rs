//! Label-error benchmark construction.
//!
//! Ground-truth components are dropped by independent Bernoulli trials whose
//! success probability depends on component size ([`drop_probability`]).
//! Every trial draws from a generator keyed on `(seed, image id, key)`, so
//! the outcome for one component never depends on processing order.
//! Dropped regions end up in an [`ErrorRegistry`], the ground truth of
//! injected label errors.

mod edt;
mod polygon;
mod raster_drop;
mod registry;
mod sampling;
mod smooth;

pub use edt::squared_distance_transform;
pub use polygon::{
    perturb_polygons, rasterize, ClassTable, PolygonAnnotation, PolygonObject, PolygonPerturbation, Rasterization,
};
pub use raster_drop::{perturb_raster, FillRule, RasterPerturbation};
pub use registry::{split_connected, DropReason, ErrorRegistry, RegistryEntry};
pub use sampling::{drop_probability, drops, keyed_uniform, PerturbConfig};
pub use smooth::{gaussian_kernel, smooth_annotation, SmoothConfig};
