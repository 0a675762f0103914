//! Watertight meshes, the exact occupancy oracle, and query/surface sampling.

mod mesh;
pub mod obj;
mod occupancy;
pub mod primitives;
mod sampling;

pub use mesh::{Aabb, Normalization, TriangleMesh, NORMALIZED_EXTENT};
pub use occupancy::{closest_point_on_triangle, distance_to_mesh, occupancy_query, winding_number};
pub use sampling::{
    point_in_triangle, sample_faces_weighted, sample_query_points, sample_surface_points, OccupancySample,
    QuerySampling,
};
