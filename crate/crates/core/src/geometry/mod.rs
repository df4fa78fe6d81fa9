//! Point-cloud algorithms: sampling, neighbours, set distances and token alignment.

mod cluster;
mod distance;
mod points;
mod sampling;

pub use cluster::{cluster_partition, repeat_align, ClusterAssignment};
pub use distance::{
    chamfer_distance, earth_movers_distance, hungarian, nearest_neighbors, sinkhorn_plan,
    transport_plan, TransportPlan, EXACT_EMD_CAP,
};
pub use points::{bbox_diagonal, dist2, PointSet};
pub use sampling::{farthest_point_sampling, knn, knn_with_distances};
