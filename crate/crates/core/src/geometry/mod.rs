//! Ground-truth encoding, box decoding, polygon IoU and NMS.

mod decode;
mod encode;
pub mod io;
mod nms;
mod polygon;

pub use decode::{decode_quad, decode_rbox, MIN_BOX_AREA};
pub use encode::{cell_center, encode_ground_truth, DEFAULT_SHRINK};
pub use nms::{greedy_nms, locality_aware_nms, merge_consecutive, MergedBox};
pub use polygon::{
    canonical_order, clip_polygon, contains_point, edge_length, intersection_area, min_area_rect, normalize_angle,
    polygon_area, polygon_iou, rbox_corners, shortest_edge, shrink_quad, signed_area, DetectionBox, Point, Quad,
    TextPolygon,
};
