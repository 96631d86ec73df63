//! Metric reconstruction: triangulation, rigid alignment, object pose
//! fitting and mask alignment.

mod align;
mod chamfer;
mod mesh;
mod object;
mod triangulate;

pub use align::{geodesic_angle, kabsch, matrix_to_rot6d, rot6d_to_matrix, umeyama, Rot6dJacobian, Similarity};
pub use chamfer::{
    chamfer_2d, chamfer_2d_brute, chamfer_align_frame, cuboid_symmetries, random_rotation, symmetric_rotation_error,
    translation_from_bbox, ChamferAlignConfig, ChamferAlignment, PointGrid,
};
pub use mesh::{render_mask, MaskImage, TriMesh};
pub use object::{
    estimate_scale, fit_object_trajectory, init_object_trajectory, init_pose_frame, keypoints_from_pose,
    object_objective, project_keypoints, refine_object_trajectory, CanonicalKeypoints, FitOptimizer, ObjectFit,
    ObjectFitConfig, ObjectPose, ObjectiveEval,
};
pub use triangulate::{
    triangulate_point, triangulate_sequence, Observation, PointEstimate, Triangulation, TriangulationConfig,
};
