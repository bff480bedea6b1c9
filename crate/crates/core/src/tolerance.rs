//! Numeric tolerances shared by operations and tests.

/// Triangles with a smaller area are dropped when a mesh is constructed.
pub const DEGENERATE_AREA_MM2: f64 = 1e-9;

/// Max-norm bound on `RᵀR − I` for a valid rotation.
pub const ROTATION_ORTHONORMAL_TOL: f64 = 1e-9;

/// Allowed deviation of a plane normal from unit length.
pub const PLANE_NORMAL_TOL: f64 = 1e-9;

/// Orientation columns of a volume must be orthonormal to this tolerance.
pub const ORIENTATION_TOL: f64 = 1e-4;

/// Relative tolerance on uniform inter-slice spacing of a DICOM series.
pub const SLICE_SPACING_REL_TOL: f64 = 0.01;

/// Samples exactly at the iso value are nudged upward by this amount.
pub const ISO_TIE_NUDGE: f64 = 1e-6;

/// Edge-crossing parameters are clamped to `[EDGE_T_CLAMP, 1 - EDGE_T_CLAMP]`
/// so marching-cubes vertices never collapse onto grid corners.
pub const EDGE_T_CLAMP: f64 = 0.01;

/// Plane classification tolerance used by the BSP boolean path.
pub const BSP_EPSILON: f64 = 1e-6;

/// Vertex weld distance for polygon soups produced by the BSP path.
pub const WELD_EPSILON: f64 = 1e-6;

/// Vertices closer than this to a cutting plane are treated as lying on it.
pub const CUT_SNAP_MM: f64 = 1e-5;

/// Printer accuracy; the smallest printable feature.
pub const PRINT_ACCURACY_MM: f64 = 0.1;

/// Maximum tolerated overlap between distinct assembly parts.
pub const MAX_INTERFERENCE_MM3: f64 = 1.0;

/// Relative tolerance of the split-mould volume conservation check.
pub const VOLUME_CONSERVATION_REL_TOL: f64 = 0.005;

/// Default voxel size for SDF offsetting and voxel booleans.
pub const DEFAULT_VOXEL_MM: f64 = 0.4;
