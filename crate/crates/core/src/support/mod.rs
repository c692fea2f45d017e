//! Verification harness for the support theorem: bodies `K`, geodesics
//! avoiding `K`, their deformation to the boundary, cone sweeps and the
//! certificate.

pub mod body;
pub mod cone;
pub mod geometry;
pub mod verify;

pub use body::{body_registry, Annulus, Ball, ConvexBody, ExpressionBody};
pub use cone::{cone_sweep, Cone, ConeSweep, SkippedMember, SweepOptions};
pub use geometry::{
    avoiding_geodesic_through, boundary_projection, clearance, deform_to_boundary, dichotomy_holds,
    half_ray_meets, is_geodesically_convex, projection_jumps, Avoiding, ConvexityReport,
    DeformOptions, GeodesicFamily,
};
pub use verify::{
    verify_support_theorem, Certificate, PointClass, StitchedPoint, SupportVerification,
    VerifyOptions,
};
