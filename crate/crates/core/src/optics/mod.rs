//! Camera optics: lens prescriptions, sequential tracing with dispersion
//! and aperture diffraction, and analytic projection models.

mod camera;
mod lens;
mod trace;

pub use camera::{fisheye_project, pinhole_project, AnalyticCamera, AnalyticModel, CameraPose};
pub use lens::{bundled_lens, parse_lens, BUNDLED_LENSES, write_lens, IndexModel, LensError, LensPrescription, LensSurface, SurfaceShape};
pub use trace::{
    hurb_perturb, hurb_sigma, intersect_surface, paraxial_focus, refract, trace_from_scene, trace_through_lens,
    OpticalRay, ParaxialFocus, SurfaceHit, Vignette, HURB_MIN_DISTANCE, NEWTON_MAX_ITER, NEWTON_TOLERANCE,
};
