//! Two-step design: the prescription lens against the eye model, then the
//! folded display path against foveated image-quality targets.

pub mod ar_path;
pub mod constraints;
pub mod lens;
pub mod lm;
pub mod merit;
pub mod optimize;
pub mod params;

pub use ar_path::{build_ar_system, build_ar_system_with_lens, ArSystem};
pub use constraints::{validate_design, ConstraintReport};
pub use lens::{design_prescription_lens, direct_lens_profiles, PrescriptionLensDesign};
pub use merit::{foveated_weights, merit, MeritSpec, MeritValue};
pub use optimize::{optimize, OptimizeOptions, OptimizeResult};
pub use params::{DesignParams, DisplaySpec, Param};
