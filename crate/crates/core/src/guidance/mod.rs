//! Guided reconstruction: DPS likelihood-gradient guidance and DDNM/DDNM+
//! range–null proximal guidance.

mod ddnm;
mod dps;
mod trace;

pub use ddnm::{
    ddnm_plus_coefficients, ddnm_plus_update, ddnm_reconstruct, ddnm_update, DdnmConfig, DdnmMode,
    SigmaYScale,
};
pub use dps::{dps_guidance_gradient, dps_reconstruct, DpsConfig};
pub use trace::{GuidanceTrace, TraceRecord};
