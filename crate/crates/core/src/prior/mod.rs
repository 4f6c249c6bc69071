//! Diffusion prior: covariance factor, noise schedule, denoisers and the
//! unconditional hybrid Langevin sampler.

mod covariance;
mod langevin;
pub mod library;
mod mixture;
mod schedule;

pub use covariance::{CovarianceFactor, CovarianceKind};
pub use langevin::{
    score_from_denoised, unconditional_sample, unconditional_sample_latent, LangevinParams,
};
pub use library::{build_library_prior, library_structures, load_library_dir, DecoyKind, LibrarySpec};
pub use mixture::{mixture_denoise, Denoiser, GaussianMixturePrior, MixtureComponent, MixtureDenoiser};
pub use schedule::{NoiseSchedule, ScheduleParams};
