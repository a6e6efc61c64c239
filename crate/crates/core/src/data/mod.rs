//! Image I/O, bicubic degradation, luminance conversion, quality metrics,
//! dihedral transforms and datasets.

mod color;
mod dataset;
pub mod dihedral;
mod io;
mod metrics;
mod resize;
pub mod synth;

pub use color::{quantize, rgb_to_y};
pub use dataset::{Dataset, ImagePair};
pub use dihedral::{self_ensemble, Dihedral};
pub use io::{load_png, save_gray_png, save_png};
pub use metrics::{evaluate, psnr, psnr_y, ssim, ssim_y, EvalRecord, EvalReport, PSNR_CAP};
pub use resize::{bicubic_resize, cubic};
