//! First-returning-photon detection and voxel space carving.

mod detect;
mod grid;

pub use detect::{detect_first_photon, gaussian_smooth, Detection, DetectionPath, DetectorConfig, EdgeRule};
pub use grid::{carve, carving_spheres, squared_edt, CarveError, CarveGrid, CarveSphere, CARVE_VERSION};
