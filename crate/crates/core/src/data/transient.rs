use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::geometry::{tangent_frame, Vec3, SPEED_OF_LIGHT};

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("wall positions are not coplanar: point {index} is {distance:e} m off the plane")]
    NotCoplanar { index: usize, distance: f64 },
    #[error("wall normal must be a unit vector, |n| = {0}")]
    NormalNotUnit(f64),
    #[error("grid {rows}x{cols} does not match {count} wall positions")]
    GridMismatch { rows: usize, cols: usize, count: usize },
    #[error("transient volume needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("transient data has {got} values, expected {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("transient value {value} at wall point {wall}, bin {bin} is negative or not finite")]
    BadValue { wall: usize, bin: usize, value: f32 },
    #[error("bin width must be positive, got {0} ps")]
    BadBinWidth(f64),
}

/// Radius of the scan sphere for transient bin `t`: the confocal round trip
/// maps bin centre `(t + 0.5)` to half the travelled distance.
pub fn bin_to_radius(t: usize, bin_width_s: f64) -> f64 {
    (t as f64 + 0.5) * SPEED_OF_LIGHT * bin_width_s / 2.0
}

/// Spacing between consecutive scan-sphere radii.
pub fn radial_step(bin_width_s: f64) -> f64 {
    SPEED_OF_LIGHT * bin_width_s / 2.0
}

/// Scan positions on the relay wall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallGrid {
    positions: Vec<[f64; 3]>,
    normal: [f64; 3],
    rows: usize,
    cols: usize,
}

impl WallGrid {
    pub fn new(positions: Vec<Vec3>, normal: Vec3, rows: usize, cols: usize) -> Result<Self, DataError> {
        if rows * cols != positions.len() {
            return Err(DataError::GridMismatch {
                rows,
                cols,
                count: positions.len(),
            });
        }
        let norm = normal.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(DataError::NormalNotUnit(norm));
        }
        if let Some(p0) = positions.first() {
            for (index, p) in positions.iter().enumerate() {
                let distance = (p - p0).dot(&normal).abs();
                if distance > 1e-6 {
                    return Err(DataError::NotCoplanar { index, distance });
                }
            }
        }
        Ok(Self {
            positions: positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
            normal: [normal.x, normal.y, normal.z],
            rows,
            cols,
        })
    }

    /// Regular `rows x cols` scan grid of side `2 * half_size` centred at
    /// `center` on the plane with the given normal.
    pub fn regular(center: Vec3, normal: Vec3, half_size: f64, rows: usize, cols: usize) -> Self {
        let (u, v, n) = tangent_frame(&normal);
        let coord = |i: usize, count: usize| {
            if count <= 1 {
                0.0
            } else {
                -half_size + 2.0 * half_size * i as f64 / (count - 1) as f64
            }
        };
        let mut positions = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                positions.push(center + u * coord(c, cols) + v * coord(r, rows));
            }
        }
        Self::new(positions, n, rows, cols).expect("regular grid is planar")
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, i: usize) -> Vec3 {
        Vec3::from(self.positions[i])
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.positions.iter().map(|p| Vec3::from(*p))
    }

    pub fn normal(&self) -> Vec3 {
        Vec3::from(self.normal)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Measured or simulated transients: `M` wall points by `B` time bins.
#[derive(Clone, Debug, PartialEq)]
pub struct TransientVolume {
    data: Vec<f32>,
    bins: usize,
    bin_width_ps: f64,
    /// Bins skipped by gating before the first stored bin.
    bin_offset: usize,
    wall: WallGrid,
}

impl TransientVolume {
    pub fn new(data: Vec<f32>, bins: usize, bin_width_ps: f64, wall: WallGrid) -> Result<Self, DataError> {
        Self::with_offset(data, bins, bin_width_ps, 0, wall)
    }

    pub fn with_offset(
        data: Vec<f32>,
        bins: usize,
        bin_width_ps: f64,
        bin_offset: usize,
        wall: WallGrid,
    ) -> Result<Self, DataError> {
        if bins < 2 {
            return Err(DataError::TooFewBins(bins));
        }
        if !(bin_width_ps > 0.0 && bin_width_ps.is_finite()) {
            return Err(DataError::BadBinWidth(bin_width_ps));
        }
        let expected = bins * wall.len();
        if data.len() != expected {
            return Err(DataError::DataLength {
                expected,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(DataError::BadValue {
                wall: i / bins,
                bin: i % bins,
                value: data[i],
            });
        }
        Ok(Self {
            data,
            bins,
            bin_width_ps,
            bin_offset,
            wall,
        })
    }

    /// All-zero volume.
    pub fn zeros(bins: usize, bin_width_ps: f64, wall: WallGrid) -> Result<Self, DataError> {
        let n = bins * wall.len();
        Self::new(vec![0.0; n], bins, bin_width_ps, wall)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn wall_points(&self) -> usize {
        self.wall.len()
    }

    pub fn wall(&self) -> &WallGrid {
        &self.wall
    }

    pub fn bin_width_ps(&self) -> f64 {
        self.bin_width_ps
    }

    pub fn bin_width_s(&self) -> f64 {
        self.bin_width_ps * 1e-12
    }

    pub fn bin_offset(&self) -> usize {
        self.bin_offset
    }

    /// Scan-sphere radius of stored bin `t`, accounting for the gate offset.
    pub fn radius(&self, t: usize) -> f64 {
        bin_to_radius(t + self.bin_offset, self.bin_width_s())
    }

    pub fn radial_step(&self) -> f64 {
        radial_step(self.bin_width_s())
    }

    /// Stored bin whose radial interval contains `r`, if any.
    pub fn bin_of_radius(&self, r: f64) -> Option<usize> {
        let k = (r / self.radial_step()).floor();
        if k < self.bin_offset as f64 {
            return None;
        }
        let t = k as usize - self.bin_offset;
        (t < self.bins).then_some(t)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn transient(&self, wall_index: usize) -> &[f32] {
        &self.data[wall_index * self.bins..(wall_index + 1) * self.bins]
    }

    pub fn get(&self, wall_index: usize, bin: usize) -> f32 {
        self.data[wall_index * self.bins + bin]
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Same geometry with different data.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self, DataError> {
        Self::with_offset(data, self.bins, self.bin_width_ps, self.bin_offset, self.wall.clone())
    }
}

/// Binary object mask over (wall point, bin).
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMask {
    bins: usize,
    bits: Vec<bool>,
}

impl ObjectMask {
    pub fn get(&self, wall_index: usize, bin: usize) -> bool {
        self.bits[wall_index * self.bins + bin]
    }

    pub fn row(&self, wall_index: usize) -> &[bool] {
        &self.bits[wall_index * self.bins..(wall_index + 1) * self.bins]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Threshold a transient volume at `kappa` times its global maximum.
pub fn compute_object_mask(tau: &TransientVolume, kappa: f64) -> ObjectMask {
    assert!(kappa > 0.0 && kappa < 1.0, "mask fraction must lie in (0, 1)");
    let threshold = kappa * tau.max_value() as f64;
    ObjectMask {
        bins: tau.bins(),
        bits: tau.data().iter().map(|&v| v as f64 > threshold).collect(),
    }
}

/// Mask of one transient row against an explicit threshold; used during
/// training where the row is the background-subtracted signal.
pub fn mask_row(values: &[f64], threshold: f64) -> Vec<bool> {
    values.iter().map(|&v| v > threshold).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall(m: usize) -> WallGrid {
        WallGrid::regular(Vec3::zeros(), Vec3::z(), 0.5, 1, m)
    }

    #[test]
    fn radius_of_first_bins() {
        let bw = 70e-12;
        let r0 = bin_to_radius(0, bw);
        assert!((r0 - 0.5 * SPEED_OF_LIGHT * bw / 2.0).abs() < 1e-15);
        assert!((r0 - 0.005246).abs() < 1e-6);
        let dr = bin_to_radius(1, bw) - r0;
        assert!((dr - 0.010493).abs() < 1e-6);
        assert!((bin_to_radius(5, 2.0 * bw) - 2.0 * bin_to_radius(5, bw)).abs() < 1e-15);
    }

    #[test]
    fn mask_thresholds() {
        let w = wall(2);
        let v = TransientVolume::zeros(4, 70.0, w.clone()).unwrap();
        assert_eq!(compute_object_mask(&v, 0.05).count(), 0);
        let mut data = vec![0.0; 8];
        data[5] = 1.0;
        let v = TransientVolume::new(data, 4, 70.0, w).unwrap();
        let m = compute_object_mask(&v, 0.05);
        assert_eq!(m.count(), 1);
        assert!(m.get(1, 1));
    }

    #[test]
    fn volume_invariants() {
        let w = wall(2);
        assert_eq!(
            TransientVolume::new(vec![0.0; 2], 1, 70.0, w.clone()),
            Err(DataError::TooFewBins(1))
        );
        assert!(matches!(
            TransientVolume::new(vec![0.0; 5], 2, 70.0, w.clone()),
            Err(DataError::DataLength { .. })
        ));
        assert!(matches!(
            TransientVolume::new(vec![0.0, -1.0, 0.0, 0.0], 2, 70.0, w),
            Err(DataError::BadValue { wall: 0, bin: 1, .. })
        ));
    }

    #[test]
    fn wall_invariants() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 1e-3)];
        assert!(matches!(
            WallGrid::new(pts, Vec3::z(), 1, 2),
            Err(DataError::NotCoplanar { index: 1, .. })
        ));
        assert!(matches!(
            WallGrid::new(vec![Vec3::zeros()], Vec3::new(0.0, 0.0, 2.0), 1, 1),
            Err(DataError::NormalNotUnit(_))
        ));
        let g = WallGrid::regular(Vec3::zeros(), Vec3::z(), 0.5, 3, 3);
        assert_eq!(g.position(0), Vec3::new(-0.5, -0.5, 0.0));
        assert_eq!(g.position(8), Vec3::new(0.5, 0.5, 0.0));
    }

    #[test]
    fn radius_bin_lookup_is_consistent() {
        let v = TransientVolume::zeros(16, 70.0, wall(1)).unwrap();
        for t in 0..16 {
            assert_eq!(v.bin_of_radius(v.radius(t)), Some(t));
        }
        let gated = TransientVolume::with_offset(vec![0.0; 16], 16, 70.0, 10, wall(1)).unwrap();
        assert_eq!(gated.bin_of_radius(gated.radius(0)), Some(0));
        assert_eq!(gated.bin_of_radius(0.0), None);
    }
}
