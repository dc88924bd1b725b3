use std::fs;
use std::io::{self, Write};
use std::path::Path;

use log::warn;
use thiserror::Error;

use super::detect::{detect_first_photon, DetectorConfig};
use crate::data::{SceneBounds, TransientVolume, Vec3};

pub const CARVE_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"NLCG";

#[derive(Debug, Error)]
pub enum CarveError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a carve-grid file")]
    Magic,
    #[error("unsupported carve-grid version {0}")]
    Version(u32),
    #[error("carve-grid file is truncated or has trailing bytes")]
    Size,
    #[error("invalid carve grid: {0}")]
    Invalid(String),
}

/// An empty sphere around a wall point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarveSphere {
    pub center: Vec3,
    pub radius: f64,
}

/// Voxel lattice over the scene bounds with per-voxel votes, the
/// object/free partition and the free-space lower-bound field.
#[derive(Clone, Debug, PartialEq)]
pub struct CarveGrid {
    dims: [usize; 3],
    bounds: SceneBounds,
    spheres: u32,
    votes: Vec<u32>,
    object: Vec<bool>,
    lower_bound: Vec<f32>,
}

impl CarveGrid {
    pub fn new(bounds: SceneBounds, dims: [usize; 3]) -> Self {
        assert!(dims.iter().all(|d| *d >= 1), "grid needs at least one voxel per axis");
        let n = dims[0] * dims[1] * dims[2];
        Self {
            dims,
            bounds,
            spheres: 0,
            votes: vec![0; n],
            object: vec![true; n],
            lower_bound: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bounds(&self) -> &SceneBounds {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    pub fn spheres(&self) -> u32 {
        self.spheres
    }

    pub fn votes(&self) -> &[u32] {
        &self.votes
    }

    pub fn object_mask(&self) -> &[bool] {
        &self.object
    }

    pub fn lower_bounds(&self) -> &[f32] {
        &self.lower_bound
    }

    pub fn voxel_size(&self) -> Vec3 {
        let e = self.bounds.extent();
        Vec3::new(
            e.x / self.dims[0] as f64,
            e.y / self.dims[1] as f64,
            e.z / self.dims[2] as f64,
        )
    }

    /// Half the voxel diagonal.
    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.voxel_size().norm()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let j = (idx / self.dims[2]) % self.dims[1];
        [idx / (self.dims[1] * self.dims[2]), j, k]
    }

    pub fn center(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        let h = self.voxel_size();
        self.bounds.min_v() + Vec3::new((i as f64 + 0.5) * h.x, (j as f64 + 0.5) * h.y, (k as f64 + 0.5) * h.z)
    }

    pub fn is_object(&self, idx: usize) -> bool {
        self.object[idx]
    }

    pub fn free_voxels(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.object[i]).collect()
    }

    /// Add one vote to every voxel whose centre lies strictly inside the
    /// sphere.
    pub fn vote(&mut self, s: &CarveSphere) {
        let h = self.voxel_size();
        let lo = self.bounds.min_v();
        let r2 = s.radius * s.radius;
        let axis = |a: usize, c: f64| lo[a] + (c + 0.5) * h[a];
        for i in 0..self.dims[0] {
            let dx = axis(0, i as f64) - s.center.x;
            let rx = r2 - dx * dx;
            if rx <= 0.0 {
                continue;
            }
            for j in 0..self.dims[1] {
                let dy = axis(1, j as f64) - s.center.y;
                let ry = rx - dy * dy;
                if ry <= 0.0 {
                    continue;
                }
                let half = ry.sqrt();
                let k0 = (((s.center.z - half - lo.z) / h.z - 0.5).floor().max(-1.0) + 1.0) as usize;
                let k1 = ((s.center.z + half - lo.z) / h.z - 0.5).ceil().min(self.dims[2] as f64);
                if k1 <= 0.0 {
                    continue;
                }
                let base = self.index(i, j, 0);
                for k in k0..k1 as usize {
                    let dz = axis(2, k as f64) - s.center.z;
                    if dz * dz < ry {
                        self.votes[base + k] += 1;
                    }
                }
            }
        }
        self.spheres += 1;
    }

    /// Recompute labels: with `N` spheres, a voxel is object when its number of
    /// non-containing spheres `N - c(v)` exceeds `0.99` of the largest such
    /// count.
    pub fn label(&mut self) {
        let n = self.spheres;
        if n == 0 {
            self.object.fill(true);
            return;
        }
        let best = self.votes.iter().map(|c| n - c).max().unwrap_or(0);
        let cut = 0.99 * best as f64;
        for (o, c) in self.object.iter_mut().zip(&self.votes) {
            *o = (n - c) as f64 > cut;
        }
    }

    /// `b = max(0, dist(centre, nearest object centre) - half diagonal)` on
    /// free voxels, 0 on object voxels. With no object voxel, `b = 0`.
    pub fn compute_lower_bound(&mut self) {
        if !self.object.iter().any(|o| *o) {
            warn!("carving left no object voxels; lower bound set to 0");
            self.lower_bound.fill(0.0);
            return;
        }
        let d2 = squared_edt(&self.object, self.dims, self.voxel_size());
        let half = self.half_diagonal();
        for (i, b) in self.lower_bound.iter_mut().enumerate() {
            *b = if self.object[i] {
                0.0
            } else {
                (d2[i].sqrt() - half).max(0.0) as f32
            };
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.len() * 9);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CARVE_VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.bounds.min.iter().chain(&self.bounds.max) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.spheres.to_le_bytes());
        for v in &self.votes {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.object.iter().map(|&o| o as u8));
        for b in &self.lower_bound {
            out.extend_from_slice(&b.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CarveError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(CarveError::Magic);
        }
        let version = cur.u32()?;
        if version != CARVE_VERSION {
            return Err(CarveError::Version(version));
        }
        let dims = [cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize];
        let mut b = [0.0; 6];
        for v in &mut b {
            *v = cur.f64()?;
        }
        let bounds = SceneBounds::new([b[0], b[1], b[2]], [b[3], b[4], b[5]]).map_err(CarveError::Invalid)?;
        let spheres = cur.u32()?;
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|x| x.checked_mul(dims[2]))
            .ok_or(CarveError::Size)?;
        if n == 0 || bytes.len() != cur.pos + n * 9 {
            return Err(CarveError::Size);
        }
        let votes = (0..n).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let object = cur.take(n)?.iter().map(|&v| v != 0).collect();
        let lower_bound = (0..n).map(|_| cur.f32()).collect::<Result<Vec<_>, _>>()?;
        if votes.iter().any(|&v| v > spheres) {
            return Err(CarveError::Invalid("a vote count exceeds the number of spheres".into()));
        }
        Ok(Self {
            dims,
            bounds,
            spheres,
            votes,
            object,
            lower_bound,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CarveError> {
        let mut f = io::BufWriter::new(fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CarveError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CarveError> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or(CarveError::Size)?;
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CarveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, CarveError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CarveError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Exact squared distance transform along one line (lower envelope of
/// parabolas). `f` holds squared distances in units where the line spacing
/// is `h`.
fn edt_1d(f: &[f64], h: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let finite: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if finite.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let pos = |q: usize| q as f64 * h;
    let mut k = 0;
    v[0] = finite[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for &q in &finite[1..] {
        loop {
            let p = v[k];
            let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere.
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every voxel centre to the nearest voxel
/// with `seed = true`, for anisotropic spacing `h`.
pub fn squared_edt(seed: &[bool], dims: [usize; 3], h: Vec3) -> Vec<f64> {
    let mut d: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let idx = |i: usize, j: usize, k: usize| (i * dims[1] + j) * dims[2] + k;
    let maxn = *dims.iter().max().unwrap();
    let (mut line, mut out) = (vec![0.0; maxn], vec![0.0; maxn]);
    let (mut v, mut z) = (vec![0usize; maxn], vec![0.0; maxn + 1]);
    for axis in 0..3 {
        let n = dims[axis];
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for p in 0..dims[a] {
            for q in 0..dims[b] {
                let at = |t: usize| {
                    let mut c = [0; 3];
                    c[axis] = t;
                    c[a] = p;
                    c[b] = q;
                    idx(c[0], c[1], c[2])
                };
                for t in 0..n {
                    line[t] = d[at(t)];
                }
                edt_1d(&line[..n], h[axis], &mut out[..n], &mut v[..n], &mut z[..n + 1]);
                for t in 0..n {
                    d[at(t)] = out[t];
                }
            }
        }
    }
    d
}

/// Empty spheres from first-photon detections: the radius is the lower edge
/// of the detected bin, so it never exceeds the distance of the first return
/// in that bin.
pub fn carving_spheres(tau: &TransientVolume, cfg: &DetectorConfig) -> Vec<CarveSphere> {
    let step = tau.radial_step();
    (0..tau.wall_points())
        .filter_map(|m| {
            let row: Vec<f64> = tau.transient(m).iter().map(|&v| v as f64).collect();
            detect_first_photon(&row, cfg).map(|d| CarveSphere {
                center: tau.wall().position(m),
                radius: (d.bin + tau.bin_offset()) as f64 * step,
            })
        })
        .collect()
}

/// Vote with every sphere, label the partition and compute the lower bound.
/// Without spheres every voxel stays object.
pub fn carve(spheres: &[CarveSphere], mut grid: CarveGrid) -> CarveGrid {
    if spheres.is_empty() {
        warn!("no first-photon detections; every voxel is labeled object");
    }
    for s in spheres {
        grid.vote(s);
    }
    grid.label();
    grid.compute_lower_bound();
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(seed: &[bool], dims: [usize; 3], h: Vec3) -> Vec<f64> {
        let n = seed.len();
        let c = |idx: usize| {
            let k = idx % dims[2];
            let j = (idx / dims[2]) % dims[1];
            let i = idx / (dims[1] * dims[2]);
            Vec3::new(i as f64 * h.x, j as f64 * h.y, k as f64 * h.z)
        };
        (0..n)
            .map(|a| {
                (0..n)
                    .filter(|&b| seed[b])
                    .map(|b| (c(a) - c(b)).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn edt_matches_brute_force() {
        let dims = [5, 4, 6];
        let h = Vec3::new(0.1, 0.2, 0.15);
        let mut state = 12345u64;
        for _ in 0..20 {
            let seed: Vec<bool> = (0..120)
                .map(|_| {
                    state = state
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    (state >> 33) % 7 == 0
                })
                .collect();
            let a = squared_edt(&seed, dims, h);
            let b = brute(&seed, dims, h);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12 || (x.is_infinite() && y.is_infinite()));
            }
        }
    }

    #[test]
    fn vote_membership() {
        let b = SceneBounds::new([-1.5; 3], [1.5; 3]).unwrap();
        let mut g = CarveGrid::new(b, [12, 12, 12]);
        g.vote(&CarveSphere {
            center: Vec3::zeros(),
            radius: 1.0,
        });
        for i in 0..g.len() {
            assert_eq!(g.votes()[i], u32::from(g.center(i).norm() < 1.0));
        }
    }
}
