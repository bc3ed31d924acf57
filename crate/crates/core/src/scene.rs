//! Room voxelization and scatterer fields.
//!
//! The room `[0, Lx] × [0, Ly] × [0, Lz]` is cut into identical cubes.
//! Voxels are indexed x-fastest, then y, then z:
//! `index = ix + nx·(iy + ny·iz)`. This ordering fixes the column order of
//! every measurement matrix built from the room.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Room and voxel dimensions in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    room: [f64; 3],
    voxel: [f64; 3],
    counts: [usize; 3],
}

impl RoomSpec {
    /// Rejects dimensions that do not divide exactly.
    pub fn new(room: [f64; 3], voxel: [f64; 3]) -> Result<Self> {
        let mut counts = [0usize; 3];
        for axis in 0..3 {
            let (l, v) = (room[axis], voxel[axis]);
            if !(l > 0.0 && l.is_finite() && v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidRoom(format!(
                    "axis {axis}: room {l} m, voxel {v} m must be positive"
                )));
            }
            let ratio = l / v;
            let n = ratio.round();
            if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
                return Err(Error::InvalidRoom(format!(
                    "axis {axis}: room length {l} m is not a multiple of voxel size {v} m"
                )));
            }
            counts[axis] = n as usize;
        }
        Ok(RoomSpec {
            room,
            voxel,
            counts,
        })
    }

    /// The 4 m cube with 0.5 m voxels (8×8×8 grid).
    pub fn standard() -> Self {
        RoomSpec::new([4.0; 3], [0.5; 3]).expect("standard room divides evenly")
    }

    pub fn room_dims(&self) -> [f64; 3] {
        self.room
    }

    pub fn voxel_dims(&self) -> [f64; 3] {
        self.voxel
    }

    /// Voxels along each axis.
    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    /// N_s, the total number of voxels.
    pub fn voxel_count(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn voxel_diagonal(&self) -> f64 {
        self.voxel.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn index_of(&self, ix: usize, iy: usize, iz: usize) -> Result<usize> {
        let [nx, ny, nz] = self.counts;
        if ix >= nx || iy >= ny || iz >= nz {
            return Err(Error::Index(format!(
                "voxel ({ix}, {iy}, {iz}) outside {nx}x{ny}x{nz} grid"
            )));
        }
        Ok(ix + nx * (iy + ny * iz))
    }

    pub fn coords_of(&self, index: usize) -> Result<[usize; 3]> {
        let n = self.voxel_count();
        if index >= n {
            return Err(Error::VoxelIndex { index, count: n });
        }
        let [nx, ny, _] = self.counts;
        Ok([index % nx, (index / nx) % ny, index / (nx * ny)])
    }

    /// Geometric center of the indexed voxel.
    pub fn voxel_center(&self, index: usize) -> Result<Point3> {
        let c = self.coords_of(index)?;
        Ok(std::array::from_fn(|a| (c[a] as f64 + 0.5) * self.voxel[a]))
    }

    /// All centers in index order.
    pub fn centers(&self) -> Vec<Point3> {
        (0..self.voxel_count())
            .map(|i| self.voxel_center(i).expect("index in range"))
            .collect()
    }

    /// Index of the voxel containing `p`; points on the far walls belong to
    /// the last cell. `None` outside the room.
    pub fn nearest_voxel(&self, p: Point3) -> Option<usize> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            if !(p[a] >= 0.0 && p[a] <= self.room[a]) {
                return None;
            }
            c[a] = ((p[a] / self.voxel[a]).floor() as usize).min(self.counts[a] - 1);
        }
        self.index_of(c[0], c[1], c[2]).ok()
    }

    /// True when `p` lies inside the room or on its boundary (1 µm slack).
    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|a| p[a] >= -1e-6 && p[a] <= self.room[a] + 1e-6)
    }
}

/// Scattering coefficient per voxel; every entry lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererField {
    values: Vec<f64>,
}

impl ScattererField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Scatterer { index, value });
        }
        Ok(ScattererField { values })
    }

    pub fn zeros(n: usize) -> Self {
        ScattererField {
            values: vec![0.0; n],
        }
    }

    /// Clamps each entry into `[0, 1]`; NaN becomes 0.
    pub fn clamped(values: Vec<f64>) -> Self {
        let values = values
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        ScattererField { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn support(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Number of occupied voxels for a sparsity fraction: `⌈s·N_s⌉`.
pub fn occupied_count(sparsity: f64, n: usize) -> usize {
    // Guard against 0.015 * 512 = 7.680000000000001 style rounding noise.
    let raw = sparsity * n as f64;
    let rounded = raw.round();
    let k = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (k as usize).min(n)
}

/// Draws `⌈sparsity·N_s⌉` distinct voxels with magnitudes uniform on (0, 1].
pub fn random_scene(spec: &RoomSpec, sparsity: f64, seed: u64) -> Result<ScattererField> {
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(Error::Sparsity(sparsity));
    }
    let n = spec.voxel_count();
    let k = occupied_count(sparsity, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; n];
    for idx in sample(&mut rng, n, k) {
        // 1 - U[0,1) lies in (0, 1].
        values[idx] = 1.0 - rng.random::<f64>();
    }
    ScattererField::new(values)
}

/// Parses the scene text format. When `expected` is given, the header must
/// describe the same room.
pub fn parse_scene(text: &str, expected: Option<&RoomSpec>) -> Result<(RoomSpec, ScattererField)> {
    const WHAT: &str = "scene file";
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse(WHAT, 1, "missing header"))?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 8 || tok[0] != "room" || tok[4] != "voxel" {
        return Err(Error::parse(
            WHAT,
            hline,
            "header must be `room Lx Ly Lz voxel lx ly lz`",
        ));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::parse(WHAT, hline, format!("bad number `{s}`")))
    };
    let room = [num(tok[1])?, num(tok[2])?, num(tok[3])?];
    let voxel = [num(tok[5])?, num(tok[6])?, num(tok[7])?];
    let spec = RoomSpec::new(room, voxel)?;
    if let Some(exp) = expected {
        if exp.counts() != spec.counts() {
            return Err(Error::Dimension(format!(
                "scene grid {:?} does not match room grid {:?}",
                spec.counts(),
                exp.counts()
            )));
        }
    }

    let mut values = vec![0.0; spec.voxel_count()];
    let mut seen = vec![false; values.len()];
    for (ln, line) in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 4 {
            return Err(Error::parse(WHAT, ln, "expected `ix iy iz value`"));
        }
        let idx = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::parse(WHAT, ln, format!("bad voxel index `{s}`")))
        };
        let index = spec
            .index_of(idx(tok[0])?, idx(tok[1])?, idx(tok[2])?)
            .map_err(|e| Error::parse(WHAT, ln, e.to_string()))?;
        let value: f64 = tok[3]
            .parse()
            .map_err(|_| Error::parse(WHAT, ln, format!("bad value `{}`", tok[3])))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::parse(
                WHAT,
                ln,
                format!("scattering coefficient {value} outside [0, 1]"),
            ));
        }
        if std::mem::replace(&mut seen[index], true) {
            return Err(Error::parse(WHAT, ln, "voxel listed twice"));
        }
        values[index] = value;
    }
    Ok((spec, ScattererField::new(values)?))
}

/// Renders a field in the scene text format. Values use shortest
/// round-trip formatting, so `parse_scene(format_scene(..))` is exact.
pub fn format_scene(spec: &RoomSpec, field: &ScattererField) -> Result<String> {
    if field.len() != spec.voxel_count() {
        return Err(Error::Dimension(format!(
            "field has {} voxels, room has {}",
            field.len(),
            spec.voxel_count()
        )));
    }
    let [lx, ly, lz] = spec.room_dims();
    let [vx, vy, vz] = spec.voxel_dims();
    let mut out = format!("room {lx} {ly} {lz} voxel {vx} {vy} {vz}\n");
    for i in field.support() {
        let [ix, iy, iz] = spec.coords_of(i)?;
        let _ = writeln!(out, "{ix} {iy} {iz} {}", field.values()[i]);
    }
    Ok(out)
}

pub fn load_scene(path: impl AsRef<Path>, expected: Option<&RoomSpec>) -> Result<(RoomSpec, ScattererField)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_scene(&text, expected)
}

pub fn save_scene(path: impl AsRef<Path>, spec: &RoomSpec, field: &ScattererField) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_scene(spec, field)?).map_err(|e| Error::file(path, e))
}
