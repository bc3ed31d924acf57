//! The desk-scale room used by the experiments: a 20×20 IRS on one wall, a
//! planar AP array on another, and users scattered on the floor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{los_links, GainTargets, Geometry, LinkGains, LinkSet, OreGrid, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::scene::{Point3, RoomSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    /// AP antennas (N_R).
    pub antennas: usize,
    /// Spacing of the AP array (m).
    pub ap_spacing: f64,
    /// AP array center, on the `y = 0` wall.
    pub ap_center: Point3,
    /// IRS side length in elements (N_I = side²).
    pub irs_side: usize,
    /// IRS center, on the `x = 0` wall.
    pub irs_center: Point3,
    /// Users are drawn uniformly on the floor inside this margin from walls.
    pub floor_margin: f64,
    pub los_power: f64,
    pub irs_power: f64,
    pub voxel_power: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        let t = GainTargets::default();
        LayoutConfig {
            antennas: 16,
            ap_spacing: 0.2,
            ap_center: [2.0, 0.0, 2.0],
            irs_side: 20,
            irs_center: [0.0, 2.0, 2.0],
            floor_margin: 0.5,
            los_power: t.los,
            irs_power: t.irs,
            voxel_power: t.voxel,
        }
    }
}

impl LayoutConfig {
    pub fn targets(&self) -> GainTargets {
        GainTargets {
            los: self.los_power,
            irs: self.irs_power,
            voxel: self.voxel_power,
        }
    }
}

/// Geometry, calibrated links and ORE grid of one trial.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub room: RoomSpec,
    pub geometry: Geometry,
    pub grid: OreGrid,
    pub gains: LinkGains,
    /// Mean powers the links were calibrated to.
    pub targets: GainTargets,
    pub links: Vec<LinkSet>,
}

impl Scenario {
    /// Mean per-entry power of the paths known to the receiver.
    pub fn known_gain(&self) -> f64 {
        self.targets.los + self.targets.irs
    }

    pub fn antenna_count(&self) -> usize {
        self.geometry.antenna_count()
    }

    /// Builds links for `geometry` and rescales them to the layout's power
    /// targets.
    pub fn from_geometry(room: RoomSpec, geometry: Geometry, ores: usize, layout: &LayoutConfig) -> Result<Self> {
        let grid = OreGrid::band(ores)?;
        let mut links = los_links(&geometry, &room, &grid)?;
        let gains = LinkGains::calibrate(&links, layout.targets())?;
        for l in &mut links {
            gains.apply(l);
        }
        Ok(Scenario {
            room,
            geometry,
            grid,
            gains,
            targets: layout.targets(),
            links,
        })
    }

    /// Standard layout with `users` placed at random from `seed`.
    pub fn standard(room: RoomSpec, users: usize, ores: usize, layout: &LayoutConfig, seed: u64) -> Result<Self> {
        let geometry = standard_geometry(&room, users, layout, seed)?;
        Scenario::from_geometry(room, geometry, ores, layout)
    }
}

/// Square-ish grid of `count` points centered on `center`, spanning the two
/// axes other than `normal`.
fn planar_array(count: usize, spacing: f64, center: Point3, normal: usize) -> Vec<Point3> {
    let cols = (count as f64).sqrt().ceil() as usize;
    let rows = count.div_ceil(cols);
    let (a, b) = match normal {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    (0..count)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let mut p = center;
            p[a] += (c as f64 - (cols - 1) as f64 / 2.0) * spacing;
            p[b] += (r as f64 - (rows - 1) as f64 / 2.0) * spacing;
            p
        })
        .collect()
}

/// AP array on the `y = 0` wall, half-wavelength IRS on the `x = 0` wall,
/// users uniform on the floor.
pub fn standard_geometry(room: &RoomSpec, users: usize, layout: &LayoutConfig, seed: u64) -> Result<Geometry> {
    if users == 0 || layout.antennas == 0 || layout.irs_side == 0 {
        return Err(Error::Geometry("users, antennas and IRS size must be positive".into()));
    }
    let dims = room.room_dims();
    let m = layout.floor_margin;
    if 2.0 * m >= dims[0] || 2.0 * m >= dims[1] {
        return Err(Error::Geometry(format!("floor margin {m} leaves no room for users")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let user_pos = (0..users)
        .map(|_| [rng.random_range(m..dims[0] - m), rng.random_range(m..dims[1] - m), 0.0])
        .collect();
    let half_wave = SPEED_OF_LIGHT / (0.5 * (crate::channel::BAND_LOW_HZ + crate::channel::BAND_HIGH_HZ)) / 2.0;
    let irs = planar_array(layout.irs_side * layout.irs_side, half_wave, layout.irs_center, 0);
    let ap = planar_array(layout.antennas, layout.ap_spacing, layout.ap_center, 1);
    Geometry::new(user_pos, ap, irs, room)
}
