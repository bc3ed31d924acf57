//! Geometric line-of-sight links, the IRS reflection pattern, the composite
//! per-ORE channel and the compressed-sensing measurement matrices.
//!
//! Every link gain is free-space: amplitude `c / (4π d f)` and phase
//! `-2π f d / c`. For ORE `r` the user→AP channel is
//!
//! ```text
//! H_r = H_los + H_irs1 · Θ · H_s1 + S_r(x)
//! S_r(x)[u, :] = xᵀ · diag(H_s3[u, :]) · H_s2 · Θ · H_s1
//! ```
//!
//! `H_s1` carries IRS→AP and `H_irs1` user→IRS, so the direct IRS path and
//! the scatter path share the final IRS→AP hop.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{distance, CMat, C64, ZERO};
use crate::scene::{Point3, RoomSpec, ScattererField};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Lower band edge used for the default ORE grid (Hz).
pub const BAND_LOW_HZ: f64 = 28e9;
/// Upper band edge used for the default ORE grid (Hz).
pub const BAND_HIGH_HZ: f64 = 30e9;

/// Positions of users, AP antennas and IRS elements (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    users: Vec<Point3>,
    ap: Vec<Point3>,
    irs: Vec<Point3>,
}

impl Geometry {
    pub fn new(users: Vec<Point3>, ap: Vec<Point3>, irs: Vec<Point3>, room: &RoomSpec) -> Result<Self> {
        for (name, pts) in [("users", &users), ("ap", &ap), ("irs", &irs)] {
            if pts.is_empty() {
                return Err(Error::Geometry(format!("section `{name}` is empty")));
            }
            if let Some(p) = pts.iter().find(|p| !room.contains(**p)) {
                return Err(Error::Geometry(format!(
                    "{name} position {p:?} lies outside the room"
                )));
            }
        }
        Ok(Geometry { users, ap, irs })
    }

    pub fn users(&self) -> &[Point3] {
        &self.users
    }

    pub fn ap(&self) -> &[Point3] {
        &self.ap
    }

    pub fn irs(&self) -> &[Point3] {
        &self.irs
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn antenna_count(&self) -> usize {
        self.ap.len()
    }

    pub fn irs_count(&self) -> usize {
        self.irs.len()
    }
}

/// Parses the geometry text format: sections `users`, `ap` and `irs`, each
/// followed by `x y z` lines.
pub fn parse_geometry(text: &str, room: &RoomSpec) -> Result<Geometry> {
    const WHAT: &str = "geometry file";
    let mut sections: [Vec<Point3>; 3] = Default::default();
    let mut current: Option<usize> = None;
    let mut seen = [false; 3];
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let slot = match line {
            "users" => Some(0),
            "ap" => Some(1),
            "irs" => Some(2),
            _ => None,
        };
        if let Some(s) = slot {
            if std::mem::replace(&mut seen[s], true) {
                return Err(Error::parse(WHAT, ln, format!("section `{line}` repeated")));
            }
            current = Some(s);
            continue;
        }
        let s = current.ok_or_else(|| Error::parse(WHAT, ln, "coordinates before any section"))?;
        let coords: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::parse(WHAT, ln, "expected `x y z`"))?;
        if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::parse(WHAT, ln, "expected `x y z`"));
        }
        sections[s].push([coords[0], coords[1], coords[2]]);
    }
    let [users, ap, irs] = sections;
    Geometry::new(users, ap, irs, room)
}

pub fn format_geometry(geom: &Geometry) -> String {
    let mut out = String::new();
    for (name, pts) in [("users", &geom.users), ("ap", &geom.ap), ("irs", &geom.irs)] {
        let _ = writeln!(out, "{name}");
        for p in pts {
            let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
        }
    }
    out
}

pub fn load_geometry(path: impl AsRef<Path>, room: &RoomSpec) -> Result<Geometry> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_geometry(&text, room)
}

/// Diagonal IRS reflection matrix for one packet, `θ = ρ·e^{jφ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IrsPattern {
    coeffs: Vec<C64>,
    packet: usize,
}

impl IrsPattern {
    /// Builds a pattern from amplitudes in `[0, 1]` and phases in `[0, 2π)`.
    pub fn new(rho: &[f64], phi: &[f64], packet: usize) -> Result<Self> {
        if rho.len() != phi.len() || rho.is_empty() {
            return Err(Error::Dimension(format!(
                "{} amplitudes vs {} phases",
                rho.len(),
                phi.len()
            )));
        }
        let mut coeffs = Vec::with_capacity(rho.len());
        for (i, (&a, &p)) in rho.iter().zip(phi).enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Parameter(format!("IRS amplitude {a} at element {i}")));
            }
            if !(0.0..2.0 * PI).contains(&p) {
                return Err(Error::Parameter(format!("IRS phase {p} at element {i}")));
            }
            coeffs.push(C64::from_polar(a, p));
        }
        Ok(IrsPattern { coeffs, packet })
    }

    /// Unit amplitude, phase 0 or π per element with equal probability.
    pub fn random_binary(elements: usize, packet: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..elements)
            .map(|_| {
                if rng.random::<bool>() {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(-1.0, 0.0)
                }
            })
            .collect();
        IrsPattern { coeffs, packet }
    }

    /// Θ = 0: the surface reflects nothing.
    pub fn off(elements: usize, packet: usize) -> Self {
        IrsPattern {
            coeffs: vec![ZERO; elements],
            packet,
        }
    }

    pub fn coefficients(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn packet(&self) -> usize {
        self.packet
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// Carrier frequency of each orthogonal resource element.
#[derive(Debug, Clone, PartialEq)]
pub struct OreGrid {
    freqs: Vec<f64>,
}

impl OreGrid {
    pub fn new(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() || freqs.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::Parameter("ORE frequencies must be positive".into()));
        }
        Ok(OreGrid { freqs })
    }

    /// `count` sub-band centers spread evenly over `[low, high]`.
    pub fn uniform(count: usize, low: f64, high: f64) -> Result<Self> {
        if count == 0 || !(high > low && low > 0.0) {
            return Err(Error::Parameter(format!(
                "ORE grid of {count} points over [{low}, {high}] Hz"
            )));
        }
        let step = (high - low) / count as f64;
        OreGrid::new((0..count).map(|r| low + (r as f64 + 0.5) * step).collect())
    }

    /// `count` OREs across the default 28–30 GHz band.
    pub fn band(count: usize) -> Result<Self> {
        OreGrid::uniform(count, BAND_LOW_HZ, BAND_HIGH_HZ)
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }
}

/// The five LOS sub-channels of one ORE.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSet {
    pub frequency: f64,
    /// User → AP, `N_u × N_R`.
    pub los: CMat,
    /// User → IRS, `N_u × N_I`.
    pub irs1: CMat,
    /// IRS → AP, `N_I × N_R`.
    pub s1: CMat,
    /// Voxel → IRS, `N_s × N_I`.
    pub s2: CMat,
    /// User → voxel, `N_u × N_s`; row `u` is `H_s3(u)`.
    pub s3: CMat,
}

impl LinkSet {
    pub fn user_count(&self) -> usize {
        self.los.rows()
    }

    pub fn antenna_count(&self) -> usize {
        self.los.cols()
    }

    pub fn irs_count(&self) -> usize {
        self.s1.rows()
    }

    pub fn voxel_count(&self) -> usize {
        self.s2.rows()
    }

    fn check(&self) -> Result<()> {
        let (nu, nr) = self.los.shape();
        let ni = self.s1.rows();
        let ns = self.s2.rows();
        let ok = self.irs1.shape() == (nu, ni)
            && self.s1.shape() == (ni, nr)
            && self.s2.shape() == (ns, ni)
            && self.s3.shape() == (nu, ns);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "inconsistent link set: los {:?}, irs1 {:?}, s1 {:?}, s2 {:?}, s3 {:?}",
                self.los.shape(),
                self.irs1.shape(),
                self.s1.shape(),
                self.s2.shape(),
                self.s3.shape()
            )))
        }
    }
}

/// Free-space gain `c/(4π d f) · exp(-j 2π f d / c)`.
pub fn free_space_gain(d: f64, f: f64) -> C64 {
    let amp = SPEED_OF_LIGHT / (4.0 * PI * d * f);
    C64::from_polar(amp, -2.0 * PI * f * d / SPEED_OF_LIGHT)
}

/// Smallest allowed distance between two devices (users, AP antennas, IRS
/// elements): one voxel diagonal.
pub fn device_min_distance(room: &RoomSpec) -> f64 {
    room.voxel_diagonal()
}

/// Smallest allowed distance between a device and a voxel center: half the
/// shortest voxel edge, i.e. the device may not sit inside the voxel's
/// inscribed sphere.
pub fn voxel_min_distance(room: &RoomSpec) -> f64 {
    0.5 * room.voxel_dims().iter().cloned().fold(f64::INFINITY, f64::min)
}

fn distances(link: &'static str, from: &[Point3], to: &[Point3], min: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(from.len() * to.len());
    for a in from {
        for b in to {
            let d = distance(a, b);
            if d < min {
                return Err(Error::DegenerateLink {
                    link,
                    distance: d,
                    min,
                });
            }
            out.push(d);
        }
    }
    Ok(out)
}

fn gains(rows: usize, cols: usize, dist: &[f64], f: f64) -> CMat {
    CMat::from_vec(rows, cols, dist.iter().map(|&d| free_space_gain(d, f)).collect())
        .expect("distance table matches shape")
}

/// Builds the five free-space sub-channels for every ORE.
pub fn los_links(geom: &Geometry, room: &RoomSpec, grid: &OreGrid) -> Result<Vec<LinkSet>> {
    let dev = device_min_distance(room);
    let vox = voxel_min_distance(room);
    let centers = room.centers();
    let (nu, nr, ni, ns) = (
        geom.user_count(),
        geom.antenna_count(),
        geom.irs_count(),
        centers.len(),
    );
    let d_los = distances("user-AP", &geom.users, &geom.ap, dev)?;
    let d_irs1 = distances("user-IRS", &geom.users, &geom.irs, dev)?;
    let d_s1 = distances("IRS-AP", &geom.irs, &geom.ap, dev)?;
    let d_s2 = distances("voxel-IRS", &centers, &geom.irs, vox)?;
    let d_s3 = distances("user-voxel", &geom.users, &centers, vox)?;
    Ok(grid
        .frequencies()
        .iter()
        .map(|&f| LinkSet {
            frequency: f,
            los: gains(nu, nr, &d_los, f),
            irs1: gains(nu, ni, &d_irs1, f),
            s1: gains(ni, nr, &d_s1, f),
            s2: gains(ns, ni, &d_s2, f),
            s3: gains(nu, ns, &d_s3, f),
        })
        .collect())
}

/// Target mean powers used to rescale raw free-space links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainTargets {
    /// Mean `|H_los|²` per entry.
    pub los: f64,
    /// Mean `|H_irs1 Θ H_s1|²` per entry, averaged over random ±1 patterns.
    pub irs: f64,
    /// Mean `|A[n_R, n_s]|²`: scatter-path power of a unit scatterer.
    pub voxel: f64,
}

impl Default for GainTargets {
    fn default() -> Self {
        GainTargets {
            los: 1.0,
            irs: 0.5,
            voxel: 1.0,
        }
    }
}

/// Per-link-class amplitude multipliers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGains {
    pub los: f64,
    pub irs1: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl LinkGains {
    pub const UNITY: LinkGains = LinkGains {
        los: 1.0,
        irs1: 1.0,
        s1: 1.0,
        s2: 1.0,
        s3: 1.0,
    };

    /// Chooses multipliers so that the reference ORE (the first) meets
    /// `targets` on average. Expectations over Θ assume independent,
    /// zero-mean unit-modulus reflection coefficients.
    pub fn calibrate(links: &[LinkSet], targets: GainTargets) -> Result<LinkGains> {
        let l = links
            .first()
            .ok_or_else(|| Error::Parameter("no links to calibrate".into()))?;
        l.check()?;
        let rms = |m: &CMat| m.mean_power().sqrt();
        let g_s1 = 1.0 / rms(&l.s1);
        let g_s2 = 1.0 / rms(&l.s2);
        let (nu, nr) = l.los.shape();
        let ni = l.irs_count();
        let ns = l.voxel_count();

        // |s1[i, a]|² summed over antennas, per IRS element.
        let s1_pow: Vec<f64> = (0..ni)
            .map(|i| l.s1.row(i).iter().map(|v| v.norm_sqr()).sum::<f64>() * g_s1 * g_s1)
            .collect();
        let mut irs_pow = 0.0;
        for u in 0..nu {
            for (i, w) in s1_pow.iter().enumerate() {
                irs_pow += l.irs1[(u, i)].norm_sqr() * w;
            }
        }
        irs_pow /= (nu * nr) as f64;

        // Σ_a Σ_i |s2[j, i]|² |s1[i, a]|² per voxel.
        let vox_pow: Vec<f64> = (0..ns)
            .map(|j| {
                l.s2.row(j)
                    .iter()
                    .zip(&s1_pow)
                    .map(|(v, w)| v.norm_sqr() * g_s2 * g_s2 * w)
                    .sum()
            })
            .collect();
        let mut col_pow = 0.0;
        for u in 0..nu {
            for (j, w) in vox_pow.iter().enumerate() {
                col_pow += l.s3[(u, j)].norm_sqr() * w;
            }
        }
        col_pow /= (nu * ns * nr) as f64;

        Ok(LinkGains {
            los: (targets.los / l.los.mean_power()).sqrt(),
            irs1: (targets.irs / irs_pow).sqrt(),
            s1: g_s1,
            s2: g_s2,
            s3: (targets.voxel / col_pow).sqrt(),
        })
    }

    pub fn apply(&self, links: &mut LinkSet) {
        links.los.scale(self.los);
        links.irs1.scale(self.irs1);
        links.s1.scale(self.s1);
        links.s2.scale(self.s2);
        links.s3.scale(self.s3);
    }
}

fn check_pattern(links: &LinkSet, irs: &IrsPattern) -> Result<()> {
    links.check()?;
    if irs.len() != links.irs_count() {
        return Err(Error::Dimension(format!(
            "IRS pattern has {} elements, links have {}",
            irs.len(),
            links.irs_count()
        )));
    }
    Ok(())
}

/// `H_irs1 · Θ · H_s1`, the reflected path without scatterers.
pub fn irs_path(links: &LinkSet, irs: &IrsPattern) -> Result<CMat> {
    check_pattern(links, irs)?;
    let theta = irs.coefficients();
    let weighted = CMat::from_fn(links.user_count(), links.irs_count(), |u, i| {
        links.irs1[(u, i)] * theta[i]
    });
    weighted.matmul(&links.s1)
}

/// Known part of the channel: `H_los + H_irs1 · Θ · H_s1`.
pub fn known_channel(links: &LinkSet, irs: &IrsPattern) -> Result<CMat> {
    links.los.add(&irs_path(links, irs)?)
}

/// `H_s2 · Θ · H_s1` (`N_s × N_R`), shared by all users' measurement matrices.
pub fn scatter_operator(links: &LinkSet, irs: &IrsPattern) -> Result<CMat> {
    check_pattern(links, irs)?;
    let theta = irs.coefficients();
    let weighted = CMat::from_fn(links.voxel_count(), links.irs_count(), |j, i| {
        links.s2[(j, i)] * theta[i]
    });
    weighted.matmul(&links.s1)
}

/// Scatter part `S(x)` of the channel, `N_u × N_R`.
pub fn scatter_channel(links: &LinkSet, irs: &IrsPattern, x: &ScattererField) -> Result<CMat> {
    check_pattern(links, irs)?;
    if x.len() != links.voxel_count() {
        return Err(Error::Dimension(format!(
            "field has {} voxels, links have {}",
            x.len(),
            links.voxel_count()
        )));
    }
    let theta = irs.coefficients();
    let (nu, ni) = (links.user_count(), links.irs_count());
    let support = x.support();
    // Row u of xᵀ diag(s3_u) H_s2, then elementwise Θ.
    let mut w = CMat::zeros(nu, ni);
    for u in 0..nu {
        let row = w.row_mut(u);
        for &j in &support {
            let coef = links.s3[(u, j)] * x.values()[j];
            for (acc, &g) in row.iter_mut().zip(links.s2.row(j)) {
                *acc += coef * g;
            }
        }
        for (acc, &t) in row.iter_mut().zip(theta) {
            *acc *= t;
        }
    }
    w.matmul(&links.s1)
}

/// Composite channel `H_r` (`N_u × N_R`) for one ORE.
pub fn composite_channel(links: &LinkSet, irs: &IrsPattern, x: &ScattererField) -> Result<CMat> {
    known_channel(links, irs)?.add(&scatter_channel(links, irs, x)?)
}

/// Measurement matrix `A(u)` (`N_R × N_s`) with `A(u)·x = S(x)[u, :]ᵀ`.
pub fn measurement_matrix(links: &LinkSet, irs: &IrsPattern, user: usize) -> Result<CMat> {
    let op = scatter_operator(links, irs)?;
    measurement_from_operator(links, &op, user)
}

/// Same as [`measurement_matrix`] from a precomputed [`scatter_operator`].
pub fn measurement_from_operator(links: &LinkSet, op: &CMat, user: usize) -> Result<CMat> {
    if user >= links.user_count() {
        return Err(Error::Index(format!(
            "user {user} of {}",
            links.user_count()
        )));
    }
    if op.shape() != (links.voxel_count(), links.antenna_count()) {
        return Err(Error::Dimension(format!(
            "scatter operator {:?}, expected ({}, {})",
            op.shape(),
            links.voxel_count(),
            links.antenna_count()
        )));
    }
    let s3 = links.s3.row(user);
    Ok(CMat::from_fn(op.cols(), op.rows(), |a, j| s3[j] * op[(j, a)]))
}

/// Stacks measurement blocks vertically, in the order given.
pub fn stack_measurements(rows: &[Vec<C64>], mats: &[CMat]) -> Result<(Vec<C64>, CMat)> {
    if rows.is_empty() || rows.len() != mats.len() {
        return Err(Error::Dimension(format!(
            "{} measurement vectors vs {} matrices",
            rows.len(),
            mats.len()
        )));
    }
    let cols = mats[0].cols();
    let total: usize = mats.iter().map(|m| m.rows()).sum();
    let mut h = Vec::with_capacity(total);
    let mut data = Vec::with_capacity(total * cols);
    for (k, (r, m)) in rows.iter().zip(mats).enumerate() {
        if m.cols() != cols || r.len() != m.rows() {
            return Err(Error::Dimension(format!(
                "block {k}: {} values against a {}x{} matrix (expected {cols} columns)",
                r.len(),
                m.rows(),
                m.cols()
            )));
        }
        h.extend_from_slice(r);
        data.extend_from_slice(m.as_slice());
    }
    Ok((h, CMat::from_vec(total, cols, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (RoomSpec, Geometry) {
        let room = RoomSpec::standard();
        let geom = Geometry::new(
            vec![[1.0, 1.5, 0.0], [3.0, 2.5, 0.0]],
            vec![[2.0, 0.0, 2.0], [2.3, 0.0, 2.0]],
            vec![[0.0, 1.0, 2.0], [0.0, 1.1, 2.0], [0.0, 1.0, 2.1]],
            &room,
        )
        .unwrap();
        (room, geom)
    }

    #[test]
    fn hand_computed_gain_at_one_meter() {
        let g = free_space_gain(1.0, 29e9);
        let expect = 299_792_458.0 / (4.0 * std::f64::consts::PI * 29e9);
        assert!((g.norm() - expect).abs() < 1e-18);
        assert!((expect - 8.2264e-4).abs() < 1e-7);
    }

    #[test]
    fn amplitude_follows_inverse_distance_and_frequency() {
        let f = 29e9;
        assert!((free_space_gain(2.0, f).norm() * 2.0 - free_space_gain(1.0, f).norm()).abs() < 1e-16);
        let (a, b) = (free_space_gain(1.3, f), free_space_gain(1.3, 2.0 * f));
        assert!((a.norm() / b.norm() - 2.0).abs() < 1e-12);
        let phase = |f: f64| -2.0 * PI * f * 1.3 / SPEED_OF_LIGHT;
        let wrap = |p: f64| (p + PI).rem_euclid(2.0 * PI) - PI;
        assert!((wrap(a.arg() - phase(f))).abs() < 1e-9);
        assert!((wrap(b.arg() - phase(2.0 * f))).abs() < 1e-9);
    }

    #[test]
    fn link_shapes_and_degenerate_geometry() {
        let (room, geom) = toy();
        let grid = OreGrid::band(4).unwrap();
        let links = los_links(&geom, &room, &grid).unwrap();
        assert_eq!(links.len(), 4);
        let l = &links[0];
        assert_eq!(l.los.shape(), (2, 2));
        assert_eq!(l.irs1.shape(), (2, 3));
        assert_eq!(l.s1.shape(), (3, 2));
        assert_eq!(l.s2.shape(), (512, 3));
        assert_eq!(l.s3.shape(), (2, 512));

        // A user 0.5 m from the AP is inside one voxel diagonal.
        let bad = Geometry::new(vec![[2.0, 0.5, 2.0]], geom.ap().to_vec(), geom.irs().to_vec(), &room).unwrap();
        assert!(matches!(
            los_links(&bad, &room, &grid),
            Err(Error::DegenerateLink { link: "user-AP", .. })
        ));
        // A user at a voxel center.
        let bad = Geometry::new(vec![[2.25, 2.25, 0.25]], geom.ap().to_vec(), geom.irs().to_vec(), &room).unwrap();
        assert!(matches!(
            los_links(&bad, &room, &grid),
            Err(Error::DegenerateLink { link: "user-voxel", .. })
        ));
    }

    #[test]
    fn ore_grid_spans_band() {
        let g = OreGrid::band(4).unwrap();
        assert_eq!(g.frequencies(), &[28.25e9, 28.75e9, 29.25e9, 29.75e9]);
        assert!(OreGrid::band(0).is_err());
    }

    #[test]
    fn irs_pattern_validation() {
        assert!(IrsPattern::new(&[1.0, 0.5], &[0.0, PI], 0).is_ok());
        assert!(IrsPattern::new(&[1.1], &[0.0], 0).is_err());
        assert!(IrsPattern::new(&[1.0], &[2.0 * PI], 0).is_err());
        let p = IrsPattern::random_binary(400, 3, 11);
        assert!(p
            .coefficients()
            .iter()
            .all(|c| *c == C64::new(1.0, 0.0) || *c == C64::new(-1.0, 0.0)));
        assert_eq!(p.packet(), 3);
    }

    #[test]
    fn geometry_text_roundtrip() {
        let (room, geom) = toy();
        let back = parse_geometry(&format_geometry(&geom), &room).unwrap();
        assert_eq!(back, geom);
        assert!(parse_geometry("users\n1 1 1\nap\n2 0 2\n", &room).is_err());
        assert!(parse_geometry("users\n9 1 1\nap\n2 0 2\nirs\n0 1 2\n", &room).is_err());
        assert!(parse_geometry("1 1 1\n", &room).is_err());
    }

    #[test]
    fn stacking_checks_alignment() {
        let m = CMat::zeros(2, 5);
        let r = vec![ZERO; 2];
        let (h, a) = stack_measurements(&[r.clone(), r.clone()], &[m.clone(), m.clone()]).unwrap();
        assert_eq!(h.len(), 4);
        assert_eq!(a.shape(), (4, 5));
        assert!(stack_measurements(&[r.clone()], &[m.clone(), m.clone()]).is_err());
        assert!(stack_measurements(&[vec![ZERO; 3]], &[m]).is_err());
        assert!(stack_measurements(&[], &[]).is_err());
    }
}
