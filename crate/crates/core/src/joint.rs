//! Iterative decode ↔ sense loop over a stream of packets.
//!
//! A pilot packet bootstraps the scatterer estimate. Each data packet is
//! then decoded with the channel predicted from the current estimate, the
//! estimate is refreshed from a sliding window of packets, the pair is
//! re-iterated a few times, and the newest estimate is fed back to
//! re-decode the previous packets.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::{composite_channel, IrsPattern};
use crate::error::{Error, Result};
use crate::gamp::{GampConfig, PriorParams};
use crate::linalg::{distance, CMat, Matrix};
use crate::metrics::mse;
use crate::mpa::{decode_frame, ser, Combining, MpaConfig};
use crate::scenario::Scenario;
use crate::scene::ScattererField;
use crate::scma::Codebook;
use crate::sensing::{sense, Observation, OreSelection, SenseWindow};
use crate::transceiver::{noise_sigma, transmit, Frame, ReceivedFrame};

/// What energy `ebn0_db` refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseReference {
    /// Transmitted codeword energy per bit.
    Codeword,
    /// Energy per bit collected over the whole array through the known
    /// paths: the codeword reference scaled by `N_R` times the known-path
    /// channel power.
    #[default]
    Received,
}

/// Config-file form of [`OreSelection`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSelection {
    #[default]
    PerUser,
    FirstOre,
    All,
}

/// How the receiver's first estimate is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    /// Sense from a known pilot packet.
    #[default]
    Pilot,
    /// Start from an empty room.
    Cold,
    /// Start from the true scene.
    Genie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointConfig {
    /// Sensing window length in packets.
    pub n_f: usize,
    /// Number of earlier packets re-decoded by feedback.
    pub n_b: usize,
    /// Self-iterations per packet before the gate fires.
    pub k_s: usize,
    /// Convergence gate on `‖x̂_k − x̂_{k−1}‖₂`; `None` uses
    /// `0.05·√N_s·sparsity`.
    pub eps_k: Option<f64>,
    /// Momentum coefficient once the gate has fired.
    pub mu: f64,
    /// Data packets after the pilot.
    pub packets: usize,
    /// MPA rounds.
    pub k_it: usize,
    /// Slots per packet (N_T).
    pub slots: usize,
    pub ebn0_db: f64,
    pub noise_reference: NoiseReference,
    /// Overrides the noise variance derived from `ebn0_db`.
    pub sigma2: Option<f64>,
    /// Scene sparsity known to the receiver (prior λ and default gate).
    pub sparsity: Option<f64>,
    pub prior_theta: f64,
    pub prior_var: f64,
    /// Use the renormalised truncated prior.
    pub renormalized_prior: bool,
    /// Feedback-revised symbols replace their entries in the sensing window.
    pub refresh_window: bool,
    /// Which ORE blocks feed the imaging system.
    pub rows: RowSelection,
    /// Decode with likelihoods combined across antennas in each function node.
    pub joint_antennas: bool,
    pub start: Start,
    pub gamp_damping: f64,
    pub gamp_max_iter: usize,
    /// Refit the detected support by box-constrained least squares.
    pub gamp_refine: bool,
    /// Refine by posterior ascent over the support instead.
    pub gamp_polish: bool,
    /// Start GAMP from the previous estimate.
    pub warm_start: bool,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            n_f: 10,
            n_b: 1,
            k_s: 5,
            eps_k: None,
            mu: 0.0,
            packets: 30,
            k_it: 10,
            slots: 64,
            ebn0_db: 10.0,
            noise_reference: NoiseReference::Received,
            sigma2: None,
            sparsity: None,
            prior_theta: 0.5,
            prior_var: 0.1,
            renormalized_prior: false,
            refresh_window: true,
            rows: RowSelection::PerUser,
            joint_antennas: false,
            start: Start::Pilot,
            gamp_damping: 0.7,
            gamp_max_iter: 200,
            gamp_refine: true,
            gamp_polish: false,
            warm_start: false,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_f == 0 {
            return bad("n_f must be at least 1".into());
        }
        if let Some(e) = self.eps_k {
            if !(e > 0.0) {
                return bad(format!("eps_k = {e} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.mu) {
            return bad(format!("mu = {} outside [0, 1)", self.mu));
        }
        if self.k_it == 0 || self.slots == 0 {
            return bad("k_it and slots must be positive".into());
        }
        if let Some(s) = self.sparsity {
            if !(s > 0.0 && s < 1.0) {
                return bad(format!("sparsity {s} outside (0, 1)"));
            }
        }
        if !(0.0 < self.gamp_damping && self.gamp_damping <= 1.0) {
            return bad(format!("gamp_damping {} outside (0, 1]", self.gamp_damping));
        }
        Ok(())
    }

    pub fn eps_k(&self, voxels: usize) -> f64 {
        self.eps_k
            .unwrap_or_else(|| 0.05 * (voxels as f64).sqrt() * self.sparsity.unwrap_or(0.05))
    }

    pub fn mpa(&self) -> MpaConfig {
        MpaConfig {
            iterations: self.k_it,
            combining: if self.joint_antennas { Combining::Joint } else { Combining::PerAntenna },
            ..MpaConfig::default()
        }
    }

    pub fn gamp(&self) -> GampConfig {
        GampConfig {
            damping: self.gamp_damping,
            max_iter: self.gamp_max_iter,
            refine_support: self.gamp_refine,
            polish: self.gamp_polish,
            // Residual target set from the window's noise level.
            tolerance: 0.0,
            ..GampConfig::default()
        }
    }

    pub fn prior(&self) -> Result<PriorParams> {
        Ok(PriorParams::new(self.sparsity.unwrap_or(0.05), self.prior_theta, self.prior_var, 0.0)?
            .renormalized(self.renormalized_prior))
    }

    pub fn ore_selection(&self) -> OreSelection {
        match self.rows {
            RowSelection::PerUser => OreSelection::PerUser,
            RowSelection::FirstOre => OreSelection::Single(0),
            RowSelection::All => OreSelection::All,
        }
    }

    /// Noise variance per received sample.
    pub fn noise(&self, cb: &Codebook, scenario: &Scenario) -> f64 {
        self.sigma2.unwrap_or_else(|| {
            let base = noise_sigma(self.ebn0_db, cb);
            match self.noise_reference {
                NoiseReference::Codeword => base,
                NoiseReference::Received => base * scenario.antenna_count() as f64 * scenario.known_gain(),
            }
        })
    }
}

/// Why a symbol revision happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevisionSource {
    SelfIteration,
    Feedback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Revision {
    /// Packet whose symbols changed.
    pub packet: usize,
    /// Packet being processed when it happened.
    pub at: usize,
    pub source: RevisionSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub mse: f64,
    /// SER of the forward decode, made with the channel predicted from
    /// `x̂_{k−1}`.
    pub ser: f64,
    /// SER of this packet's final symbols, after self-iteration and any
    /// later feedback re-decoding.
    pub ser_post_feedback: f64,
    /// Gate status after this packet.
    pub gate: bool,
    /// Momentum coefficient used for this packet.
    pub mu_used: f64,
    pub ks_used: usize,
    /// Decode + sense time of the forward step.
    pub forward_ms: f64,
    pub wall_ms: f64,
    pub diverged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub pilot_mse: f64,
    pub x0: Vec<f64>,
    pub packets: Vec<PacketRecord>,
    pub revisions: Vec<Revision>,
}

impl RunTrace {
    pub fn final_x(&self) -> &[f64] {
        self.packets.last().map(|p| p.x.as_slice()).unwrap_or(&self.x0)
    }

    /// Writes `k,mse,ser,ser_post_feedback,gate,ks_used,wall_ms` rows.
    /// With `timing` off the time column is written as 0 so reruns are
    /// byte-identical.
    pub fn write_csv<W: Write>(&self, out: W, timing: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_COLUMNS)?;
        for p in &self.packets {
            w.serialize((
                p.k,
                p.mse,
                p.ser,
                p.ser_post_feedback,
                u8::from(p.gate),
                p.ks_used,
                if timing { p.wall_ms } else { 0.0 },
            ))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const TRACE_COLUMNS: [&str; 7] = ["k", "mse", "ser", "ser_post_feedback", "gate", "ks_used", "wall_ms"];

/// Everything the receiver knows up front.
pub struct Receiver<'a> {
    pub scenario: &'a Scenario,
    pub cb: &'a Codebook,
    pub cfg: &'a JointConfig,
    sigma2: f64,
    prior: PriorParams,
    gamp: GampConfig,
    mpa: MpaConfig,
    eps_k: f64,
    window: SenseWindow,
    /// Last `n_b` data packets kept for feedback.
    recent: VecDeque<Stored>,
    /// Current estimate `x̂_k` and the one before it.
    pub x: ScattererField,
    pub x_prev: ScattererField,
    /// Estimates by packet index, for the feedback stop rule.
    history: VecDeque<(usize, ScattererField)>,
    gate: bool,
    ks_collapsed: bool,
    pub revisions: Vec<Revision>,
}

struct Stored {
    packet: usize,
    rx: ReceivedFrame,
    irs: IrsPattern,
    decoded: Matrix<usize>,
}

impl<'a> Receiver<'a> {
    pub fn new(scenario: &'a Scenario, cb: &'a Codebook, cfg: &'a JointConfig) -> Result<Self> {
        cfg.validate()?;
        if scenario.links.len() != cb.ore_count() {
            return Err(Error::Dimension(format!(
                "{} link sets for a {}-ORE codebook",
                scenario.links.len(),
                cb.ore_count()
            )));
        }
        if scenario.geometry.user_count() != cb.user_count() {
            return Err(Error::Dimension(format!(
                "{} users placed, codebook has {}",
                scenario.geometry.user_count(),
                cb.user_count()
            )));
        }
        let ns = scenario.room.voxel_count();
        Ok(Receiver {
            scenario,
            cb,
            cfg,
            sigma2: cfg.noise(cb, scenario),
            prior: cfg.prior()?,
            gamp: cfg.gamp(),
            mpa: cfg.mpa(),
            eps_k: cfg.eps_k(ns),
            window: SenseWindow::new(cfg.n_f, 0.0)?,
            recent: VecDeque::new(),
            x: ScattererField::zeros(ns),
            x_prev: ScattererField::zeros(ns),
            history: VecDeque::new(),
            gate: false,
            ks_collapsed: false,
            revisions: Vec::new(),
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn gate(&self) -> bool {
        self.gate
    }

    pub fn window(&self) -> &SenseWindow {
        &self.window
    }

    /// Predicted per-ORE channels for pattern `irs` from estimate `x`.
    pub fn predict(&self, irs: &IrsPattern, x: &ScattererField) -> Result<Vec<CMat>> {
        self.scenario
            .links
            .iter()
            .map(|l| composite_channel(l, irs, x))
            .collect()
    }

    fn decode(&self, rx: &ReceivedFrame, irs: &IrsPattern, x: &ScattererField) -> Result<Matrix<usize>> {
        let h = self.predict(irs, x)?;
        decode_frame(rx, &h, self.cb, self.sigma2, &self.mpa)
    }

    fn sense_now(&self, mu: f64) -> Result<ScattererField> {
        let mut w = self.window.clone();
        w.mu = mu;
        w.previous = Some(self.x_prev.clone());
        let warm = self.cfg.warm_start.then(|| self.x.values());
        Ok(sense(&w, &self.prior, &self.gamp, warm)?.x)
    }

    /// Senses from a known pilot packet and sets `x̂_0`. The pilot stays in
    /// the window as its first entry.
    pub fn pilot_init(&mut self, pilot: &Frame, rx: ReceivedFrame, irs: IrsPattern) -> Result<&ScattererField> {
        let obs = Observation::new(
            rx,
            pilot.symbols().clone(),
            irs,
            &self.scenario.links,
            self.cb,
            self.cfg.ore_selection(),
        )?;
        let mut w = SenseWindow::new(1, 0.0)?;
        w.push(obs.clone());
        let out = sense(&w, &self.prior, &self.gamp, None)?;
        self.window.push(obs);
        self.set_initial(out.x);
        Ok(&self.x)
    }

    /// Sets `x̂_0` directly (cold or genie start).
    pub fn set_initial(&mut self, x: ScattererField) {
        self.x_prev = x.clone();
        self.x = x;
        self.history.clear();
        self.history.push_back((0, self.x.clone()));
    }

    /// Decodes packet `k` with the channel predicted from `x̂_{k−1}`, adds it
    /// to the window and re-senses. Returns the decoded symbols.
    pub fn forward_step(&mut self, k: usize, rx: ReceivedFrame, irs: IrsPattern) -> Result<Matrix<usize>> {
        let decoded = self.decode(&rx, &irs, &self.x)?;
        let obs = Observation::new(
            rx.clone(),
            decoded.clone(),
            irs.clone(),
            &self.scenario.links,
            self.cb,
            self.cfg.ore_selection(),
        )?;
        self.window.push(obs);
        self.recent.push_back(Stored {
            packet: k,
            rx,
            irs,
            decoded: decoded.clone(),
        });
        while self.recent.len() > self.cfg.n_b.max(1) {
            self.recent.pop_front();
        }
        self.x_prev = self.x.clone();
        let mu = self.momentum();
        match self.sense_now(mu) {
            Ok(x) => self.x = x,
            Err(e @ Error::Diverged { .. }) => return Err(e),
            Err(e) => return Err(e),
        }
        Ok(decoded)
    }

    fn momentum(&self) -> f64 {
        if self.gate {
            self.cfg.mu
        } else {
            0.0
        }
    }

    /// Self-iterations allowed for the current packet.
    pub fn ks_now(&self) -> usize {
        if self.ks_collapsed {
            self.cfg.k_s.min(1)
        } else {
            self.cfg.k_s
        }
    }

    /// Re-decodes packet `k` from the latest estimate and re-senses, `ks`
    /// times. Returns the final symbols.
    pub fn self_iterate(&mut self, k: usize, ks: usize) -> Result<Option<Matrix<usize>>> {
        let mut last = None;
        for _ in 0..ks {
            let Some(stored) = self.recent.iter().find(|s| s.packet == k) else {
                break;
            };
            let decoded = self.decode(&stored.rx, &stored.irs, &self.x)?;
            let changed = decoded != stored.decoded;
            if changed {
                self.revisions.push(Revision {
                    packet: k,
                    at: k,
                    source: RevisionSource::SelfIteration,
                });
                if let Some(obs) = self.window.get_mut(k) {
                    obs.revise(decoded.clone(), &self.scenario.links, self.cb)?;
                }
                if let Some(s) = self.recent.iter_mut().find(|s| s.packet == k) {
                    s.decoded = decoded.clone();
                }
            }
            let mu = self.momentum();
            self.x = self.sense_now(mu)?;
            last = Some(decoded);
        }
        Ok(last)
    }

    /// Applies the convergence gate after packet `k`; returns its state.
    pub fn update_gate(&mut self, k: usize) -> bool {
        let step = distance(self.x.values(), self.x_prev.values());
        self.gate = step < self.eps_k;
        if self.gate {
            self.ks_collapsed = true;
        }
        self.history.push_back((k, self.x.clone()));
        while self.history.len() > self.cfg.n_b + 2 {
            self.history.pop_front();
        }
        self.gate
    }

    /// Re-decodes the `n_b` packets before `k` with the channel predicted
    /// from `x̂_k`. Skipped when `‖x̂_k − x̂_{k−n_b−1}‖ < ε_k`. Returns
    /// `(packet, symbols)` for each re-decoded packet.
    pub fn feedback(&mut self, k: usize) -> Result<Vec<(usize, Matrix<usize>)>> {
        let n_b = self.cfg.n_b;
        if n_b == 0 || k <= n_b {
            return Ok(Vec::new());
        }
        if let Some((_, old)) = self.history.iter().find(|(p, _)| *p + n_b + 1 == k) {
            if distance(self.x.values(), old.values()) < self.eps_k {
                return Ok(Vec::new());
            }
        }
        let targets: Vec<usize> = self
            .recent
            .iter()
            .map(|s| s.packet)
            .filter(|&p| p < k && p + n_b >= k)
            .collect();
        let mut out = Vec::new();
        for p in targets {
            let s = self.recent.iter().find(|s| s.packet == p).unwrap();
            let decoded = self.decode(&s.rx, &s.irs, &self.x)?;
            if decoded != s.decoded {
                self.revisions.push(Revision {
                    packet: p,
                    at: k,
                    source: RevisionSource::Feedback,
                });
                if self.cfg.refresh_window {
                    if let Some(obs) = self.window.get_mut(p) {
                        obs.revise(decoded.clone(), &self.scenario.links, self.cb)?;
                    }
                }
                self.recent.iter_mut().find(|s| s.packet == p).unwrap().decoded = decoded.clone();
            }
            out.push((p, decoded));
        }
        Ok(out)
    }
}

/// splitmix64 finaliser used to derive independent sub-streams.
pub fn mix_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_IRS: u64 = 1;
const TAG_SYMBOLS: u64 = 2;
const TAG_NOISE: u64 = 3;

/// Transmitter side of packet `k` (0 is the pilot).
pub fn simulate_packet(
    scene: &ScattererField,
    scenario: &Scenario,
    cb: &Codebook,
    cfg: &JointConfig,
    sigma2: f64,
    k: usize,
    seed: u64,
) -> Result<(Frame, ReceivedFrame, IrsPattern)> {
    let irs = IrsPattern::random_binary(scenario.geometry.irs_count(), k, mix_seed(seed, TAG_IRS, k as u64));
    let frame = Frame::random(cfg.slots, cb, k, mix_seed(seed, TAG_SYMBOLS, k as u64));
    let h: Vec<CMat> = scenario
        .links
        .iter()
        .map(|l| composite_channel(l, &irs, scene))
        .collect::<Result<_>>()?;
    let rx = transmit(&frame, &h, cb, sigma2, mix_seed(seed, TAG_NOISE, k as u64))?;
    Ok((frame, rx, irs))
}

/// Runs the full pilot + `K`-packet loop against a known scene.
pub fn run(scene: &ScattererField, scenario: &Scenario, cb: &Codebook, cfg: &JointConfig, seed: u64) -> Result<RunTrace> {
    let mut rxr = Receiver::new(scenario, cb, cfg)?;
    if scene.len() != scenario.room.voxel_count() {
        return Err(Error::Dimension(format!(
            "scene has {} voxels, room {}",
            scene.len(),
            scenario.room.voxel_count()
        )));
    }
    let sigma2 = rxr.sigma2();
    match cfg.start {
        Start::Pilot => {
            let (pilot, rx, irs) = simulate_packet(scene, scenario, cb, cfg, sigma2, 0, seed)?;
            rxr.pilot_init(&pilot, rx, irs)?;
        }
        Start::Cold => rxr.set_initial(ScattererField::zeros(scene.len())),
        Start::Genie => rxr.set_initial(scene.clone()),
    }
    let x0 = rxr.x.values().to_vec();
    let pilot_mse = mse(&x0, scene.values())?;

    let mut packets: Vec<PacketRecord> = Vec::with_capacity(cfg.packets);
    let mut truth: Vec<Matrix<usize>> = Vec::with_capacity(cfg.packets);
    for k in 1..=cfg.packets {
        let started = Instant::now();
        let (frame, rx, irs) = simulate_packet(scene, scenario, cb, cfg, sigma2, k, seed)?;
        truth.push(frame.symbols().clone());
        let mu_used = if rxr.gate() { cfg.mu } else { 0.0 };
        let mut diverged = false;
        let mut error = None;
        let ks = rxr.ks_now();

        let t0 = Instant::now();
        let before = rxr.x.clone();
        let mut decoded = match rxr.forward_step(k, rx, irs) {
            Ok(d) => Some(d),
            Err(e) => {
                diverged = matches!(e, Error::Diverged { .. });
                error = Some(e.to_string());
                rxr.x = before.clone();
                None
            }
        };
        let forward_ms = t0.elapsed().as_secs_f64() * 1e3;
        let ser_forward = match &decoded {
            Some(d) => ser(d, frame.symbols())?,
            None => f64::NAN,
        };

        if decoded.is_some() {
            match rxr.self_iterate(k, ks) {
                Ok(Some(d)) => decoded = Some(d),
                Ok(None) => {}
                Err(e) => {
                    diverged |= matches!(e, Error::Diverged { .. });
                    error.get_or_insert(e.to_string());
                    rxr.x = before.clone();
                }
            }
        }
        let gate = rxr.update_gate(k);
        let ser_final = match &decoded {
            Some(d) => ser(d, frame.symbols())?,
            None => f64::NAN,
        };
        match rxr.feedback(k) {
            Ok(revised) => {
                for (p, d) in revised {
                    packets[p - 1].ser_post_feedback = ser(&d, &truth[p - 1])?;
                }
            }
            Err(e) => {
                error.get_or_insert(e.to_string());
            }
        }
        let x = rxr.x.values().to_vec();
        packets.push(PacketRecord {
            k,
            mse: mse(&x, scene.values())?,
            x,
            ser: ser_forward,
            ser_post_feedback: ser_final,
            gate,
            mu_used,
            ks_used: if decoded.is_some() { ks } else { 0 },
            forward_ms,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            diverged,
            error,
        });
    }
    Ok(RunTrace {
        pilot_mse,
        x0,
        packets,
        revisions: rxr.revisions,
    })
}
