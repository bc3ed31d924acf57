//! Fixtures shared by the criterion benches.

use jcas_core::joint::simulate_packet;
use jcas_core::scenario::{LayoutConfig, Scenario};
use jcas_core::{random_scene, Codebook, IrsPattern, JointConfig, ReceivedFrame, RoomSpec, ScattererField};

/// One trial's system plus a simulated packet.
pub struct Fixture {
    pub codebook: Codebook,
    pub scenario: Scenario,
    pub scene: ScattererField,
    pub joint: JointConfig,
    pub sigma2: f64,
}

impl Fixture {
    /// Standard room, `users` users on a bundled (6 users) or generated
    /// `ores`-ORE book, 1.5% sparsity.
    pub fn new(users: usize, ores: usize, slots: usize) -> Self {
        let codebook = if (users, ores) == (6, 4) {
            Codebook::bundled()
        } else {
            Codebook::generate(users, ores, 2, 4).expect("codebook")
        };
        let room = RoomSpec::standard();
        let scene = random_scene(&room, 0.015, 1).expect("scene");
        let scenario = Scenario::standard(room, users, ores, &LayoutConfig::default(), 2).expect("scenario");
        let joint = JointConfig {
            slots,
            gamp_max_iter: 50,
            ..JointConfig::default()
        };
        let sigma2 = joint.noise(&codebook, &scenario);
        Fixture {
            codebook,
            scenario,
            scene,
            joint,
            sigma2,
        }
    }

    pub fn packet(&self, k: usize) -> (ReceivedFrame, IrsPattern, jcas_core::Frame) {
        let (frame, rx, irs) = simulate_packet(&self.scene, &self.scenario, &self.codebook, &self.joint, self.sigma2, k, 9)
            .expect("packet");
        (rx, irs, frame)
    }
}
