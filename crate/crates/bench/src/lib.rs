//! Fixtures shared by the benchmarks in `benches/`.

use mrloc::archive::Dataset;
use mrloc::harness::{generate_dataset, ScenarioConfig};
use mrloc::room::{simulate_rir, ImpulseResponse, RoomSpec};
use mrloc::synth::{make_white_source, synthesize_pair, MicrophonePair};

/// Desk-scale scenario with short sources, so setup stays quick.
pub fn scenario(train: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.room.t60 = 0.15;
    cfg.samples.train = train;
    cfg.samples.test = 10;
    cfg.samples.source_duration = 0.5;
    cfg
}

pub fn dataset(train: usize) -> (ScenarioConfig, Dataset) {
    let cfg = scenario(train);
    let ds = generate_dataset(&cfg).expect("fixture dataset");
    (cfg, ds)
}

/// Room and responses for the middle azimuth of the default constellation.
pub fn responses(t60: f64) -> (RoomSpec, ImpulseResponse, ImpulseResponse) {
    let mut cfg = ScenarioConfig::default();
    cfg.room.t60 = t60;
    let room = cfg.room_spec().expect("room");
    let cons = cfg.constellation();
    let src = cons.azimuth_to_position(&room, 35.0).expect("source position");
    let h1 = simulate_rir(&room, &src, &cons.mic1).expect("rir");
    let h2 = simulate_rir(&room, &src, &cons.mic2_rotated()).expect("rir");
    (room, h1, h2)
}

pub fn pair(t60: f64, seconds: f64) -> MicrophonePair {
    let (room, h1, h2) = responses(t60);
    let source = make_white_source(seconds, room.sample_rate, 3).expect("source");
    synthesize_pair(&source, &h1, &h2, 20.0, 4).expect("pair")
}
