//! Syntactic tracking: stochastic grammars over motion modes, a probabilistic
//! Earley parser over soft terminal inputs, multiple-model trackers, a GMTI
//! scenario simulator and an online trajectory classifier.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod grammar;
pub mod io;
pub mod kinematics;
pub mod num;
pub mod parser;
pub mod simulator;
pub mod tracker;

pub use num::Real;

/// Double-precision instantiations of the generic types.
pub type Detection64 = kinematics::Detection<f64>;
pub type Platform64 = kinematics::Platform<f64>;
pub type KinematicState64 = kinematics::KinematicState<f64>;
pub type NoiseConfig64 = kinematics::NoiseConfig<f64>;
pub type Chart64 = parser::Chart<f64>;
pub type ParserConfig64 = parser::ParserConfig<f64>;
pub type SoftTerminal64 = parser::SoftTerminal<f64>;
pub type TrackerConfig64 = tracker::TrackerConfig<f64>;
pub type ImmBank64 = tracker::ImmBank<f64>;
pub type ParticleSet64 = tracker::ParticleSet<f64>;
pub type ScenarioConfig64 = simulator::ScenarioConfig<f64>;
pub type Scenario64 = simulator::Scenario<f64>;
pub type ClassifierConfig64 = classifier::ClassifierConfig<f64>;
pub type Classifier64 = classifier::Classifier<f64>;
pub type TrackHypothesis64 = classifier::TrackHypothesis<f64>;

/// Single-precision instantiations.
pub type Detection32 = kinematics::Detection<f32>;
pub type KinematicState32 = kinematics::KinematicState<f32>;
pub type Chart32 = parser::Chart<f32>;
pub type TrackerConfig32 = tracker::TrackerConfig<f32>;
pub type ClassifierConfig32 = classifier::ClassifierConfig<f32>;
pub type Classifier32 = classifier::Classifier<f32>;
