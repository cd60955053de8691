//! Switched predictor-feedback stabilization of input-delayed nonlinear
//! systems under dynamic state or input quantization.
//!
//! The actuator delay is represented by a transport PDE on `[0, D]` sampled on
//! a uniform grid. A zooming supervisor first grows the quantizer range until
//! the measured state is captured, then shrinks it geometrically while a
//! predictor-based feedback acts on quantized data.

pub mod error;
pub mod gains;
pub mod manifest;
pub mod model;
pub mod ode;
pub mod predictor;
pub mod quantizer;
pub mod scenario;
pub mod sim;
pub mod supervisor;
pub mod trace;
pub mod verify;

pub use error::{Error, Result};
pub use gains::{compute_gains, compute_gains_from, DesignParams, GainLedger, PlantConstants, Requirement};
pub use model::{ActuatorGrid, CompositeState, FeedbackSpec, GesCertificate, PlantSpec};
pub use quantizer::{QuantizerKind, QuantizerSpec, ZoomValue};
pub use supervisor::{Event, EventKind, Phase, Schedule, SupervisorState, TriggerRule};
pub use scenario::{InitialInput, InputHold, Mode, PlantChoice, Resolved, ScenarioConfig};
pub use trace::{SimTrace, TraceRecord};
pub use verify::{CheckEntry, CheckStatus, EnvelopeReport};
pub use manifest::RunManifest;
