//! Design and validation of event-triggered sampled-data controllers for
//! linear networked control systems.
//!
//! The crate covers the full loop: plant descriptions, linear matrix
//! inequality (LMI) feasibility certificates for a switching event-trigger
//! with a waiting time, bisection search for the largest certifiable waiting
//! time, a deterministic fixed-step simulator for the networked closed loop,
//! and post-hoc analysis (communication metrics, decay fits, Lyapunov
//! certificate evaluation, disturbance gain estimates).

pub mod analysis;
pub mod lmi;
pub mod margin;
pub mod plant;
pub mod sim;
pub mod synthesis;

pub use nalgebra;

/// Dense dynamic matrix used throughout.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense dynamic vector used throughout.
pub type Vec64 = nalgebra::DVector<f64>;
