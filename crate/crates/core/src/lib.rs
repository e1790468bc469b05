pub mod bus;
pub mod camsim;
pub mod clock;
pub mod controller;
pub mod datasync;
pub mod halsim;
pub mod mission;
pub mod procman;
pub mod recorder;
pub mod scalar;
pub mod sim;

pub use scalar::Real;

pub type Controller64 = controller::Controller<f64>;
pub type Controller32 = controller::Controller<f32>;
pub type HalSim64 = halsim::HalSim<f64>;
pub type HalSim32 = halsim::HalSim<f32>;
pub type PlantState64 = halsim::PlantState<f64>;
pub type Trajectory64 = controller::Trajectory<f64>;
