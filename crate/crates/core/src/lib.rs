pub mod law;
pub mod par;
pub mod series;
pub mod ode;
pub mod generator;
pub mod wave;
pub mod quad;
pub mod gw;
pub mod sim;
pub mod asymptotics;
pub mod config;
pub mod runner;
