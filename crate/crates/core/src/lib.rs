pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod game;
pub mod potential;
pub mod simplex;
pub mod simulate;
pub mod scenario;
pub mod cli;
