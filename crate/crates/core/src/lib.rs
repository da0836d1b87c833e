//! Market equilibrium of a multimodal mobility system: travelers choosing
//! between driving, ride-sourcing and ride-sourcing plus transit, ride-sourcing
//! drivers relocating or signing out, and the locational prices that clear
//! every zone.

pub mod analytics;
pub mod choice;
pub mod cli;
pub mod equilibrium;
pub mod netgraph;
pub mod oracle;
pub mod scenario;
