//! Fractal social organizations: systemic classification, hierarchies of
//! nodes, role-flow enrollment of social overlay networks (SONs), SON-space
//! enumeration, adaptive dimensioning, knowledge accrual, and a
//! deterministic simulator.

pub mod allocation;
pub mod classification;
pub mod export;
pub mod hierarchy;
pub mod knowledge;
pub mod roleflow;
pub mod simulation;
pub mod sonspace;
