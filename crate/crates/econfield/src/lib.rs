pub mod espace;
pub mod hydro;
pub mod kinetic;
pub mod waves;
