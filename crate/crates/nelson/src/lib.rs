//! Desk-scale numerical laboratory for the massless Nelson model.
//!
//! A non-relativistic electron is linearly coupled to massless scalar photons.
//! We discretize photon momentum space ([`modegrid`]), truncate the symmetric
//! Fock space by total occupation ([`fock`]), assemble fiber and dressed
//! Hamiltonians at fixed total momentum ([`hamiltonian`]), solve for dressed
//! ground states and their infrared-cutoff scaling ([`spectral`]), evaluate the
//! oscillatory phase functions γ and γ_int ([`phases`]), and assemble the
//! infraparticle wave-packet integrands whose norms drive the Cook-method
//! convergence checks ([`wavepacket`]).
//!
//! Everything is deterministic for a fixed seed: summation orders are fixed,
//! solvers start from seeded vectors, and parallel maps collect in index order.

pub mod cache;
pub mod error;
pub mod fit;
pub mod fock;
pub mod hamiltonian;
pub mod modegrid;
pub mod oscillatory;
pub mod phases;
pub mod quadrature;
pub mod spectral;
pub mod wavepacket;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
