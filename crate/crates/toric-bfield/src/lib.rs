//! Numerical toolkit for special representatives of complexified Kähler
//! classes on toric manifolds: Delzant polytope geometry, cohomological
//! invariants of a class `i[ω] + [B]`, the Abreu operator and symplectic
//! potentials, polytope K-stability estimation, pointwise dHYM algebra,
//! a Newton continuation solver for the coupled scalar-curvature/dHYM
//! system on surfaces, and the momentum-profile solver for the Calabi
//! ansatz threefold `P(O ⊕ O(1,-1)) → P¹×P¹`.
//!
//! Everything is expressed in momentum coordinates on the moment polytope.
//! The normalization used throughout: integrals over the manifold of an
//! invariant function against ωⁿ equal `n!` times the polytope integral
//! against Lebesgue measure dμ, and the boundary measure dσ carries twice
//! the lattice measure on each facet, so that the Guillemin potential of
//! the unit square has constant Abreu value 8 = vol(∂P, dσ)/vol(P, dμ).

pub mod calabi;
pub mod classes;
pub mod continuity;
pub mod dhym;
pub mod grid;
pub mod guillemin;
pub mod kstability;
pub mod linprog;
pub mod polytope;
pub mod potentials;
pub mod smallmat;

pub use classes::{AngleData, ToricClass};
pub use polytope::{DelzantPolytope, QuadratureScheme};
pub use potentials::SymplecticPotential;
