//! State-vector simulation of small qubit registers.
//!
//! Covers Pauli observables, amplitude encoding, the hardware-efficient
//! ansatz with adjoint gradients, graph-level expectation layers and the
//! frozen observable cache used at inference.

mod cache;
mod circuit;
mod ops;
mod pauli;
mod state;

pub use cache::{
    cached_expectation, evolve_observable, CacheBuilder, CacheEntry, CacheKey, CacheKind, EvolutionMap,
    ObservableCache, Role, CACHE_MAGIC, CACHE_VERSION,
};
pub use circuit::{hea_unitary, rotation, run_statevector, unitary_vjp, AnsatzParams, Axis, Gate, Hea};
pub use ops::{ansatz_expectations, congruence_values, pauli_quadratic};
pub use pauli::{select_observables, ObservableMode, Pauli, PauliMask, PauliString};
pub use state::{amplitude_encode, congruence_expectation, expectation, ENCODE_EPS};
