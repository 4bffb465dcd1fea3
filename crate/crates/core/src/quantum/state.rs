use num_complex::Complex64;

use super::pauli::PauliString;
use crate::error::{Error, Result};
use crate::tensor::{ComplexMatrix, Tensor};

/// Norm below which a token cannot be amplitude-encoded.
pub const ENCODE_EPS: f64 = 1e-12;

/// L2-normalises `x` and zero-pads it to `2ⁿ` amplitudes.
pub fn amplitude_encode(x: &[f64], n: usize) -> Result<Vec<Complex64>> {
    let d = 1usize << n;
    if x.len() > d {
        return Err(Error::Shape(format!(
            "vector of length {} does not fit {n} qubits",
            x.len()
        )));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < ENCODE_EPS || !norm.is_finite() {
        return Err(Error::DegenerateToken(norm));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); d];
    for (o, v) in out.iter_mut().zip(x) {
        *o = Complex64::new(v / norm, 0.0);
    }
    Ok(out)
}

/// `⟨ψ|O|ψ⟩` for Hermitian `O` and unit `ψ`.
pub fn expectation(state: &[Complex64], obs: &ComplexMatrix) -> Result<f64> {
    if state.len() != obs.dim() {
        return Err(Error::Shape(format!(
            "state of length {} vs observable of dim {}",
            state.len(),
            obs.dim()
        )));
    }
    if obs.hermiticity_error() > 1e-10 {
        return Err(Error::Contract("observable is not Hermitian".into()));
    }
    let norm2: f64 = state.iter().map(|a| a.norm_sqr()).sum();
    if (norm2.sqrt() - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("state norm {} is not 1", norm2.sqrt())));
    }
    let o_psi = obs.apply(state);
    let value: Complex64 = state.iter().zip(&o_psi).map(|(a, b)| a.conj() * b).sum();
    // Hermitian O gives a real value; the residue is rounding.
    debug_assert!(value.im.abs() < 1e-10);
    Ok(value.re)
}

/// `⟨x| Wᵀ P W |x⟩ = yᵀ Re(P) y` with `y = W x`, for real `W` and `x`.
pub fn congruence_expectation(x: &[f64], w: &Tensor, obs: &PauliString) -> Result<f64> {
    let (rows, cols) = crate::tensor::dims2(w)?;
    if cols != x.len() || rows != 1 << obs.n_qubits() {
        return Err(Error::Shape(format!(
            "map {:?} applied to vector of length {} for a {}-qubit observable",
            w.shape(),
            x.len(),
            obs.n_qubits()
        )));
    }
    check_real_congruence(obs)?;
    let y: Vec<f64> = (0..rows).map(|r| crate::tensor::kernels::dot(w.row(r), x)).collect();
    Ok(obs.mask().real_quadratic(&y))
}

pub(crate) fn check_real_congruence(obs: &PauliString) -> Result<()> {
    if obs.y_parity() == 1 {
        return Err(Error::Config(format!(
            "observable {obs} has odd Y-count; its real congruence expectation is identically zero"
        )));
    }
    Ok(())
}
