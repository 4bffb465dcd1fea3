//! Hardware-efficient ansatz.
//!
//! One layer applies `RZ·RY·RX` to every qubit, then a linear CNOT chain
//! `(0→1), (1→2), …, (n−2→n−1)` with no wrap-around. Angles are laid out as
//! `[layer][qubit][axis]` with axis order X, Y, Z.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ComplexMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Rot { axis: Axis, qubit: usize, param: usize },
    Cnot { control: usize, target: usize },
}

/// Shape of an ansatz: `n` qubits, `p` layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hea {
    pub n: usize,
    pub p: usize,
}

impl Hea {
    pub fn new(n: usize, p: usize) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::Config(format!("ansatz needs n ≥ 1 and p ≥ 1, got n={n}, p={p}")));
        }
        if n > 12 {
            return Err(Error::Config(format!("{n} qubits exceeds the dense simulation limit")));
        }
        Ok(Self { n, p })
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn n_params(&self) -> usize {
        3 * self.n * self.p
    }

    /// Gates in application order.
    pub fn gates(&self) -> Vec<Gate> {
        let mut gates = Vec::with_capacity(self.p * (4 * self.n - 1));
        for layer in 0..self.p {
            for q in 0..self.n {
                let base = (layer * self.n + q) * 3;
                for (k, axis) in [Axis::X, Axis::Y, Axis::Z].into_iter().enumerate() {
                    gates.push(Gate::Rot {
                        axis,
                        qubit: q,
                        param: base + k,
                    });
                }
            }
            for q in 0..self.n.saturating_sub(1) {
                gates.push(Gate::Cnot {
                    control: q,
                    target: q + 1,
                });
            }
        }
        gates
    }
}

/// Angles of one ansatz instance.
#[derive(Clone, Debug, PartialEq)]
pub struct AnsatzParams {
    shape: Hea,
    theta: Vec<f64>,
}

impl AnsatzParams {
    pub fn new(shape: Hea, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != shape.n_params() {
            return Err(Error::Shape(format!(
                "ansatz with n={} p={} takes {} angles, got {}",
                shape.n,
                shape.p,
                shape.n_params(),
                theta.len()
            )));
        }
        Ok(Self { shape, theta })
    }

    pub fn zeros(shape: Hea) -> Self {
        Self {
            shape,
            theta: vec![0.0; shape.n_params()],
        }
    }

    pub fn shape(&self) -> Hea {
        self.shape
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Angle for `(layer, qubit, axis)`.
    pub fn angle(&self, layer: usize, qubit: usize, axis: Axis) -> f64 {
        let k = match axis {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        };
        self.theta[(layer * self.shape.n + qubit) * 3 + k]
    }
}

/// `exp(−iθσ/2)` as a row-major 2×2 matrix.
pub fn rotation(axis: Axis, theta: f64) -> [Complex64; 4] {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let z = Complex64::new(0.0, 0.0);
    match axis {
        Axis::X => [
            Complex64::new(c, 0.0),
            Complex64::new(0.0, -s),
            Complex64::new(0.0, -s),
            Complex64::new(c, 0.0),
        ],
        Axis::Y => [
            Complex64::new(c, 0.0),
            Complex64::new(-s, 0.0),
            Complex64::new(s, 0.0),
            Complex64::new(c, 0.0),
        ],
        Axis::Z => [Complex64::new(c, -s), z, z, Complex64::new(c, s)],
    }
}

fn adjoint2(u: [Complex64; 4]) -> [Complex64; 4] {
    [u[0].conj(), u[2].conj(), u[1].conj(), u[3].conj()]
}

fn pauli2(axis: Axis) -> [Complex64; 4] {
    let o = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    match axis {
        Axis::X => [o, one, one, o],
        Axis::Y => [o, -i, i, o],
        Axis::Z => [one, o, o, -one],
    }
}

/// Left-multiplies the rows of a `d × cols` row-major block by a
/// single-qubit gate on `qubit`.
fn apply_1q_rows(m: &mut [Complex64], cols: usize, n: usize, qubit: usize, u: [Complex64; 4]) {
    let bit = 1usize << (n - 1 - qubit);
    let d = 1usize << n;
    for b0 in (0..d).filter(|b| b & bit == 0) {
        let b1 = b0 | bit;
        for c in 0..cols {
            let (x0, x1) = (m[b0 * cols + c], m[b1 * cols + c]);
            m[b0 * cols + c] = u[0] * x0 + u[1] * x1;
            m[b1 * cols + c] = u[2] * x0 + u[3] * x1;
        }
    }
}

fn apply_cnot_rows(m: &mut [Complex64], cols: usize, n: usize, control: usize, target: usize) {
    let cbit = 1usize << (n - 1 - control);
    let tbit = 1usize << (n - 1 - target);
    let d = 1usize << n;
    for b in (0..d).filter(|b| b & cbit != 0 && b & tbit == 0) {
        let b1 = b | tbit;
        for c in 0..cols {
            m.swap(b * cols + c, b1 * cols + c);
        }
    }
}

fn apply_gate(m: &mut [Complex64], cols: usize, n: usize, gate: Gate, theta: &[f64], adjoint: bool) {
    match gate {
        Gate::Rot { axis, qubit, param } => {
            let u = rotation(axis, theta[param]);
            let u = if adjoint { adjoint2(u) } else { u };
            apply_1q_rows(m, cols, n, qubit, u);
        }
        // CNOT is self-inverse.
        Gate::Cnot { control, target } => apply_cnot_rows(m, cols, n, control, target),
    }
}

/// Dense unitary of the whole ansatz.
pub fn hea_unitary(params: &AnsatzParams) -> ComplexMatrix {
    let shape = params.shape;
    let d = shape.dim();
    let mut u = ComplexMatrix::identity(d);
    for gate in shape.gates() {
        apply_gate(u.entries_mut(), d, shape.n, gate, &params.theta, false);
    }
    u
}

/// Runs the circuit gate by gate on a single state vector.
pub fn run_statevector(params: &AnsatzParams, state: &[Complex64]) -> Result<Vec<Complex64>> {
    let shape = params.shape;
    if state.len() != shape.dim() {
        return Err(Error::Shape(format!(
            "state of length {} for a {}-qubit circuit",
            state.len(),
            shape.n
        )));
    }
    let mut psi = state.to_vec();
    for gate in shape.gates() {
        apply_gate(&mut psi, 1, shape.n, gate, &params.theta, false);
    }
    Ok(psi)
}

/// Gradient of a real loss `L` with respect to the angles, given `U` and the
/// cotangent `G` defined by `dL = Re Σ conj(dU_ab) G_ab`.
///
/// Adjoint sweep: walk the gates backwards, un-applying each one to both the
/// evolved identity and the cotangent, at `O(gates · d²)` total cost.
pub fn unitary_vjp(params: &AnsatzParams, unitary: &ComplexMatrix, cotangent: &ComplexMatrix) -> Vec<f64> {
    let shape = params.shape;
    let d = shape.dim();
    let mut psi = unitary.entries().to_vec();
    let mut lam = cotangent.entries().to_vec();
    let mut grad = vec![0.0; shape.n_params()];
    let mut scratch = vec![Complex64::new(0.0, 0.0); d * d];
    for gate in shape.gates().into_iter().rev() {
        if let Gate::Rot { axis, qubit, param } = gate {
            scratch.copy_from_slice(&psi);
            apply_1q_rows(&mut scratch, d, shape.n, qubit, pauli2(axis));
            let inner: Complex64 = scratch.iter().zip(&lam).map(|(s, l)| s.conj() * l).sum();
            // dU/dθ = A·(−iσ/2)·Ψ_after, hence Re⟨(−i/2)σΨ, Λ⟩ = −Im⟨σΨ, Λ⟩ / 2.
            grad[param] += -0.5 * inner.im;
        }
        apply_gate(&mut psi, d, shape.n, gate, &params.theta, true);
        apply_gate(&mut lam, d, shape.n, gate, &params.theta, true);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(n: usize, p: usize, seed: u64) -> AnsatzParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Hea::new(n, p).unwrap();
        let theta = (0..shape.n_params())
            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        AnsatzParams::new(shape, theta).unwrap()
    }

    #[test]
    fn zero_angles_give_bare_cnot() {
        let u = hea_unitary(&AnsatzParams::zeros(Hea::new(2, 1).unwrap()));
        let cnot = ComplexMatrix::from_real(
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, 0.0,
            ],
        )
        .unwrap();
        assert_eq!(u, cnot);
    }

    #[test]
    fn rx_pi_flips_single_qubit() {
        let shape = Hea::new(1, 1).unwrap();
        let u = hea_unitary(&AnsatzParams::new(shape, vec![std::f64::consts::PI, 0.0, 0.0]).unwrap());
        assert!((u.get(0, 1).norm() - 1.0).abs() < 1e-15);
        assert!(u.get(0, 0).norm() < 1e-15);
        // −i·X
        assert!((u.get(0, 1) - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn random_circuits_are_unitary() {
        for seed in 0..10 {
            let u = hea_unitary(&random_params(3, 2, seed));
            assert!(u.unitarity_error() < 1e-12);
        }
    }

    #[test]
    fn layers_compose_as_products() {
        let full = random_params(3, 2, 7);
        let split = |layer: usize| {
            let k = full.shape().n_params() / 2;
            AnsatzParams::new(
                Hea::new(3, 1).unwrap(),
                full.theta()[layer * k..(layer + 1) * k].to_vec(),
            )
            .unwrap()
        };
        let product = hea_unitary(&split(1)).matmul(&hea_unitary(&split(0))).unwrap();
        assert!(product.max_abs_diff(&hea_unitary(&full)) < 1e-12);
    }

    #[test]
    fn statevector_path_matches_dense_unitary() {
        let params = random_params(3, 3, 11);
        let u = hea_unitary(&params);
        let state: Vec<Complex64> = (0..8).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
        let a = run_statevector(&params, &state).unwrap();
        let b = u.apply(&state);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn adjoint_sweep_matches_finite_differences() {
        // L(θ) = Re Σ conj(U_ab) C_ab for a fixed complex C, so G = C.
        let params = random_params(2, 2, 3);
        let c = ComplexMatrix::from_entries(
            4,
            (0..16)
                .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
                .collect(),
        )
        .unwrap();
        let loss = |p: &AnsatzParams| -> f64 {
            hea_unitary(p)
                .entries()
                .iter()
                .zip(c.entries())
                .map(|(u, g)| (u.conj() * g).re)
                .sum()
        };
        let grad = unitary_vjp(&params, &hea_unitary(&params), &c);
        let h = 1e-6;
        for k in 0..params.theta().len() {
            let mut plus = params.theta().to_vec();
            plus[k] += h;
            let mut minus = params.theta().to_vec();
            minus[k] -= h;
            let fd = (loss(&AnsatzParams::new(params.shape(), plus).unwrap())
                - loss(&AnsatzParams::new(params.shape(), minus).unwrap()))
                / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-7, "param {k}: fd {fd} vs {}", grad[k]);
        }
    }
}
