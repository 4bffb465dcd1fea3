//! Differentiable expectation-value layers recorded on a [`Graph`].

use num_complex::Complex64;

use super::circuit::{hea_unitary, unitary_vjp, AnsatzParams, Hea};
use super::pauli::{PauliMask, PauliString};
use super::state::check_real_congruence;
use crate::error::{Error, Result};
use crate::tensor::{ComplexMatrix, CustomOp, Graph, Tensor, Var};

fn masks_for(obs: &[PauliString], d: usize) -> Result<Vec<PauliMask>> {
    if obs.is_empty() {
        return Err(Error::Config("empty observable list".into()));
    }
    obs.iter()
        .map(|p| {
            if 1 << p.n_qubits() != d {
                Err(Error::Config(format!(
                    "observable {p} acts on {} amplitudes, inputs have {d}",
                    1usize << p.n_qubits()
                )))
            } else {
                Ok(p.mask())
            }
        })
        .collect()
}

struct PauliQuadratic {
    masks: Vec<PauliMask>,
}

impl CustomOp for PauliQuadratic {
    fn name(&self) -> &str {
        "pauli_quadratic"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Result<Vec<Option<Vec<f64>>>> {
        let y = inputs[0];
        let (rows, d) = y.rows_cols();
        let k = self.masks.len();
        let mut gy = vec![0.0; rows * d];
        for r in 0..rows {
            let yr = y.row(r);
            let out = &mut gy[r * d..(r + 1) * d];
            for (j, mask) in self.masks.iter().enumerate() {
                mask.real_apply_add(yr, 2.0 * grad_out[r * k + j], out);
            }
        }
        Ok(vec![Some(gy)])
    }
}

/// `e[r, k] = yᵣᵀ Re(Pₖ) yᵣ` for rows of `y[N, 2ⁿ]`.
pub fn pauli_quadratic(g: &mut Graph, y: Var, obs: &[PauliString]) -> Result<Var> {
    let yv = g.value(y);
    let (rows, d) = yv.rows_cols();
    let masks = masks_for(obs, d)?;
    let mut out = Vec::with_capacity(rows * masks.len());
    for r in 0..rows {
        let yr = yv.row(r);
        out.extend(masks.iter().map(|m| m.real_quadratic(yr)));
    }
    let out = Tensor::new(vec![rows, masks.len()], out)?;
    Ok(g.custom(&[y], out, Box::new(PauliQuadratic { masks })))
}

/// Quantum-inspired value features: `e[r, k] = ⟨xᵣ| Wᵀ Pₖ W |xᵣ⟩` for rows of
/// `x[N, m]` and a real map `w[m, m]`. Differentiable in both.
pub fn congruence_values(g: &mut Graph, x: Var, w: Var, obs: &[PauliString]) -> Result<Var> {
    for p in obs {
        check_real_congruence(p)?;
    }
    let y = g.matmul_nt(x, w)?;
    pauli_quadratic(g, y, obs)
}

struct AnsatzExpectations {
    params: Vec<AnsatzParams>,
    unitaries: Vec<ComplexMatrix>,
    masks: Vec<PauliMask>,
    slots: Vec<usize>,
    psi: Vec<Complex64>,
}

impl CustomOp for AnsatzExpectations {
    fn name(&self) -> &str {
        "ansatz_expectations"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<f64>>>> {
        let x = inputs[0];
        let (rows, d) = x.rows_cols();
        let k = self.masks.len();
        let zero = Complex64::new(0.0, 0.0);
        let mut gx = needs[0].then(|| vec![0.0; rows * d]);
        let mut cotangents = vec![ComplexMatrix::zeros(d); self.params.len()];
        let mut phi = vec![zero; d];
        let mut scratch = vec![zero; d];
        for r in 0..rows {
            let psi = &self.psi[r * d..(r + 1) * d];
            phi.iter_mut().for_each(|p| *p = zero);
            for (j, mask) in self.masks.iter().enumerate() {
                let gk = grad_out[r * k + j];
                if gk == 0.0 {
                    continue;
                }
                mask.apply(psi, &mut scratch);
                phi.iter_mut().zip(&scratch).for_each(|(p, s)| *p += gk * s);
            }
            let slot = self.slots[r];
            let xr = x.row(r);
            let u = &self.unitaries[slot];
            if let Some(gx) = gx.as_mut() {
                // 2 Re(U† φ)
                for b in 0..d {
                    let mut acc = 0.0;
                    for a in 0..d {
                        let uab = u.get(a, b);
                        acc += uab.re * phi[a].re + uab.im * phi[a].im;
                    }
                    gx[r * d + b] = 2.0 * acc;
                }
            }
            if needs[1 + slot] {
                let cot = cotangents[slot].entries_mut();
                for a in 0..d {
                    let pa = 2.0 * phi[a];
                    for b in 0..d {
                        cot[a * d + b] += pa * xr[b];
                    }
                }
            }
        }
        let mut grads = Vec::with_capacity(inputs.len());
        grads.push(gx);
        for (s, cot) in cotangents.iter().enumerate() {
            grads.push(needs[1 + s].then(|| unitary_vjp(&self.params[s], &self.unitaries[s], cot)));
        }
        Ok(grads)
    }
}

/// Expectation values `⟨xᵣ| U† Pₖ U |xᵣ⟩` of an ansatz applied to
/// already-normalised real rows `x[N, 2ⁿ]`.
///
/// With one angle vector every row shares the circuit. With several, row `r`
/// uses circuit `r mod seq_len` (a per-position circuit); rows are laid out
/// sequence by sequence.
pub fn ansatz_expectations(
    g: &mut Graph,
    x: Var,
    thetas: &[Var],
    shape: Hea,
    obs: &[PauliString],
    seq_len: usize,
) -> Result<Var> {
    let xv = g.value(x);
    let (rows, d) = xv.rows_cols();
    if d != shape.dim() {
        return Err(Error::Shape(format!(
            "rows of width {d} for a {}-qubit ansatz",
            shape.n
        )));
    }
    if thetas.is_empty() {
        return Err(Error::Config("ansatz layer without parameters".into()));
    }
    if thetas.len() > 1 && (seq_len == 0 || seq_len > thetas.len() || rows % seq_len != 0) {
        return Err(Error::Shape(format!(
            "{rows} rows in sequences of {seq_len} for {} per-position circuits",
            thetas.len()
        )));
    }
    let masks = masks_for(obs, d)?;
    let params = thetas
        .iter()
        .map(|&t| AnsatzParams::new(shape, g.value(t).data().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let unitaries: Vec<ComplexMatrix> = params.iter().map(hea_unitary).collect();
    let slots: Vec<usize> = (0..rows)
        .map(|r| if thetas.len() == 1 { 0 } else { r % seq_len })
        .collect();

    let xv = g.value(x);
    let mut psi = vec![Complex64::new(0.0, 0.0); rows * d];
    let mut out = Vec::with_capacity(rows * masks.len());
    for r in 0..rows {
        let u = &unitaries[slots[r]];
        let xr = xv.row(r);
        let pr = &mut psi[r * d..(r + 1) * d];
        for a in 0..d {
            let row = &u.entries()[a * d..(a + 1) * d];
            pr[a] = row.iter().zip(xr).map(|(uab, &xb)| uab * xb).sum();
        }
        out.extend(masks.iter().map(|m| m.expectation(pr)));
    }
    let out = Tensor::new(vec![rows, masks.len()], out)?;
    let mut inputs = vec![x];
    inputs.extend_from_slice(thetas);
    Ok(g.custom(
        &inputs,
        out,
        Box::new(AnsatzExpectations {
            params,
            unitaries,
            masks,
            slots,
            psi,
        }),
    ))
}
