use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ComplexMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> ComplexMatrix {
        let o = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        let e = match self {
            Pauli::I => [one, o, o, one],
            Pauli::X => [o, one, one, o],
            Pauli::Y => [o, -i, i, o],
            Pauli::Z => [one, o, o, -one],
        };
        ComplexMatrix::from_entries(2, e.to_vec()).expect("2x2")
    }

    fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Tensor product of single-qubit Paulis; qubit 0 is the leftmost factor and
/// the most significant bit of a basis index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    word: Vec<Pauli>,
}

/// Bit-mask form of a Pauli string, used to apply it to a state in `O(2ⁿ)`.
///
/// `P|c⟩ = phase(b)·|b⟩` with `b = c ⊕ flip`, where
/// `phase(b) = (−i)^{#Y} · (−1)^{popcount(b & sign)}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PauliMask {
    pub flip: usize,
    pub sign: usize,
    pub y_count: u32,
}

impl PauliMask {
    /// `(−i)^{#Y}`.
    pub fn global_phase(&self) -> Complex64 {
        match self.y_count % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, -1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, 1.0),
        }
    }

    /// Sign factor of row `b`.
    #[inline]
    pub fn row_sign(&self, b: usize) -> f64 {
        if (b & self.sign).count_ones().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    /// Real part of the global phase; zero for odd Y-count.
    pub fn real_phase(&self) -> f64 {
        self.global_phase().re
    }

    /// `out = P · v` for a complex vector.
    pub fn apply(&self, v: &[Complex64], out: &mut [Complex64]) {
        let ph = self.global_phase();
        for (b, o) in out.iter_mut().enumerate() {
            *o = ph * self.row_sign(b) * v[b ^ self.flip];
        }
    }

    /// `⟨ψ|P|ψ⟩` (real for Hermitian `P`).
    pub fn expectation(&self, psi: &[Complex64]) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (b, amp) in psi.iter().enumerate() {
            acc += amp.conj() * self.row_sign(b) * psi[b ^ self.flip];
        }
        (self.global_phase() * acc).re
    }

    /// `yᵀ Re(P) y` for a real vector.
    pub fn real_quadratic(&self, y: &[f64]) -> f64 {
        let ph = self.real_phase();
        if ph == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (b, &yb) in y.iter().enumerate() {
            acc += yb * self.row_sign(b) * y[b ^ self.flip];
        }
        ph * acc
    }

    /// `out += scale · Re(P) y`.
    pub fn real_apply_add(&self, y: &[f64], scale: f64, out: &mut [f64]) {
        let s = scale * self.real_phase();
        if s == 0.0 {
            return;
        }
        for (b, o) in out.iter_mut().enumerate() {
            *o += s * self.row_sign(b) * y[b ^ self.flip];
        }
    }
}

impl PauliString {
    pub fn new(word: Vec<Pauli>) -> Result<Self> {
        if word.is_empty() {
            return Err(Error::Config("Pauli string needs at least one qubit".into()));
        }
        if word.len() > 20 {
            return Err(Error::Config(format!(
                "Pauli string on {} qubits exceeds the 20-qubit simulation limit",
                word.len()
            )));
        }
        Ok(Self { word })
    }

    /// `Z` on `qubit`, identity elsewhere.
    pub fn single(n: usize, qubit: usize, p: Pauli) -> Result<Self> {
        if qubit >= n {
            return Err(Error::Config(format!("qubit {qubit} outside 0..{n}")));
        }
        let mut word = vec![Pauli::I; n];
        word[qubit] = p;
        Self::new(word)
    }

    pub fn word(&self) -> &[Pauli] {
        &self.word
    }

    pub fn n_qubits(&self) -> usize {
        self.word.len()
    }

    pub fn is_identity(&self) -> bool {
        self.word.iter().all(|&p| p == Pauli::I)
    }

    pub fn y_count(&self) -> usize {
        self.word.iter().filter(|&&p| p == Pauli::Y).count()
    }

    pub fn y_parity(&self) -> usize {
        self.y_count() % 2
    }

    pub fn mask(&self) -> PauliMask {
        let n = self.word.len();
        let mut flip = 0;
        let mut sign = 0;
        for (q, p) in self.word.iter().enumerate() {
            let bit = 1usize << (n - 1 - q);
            match p {
                Pauli::I => {}
                Pauli::X => flip |= bit,
                Pauli::Y => {
                    flip |= bit;
                    sign |= bit;
                }
                Pauli::Z => sign |= bit,
            }
        }
        PauliMask {
            flip,
            sign,
            y_count: self.y_count() as u32,
        }
    }

    /// Dense `2ⁿ × 2ⁿ` realisation as a Kronecker product.
    pub fn matrix(&self) -> ComplexMatrix {
        self.word
            .iter()
            .skip(1)
            .fold(self.word[0].matrix(), |acc, p| acc.kron(&p.matrix()))
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.word {
            write!(f, "{}", p.symbol())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let word = s
            .chars()
            .map(|c| match c {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                other => Err(Error::format(
                    "Pauli string",
                    format!("unexpected symbol {other:?} in {s:?}"),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        PauliString::new(word)
    }
}

impl Serialize for PauliString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableMode {
    /// Non-identity strings with even Y-count: the only ones whose real part
    /// is non-zero, hence the only ones visible to a real congruence.
    RealCongruence,
    /// Every non-identity string.
    Unitary,
}

/// First `count` admissible Pauli strings on `n` qubits in lexicographic
/// order with `I < X < Y < Z`.
pub fn select_observables(n: usize, count: usize, mode: ObservableMode) -> Result<Vec<PauliString>> {
    if n == 0 || n > 20 {
        return Err(Error::Config(format!("unsupported qubit count {n}")));
    }
    let mut out = Vec::with_capacity(count);
    let total = 4usize.checked_pow(n as u32).unwrap_or(usize::MAX);
    let mut code = 1; // code 0 is the identity string
    while out.len() < count && code < total {
        let word: Vec<Pauli> = (0..n).map(|q| Pauli::ALL[(code >> (2 * (n - 1 - q))) & 3]).collect();
        let p = PauliString::new(word)?;
        if mode == ObservableMode::Unitary || p.y_parity() == 0 {
            out.push(p);
        }
        code += 1;
    }
    if out.len() < count {
        return Err(Error::Config(format!(
            "requested {count} observables but only {} exist on {n} qubits in {mode:?} mode",
            out.len()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn single_qubit_matrices() {
        let z = ps("Z").matrix();
        assert_eq!(z.get(0, 0), Complex64::new(1.0, 0.0));
        assert_eq!(z.get(1, 1), Complex64::new(-1.0, 0.0));
        let y = ps("Y").matrix();
        assert_eq!(y.get(0, 1), Complex64::new(0.0, -1.0));
        assert_eq!(y.get(1, 0), Complex64::new(0.0, 1.0));
    }

    #[test]
    fn zz_is_diagonal_plus_minus() {
        let zz = ps("ZZ").matrix();
        let diag: Vec<f64> = (0..4).map(|i| zz.get(i, i).re).collect();
        assert_eq!(diag, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn mask_matches_dense_action() {
        for s in ["XYZ", "YYI", "ZIX", "IYI", "YXY"] {
            let p = ps(s);
            let dense = p.matrix();
            let v: Vec<Complex64> = (0..8)
                .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
                .collect();
            let mut sparse = vec![Complex64::new(0.0, 0.0); 8];
            p.mask().apply(&v, &mut sparse);
            let want = dense.apply(&v);
            for (a, b) in sparse.iter().zip(&want) {
                assert!((a - b).norm() < 1e-14, "{s}");
            }
        }
    }

    #[test]
    fn selection_orders_lexicographically() {
        let got = select_observables(2, 4, ObservableMode::RealCongruence).unwrap();
        let names: Vec<String> = got.iter().map(|p| p.to_string()).collect();
        assert_eq!(names, ["IX", "IZ", "XI", "XX"]);

        let got = select_observables(1, 3, ObservableMode::Unitary).unwrap();
        let names: Vec<String> = got.iter().map(|p| p.to_string()).collect();
        assert_eq!(names, ["X", "Y", "Z"]);
    }

    #[test]
    fn selection_rejects_exhausted_pool() {
        for mode in [ObservableMode::RealCongruence, ObservableMode::Unitary] {
            assert!(matches!(select_observables(2, 100, mode), Err(Error::Config(_))));
        }
        // 4² − 1 = 15 unitary, (16 + 4)/2 − 1 = 9 real-congruence strings.
        assert!(select_observables(2, 15, ObservableMode::Unitary).is_ok());
        assert!(select_observables(2, 9, ObservableMode::RealCongruence).is_ok());
        assert!(select_observables(2, 10, ObservableMode::RealCongruence).is_err());
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!("".parse::<PauliString>().is_err());
        assert!("XQ".parse::<PauliString>().is_err());
        assert_eq!(ps("IXYZ").to_string(), "IXYZ");
    }
}
