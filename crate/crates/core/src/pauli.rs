//! Pauli strings used to specify observables and measurement bases.

use crate::C64;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PauliError {
    #[error("invalid Pauli character '{0}' (expected I, X, Y, or Z)")]
    BadChar(char),
    #[error("empty Pauli string")]
    Empty,
    #[error("Pauli string length {got} does not match qubit count {want}")]
    LengthMismatch { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PauliOp {
    I,
    X,
    Y,
    Z,
}

impl PauliOp {
    /// 2x2 matrix in the computational basis with the ground state first.
    pub fn matrix(self) -> [[C64; 2]; 2] {
        let o = C64::new(0.0, 0.0);
        let l = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            Self::I => [[l, o], [o, l]],
            Self::X => [[o, l], [l, o]],
            Self::Y => [[o, -i], [i, o]],
            Self::Z => [[l, o], [o, -l]],
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Self::I => 'I',
            Self::X => 'X',
            Self::Y => 'Y',
            Self::Z => 'Z',
        }
    }
}

/// A tensor product of single-qubit Paulis, one per qubit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    pub ops: Vec<PauliOp>,
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        Self { ops: vec![PauliOp::I; n] }
    }

    /// A weight-one string with `op` on qubit `index`.
    pub fn single(n: usize, index: usize, op: PauliOp) -> Self {
        let mut ops = vec![PauliOp::I; n];
        ops[index] = op;
        Self { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Indices carrying a non-identity factor.
    pub fn support(&self) -> Vec<usize> {
        self.ops
            .iter()
            .enumerate()
            .filter_map(|(i, &op)| (op != PauliOp::I).then_some(i))
            .collect()
    }

    pub fn weight(&self) -> usize {
        self.ops.iter().filter(|&&op| op != PauliOp::I).count()
    }

    /// Two Pauli strings commute iff they anticommute on an even number of
    /// positions.
    pub fn commutes_with(&self, other: &Self) -> bool {
        let clashes = self
            .ops
            .iter()
            .zip(&other.ops)
            .filter(|(a, b)| **a != PauliOp::I && **b != PauliOp::I && a != b)
            .count();
        clashes % 2 == 0
    }

    /// True when every non-identity factor of `self` agrees with `setting`,
    /// i.e. measuring `setting` determines this string's value.
    pub fn covered_by(&self, setting: &Self) -> bool {
        self.ops
            .iter()
            .zip(&setting.ops)
            .all(|(a, b)| *a == PauliOp::I || a == b)
    }
}

impl FromStr for PauliString {
    type Err = PauliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ops: Vec<PauliOp> = s
            .trim()
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'I' => Ok(PauliOp::I),
                'X' => Ok(PauliOp::X),
                'Y' => Ok(PauliOp::Y),
                'Z' => Ok(PauliOp::Z),
                other => Err(PauliError::BadChar(other)),
            })
            .collect::<Result<_, _>>()?;
        if ops.is_empty() {
            return Err(PauliError::Empty);
        }
        Ok(Self { ops })
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for op in &self.ops {
            write!(f, "{}", op.as_char())?;
        }
        Ok(())
    }
}
