//! Inverses of the Vandermonde matrices `B_k = (s^{t−1})_{s,t=1..k}` used to
//! recover profile-polynomial coefficients from a handful of determinants.

use std::borrow::Cow;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_rational::Ratio;

/// Largest order inverted in exact rational arithmetic.
pub const EXACT_MAX_ORDER: usize = 8;

type Q = Ratio<i128>;

/// `B_k⁻¹`, entries in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct VandermondeInverse {
    order: usize,
    entries: DMatrix<f64>,
}

impl VandermondeInverse {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Vandermonde order must be positive");
        let entries = if order <= EXACT_MAX_ORDER {
            let exact = exact_inverse(order);
            DMatrix::from_fn(order, order, |r, c| {
                let q = exact[r * order + c];
                *q.numer() as f64 / *q.denom() as f64
            })
        } else {
            float_inverse(order)
        };
        VandermondeInverse { order, entries }
    }

    /// Cached inverse for `order ≤ EXACT_MAX_ORDER`, fresh otherwise.
    pub fn cached(order: usize) -> Cow<'static, VandermondeInverse> {
        static CACHE: OnceLock<Vec<VandermondeInverse>> = OnceLock::new();
        let table = CACHE.get_or_init(|| (1..=EXACT_MAX_ORDER).map(VandermondeInverse::new).collect());
        if order >= 1 && order <= EXACT_MAX_ORDER {
            Cow::Borrowed(&table[order - 1])
        } else {
            Cow::Owned(VandermondeInverse::new(order))
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn apply(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.order);
        (0..self.order)
            .map(|r| (0..self.order).map(|c| self.entries[(r, c)] * rhs[c]).sum())
            .collect()
    }
}

pub fn vandermonde(order: usize) -> DMatrix<f64> {
    DMatrix::from_fn(order, order, |r, c| ((r + 1) as f64).powi(c as i32))
}

fn exact_inverse(n: usize) -> Vec<Q> {
    // Gauss–Jordan on [B | I]
    let w = 2 * n;
    let mut a: Vec<Q> = vec![Q::from_integer(0); n * w];
    for r in 0..n {
        let s = (r + 1) as i128;
        let mut p = 1i128;
        for c in 0..n {
            a[r * w + c] = Q::from_integer(p);
            p *= s;
        }
        a[r * w + n + r] = Q::from_integer(1);
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .find(|&r| a[r * w + col] != Q::from_integer(0))
            .expect("Vandermonde matrix is nonsingular");
        if pivot_row != col {
            for c in 0..w {
                a.swap(col * w + c, pivot_row * w + c);
            }
        }
        let pivot = a[col * w + col];
        for c in 0..w {
            a[col * w + c] /= pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[r * w + col];
            if factor == Q::from_integer(0) {
                continue;
            }
            for c in 0..w {
                let v = a[col * w + c] * factor;
                a[r * w + c] -= v;
            }
        }
    }
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            out.push(a[r * w + n + c]);
        }
    }
    out
}

fn float_inverse(n: usize) -> DMatrix<f64> {
    let b = vandermonde(n);
    let mut inv = b.clone().lu().try_inverse().expect("Vandermonde matrix is nonsingular");
    // two rounds of iterative refinement: X ← X + X(I − BX)
    let eye = DMatrix::<f64>::identity(n, n);
    for _ in 0..2 {
        let residual = &eye - &b * &inv;
        inv += &inv * residual;
    }
    inv
}
