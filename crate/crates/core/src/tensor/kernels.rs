//! Raw row-major kernels shared by forward and backward passes.

use super::Element;

/// `c[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut c = vec![E::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == E::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij = *c_ij + a_ip * b_pj;
            }
        }
    }
    c
}

/// `c[m×k] = a[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_nt<E: Element>(a: &[E], b: &[E], m: usize, n: usize, k: usize) -> Vec<E> {
    let mut c = vec![E::zero(); m * k];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let b_row = &b[j * n..(j + 1) * n];
            let mut acc = E::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            c[i * k + j] = acc;
        }
    }
    c
}

/// `c[k×n] = a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_tn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut c = vec![E::zero(); k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == E::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (c_pj, &b_ij) in c_row.iter_mut().zip(b_row) {
                *c_pj = *c_pj + a_ip * b_ij;
            }
        }
    }
    c
}

pub(crate) fn transpose<E: Element>(a: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut out = vec![E::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

pub(crate) fn gelu<E: Element>(x: E) -> E {
    let k = E::from_f64(GELU_K);
    let c = E::from_f64(GELU_C);
    let half = E::from_f64(0.5);
    half * x * (E::one() + (k * (x + c * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<E: Element>(x: E) -> E {
    let k = E::from_f64(GELU_K);
    let c = E::from_f64(GELU_C);
    let half = E::from_f64(0.5);
    let three = E::from_f64(3.0);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (E::one() + t) + half * x * (E::one() - t * t) * k * (E::one() + three * c * x * x)
}
