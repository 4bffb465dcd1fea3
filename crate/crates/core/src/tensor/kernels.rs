//! Row-major dense kernels. All routines accumulate into `c`.
//!
//! Row-parallel kernels compute every output element with the same sequential
//! loop regardless of thread count, so results are bit-identical across pools.

use rayon::prelude::*;

const PAR_THRESHOLD: usize = 1 << 15;

/// `c[r×t] += a[r×s] · b[s×t]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], r: usize, s: usize, t: usize) {
    debug_assert_eq!(a.len(), r * s);
    debug_assert_eq!(b.len(), s * t);
    debug_assert_eq!(c.len(), r * t);
    let row = |(i, ci): (usize, &mut [f64])| {
        let ai = &a[i * s..(i + 1) * s];
        for (k, &aik) in ai.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let bk = &b[k * t..(k + 1) * t];
            for (cij, &bkj) in ci.iter_mut().zip(bk) {
                *cij += aik * bkj;
            }
        }
    };
    if r * s * t >= PAR_THRESHOLD && r > 1 {
        c.par_chunks_mut(t).enumerate().for_each(row);
    } else {
        c.chunks_mut(t).enumerate().for_each(row);
    }
}

/// `c[r×t] += a[r×s] · b[t×s]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], r: usize, s: usize, t: usize) {
    debug_assert_eq!(a.len(), r * s);
    debug_assert_eq!(b.len(), t * s);
    debug_assert_eq!(c.len(), r * t);
    let row = |(i, ci): (usize, &mut [f64])| {
        let ai = &a[i * s..(i + 1) * s];
        for (j, cij) in ci.iter_mut().enumerate() {
            *cij += dot(ai, &b[j * s..(j + 1) * s]);
        }
    };
    if r * s * t >= PAR_THRESHOLD && r > 1 {
        c.par_chunks_mut(t).enumerate().for_each(row);
    } else {
        c.chunks_mut(t).enumerate().for_each(row);
    }
}

/// `c[s×t] += a[r×s]ᵀ · b[r×t]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], r: usize, s: usize, t: usize) {
    debug_assert_eq!(a.len(), r * s);
    debug_assert_eq!(b.len(), r * t);
    debug_assert_eq!(c.len(), s * t);
    for i in 0..r {
        let ai = &a[i * s..(i + 1) * s];
        let bi = &b[i * t..(i + 1) * t];
        for (k, &aik) in ai.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let ck = &mut c[k * t..(k + 1) * t];
            for (ckj, &bij) in ck.iter_mut().zip(bi) {
                *ckj += aik * bij;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorise the loop.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for q in 0..chunks {
        let i = 4 * q;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        sum += a[i] * b[i];
    }
    sum
}
