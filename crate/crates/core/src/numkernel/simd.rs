//! AVX-512 versions of the two convolution microkernels.

#![cfg(target_arch = "x86_64")]

use std::arch::x86_64::*;
use std::sync::OnceLock;

use super::kernels::TB;

pub fn has_avx512() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| is_x86_feature_detected!("avx512f"))
}

/// `acc[c][j] = sum_{ci, kk} wb[(ci * k + kk) * C + c] * xp[ci * tp + j + kk]`
///
/// # Safety
/// Requires AVX-512F, `xp.len() >= (cin - 1) * tp + TB + k - 1` and
/// `wb.len() >= cin * k * C`.
#[target_feature(enable = "avx512f")]
pub unsafe fn block_kernel<const C: usize>(
    xp: &[f64],
    tp: usize,
    wb: &[f64],
    cin: usize,
    k: usize,
) -> [[f64; TB]; C] {
    const V: usize = TB / 8;
    let mut acc = [[_mm512_setzero_pd(); V]; C];
    let xb = xp.as_ptr();
    let wp = wb.as_ptr();
    for ci in 0..cin {
        for kk in 0..k {
            let x = xb.add(ci * tp + kk);
            let xs: [__m512d; V] = std::array::from_fn(|v| _mm512_loadu_pd(x.add(8 * v)));
            let w = wp.add((ci * k + kk) * C);
            for (c, row) in acc.iter_mut().enumerate() {
                let wv = _mm512_set1_pd(*w.add(c));
                for v in 0..V {
                    row[v] = _mm512_fmadd_pd(wv, xs[v], row[v]);
                }
            }
        }
    }
    let mut out = [[0.0; TB]; C];
    for (o, row) in out.iter_mut().zip(&acc) {
        for v in 0..V {
            _mm512_storeu_pd(o.as_mut_ptr().add(8 * v), row[v]);
        }
    }
    out
}

/// Lane-wise partial sums of `a[r] . b[c]` over the first `lanes` entries.
///
/// # Safety
/// Requires AVX-512F, every row at least `lanes` long and `lanes % 8 == 0`.
#[target_feature(enable = "avx512f")]
pub unsafe fn micro_4x4(a: [&[f64]; 4], b: [&[f64]; 4], lanes: usize) -> [[[f64; 8]; 4]; 4] {
    let mut acc = [[_mm512_setzero_pd(); 4]; 4];
    let ap: [*const f64; 4] = std::array::from_fn(|r| a[r].as_ptr());
    let bp: [*const f64; 4] = std::array::from_fn(|r| b[r].as_ptr());
    let mut l = 0;
    while l < lanes {
        let av: [__m512d; 4] = std::array::from_fn(|r| _mm512_loadu_pd(ap[r].add(l)));
        let bv: [__m512d; 4] = std::array::from_fn(|r| _mm512_loadu_pd(bp[r].add(l)));
        for r in 0..4 {
            for c in 0..4 {
                acc[r][c] = _mm512_fmadd_pd(av[r], bv[c], acc[r][c]);
            }
        }
        l += 8;
    }
    let mut out = [[[0.0; 8]; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            _mm512_storeu_pd(out[r][c].as_mut_ptr(), acc[r][c]);
        }
    }
    out
}
