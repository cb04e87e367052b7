//! Orthonormal 8×8 DCT-II used by the DWT-DCT watermark and the JPEG model.

use std::sync::OnceLock;

pub(crate) const N: usize = 8;

/// `basis()[k][n] = α(k)·cos(π(2n+1)k/16)`, rows orthonormal.
pub(crate) fn basis() -> &'static [[f64; N]; N] {
    static B: OnceLock<[[f64; N]; N]> = OnceLock::new();
    B.get_or_init(|| {
        let mut b = [[0.0; N]; N];
        for (k, row) in b.iter_mut().enumerate() {
            let alpha = if k == 0 {
                (1.0 / N as f64).sqrt()
            } else {
                (2.0 / N as f64).sqrt()
            };
            for (n, v) in row.iter_mut().enumerate() {
                *v = alpha * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * N) as f64).cos();
            }
        }
        b
    })
}

pub(crate) type Block = [[f64; N]; N];

pub(crate) fn dct2(block: &Block) -> Block {
    let b = basis();
    let mut tmp = [[0.0; N]; N];
    for u in 0..N {
        for x in 0..N {
            tmp[u][x] = (0..N).map(|y| b[u][y] * block[y][x]).sum();
        }
    }
    let mut out = [[0.0; N]; N];
    for u in 0..N {
        for v in 0..N {
            out[u][v] = (0..N).map(|x| tmp[u][x] * b[v][x]).sum();
        }
    }
    out
}

pub(crate) fn idct2(coef: &Block) -> Block {
    let b = basis();
    let mut tmp = [[0.0; N]; N];
    for y in 0..N {
        for v in 0..N {
            tmp[y][v] = (0..N).map(|u| b[u][y] * coef[u][v]).sum();
        }
    }
    let mut out = [[0.0; N]; N];
    for y in 0..N {
        for x in 0..N {
            out[y][x] = (0..N).map(|v| tmp[y][v] * b[v][x]).sum();
        }
    }
    out
}
