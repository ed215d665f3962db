//! Dense matrix exponential via scaling-and-squaring with a degree-13 Padé
//! approximant (Higham's method, using the conservative single threshold
//! θ₁₃ ≈ 5.37 for the backward-error bound).

use nalgebra::DMatrix;

const PADE13_THETA: f64 = 5.371920351148152;

const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential exp(A) for a square matrix with finite entries.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), a.ncols(), "expm requires a square matrix");
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = one_norm(a);
    let s = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as u32
    } else {
        0
    };
    let a_scaled = a * (0.5f64).powi(s as i32);
    let mut e = pade13(&a_scaled);
    for _ in 0..s {
        e = &e * &e;
    }
    e
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade13(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let ident = DMatrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let w1 = &a6 * (&a6 * B13[13] + &a4 * B13[11] + &a2 * B13[9]);
    let w2 = &a6 * B13[7] + &a4 * B13[5] + &a2 * B13[3] + &ident * B13[1];
    let u = a * (w1 + w2);
    let z1 = &a6 * (&a6 * B13[12] + &a4 * B13[10] + &a2 * B13[8]);
    let v = z1 + &a6 * B13[6] + &a4 * B13[4] + &a2 * B13[2] + &ident * B13[0];
    let lhs = &v - &u;
    let rhs = &v + &u;
    lhs.lu()
        .solve(&rhs)
        .expect("Padé denominator is singular; input matrix is not finite")
}

/// Truncated Taylor-series exponential, exposed for test oracles.
pub fn expm_taylor(a: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut acc = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=terms {
        term = (&term * a) / k as f64;
        acc += &term;
    }
    acc
}
