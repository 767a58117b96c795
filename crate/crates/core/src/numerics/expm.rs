//! Matrix exponential by Padé approximation with scaling and squaring.
//!
//! Standard degree-(3,5,7,9,13) diagonal Padé scheme with 1-norm based
//! order selection; serves primarily as the reference solution for
//! fixed-step simulation tests.

use crate::Mat;

const THETA: [(usize, f64); 5] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
    (13, 5.371920351148152),
];

fn pade_coeffs(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[
            17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
        ],
        9 => &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
        13 => &[
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
        ],
        _ => unreachable!("unsupported Padé order"),
    }
}

fn one_norm(a: &Mat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Computes `exp(A)` for a square real matrix.
pub fn expm(a: &Mat) -> Mat {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let norm = one_norm(a);

    for &(m, theta) in &THETA[..4] {
        if norm <= theta {
            return pade(a, m);
        }
    }

    // Scale so ‖A/2^s‖ fits the degree-13 approximant, square back up.
    let theta13 = THETA[4].1;
    let s = if norm > theta13 {
        ((norm / theta13).log2().ceil() as i32).max(0)
    } else {
        0
    };
    let scaled = a / 2f64.powi(s);
    let mut e = pade(&scaled, 13);
    for _ in 0..s {
        e = &e * &e;
    }
    e
}

fn pade(a: &Mat, m: usize) -> Mat {
    let n = a.nrows();
    let b = pade_coeffs(m);
    let ident = Mat::identity(n, n);
    let a2 = a * a;
    let (u, v) = if m <= 9 {
        let mut pows = vec![ident.clone()];
        // Even powers A^0, A^2, A^4, ..., up to A^(m-1).
        for _ in 0..(m - 1) / 2 {
            let next = pows.last().unwrap() * &a2;
            pows.push(next);
        }
        let mut u_inner = Mat::zeros(n, n);
        let mut v = Mat::zeros(n, n);
        for (k, p) in pows.iter().enumerate() {
            u_inner += p * b[2 * k + 1];
            v += p * b[2 * k];
        }
        (a * u_inner, v)
    } else {
        let a4 = &a2 * &a2;
        let a6 = &a2 * &a4;
        let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
            + &a6 * b[7]
            + &a4 * b[5]
            + &a2 * b[3]
            + &ident * b[1];
        let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
            + &a6 * b[6]
            + &a4 * b[4]
            + &a2 * b[2]
            + &ident * b[0];
        (a * u_inner, v)
    };
    let vm_u = &v - &u;
    let vp_u = &v + &u;
    vm_u.lu().solve(&vp_u).expect("Padé denominator is invertible")
}
