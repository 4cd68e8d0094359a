//! The fifteen linear permutation-equivariant maps `R^{n x n} -> R^{n x n}`.
//!
//! The maps correspond to the partitions of the four indices `(i, j)` of the
//! output and `(k, l)` of the input, and are applied channel by channel.
//! Order is fixed (it is the layout of linear-layer weights in checkpoints):
//!
//! | #  | output `[i, j]`      |
//! |----|----------------------|
//! | 0  | `x[i, j]`            |
//! | 1  | `x[j, i]`            |
//! | 2  | `δij x[i, i]`        |
//! | 3  | `x[i, i]`            |
//! | 4  | `x[j, j]`            |
//! | 5  | `δij Σk x[i, k]`     |
//! | 6  | `δij Σk x[k, i]`     |
//! | 7  | `Σk x[i, k]`         |
//! | 8  | `Σk x[j, k]`         |
//! | 9  | `Σk x[k, i]`         |
//! | 10 | `Σk x[k, j]`         |
//! | 11 | `δij tr x`           |
//! | 12 | `tr x`               |
//! | 13 | `δij Σkl x[k, l]`    |
//! | 14 | `Σkl x[k, l]`        |
//!
//! Input and output are both multiplied by the pair mask, so padded
//! positions neither contribute nor receive values.

pub const BASIS2_COUNT: usize = 15;

pub const BASIS2_NAMES: [&str; BASIS2_COUNT] = [
    "identity",
    "transpose",
    "diag_to_diag",
    "diag_to_rows",
    "diag_to_cols",
    "rowsum_to_diag",
    "colsum_to_diag",
    "rowsum_to_rows",
    "rowsum_to_cols",
    "colsum_to_rows",
    "colsum_to_cols",
    "trace_to_diag",
    "trace_to_all",
    "total_to_diag",
    "total_to_all",
];

struct Summaries {
    diag: Vec<f64>,
    rows: Vec<f64>,
    cols: Vec<f64>,
    trace: Vec<f64>,
    total: Vec<f64>,
}

fn summarize(x: &[f64], n: usize, c: usize) -> Summaries {
    let mut s = Summaries {
        diag: vec![0.0; n * c],
        rows: vec![0.0; n * c],
        cols: vec![0.0; n * c],
        trace: vec![0.0; c],
        total: vec![0.0; c],
    };
    for i in 0..n {
        for j in 0..n {
            for ch in 0..c {
                let v = x[(i * n + j) * c + ch];
                s.rows[i * c + ch] += v;
                s.cols[j * c + ch] += v;
                s.total[ch] += v;
                if i == j {
                    s.diag[i * c + ch] = v;
                    s.trace[ch] += v;
                }
            }
        }
    }
    s
}

/// `x: [bt, n, n, c]`, `pair_mask: [bt, n, n]` -> `[bt, n, n, 15 c]`.
pub(crate) fn forward(x: &[f64], pair_mask: &[f64], bt: usize, n: usize, c: usize) -> Vec<f64> {
    let per = n * n * c;
    let mut out = vec![0.0; bt * n * n * BASIS2_COUNT * c];
    let oc = BASIS2_COUNT * c;
    for b in 0..bt {
        let pm = &pair_mask[b * n * n..(b + 1) * n * n];
        let xm: Vec<f64> = x[b * per..(b + 1) * per]
            .chunks_exact(c.max(1))
            .zip(pm)
            .flat_map(|(v, &m)| v.iter().map(move |&t| t * m))
            .collect();
        let s = summarize(&xm, n, c);
        for i in 0..n {
            for j in 0..n {
                let m = pm[i * n + j];
                if m == 0.0 {
                    continue;
                }
                let d = if i == j { 1.0 } else { 0.0 };
                let o = &mut out[((b * n + i) * n + j) * oc..((b * n + i) * n + j + 1) * oc];
                for ch in 0..c {
                    let vals = [
                        xm[(i * n + j) * c + ch],
                        xm[(j * n + i) * c + ch],
                        d * s.diag[i * c + ch],
                        s.diag[i * c + ch],
                        s.diag[j * c + ch],
                        d * s.rows[i * c + ch],
                        d * s.cols[i * c + ch],
                        s.rows[i * c + ch],
                        s.rows[j * c + ch],
                        s.cols[i * c + ch],
                        s.cols[j * c + ch],
                        d * s.trace[ch],
                        s.trace[ch],
                        d * s.total[ch],
                        s.total[ch],
                    ];
                    for (basis, v) in vals.into_iter().enumerate() {
                        o[basis * c + ch] = m * v;
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`forward`]: `g: [bt, n, n, 15 c]` -> `[bt, n, n, c]`.
pub(crate) fn adjoint(g: &[f64], pair_mask: &[f64], bt: usize, n: usize, c: usize) -> Vec<f64> {
    let oc = BASIS2_COUNT * c;
    let mut dx = vec![0.0; bt * n * n * c];
    for b in 0..bt {
        let pm = &pair_mask[b * n * n..(b + 1) * n * n];
        let gb = |i: usize, j: usize, basis: usize, ch: usize| -> f64 {
            pm[i * n + j] * g[((b * n + i) * n + j) * oc + basis * c + ch]
        };
        // Reduce every basis output along the axes it broadcast over.
        let mut row_red = vec![[0.0f64; BASIS2_COUNT]; n * c];
        let mut col_red = vec![[0.0f64; BASIS2_COUNT]; n * c];
        let mut diag = vec![[0.0f64; BASIS2_COUNT]; n * c];
        let mut all = vec![[0.0f64; BASIS2_COUNT]; c];
        let mut diag_sum = vec![[0.0f64; BASIS2_COUNT]; c];
        for i in 0..n {
            for j in 0..n {
                for ch in 0..c {
                    for basis in 0..BASIS2_COUNT {
                        let v = gb(i, j, basis, ch);
                        row_red[i * c + ch][basis] += v;
                        col_red[j * c + ch][basis] += v;
                        all[ch][basis] += v;
                        if i == j {
                            diag[i * c + ch][basis] = v;
                            diag_sum[ch][basis] += v;
                        }
                    }
                }
            }
        }
        let base = b * n * n * c;
        for k in 0..n {
            for l in 0..n {
                for ch in 0..c {
                    let mut acc = gb(k, l, 0, ch) + gb(l, k, 1, ch);
                    // sums over the row k / column l of the input
                    acc += diag[k * c + ch][5] + row_red[k * c + ch][7] + col_red[k * c + ch][8];
                    acc += diag[l * c + ch][6] + row_red[l * c + ch][9] + col_red[l * c + ch][10];
                    acc += diag_sum[ch][13] + all[ch][14];
                    if k == l {
                        acc += diag[k * c + ch][2]
                            + row_red[k * c + ch][3]
                            + col_red[k * c + ch][4]
                            + diag_sum[ch][11]
                            + all[ch][12];
                    }
                    dx[base + (k * n + l) * c + ch] = pm[k * n + l] * acc;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;

    fn naive(x: &[f64], n: usize, basis: usize) -> Vec<f64> {
        let at = |i: usize, j: usize| x[i * n + j];
        let row = |i: usize| (0..n).map(|k| at(i, k)).sum::<f64>();
        let col = |i: usize| (0..n).map(|k| at(k, i)).sum::<f64>();
        let tr: f64 = (0..n).map(|k| at(k, k)).sum();
        let tot: f64 = x.iter().sum();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = if i == j { 1.0 } else { 0.0 };
                out[i * n + j] = match basis {
                    0 => at(i, j),
                    1 => at(j, i),
                    2 => d * at(i, i),
                    3 => at(i, i),
                    4 => at(j, j),
                    5 => d * row(i),
                    6 => d * col(i),
                    7 => row(i),
                    8 => row(j),
                    9 => col(i),
                    10 => col(j),
                    11 => d * tr,
                    12 => tr,
                    13 => d * tot,
                    _ => tot,
                };
            }
        }
        out
    }

    #[test]
    fn matches_naive_formulas() {
        let n = 4;
        let mut rng = RngSeed(1).stream();
        let x: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let out = forward(&x, &vec![1.0; n * n], 1, n, 1);
        for basis in 0..BASIS2_COUNT {
            let want = naive(&x, n, basis);
            for p in 0..n * n {
                assert!((out[p * BASIS2_COUNT + basis] - want[p]).abs() < 1e-12, "basis {basis}");
            }
        }
    }

    #[test]
    fn adjoint_identity_holds() {
        // <B x, g> == <x, Bᵀ g> for random x, g, including a padded slot.
        let (bt, n, c) = (2, 4, 2);
        let mut rng = RngSeed(2).stream();
        let mut mask = vec![1.0; bt * n * n];
        for i in 0..n {
            mask[n * n + i * n + 3] = 0.0;
            mask[n * n + 3 * n + i] = 0.0;
        }
        let x: Vec<f64> = (0..bt * n * n * c).map(|_| rng.normal()).collect();
        let g: Vec<f64> = (0..bt * n * n * BASIS2_COUNT * c).map(|_| rng.normal()).collect();
        let bx = forward(&x, &mask, bt, n, c);
        let btg = adjoint(&g, &mask, bt, n, c);
        let lhs: f64 = bx.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&btg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
