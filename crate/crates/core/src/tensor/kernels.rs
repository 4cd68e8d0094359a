//! Inner loops shared by the tape ops. Parallel variants split work into
//! fixed blocks so that results do not depend on the thread count.

use crate::par;

/// Rows per block for reductions over rows.
const ROW_BLOCK: usize = 256;

/// `out[r, :] = bias + x[r, :] · w` for `x: rows x k`, `w: k x m`.
pub fn affine_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, k: usize, m: usize) -> Vec<f64> {
    let rows = x.len().checked_div(k).unwrap_or(x.len());
    let mut out = vec![0.0; rows * m];
    par::for_each_chunk_mut(&mut out, 64 * m.max(1), rows * k * m, |ci, chunk| {
        let r0 = ci * 64;
        for (dr, orow) in chunk.chunks_mut(m.max(1)).enumerate() {
            let r = r0 + dr;
            if let Some(b) = bias {
                orow.copy_from_slice(b);
            }
            let xr = &x[r * k..(r + 1) * k];
            for (kk, &xv) in xr.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wr = &w[kk * m..(kk + 1) * m];
                for (o, &wv) in orow.iter_mut().zip(wr) {
                    *o += xv * wv;
                }
            }
        }
    });
    out
}

/// `dx = g · wᵀ`.
pub fn affine_backward_input(g: &[f64], w: &[f64], k: usize, m: usize) -> Vec<f64> {
    let rows = g.len().checked_div(m).unwrap_or(0);
    let mut dx = vec![0.0; rows * k];
    par::for_each_chunk_mut(&mut dx, 64 * k.max(1), rows * k * m, |ci, chunk| {
        let r0 = ci * 64;
        for (dr, drow) in chunk.chunks_mut(k.max(1)).enumerate() {
            let r = r0 + dr;
            let gr = &g[r * m..(r + 1) * m];
            for (kk, d) in drow.iter_mut().enumerate() {
                let wr = &w[kk * m..(kk + 1) * m];
                *d = gr.iter().zip(wr).map(|(a, b)| a * b).sum();
            }
        }
    });
    dx
}

/// `(dw, db) = (xᵀ · g, Σ_rows g)`, summed block by block in order.
pub fn affine_backward_params(x: &[f64], g: &[f64], k: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = g.len().checked_div(m).unwrap_or(0);
    let blocks = rows.div_ceil(ROW_BLOCK);
    let partials = par::map_range(blocks, |bi| {
        let mut dw = vec![0.0; k * m];
        let mut db = vec![0.0; m];
        for r in bi * ROW_BLOCK..((bi + 1) * ROW_BLOCK).min(rows) {
            let gr = &g[r * m..(r + 1) * m];
            for (d, &gv) in db.iter_mut().zip(gr) {
                *d += gv;
            }
            let xr = &x[r * k..(r + 1) * k];
            for (kk, &xv) in xr.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let dwr = &mut dw[kk * m..(kk + 1) * m];
                for (d, &gv) in dwr.iter_mut().zip(gr) {
                    *d += xv * gv;
                }
            }
        }
        (dw, db)
    });
    let mut dw = vec![0.0; k * m];
    let mut db = vec![0.0; m];
    for (pw, pb) in partials {
        for (a, b) in dw.iter_mut().zip(pw) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(pb) {
            *a += b;
        }
    }
    (dw, db)
}

/// Batched `a: [bt, m, p] · b: [bt, p, q]`.
pub fn bmm(a: &[f64], b: &[f64], bt: usize, m: usize, p: usize, q: usize) -> Vec<f64> {
    let mut out = vec![0.0; bt * m * q];
    par::for_each_chunk_mut(&mut out, q.max(1), bt * m * p * q, |row, orow| {
        let (bi, i) = (row / m, row % m);
        let arow = &a[(bi * m + i) * p..(bi * m + i + 1) * p];
        for (j, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[(bi * p + j) * q..(bi * p + j + 1) * q];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    out
}

/// Swap the last two axes of `[bt, r, c]`.
pub fn transpose_last2(x: &[f64], bt: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..bt {
        for i in 0..r {
            for j in 0..c {
                out[(b * c + j) * r + i] = x[(b * r + i) * c + j];
            }
        }
    }
    out
}

/// Per-channel matrix product:
/// `out[b, i, k, :] = Σ_j a[b, i, j, :] ⊙ y[b, j, k, :]`, with
/// `a: [bt, m, p, c]`, `y: [bt, p, q, c]`.
pub fn channel_matmul(a: &[f64], y: &[f64], bt: usize, m: usize, p: usize, q: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; bt * m * q * c];
    let row = q * c;
    par::for_each_chunk_mut(&mut out, row.max(1), bt * m * p * q * c, |ri, orow| {
        let (bi, i) = (ri / m, ri % m);
        for j in 0..p {
            let av = &a[((bi * m + i) * p + j) * c..((bi * m + i) * p + j + 1) * c];
            let yrow = &y[(bi * p + j) * row..(bi * p + j + 1) * row];
            for (oc, yc) in orow.chunks_exact_mut(c).zip(yrow.chunks_exact(c)) {
                for ((o, &x1), &x2) in oc.iter_mut().zip(av).zip(yc) {
                    *o += x1 * x2;
                }
            }
        }
    });
    out
}

/// Gradient of [`channel_matmul`] w.r.t. `a`:
/// `da[b, i, j, :] = Σ_k g[b, i, k, :] ⊙ y[b, j, k, :]`.
pub fn channel_matmul_grad_a(g: &[f64], y: &[f64], bt: usize, m: usize, p: usize, q: usize, c: usize) -> Vec<f64> {
    let mut da = vec![0.0; bt * m * p * c];
    par::for_each_chunk_mut(&mut da, (p * c).max(1), bt * m * p * q * c, |ri, drow| {
        let (bi, i) = (ri / m, ri % m);
        let grow = &g[(bi * m + i) * q * c..(bi * m + i + 1) * q * c];
        for (j, dc) in drow.chunks_exact_mut(c).enumerate() {
            let yrow = &y[(bi * p + j) * q * c..(bi * p + j + 1) * q * c];
            for (gc, yc) in grow.chunks_exact(c).zip(yrow.chunks_exact(c)) {
                for ((d, &x1), &x2) in dc.iter_mut().zip(gc).zip(yc) {
                    *d += x1 * x2;
                }
            }
        }
    });
    da
}

/// Gradient of [`channel_matmul`] w.r.t. `y`:
/// `dy[b, j, k, :] = Σ_i a[b, i, j, :] ⊙ g[b, i, k, :]`.
pub fn channel_matmul_grad_y(g: &[f64], a: &[f64], bt: usize, m: usize, p: usize, q: usize, c: usize) -> Vec<f64> {
    let mut dy = vec![0.0; bt * p * q * c];
    par::for_each_chunk_mut(&mut dy, (q * c).max(1), bt * m * p * q * c, |rj, drow| {
        let (bi, j) = (rj / p, rj % p);
        for i in 0..m {
            let av = &a[((bi * m + i) * p + j) * c..((bi * m + i) * p + j + 1) * c];
            let grow = &g[(bi * m + i) * q * c..(bi * m + i + 1) * q * c];
            for (dc, gc) in drow.chunks_exact_mut(c).zip(grow.chunks_exact(c)) {
                for ((d, &x1), &x2) in dc.iter_mut().zip(av).zip(gc) {
                    *d += x1 * x2;
                }
            }
        }
    });
    dy
}
