use crate::error::{Error, Result};

/// Assignment maximizing `Σ_i s[i][π(i)]` for a square row-major matrix.
///
/// Runs the O(n³) shortest-augmenting-path Hungarian method on the cost
/// `max(s) - s`. Among equal candidates the lowest column index wins, so
/// the result is deterministic.
pub fn hungarian_lap(s: &[f64], n: usize) -> Result<Vec<usize>> {
    if s.len() != n * n {
        return Err(Error::input(format!("score matrix has {} entries, expected {n}x{n}", s.len())));
    }
    if let Some(bad) = s.iter().find(|v| !v.is_finite()) {
        return Err(Error::input(format!("non-finite score {bad}")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cost = |i: usize, j: usize| top - s[i * n + j];

    // 1-based potentials with a virtual column 0, as in the classic
    // formulation; way[j] remembers the previous column on the path.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pi = vec![0; n];
    for j in 1..=n {
        pi[row_of[j] - 1] = j - 1;
    }
    Ok(pi)
}

/// Per-row argmax, lowest column on ties. Not necessarily a permutation.
pub fn row_argmax(s: &[f64], n: usize) -> Vec<usize> {
    (0..n)
        .map(|i| {
            let row = &s[i * n..(i + 1) * n];
            let mut best = 0;
            for j in 1..n {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn assignment_score(s: &[f64], n: usize, pi: &[usize]) -> f64 {
    pi.iter().enumerate().map(|(i, &j)| s[i * n + j]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(hungarian_lap(&[1.0, 0.0, 0.0, 1.0], 2).unwrap(), vec![0, 1]);
        assert_eq!(hungarian_lap(&[0.0, 1.0, 1.0, 0.0], 2).unwrap(), vec![1, 0]);
        assert_eq!(hungarian_lap(&[], 0).unwrap(), Vec::<usize>::new());
        assert_eq!(hungarian_lap(&[3.0], 1).unwrap(), vec![0]);
        assert!(hungarian_lap(&[f64::NAN, 0.0, 0.0, 0.0], 2).is_err());
        assert!(hungarian_lap(&[0.0; 3], 2).is_err());
    }

    #[test]
    fn ties_resolve_to_identity() {
        assert_eq!(hungarian_lap(&[0.0; 16], 4).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn argmax_prefers_lowest_column() {
        assert_eq!(row_argmax(&[1.0, 1.0, 0.0, 2.0], 2), vec![0, 1]);
    }
}
