//! Hand-checked hard pairs.

use crate::graph::GraphTensor;

/// Cycle on six nodes.
pub fn c6() -> GraphTensor {
    let edges: Vec<(usize, usize)> = (0..6).map(|i| (i, (i + 1) % 6)).collect();
    GraphTensor::encode_dense(6, &edges, None).unwrap()
}

/// Two disjoint triangles, {0,1,2} and {3,4,5}.
pub fn two_c3() -> GraphTensor {
    GraphTensor::encode_dense(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)], None).unwrap()
}

// Node r*4 + c is cell (r, c) of a 4x4 board; two cells are adjacent when
// they share a row or a column (the line graph of K_{4,4}).
// Strongly regular with parameters (16, 6, 2, 2).
const ROOK_4X4: [(usize, usize); 48] = [
    (0, 1), (0, 2), (0, 3), (0, 4), (0, 8), (0, 12), (1, 2), (1, 3), (1, 5), (1, 9), (1, 13), (2, 3),
    (2, 6), (2, 10), (2, 14), (3, 7), (3, 11), (3, 15), (4, 5), (4, 6), (4, 7), (4, 8), (4, 12), (5, 6),
    (5, 7), (5, 9), (5, 13), (6, 7), (6, 10), (6, 14), (7, 11), (7, 15), (8, 9), (8, 10), (8, 11), (8, 12),
    (9, 10), (9, 11), (9, 13), (10, 11), (10, 14), (11, 15), (12, 13), (12, 14), (12, 15), (13, 14),
    (13, 15), (14, 15),
];

// Cayley graph of Z4 x Z4 with connection set {±(0,1), ±(1,0), ±(1,1)};
// node r*4 + c is (r, c). Same parameters (16, 6, 2, 2) as the rook graph
// but not isomorphic to it: neighborhoods here are 6-cycles, there two
// disjoint triangles.
const SHRIKHANDE: [(usize, usize); 48] = [
    (0, 1), (0, 3), (0, 4), (0, 5), (0, 12), (0, 15), (1, 2), (1, 5), (1, 6), (1, 12), (1, 13), (2, 3),
    (2, 6), (2, 7), (2, 13), (2, 14), (3, 4), (3, 7), (3, 14), (3, 15), (4, 5), (4, 7), (4, 8), (4, 9),
    (5, 6), (5, 9), (5, 10), (6, 7), (6, 10), (6, 11), (7, 8), (7, 11), (8, 9), (8, 11), (8, 12), (8, 13),
    (9, 10), (9, 13), (9, 14), (10, 11), (10, 14), (10, 15), (11, 12), (11, 15), (12, 13), (12, 15),
    (13, 14), (14, 15),
];

pub fn rook_4x4() -> GraphTensor {
    GraphTensor::encode_dense(16, &ROOK_4X4, None).unwrap()
}

pub fn shrikhande() -> GraphTensor {
    GraphTensor::encode_dense(16, &SHRIKHANDE, None).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn common_neighbors(g: &GraphTensor, a: usize, b: usize) -> usize {
        (0..g.n()).filter(|&x| g.has_edge(a, x) && g.has_edge(b, x)).count()
    }

    #[test]
    fn both_are_srg_16_6_2_2() {
        for g in [rook_4x4(), shrikhande()] {
            assert!(g.degrees().iter().all(|&d| d == 6));
            for a in 0..16 {
                for b in a + 1..16 {
                    assert_eq!(common_neighbors(&g, a, b), 2, "({a},{b})");
                }
            }
        }
    }

    #[test]
    fn neighborhoods_differ() {
        // N(0) induces two triangles in the rook graph and a 6-cycle in Shrikhande
        let has_triangle = |g: &GraphTensor| {
            let nb = g.neighbors(0);
            nb.iter().any(|&a| {
                nb.iter()
                    .any(|&b| b > a && g.has_edge(a, b) && nb.iter().any(|&c| c > b && g.has_edge(a, c) && g.has_edge(b, c)))
            })
        };
        assert!(has_triangle(&rook_4x4()));
        assert!(!has_triangle(&shrikhande()));
    }
}
