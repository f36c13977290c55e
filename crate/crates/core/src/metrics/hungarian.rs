use crate::error::{Error, Result};

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `assignment[row] = col`. Shortest augmenting paths with row/column
/// potentials, O(n³).
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(Error::shape(format!("assignment needs a square matrix, got a row of {} in {n}", row.len())));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::argument("assignment costs must be finite"));
    }
    // 1-based with a virtual column 0, as in the classic potential formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let prev = way[j0];
            matched_row[j0] = matched_row[prev];
            j0 = prev;
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn brute_min(cost: &[Vec<f64>]) -> f64 {
        fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row][j] + go(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(cost, 0, &mut vec![false; cost.len()])
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = Rng::new(44);
        for _ in 0..300 {
            let n = 1 + rng.below(6);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.below(21) as f64 - 10.0).collect())
                .collect();
            let a = hungarian(&cost).unwrap();
            let mut seen = a.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            assert_eq!(total, brute_min(&cost));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(hungarian(&[vec![1.0, 2.0]]).is_err());
        assert!(hungarian(&[vec![f64::NAN]]).is_err());
        assert_eq!(hungarian(&[]).unwrap(), Vec::<usize>::new());
    }
}
