//! Exhaustive Betti numbers of a sublevel set of a vertex-weighted flag
//! complex: flood fill for components, dense mod-2 elimination for cycles.

/// `(b0, b1)` of the flag complex on the vertices with value `<= t`.
pub fn sublevel_betti(values: &[f64], edges: &[(usize, usize)], t: f64) -> (usize, usize) {
    let n = values.len();
    let alive: Vec<bool> = values.iter().map(|&v| v <= t).collect();
    let mut adj = vec![vec![false; n]; n];
    let mut live_edges = Vec::new();
    for &(u, v) in edges {
        if u != v && alive[u] && alive[v] && !adj[u][v] {
            adj[u][v] = true;
            adj[v][u] = true;
            live_edges.push((u.min(v), u.max(v)));
        }
    }
    live_edges.sort_unstable();

    let mut seen = vec![false; n];
    let mut b0 = 0;
    for s in 0..n {
        if !alive[s] || seen[s] {
            continue;
        }
        b0 += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for w in 0..n {
                if adj[u][w] && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }

    let edge_index = |a: usize, b: usize| live_edges.binary_search(&(a.min(b), a.max(b))).unwrap();
    let mut rows: Vec<Vec<bool>> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                if adj[a][b] && adj[a][c] && adj[b][c] {
                    let mut row = vec![false; live_edges.len()];
                    row[edge_index(a, b)] = true;
                    row[edge_index(a, c)] = true;
                    row[edge_index(b, c)] = true;
                    rows.push(row);
                }
            }
        }
    }
    let rank2 = gf2_rank(rows, live_edges.len());
    let n_alive = alive.iter().filter(|&&a| a).count();
    let rank1 = n_alive - b0;
    (b0, live_edges.len() - rank1 - rank2)
}

pub fn gf2_rank(mut rows: Vec<Vec<bool>>, cols: usize) -> usize {
    let mut rank = 0;
    for col in 0..cols {
        let Some(pivot) = (rank..rows.len()).find(|&r| rows[r][col]) else {
            continue;
        };
        rows.swap(rank, pivot);
        for r in 0..rows.len() {
            if r != rank && rows[r][col] {
                let (src, dst) = if r < rank {
                    let (lo, hi) = rows.split_at_mut(rank);
                    (&hi[0], &mut lo[r])
                } else {
                    let (lo, hi) = rows.split_at_mut(r);
                    (&lo[rank], &mut hi[0])
                };
                for (d, s) in dst.iter_mut().zip(src) {
                    *d ^= *s;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Every distinct value, plus points below, between and above them.
pub fn probe_thresholds(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mut out = vec![v[0] - 1.0];
    for w in v.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*v.last().unwrap());
    out.push(v.last().unwrap() + 1.0);
    out
}
