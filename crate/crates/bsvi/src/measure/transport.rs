//! Exact transportation solve by successive shortest paths.
//!
//! The transportation problem min sum f_ij c_ij over couplings of two
//! weight vectors is solved as a min-cost flow on the dense bipartite
//! graph with node potentials. Each augmentation saturates at least one
//! source or sink, so at most `n + m` Dijkstra passes run. Potentials keep
//! reduced costs nonnegative, which keeps Dijkstra valid; tiny negative
//! reduced costs from rounding are clamped to zero.

const DUST: f64 = 1e-13;

struct FlowState {
    /// per source: (sink, amount) pairs with positive flow
    by_source: Vec<Vec<(usize, f64)>>,
    /// per sink: sources that ever received flow (entries may be stale)
    by_sink: Vec<Vec<usize>>,
}

impl FlowState {
    fn new(n: usize, m: usize) -> Self {
        FlowState {
            by_source: vec![Vec::new(); n],
            by_sink: vec![Vec::new(); m],
        }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.by_source[i]
            .iter()
            .find(|&&(jj, _)| jj == j)
            .map(|&(_, f)| f)
            .unwrap_or(0.0)
    }

    fn add(&mut self, i: usize, j: usize, delta: f64) {
        match self.by_source[i].iter_mut().find(|(jj, _)| *jj == j) {
            Some(entry) => entry.1 += delta,
            None => {
                self.by_source[i].push((j, delta));
                self.by_sink[j].push(i);
            }
        }
    }
}

/// Minimal total cost of transporting `supply` onto `demand` under the
/// cost function `cost(i, j)`. Weight vectors are normalized to total
/// mass one internally; zero-weight atoms simply never carry flow.
pub fn transport_cost(supply: &[f64], demand: &[f64], cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    let n = supply.len();
    let m = demand.len();
    let sum_a: f64 = supply.iter().sum();
    let sum_b: f64 = demand.iter().sum();
    let mut a: Vec<f64> = supply.iter().map(|w| w / sum_a).collect();
    let mut b: Vec<f64> = demand.iter().map(|w| w / sum_b).collect();

    // node potentials: sources 0..n, sinks n..n+m
    let nn = n + m;
    let mut pi = vec![0.0f64; nn];
    let mut flow = FlowState::new(n, m);
    let mut total_cost = 0.0f64;

    loop {
        if a.iter().sum::<f64>() <= DUST {
            break;
        }
        // multi-source Dijkstra on reduced costs c + pi(x) - pi(y)
        let mut dist = vec![f64::INFINITY; nn];
        let mut prev = vec![usize::MAX; nn];
        let mut done = vec![false; nn];
        for i in 0..n {
            if a[i] > DUST {
                dist[i] = 0.0;
            }
        }
        let mut target: Option<usize> = None;
        loop {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for x in 0..nn {
                if !done[x] && dist[x] < best_d {
                    best_d = dist[x];
                    best = x;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best >= n && b[best - n] > DUST {
                target = Some(best - n);
                break;
            }
            if best < n {
                let i = best;
                let di = dist[i];
                for j in 0..m {
                    if done[n + j] {
                        continue;
                    }
                    let rc = (cost(i, j) + pi[i] - pi[n + j]).max(0.0);
                    if di + rc < dist[n + j] {
                        dist[n + j] = di + rc;
                        prev[n + j] = i;
                    }
                }
            } else {
                let j = best - n;
                let dj = dist[n + j];
                for &i in &flow.by_sink[j] {
                    if done[i] || flow.get(i, j) <= DUST {
                        continue;
                    }
                    let rc = (-cost(i, j) + pi[n + j] - pi[i]).max(0.0);
                    if dj + rc < dist[i] {
                        dist[i] = dj + rc;
                        prev[i] = n + j;
                    }
                }
            }
        }
        let Some(t) = target else {
            // residual dust only; nothing reachable is left
            break;
        };
        let reach = dist[n + t];
        for x in 0..nn {
            pi[x] += dist[x].min(reach);
        }
        // trace the augmenting path back from the sink
        let mut path = vec![n + t];
        let mut cur = n + t;
        while prev[cur] != usize::MAX {
            cur = prev[cur];
            path.push(cur);
        }
        path.reverse();
        let src = path[0];
        debug_assert!(src < n && dist[src] == 0.0);

        let mut push = a[src].min(b[t]);
        for w in path.windows(2) {
            if w[0] >= n {
                push = push.min(flow.get(w[1], w[0] - n));
            }
        }
        if push <= DUST {
            break;
        }
        for w in path.windows(2) {
            if w[0] < n {
                let (i, j) = (w[0], w[1] - n);
                flow.add(i, j, push);
                total_cost += push * cost(i, j);
            } else {
                let (j, i) = (w[0] - n, w[1]);
                flow.add(i, j, -push);
                total_cost -= push * cost(i, j);
            }
        }
        a[src] -= push;
        b[t] -= push;
    }
    total_cost.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair() {
        let c = |_: usize, _: usize| 9.0;
        assert!((transport_cost(&[1.0], &[1.0], &c) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn picks_cheaper_matching() {
        // two sources, two sinks: identity matching costs 0+0, crossing 1+1
        let cost = [vec![0.0, 1.0], vec![1.0, 0.0]];
        let c = |i: usize, j: usize| cost[i][j];
        let got = transport_cost(&[0.5, 0.5], &[0.5, 0.5], &c);
        assert!(got.abs() < 1e-12, "got {got}");
    }

    #[test]
    fn splits_mass() {
        // one source must split across two sinks
        let cost = [vec![1.0, 3.0]];
        let c = |i: usize, j: usize| cost[i][j];
        let got = transport_cost(&[1.0], &[0.25, 0.75], &c);
        assert!((got - (0.25 * 1.0 + 0.75 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn rebalances_through_backward_edges() {
        let cost = [vec![0.0, 2.0], vec![5.0, 1.0]];
        let c = |i: usize, j: usize| cost[i][j];
        // supplies (0.8, 0.2), demands (0.5, 0.5):
        // optimum f00=0.5, f01=0.3, f11=0.2 -> 0 + 0.6 + 0.2 = 0.8
        let got = transport_cost(&[0.8, 0.2], &[0.5, 0.5], &c);
        assert!((got - 0.8).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn zero_weight_atoms_are_ignored() {
        let cost = [vec![1.0, 7.0], vec![0.0, 7.0]];
        let c = |i: usize, j: usize| cost[i][j];
        let got = transport_cost(&[1.0, 0.0], &[1.0, 0.0], &c);
        assert!((got - 1.0).abs() < 1e-12, "got {got}");
    }
}
