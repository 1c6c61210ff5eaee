//! Exact (unregularized) transport by successive shortest paths.
//!
//! Used as a reference solution for small instances. Supplies may be real
//! valued; each augmentation saturates at least one arc or exhausts a supply,
//! so the loop terminates after finitely many steps.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

struct Arc {
    to: usize,
    cap: f64,
    cost: f64,
}

struct Network {
    arcs: Vec<Arc>,
    out: Vec<Vec<usize>>,
}

impl Network {
    fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            out: vec![Vec::new(); nodes],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64, cost: f64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.out[from].push(id);
        self.arcs.push(Arc { to: from, cap: 0.0, cost: -cost });
        self.out[to].push(id + 1);
        id
    }

    /// Bellman-Ford over the residual graph; returns the predecessor arc of
    /// each node on a cheapest path from `src`.
    fn shortest_path(&self, src: usize, zero: f64) -> Vec<Option<usize>> {
        let n = self.out.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![None; n];
        dist[src] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u] == f64::INFINITY {
                    continue;
                }
                for &id in &self.out[u] {
                    let arc = &self.arcs[id];
                    if arc.cap > zero {
                        let nd = dist[u] + arc.cost;
                        // strict improvement beyond rounding
                        if nd < dist[arc.to] - 1e-12 * (1.0 + nd.abs()) {
                            dist[arc.to] = nd;
                            pred[arc.to] = Some(id);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        pred
    }
}

/// Minimizes `<u, C>` over couplings with row sums `a` and column sums `b`.
///
/// Returns an optimal vertex of the transport polytope and its cost. When the
/// optimum is not unique any optimal vertex may be returned.
pub fn exact_ot_oracle(a: &[f64], b: &[f64], c: ArrayView2<'_, f64>) -> Result<(Array2<f64>, f64)> {
    let (n, m) = (a.len(), b.len());
    if c.dim() != (n, m) {
        return Err(Error::Shape(format!("cost is {:?} but marginals are {n} and {m}", c.dim())));
    }
    if a.iter().chain(b).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Infeasible("histogram entries must be finite and >= 0".into()));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 * sa.max(sb).max(1.0) {
        return Err(Error::Infeasible(format!("masses differ: {sa} vs {sb}")));
    }
    let zero = 1e-13 * sa.max(1.0);
    let src = n + m;
    let sink = n + m + 1;
    let mut net = Network::new(n + m + 2);
    for (i, &ai) in a.iter().enumerate() {
        net.add(src, i, ai, 0.0);
    }
    for (j, &bj) in b.iter().enumerate() {
        net.add(n + j, sink, bj, 0.0);
    }
    let mut cell = Array2::<usize>::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            cell[[i, j]] = net.add(i, n + j, f64::INFINITY, c[[i, j]]);
        }
    }

    let mut shipped = 0.0;
    while sa - shipped > zero {
        let pred = net.shortest_path(src, zero);
        if pred[sink].is_none() {
            return Err(Error::Infeasible("no augmenting path left".into()));
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != src {
            let id = pred[v].unwrap();
            push = push.min(net.arcs[id].cap);
            v = net.arcs[id ^ 1].to;
        }
        let mut v = sink;
        while v != src {
            let id = pred[v].unwrap();
            net.arcs[id].cap -= push;
            net.arcs[id ^ 1].cap += push;
            v = net.arcs[id ^ 1].to;
        }
        shipped += push;
    }

    let u = Array2::from_shape_fn((n, m), |(i, j)| net.arcs[cell[[i, j]] ^ 1].cap);
    let cost = u.iter().zip(c.iter()).map(|(x, y)| x * y).sum();
    Ok((u, cost))
}
