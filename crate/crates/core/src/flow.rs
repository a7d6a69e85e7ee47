//! Maximum flow on small dense networks (Dinic's algorithm, f64 capacities).

use std::collections::VecDeque;

const EPS: f64 = 1e-15;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
}

#[derive(Debug, Clone)]
pub struct FlowNetwork {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork { edges: Vec::new(), adj: vec![Vec::new(); nodes] }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0.0 });
    }

    fn levels(&self, source: usize, sink: usize) -> Option<Vec<usize>> {
        let mut level = vec![usize::MAX; self.adj.len()];
        level[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.edges[e].to;
                if self.edges[e].cap > EPS && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (level[sink] != usize::MAX).then_some(level)
    }

    fn push(&mut self, u: usize, sink: usize, limit: f64, level: &[usize], next: &mut [usize]) -> f64 {
        if u == sink {
            return limit;
        }
        while next[u] < self.adj[u].len() {
            let e = self.adj[u][next[u]];
            let v = self.edges[e].to;
            if self.edges[e].cap > EPS && level[v] == level[u] + 1 {
                let pushed = self.push(v, sink, limit.min(self.edges[e].cap), level, next);
                if pushed > EPS {
                    self.edges[e].cap -= pushed;
                    self.edges[e ^ 1].cap += pushed;
                    return pushed;
                }
            }
            next[u] += 1;
        }
        0.0
    }

    /// Value of a maximum `source -> sink` flow. Consumes residual capacity.
    pub fn max_flow(&mut self, source: usize, sink: usize) -> f64 {
        let mut total = 0.0;
        while let Some(level) = self.levels(source, sink) {
            let mut next = vec![0; self.adj.len()];
            loop {
                let f = self.push(source, sink, f64::INFINITY, &level, &mut next);
                if f <= EPS {
                    break;
                }
                total += f;
            }
        }
        total
    }
}
