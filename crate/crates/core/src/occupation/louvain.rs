use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{OccupationNetwork, Partition, WeightedGraph};
use super::OccupationError;

const MIN_GAIN: f64 = 1e-12;

/// Louvain community detection: local moving in seeded random node order,
/// then aggregation, until a level makes no move. Communities are numbered
/// by their lowest node index.
pub fn louvain(graph: &WeightedGraph, seed: u64, resolution: f64) -> Result<Vec<usize>, OccupationError> {
    if graph.total_weight() <= 0.0 {
        return Err(OccupationError::DegenerateNetwork);
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(OccupationError::Config("resolution must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut membership: Vec<usize> = (0..graph.len()).collect();
    let mut level = graph.clone();
    loop {
        let (local, moved) = local_moving(&level, resolution, &mut rng);
        if !moved {
            break;
        }
        let (local, k) = renumber(&local);
        for m in membership.iter_mut() {
            *m = local[*m];
        }
        if k == level.len() {
            break;
        }
        level = aggregate(&level, &local, k);
    }
    Ok(renumber(&membership).0)
}

fn local_moving(g: &WeightedGraph, resolution: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
    let n = g.len();
    let s = g.strengths();
    let two_m = 2.0 * g.total_weight();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut tot: Vec<f64> = s.to_vec();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut links = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut any = false;
    loop {
        let mut moved = false;
        for &i in &order {
            let row = g.row(i);
            for (j, &w) in row.iter().enumerate() {
                if j != i && w > 0.0 {
                    if links[comm[j]] == 0.0 {
                        touched.push(comm[j]);
                    }
                    links[comm[j]] += w;
                }
            }
            let own = comm[i];
            tot[own] -= s[i];
            let gain = |c: usize, links: &[f64]| links[c] - resolution * s[i] * tot[c] / two_m;
            let mut best = own;
            let mut best_gain = gain(own, &links);
            touched.sort_unstable();
            for &c in &touched {
                let g = gain(c, &links);
                if g > best_gain + MIN_GAIN {
                    best = c;
                    best_gain = g;
                }
            }
            tot[best] += s[i];
            if best != own {
                comm[i] = best;
                moved = true;
            }
            for &c in &touched {
                links[c] = 0.0;
            }
            touched.clear();
        }
        if !moved {
            break;
        }
        any = true;
    }
    (comm, any)
}

/// Relabels communities 0..k in order of their lowest member.
fn renumber(comm: &[usize]) -> (Vec<usize>, usize) {
    let mut map = vec![usize::MAX; comm.iter().max().map_or(0, |m| m + 1)];
    let mut next = 0;
    let out = comm
        .iter()
        .map(|&c| {
            if map[c] == usize::MAX {
                map[c] = next;
                next += 1;
            }
            map[c]
        })
        .collect();
    (out, next)
}

fn aggregate(g: &WeightedGraph, comm: &[usize], k: usize) -> WeightedGraph {
    let n = g.len();
    let mut w = vec![0.0; k * k];
    for i in 0..n {
        let row = g.row(i);
        for j in 0..n {
            w[comm[i] * k + comm[j]] += row[j];
        }
    }
    // Summation order can leave the two triangles a rounding error apart.
    for a in 0..k {
        for b in a + 1..k {
            let v = w[a * k + b];
            w[b * k + a] = v;
        }
    }
    WeightedGraph::from_dense(k, w).expect("aggregated graph is symmetric and non-negative")
}

impl OccupationNetwork {
    /// Runs Louvain and installs the result with ids `0..K` and labels
    /// `community N`. Returns the modularity of the partition.
    pub fn detect_communities(&mut self, seed: u64, resolution: f64) -> Result<f64, OccupationError> {
        let assignment = louvain(self.graph(), seed, resolution)?;
        let k = assignment.iter().max().map_or(0, |m| m + 1);
        let q = self.graph().modularity(&assignment)?;
        self.install(Partition {
            assignment,
            ids: (0..k).map(|c| c.to_string()).collect(),
            labels: (0..k).map(|c| format!("community {c}")).collect(),
        })?;
        Ok(q)
    }
}
