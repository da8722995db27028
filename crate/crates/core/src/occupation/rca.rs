use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::network::{sorensen_sorted, OccupationNetwork};
use super::taxonomy::AgentProfile;
use super::OccupationError;

/// Floor applied to affinities before the RCA ratios.
pub const RCA_EPSILON: f64 = 1e-9;
/// EWMA smoothing used when none is given.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Modularity gain of attaching `agent` to each community.
///
/// The agent joins the graph as an extra node with edges `A_ia` equal to its
/// DWA similarity with every occupation. With `s_a = Σ A_ia`, `m' = m + s_a`
/// and community strengths `S'_k` measured on the augmented graph, the gain
/// for community `k` is `(Σ_{i∈C_k} A_ia − s_a S'_k / 2m') / m'`.
pub fn probe_agent(network: &OccupationNetwork, agent: &AgentProfile) -> Result<Vec<f64>, OccupationError> {
    let p = network.partition().ok_or(OccupationError::NoPartition)?;
    if agent.dwas.is_empty() {
        return Err(OccupationError::EmptyProfile(agent.agent_id.clone()));
    }
    let g = network.graph();
    if g.total_weight() <= 0.0 {
        return Err(OccupationError::DegenerateNetwork);
    }
    let dwas = network.agent_indices(agent)?;
    let edges: Vec<f64> = (0..g.len())
        .map(|i| sorensen_sorted(&dwas, network.profile(i)))
        .collect();
    let s_a: f64 = edges.iter().sum();
    let m = g.total_weight() + s_a;
    let k = p.len();
    let mut linked = vec![0.0; k];
    let mut strength = vec![0.0; k];
    for (i, &c) in p.assignment.iter().enumerate() {
        linked[c] += edges[i];
        strength[c] += g.strengths()[i] + edges[i];
    }
    Ok((0..k)
        .map(|c| (linked[c] - s_a * strength[c] / (2.0 * m)) / m)
        .collect())
}

/// Agent × community association scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub agents: Vec<String>,
    /// Community labels, one per column.
    pub communities: Vec<String>,
    /// `ln RCA` per agent and community.
    pub r: Vec<Vec<f64>>,
    /// Affinities the scores came from, when computed in this process.
    pub q_raw: Option<Vec<Vec<f64>>>,
    /// Digest of the network the affinities were probed on.
    pub network_digest: Option<String>,
}

/// Revealed comparative advantage of each row/column cell, logged. Values
/// below [`RCA_EPSILON`] are raised to it first; returns the scores and the
/// number of clamped cells.
pub fn rca_scores(q_raw: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, usize), OccupationError> {
    let cols = q_raw.first().map_or(0, Vec::len);
    if q_raw.is_empty() || cols < 2 {
        return Err(OccupationError::DegenerateMatrix(
            "need at least one agent and two communities".into(),
        ));
    }
    if q_raw.iter().any(|r| r.len() != cols) {
        return Err(OccupationError::DegenerateMatrix("ragged rows".into()));
    }
    if q_raw.iter().flatten().any(|v| !v.is_finite()) {
        return Err(OccupationError::DegenerateMatrix("non-finite affinity".into()));
    }
    let mut clamped = 0;
    let q: Vec<Vec<f64>> = q_raw
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    if v < RCA_EPSILON {
                        clamped += 1;
                        RCA_EPSILON
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let row_sums: Vec<f64> = q.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..cols).map(|c| q.iter().map(|r| r[c]).sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let r = q
        .iter()
        .zip(&row_sums)
        .map(|(row, rs)| {
            row.iter()
                .zip(&col_sums)
                .map(|(v, cs)| ((v / rs) / (cs / total)).ln())
                .collect()
        })
        .collect();
    Ok((r, clamped))
}

/// Probes every agent and forms the correlation matrix.
pub fn correlate(network: &OccupationNetwork, agents: &[AgentProfile]) -> Result<CorrelationMatrix, OccupationError> {
    let p = network.partition().ok_or(OccupationError::NoPartition)?;
    let q_raw = agents
        .iter()
        .map(|a| probe_agent(network, a))
        .collect::<Result<Vec<_>, _>>()?;
    let (r, clamped) = rca_scores(&q_raw)?;
    if clamped > 0 {
        log::warn!("{clamped} non-positive affinities clamped to {RCA_EPSILON:e} before RCA");
    }
    Ok(CorrelationMatrix {
        agents: agents.iter().map(|a| a.agent_id.clone()).collect(),
        communities: p.labels.clone(),
        r,
        q_raw: Some(q_raw),
        network_digest: Some(network.digest()),
    })
}

impl CorrelationMatrix {
    /// CSV with an `agent_id` column followed by one column per community
    /// label; a leading `# network=<digest>` comment records provenance.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), OccupationError> {
        let io = |e: std::io::Error| OccupationError::Io(e.to_string());
        if let Some(d) = &self.network_digest {
            writeln!(w, "# network={d}").map_err(io)?;
        }
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| OccupationError::Io(e.to_string());
        out.write_record(std::iter::once("agent_id").chain(self.communities.iter().map(String::as_str)))
            .map_err(csv_err)?;
        for (agent, row) in self.agents.iter().zip(&self.r) {
            out.write_record(std::iter::once(agent.clone()).chain(row.iter().map(|v| v.to_string())))
                .map_err(csv_err)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self, OccupationError> {
        let bad = |m: String| OccupationError::Format {
            file: "rmatrix.csv".into(),
            message: m,
        };
        let mut text = String::new();
        r.read_to_string(&mut text)
            .map_err(|e| OccupationError::Io(e.to_string()))?;
        let network_digest = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# network="))
            .map(|d| d.trim().to_string());
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.get(0) != Some("agent_id") || header.len() < 3 {
            return Err(bad(
                "header must be agent_id followed by at least two communities".into()
            ));
        }
        let communities: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let (mut agents, mut rows) = (Vec::new(), Vec::new());
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            agents.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", i + 2))))
                .collect::<Result<Vec<f64>, _>>()?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("line {}: non-finite score", i + 2)));
            }
            rows.push(row);
        }
        Ok(Self {
            agents,
            communities,
            r: rows,
            q_raw: None,
            network_digest,
        })
    }

    fn row_index(&self) -> BTreeMap<&str, usize> {
        self.agents.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect()
    }
}

/// Scores and ordering produced by [`infer_occupation`].
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub scores: Vec<f64>,
    /// Community indices by descending score, ties by index.
    pub ranking: Vec<usize>,
    /// Ranked agents missing from the matrix.
    pub skipped: Vec<String>,
}

/// EWMA of the agents' score rows over a most-used-first ranking:
/// `ŷ_c = Σ_i α(1−α)^(i−1) R[a_i][c]`. Agents absent from the matrix are
/// skipped and do not take a rank position.
pub fn infer_occupation<S: AsRef<str>>(
    matrix: &CorrelationMatrix,
    ranked: &[S],
    alpha: f64,
) -> Result<Inference, OccupationError> {
    Profiler::new(matrix).infer(ranked, alpha)
}

/// [`infer_occupation`] for many users against one matrix, with the agent
/// lookup built once.
pub struct Profiler<'a> {
    matrix: &'a CorrelationMatrix,
    index: BTreeMap<&'a str, usize>,
}

impl<'a> Profiler<'a> {
    pub fn new(matrix: &'a CorrelationMatrix) -> Self {
        Self {
            matrix,
            index: matrix.row_index(),
        }
    }

    pub fn infer<S: AsRef<str>>(&self, ranked: &[S], alpha: f64) -> Result<Inference, OccupationError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(OccupationError::Config(format!("alpha {alpha} outside (0, 1)")));
        }
        if ranked.is_empty() {
            return Err(OccupationError::EmptyRanks);
        }
        let k = self.matrix.communities.len();
        let mut scores = vec![0.0; k];
        let mut weight = alpha;
        let mut skipped = Vec::new();
        for agent in ranked.iter().map(AsRef::as_ref) {
            let Some(&row) = self.index.get(agent) else {
                log::warn!("agent `{agent}` is not in the correlation matrix; skipped");
                skipped.push(agent.to_string());
                continue;
            };
            for (s, r) in scores.iter_mut().zip(&self.matrix.r[row]) {
                *s += weight * r;
            }
            weight *= 1.0 - alpha;
        }
        let mut ranking: Vec<usize> = (0..k).collect();
        ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(Inference {
            scores,
            ranking,
            skipped,
        })
    }
}

/// Whether `truth` is among the first `k` entries of `ranking`.
pub fn topk_hit(ranking: &[usize], truth: usize, k: usize) -> bool {
    ranking.iter().take(k).any(|&c| c == truth)
}
