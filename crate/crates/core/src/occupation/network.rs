use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::taxonomy::{AgentProfile, Taxonomy};
use super::OccupationError;

/// Sørensen–Dice similarity `2|A∩B| / (|A|+|B|)`; two empty sets give 0.
pub fn sorensen<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let common = a.intersection(b).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

/// Same as [`sorensen`] on sorted, deduplicated index lists.
pub(crate) fn sorensen_sorted(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

/// Dense symmetric weighted graph. Strengths include the diagonal once.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    weights: Vec<f64>,
    strengths: Vec<f64>,
    total: f64,
}

impl WeightedGraph {
    /// `weights` is row-major `n × n` and must be symmetric and non-negative.
    pub fn from_dense(n: usize, weights: Vec<f64>) -> Result<Self, OccupationError> {
        if weights.len() != n * n {
            return Err(OccupationError::Config(format!(
                "expected {} weights, got {}",
                n * n,
                weights.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let w = weights[i * n + j];
                if !(w >= 0.0 && w.is_finite()) || w != weights[j * n + i] {
                    return Err(OccupationError::Config(format!(
                        "weight ({i}, {j}) is negative, non-finite or asymmetric"
                    )));
                }
            }
        }
        let strengths: Vec<f64> = weights
            .chunks_exact(n.max(1))
            .take(n)
            .map(|row| row.iter().sum())
            .collect();
        let total = strengths.iter().sum::<f64>() / 2.0;
        Ok(Self {
            n,
            weights,
            strengths,
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    pub fn strengths(&self) -> &[f64] {
        &self.strengths
    }

    /// `m`, half the sum of all weights.
    pub fn total_weight(&self) -> f64 {
        self.total
    }

    /// Newman modularity of `assignment` (community index per node).
    pub fn modularity(&self, assignment: &[usize]) -> Result<f64, OccupationError> {
        self.modularity_with_resolution(assignment, 1.0)
    }

    pub(crate) fn modularity_with_resolution(
        &self,
        assignment: &[usize],
        resolution: f64,
    ) -> Result<f64, OccupationError> {
        if assignment.len() != self.n {
            return Err(OccupationError::Config(format!(
                "partition covers {} of {} nodes",
                assignment.len(),
                self.n
            )));
        }
        if self.total <= 0.0 {
            return Err(OccupationError::DegenerateNetwork);
        }
        let k = assignment.iter().max().map_or(0, |m| m + 1);
        let mut inside = vec![0.0; k];
        let mut strength = vec![0.0; k];
        for i in 0..self.n {
            let c = assignment[i];
            let row = self.row(i);
            let mut within = 0.0;
            for j in 0..self.n {
                if assignment[j] == c {
                    within += row[j];
                }
            }
            inside[c] += within;
            strength[c] += self.strengths[i];
        }
        let two_m = 2.0 * self.total;
        Ok(inside
            .iter()
            .zip(&strength)
            .map(|(a, s)| a / two_m - resolution * (s / two_m) * (s / two_m))
            .sum())
    }
}

/// Community assignment of the network nodes with display labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Community index per node.
    pub assignment: Vec<usize>,
    /// External community id per index.
    pub ids: Vec<String>,
    pub labels: Vec<String>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn members(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == k)
            .map(|(i, _)| i)
    }
}

/// Occupation graph weighted by DWA-profile similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationNetwork {
    codes: Vec<String>,
    titles: Vec<String>,
    dwas: Vec<String>,
    profiles: Vec<Vec<u32>>,
    graph: WeightedGraph,
    partition: Option<Partition>,
}

pub const NETWORK_FORMAT_VERSION: u8 = 1;
const NETWORK_MAGIC: &[u8; 4] = b"APNW";

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    codes: Vec<String>,
    titles: Vec<String>,
    dwas: Vec<String>,
    profiles: Vec<Vec<u32>>,
    partition: Option<Partition>,
}

/// A row of `partition.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub occupation_code: String,
    pub community_id: String,
    pub community_label: String,
}

impl OccupationNetwork {
    /// Builds the similarity graph with nodes ordered by occupation code.
    pub fn build(taxonomy: &Taxonomy) -> Result<Self, OccupationError> {
        let occs = taxonomy.occupations();
        if occs.len() < 2 {
            return Err(OccupationError::Config(
                "a network needs at least two occupations".into(),
            ));
        }
        let dwas: Vec<String> = taxonomy.dwas().iter().cloned().collect();
        let mut profiles = Vec::with_capacity(occs.len());
        for o in occs {
            let profile = taxonomy.dwa_profile(&o.code)?;
            profiles.push(profile.iter().map(|d| dwas.binary_search(d).unwrap() as u32).collect());
        }
        let net = Self::from_parts(
            occs.iter().map(|o| o.code.clone()).collect(),
            occs.iter().map(|o| o.title.clone()).collect(),
            dwas,
            profiles,
            None,
        )?;
        if net.graph.total <= 0.0 {
            log::warn!("occupation network has no edges: all DWA profiles are pairwise disjoint");
        }
        Ok(net)
    }

    fn from_parts(
        codes: Vec<String>,
        titles: Vec<String>,
        dwas: Vec<String>,
        profiles: Vec<Vec<u32>>,
        partition: Option<Partition>,
    ) -> Result<Self, OccupationError> {
        let n = codes.len();
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let w = sorensen_sorted(&profiles[i], &profiles[j]);
                weights[i * n + j] = w;
                weights[j * n + i] = w;
            }
        }
        let graph = WeightedGraph::from_dense(n, weights)?;
        let mut net = Self {
            codes,
            titles,
            dwas,
            profiles,
            graph,
            partition: None,
        };
        if let Some(p) = partition {
            net.install(p)?;
        }
        Ok(net)
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn titles(&self) -> &[String] {
        &self.titles
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn partition(&self) -> Option<&Partition> {
        self.partition.as_ref()
    }

    /// Number of communities, 0 before a partition is installed.
    pub fn community_count(&self) -> usize {
        self.partition.as_ref().map_or(0, Partition::len)
    }

    pub fn dwa_universe(&self) -> &[String] {
        &self.dwas
    }

    pub(crate) fn profile(&self, node: usize) -> &[u32] {
        &self.profiles[node]
    }

    /// Maps an agent's DWAs onto sorted universe indices.
    pub(crate) fn agent_indices(&self, agent: &AgentProfile) -> Result<Vec<u32>, OccupationError> {
        agent
            .dwas
            .iter()
            .map(|d| {
                self.dwas
                    .binary_search(d)
                    .map(|i| i as u32)
                    .map_err(|_| OccupationError::UnknownDwa {
                        agent: agent.agent_id.clone(),
                        dwa: d.clone(),
                    })
            })
            .collect()
    }

    pub(crate) fn install(&mut self, p: Partition) -> Result<(), OccupationError> {
        let k = p.ids.len();
        if p.assignment.len() != self.codes.len() || p.labels.len() != k || p.assignment.iter().any(|&c| c >= k) {
            return Err(OccupationError::Config("partition does not match the network".into()));
        }
        self.partition = Some(p);
        Ok(())
    }

    /// Installs an externally supplied partition verbatim. Every occupation
    /// must appear exactly once; community indices follow the ids in numeric
    /// order when all ids are integers, lexicographic order otherwise.
    pub fn set_partition(&mut self, rows: &[PartitionRow]) -> Result<(), OccupationError> {
        let mut label_of: BTreeMap<&str, &str> = BTreeMap::new();
        let mut of_code: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            if self.codes.binary_search(&r.occupation_code).is_err() {
                return Err(OccupationError::DanglingReference {
                    file: "partition.csv".into(),
                    line: i + 2,
                    id: r.occupation_code.clone(),
                });
            }
            if of_code.insert(&r.occupation_code, &r.community_id).is_some() {
                return Err(OccupationError::DuplicateCode(r.occupation_code.clone()));
            }
            if let Some(prev) = label_of.insert(&r.community_id, &r.community_label) {
                if prev != r.community_label {
                    return Err(OccupationError::Config(format!(
                        "community {} has labels `{prev}` and `{}`",
                        r.community_id, r.community_label
                    )));
                }
            }
        }
        if let Some(missing) = self.codes.iter().find(|c| !of_code.contains_key(c.as_str())) {
            return Err(OccupationError::Config(format!("partition omits occupation {missing}")));
        }
        let mut ids: Vec<&str> = label_of.keys().copied().collect();
        if ids.iter().all(|s| s.parse::<i64>().is_ok()) {
            ids.sort_by_key(|s| s.parse::<i64>().unwrap());
        }
        let assignment = self
            .codes
            .iter()
            .map(|c| ids.iter().position(|id| *id == of_code[c.as_str()]).unwrap())
            .collect();
        let p = Partition {
            assignment,
            labels: ids.iter().map(|id| label_of[id].to_string()).collect(),
            ids: ids.into_iter().map(String::from).collect(),
        };
        self.install(p)
    }

    /// Modularity of the installed partition.
    pub fn modularity(&self) -> Result<f64, OccupationError> {
        let p = self.partition.as_ref().ok_or(OccupationError::NoPartition)?;
        self.graph.modularity(&p.assignment)
    }

    pub fn partition_rows(&self) -> Vec<PartitionRow> {
        let Some(p) = &self.partition else { return Vec::new() };
        self.codes
            .iter()
            .zip(&p.assignment)
            .map(|(code, &k)| PartitionRow {
                occupation_code: code.clone(),
                community_id: p.ids[k].clone(),
                community_label: p.labels[k].clone(),
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = NetworkFile {
            codes: self.codes.clone(),
            titles: self.titles.clone(),
            dwas: self.dwas.clone(),
            profiles: self.profiles.clone(),
            partition: self.partition.clone(),
        };
        let mut out = NETWORK_MAGIC.to_vec();
        out.push(NETWORK_FORMAT_VERSION);
        out.extend(serde_json::to_vec(&body).expect("network serializes"));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, OccupationError> {
        let bad = |m: String| OccupationError::Format {
            file: "network".into(),
            message: m,
        };
        if bytes.len() < 5 || &bytes[..4] != NETWORK_MAGIC {
            return Err(bad("missing APNW magic".into()));
        }
        if bytes[4] != NETWORK_FORMAT_VERSION {
            return Err(bad(format!("unsupported version {}", bytes[4])));
        }
        let f: NetworkFile = serde_json::from_slice(&bytes[5..]).map_err(|e| bad(e.to_string()))?;
        let n = f.codes.len();
        if f.titles.len() != n || f.profiles.len() != n {
            return Err(bad("node arrays disagree in length".into()));
        }
        if f.profiles.iter().flatten().any(|&d| d as usize >= f.dwas.len())
            || f.profiles.iter().any(|p| p.windows(2).any(|w| w[0] >= w[1]))
        {
            return Err(bad("profile indices out of range or unsorted".into()));
        }
        Self::from_parts(f.codes, f.titles, f.dwas, f.profiles, f.partition)
    }

    /// First 8 bytes of the SHA-256 of the serialized network, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(&Sha256::digest(self.to_bytes())[..8])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OccupationError> {
        fs::write(path.as_ref(), self.to_bytes())
            .map_err(|e| OccupationError::Io(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OccupationError> {
        let bytes =
            fs::read(path.as_ref()).map_err(|e| OccupationError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_bytes(&bytes)
    }
}

pub fn read_partition_csv<R: Read>(r: R) -> Result<Vec<PartitionRow>, OccupationError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    reader
        .deserialize()
        .map(|row| {
            row.map_err(|e| OccupationError::Format {
                file: "partition.csv".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_partition_csv<W: std::io::Write>(rows: &[PartitionRow], w: W) -> Result<(), OccupationError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| OccupationError::Io(e.to_string()))?;
    }
    out.flush().map_err(|e| OccupationError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occupation::taxonomy::tests::toy;

    fn set(items: &[u32]) -> BTreeSet<u32> {
        items.iter().copied().collect()
    }

    #[test]
    fn sorensen_examples() {
        assert_eq!(sorensen(&set(&[1, 2]), &set(&[1, 2])), 1.0);
        assert_eq!(sorensen(&set(&[1, 2]), &set(&[3])), 0.0);
        assert_eq!(sorensen(&set(&[]), &set(&[])), 0.0);
        assert!((sorensen(&set(&[1, 2, 3]), &set(&[2, 3, 4, 5])) - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(sorensen_sorted(&[1, 2, 3], &[2, 3, 4, 5]), 4.0 / 7.0);
    }

    #[test]
    fn identical_profiles_give_unit_edge() {
        let occ = "code,title\nA,a\nB,b\n";
        let tasks = "task_id,occupation_code\nt1,A\nt2,B\n";
        let links = "task_id,dwa_id\nt1,x\nt1,y\nt2,y\nt2,x\n";
        let t = Taxonomy::from_readers(occ.as_bytes(), tasks.as_bytes(), links.as_bytes(), None).unwrap();
        let net = OccupationNetwork::build(&t).unwrap();
        assert_eq!(net.graph().weight(0, 1), 1.0);
        assert_eq!(net.graph().total_weight(), 1.0);
    }

    #[test]
    fn disjoint_profiles_are_degenerate() {
        let occ = "code,title\nA,a\nB,b\n";
        let tasks = "task_id,occupation_code\nt1,A\nt2,B\n";
        let links = "task_id,dwa_id\nt1,x\nt2,y\n";
        let t = Taxonomy::from_readers(occ.as_bytes(), tasks.as_bytes(), links.as_bytes(), None).unwrap();
        let net = OccupationNetwork::build(&t).unwrap();
        assert_eq!(net.graph().total_weight(), 0.0);
        assert!(matches!(
            net.graph().modularity(&[0, 1]),
            Err(OccupationError::DegenerateNetwork)
        ));
    }

    #[test]
    fn four_node_weights_match_hand_computation() {
        // A {d1,d2,d3}, B {d4}, C {d3,d5,d6}, D {d1,d4}
        let occ = "code,title\nA,a\nB,b\nC,c\nD,d\n";
        let tasks = "task_id,occupation_code\nt1,A\nt2,B\nt3,C\nt4,D\n";
        let links = "task_id,dwa_id\nt1,d1\nt1,d2\nt1,d3\nt2,d4\nt3,d3\nt3,d5\nt3,d6\nt4,d1\nt4,d4\n";
        let t = Taxonomy::from_readers(occ.as_bytes(), tasks.as_bytes(), links.as_bytes(), None).unwrap();
        let g = OccupationNetwork::build(&t).unwrap();
        let g = g.graph();
        let expect = [
            (0, 1, 0.0),
            (0, 2, 2.0 / 6.0),
            (0, 3, 2.0 / 5.0),
            (1, 2, 0.0),
            (1, 3, 2.0 / 3.0),
            (2, 3, 0.0),
        ];
        for (i, j, w) in expect {
            assert!((g.weight(i, j) - w).abs() < 1e-15, "({i},{j})");
            assert_eq!(g.weight(i, j), g.weight(j, i));
        }
        assert!((g.total_weight() - (2.0 / 6.0 + 2.0 / 5.0 + 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn modularity_examples() {
        let g = WeightedGraph::from_dense(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(g.modularity(&[0, 1]).unwrap(), -0.5);
        assert_eq!(g.modularity(&[0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn partition_install_and_file_round_trip() {
        let mut net = OccupationNetwork::build(&toy()).unwrap();
        let rows = read_partition_csv(
            "occupation_code,community_id,community_label\nA,10,Finance\nB,2,Food\nC,10,Finance\n".as_bytes(),
        )
        .unwrap();
        net.set_partition(&rows).unwrap();
        let p = net.partition().unwrap();
        assert_eq!(p.ids, ["2", "10"]);
        assert_eq!(p.assignment, [1, 0, 1]);
        assert_eq!(net.community_count(), 2);
        let back = OccupationNetwork::from_bytes(&net.to_bytes()).unwrap();
        assert_eq!(back, net);
        let mut csv = Vec::new();
        write_partition_csv(&net.partition_rows(), &mut csv).unwrap();
        assert_eq!(read_partition_csv(csv.as_slice()).unwrap().len(), 3);
    }

    #[test]
    fn partial_partition_is_rejected() {
        let mut net = OccupationNetwork::build(&toy()).unwrap();
        let rows = vec![PartitionRow {
            occupation_code: "A".into(),
            community_id: "0".into(),
            community_label: "x".into(),
        }];
        assert!(net.set_partition(&rows).is_err());
        assert!(net.partition().is_none());
    }
}
