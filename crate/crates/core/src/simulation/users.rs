use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimulationError;
use crate::occupation::CorrelationMatrix;

/// Inputs for one synthetic user.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualUserSpec {
    pub true_community: usize,
    /// Selection weight per agent (aligned with the agent list).
    pub affinity: Vec<f64>,
    pub list_length: usize,
    pub seed: u64,
}

/// A user's most-used-first agent list with its planted community.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualUser {
    pub user_id: String,
    pub true_community: String,
    pub ranked_agents: Vec<String>,
}

/// Draws `list_length` distinct agents, each pick proportional to the
/// remaining weights, then orders them by weight (random tie-break).
pub fn gen_user(spec: &VirtualUserSpec, agents: &[String]) -> Result<Vec<String>, SimulationError> {
    if spec.affinity.len() != agents.len() {
        return Err(SimulationError::Config(
            "one affinity weight per agent is required".into(),
        ));
    }
    if spec.affinity.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(SimulationError::Config(
            "affinity weights must be finite and non-negative".into(),
        ));
    }
    if spec.list_length == 0 {
        return Err(SimulationError::Config("list length must be at least 1".into()));
    }
    let support = spec.affinity.iter().filter(|w| **w > 0.0).count();
    if spec.list_length > support {
        return Err(SimulationError::InsufficientAgents {
            requested: spec.list_length,
            support,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut weights = spec.affinity.clone();
    let mut picked: Vec<(usize, f64)> = Vec::with_capacity(spec.list_length);
    for _ in 0..spec.list_length {
        let total: f64 = weights.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut choice = None;
        for (i, w) in weights.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            choice = Some(i);
            if target < *w {
                break;
            }
            target -= w;
        }
        let i = choice.expect("positive support remains");
        picked.push((i, rng.random()));
        weights[i] = 0.0;
    }
    picked.sort_by(|a, b| {
        spec.affinity[b.0]
            .total_cmp(&spec.affinity[a.0])
            .then(a.1.total_cmp(&b.1))
    });
    Ok(picked.into_iter().map(|(i, _)| agents[i].clone()).collect())
}

/// Walks positions in order; with probability `p` swaps the current
/// position with a uniformly chosen different one.
pub fn perturb_ranks<T: Clone>(ranks: &[T], p: f64, seed: u64) -> Result<Vec<T>, SimulationError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SimulationError::Config(format!("swap probability {p} outside [0, 1]")));
    }
    let mut out = ranks.to_vec();
    let n = out.len();
    if n < 2 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        if rng.random_bool(p) {
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            out.swap(i, j);
        }
    }
    Ok(out)
}

/// Extends a most-used-first list to a ranking of every agent in `agents`:
/// the unused ones (tied at zero usage) follow in a seeded random order.
/// This is the full rank vector the swap noise acts on, so a swap can pull
/// an unused agent into a used position.
pub fn complete_ranking(ranked: &[String], agents: &[String], seed: u64) -> Vec<String> {
    let used: std::collections::HashSet<&str> = ranked.iter().map(String::as_str).collect();
    let mut tail: Vec<String> = agents.iter().filter(|a| !used.contains(a.as_str())).cloned().collect();
    tail.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = ranked.to_vec();
    out.extend(tail);
    out
}

/// Selection weights for users of community `c`: the positive part of the
/// agents' scores in that column.
pub fn community_affinity(matrix: &CorrelationMatrix, c: usize) -> Vec<f64> {
    matrix.r.iter().map(|row| row[c].max(0.0)).collect()
}

/// `count` users with communities drawn uniformly among those that have at
/// least `list_length` positively associated agents.
pub fn simulate_users(
    matrix: &CorrelationMatrix,
    count: usize,
    list_length: usize,
    seed: u64,
) -> Result<Vec<VirtualUser>, SimulationError> {
    let eligible: Vec<usize> = (0..matrix.communities.len())
        .filter(|&c| community_affinity(matrix, c).iter().filter(|w| **w > 0.0).count() >= list_length)
        .collect();
    if eligible.len() < matrix.communities.len() {
        log::warn!(
            "{} communities have fewer than {list_length} positively associated agents and get no users",
            matrix.communities.len() - eligible.len()
        );
    }
    if eligible.is_empty() {
        let support = (0..matrix.communities.len())
            .map(|c| community_affinity(matrix, c).iter().filter(|w| **w > 0.0).count())
            .max()
            .unwrap_or(0);
        return Err(SimulationError::InsufficientAgents {
            requested: list_length,
            support,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|u| {
            let c = eligible[rng.random_range(0..eligible.len())];
            let spec = VirtualUserSpec {
                true_community: c,
                affinity: community_affinity(matrix, c),
                list_length,
                seed: rng.random(),
            };
            Ok(VirtualUser {
                user_id: format!("user-{u:05}"),
                true_community: matrix.communities[c].clone(),
                ranked_agents: gen_user(&spec, &matrix.agents)?,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct UserRow {
    user_id: String,
    #[serde(default)]
    true_community: Option<String>,
    ranked_agents: String,
}

/// `user_id,true_community,ranked_agents` with agents joined by `;`.
pub fn write_users_csv<W: Write>(users: &[VirtualUser], w: W) -> Result<(), SimulationError> {
    let mut out = csv::Writer::from_writer(w);
    for u in users {
        out.serialize(UserRow {
            user_id: u.user_id.clone(),
            true_community: Some(u.true_community.clone()),
            ranked_agents: u.ranked_agents.join(";"),
        })
        .map_err(|e| SimulationError::Io(e.to_string()))?;
    }
    out.flush().map_err(|e| SimulationError::Io(e.to_string()))
}

/// `(user_id, true_community, ranked_agents)` as read from a users file.
pub type UserRanks = (String, Option<String>, Vec<String>);

/// Reads rank lists; the community column may be empty when unknown.
pub fn read_users_csv<R: Read>(r: R) -> Result<Vec<UserRanks>, SimulationError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    reader
        .deserialize::<UserRow>()
        .map(|row| {
            let row = row.map_err(|e| {
                if e.is_io_error() {
                    SimulationError::Io(e.to_string())
                } else {
                    SimulationError::Config(format!("rank list: {e}"))
                }
            })?;
            let agents = row
                .ranked_agents
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            Ok((row.user_id, row.true_community.filter(|c| !c.is_empty()), agents))
        })
        .collect()
}
