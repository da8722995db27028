//! Independent oracles and fixtures shared by the property and acceptance
//! suites. Nothing here calls the code paths it is used to check.
#![allow(dead_code)]

use std::collections::BTreeSet;

use agentprint::features::{MtamConfig, WindowMode};
use agentprint::occupation::{AgentProfile, OccupationNetwork, PartitionRow, Taxonomy};
use agentprint::trace::{Direction, FlowScope, Packet, Trace};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-packet binning: each packet walks the windows left to right and
/// lands in the first one whose right edge `(j+1)·width` lies beyond it.
/// Returns the `4 × W` cells and the count of packets past the covered span.
pub fn bin_oracle(trace: &Trace, cfg: &MtamConfig) -> (Vec<f64>, usize) {
    let w = cfg.windows;
    let mut cells = vec![0.0; 4 * w];
    let mut dropped = 0;
    let duration = trace.packets().last().map_or(0.0, |p| p.t);
    let width = match cfg.mode {
        WindowMode::Uniform => duration / w as f64,
        WindowMode::FixedGap => cfg.gap,
    };
    for p in trace.packets() {
        if cfg.mode == WindowMode::FixedGap && p.t >= w as f64 * cfg.gap {
            dropped += 1;
            continue;
        }
        let window = if width == 0.0 {
            0
        } else {
            (0..w - 1).find(|&j| p.t < (j + 1) as f64 * width).unwrap_or(w - 1)
        };
        let (n, b) = match p.dir {
            Direction::In => (0, 2),
            Direction::Out => (1, 3),
        };
        cells[n * w + window] += 1.0;
        cells[b * w + window] += p.size as f64;
    }
    for (row, cell) in cells.iter_mut().enumerate().map(|(i, c)| (i / w, c)) {
        let clip = if row < 2 { cfg.clip_counts } else { cfg.clip_bytes };
        if let Some(c) = clip {
            *cell = cell.min(c);
        }
    }
    (cells, dropped)
}

/// A re-based trace of `n` packets whose gaps mix zeros, exact multiples of
/// `quantum` (so packets sit on window edges) and arbitrary reals.
pub fn random_trace(rng: &mut impl Rng, id: &str, n: usize, quantum: f64) -> Trace {
    let mut t = 0.0;
    let mut packets = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            t += match rng.random_range(0..4) {
                0 => 0.0,
                1 => quantum * rng.random_range(1..4) as f64,
                _ => rng.random::<f64>() * 3.0 * quantum,
            };
        }
        let dir = if rng.random_bool(0.5) {
            Direction::In
        } else {
            Direction::Out
        };
        packets.push(Packet::new(t, dir, rng.random_range(1..3000)));
    }
    Trace::new(id, packets, FlowScope::Primary, Some("x:Y".into())).expect("valid by construction")
}

pub fn random_mtam_config(rng: &mut impl Rng) -> MtamConfig {
    let windows = rng.random_range(1..=64);
    let mut cfg = if rng.random_bool(0.5) {
        MtamConfig::uniform(windows)
    } else {
        MtamConfig::fixed_gap(windows, [0.01, 0.05, 0.1, 0.25, 1.0][rng.random_range(0..5)])
    };
    if rng.random_bool(0.2) {
        cfg.clip_counts = Some(rng.random_range(1..5) as f64);
    }
    if rng.random_bool(0.2) {
        cfg.clip_bytes = Some(rng.random_range(100..3000) as f64);
    }
    cfg
}

/// `Q = (1/2m) Σ_ij [A_ij − k_i k_j / 2m] δ(c_i, c_j)` summed pair by pair.
pub fn modularity_oracle(n: usize, w: &[f64], assign: &[usize]) -> f64 {
    let k: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w[i * n + j]).sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if assign[i] == assign[j] {
                q += w[i * n + j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Symmetric weights with zero diagonal and roughly `density` of pairs set.
pub fn random_weights(rng: &mut impl Rng, n: usize, density: f64) -> Vec<f64> {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                let v = rng.random::<f64>() + 0.01;
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
    }
    // Keep the graph non-empty.
    if n >= 2 && w.iter().all(|v| *v == 0.0) {
        w[1] = 0.5;
        w[n] = 0.5;
    }
    w
}

pub fn sorensen_oracle(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    2.0 * a.intersection(b).count() as f64 / (a.len() + b.len()) as f64
}

/// `ln[(Q_ac / Σ_c Q_ac) / (Σ_a Q_ac / Σ_ac Q_ac)]`, cell by cell.
pub fn rca_oracle(q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: f64 = q.iter().flatten().sum();
    q.iter()
        .map(|row| {
            let rs: f64 = row.iter().sum();
            (0..row.len())
                .map(|c| {
                    let cs: f64 = q.iter().map(|r| r[c]).sum();
                    ((row[c] / rs) / (cs / total)).ln()
                })
                .collect()
        })
        .collect()
}

/// Taxonomy CSVs for the given occupation DWA sets (codes `O000`, …).
pub fn taxonomy_of(profiles: &[BTreeSet<String>]) -> Taxonomy {
    let mut occ = String::from("code,title,exposure\n");
    let mut tasks = String::from("task_id,occupation_code\n");
    let mut links = String::from("task_id,dwa_id\n");
    for (i, dwas) in profiles.iter().enumerate() {
        occ.push_str(&format!("O{i:03},Occupation {i},\n"));
        tasks.push_str(&format!("t{i},O{i:03}\n"));
        for d in dwas {
            links.push_str(&format!("t{i},{d}\n"));
        }
    }
    Taxonomy::from_readers(occ.as_bytes(), tasks.as_bytes(), links.as_bytes(), None::<&[u8]>).expect("fixture")
}

pub fn random_dwa_set(rng: &mut impl Rng, universe: usize, max: usize) -> BTreeSet<String> {
    let n = rng.random_range(1..=max.min(universe));
    let mut all: Vec<usize> = (0..universe).collect();
    all.shuffle(rng);
    all[..n].iter().map(|d| format!("d{d:03}")).collect()
}

pub fn partition_rows(assign: &[usize]) -> Vec<PartitionRow> {
    assign
        .iter()
        .enumerate()
        .map(|(i, c)| PartitionRow {
            occupation_code: format!("O{i:03}"),
            community_id: c.to_string(),
            community_label: format!("community {c}"),
        })
        .collect()
}

/// Planted structure: `k` communities of `per_community` occupations each,
/// every community drawing DWAs from its own pool of `pool` activities plus
/// an occasional foreign one; `agents_per` agents per community draw from
/// their home pool with probability `purity`, otherwise from a random one.
/// Returns the network (planted partition installed), the agents and each
/// agent's home community.
pub struct Planted {
    pub network: OccupationNetwork,
    pub agents: Vec<AgentProfile>,
    pub home: Vec<usize>,
}

pub fn planted(k: usize, per_community: usize, agents_per: usize, pool: usize, purity: f64, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, c: usize, size: usize, purity: f64| -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        while s.len() < size {
            let home = if rng.random_bool(purity) {
                c
            } else {
                rng.random_range(0..k)
            };
            s.insert(format!("c{home:02}d{:02}", rng.random_range(0..pool)));
        }
        s
    };
    let mut profiles = Vec::new();
    let mut assign = Vec::new();
    for c in 0..k {
        for _ in 0..per_community {
            let size = rng.random_range(4..=8);
            profiles.push(draw(&mut rng, c, size, 0.9));
            assign.push(c);
        }
    }
    let mut network = OccupationNetwork::build(&taxonomy_of(&profiles)).expect("planted network");
    network
        .set_partition(&partition_rows(&assign))
        .expect("planted partition");

    // Agents may only use activities that occur in the taxonomy.
    let universe: BTreeSet<String> = network.dwa_universe().iter().cloned().collect();
    let mut agents = Vec::new();
    let mut home = Vec::new();
    for c in 0..k {
        for a in 0..agents_per {
            let size = rng.random_range(4..=8);
            let dwas: BTreeSet<String> = draw(&mut rng, c, size, purity)
                .intersection(&universe)
                .cloned()
                .collect();
            agents.push(AgentProfile {
                agent_id: format!("agent-{c:02}-{a}"),
                dwas,
            });
            home.push(c);
        }
    }
    Planted { network, agents, home }
}

/// Little-endian microsecond pcap with one Ethernet/IPv4/TCP segment per
/// `(seconds, micros, outbound, payload)` between 10.0.0.2:40000 and
/// 93.184.0.9:443.
pub fn tcp_capture(packets: &[(u32, u32, bool, usize)]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&0xa1b2_c3d4u32.to_le_bytes());
    b.extend_from_slice(&[2, 0, 4, 0]);
    b.extend_from_slice(&[0; 8]);
    b.extend_from_slice(&65535u32.to_le_bytes());
    b.extend_from_slice(&1u32.to_le_bytes());
    for &(sec, usec, out, payload) in packets {
        let len = (14 + 20 + 20 + payload) as u32;
        b.extend_from_slice(&sec.to_le_bytes());
        b.extend_from_slice(&usec.to_le_bytes());
        b.extend_from_slice(&len.to_le_bytes());
        b.extend_from_slice(&len.to_le_bytes());
        b.extend_from_slice(&[0xaa; 12]);
        b.extend_from_slice(&[0x08, 0x00]);
        b.extend_from_slice(&[0x45, 0]);
        b.extend_from_slice(&((20 + 20 + payload) as u16).to_be_bytes());
        b.extend_from_slice(&[0, 1, 0x40, 0, 64, 6, 0, 0]);
        let (src, dst, sp, dp) = if out {
            ([10, 0, 0, 2], [93, 184, 0, 9], 40000u16, 443u16)
        } else {
            ([93, 184, 0, 9], [10, 0, 0, 2], 443, 40000)
        };
        b.extend_from_slice(&src);
        b.extend_from_slice(&dst);
        b.extend_from_slice(&sp.to_be_bytes());
        b.extend_from_slice(&dp.to_be_bytes());
        b.extend_from_slice(&[0; 8]);
        b.extend_from_slice(&[0x50, 0x18, 0xff, 0xff, 0, 0, 0, 0]);
        b.extend(std::iter::repeat_n(0x17, payload));
    }
    b
}
