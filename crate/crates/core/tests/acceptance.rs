//! Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned
//! below. Exits non-zero if any criterion fails.

mod common;

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use agentprint::classifier::{
    gradient_check, read_model, train_split, write_model, ArchConfig, Model, TrainConfig, UNMONITORED,
};
use agentprint::evaluation::{compute_metrics, kfold_evaluate, split_dataset, EvalConfig, LabelKind, SplitRatios};
use agentprint::features::{extract_mtam, Dataset, MtamConfig, Normalization, WindowMode};
use agentprint::occupation::{
    correlate, infer_occupation, probe_agent, rca_scores, topk_hit, AgentProfile, CorrelationMatrix, OccupationNetwork,
    Profiler, WeightedGraph, DEFAULT_ALPHA,
};
use agentprint::simulation::{complete_ranking, perturb_ranks, simulate_users, ArchetypeLibrary};
use agentprint::trace::{
    assemble_traces, parse_pcap, parse_prefix, read_traces_from, write_traces_to, Direction, FlowKey, FlowScope,
    IngestConfig, Transport,
};
use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MTAM_TRACES: usize = 1000;
const MTAM_MAX_PACKETS: usize = 500;
const MTAM_BUDGET: Duration = Duration::from_secs(10);

const GRADCHECK_WINDOWS: usize = 16;
const GRADCHECK_MAX_REL: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(30);

const BEHAVIOR_PER_CLASS: usize = 200;
const BEHAVIOR_WINDOWS: usize = 1800;
const BEHAVIOR_MIN_F1: f64 = 0.90;
const BEHAVIOR_BUDGET: Duration = Duration::from_secs(300);

const GRAPHS: usize = 500;
const GRAPH_MAX_NODES: usize = 20;
const MODULARITY_TOL: f64 = 1e-9;
const PROBE_TRIPLES: usize = 200;
const PROBE_TOL: f64 = 1e-9;

const RCA_TOL: f64 = 1e-12;
const EWMA_TOL: f64 = 1e-12;

const COMMUNITIES: usize = 12;
const OCCUPATIONS_PER_COMMUNITY: usize = 6;
const AGENTS_PER_COMMUNITY: usize = 5;
const USERS: usize = 1200;
const LIST_LENGTH: usize = 5;
/// Share of an agent's activities drawn from its home community's pool.
const AGENT_PURITY: f64 = 0.9;
const MIN_TOP1: f64 = 0.8;
const MIN_TOP3: f64 = 0.95;
/// Identification error of the agent classifier, `1 − 0.866`.
const NOISE_P: f64 = 0.134;
const MAX_TOP3_DROP: f64 = 0.15;
const NOISE_SEEDS: u64 = 1000;
const NOISE_GRID: [f64; 11] = [0.0, NOISE_P, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

const NULL_PER_CLASS: usize = 40;
const NULL_WINDOWS: usize = 32;
const NULL_SIGMAS: f64 = 3.0;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mtam_oracle_and_mass() -> (Outcome, Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cases: Vec<_> = (0..MTAM_TRACES)
        .map(|i| {
            let n = rng.random_range(1..=MTAM_MAX_PACKETS);
            let trace = random_trace(&mut rng, &format!("t{i}"), n, 0.05);
            (trace, random_mtam_config(&mut rng))
        })
        .collect();

    let start = Instant::now();
    let mut mismatched = 0;
    let mut unbalanced = 0;
    let mut checked_mass = 0;
    let mut extracted = Vec::with_capacity(cases.len());
    for (trace, cfg) in &cases {
        let mtam = extract_mtam(trace, cfg).expect("valid config");
        let (cells, dropped) = bin_oracle(trace, cfg);
        if mtam.values() != cells.as_slice() || mtam.dropped() != dropped {
            mismatched += 1;
        }
        extracted.push(mtam);
    }
    let elapsed = start.elapsed();

    for ((trace, cfg), mtam) in cases.iter().zip(&extracted) {
        if cfg.clip_counts.is_some() || cfg.clip_bytes.is_some() {
            continue;
        }
        checked_mass += 1;
        let w = cfg.windows;
        let kept: Vec<_> = trace
            .packets()
            .iter()
            .filter(|p| cfg.mode == WindowMode::Uniform || p.t < cfg.max_duration())
            .collect();
        let count = |d: Direction| kept.iter().filter(|p| p.dir == d).count() as f64;
        let bytes = |d: Direction| kept.iter().filter(|p| p.dir == d).map(|p| p.size as f64).sum::<f64>();
        let row = |r: usize| mtam.values()[r * w..(r + 1) * w].iter().sum::<f64>();
        let dropped = trace.len() - kept.len();
        if row(0) != count(Direction::In)
            || row(1) != count(Direction::Out)
            || row(2) != bytes(Direction::In)
            || row(3) != bytes(Direction::Out)
            || mtam.dropped() != dropped
        {
            unbalanced += 1;
        }
    }

    (
        ensure(
            mismatched == 0 && elapsed < MTAM_BUDGET,
            format!(
                "{} traces, {mismatched} differ from the binning oracle, {:.2?} (budget {:?})",
                cases.len(),
                elapsed,
                MTAM_BUDGET
            ),
        ),
        ensure(
            unbalanced == 0 && checked_mass > 0,
            format!("{checked_mass} unclipped traces, {unbalanced} with totals != binned + dropped"),
        ),
    )
}

/// Checked on a briefly trained model: at initialization the zero biases and
/// identity batch-norm statistics leave ReLU inputs exactly at the kink,
/// where central differences measure half the slope whatever the step.
fn gradient() -> Outcome {
    let start = Instant::now();
    let traces = ArchetypeLibrary::builtin().generate(12, 11);
    let (ds, _) = Dataset::from_traces(&traces, &MtamConfig::uniform(GRADCHECK_WINDOWS), Normalization::Log1p)
        .map_err(|e| e.to_string())?;
    let labels = ds.labels();
    let all: Vec<usize> = (0..ds.len()).collect();
    let (x, y) = pick(&ds, &labels, &all);
    let model = Model::<f32>::build(ArchConfig::tiny(GRADCHECK_WINDOWS, ds.header.label_map.len()), 11)
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 3,
        patience: None,
        seed: 11,
        ..TrainConfig::default()
    };
    let (model, _) = train_split(model, (&x, &y), (&x, &y), &cfg).map_err(|e| e.to_string())?;
    let model: Model<f64> = model.cast();

    let chosen: Vec<usize> = all.iter().copied().step_by(7).collect();
    let inputs: Vec<Vec<f64>> = chosen
        .iter()
        .map(|&i| ds.samples[i].values.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let truth: Vec<usize> = chosen.iter().map(|&i| labels[i]).collect();
    let report = gradient_check(&model, &refs, &truth, 1e-5, 3).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(
        report.max_rel_error < GRADCHECK_MAX_REL && elapsed < GRADCHECK_BUDGET,
        format!(
            "W={GRADCHECK_WINDOWS}, {} weights over {} inputs, max relative error {:.3e} (< {GRADCHECK_MAX_REL:e}), {:.2?}",
            report.checked,
            refs.len(),
            report.max_rel_error,
            elapsed
        ),
    )
}

fn pick<'a>(ds: &'a Dataset, labels: &[usize], idx: &[usize]) -> (Vec<&'a [f32]>, Vec<usize>) {
    idx.iter()
        .map(|&i| (ds.samples[i].values.as_slice(), labels[i]))
        .unzip()
}

fn behavior_classification() -> Outcome {
    let start = Instant::now();
    let traces = ArchetypeLibrary::builtin().generate(BEHAVIOR_PER_CLASS, 1);
    let (ds, failures) = Dataset::from_traces(&traces, &MtamConfig::uniform(BEHAVIOR_WINDOWS), Normalization::None)
        .map_err(|e| e.to_string())?;
    if !failures.is_empty() {
        return Err(format!("{} traces failed extraction", failures.len()));
    }
    // One class per archetype, so the two that share a behavior must be told apart too.
    let labels = ds.labels();
    let names = ds.header.label_map.clone();
    let split = split_dataset(&labels, &names, SplitRatios::default(), 7).map_err(|e| e.to_string())?;
    let (tx, ty) = pick(&ds, &labels, &split.train);
    let (vx, vy) = pick(&ds, &labels, &split.val);
    let (sx, sy) = pick(&ds, &labels, &split.test);
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let model = Model::<f32>::build(ArchConfig::standard(BEHAVIOR_WINDOWS, names.len()), 7)
        .and_then(|m| m.with_label_map(names.clone()))
        .map_err(|e| e.to_string())?;
    let (model, history) = train_split(model, (&tx, &ty), (&vx, &vy), &cfg).map_err(|e| e.to_string())?;
    let probs: Vec<Vec<f64>> = model
        .probabilities(&sx)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|p| p.into_iter().map(f64::from).collect())
        .collect();
    let report = compute_metrics(&probs, &sy, &names).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(
        report.macro_f1 >= BEHAVIOR_MIN_F1 && elapsed < BEHAVIOR_BUDGET,
        format!(
            "{} classes x {BEHAVIOR_PER_CLASS}, W={BEHAVIOR_WINDOWS}, {} test traces, macro-F1 {:.4} (>= {BEHAVIOR_MIN_F1}), \
             {} epochs, {:.1?} (budget {:?})",
            names.len(),
            sy.len(),
            report.macro_f1,
            history.epochs.len(),
            elapsed,
            BEHAVIOR_BUDGET
        ),
    )
}

/// Tiny model trained on four archetypes, then swept over held-out traces
/// of all six; the two unseen archetypes are the unmonitored ones.
fn open_world() -> Outcome {
    let library = ArchetypeLibrary::builtin();
    let traces = library.generate(30, 5);
    let (ds, _) =
        Dataset::from_traces(&traces, &MtamConfig::uniform(64), Normalization::Log1p).map_err(|e| e.to_string())?;
    let ds = ds.relabel(|l| LabelKind::Behavior.apply(l));
    let names = ds.header.label_map.clone();
    let monitored: Vec<usize> = (0..4).collect();
    let labels = ds.labels();
    let (train_idx, probe_idx): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| monitored.contains(&labels[i]) && i % 3 != 0);
    let (tx, ty) = pick(&ds, &labels, &train_idx);
    let val: Vec<usize> = train_idx.iter().copied().step_by(4).collect();
    let (vx, vy) = pick(&ds, &labels, &val);
    let model = Model::<f32>::build(ArchConfig::tiny(64, monitored.len()), 5)
        .and_then(|m| m.with_label_map(names[..monitored.len()].to_vec()))
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 15,
        seed: 5,
        ..TrainConfig::default()
    };
    let (model, _) = train_split(model, (&tx, &ty), (&vx, &vy), &cfg).map_err(|e| e.to_string())?;
    let (px, _) = pick(&ds, &labels, &probe_idx);

    let mut last: Option<Vec<Option<usize>>> = None;
    let mut rates = Vec::new();
    let mut violations = 0;
    for step in 0..=100 {
        let t = step as f64 / 100.0;
        let preds = model.predict_inputs(&px, Some(t)).map_err(|e| e.to_string())?;
        if preds.iter().any(|p| p.class.is_none() != (p.label == UNMONITORED)) {
            return Err(format!(
                "threshold {t}: rejected predictions not labelled {UNMONITORED}"
            ));
        }
        let now: Vec<Option<usize>> = preds.iter().map(|p| p.class).collect();
        if let Some(prev) = &last {
            violations += prev
                .iter()
                .zip(&now)
                .filter(|(a, b)| (a.is_none() && b.is_some()) || (b.is_some() && a != b))
                .count();
        }
        rates.push(now.iter().filter(|c| c.is_none()).count() as f64 / now.len() as f64);
        last = Some(now);
    }
    let monotone = rates.windows(2).all(|w| w[1] >= w[0]);
    ensure(
        violations == 0 && monotone,
        format!(
            "{} probe traces, 101 thresholds: {violations} unmonitored->monitored flips, rejection {:.3} -> {:.3}",
            px.len(),
            rates[0],
            rates[100]
        ),
    )
}

fn modularity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut nonzero_single = 0;
    for _ in 0..GRAPHS {
        let n = rng.random_range(2..=GRAPH_MAX_NODES);
        let density = rng.random_range(0.05..0.9);
        let w = random_weights(&mut rng, n, density);
        let k = rng.random_range(1..=n);
        let assign: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let g = WeightedGraph::from_dense(n, w.clone()).map_err(|e| e.to_string())?;
        let q = g.modularity(&assign).map_err(|e| e.to_string())?;
        worst = worst.max((q - modularity_oracle(n, &w, &assign)).abs());
        if g.modularity(&vec![3; n]).map_err(|e| e.to_string())? != 0.0 {
            nonzero_single += 1;
        }
    }
    ensure(
        worst < MODULARITY_TOL && nonzero_single == 0,
        format!(
            "{GRAPHS} graphs (n <= {GRAPH_MAX_NODES}): max |Q - Q_oracle| {worst:.2e} (< {MODULARITY_TOL:e}); \
             {nonzero_single} single-community graphs with Q != 0"
        ),
    )
}

fn probe_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < PROBE_TRIPLES {
        let n = rng.random_range(3..=14);
        let profiles: Vec<_> = (0..n).map(|_| random_dwa_set(&mut rng, 14, 6)).collect();
        let mut net = OccupationNetwork::build(&taxonomy_of(&profiles)).map_err(|e| e.to_string())?;
        if net.graph().total_weight() == 0.0 {
            continue;
        }
        let k = rng.random_range(1..=n.min(5));
        let assign: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        net.set_partition(&partition_rows(&assign)).map_err(|e| e.to_string())?;
        let universe = net.dwa_universe().to_vec();
        let picks = rng.random_range(1..=universe.len().min(5));
        let dwas = (0..picks)
            .map(|_| universe[rng.random_range(0..universe.len())].clone())
            .collect();
        let agent = AgentProfile {
            agent_id: "probe".into(),
            dwas,
        };
        let gains = probe_agent(&net, &agent).map_err(|e| e.to_string())?;

        let n1 = n + 1;
        let mut w = vec![0.0; n1 * n1];
        for i in 0..n {
            for j in 0..n {
                w[i * n1 + j] = sorensen_oracle(&profiles[i], &profiles[j]) * f64::from(u8::from(i != j));
            }
            let a = sorensen_oracle(&agent.dwas, &profiles[i]);
            w[i * n1 + n] = a;
            w[n * n1 + i] = a;
        }
        let aug = WeightedGraph::from_dense(n1, w).map_err(|e| e.to_string())?;
        let mut alone = assign.clone();
        alone.push(k);
        let q_alone = aug.modularity(&alone).map_err(|e| e.to_string())?;
        for (c, gain) in gains.iter().enumerate() {
            let mut joined = assign.clone();
            joined.push(c);
            let dq = aug.modularity(&joined).map_err(|e| e.to_string())? - q_alone;
            worst = worst.max((gain - dq).abs());
        }
        done += 1;
    }
    ensure(
        worst < PROBE_TOL,
        format!(
            "{PROBE_TRIPLES} (graph, partition, agent) triples: max |dQ - dQ_augmented| {worst:.2e} (< {PROBE_TOL:e})"
        ),
    )
}

/// Subtracts row and column means, leaving only the interaction part.
fn double_centered(r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k) = (r.len() as f64, r[0].len() as f64);
    let row_mean: Vec<f64> = r.iter().map(|row| row.iter().sum::<f64>() / k).collect();
    let col_mean: Vec<f64> = (0..r[0].len())
        .map(|c| r.iter().map(|row| row[c]).sum::<f64>() / n)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / n;
    r.iter()
        .zip(&row_mean)
        .map(|(row, rm)| row.iter().zip(&col_mean).map(|(v, cm)| v - rm - cm + grand).collect())
        .collect()
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn rca() -> Outcome {
    let run = |q: &[Vec<f64>]| rca_scores(q).map(|(r, _)| r).map_err(|e| e.to_string());
    let constant = run(&vec![vec![3.5; 5]; 4])?;
    let constant_ok = constant.iter().flatten().all(|v| *v == 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut centered_worst: f64 = 0.0;
    let mut literal_worst: f64 = 0.0;
    for _ in 0..200 {
        let (n, k) = (rng.random_range(2..8), rng.random_range(2..6));
        let q: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.random_range(0.01..10.0)).collect())
            .collect();
        let rows: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let cols: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..10.0)).collect();
        let scaled: Vec<Vec<f64>> = q
            .iter()
            .zip(&rows)
            .map(|(row, a)| row.iter().zip(&cols).map(|(v, c)| v * a * c).collect())
            .collect();
        let (r, r2) = (run(&q)?, run(&scaled)?);
        centered_worst = centered_worst.max(max_diff(&double_centered(&r), &double_centered(&r2)));
        literal_worst = literal_worst.max(max_diff(&r, &r2));
    }

    let hand = run(&[vec![2.0, 1.0], vec![1.0, 2.0]])?;
    let (hi, lo) = ((4.0f64 / 3.0).ln(), (2.0f64 / 3.0).ln());
    let hand_err = max_diff(&hand, &[vec![hi, lo], vec![lo, hi]]);
    ensure(
        constant_ok && centered_worst < RCA_TOL && hand_err < RCA_TOL,
        format!(
            "constant -> 0: {constant_ok}; scaling leaves double-centered R fixed to {centered_worst:.2e} \
             (< {RCA_TOL:e}); raw cells move by up to {literal_worst:.2} so literal per-cell invariance does not \
             hold; hand case error {hand_err:.2e}"
        ),
    )
}

fn ewma() -> Outcome {
    let mut worst: f64 = 0.0;
    for &alpha in &[0.05, 0.2, 0.5, 0.7, 0.95] {
        for n in 1..=40 {
            let agents: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
            let matrix = CorrelationMatrix {
                agents: agents.clone(),
                communities: vec!["only".into()],
                r: vec![vec![1.0]; n],
                q_raw: None,
                network_digest: None,
            };
            let inf = infer_occupation(&matrix, &agents, alpha).map_err(|e| e.to_string())?;
            worst = worst.max((inf.scores[0] - (1.0 - (1.0 - alpha).powi(n as i32))).abs());
        }
    }
    // R rows 1, 0.5, 0.25, 0.125 under alpha 1/2: 1/2 + 1/8 + 1/32 + 1/128 = 0.66406...,
    // with the fourth agent unknown the sum is 1/2 + 1/8 + 1/32 = 0.65625.
    let matrix = CorrelationMatrix {
        agents: vec!["a".into(), "b".into(), "c".into()],
        communities: vec!["x".into()],
        r: vec![vec![1.0], vec![0.5], vec![0.25]],
        q_raw: None,
        network_digest: None,
    };
    let ranked: Vec<String> = ["a", "ghost", "b", "c"].iter().map(|s| s.to_string()).collect();
    let hand = infer_occupation(&matrix, &ranked, 0.5)
        .map_err(|e| e.to_string())?
        .scores[0];
    ensure(
        worst < EWMA_TOL && hand == 0.65625,
        format!("weight sum max error {worst:.2e} (< {EWMA_TOL:e}); hand case {hand} (exact 0.65625)"),
    )
}

/// Each user keeps the community index, the used agents and the full rank
/// vector over every agent.
struct ProfilingRun {
    matrix: CorrelationMatrix,
    users: Vec<(usize, Vec<String>, Vec<String>)>,
    eligible: usize,
}

fn profiling_fixture() -> Result<ProfilingRun, String> {
    let planted = planted(
        COMMUNITIES,
        OCCUPATIONS_PER_COMMUNITY,
        AGENTS_PER_COMMUNITY,
        12,
        AGENT_PURITY,
        42,
    );
    let matrix = correlate(&planted.network, &planted.agents).map_err(|e| e.to_string())?;
    let simulated = simulate_users(&matrix, USERS, LIST_LENGTH, 42).map_err(|e| e.to_string())?;
    let mut eligible: Vec<&str> = simulated.iter().map(|u| u.true_community.as_str()).collect();
    eligible.sort_unstable();
    eligible.dedup();
    let users = simulated
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let c = matrix
                .communities
                .iter()
                .position(|c| *c == u.true_community)
                .expect("known community");
            let full = complete_ranking(&u.ranked_agents, &matrix.agents, i as u64);
            (c, u.ranked_agents.clone(), full)
        })
        .collect();
    Ok(ProfilingRun {
        eligible: eligible.len(),
        matrix,
        users,
    })
}

/// Top-1 and top-3 hit rates on the used lists (`p = None`) or on full rank
/// vectors perturbed at `p` under `seed`.
fn hit_rates(run: &ProfilingRun, p: Option<f64>, seed: u64) -> Result<(f64, f64), String> {
    let profiler = Profiler::new(&run.matrix);
    let (mut top1, mut top3) = (0usize, 0usize);
    for (i, (truth, used, full)) in run.users.iter().enumerate() {
        let full: Vec<&str> = full.iter().map(String::as_str).collect();
        let ranked: Vec<&str> = match p {
            Some(p) => perturb_ranks(&full, p, (seed << 32) | i as u64).map_err(|e| e.to_string())?,
            None => used.iter().map(String::as_str).collect(),
        };
        let ranking = profiler
            .infer(&ranked, DEFAULT_ALPHA)
            .map_err(|e| e.to_string())?
            .ranking;
        top1 += usize::from(topk_hit(&ranking, *truth, 1));
        top3 += usize::from(topk_hit(&ranking, *truth, 3));
    }
    let n = run.users.len() as f64;
    Ok((top1 as f64 / n, top3 as f64 / n))
}

fn planted_profiling() -> Outcome {
    let run = profiling_fixture()?;
    let (top1, top3) = hit_rates(&run, None, 0)?;

    let mut mean1 = vec![0.0; NOISE_GRID.len()];
    let mut mean3 = vec![0.0; NOISE_GRID.len()];
    for (g, &p) in NOISE_GRID.iter().enumerate() {
        for seed in 0..NOISE_SEEDS {
            let (a, b) = hit_rates(&run, Some(p), seed)?;
            mean1[g] += a / NOISE_SEEDS as f64;
            mean3[g] += b / NOISE_SEEDS as f64;
        }
    }
    let drop = top3 - mean3[1];
    let non_increasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let monotone = non_increasing(&mean1) && non_increasing(&mean3);
    let curve: Vec<String> = NOISE_GRID
        .iter()
        .zip(mean1.iter().zip(&mean3))
        .map(|(p, (a, b))| format!("{p}:{a:.3}/{b:.3}"))
        .collect();
    ensure(
        run.eligible == COMMUNITIES && top1 >= MIN_TOP1 && top3 >= MIN_TOP3 && drop < MAX_TOP3_DROP && monotone,
        format!(
            "{} users over {}/{COMMUNITIES} communities: top-1 {top1:.4} (>= {MIN_TOP1}), top-3 {top3:.4} \
             (>= {MIN_TOP3}); p={NOISE_P}: top-3 {:.4}, drop {:.2} points (< {}); top-1/top-3 by p over \
             {NOISE_SEEDS} seeds [{}] monotone: {monotone}",
            run.users.len(),
            run.eligible,
            mean3[1],
            drop * 100.0,
            MAX_TOP3_DROP * 100.0,
            curve.join(" ")
        ),
    )
}

fn null_dataset() -> Result<Dataset, String> {
    let mut traces = ArchetypeLibrary::builtin().generate(NULL_PER_CLASS, 3);
    let mut labels: Vec<Option<String>> = traces.iter().map(|t| t.label().map(str::to_string)).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    traces = traces.into_iter().zip(labels).map(|(t, l)| t.with_label(l)).collect();
    let (ds, _) = Dataset::from_traces(&traces, &MtamConfig::uniform(NULL_WINDOWS), Normalization::Log1p)
        .map_err(|e| e.to_string())?;
    Ok(ds.relabel(|l| LabelKind::Behavior.apply(l)))
}

fn evaluation_protocol() -> Outcome {
    let ds = null_dataset()?;
    let classes = ds.header.label_map.len();
    let cfg = EvalConfig {
        arch: ArchConfig::tiny(1, 1),
        ..EvalConfig::new(TrainConfig {
            epochs: 20,
            seed: 13,
            ..TrainConfig::default()
        })
    };
    let report = kfold_evaluate(&ds, &cfg).map_err(|e| e.to_string())?;
    let stats = report.fold_stats.ok_or("no fold statistics")?;
    let chance = 1.0 / classes as f64;
    let null_ok = (stats.macro_f1_mean - chance).abs() <= NULL_SIGMAS * stats.macro_f1_std;

    let labels: Vec<usize> = (0..6 * BEHAVIOR_PER_CLASS).map(|i| i / BEHAVIOR_PER_CLASS).collect();
    let names: Vec<String> = (0..6).map(|c| format!("c{c}")).collect();
    let mut ratio_ok = true;
    for seed in 0..20 {
        let split = split_dataset(&labels, &names, SplitRatios::default(), seed).map_err(|e| e.to_string())?;
        for c in 0..6 {
            let count = |idx: &[usize]| idx.iter().filter(|&&i| labels[i] == c).count();
            ratio_ok &= (count(&split.train), count(&split.val), count(&split.test)) == (160, 20, 20);
        }
    }

    let again = kfold_evaluate(&null_dataset()?, &cfg).map_err(|e| e.to_string())?;
    let traces_equal = ArchetypeLibrary::builtin().generate(20, 9) == ArchetypeLibrary::builtin().generate(20, 9);
    let reproducible = again == report && traces_equal;
    ensure(
        null_ok && ratio_ok && reproducible,
        format!(
            "shuffled labels, {classes} classes: macro-F1 {:.4} +- {:.4} vs chance {chance:.4} (within {NULL_SIGMAS} sigma: \
             {null_ok}); 8:1:1 gives 160/20/20 per class: {ratio_ok}; repeated runs identical: {reproducible}",
            stats.macro_f1_mean, stats.macro_f1_std
        ),
    )
}

fn format_round_trips() -> Outcome {
    let capture = tcp_capture(&[
        (100, 0, true, 120),
        (100, 250_000, false, 1400),
        (100, 250_001, false, 0),
        (101, 500_000, true, 64),
        (150, 0, false, 900),
    ]);
    let client = IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2));
    let cfg = IngestConfig::new(
        [client],
        [parse_prefix("93.184.0.9").map_err(|e| e.to_string())?],
        FlowScope::Primary,
    )
    .map_err(|e| e.to_string())?;
    let records = parse_pcap(&capture, &cfg).map_err(|e| e.to_string())?;
    let flow = FlowKey {
        transport: Transport::Tcp,
        client: SocketAddr::new(client, 40000),
        remote: SocketAddr::new(IpAddr::V4(Ipv4Addr::new(93, 184, 0, 9)), 443),
    };
    let expected = [
        (100.0, Direction::Out, 120),
        (100.25, Direction::In, 1400),
        (101.5, Direction::Out, 64),
        (150.0, Direction::In, 900),
    ];
    let pcap_ok = records.len() == expected.len()
        && records
            .iter()
            .zip(&expected)
            .all(|(r, &(t, dir, size))| r.t == t && r.dir == dir && r.size == size && r.flow == flow);
    let traces = assemble_traces(&records, &cfg, 30.0);
    let sessions_ok = traces.len() == 2
        && traces[0].id() == "session-0000"
        && traces[0].packets().iter().map(|p| p.t).collect::<Vec<_>>() == [0.0, 0.25, 1.5]
        && traces[1].len() == 1;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let many: Vec<_> = (0..50)
        .map(|i| {
            let n = rng.random_range(1..300);
            random_trace(&mut rng, &format!("r{i}"), n, 0.1)
        })
        .collect();
    let mut first = Vec::new();
    write_traces_to(&many, &mut first).map_err(|e| e.to_string())?;
    let back = read_traces_from(first.as_slice()).map_err(|e| e.to_string())?;
    let mut second = Vec::new();
    write_traces_to(&back, &mut second).map_err(|e| e.to_string())?;
    let jsonl_ok = back == many && first == second;

    let model = Model::<f32>::build(ArchConfig::tiny(24, 3), 4)
        .and_then(|m| m.with_label_map(vec!["a".into(), "b".into(), "c".into()]))
        .map_err(|e| e.to_string())?
        .with_normalization(Normalization::Log1p)
        .with_trained_on(Some("abc".into()));
    let mut bytes = Vec::new();
    write_model(&model, &mut bytes).map_err(|e| e.to_string())?;
    let loaded = read_model(bytes.as_slice()).map_err(|e| e.to_string())?;
    let mut again = Vec::new();
    write_model(&loaded, &mut again).map_err(|e| e.to_string())?;
    let input: Vec<f32> = (0..model.input_len()).map(|i| (i % 7) as f32).collect();
    let same_output = model.probabilities(&[&input]).ok() == loaded.probabilities(&[&input]).ok();
    let model_ok = bytes == again && same_output && loaded.label_map() == model.label_map();

    ensure(
        pcap_ok && sessions_ok && jsonl_ok && model_ok,
        format!(
            "pcap fields: {pcap_ok}; sessions: {sessions_ok}; JSONL {} traces: {jsonl_ok}; model ({} bytes): {model_ok}",
            many.len(),
            bytes.len()
        ),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let checks: [Check; 10] = [
        ("Gradient check", gradient),
        ("Synthetic behavior classification", behavior_classification),
        ("Open-world monotonicity", open_world),
        ("Modularity brute force", modularity),
        ("Delta-Q consistency", probe_consistency),
        ("RCA identities", rca),
        ("EWMA identities", ewma),
        ("Planted-community profiling", planted_profiling),
        ("Evaluation protocol", evaluation_protocol),
        ("Format round-trips", format_round_trips),
    ];
    // `cargo test --test acceptance -- <words>` runs only criteria whose name contains one of the words.
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_lowercase())
        .collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.to_lowercase().contains(f.as_str()));
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    if wanted("MTAM oracle equivalence") || wanted("Mass conservation") {
        let (oracle, mass) = mtam_oracle_and_mass();
        results.push(("MTAM oracle equivalence", oracle));
        results.push(("Mass conservation", mass));
    }
    for (name, check) in checks {
        if wanted(name) {
            results.push((name, check()));
        }
    }

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
