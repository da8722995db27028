use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use agentprint::occupation::{
    correlate as correlate_agents, read_agent_profiles, read_partition_csv, topk_hit, write_partition_csv,
    CorrelationMatrix, OccupationNetwork, Profiler, Taxonomy,
};
use agentprint::simulation::{
    complete_ranking, perturb_ranks, read_users_csv, simulate_users as simulate, write_users_csv,
};

use crate::{CliError, CorrelateArgs, GraphCommand, ProfileArgs};

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn graph(cmd: &GraphCommand) -> Result<(), CliError> {
    match cmd {
        GraphCommand::Build { onet, out } => {
            let taxonomy = Taxonomy::load_dir(onet)?;
            let network = OccupationNetwork::build(&taxonomy)?;
            network.save(out)?;
            println!(
                "{} occupations, {} DWAs; network written to {}",
                network.codes().len(),
                network.dwa_universe().len(),
                out.display()
            );
        }
        GraphCommand::Communities {
            network,
            seed,
            partition,
            resolution,
            out,
            partition_out,
        } => {
            let mut net = OccupationNetwork::load(network)?;
            let q = match partition {
                Some(p) => {
                    net.set_partition(&read_partition_csv(open(p)?)?)?;
                    net.modularity()?
                }
                None => net.detect_communities(*seed, *resolution)?,
            };
            net.save(out)?;
            if let Some(p) = partition_out {
                write_partition_csv(&net.partition_rows(), create(p)?)?;
            }
            println!(
                "{} communities, modularity {q}; network written to {}",
                net.community_count(),
                out.display()
            );
        }
    }
    Ok(())
}

pub fn correlate(a: &CorrelateArgs) -> Result<(), CliError> {
    let network = OccupationNetwork::load(&a.network)?;
    let agents = read_agent_profiles(open(&a.agents)?)?;
    let matrix = correlate_agents(&network, &agents)?;
    matrix.write_csv(create(&a.out)?)?;
    println!(
        "{} agents × {} communities written to {}",
        matrix.agents.len(),
        matrix.communities.len(),
        a.out.display()
    );
    Ok(())
}

pub fn profile(a: &ProfileArgs) -> Result<(), CliError> {
    if a.topk == 0 {
        return Err(CliError::validation("--topk must be at least 1"));
    }
    if let Some(p) = a.noise {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::validation(format!("--noise {p} outside [0, 1]")));
        }
    }
    let matrix = CorrelationMatrix::read_csv(open(&a.rmatrix)?)?;
    let users = read_users_csv(open(&a.ranks)?)?;

    let mut w = csv::Writer::from_writer(create(&a.out)?);
    w.write_record([
        "user_id",
        "true_community",
        "predicted",
        "ranking",
        "hit_at_1",
        "hit_at_k",
        "skipped_agents",
    ])?;
    let profiler = Profiler::new(&matrix);
    let (mut known, mut top1, mut topk) = (0usize, 0usize, 0usize);
    for (i, (user_id, truth, ranked)) in users.iter().enumerate() {
        let ranked = match a.noise {
            // Each user gets its own stream, all derived from --seed. Noise acts on
            // the full rank vector, so unused agents can swap into the list.
            Some(p) => {
                let seed = a.seed.wrapping_add(i as u64);
                perturb_ranks(&complete_ranking(ranked, &matrix.agents, seed), p, seed)?
            }
            None => ranked.clone(),
        };
        let inference = profiler
            .infer(&ranked, a.alpha)
            .map_err(|e| CliError::validation(format!("user `{user_id}`: {e}")))?;
        let label = |c: usize| matrix.communities[c].as_str();
        let truth_index = match truth {
            Some(t) => Some(
                matrix
                    .communities
                    .iter()
                    .position(|c| c == t)
                    .ok_or_else(|| CliError::validation(format!("user `{user_id}`: unknown community `{t}`")))?,
            ),
            None => None,
        };
        let (h1, hk) = match truth_index {
            Some(t) => {
                let h1 = topk_hit(&inference.ranking, t, 1);
                let hk = topk_hit(&inference.ranking, t, a.topk);
                known += 1;
                top1 += usize::from(h1);
                topk += usize::from(hk);
                (h1.to_string(), hk.to_string())
            }
            None => (String::new(), String::new()),
        };
        let shown: Vec<&str> = inference.ranking.iter().take(a.topk).map(|&c| label(c)).collect();
        w.write_record([
            user_id.as_str(),
            truth.as_deref().unwrap_or(""),
            label(inference.ranking[0]),
            &shown.join(";"),
            &h1,
            &hk,
            &inference.skipped.join(";"),
        ])?;
    }
    w.flush()?;
    if known > 0 {
        println!(
            "{} users: top-1 {:.4}, top-{} {:.4}; report written to {}",
            users.len(),
            top1 as f64 / known as f64,
            a.topk,
            topk as f64 / known as f64,
            a.out.display()
        );
    } else {
        println!("{} users profiled; report written to {}", users.len(), a.out.display());
    }
    Ok(())
}

pub fn simulate_users(
    network: Option<&Path>,
    rmatrix: &Path,
    count: usize,
    seed: u64,
    list_length: usize,
    out: &Path,
) -> Result<(), CliError> {
    let matrix = CorrelationMatrix::read_csv(open(rmatrix)?)?;
    if let Some(path) = network {
        let digest = OccupationNetwork::load(path)?.digest();
        match &matrix.network_digest {
            Some(d) if *d != digest => {
                return Err(CliError::validation(format!(
                    "{} was computed on a different network ({d}, not {digest})",
                    rmatrix.display()
                )))
            }
            Some(_) => {}
            None => log::warn!("{} records no network digest; not checked", rmatrix.display()),
        }
    }
    let users = simulate(&matrix, count, list_length, seed)?;
    write_users_csv(&users, create(out)?)?;
    println!("{} users written to {}", users.len(), out.display());
    Ok(())
}
