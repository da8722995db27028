use super::{FlowScope, IngestConfig, Packet, PacketRecord, Trace};

/// Default idle gap, in seconds, that separates two interaction sessions.
pub const DEFAULT_SESSION_GAP: f64 = 30.0;

/// Splits absolute-time packet records into per-session traces.
///
/// A new session starts wherever two consecutive records (in time order, all
/// flows considered) are more than `session_gap` seconds apart. Scope
/// filtering happens after splitting, so third-party flows still bridge gaps
/// in primary scope. Sessions left without packets are not emitted.
pub fn assemble_traces(records: &[PacketRecord], cfg: &IngestConfig, session_gap: f64) -> Vec<Trace> {
    let mut order: Vec<&PacketRecord> = records.iter().collect();
    order.sort_by(|a, b| a.t.total_cmp(&b.t));

    let mut sessions: Vec<Vec<&PacketRecord>> = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for rec in order {
        if sessions.is_empty() || rec.t - last_t > session_gap {
            sessions.push(Vec::new());
        }
        last_t = rec.t;
        sessions.last_mut().expect("pushed above").push(rec);
    }

    sessions
        .into_iter()
        .filter_map(|session| {
            let kept: Vec<&PacketRecord> = session
                .into_iter()
                .filter(|r| match cfg.scope {
                    FlowScope::Mixed => true,
                    FlowScope::Primary => cfg.is_provider(r.flow.remote.ip()),
                })
                .collect();
            let t0 = kept.first()?.t;
            Some(
                kept.iter()
                    .map(|r| Packet::new(r.t - t0, r.dir, r.size))
                    .collect::<Vec<_>>(),
            )
        })
        .enumerate()
        .map(|(i, packets)| {
            Trace::new(format!("session-{i:04}"), packets, cfg.scope, None)
                .expect("records are sorted, re-based and non-empty")
        })
        .collect()
}
