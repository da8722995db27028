use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::SimulationError;
use crate::trace::{Direction, FlowScope, Packet, Trace};

pub const ARCHETYPE_FORMAT_VERSION: u32 = 1;

const BUILTIN: &str = include_str!("../../data/archetypes.json");

/// Log-normal packet sizes, clipped to `[min, max]` bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    pub median: f64,
    pub sigma: f64,
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    /// Idle time before the phase's first packet, seconds.
    pub delay_range: (f64, f64),
    pub packet_count_range: (usize, usize),
    /// Spacing between consecutive packets inside the phase, seconds.
    pub gap_range: (f64, f64),
    pub outbound_prob: f64,
    pub size: SizeDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    /// Behavior class used as the classification target.
    pub label: String,
    pub phases: Vec<Phase>,
}

/// Margins the archetypes must keep apart (see [`ArchetypeLibrary::check_separability`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separability {
    /// A gap at least this long counts as an idle period.
    pub idle_gap_s: f64,
    /// Sliding window for the outbound burst measure.
    pub burst_window_s: f64,
    /// Minimum ratio between medians of a volume feature.
    pub min_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeLibrary {
    pub format_version: u32,
    pub separability: Separability,
    pub archetypes: Vec<Archetype>,
}

fn range_ok(lo: f64, hi: f64) -> bool {
    lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi
}

impl Archetype {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::Archetype(format!("{}: {m}", self.name)));
        if self.phases.is_empty() {
            return bad("no phases".into());
        }
        for p in &self.phases {
            let (c0, c1) = p.packet_count_range;
            if !range_ok(p.delay_range.0, p.delay_range.1) || !range_ok(p.gap_range.0, p.gap_range.1) {
                return bad(format!(
                    "phase {}: delay and gap ranges must be ordered and non-negative",
                    p.name
                ));
            }
            if c0 == 0 || c0 > c1 {
                return bad(format!(
                    "phase {}: packet count range must be ordered and start at 1 or more",
                    p.name
                ));
            }
            if !(0.0..=1.0).contains(&p.outbound_prob) {
                return bad(format!("phase {}: outbound probability outside [0, 1]", p.name));
            }
            let s = &p.size;
            if !(s.median > 0.0 && s.sigma >= 0.0 && s.sigma.is_finite()) || s.min == 0 || s.min > s.max {
                return bad(format!("phase {}: invalid size distribution", p.name));
            }
        }
        Ok(())
    }

    /// Trace label in the `archetype:Behavior` convention.
    pub fn trace_label(&self) -> String {
        format!("{}:{}", self.name, self.label)
    }

    /// Emits the phases in order. Deterministic in `seed`.
    pub fn generate(&self, id: impl Into<String>, seed: u64) -> Trace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut packets = Vec::new();
        let mut t = 0.0;
        for (k, phase) in self.phases.iter().enumerate() {
            if k > 0 {
                t += uniform(&mut rng, phase.delay_range);
            }
            let sizes = LogNormal::new(phase.size.median.ln(), phase.size.sigma).expect("validated size distribution");
            let count = rng.random_range(phase.packet_count_range.0..=phase.packet_count_range.1);
            for i in 0..count {
                if i > 0 {
                    t += uniform(&mut rng, phase.gap_range);
                }
                let dir = if rng.random_bool(phase.outbound_prob) {
                    Direction::Out
                } else {
                    Direction::In
                };
                let size = sizes
                    .sample(&mut rng)
                    .round()
                    .clamp(phase.size.min as f64, phase.size.max as f64) as u32;
                packets.push(Packet::new(t, dir, size));
            }
        }
        Trace::new(id, packets, FlowScope::Primary, Some(self.trace_label()))
            .expect("generated packets are ordered and sized")
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Summary features the separability margins refer to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signature {
    pub has_idle_gap: bool,
    /// Largest outbound byte count inside any sliding burst window.
    pub outbound_burst: f64,
    pub inbound_bytes: f64,
}

impl Signature {
    pub fn of(trace: &Trace, margins: &Separability) -> Self {
        let p = trace.packets();
        let has_idle_gap = p.windows(2).any(|w| w[1].t - w[0].t >= margins.idle_gap_s);
        let out: Vec<&Packet> = p.iter().filter(|x| x.dir == Direction::Out).collect();
        let (mut start, mut running, mut best) = (0, 0.0, 0.0f64);
        for end in 0..out.len() {
            running += out[end].size as f64;
            while out[end].t - out[start].t > margins.burst_window_s {
                running -= out[start].size as f64;
                start += 1;
            }
            best = best.max(running);
        }
        let inbound_bytes = p.iter().filter(|x| x.dir == Direction::In).map(|x| x.size as f64).sum();
        Self {
            has_idle_gap,
            outbound_burst: best,
            inbound_bytes,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if lo <= 0.0 {
        if hi > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    } else {
        hi / lo
    }
}

impl ArchetypeLibrary {
    /// The library shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("bundled archetype library is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, SimulationError> {
        let lib: Self = serde_json::from_str(text).map_err(|e| SimulationError::Archetype(e.to_string()))?;
        if lib.format_version != ARCHETYPE_FORMAT_VERSION {
            return Err(SimulationError::Archetype(format!(
                "unsupported archetype format version {}",
                lib.format_version
            )));
        }
        if lib.archetypes.is_empty() {
            return Err(SimulationError::Archetype("library has no archetypes".into()));
        }
        let mut names: Vec<&str> = lib.archetypes.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimulationError::Archetype("duplicate archetype name".into()));
        }
        for a in &lib.archetypes {
            a.validate()?;
        }
        Ok(lib)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimulationError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SimulationError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn get(&self, name: &str) -> Option<&Archetype> {
        self.archetypes.iter().find(|a| a.name == name)
    }

    /// `per_class` traces of every archetype, ids `<name>-NNNN`. Per-trace
    /// seeds are drawn from one generator seeded with `seed`.
    pub fn generate(&self, per_class: usize, seed: u64) -> Vec<Trace> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(per_class * self.archetypes.len());
        for a in &self.archetypes {
            for i in 0..per_class {
                out.push(a.generate(format!("{}-{i:04}", a.name), rng.random()));
            }
        }
        out
    }

    /// Checks every pair of archetypes differs in idle-gap presence (by
    /// majority) or by `min_ratio` in the median outbound burst or inbound
    /// volume, over `samples` traces each. Returns the offending pairs.
    pub fn check_separability(&self, samples: usize, seed: u64) -> Vec<(String, String)> {
        let m = &self.separability;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let summaries: Vec<(bool, f64, f64)> = self
            .archetypes
            .iter()
            .map(|a| {
                let sigs: Vec<Signature> = (0..samples)
                    .map(|_| Signature::of(&a.generate("probe", rng.random()), m))
                    .collect();
                let idle = sigs.iter().filter(|s| s.has_idle_gap).count() * 2 > samples;
                (
                    idle,
                    median(sigs.iter().map(|s| s.outbound_burst).collect()),
                    median(sigs.iter().map(|s| s.inbound_bytes).collect()),
                )
            })
            .collect();
        let mut bad = Vec::new();
        for i in 0..summaries.len() {
            for j in i + 1..summaries.len() {
                let (a, b) = (summaries[i], summaries[j]);
                let apart = a.0 != b.0 || ratio(a.1, b.1) >= m.min_ratio || ratio(a.2, b.2) >= m.min_ratio;
                if !apart {
                    bad.push((self.archetypes[i].name.clone(), self.archetypes[j].name.clone()));
                }
            }
        }
        bad
    }
}
