use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use super::OccupationError;

#[derive(Debug, Clone, PartialEq)]
pub struct Occupation {
    pub code: String,
    pub title: String,
    /// Share of the occupation's DWAs exposed to automation, when known.
    pub exposure: Option<f64>,
}

/// Occupations, their tasks and the task→DWA links.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    occupations: Vec<Occupation>,
    task_owner: BTreeMap<String, usize>,
    task_dwas: BTreeMap<String, BTreeSet<String>>,
    dwas: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentProfile {
    pub agent_id: String,
    pub dwas: BTreeSet<String>,
}

#[derive(Deserialize)]
struct OccupationRow {
    code: String,
    title: String,
    #[serde(default)]
    exposure: Option<f64>,
}

#[derive(Deserialize)]
struct TaskRow {
    task_id: String,
    occupation_code: String,
}

#[derive(Deserialize)]
struct LinkRow {
    task_id: String,
    dwa_id: String,
}

#[derive(Deserialize)]
struct DwaRow {
    dwa_id: String,
}

#[derive(Deserialize)]
struct AgentRow {
    agent_id: String,
    dwa_id: String,
}

/// Deserializes every row of a headed CSV, tagging errors with file and line.
fn rows<T: for<'de> Deserialize<'de>, R: Read>(file: &str, r: R) -> Result<Vec<(usize, T)>, OccupationError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map(|v| (i + 2, v)).map_err(|e| OccupationError::Format {
                file: file.to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}

fn open(path: &Path) -> Result<File, OccupationError> {
    File::open(path).map_err(|e| OccupationError::Io(format!("{}: {e}", path.display())))
}

impl Taxonomy {
    /// Builds a taxonomy from CSV readers. Without a DWA list the DWA set is
    /// whatever the links mention.
    pub fn from_readers<R: Read>(
        occupations: R,
        tasks: R,
        links: R,
        dwa_list: Option<R>,
    ) -> Result<Self, OccupationError> {
        let mut occ_rows: Vec<Occupation> = Vec::new();
        let mut seen = BTreeSet::new();
        for (line, row) in rows::<OccupationRow, _>("occupations.csv", occupations)? {
            if !seen.insert(row.code.clone()) {
                return Err(OccupationError::DuplicateCode(row.code));
            }
            if let Some(x) = row.exposure {
                if !(0.0..=1.0).contains(&x) {
                    return Err(OccupationError::Format {
                        file: "occupations.csv".into(),
                        message: format!("line {line}: exposure {x} outside [0, 1]"),
                    });
                }
            }
            occ_rows.push(Occupation {
                code: row.code,
                title: row.title,
                exposure: row.exposure,
            });
        }
        occ_rows.sort_by(|a, b| a.code.cmp(&b.code));
        let index: BTreeMap<&str, usize> = occ_rows.iter().enumerate().map(|(i, o)| (o.code.as_str(), i)).collect();

        let mut task_owner = BTreeMap::new();
        for (line, row) in rows::<TaskRow, _>("tasks.csv", tasks)? {
            let owner = *index
                .get(row.occupation_code.as_str())
                .ok_or_else(|| OccupationError::DanglingReference {
                    file: "tasks.csv".into(),
                    line,
                    id: row.occupation_code.clone(),
                })?;
            if task_owner.insert(row.task_id.clone(), owner).is_some() {
                return Err(OccupationError::DuplicateCode(row.task_id));
            }
        }

        let declared: Option<BTreeSet<String>> = match dwa_list {
            Some(r) => {
                let mut set = BTreeSet::new();
                for (_, row) in rows::<DwaRow, _>("dwas.csv", r)? {
                    if !set.insert(row.dwa_id.clone()) {
                        return Err(OccupationError::DuplicateCode(row.dwa_id));
                    }
                }
                Some(set)
            }
            None => None,
        };
        let mut task_dwas: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut dwas = declared.clone().unwrap_or_default();
        for (line, row) in rows::<LinkRow, _>("dwa_links.csv", links)? {
            if !task_owner.contains_key(&row.task_id) {
                return Err(OccupationError::DanglingReference {
                    file: "dwa_links.csv".into(),
                    line,
                    id: row.task_id,
                });
            }
            if declared.as_ref().is_some_and(|d| !d.contains(&row.dwa_id)) {
                return Err(OccupationError::DanglingReference {
                    file: "dwa_links.csv".into(),
                    line,
                    id: row.dwa_id,
                });
            }
            dwas.insert(row.dwa_id.clone());
            task_dwas.entry(row.task_id).or_default().insert(row.dwa_id);
        }
        Ok(Self {
            occupations: occ_rows,
            task_owner,
            task_dwas,
            dwas,
        })
    }

    /// Loads `occupations.csv`, `tasks.csv`, `dwa_links.csv` and, if
    /// present, `dwas.csv` from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, OccupationError> {
        let dir = dir.as_ref();
        let dwas = dir.join("dwas.csv");
        let dwa_list = if dwas.exists() { Some(open(&dwas)?) } else { None };
        Self::from_readers(
            open(&dir.join("occupations.csv"))?,
            open(&dir.join("tasks.csv"))?,
            open(&dir.join("dwa_links.csv"))?,
            dwa_list,
        )
    }

    /// Occupations sorted by code.
    pub fn occupations(&self) -> &[Occupation] {
        &self.occupations
    }

    pub fn task_count(&self) -> usize {
        self.task_owner.len()
    }

    pub fn dwas(&self) -> &BTreeSet<String> {
        &self.dwas
    }

    /// Union of the DWAs of every task owned by `code`.
    pub fn dwa_profile(&self, code: &str) -> Result<BTreeSet<String>, OccupationError> {
        let idx = self
            .occupations
            .binary_search_by(|o| o.code.as_str().cmp(code))
            .map_err(|_| OccupationError::UnknownOccupation(code.to_string()))?;
        Ok(self
            .task_owner
            .iter()
            .filter(|(_, &owner)| owner == idx)
            .filter_map(|(task, _)| self.task_dwas.get(task))
            .flatten()
            .cloned()
            .collect())
    }
}

/// Reads `agent_id,dwa_id` pairs into profiles sorted by agent id.
pub fn read_agent_profiles<R: Read>(r: R) -> Result<Vec<AgentProfile>, OccupationError> {
    let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (_, row) in rows::<AgentRow, _>("agents_dwa.csv", r)? {
        map.entry(row.agent_id).or_default().insert(row.dwa_id);
    }
    Ok(map
        .into_iter()
        .map(|(agent_id, dwas)| AgentProfile { agent_id, dwas })
        .collect())
}
