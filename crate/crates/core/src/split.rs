//! Dataset partitioning into seen / unseen identities and into training+database,
//! database-only and query roles, plus the time-aware variant and a validator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: String,
    pub identity_id: String,
    #[serde(default)]
    pub path: String,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub timestamp: Option<i64>,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub clarity: Option<u8>,
    /// Optional source-dataset tag used for per-dataset reporting.
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "empty_as_none")]
    pub dataset: Option<String>,
}

fn empty_as_none<'de, D, T>(de: D) -> std::result::Result<Option<T>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: std::str::FromStr + Deserialize<'de>,
    T::Err: fmt::Display,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw<T> {
        Str(String),
        Val(T),
    }
    match Option::<Raw<T>>::deserialize(de)? {
        None => Ok(None),
        Some(Raw::Val(v)) => Ok(Some(v)),
        Some(Raw::Str(s)) if s.trim().is_empty() => Ok(None),
        Some(Raw::Str(s)) => s.trim().parse().map(Some).map_err(serde::de::Error::custom),
    }
}

impl ManifestRecord {
    pub fn new(image_id: impl Into<String>, identity_id: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            identity_id: identity_id.into(),
            path: String::new(),
            timestamp: None,
            clarity: None,
            dataset: None,
        }
    }
}

/// Checks id uniqueness and clarity values.
pub fn validate_manifest(manifest: &[ManifestRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in manifest {
        if !seen.insert(r.image_id.as_str()) {
            return Err(Error::Validation(format!("duplicate image_id `{}`", r.image_id)));
        }
        if let Some(c) = r.clarity {
            if !(1..=4).contains(&c) {
                return Err(Error::Validation(format!("clarity of `{}` must be 1-4, got {c}", r.image_id)));
            }
        }
    }
    Ok(())
}

/// Reads a manifest from CSV (`.csv`, header row) or JSON lines (anything else).
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let records = if is_csv { parse_manifest_csv(&text)? } else { parse_jsonl(&text)? };
    validate_manifest(&records)?;
    Ok(records)
}

pub fn parse_manifest_csv(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Validation(format!("manifest row {}: {e}", i + 1))))
        .collect()
}

pub fn write_manifest_csv(path: impl AsRef<Path>, manifest: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("image_id,identity_id,path,timestamp,clarity,dataset\n");
    for r in manifest {
        let opt = |v: Option<String>| v.unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.image_id,
            r.identity_id,
            r.path,
            opt(r.timestamp.map(|t| t.to_string())),
            opt(r.clarity.map(|c| c.to_string())),
            opt(r.dataset.clone())
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::file(path, e))
}

pub(crate) fn parse_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Validation(format!("line {}: {e}", i + 1))))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    TrainAndDatabase,
    DatabaseOnly,
    Query,
}

impl Role {
    pub fn in_database(self) -> bool {
        self != Role::Query
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdGroup {
    SeenIds,
    UnseenIds,
}

impl fmt::Display for IdGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdGroup::SeenIds => "seen",
            IdGroup::UnseenIds => "unseen",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Seeds the identity-level draw (seen vs unseen).
    pub seed: u64,
    /// Seeds the image-level draw; derived from `seed` when absent.
    #[serde(default)]
    pub image_seed: Option<u64>,
    pub unseen_id_fraction: f64,
    pub query_fraction_seen: f64,
    pub query_fraction_unseen: f64,
    pub time_aware: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_seed: None,
            unseen_id_fraction: 0.17,
            query_fraction_seen: 0.20,
            query_fraction_unseen: 0.24,
            time_aware: false,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("unseen_id_fraction", self.unseen_id_fraction),
            ("query_fraction_seen", self.query_fraction_seen),
            ("query_fraction_unseen", self.query_fraction_unseen),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }

    fn image_seed(&self) -> u64 {
        self.image_seed.unwrap_or_else(|| derive_seed(self.seed, "split/images"))
    }
}

/// One line of the assignment file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub image_id: String,
    pub role: Role,
    pub identity_group: IdGroup,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitAssignment {
    pub entries: Vec<AssignmentEntry>,
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn roles(&self) -> BTreeMap<&str, Role> {
        self.entries.iter().map(|e| (e.image_id.as_str(), e.role)).collect()
    }

    pub fn groups(&self) -> BTreeMap<&str, IdGroup> {
        self.entries.iter().map(|e| (e.image_id.as_str(), e.identity_group)).collect()
    }

    pub fn role_of(&self, image_id: &str) -> Option<Role> {
        self.entries.iter().find(|e| e.image_id == image_id).map(|e| e.role)
    }

    pub fn ids_with_role(&self, role: Role) -> Vec<&str> {
        self.entries.iter().filter(|e| e.role == role).map(|e| e.image_id.as_str()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Ok(Self {
            entries: parse_jsonl(text)?,
            warnings: Vec::new(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_jsonl(&text)
    }
}

/// Identities grouped with their records, in sorted identity order.
fn by_identity(manifest: &[ManifestRecord]) -> BTreeMap<&str, Vec<&ManifestRecord>> {
    let mut map: BTreeMap<&str, Vec<&ManifestRecord>> = BTreeMap::new();
    for r in manifest {
        map.entry(r.identity_id.as_str()).or_default().push(r);
    }
    for v in map.values_mut() {
        v.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    }
    map
}

/// Draws the unseen identity set. Singletons are always unseen and do not count
/// toward the unseen fraction.
fn choose_groups<'a>(
    ids: &BTreeMap<&'a str, Vec<&ManifestRecord>>,
    config: &SplitConfig,
    warnings: &mut Vec<String>,
) -> BTreeMap<&'a str, IdGroup> {
    let mut eligible: Vec<&str> = ids.iter().filter(|(_, v)| v.len() >= 2).map(|(k, _)| *k).collect();
    eligible.shuffle(&mut seeded(derive_seed(config.seed, "split/identities")));
    let n_unseen = (config.unseen_id_fraction * eligible.len() as f64).round() as usize;
    let mut groups: BTreeMap<&str, IdGroup> = BTreeMap::new();
    for (i, id) in eligible.iter().enumerate() {
        groups.insert(id, if i < n_unseen { IdGroup::UnseenIds } else { IdGroup::SeenIds });
    }
    for (id, recs) in ids {
        if recs.len() < 2 {
            warnings.push(format!("identity `{id}` has a single image; assigned to the database only"));
            groups.insert(id, IdGroup::UnseenIds);
        }
    }
    groups
}

fn db_role(group: IdGroup) -> Role {
    match group {
        IdGroup::SeenIds => Role::TrainAndDatabase,
        IdGroup::UnseenIds => Role::DatabaseOnly,
    }
}

/// Random split: identities first, then images within each identity group.
pub fn split_dataset(manifest: &[ManifestRecord], config: &SplitConfig) -> Result<SplitAssignment> {
    config.validate()?;
    validate_manifest(manifest)?;
    let ids = by_identity(manifest);
    let mut warnings = Vec::new();
    let groups = choose_groups(&ids, config, &mut warnings);

    let mut roles: BTreeMap<&str, Role> = BTreeMap::new();
    let mut rng = seeded(config.image_seed());
    for group in [IdGroup::SeenIds, IdGroup::UnseenIds] {
        let q = match group {
            IdGroup::SeenIds => config.query_fraction_seen,
            IdGroup::UnseenIds => config.query_fraction_unseen,
        };
        let members: Vec<&str> = ids
            .iter()
            .filter(|(id, recs)| groups[*id] == group && recs.len() >= 2)
            .map(|(id, _)| *id)
            .collect();
        let mut pool: Vec<&ManifestRecord> = members.iter().flat_map(|id| ids[id].iter().copied()).collect();
        pool.shuffle(&mut rng);
        let n_query = (q * pool.len() as f64).round() as usize;
        for (i, r) in pool.iter().enumerate() {
            roles.insert(&r.image_id, if i < n_query { Role::Query } else { db_role(group) });
        }
        // Closed set: an identity entirely in the query set gets one image back.
        for id in members {
            let recs = &ids[id];
            if recs.iter().all(|r| roles[r.image_id.as_str()] == Role::Query) {
                let back = pool.iter().rev().find(|r| r.identity_id == id).expect("identity has images");
                roles.insert(&back.image_id, db_role(group));
            }
        }
    }
    for recs in ids.values().filter(|v| v.len() < 2) {
        for r in recs {
            roles.insert(&r.image_id, Role::DatabaseOnly);
        }
    }
    Ok(build_assignment(manifest, &roles, &groups, warnings))
}

fn build_assignment(
    manifest: &[ManifestRecord],
    roles: &BTreeMap<&str, Role>,
    groups: &BTreeMap<&str, IdGroup>,
    warnings: Vec<String>,
) -> SplitAssignment {
    let entries = manifest
        .iter()
        .map(|r| AssignmentEntry {
            image_id: r.image_id.clone(),
            role: roles[r.image_id.as_str()],
            identity_group: groups[r.identity_id.as_str()],
        })
        .collect();
    SplitAssignment { entries, warnings }
}

/// Per identity, the earliest `ceil((1 - q) n)` images form the database and the
/// rest are queries, with `q = query_fraction_unseen`. Ties keep image_id order.
pub fn time_aware_split(manifest: &[ManifestRecord], config: &SplitConfig) -> Result<SplitAssignment> {
    config.validate()?;
    validate_manifest(manifest)?;
    let missing: Vec<&str> = manifest
        .iter()
        .filter(|r| r.timestamp.is_none())
        .map(|r| r.image_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "time-aware split needs timestamps; missing for: {}",
            missing.join(", ")
        )));
    }
    let ids = by_identity(manifest);
    let mut warnings = Vec::new();
    let groups = choose_groups(&ids, config, &mut warnings);
    let q = config.query_fraction_unseen;
    let image_seed = config.image_seed();

    let mut roles: BTreeMap<&str, Role> = BTreeMap::new();
    for (id, recs) in &ids {
        let group = groups[id];
        let mut ordered = recs.clone();
        let n = ordered.len();
        let n_db = ((1.0 - q) * n as f64).ceil() as usize;
        let first_ts = ordered[0].timestamp;
        if n >= 2 && ordered.iter().all(|r| r.timestamp == first_ts) {
            warnings.push(format!("identity `{id}` has a single timestamp; using a random split"));
            ordered.shuffle(&mut seeded(derive_seed(image_seed, id)));
        } else {
            ordered.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.image_id.cmp(&b.image_id)));
        }
        for (i, r) in ordered.iter().enumerate() {
            roles.insert(&r.image_id, if i < n_db { db_role(group) } else { Role::Query });
        }
    }
    Ok(build_assignment(manifest, &roles, &groups, warnings))
}

/// Dispatches on `config.time_aware`.
pub fn split(manifest: &[ManifestRecord], config: &SplitConfig) -> Result<SplitAssignment> {
    if config.time_aware {
        time_aware_split(manifest, config)
    } else {
        split_dataset(manifest, config)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: String,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RoleCount {
    pub images: usize,
    pub ids: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub training: RoleCount,
    pub database_only: RoleCount,
    pub query: RoleCount,
    pub seen_ids: usize,
    pub unseen_ids: usize,
    pub total_images: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16}{:>10} | {:<8}", "", "images", "ids")?;
        for (name, c) in [("Training", self.training), ("Database only", self.database_only), ("Query", self.query)] {
            writeln!(f, "{:<16}{:>10} | {:<8}", name, c.images, c.ids)?;
        }
        writeln!(f, "seen ids: {}  unseen ids: {}  images: {}", self.seen_ids, self.unseen_ids, self.total_images)?;
        if self.violations.is_empty() {
            writeln!(f, "violations: none")
        } else {
            writeln!(f, "violations: {}", self.violations.len())?;
            for v in &self.violations {
                writeln!(f, "  {}: {}", v.kind, v.detail)?;
            }
            Ok(())
        }
    }
}

/// Checks partition, leakage, closed-set and (when every record has a timestamp
/// and `time_aware` is set) temporal ordering, and tallies the split.
pub fn validate_split(assignment: &SplitAssignment, manifest: &[ManifestRecord], time_aware: bool) -> ValidationReport {
    let mut report = ValidationReport {
        total_images: manifest.len(),
        ..Default::default()
    };
    let mut push = |kind: &str, detail: String| {
        report.violations.push(Violation {
            kind: kind.to_string(),
            detail,
        })
    };
    let by_id: BTreeMap<&str, &ManifestRecord> = manifest.iter().map(|r| (r.image_id.as_str(), r)).collect();

    let mut role_of: BTreeMap<&str, Role> = BTreeMap::new();
    let mut group_of_identity: BTreeMap<&str, IdGroup> = BTreeMap::new();
    for e in &assignment.entries {
        let Some(rec) = by_id.get(e.image_id.as_str()) else {
            push("unknown-image", format!("`{}` is not in the manifest", e.image_id));
            continue;
        };
        if let Some(prev) = role_of.insert(&e.image_id, e.role) {
            push("duplicate-role", format!("`{}` assigned {:?} and {:?}", e.image_id, prev, e.role));
        }
        if let Some(g) = group_of_identity.insert(&rec.identity_id, e.identity_group) {
            if g != e.identity_group {
                push("group-conflict", format!("identity `{}` is in both groups", rec.identity_id));
            }
        }
        if e.identity_group == IdGroup::UnseenIds && e.role == Role::TrainAndDatabase {
            push("unseen-leak", format!("`{}` of unseen identity `{}` is in training", e.image_id, rec.identity_id));
        }
    }
    for r in manifest {
        if !role_of.contains_key(r.image_id.as_str()) {
            push("missing-image", format!("`{}` has no role", r.image_id));
        }
    }

    let mut db_ids: BTreeSet<&str> = BTreeSet::new();
    let mut query_ids: BTreeSet<&str> = BTreeSet::new();
    let mut sets: BTreeMap<Role, (usize, BTreeSet<&str>)> = BTreeMap::new();
    let mut latest_db: BTreeMap<&str, i64> = BTreeMap::new();
    let mut earliest_query: BTreeMap<&str, i64> = BTreeMap::new();
    for (img, role) in &role_of {
        let rec = by_id[img];
        let ident = rec.identity_id.as_str();
        let slot = sets.entry(*role).or_default();
        slot.0 += 1;
        slot.1.insert(ident);
        if role.in_database() {
            db_ids.insert(ident);
        } else {
            query_ids.insert(ident);
        }
        if let Some(ts) = rec.timestamp {
            if role.in_database() {
                let e = latest_db.entry(ident).or_insert(ts);
                *e = (*e).max(ts);
            } else {
                let e = earliest_query.entry(ident).or_insert(ts);
                *e = (*e).min(ts);
            }
        }
    }
    for ident in query_ids.difference(&db_ids) {
        push("open-set-query", format!("identity `{ident}` has queries but no database image"));
    }
    if time_aware {
        for (ident, q) in &earliest_query {
            if let Some(d) = latest_db.get(ident) {
                if d > q {
                    push("time-order", format!("identity `{ident}`: database image at {d} after query at {q}"));
                }
            }
        }
    }
    let count = |role: Role| sets.get(&role).map(|(n, s)| RoleCount { images: *n, ids: s.len() }).unwrap_or_default();
    report.training = count(Role::TrainAndDatabase);
    report.database_only = count(Role::DatabaseOnly);
    report.query = count(Role::Query);
    report.seen_ids = group_of_identity.values().filter(|g| **g == IdGroup::SeenIds).count();
    report.unseen_ids = group_of_identity.values().filter(|g| **g == IdGroup::UnseenIds).count();
    report
}
