//! Exhaustive cosine retrieval and the closed-set metrics: Rank-k, CMC and mAP.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embfile::EmbeddingFile;
use crate::split::{IdGroup, ManifestRecord, SplitAssignment};
use crate::{Error, Result};

/// image_id -> identity_id
pub type IdentityMap = HashMap<String, String>;

pub fn identity_map(manifest: &[ManifestRecord]) -> IdentityMap {
    manifest.iter().map(|r| (r.image_id.clone(), r.identity_id.clone())).collect()
}

/// Row-normalized embeddings keyed by image id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    rows: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Normalizes every row to unit L2 norm. Zero rows are rejected.
    pub fn new(ids: Vec<String>, dim: usize, mut rows: Vec<f64>) -> Result<Self> {
        if dim == 0 || rows.len() != ids.len() * dim {
            return Err(Error::param(format!(
                "embedding matrix of {} ids x {dim} dims cannot hold {} values",
                ids.len(),
                rows.len()
            )));
        }
        for (i, row) in rows.chunks_exact_mut(dim).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::param(format!("embedding `{}` has zero or non-finite norm", ids[i])));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self { ids, dim, rows })
    }

    pub fn from_file(file: &EmbeddingFile) -> Result<Self> {
        Self::new(file.ids.clone(), file.dim, file.data.iter().map(|v| f64::from(*v)).collect())
    }

    /// Keeps only rows whose id satisfies `keep`, in original order.
    pub fn filter(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (i, id) in self.ids.iter().enumerate() {
            if keep(id) {
                ids.push(id.clone());
                rows.extend_from_slice(self.row(i));
            }
        }
        Self { ids, dim: self.dim, rows }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    /// `(database image_id, cosine similarity)`, best first.
    pub ranking: Vec<(String, f64)>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact exhaustive cosine search. Ties break by ascending database id; a
/// query never retrieves its own image id.
pub fn search(queries: &EmbeddingMatrix, database: &EmbeddingMatrix, top_k: usize) -> Result<Vec<RankedResult>> {
    if queries.dim() != database.dim() {
        return Err(Error::param(format!(
            "query dimension {} != database dimension {}",
            queries.dim(),
            database.dim()
        )));
    }
    if top_k > database.len() {
        return Err(Error::param(format!("top_k {top_k} exceeds database size {}", database.len())));
    }
    let results = (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let qid = &queries.ids()[qi];
            let mut scored: Vec<(usize, f64)> = (0..database.len())
                .filter(|&di| &database.ids()[di] != qid)
                .map(|di| (di, dot(q, database.row(di))))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| database.ids()[a.0].cmp(&database.ids()[b.0])));
            scored.truncate(top_k);
            RankedResult {
                query_id: qid.clone(),
                ranking: scored.into_iter().map(|(di, s)| (database.ids()[di].clone(), s)).collect(),
            }
        })
        .collect();
    Ok(results)
}

fn identity<'a>(identity_of: &'a IdentityMap, image_id: &str) -> Result<&'a str> {
    identity_of
        .get(image_id)
        .map(String::as_str)
        .ok_or_else(|| Error::Validation(format!("image `{image_id}` has no identity")))
}

/// 1-based positions of every relevant database item in one ranking.
fn relevant_positions(result: &RankedResult, identity_of: &IdentityMap) -> Result<Vec<usize>> {
    let target = identity(identity_of, &result.query_id)?;
    let mut hits = Vec::new();
    for (i, (db_id, _)) in result.ranking.iter().enumerate() {
        if identity(identity_of, db_id)? == target {
            hits.push(i + 1);
        }
    }
    if hits.is_empty() {
        return Err(Error::Validation(format!(
            "query `{}` (identity `{target}`) has no match in the ranking; metrics need a closed set and full rankings",
            result.query_id
        )));
    }
    Ok(hits)
}

fn first_hits(results: &[RankedResult], identity_of: &IdentityMap) -> Result<Vec<usize>> {
    if results.is_empty() {
        return Err(Error::Validation("no queries to evaluate".into()));
    }
    results.iter().map(|r| relevant_positions(r, identity_of).map(|h| h[0])).collect()
}

/// Fraction of queries with at least one correct match in the top `k`.
pub fn rank_k_accuracy(results: &[RankedResult], identity_of: &IdentityMap, k: usize) -> Result<f64> {
    let firsts = first_hits(results, identity_of)?;
    Ok(firsts.iter().filter(|&&p| p <= k).count() as f64 / firsts.len() as f64)
}

/// Rank-k accuracy for every `k` in `1..=max_k` (index 0 holds Rank-1).
pub fn cmc_curve(results: &[RankedResult], identity_of: &IdentityMap, max_k: usize) -> Result<Vec<f64>> {
    let firsts = first_hits(results, identity_of)?;
    let n = firsts.len() as f64;
    let mut counts = vec![0usize; max_k + 1];
    for p in firsts {
        if p <= max_k {
            counts[p] += 1;
        }
    }
    let mut acc = 0usize;
    Ok(counts[1..]
        .iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect())
}

/// Mean over queries of the average precision over all relevant database items.
pub fn mean_average_precision(results: &[RankedResult], identity_of: &IdentityMap) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Validation("no queries to evaluate".into()));
    }
    let mut total = 0.0;
    for r in results {
        let hits = relevant_positions(r, identity_of)?;
        let ap: f64 = hits.iter().enumerate().map(|(i, &p)| (i + 1) as f64 / p as f64).sum::<f64>() / hits.len() as f64;
        total += ap;
    }
    Ok(total / results.len() as f64)
}

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 20];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_queries: usize,
    pub rank_k: BTreeMap<usize, f64>,
    pub cmc: Vec<f64>,
    pub map: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub strata: BTreeMap<String, MetricsReport>,
}

/// Rank-k at each of `ks`, the CMC up to `max_k`, and mAP.
pub fn evaluate(results: &[RankedResult], identity_of: &IdentityMap, ks: &[usize], max_k: usize) -> Result<MetricsReport> {
    let cmc = cmc_curve(results, identity_of, max_k.max(ks.iter().copied().max().unwrap_or(1)))?;
    let rank_k = ks.iter().map(|&k| (k, cmc[k - 1])).collect();
    Ok(MetricsReport {
        n_queries: results.len(),
        rank_k,
        cmc: cmc[..max_k].to_vec(),
        map: mean_average_precision(results, identity_of)?,
        strata: BTreeMap::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StratumKey {
    Clarity,
    Group,
    Dataset,
}

impl FromStr for StratumKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clarity" => Ok(StratumKey::Clarity),
            "group" => Ok(StratumKey::Group),
            "dataset" => Ok(StratumKey::Dataset),
            other => Err(Error::param(format!("unknown stratum key `{other}` (expected clarity, group or dataset)"))),
        }
    }
}

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StratumKey::Clarity => "clarity",
            StratumKey::Group => "group",
            StratumKey::Dataset => "dataset",
        })
    }
}

/// Overall metrics plus one sub-report per stratum value, named `key=value`.
/// Queries missing a stratum field land in `key=unknown`.
pub fn stratified_report(
    results: &[RankedResult],
    manifest: &[ManifestRecord],
    assignment: Option<&SplitAssignment>,
    keys: &[StratumKey],
    ks: &[usize],
    max_k: usize,
) -> Result<MetricsReport> {
    let identity_of = identity_map(manifest);
    let records: HashMap<&str, &ManifestRecord> = manifest.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let groups: Option<BTreeMap<&str, IdGroup>> = assignment.map(|a| a.groups());
    if keys.contains(&StratumKey::Group) && groups.is_none() {
        return Err(Error::param("group strata need a split assignment"));
    }
    let mut report = evaluate(results, &identity_of, ks, max_k)?;
    for key in keys {
        let mut buckets: BTreeMap<String, Vec<RankedResult>> = BTreeMap::new();
        for r in results {
            let rec = records.get(r.query_id.as_str());
            let value = match key {
                StratumKey::Clarity => rec.and_then(|r| r.clarity).map(|c| c.to_string()),
                StratumKey::Dataset => rec.and_then(|r| r.dataset.clone()),
                StratumKey::Group => groups.as_ref().and_then(|g| g.get(r.query_id.as_str())).map(|g| g.to_string()),
            };
            buckets
                .entry(format!("{key}={}", value.unwrap_or_else(|| "unknown".into())))
                .or_default()
                .push(r.clone());
        }
        for (name, subset) in buckets {
            report.strata.insert(name, evaluate(&subset, &identity_of, ks, max_k)?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn ranking(query: &str, ids: &[&str]) -> RankedResult {
        RankedResult {
            query_id: query.into(),
            ranking: ids.iter().enumerate().map(|(i, id)| (id.to_string(), 1.0 - i as f64 * 0.01)).collect(),
        }
    }

    fn ids(pairs: &[(&str, &str)]) -> IdentityMap {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn identical_vector_ranks_first() {
        let db = EmbeddingMatrix::new(vec!["a".into(), "b".into()], 2, vec![1.0, 0.0, 0.6, 0.8]).unwrap();
        let q = EmbeddingMatrix::new(vec!["q".into()], 2, vec![0.3, 0.4]).unwrap();
        let r = search(&q, &db, 2).unwrap();
        assert_eq!(r[0].ranking[0].0, "b");
        assert!((r[0].ranking[0].1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_query_falls_back_to_id_order() {
        let db = EmbeddingMatrix::new(vec!["c".into(), "a".into(), "b".into()], 3, vec![1., 0., 0., 0., 1., 0., 1., 1., 0.]).unwrap();
        let q = EmbeddingMatrix::new(vec!["q".into()], 3, vec![0., 0., 2.]).unwrap();
        let r = search(&q, &db, 3).unwrap();
        let order: Vec<&str> = r[0].ranking.iter().map(|x| x.0.as_str()).collect();
        assert_eq!(order, ["a", "b", "c"]);
        assert!(r[0].ranking.iter().all(|x| x.1.abs() < 1e-6));
    }

    #[test]
    fn search_checks_shapes_and_skips_self() {
        let db = EmbeddingMatrix::new(vec!["a".into(), "b".into()], 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let q3 = EmbeddingMatrix::new(vec!["q".into()], 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(search(&q3, &db, 1).is_err());
        let q = EmbeddingMatrix::new(vec!["a".into()], 2, vec![1.0, 0.0]).unwrap();
        assert!(search(&q, &db, 3).is_err());
        let r = search(&q, &db, 2).unwrap();
        assert_eq!(r[0].ranking.len(), 1);
        assert_eq!(r[0].ranking[0].0, "b");
        assert!(EmbeddingMatrix::new(vec!["z".into()], 2, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn rank_k_counts() {
        let map = ids(&[("q1", "x"), ("q2", "y"), ("a", "x"), ("b", "y")]);
        let filler: Vec<String> = (0..10).map(|i| format!("f{i}")).collect();
        let mut map = map;
        for f in &filler {
            map.insert(f.clone(), "z".into());
        }
        let mut r1: Vec<&str> = filler.iter().map(String::as_str).collect();
        r1.insert(1, "a");
        let mut r2: Vec<&str> = filler.iter().map(String::as_str).collect();
        r2.insert(6, "b");
        let results = vec![ranking("q1", &r1), ranking("q2", &r2)];
        assert_eq!(rank_k_accuracy(&results, &map, 1).unwrap(), 0.0);
        assert_eq!(rank_k_accuracy(&results, &map, 5).unwrap(), 0.5);
        assert_eq!(rank_k_accuracy(&results, &map, 10).unwrap(), 1.0);
        let single = vec![ranking("q1", &["a", "f0"])];
        assert_eq!(rank_k_accuracy(&single, &map, 1).unwrap(), 1.0);
        assert_eq!(rank_k_accuracy(&single, &map, 5).unwrap(), 1.0);
    }

    #[test]
    fn cmc_step_function() {
        let map = ids(&[("q", "x"), ("a", "x"), ("b", "y"), ("c", "y")]);
        let cmc = cmc_curve(&[ranking("q", &["b", "c", "a"])], &map, 5).unwrap();
        assert_eq!(cmc, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        let perfect = cmc_curve(&[ranking("q", &["a", "b", "c"])], &map, 3).unwrap();
        assert_eq!(perfect, vec![1.0; 3]);
    }

    #[test]
    fn worked_average_precision() {
        let map = ids(&[("q", "x"), ("a", "x"), ("b", "y"), ("c", "x"), ("d", "y"), ("e", "y")]);
        let m = mean_average_precision(&[ranking("q", &["a", "b", "c", "d", "e"])], &map).unwrap();
        assert!((m - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let top = mean_average_precision(&[ranking("q", &["a", "c", "b", "d", "e"])], &map).unwrap();
        assert_eq!(top, 1.0);
    }

    #[test]
    fn open_set_queries_are_rejected() {
        let map = ids(&[("q", "x"), ("a", "y")]);
        let r = vec![ranking("q", &["a"])];
        assert!(matches!(rank_k_accuracy(&r, &map, 1), Err(Error::Validation(_))));
        assert!(matches!(mean_average_precision(&r, &map), Err(Error::Validation(_))));
    }

    #[test]
    fn scaling_rows_keeps_rankings() {
        let mut rng = seeded(8);
        let raw: Vec<f64> = (0..40).map(|_| rng.random::<f64>() - 0.5).collect();
        let names: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        let db = EmbeddingMatrix::new(names.clone(), 4, raw.clone()).unwrap();
        let scaled: Vec<f64> = raw.iter().enumerate().map(|(i, v)| v * (1.0 + (i / 4) as f64 * 3.7)).collect();
        let db2 = EmbeddingMatrix::new(names, 4, scaled).unwrap();
        let q = EmbeddingMatrix::new(vec!["q".into()], 4, vec![0.1, -0.3, 0.2, 0.5]).unwrap();
        let order = |r: Vec<RankedResult>| r[0].ranking.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
        assert_eq!(order(search(&q, &db, 10).unwrap()), order(search(&q, &db2, 10).unwrap()));
    }

    #[test]
    fn strata_split_and_recombine() {
        let mut manifest = vec![];
        for (img, ident, clarity) in [("q1", "x", 1), ("q2", "y", 4), ("a", "x", 1), ("b", "y", 2)] {
            let mut r = ManifestRecord::new(img, ident);
            r.clarity = Some(clarity);
            manifest.push(r);
        }
        let results = vec![ranking("q1", &["a", "b"]), ranking("q2", &["a", "b"])];
        let rep = stratified_report(&results, &manifest, None, &[StratumKey::Clarity], &[1], 2).unwrap();
        assert_eq!(rep.rank_k[&1], 0.5);
        assert_eq!(rep.strata["clarity=1"].rank_k[&1], 1.0);
        assert_eq!(rep.strata["clarity=4"].rank_k[&1], 0.0);
        let total: usize = rep.strata.values().map(|s| s.n_queries).sum();
        assert_eq!(total, rep.n_queries);
        assert!(stratified_report(&results, &manifest, None, &[StratumKey::Group], &[1], 2).is_err());
        assert!("species".parse::<StratumKey>().is_err());
    }
}
