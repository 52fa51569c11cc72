//! Seeded synthetic datasets with planted feature–partition structure.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Record;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthParams {
    pub users: usize,
    pub features: usize,
    pub partitions: usize,
    /// Probability that a user's feature comes from its partition's planted
    /// set rather than the shared background.
    pub association_strength: f64,
    /// Exponent of the rank-frequency law over features (0 = uniform).
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl SynthParams {
    pub fn new(users: usize, features: usize, partitions: usize, association_strength: f64, seed: u64) -> Self {
        Self {
            users,
            features,
            partitions,
            association_strength,
            zipf_exponent: 1.0,
            seed,
        }
    }
}

pub fn feature_name(i: usize) -> String {
    format!("f{i:05}")
}

pub fn partition_name(i: usize) -> String {
    format!("p{i:03}")
}

/// Partition that feature `i` is planted in.
pub fn home_partition(feature: usize, partitions: usize) -> usize {
    feature % partitions
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (0..n).map(|i| 1.0 / ((i + 1) as f64).powf(exponent)).collect()
}

/// One record per user, observation 1. Users are spread uniformly over
/// partitions. With probability `association_strength` a user's feature is
/// drawn from the features planted in its partition, otherwise from all
/// features; both draws follow the same Zipf popularity.
pub fn synth_generate(params: &SynthParams) -> Result<Vec<Record>> {
    let SynthParams {
        users,
        features,
        partitions,
        association_strength,
        zipf_exponent,
        seed,
    } = *params;
    if users == 0 || features == 0 || partitions == 0 {
        return Err(Error::InvalidArgument("users, features and partitions must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&association_strength) {
        return Err(Error::InvalidArgument(format!(
            "association strength must lie in [0,1], got {association_strength}"
        )));
    }
    let weights = zipf_weights(features, zipf_exponent);
    let background = WeightedIndex::new(&weights).expect("positive weights");
    // Planted draws: per partition, the features whose home it is.
    let planted: Vec<Option<(Vec<usize>, WeightedIndex<f64>)>> = (0..partitions)
        .map(|p| {
            let members: Vec<usize> = (0..features).filter(|&f| home_partition(f, partitions) == p).collect();
            if members.is_empty() {
                return None;
            }
            let w: Vec<f64> = members.iter().map(|&f| weights[f]).collect();
            Some((members, WeightedIndex::new(&w).expect("positive weights")))
        })
        .collect();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..features).map(feature_name).collect();
    let pnames: Vec<String> = (0..partitions).map(partition_name).collect();
    let out = (0..users)
        .map(|u| {
            let p = rng.random_range(0..partitions);
            let f = match &planted[p] {
                Some((members, dist)) if rng.random_bool(association_strength) => members[dist.sample(&mut rng)],
                _ => background.sample(&mut rng),
            };
            Record::new(format!("u{u:08}"), names[f].clone(), pnames[p].clone(), 1.0)
        })
        .collect();
    Ok(out)
}

/// Keyword → entity → organization data for a two-fold cascade.
///
/// Fold 1 holds documents tagged with keywords; documents about the planted
/// topic mostly use the planted keywords. Fold 2 holds postings, each with one
/// `org` record for its organization and `keyword` records for the keywords
/// it mentions; postings by planted organizations mostly mention planted
/// keywords.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CascadeParams {
    pub documents: usize,
    pub topic_share: f64,
    pub planted_keywords: usize,
    pub other_keywords: usize,
    pub keywords_per_document: usize,
    /// Chance that a topic document's keyword is on-topic.
    pub keyword_purity: f64,
    pub planted_orgs: usize,
    pub other_orgs: usize,
    pub postings_per_planted_org: usize,
    pub postings_per_other_org: usize,
    /// Chance that a posting by a non-planted org mentions a planted keyword.
    pub leak: f64,
    pub seed: u64,
}

impl Default for CascadeParams {
    fn default() -> Self {
        Self {
            documents: 20_000,
            topic_share: 0.2,
            planted_keywords: 10,
            other_keywords: 200,
            keywords_per_document: 3,
            keyword_purity: 0.8,
            planted_orgs: 10,
            other_orgs: 90,
            postings_per_planted_org: 300,
            postings_per_other_org: 200,
            leak: 0.05,
            seed: 0,
        }
    }
}

pub const KEYWORD_KIND: &str = "keyword";
pub const ORG_KIND: &str = "org";

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedCascade {
    pub fold1: Vec<Record>,
    pub fold2: Vec<Record>,
    /// Seed keywords handed to fold 1 (a subset of the planted ones).
    pub seeds: Vec<String>,
    pub planted_keywords: Vec<String>,
    pub planted_orgs: Vec<String>,
}

pub fn planted_cascade(params: &CascadeParams, seed_count: usize) -> PlantedCascade {
    let mut rng = ChaCha12Rng::seed_from_u64(params.seed);
    let planted_kw: Vec<String> = (0..params.planted_keywords).map(|i| format!("iot_kw{i:03}")).collect();
    let other_kw: Vec<String> = (0..params.other_keywords).map(|i| format!("kw{i:04}")).collect();
    let pick = |rng: &mut ChaCha12Rng, on_topic: bool| -> String {
        if on_topic {
            planted_kw[rng.random_range(0..planted_kw.len())].clone()
        } else {
            other_kw[rng.random_range(0..other_kw.len())].clone()
        }
    };

    let mut fold1 = Vec::new();
    for d in 0..params.documents {
        let topic = rng.random_bool(params.topic_share);
        let id = format!("doc{d:07}");
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..params.keywords_per_document {
            let on_topic = topic && rng.random_bool(params.keyword_purity);
            seen.insert(pick(&mut rng, on_topic));
        }
        fold1.extend(seen.into_iter().map(|kw| Record::new(id.clone(), kw, KEYWORD_KIND, 1.0)));
    }

    let planted_orgs: Vec<String> = (0..params.planted_orgs).map(|i| format!("iot_org{i:03}")).collect();
    let other_orgs: Vec<String> = (0..params.other_orgs).map(|i| format!("org{i:04}")).collect();
    let mut fold2 = Vec::new();
    let mut posting = 0usize;
    let orgs = planted_orgs
        .iter()
        .map(|o| (o, true, params.postings_per_planted_org))
        .chain(other_orgs.iter().map(|o| (o, false, params.postings_per_other_org)));
    for (org, planted, postings) in orgs {
        for _ in 0..postings {
            let id = format!("post{posting:07}");
            posting += 1;
            fold2.push(Record::new(id.clone(), org.clone(), ORG_KIND, 1.0));
            let on_topic = if planted {
                rng.random_bool(params.keyword_purity)
            } else {
                rng.random_bool(params.leak)
            };
            fold2.push(Record::new(id, pick(&mut rng, on_topic), KEYWORD_KIND, 1.0));
        }
    }

    PlantedCascade {
        fold1,
        fold2,
        seeds: planted_kw.iter().take(seed_count).cloned().collect(),
        planted_keywords: planted_kw,
        planted_orgs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeSet, HashMap};

    #[test]
    fn same_seed_same_stream() {
        let p = SynthParams::new(500, 40, 4, 0.5, 11);
        assert_eq!(synth_generate(&p).unwrap(), synth_generate(&p).unwrap());
        let q = SynthParams { seed: 12, ..p.clone() };
        assert_ne!(synth_generate(&p).unwrap(), synth_generate(&q).unwrap());
    }

    #[test]
    fn full_strength_confines_features_to_home() {
        let p = SynthParams::new(5000, 50, 5, 1.0, 3);
        let mut homes: HashMap<String, BTreeSet<String>> = HashMap::new();
        for r in synth_generate(&p).unwrap() {
            homes.entry(r.feature).or_default().insert(r.partition);
        }
        for (f, parts) in homes {
            let idx: usize = f[1..].parse().unwrap();
            assert_eq!(parts.len(), 1);
            assert!(parts.contains(&partition_name(home_partition(idx, 5))));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(synth_generate(&SynthParams::new(0, 1, 1, 0.5, 0)).is_err());
        assert!(synth_generate(&SynthParams::new(1, 1, 1, 1.5, 0)).is_err());
    }

    #[test]
    fn cascade_layout() {
        let c = planted_cascade(&CascadeParams::default(), 2);
        assert_eq!(c.seeds.len(), 2);
        assert!(c.fold1.iter().all(|r| r.partition == KEYWORD_KIND));
        let orgs = c.fold2.iter().filter(|r| r.partition == ORG_KIND).count();
        assert_eq!(orgs, 10 * 300 + 90 * 200);
    }
}
