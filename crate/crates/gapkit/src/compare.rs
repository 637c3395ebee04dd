//! Paired comparison of methods run on the same data and masks.
//!
//! Every metric is an error, so lower is better.

use std::collections::BTreeMap;
use std::io::Write;

use statrs::distribution::{Binomial, DiscreteCDF};

use crate::config::{ExperimentConfig, Metric};
use crate::error::{config, CliResult};
use crate::experiment::{run_experiment, ExperimentResults};
use crate::io::fmt_f64;

pub const PAIRS_HEADER: [&str; 10] =
    ["metric", "missing_rate", "method_a", "method_b", "median_a", "median_b", "a_better", "b_better", "ties", "p_value"];
pub const RANKING_HEADER: [&str; 6] = ["metric", "missing_rate", "rank", "method", "median", "p_vs_best"];

/// Two-sided sign test on the nonzero paired differences.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n as u64).expect("valid binomial");
    let k = wins.min(losses) as u64;
    (2.0 * b.cdf(k)).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub metric: Metric,
    pub missing_rate: Option<f64>,
    pub method_a: String,
    pub method_b: String,
    pub median_a: f64,
    pub median_b: f64,
    pub a_better: usize,
    pub b_better: usize,
    pub ties: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub metric: Metric,
    pub missing_rate: Option<f64>,
    pub rank: usize,
    pub method: String,
    pub median: f64,
    pub p_vs_best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub pairs: Vec<PairRow>,
    pub ranking: Vec<RankRow>,
    pub runs: Vec<ExperimentResults>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Configs must agree on everything but the method and name.
fn check_aligned(configs: &[ExperimentConfig]) -> CliResult<()> {
    if configs.len() < 2 {
        return Err(config("compare needs at least two configs"));
    }
    let base = &configs[0];
    for c in &configs[1..] {
        let what = if c.dataset != base.dataset {
            "dataset"
        } else if c.mechanism != base.mechanism {
            "mechanism"
        } else if c.seed != base.seed {
            "seed"
        } else if c.replicates != base.replicates {
            "replicates"
        } else if c.sweep != base.sweep {
            "sweep"
        } else if c.metrics != base.metrics {
            "metrics"
        } else {
            continue;
        };
        return Err(config(format!("configs {:?} and {:?} differ in {what}", base.label(), c.label())));
    }
    Ok(())
}

type Key = (usize, Metric);

/// Values per (setting, metric), keyed by replicate, plus the rate of each
/// setting.
fn index(res: &ExperimentResults) -> (BTreeMap<Key, BTreeMap<usize, f64>>, BTreeMap<usize, Option<f64>>) {
    let mut values: BTreeMap<Key, BTreeMap<usize, f64>> = BTreeMap::new();
    let mut rates = BTreeMap::new();
    for r in &res.rows {
        values.entry((r.setting, r.metric)).or_default().insert(r.replicate, r.value);
        rates.insert(r.setting, r.missing_rate);
    }
    (values, rates)
}

fn paired(a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>) -> (usize, usize, usize) {
    let (mut wa, mut wb, mut ties) = (0, 0, 0);
    for (rep, va) in a {
        if let Some(vb) = b.get(rep) {
            match va.total_cmp(vb) {
                std::cmp::Ordering::Less => wa += 1,
                std::cmp::Ordering::Greater => wb += 1,
                std::cmp::Ordering::Equal => ties += 1,
            }
        }
    }
    (wa, wb, ties)
}

/// Runs each config and compares them pairwise on aligned replicates.
pub fn compare_methods(configs: &[ExperimentConfig], threads: usize) -> CliResult<Comparison> {
    check_aligned(configs)?;
    let mut labels: Vec<String> = Vec::new();
    for c in configs {
        let base = c.label();
        let mut label = base.clone();
        let mut k = 2;
        while labels.contains(&label) {
            label = format!("{base}#{k}");
            k += 1;
        }
        labels.push(label);
    }
    let runs: Vec<ExperimentResults> = configs.iter().map(|c| run_experiment(c, threads)).collect::<CliResult<_>>()?;
    let indexed: Vec<_> = runs.iter().map(index).collect();
    let mut rates = BTreeMap::new();
    let mut keys = std::collections::BTreeSet::new();
    for (values, r) in &indexed {
        rates.extend(r.iter().map(|(k, v)| (*k, *v)));
        keys.extend(values.keys().copied());
    }
    let empty = BTreeMap::new();
    let mut pairs = Vec::new();
    let mut ranking = Vec::new();
    for key in keys {
        let rate = rates.get(&key.0).copied().flatten();
        let series: Vec<&BTreeMap<usize, f64>> = indexed.iter().map(|(v, _)| v.get(&key).unwrap_or(&empty)).collect();
        let medians: Vec<f64> = series.iter().map(|s| median(s.values().copied().collect())).collect();
        for a in 0..series.len() {
            for b in a + 1..series.len() {
                let (wa, wb, ties) = paired(series[a], series[b]);
                pairs.push(PairRow {
                    metric: key.1,
                    missing_rate: rate,
                    method_a: labels[a].clone(),
                    method_b: labels[b].clone(),
                    median_a: medians[a],
                    median_b: medians[b],
                    a_better: wa,
                    b_better: wb,
                    ties,
                    p_value: sign_test(wa, wb),
                });
            }
        }
        let mut order: Vec<usize> = (0..series.len()).collect();
        order.sort_by(|&i, &j| {
            let (mi, mj) = (medians[i], medians[j]);
            mi.is_nan().cmp(&mj.is_nan()).then(mi.total_cmp(&mj)).then(i.cmp(&j))
        });
        let best = order[0];
        for (rank, &i) in order.iter().enumerate() {
            let (wa, wb, _) = paired(series[i], series[best]);
            ranking.push(RankRow {
                metric: key.1,
                missing_rate: rate,
                rank: rank + 1,
                method: labels[i].clone(),
                median: medians[i],
                p_vs_best: if i == best { 1.0 } else { sign_test(wa, wb) },
            });
        }
    }
    Ok(Comparison { pairs, ranking, runs })
}

pub fn write_pairs_csv(out: impl Write, rows: &[PairRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PAIRS_HEADER)?;
    for r in rows {
        w.write_record([
            r.metric.name().to_string(),
            r.missing_rate.map(fmt_f64).unwrap_or_default(),
            r.method_a.clone(),
            r.method_b.clone(),
            fmt_f64(r.median_a),
            fmt_f64(r.median_b),
            r.a_better.to_string(),
            r.b_better.to_string(),
            r.ties.to_string(),
            fmt_f64(r.p_value),
        ])?;
    }
    w.flush()
}

pub fn write_ranking_csv(out: impl Write, rows: &[RankRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RANKING_HEADER)?;
    for r in rows {
        w.write_record([
            r.metric.name().to_string(),
            r.missing_rate.map(fmt_f64).unwrap_or_default(),
            r.rank.to_string(),
            r.method.clone(),
            fmt_f64(r.median),
            fmt_f64(r.p_vs_best),
        ])?;
    }
    w.flush()
}
