//! Discrete-event model of the endorse → order → cut → validate → commit
//! pipeline, and a load generator that sweeps it.
//!
//! The simulator is a calibrated trend model, not a measurement: absolute
//! numbers depend on the constants in [`SimParams`].

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::prf_u64;
use crate::ledger::{TxType, DEFAULT_BLOCK_SIZE, DEFAULT_BLOCK_TIMEOUT_MS};

/// Transactions needed for one complete model training.
pub const TXS_PER_TRAINING: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkLatency {
    pub lo_ms: f64,
    pub hi_ms: f64,
}

impl LinkLatency {
    pub const INTRA_DC: LinkLatency = LinkLatency { lo_ms: 1.0, hi_ms: 10.0 };
    pub const INTER_DC: LinkLatency = LinkLatency { lo_ms: 300.0, hi_ms: 3000.0 };

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi_ms > self.lo_ms {
            rng.random_range(self.lo_ms..=self.hi_ms)
        } else {
            self.lo_ms
        }
    }
}

/// Peers are split evenly across `sites`; the client sits at site 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub peers: usize,
    pub sites: usize,
    pub intra: LinkLatency,
    pub inter: LinkLatency,
}

impl NetworkTopology {
    pub fn new(peers: usize, sites: usize) -> Self {
        NetworkTopology {
            peers,
            sites,
            intra: LinkLatency::INTRA_DC,
            inter: LinkLatency::INTER_DC,
        }
    }

    pub fn label(&self) -> String {
        format!("{}DC", self.sites)
    }

    pub fn site_of(&self, peer: usize) -> usize {
        peer % self.sites.max(1)
    }

    fn link(&self, peer: usize) -> &LinkLatency {
        if self.site_of(peer) == 0 {
            &self.intra
        } else {
            &self.inter
        }
    }

    /// Endorsement quorum `ceil(p/2) + 1`, capped at `p`.
    pub fn quorum(&self) -> usize {
        (self.peers.div_ceil(2) + 1).min(self.peers)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.peers == 0 {
            return Err("peer count must be positive".into());
        }
        if !(1..=2).contains(&self.sites) {
            return Err("sites must be 1 or 2".into());
        }
        for l in [self.intra, self.inter] {
            if !(l.lo_ms >= 0.0 && l.lo_ms <= l.hi_ms) {
                return Err(format!("bad link latency range {}..{}", l.lo_ms, l.hi_ms));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub send_rate: f64,
    pub total_txs: usize,
    /// Proportions over transaction types; must sum to 1.
    pub mix: Vec<(TxType, f64)>,
}

impl LoadProfile {
    /// Equal shares of all fifteen transaction types.
    pub fn uniform(send_rate: f64, total_txs: usize) -> Self {
        let share = 1.0 / TxType::ALL.len() as f64;
        LoadProfile {
            send_rate,
            total_txs,
            mix: TxType::ALL.iter().map(|t| (*t, share)).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.send_rate > 0.0 && self.send_rate.is_finite()) {
            return Err("send rate must be positive".into());
        }
        if self.mix.is_empty() || self.mix.iter().any(|(_, p)| !(*p >= 0.0)) {
            return Err("mix proportions must be non-negative".into());
        }
        let total: f64 = self.mix.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("mix proportions sum to {total}, not 1"));
        }
        Ok(())
    }

    fn pick(&self, u: f64) -> TxType {
        let mut acc = 0.0;
        for (t, p) in &self.mix {
            acc += p;
            if u < acc {
                return *t;
            }
        }
        self.mix.last().expect("validated mix").0
    }
}

/// Calibration constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Orderer service capacity, tx/s.
    pub orderer_rate: f64,
    /// Validation work budget: a block of `b` transactions takes
    /// `b * quorum / validation_capacity` seconds to validate.
    pub validation_capacity: f64,
    pub block_size: usize,
    pub block_timeout_ms: f64,
    /// Transactions committing after this time are reported as in flight.
    pub horizon_ms: Option<f64>,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            orderer_rate: 1200.0,
            validation_capacity: 3400.0,
            block_size: DEFAULT_BLOCK_SIZE,
            block_timeout_ms: DEFAULT_BLOCK_TIMEOUT_MS as f64,
            horizon_ms: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub committed: usize,
    pub throughput_tps: f64,
    pub lat_mean_ms: f64,
    pub lat_p50_ms: f64,
    pub lat_p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub topology: NetworkTopology,
    pub send_rate: f64,
    pub total_txs: usize,
    pub seed: u64,
    pub runs: usize,
    pub submitted: usize,
    pub committed: usize,
    pub in_flight: usize,
    /// Most transactions waiting between orderer arrival and validation.
    pub peak_backlog: usize,
    pub min_link_ms: f64,
    pub aggregate: TypeMetrics,
    pub per_type: BTreeMap<TxType, TypeMetrics>,
}

/// Complete trainings per second a throughput sustains.
pub fn models_per_second(throughput_tps: f64) -> f64 {
    throughput_tps / TXS_PER_TRAINING
}

struct Tx {
    tx_type: TxType,
    submit: f64,
    at_orderer: f64,
    commit: f64,
}

fn round_trip(topo: &NetworkTopology, peer: usize, rng: &mut impl Rng) -> f64 {
    let link = topo.link(peer);
    link.sample(rng) + link.sample(rng)
}

/// Simulates one run.
pub fn run(topo: &NetworkTopology, profile: &LoadProfile, params: &SimParams, seed: u64) -> MetricsReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = topo.quorum();
    let interval = 1000.0 / profile.send_rate;
    let mut peers: Vec<usize> = (0..topo.peers).collect();

    let mut txs: Vec<Tx> = (0..profile.total_txs)
        .map(|i| {
            let submit = i as f64 * interval;
            let tx_type = profile.pick(rng.random());
            let mut endorse: f64 = 0.0;
            for j in 0..q {
                let k = rng.random_range(j..peers.len());
                peers.swap(j, k);
                endorse = endorse.max(round_trip(topo, peers[j], &mut rng));
            }
            Tx {
                tx_type,
                submit,
                at_orderer: submit + endorse,
                commit: f64::INFINITY,
            }
        })
        .collect();

    // The orderer serves in arrival order; ties keep submission order.
    let mut order: Vec<usize> = (0..txs.len()).collect();
    order.sort_by(|&a, &b| txs[a].at_orderer.total_cmp(&txs[b].at_orderer));
    let service = 1000.0 / params.orderer_rate;
    let mut busy_until = 0.0f64;
    let mut ordered_at: Vec<f64> = Vec::with_capacity(order.len());
    for &i in &order {
        let done = busy_until.max(txs[i].at_orderer) + service;
        busy_until = done;
        ordered_at.push(done);
    }

    let val_per_tx = q as f64 * 1000.0 / params.validation_capacity;
    let mut val_free = 0.0f64;
    let mut validated_at = Vec::with_capacity(order.len());
    let mut start = 0;
    while start < order.len() {
        let timeout = ordered_at[start] + params.block_timeout_ms;
        let full = ordered_at.get(start + params.block_size - 1).copied();
        let cut = full.map_or(timeout, |t| t.min(timeout));
        let end = (start..order.len().min(start + params.block_size))
            .take_while(|&p| ordered_at[p] <= cut)
            .last()
            .map_or(start + 1, |p| p + 1);
        let validated = val_free.max(cut) + (end - start) as f64 * val_per_tx;
        val_free = validated;
        validated_at.extend(std::iter::repeat_n(validated, end - start));
        for &i in &order[start..end] {
            let peer = rng.random_range(0..topo.peers);
            txs[i].commit = validated + topo.link(peer).sample(&mut rng);
        }
        start = end;
    }

    // Transactions that reached the orderer but are not yet validated.
    let mut peak_backlog = 0;
    let mut head = 0;
    for (pos, &i) in order.iter().enumerate() {
        while validated_at[head] <= txs[i].at_orderer {
            head += 1;
        }
        peak_backlog = peak_backlog.max(pos + 1 - head);
    }

    let horizon = params.horizon_ms.unwrap_or(f64::INFINITY);
    let committed: Vec<&Tx> = txs.iter().filter(|t| t.commit <= horizon).collect();
    let mut per_type = BTreeMap::new();
    for (t, _) in &profile.mix {
        let of_type: Vec<&Tx> = committed.iter().copied().filter(|x| x.tx_type == *t).collect();
        per_type.insert(*t, metrics(&of_type));
    }
    let min_link_ms = if topo.sites > 1 {
        topo.intra.lo_ms.min(topo.inter.lo_ms)
    } else {
        topo.intra.lo_ms
    };
    MetricsReport {
        topology: *topo,
        send_rate: profile.send_rate,
        total_txs: profile.total_txs,
        seed,
        runs: 1,
        submitted: txs.len(),
        committed: committed.len(),
        in_flight: txs.len() - committed.len(),
        peak_backlog,
        min_link_ms,
        aggregate: metrics(&committed),
        per_type,
    }
}

fn metrics(txs: &[&Tx]) -> TypeMetrics {
    if txs.is_empty() {
        return TypeMetrics::default();
    }
    let first = txs.iter().map(|t| t.submit).fold(f64::INFINITY, f64::min);
    let last = txs.iter().map(|t| t.commit).fold(f64::NEG_INFINITY, f64::max);
    let mut lat: Vec<f64> = txs.iter().map(|t| t.commit - t.submit).collect();
    let mean = lat.iter().sum::<f64>() / lat.len() as f64;
    lat.sort_by(f64::total_cmp);
    TypeMetrics {
        committed: txs.len(),
        throughput_tps: txs.len() as f64 * 1000.0 / (last - first),
        lat_mean_ms: mean,
        lat_p50_ms: percentile(&lat, 0.50),
        lat_p95_ms: percentile(&lat, 0.95),
    }
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub topology: NetworkTopology,
    pub profile: LoadProfile,
}

/// Sweep definition, as read from a bench config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub peers: Vec<usize>,
    pub send_rates: Vec<f64>,
    pub sites: Vec<usize>,
    pub total_txs: usize,
    pub runs: usize,
    pub seed: u64,
    pub params: SimParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            peers: vec![4, 8, 16, 24],
            send_rates: vec![500.0, 1000.0, 1500.0],
            sites: vec![1, 2],
            total_txs: 100_000,
            runs: 30,
            seed: 7,
            params: SimParams::default(),
        }
    }
}

impl SweepConfig {
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &sites in &self.sites {
            for &peers in &self.peers {
                for &rate in &self.send_rates {
                    cells.push(SweepCell {
                        topology: NetworkTopology::new(peers, sites),
                        profile: LoadProfile::uniform(rate, self.total_txs),
                    });
                }
            }
        }
        cells
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.runs == 0 || self.total_txs == 0 {
            return Err("runs and total_txs must be positive".into());
        }
        if self.params.block_size == 0 || !(self.params.orderer_rate > 0.0) || !(self.params.validation_capacity > 0.0) {
            return Err("simulator parameters must be positive".into());
        }
        for cell in self.cells() {
            cell.topology.validate()?;
            cell.profile.validate()?;
        }
        Ok(())
    }
}

/// Seed of run `run` of cell `cell`.
pub fn run_seed(base: u64, cell: usize, run: usize) -> u64 {
    let mut material = base.to_be_bytes().to_vec();
    material.extend_from_slice(&(cell as u64).to_be_bytes());
    prf_u64(&material, run as u64)
}

/// Runs every cell `runs` times and averages each metric over the runs.
pub fn sweep(cells: &[SweepCell], params: &SimParams, runs: usize, seed: u64) -> Vec<MetricsReport> {
    cells
        .par_iter()
        .enumerate()
        .map(|(ci, cell)| {
            let reports: Vec<MetricsReport> = (0..runs)
                .map(|r| run(&cell.topology, &cell.profile, params, run_seed(seed, ci, r)))
                .collect();
            average(&reports, seed)
        })
        .collect()
}

fn average(reports: &[MetricsReport], seed: u64) -> MetricsReport {
    let n = reports.len() as f64;
    let mean_of = |pick: &dyn Fn(&MetricsReport) -> TypeMetrics| {
        let ms: Vec<TypeMetrics> = reports.iter().map(pick).collect();
        TypeMetrics {
            committed: (ms.iter().map(|m| m.committed).sum::<usize>() as f64 / n).round() as usize,
            throughput_tps: ms.iter().map(|m| m.throughput_tps).sum::<f64>() / n,
            lat_mean_ms: ms.iter().map(|m| m.lat_mean_ms).sum::<f64>() / n,
            lat_p50_ms: ms.iter().map(|m| m.lat_p50_ms).sum::<f64>() / n,
            lat_p95_ms: ms.iter().map(|m| m.lat_p95_ms).sum::<f64>() / n,
        }
    };
    let first = &reports[0];
    let per_type = first
        .per_type
        .keys()
        .map(|t| (*t, mean_of(&|r: &MetricsReport| r.per_type[t])))
        .collect();
    MetricsReport {
        seed,
        runs: reports.len(),
        submitted: reports.iter().map(|r| r.submitted).sum(),
        committed: reports.iter().map(|r| r.committed).sum(),
        in_flight: reports.iter().map(|r| r.in_flight).sum(),
        peak_backlog: reports.iter().map(|r| r.peak_backlog).max().unwrap_or(0),
        aggregate: mean_of(&|r: &MetricsReport| r.aggregate),
        per_type,
        ..first.clone()
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "topology",
    "sites",
    "peers",
    "send_rate",
    "tx_type",
    "throughput_tps",
    "lat_mean_ms",
    "lat_p50_ms",
    "lat_p95_ms",
    "seed",
    "models_per_second",
];

/// One row per (cell, tx type) plus an `ALL` row per cell.
pub fn write_csv<W: Write>(reports: &[MetricsReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        let rows = r
            .per_type
            .iter()
            .map(|(t, m)| (t.name(), m))
            .chain(std::iter::once(("ALL", &r.aggregate)));
        for (name, m) in rows {
            w.write_record([
                r.topology.label(),
                r.topology.sites.to_string(),
                r.topology.peers.to_string(),
                format!("{}", r.send_rate),
                name.to_string(),
                format!("{:.3}", m.throughput_tps),
                format!("{:.3}", m.lat_mean_ms),
                format!("{:.3}", m.lat_p50_ms),
                format!("{:.3}", m.lat_p95_ms),
                r.seed.to_string(),
                format!("{:.3}", models_per_second(m.throughput_tps)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Largest deviation of per-type throughput from its mean, as a fraction of
/// the mean.
pub fn type_spread(report: &MetricsReport) -> f64 {
    let tps: Vec<f64> = report.per_type.values().map(|m| m.throughput_tps).collect();
    if tps.is_empty() {
        return 0.0;
    }
    let mean = tps.iter().sum::<f64>() / tps.len() as f64;
    if mean == 0.0 {
        return 0.0;
    }
    let lo = tps.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / mean
}
