//! Acceptance criteria, one line each. Exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ppmarket::actors::{centralized_fedavg, run_scenario, FraudStrategy, ScenarioConfig, ScenarioRun};
use ppmarket::assets::{CloudInstance, DataSubset, FraudRecord, TcStatus, TjStatus, TrainCouple, TrainJob};
use ppmarket::chaincode::{select_subsets, train_job_id, ChaincodeError};
use ppmarket::dataplane::{split, DataError, LabeledDataset, Row};
use ppmarket::digest::{sha256_hex, Digest};
use ppmarket::fedtrain::{evaluate, fed_average, gradient, local_train, ModelParams, Sample, TrainingSpec};
use ppmarket::ledger::{import_ndjson, replay_blocks, Ledger, LedgerConfig, TransactionEnvelope, TxOutcome, TxType};
use ppmarket::simnet::{models_per_second, sweep, type_spread, MetricsReport, SweepConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("end-to-end honest scenario", honest_end_to_end),
        ("fraud-tolerance sweep", fraud_tolerance),
        ("commitment properties", commitment_properties),
        ("selection coverage", selection_coverage),
        ("fedavg oracle identity", fedavg_identity),
        ("ledger determinism", ledger_determinism),
        ("benchmark trends", benchmark_trends),
        ("splitting constraints", splitting_constraints),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (verdict, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {} {verdict} {name}: {detail} ({secs:.2}s)", i + 1);
        failed += usize::from(result.is_err());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cfg: &ScenarioConfig) -> ScenarioRun {
    run_scenario(cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.name))
}

fn oracle(run: &ScenarioRun) -> ModelParams {
    let picks: Vec<Vec<usize>> = run.rounds.iter().map(|r| r.subsets.clone()).collect();
    centralized_fedavg(&run.chunks, run.config.data.features, &run.config.training.into(), &picks)
}

fn honest_end_to_end() -> Outcome {
    let start = Instant::now();
    let cfg = ScenarioConfig::standard("honest-4x3", 2024, 4, 3, 2, &[]);
    let run = run(&cfg);
    let elapsed = start.elapsed();

    let mut problems = Vec::new();
    if let Some(r) = run.failed_reports().next() {
        problems.push(format!("verification failed: {r}"));
    }
    match &run.final_model {
        Some(m) if m.bit_eq(&oracle(&run)) => {}
        Some(_) => problems.push("final model differs from the centralized oracle".into()),
        None => problems.push("training did not finish".into()),
    }
    let seen = run.valid_tx_types();
    let missing: Vec<&str> = TxType::ALL.iter().filter(|t| !seen.contains(t)).map(|t| t.name()).collect();
    if seen.len() != 15 {
        problems.push(format!("{} transaction types committed, missing {}", seen.len(), missing.join(",")));
    }
    if elapsed >= Duration::from_secs(5) {
        problems.push(format!("took {elapsed:?}"));
    }
    let summary = format!(
        "{} blocks, {} types, model bit-exact={}",
        run.ledger.blocks().len(),
        seen.len(),
        run.final_model.as_ref().is_some_and(|m| m.bit_eq(&oracle(&run)))
    );
    check(problems.is_empty(), if problems.is_empty() { summary } else { format!("{summary}; {}", problems.join("; ")) })
}

fn fraud_tolerance() -> Outcome {
    let start = Instant::now();
    let mut cases = Vec::new();
    for n in [3usize, 5, 7] {
        for strategy in [FraudStrategy::CopyHash, FraudStrategy::LazyModel, FraudStrategy::WrongData] {
            for f in 0..n {
                if 2 * f < n || strategy == FraudStrategy::LazyModel {
                    cases.push((n, strategy, f));
                }
            }
        }
    }
    let failures: Vec<String> = cases
        .par_iter()
        .filter_map(|&(n, strategy, f)| {
            let name = format!("{strategy:?} n={n} f={f}");
            let mut cfg = ScenarioConfig::standard(&name, 31 + n as u64, 3, n, 2, &vec![strategy; f]);
            let tolerable = 2 * f < n;
            cfg.expect.fraud_flags = if tolerable { f } else { 0 };
            cfg.expect.quorum_failure = !tolerable;
            let run = match run_scenario(&cfg) {
                Ok(r) => r,
                Err(e) => return Some(format!("{name}: {e}")),
            };
            if !tolerable {
                return run.quorum_failure.is_none().then(|| format!("{name}: no quorum failure"));
            }
            if run.quorum_failure.is_some() {
                return Some(format!("{name}: unexpected quorum failure"));
            }
            if run.flagged_endpoints() != cfg.injected() {
                return Some(format!("{name}: flagged {:?}", run.flagged_endpoints()));
            }
            if !run.final_model.as_ref().is_some_and(|m| m.bit_eq(&oracle(&run))) {
                return Some(format!("{name}: model differs from the honest oracle"));
            }
            let mismatches = run.expectation_mismatches();
            (!mismatches.is_empty()).then(|| format!("{name}: {}", mismatches.join("; ")))
        })
        .collect();
    let elapsed = start.elapsed();
    let slow = elapsed >= Duration::from_secs(60);
    let detail = format!("{} cases, {} failed", cases.len(), failures.len());
    check(
        failures.is_empty() && !slow,
        match failures.first() {
            Some(first) => format!("{detail}; first: {first}"),
            None if slow => format!("{detail}; took {elapsed:?}"),
            None => detail,
        },
    )
}

/// A ledger driven one transaction per block, with opaque tx ids.
struct Chain {
    ledger: Ledger,
    tag: String,
    ctr: u64,
}

impl Chain {
    fn new(tag: &str) -> Self {
        Chain {
            ledger: Ledger::new(LedgerConfig::default()),
            tag: tag.to_string(),
            ctr: 0,
        }
    }

    fn run(&mut self, caller: &str, tx_type: TxType, args: &[&str]) -> TxOutcome {
        self.ctr += 1;
        let tx_id = sha256_hex(&[self.tag.as_bytes(), &self.ctr.to_be_bytes()]);
        let args = args.iter().map(|a| a.to_string()).collect();
        let env = TransactionEnvelope::new(&tx_id, tx_type, caller, args, self.ledger.now());
        self.ledger.submit(env).expect("well-formed envelope");
        self.ledger.flush();
        self.ledger.outcome(&tx_id).cloned().expect("committed")
    }

    fn ok(&mut self, caller: &str, tx_type: TxType, args: &[&str]) -> String {
        let out = self.run(caller, tx_type, args);
        assert!(out.valid, "{tx_type:?} {args:?} rejected: {:?}", out.error);
        out.output.unwrap_or_default()
    }

    fn read<T: ppmarket::assets::AssetRecord>(&self, id: &str) -> T {
        self.ledger.state().read(id).unwrap_or_else(|| panic!("missing {id}"))
    }
}

struct Fixture {
    do_id: String,
    mo_id: String,
    ds: String,
    /// (ci, co) per subset.
    cis: Vec<Vec<(String, String)>>,
}

const METHOD: &str = r#"{"learning_rate":0.1,"local_epochs":1,"mask_id":"k"}"#;

fn fixture(c: &mut Chain, m: usize, n: usize, label: &str) -> Fixture {
    let do_id = c.ok("", TxType::CreateDO, &[label]);
    let mo_id = c.ok("", TxType::CreateMO, &[]);
    let cos: Vec<String> = (0..n).map(|_| c.ok("", TxType::CreateCO, &[])).collect();
    let ds = c.ok(&do_id, TxType::CreateDS, &[&m.to_string(), &n.to_string(), "{}"]);
    let mut cis = Vec::new();
    for i in 0..m {
        let dss = c.ok(&do_id, TxType::CreateDSS, &[&ds, &i.to_string(), "10"]);
        cis.push(cos.iter().map(|co| (c.ok(&do_id, TxType::CreateCI, &[&dss, co]), co.clone())).collect());
    }
    Fixture { do_id, mo_id, ds, cis }
}

fn fresh_pair(rng: &mut ChaCha8Rng) -> (String, String) {
    (hex::encode(rng.random::<[u8; 32]>()), hex::encode(rng.random::<[u8; 16]>()))
}

fn flagged(c: &Chain, subject: &str) -> bool {
    c.ledger.state().all::<FraudRecord>().iter().any(|r| r.subject == subject)
}

#[derive(Default)]
struct CommitTally {
    replays: usize,
    undetected: usize,
}

fn commitment_sequence(seed: u64) -> CommitTally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (rng.random_range(2..=3), rng.random_range(2..=3));
    let mut c = Chain::new(&format!("commit-{seed}"));
    let fx = fixture(&mut c, m, n, "owner");
    let mut tally = CommitTally::default();

    let mut order: Vec<(String, String)> = fx.cis.concat();
    order.shuffle(&mut rng);
    let mut declared: Vec<(String, String)> = Vec::new();
    for (ci, co) in &order {
        if !declared.is_empty() && rng.random_bool(0.3) {
            let (h, nonce) = declared.choose(&mut rng).unwrap().clone();
            let out = c.run(co, TxType::JoinCI, &[ci, &h, &nonce]);
            tally.replays += 1;
            if out.valid || out.error != Some(ChaincodeError::DuplicateCommitment) || !flagged(&c, ci) {
                tally.undetected += 1;
            }
        }
        let (h, nonce) = fresh_pair(&mut rng);
        c.ok(co, TxType::JoinCI, &[ci, &h, &nonce]);
        declared.push((h, nonce));
    }
    for (ci, _) in &order {
        c.ok(&fx.do_id, TxType::VerifyCI, &[ci, "true"]);
    }

    let model = c.ok(&fx.mo_id, TxType::CreateMod, &["linear", "mem://m0", METHOD, "mh0"]);
    let tc = c.ok(&fx.mo_id, TxType::RequestTC, &[&fx.ds, &model]);
    c.ok(&fx.do_id, TxType::ApproveTC, &[&tc]);
    let rounds = rng.random_range(1..=3u32);
    for round in 1..=rounds {
        if round == 1 {
            c.ok(&fx.mo_id, TxType::StartRound, &[&tc]);
        } else {
            c.ok(&fx.mo_id, TxType::StartRound, &[&tc, &format!("mem://m{round}"), &format!("mh{round}")]);
        }
        let couple: TrainCouple = c.read(&tc);
        let mut jobs = Vec::new();
        for dss_id in &couple.cur_dss_ids {
            let dss: DataSubset = c.read(dss_id);
            for ci in &dss.ci_ids {
                let tj = train_job_id(&tc, ci, round);
                if c.ledger.state().read::<TrainJob>(&tj).is_some_and(|j| j.status == TjStatus::Pending) {
                    let co = c.read::<CloudInstance>(ci).co;
                    jobs.push((tj, co));
                }
            }
        }
        jobs.shuffle(&mut rng);
        let mut round_declared: Vec<(String, String)> = Vec::new();
        for (tj, co) in &jobs {
            if !round_declared.is_empty() && rng.random_bool(0.3) {
                let (h, nonce) = round_declared.choose(&mut rng).unwrap().clone();
                let out = c.run(co, TxType::UpdateTJ, &[tj, &h, &nonce, "mem://copy"]);
                tally.replays += 1;
                if out.valid || out.error != Some(ChaincodeError::DuplicateCommitment) || !flagged(&c, tj) {
                    tally.undetected += 1;
                }
                continue;
            }
            let (h, nonce) = fresh_pair(&mut rng);
            c.ok(co, TxType::UpdateTJ, &[tj, &h, &nonce, "mem://local"]);
            round_declared.push((h, nonce));
        }
        assert_eq!(c.read::<TrainCouple>(&tc).status, TcStatus::RoundDone);
    }

    // Accepted commitments must be pairwise distinct within their scope.
    let state = c.ledger.state();
    let ci_hashes: Vec<String> = state.all::<CloudInstance>().into_iter().filter_map(|ci| ci.hash).collect();
    let distinct: BTreeSet<&String> = ci_hashes.iter().collect();
    tally.undetected += ci_hashes.len() - distinct.len();
    let mut tj_hashes: BTreeMap<(String, u32), Vec<String>> = BTreeMap::new();
    for tj in state.all::<TrainJob>().into_iter().filter(|t| t.status == TjStatus::Updated) {
        tj_hashes.entry((tj.tc, tj.round)).or_default().extend(tj.model_hash);
    }
    for hashes in tj_hashes.values() {
        let distinct: BTreeSet<&String> = hashes.iter().collect();
        tally.undetected += hashes.len() - distinct.len();
    }
    tally
}

fn commitment_properties() -> Outcome {
    let tallies: Vec<CommitTally> = (0..10_000u64).into_par_iter().map(commitment_sequence).collect();
    let replays: usize = tallies.iter().map(|t| t.replays).sum();
    let undetected: usize = tallies.iter().map(|t| t.undetected).sum();
    check(
        undetected == 0 && replays > 0,
        format!("10000 sequences, {replays} replayed pairs, {undetected} undetected"),
    )
}

fn selection_coverage() -> Outcome {
    let mut problems = Vec::new();
    for m in 2..=16usize {
        for s in 0..20u64 {
            let seed = Digest::of(format!("selection-{m}-{s}").as_bytes());
            let seed = seed.as_bytes();
            for round in 1..=3 * m as u32 {
                let a = select_subsets(seed, m, round);
                if a != select_subsets(seed, m, round) {
                    problems.push(format!("m={m} seed={s} round {round} not deterministic"));
                }
                let mut covered: BTreeSet<usize> = a.into_iter().collect();
                covered.extend(select_subsets(seed, m, round + 1));
                if covered.len() != m {
                    problems.push(format!("m={m} seed={s} rounds {round},{} miss a subset", round + 1));
                }
            }
        }
    }
    let on_chain: Vec<String> = (2..=16usize)
        .into_par_iter()
        .flat_map_iter(|m| (0..20u64).map(move |s| (m, s)))
        .filter_map(|(m, s)| on_chain_selection(m, s).err())
        .collect();
    problems.extend(on_chain);
    check(
        problems.is_empty(),
        match problems.first() {
            None => "m in 2..=16, 20 seeds each, on-chain selections match and ignore MO inputs".into(),
            Some(p) => format!("{} problem(s), first: {p}", problems.len()),
        },
    )
}

/// Two chains that differ only in the model updates the MO attaches to
/// each StartRound must select the same subsets, and replay must agree.
fn on_chain_selection(m: usize, s: u64) -> Result<(), String> {
    let rounds = 3u32;
    let mut picks = Vec::new();
    for variant in 0..2 {
        let mut c = Chain::new(&format!("select-{m}-{s}"));
        let fx = fixture(&mut c, m, 1, &format!("owner-{s}"));
        for row in &fx.cis {
            let (ci, co) = &row[0];
            c.ok(co, TxType::JoinCI, &[ci, &sha256_hex(&[ci.as_bytes()]), "00"]);
            c.ok(&fx.do_id, TxType::VerifyCI, &[ci, "true"]);
        }
        let model = c.ok(&fx.mo_id, TxType::CreateMod, &["linear", "mem://m0", METHOD, "mh0"]);
        let tc = c.ok(&fx.mo_id, TxType::RequestTC, &[&fx.ds, &model]);
        c.ok(&fx.do_id, TxType::ApproveTC, &[&tc]);
        let mut seen = Vec::new();
        for round in 1..=rounds {
            let url = format!("mem://v{variant}-r{round}");
            let hash = sha256_hex(&[url.as_bytes()]);
            if round == 1 && variant == 0 {
                c.ok(&fx.mo_id, TxType::StartRound, &[&tc]);
            } else {
                c.ok(&fx.mo_id, TxType::StartRound, &[&tc, &url, &hash]);
            }
            let couple: TrainCouple = c.read(&tc);
            let seed = hex::decode(couple.selection_seed.as_deref().unwrap_or_default()).unwrap_or_default();
            let ds: ppmarket::assets::Dataset = c.read(&fx.ds);
            let expected: Vec<String> = select_subsets(&seed, m, round).into_iter().map(|i| ds.dss_ids[i].clone()).collect();
            if couple.cur_dss_ids != expected {
                return Err(format!("m={m} seed={s}: round {round} differs from the seeded selection"));
            }
            seen.push(couple.cur_dss_ids.clone());
            for dss_id in &couple.cur_dss_ids {
                let dss: DataSubset = c.read(dss_id);
                let ci = &dss.ci_ids[0];
                let co = c.read::<CloudInstance>(ci).co;
                let tj = train_job_id(&tc, ci, round);
                let h = sha256_hex(&[tj.as_bytes(), &[variant]]);
                c.ok(&co, TxType::UpdateTJ, &[&tj, &h, "01", "mem://local"]);
            }
        }
        let replayed = c.ledger.replay().map_err(|e| e.to_string())?;
        if replayed.canonical_bytes() != c.ledger.state().canonical_bytes() {
            return Err(format!("m={m} seed={s}: replay differs"));
        }
        picks.push(seen);
    }
    if picks[0] != picks[1] {
        return Err(format!("m={m} seed={s}: MO model updates changed the selection"));
    }
    Ok(())
}

fn random_samples(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Vec<Sample> {
    (0..rows)
        .map(|_| Sample {
            x: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            y: rng.random_range(-2.0..2.0),
        })
        .collect()
}

fn fedavg_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_avg, mut worst_grad) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let d = rng.random_range(1..=5);
        let k = rng.random_range(1..=6);
        let total = rng.random_range(k..=50);
        let mut cuts: Vec<usize> = (1..total).collect();
        cuts.shuffle(&mut rng);
        let mut cuts: Vec<usize> = cuts.into_iter().take(k - 1).collect();
        cuts.sort_unstable();
        cuts.insert(0, 0);
        cuts.push(total);
        let samples = random_samples(&mut rng, total, d);
        let p = ModelParams {
            weights: (0..=d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let spec = TrainingSpec {
            learning_rate: rng.random_range(0.01..0.5),
            local_epochs: 1,
        };
        let locals: Vec<(ModelParams, f64)> = cuts
            .windows(2)
            .map(|w| {
                let chunk = &samples[w[0]..w[1]];
                (local_train(&p, chunk, &spec).unwrap(), chunk.len() as f64)
            })
            .collect();
        let fed = fed_average(&locals).unwrap();
        let central = local_train(&p, &samples, &spec).unwrap();
        for (a, b) in fed.weights.iter().zip(&central.weights) {
            worst_avg = worst_avg.max((a - b).abs());
        }

        let g = gradient(&p, &samples).unwrap();
        let h = 1e-6;
        for (j, gj) in g.iter().enumerate() {
            let mut up = p.clone();
            up.weights[j] += h;
            let mut down = p.clone();
            down.weights[j] -= h;
            let fd = (evaluate(&up, &samples).unwrap() - evaluate(&down, &samples).unwrap()) / (2.0 * h);
            worst_grad = worst_grad.max((gj - fd).abs() / gj.abs().max(1.0));
        }
    }
    check(
        worst_avg <= 1e-12 && worst_grad <= 1e-6,
        format!("200 instances, max |fedavg - central| {worst_avg:.2e}, max gradient rel err {worst_grad:.2e}"),
    )
}

fn determinism_scenarios() -> Vec<ScenarioConfig> {
    let mut out = vec![
        ScenarioConfig::standard("honest-4x3", 2024, 4, 3, 2, &[]),
        ScenarioConfig::standard("copy", 3, 3, 3, 2, &[FraudStrategy::CopyHash]),
        ScenarioConfig::standard("lazy", 4, 3, 3, 2, &[FraudStrategy::LazyModel]),
        ScenarioConfig::standard("lazy-majority", 4, 3, 3, 2, &[FraudStrategy::LazyModel; 2]),
        ScenarioConfig::standard("wrong", 8, 3, 5, 2, &[FraudStrategy::WrongData; 2]),
    ];
    let mut collude = ScenarioConfig::standard("collude", 9, 3, 3, 1, &[]);
    collude.roster[0].bad_chunk_to = Some("co://cloud-0".into());
    out.push(collude);
    out
}

fn ledger_determinism() -> Outcome {
    let mut problems = Vec::new();
    let mut tamper_target = None;
    for cfg in determinism_scenarios() {
        let run = run(&cfg);
        let live = run.ledger.state().canonical_bytes();
        match run.ledger.replay() {
            Ok(s) if s.canonical_bytes() == live => {}
            Ok(_) => problems.push(format!("{}: replay differs", cfg.name)),
            Err(e) => problems.push(format!("{}: {e}", cfg.name)),
        }
        let export = run.ledger.export();
        let rebuilt = import_ndjson(&export).and_then(|b| Ledger::from_blocks(LedgerConfig::default(), b));
        match rebuilt {
            Ok(l) if l.state().canonical_bytes() == live && l.export() == export => {}
            Ok(_) => problems.push(format!("{}: imported ledger differs", cfg.name)),
            Err(e) => problems.push(format!("{}: import failed: {e}", cfg.name)),
        }
        if tamper_target.is_none() {
            tamper_target = Some(export);
        }
    }

    let export = tamper_target.unwrap().into_bytes();
    let config = LedgerConfig::default();
    let undetected: Vec<usize> = (0..export.len())
        .into_par_iter()
        .filter(|&i| {
            let mut alternatives = vec![export[i] ^ 0x01, export[i].wrapping_add(0x80)];
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            alternatives.push(loop {
                let b: u8 = rng.random();
                if b != export[i] {
                    break b;
                }
            });
            alternatives.into_iter().any(|b| {
                let mut bytes = export.clone();
                bytes[i] = b;
                let Ok(text) = String::from_utf8(bytes) else { return false };
                import_ndjson(&text)
                    .and_then(|blocks| replay_blocks(&config, &blocks).map(|_| ()))
                    .is_ok()
            })
        })
        .collect();
    if let Some(&i) = undetected.first() {
        problems.push(format!("{} tampered position(s) undetected, first at byte {i}", undetected.len()));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("6 scenarios replay identically; {} bytes x 3 tampers all detected", export.len())
        } else {
            problems.join("; ")
        },
    )
}

fn cell(reports: &[MetricsReport], peers: usize, sites: usize, rate: f64) -> &MetricsReport {
    reports
        .iter()
        .find(|r| r.topology.peers == peers && r.topology.sites == sites && r.send_rate == rate)
        .expect("cell present in the default sweep")
}

fn benchmark_trends() -> Outcome {
    let start = Instant::now();
    let cfg = SweepConfig::default();
    let reports = sweep(&cfg.cells(), &cfg.params, cfg.runs, cfg.seed);
    let elapsed = start.elapsed();
    let mut problems = Vec::new();

    let base = cell(&reports, 4, 1, 1000.0).aggregate.throughput_tps;
    let mps = models_per_second(base);
    if base < 950.0 || !(63.0..=70.0).contains(&mps) {
        problems.push(format!("(a) 4-peer 1DC at 1000 tps: {base:.1} tx/s, {mps:.1} models/s"));
    }
    let mut ratios = Vec::new();
    for rate in [1000.0, 1500.0] {
        let ratio = cell(&reports, 4, 2, rate).aggregate.throughput_tps / cell(&reports, 8, 2, rate).aggregate.throughput_tps;
        ratios.push(format!("{ratio:.2}"));
        if !(1.3..=1.7).contains(&ratio) {
            problems.push(format!("(b) 2DC 4->8 peers at {rate} tps: factor {ratio:.3}"));
        }
    }
    let mut lat = Vec::new();
    for sites in [1, 2] {
        let slow = cell(&reports, 4, sites, 1500.0).aggregate.lat_mean_ms;
        let fast = cell(&reports, 4, sites, 1000.0).aggregate.lat_mean_ms;
        lat.push(format!("{:.1}x", slow / fast));
        if slow < 2.0 * fast {
            problems.push(format!("(c) 4-peer {sites}DC: {slow:.0} ms vs {fast:.0} ms"));
        }
    }
    let spread = reports.iter().map(type_spread).fold(0.0, f64::max);
    if spread >= 0.2 {
        problems.push(format!("(d) per-type spread {spread:.3}"));
    }
    if elapsed >= Duration::from_secs(600) {
        problems.push(format!("sweep took {elapsed:?}"));
    }
    let summary = format!(
        "{base:.1} tx/s, {mps:.1} models/s, peer factor {}, latency {}, max spread {spread:.3}",
        ratios.join("/"),
        lat.join("/")
    );
    check(problems.is_empty(), if problems.is_empty() { summary } else { format!("{summary}; {}", problems.join("; ")) })
}

fn splitting_constraints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut problems = Vec::new();
    let (mut emitted, mut infeasible) = (0, 0);
    for case in 0..100 {
        let c = rng.random_range(3..=6u32);
        let m = rng.random_range(3..=12usize);
        let mut rows = Vec::new();
        for label in 0..c {
            for _ in 0..rng.random_range(2..=60) {
                rows.push(Row {
                    features: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    label,
                });
            }
        }
        rows.shuffle(&mut rng);
        let data = LabeledDataset { rows, label_count: c };
        let totals: Vec<usize> = (0..c).map(|l| data.rows.iter().filter(|r| r.label == l).count()).collect();
        match split(&data, m, &case.to_string().into_bytes()) {
            Ok(chunks) => {
                emitted += 1;
                let mut ids: Vec<usize> = chunks.iter().flat_map(|ch| ch.row_ids.clone()).collect();
                ids.sort_unstable();
                if ids != (0..data.rows.len()).collect::<Vec<_>>() {
                    problems.push(format!("case {case}: not a partition"));
                }
                for ch in &chunks {
                    let held: BTreeSet<u32> = ch.rows.iter().map(|r| r.label).collect();
                    if held.len() >= c as usize {
                        problems.push(format!("case {case}: chunk {} holds every label", ch.subset_index));
                    }
                    for l in 0..c {
                        let count = ch.rows.iter().filter(|r| r.label == l).count();
                        if 2 * count > totals[l as usize] {
                            problems.push(format!("case {case}: chunk {} holds {count}/{} of label {l}", ch.subset_index, totals[l as usize]));
                        }
                    }
                }
            }
            Err(DataError::Infeasible(_)) => {
                infeasible += 1;
                // Pigeonhole: a label spread over k permitted chunks puts at
                // least ceil(N/k) rows in one of them.
                let justified = (0..c as usize).any(|l| {
                    let k = (0..m).filter(|i| i % c as usize != l).count();
                    let n = totals[l];
                    k == 0 || 2 * n.div_ceil(k) > n
                });
                if !justified {
                    problems.push(format!("case {case}: rejected a feasible dataset"));
                }
            }
            Err(e) => problems.push(format!("case {case}: {e}")),
        }
    }
    let two = LabeledDataset {
        rows: (0..10).map(|i| Row { features: vec![i as f64], label: i % 2 }).collect(),
        label_count: 2,
    };
    if !matches!(split(&two, 2, b"s"), Err(DataError::Infeasible(_))) {
        problems.push("C=2, m=2 was not rejected as infeasible".into());
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("100 datasets, {emitted} split, {infeasible} infeasible; C=2 m=2 rejected")
        } else {
            problems.join("; ")
        },
    )
}
