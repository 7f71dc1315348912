//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use multisage_core::ann::{exact_knn, recall, refine_pool, AnnIndex, IndexConfig, MedoidCache};
use multisage_core::eval::{
    batch_tasks, diversity_relevance_sweep, next_action_task, EvalConfig, EvalContext, Model,
};
use multisage_core::pipeline::{batch_infer, merge_logs, reconcile_daily, OnlineState};
use multisage_core::representation::{
    compute_importance, compute_medoid, date_of, windowed_engagements, ClusterSummary, ProfileParams,
    ProfileSource, ProfileVersion, UserProfile,
};
use multisage_core::retrieval::{recommend, RetrievalConfig};
use multisage_core::synth::{generate_world, World, WorldConfig};
use multisage_core::types::SECONDS_PER_DAY;
use multisage_core::ward::{extract_clusters, naive_ward_oracle, ward_cluster, ChainStats};
use multisage_core::{ActionLog, ActionRecord, PinId, PinStore, Rng};

const SEEDS: [u64; 3] = [7, 8, 9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

/// Chain statistics gathered across every clustering the suite runs.
#[derive(Default)]
struct Lemmas {
    runs: usize,
    violations: usize,
    double_pushes: usize,
    over_bound: usize,
}

impl Lemmas {
    fn record(&mut self, m: usize, stats: &ChainStats) {
        self.runs += 1;
        self.violations += stats.reducibility_violations;
        self.double_pushes += stats.double_pushes;
        if stats.pushes > ChainStats::push_bound(m) {
            self.over_bound += 1;
        }
    }
}

struct Corpus {
    world: World,
    generated_in: Duration,
}

struct Suite {
    lemmas: Lemmas,
    corpora: BTreeMap<u64, Corpus>,
    indexes: BTreeMap<u64, AnnIndex>,
}

impl Suite {
    fn corpus(&mut self, seed: u64) -> &Corpus {
        self.corpora.entry(seed).or_insert_with(|| {
            let started = Instant::now();
            let world = generate_world(&WorldConfig {
                seed,
                ..Default::default()
            })
            .expect("default world");
            Corpus {
                world,
                generated_in: started.elapsed(),
            }
        })
    }
}

fn eval_config(seed: u64) -> EvalConfig {
    EvalConfig {
        seed,
        ..Default::default()
    }
}

fn random_points(rng: &mut Rng, m: usize, d: usize) -> Vec<Vec<f32>> {
    (0..m).map(|_| (0..d).map(|_| rng.normal() as f32).collect()).collect()
}

fn c1_ward_oracle(suite: &mut Suite) -> Outcome {
    let started = Instant::now();
    let mut rng = Rng::new(20240101);
    let mut cost_mismatch = 0;
    let mut cut_mismatch = 0;
    for _ in 0..200 {
        let m = 2 + rng.index(63);
        let d = 1 + rng.index(8);
        let points = random_points(&mut rng, m, d);
        let chain = ward_cluster(&points, 0.0).expect("chain");
        suite.lemmas.record(m, &chain.stats);
        let oracle = naive_ward_oracle(&points).expect("oracle");
        let a = chain.history.sorted_costs();
        let b = oracle.sorted_costs();
        let same = a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()) + 1e-300);
        if !same {
            cost_mismatch += 1;
        }
        let top = b.last().copied().unwrap_or(1.0);
        for _ in 0..5 {
            let alpha = rng.uniform() * top * 1.1;
            if extract_clusters(&chain.history, alpha).clusters() != extract_clusters(&oracle, alpha).clusters() {
                cut_mismatch += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    outcome(
        cost_mismatch == 0 && cut_mismatch == 0 && elapsed < Duration::from_secs(30),
        format!(
            "200 instances (m ≤ 64, d ≤ 8): {cost_mismatch} merge-cost mismatches, {cut_mismatch}/1000 cut mismatches, {} (< 30s)",
            secs(elapsed)
        ),
    )
}

/// Clusters every default-corpus user's window (seed 7) and checks each
/// medoid against an exhaustive argmin; the runs also feed the lemma counters.
fn c3_medoids(suite: &mut Suite) -> Outcome {
    let params = ProfileParams::default();
    let world = &suite.corpus(7).world;
    let now = multisage_core::representation::end_of_day(world.config.start + chrono::Days::new(world.config.days as u64 - 1));
    let mut checked = 0;
    let mut wrong = 0;
    let mut runs = Vec::new();
    for log in &world.logs {
        let w = windowed_engagements(log, &world.pins, &params, now);
        if w.actions.is_empty() {
            continue;
        }
        let pins: Vec<PinId> = w.actions.iter().map(|a| a.0).collect();
        let points: Vec<&[f32]> = w.actions.iter().map(|a| a.2).collect();
        let out = ward_cluster(&points, params.alpha).expect("ward");
        runs.push((points.len(), out.stats));
        for members in out.clusters.clusters() {
            if members.len() > 64 {
                continue;
            }
            let got = compute_medoid(members, &pins, &points).expect("medoid");
            let best = members
                .iter()
                .map(|&i| {
                    let score: f64 = members
                        .iter()
                        .map(|&j| {
                            points[i]
                                .iter()
                                .zip(points[j])
                                .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                                .sum::<f64>()
                        })
                        .sum();
                    (score, pins[i])
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .expect("non-empty cluster");
            checked += 1;
            if got != best.1 {
                wrong += 1;
            }
        }
    }
    for (m, stats) in runs {
        suite.lemmas.record(m, &stats);
    }
    outcome(
        wrong == 0 && checked > 0,
        format!("{checked} clusters of size ≤ 64 over 500 users: {wrong} differ from exhaustive argmin"),
    )
}

fn c2_lemmas(suite: &mut Suite) -> Outcome {
    // Extra tie-heavy inputs on an integer grid.
    let mut rng = Rng::new(99);
    for _ in 0..200 {
        let m = 2 + rng.index(63);
        let points: Vec<Vec<f32>> = (0..m).map(|_| (0..3).map(|_| rng.index(4) as f32).collect()).collect();
        let out = ward_cluster(&points, 1.0).expect("ward");
        suite.lemmas.record(m, &out.stats);
    }
    let l = &suite.lemmas;
    outcome(
        l.violations == 0 && l.double_pushes == 0 && l.over_bound == 0,
        format!(
            "{} clusterings: {} reducibility violations, {} double pushes, {} runs above 2(m−1)+m pushes",
            l.runs, l.violations, l.double_pushes, l.over_bound
        ),
    )
}

fn c4_importance() -> Outcome {
    let now = 1_000 * SECONDS_PER_DAY;
    let mut rng = Rng::new(4);
    let mut worst: f64 = 0.0;
    for n in 1..200usize {
        let ts: Vec<u64> = (0..n).map(|_| now - rng.below(400 * SECONDS_PER_DAY)).collect();
        worst = worst.max((compute_importance(ts, 0.0, now) - n as f64).abs());
    }
    let single = compute_importance([now - 30 * SECONDS_PER_DAY], 0.01, now);
    let err = (single - (-0.3f64).exp()).abs();
    outcome(
        worst <= 1e-12 && err <= 1e-12,
        format!("λ=0 max |importance − cardinality| = {worst:.1e}; 30-day action at λ=0.01 off e^(−0.3) by {err:.1e}"),
    )
}

fn c5_next_action(suite: &mut Suite) -> Outcome {
    let started = Instant::now();
    let models = [
        Model::Oracle,
        Model::KMeansOracle { k: 3 },
        Model::KMeansLargest { k: 3 },
        Model::DecayAvg { lambda: 0.01 },
        Model::LastPin,
    ];
    let mut structural = true;
    let mut ordered = false;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let world = &suite.corpus(seed).world;
        let r = next_action_task(&models, &world.logs, &world.pins, &eval_config(seed)).expect("next action");
        let a = &r.accuracy;
        structural &= a[0] >= a[1] && a[1] >= a[2] && r.chronology.violations == 0;
        let strict = a[0] > a[1] && a[1] > a[3] && a[3] > a[4];
        if seed == SEEDS[0] {
            ordered = strict;
        }
        lines.push(format!(
            "seed {seed}: Oracle {:.3} > KMeansOracle {:.3} > DecayAvg {:.3} > LastPin {:.3} [{}], KMeansLargest {:.3}",
            a[0],
            a[1],
            a[3],
            a[4],
            if strict { "holds" } else { "broken" },
            a[2]
        ));
    }
    let gen: Duration = SEEDS.iter().map(|s| suite.corpora[s].generated_in).sum();
    let elapsed = started.elapsed() + gen;
    outcome(
        ordered && structural && elapsed < Duration::from_secs(120),
        format!(
            "{}; structural bounds on every seed: {}; {} incl. generation (< 120s)",
            lines.join("; "),
            if structural { "hold" } else { "broken" },
            secs(elapsed)
        ),
    )
}

fn c6_retrieval_ranking(suite: &mut Suite) -> Outcome {
    let started = Instant::now();
    let models = [
        Model::pinnersage(3),
        Model::pinnersage(1),
        Model::DecayAvg { lambda: 0.01 },
        Model::LastPin,
    ];
    let mut all = true;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let world = &suite.corpus(seed).world;
        let index =
            AnnIndex::build(&world.pins, world.pins.ids(), &IndexConfig::default(), &mut Rng::new(seed)).expect("index");
        let ctx = EvalContext::new(&world.pins, &index, eval_config(seed)).expect("context");
        let r = batch_tasks(&ctx, &models, &world.logs, None).expect("batch tasks");
        let s = &r.scores;
        let rec = s[0].recall > s[1].recall && s[1].recall > s[2].recall && s[2].recall > s[3].recall;
        let rp = s[0].r_precision > s[1].r_precision
            && s[1].r_precision > s[2].r_precision
            && s[2].r_precision > s[3].r_precision;
        all &= rec && rp && r.chronology.violations == 0;
        lines.push(format!(
            "seed {seed}: recall {:.3}/{:.3}/{:.3}/{:.3}, R-prec {:.3}/{:.3}/{:.3}/{:.3}",
            s[0].recall,
            s[1].recall,
            s[2].recall,
            s[3].recall,
            s[0].r_precision,
            s[1].r_precision,
            s[2].r_precision,
            s[3].r_precision
        ));
        drop(ctx);
        suite.indexes.insert(seed, index);
    }
    let elapsed = started.elapsed();
    outcome(
        all && elapsed < Duration::from_secs(300),
        format!(
            "PinnerSage(e=3) > PinnerSage(e=1) > DecayAvg > LastPin; {}; {} (< 300s)",
            lines.join("; "),
            secs(elapsed)
        ),
    )
}

fn c7_sweep(suite: &mut Suite) -> Outcome {
    let world = &suite.corpora[&7].world;
    let index = &suite.indexes[&7];
    let users: HashSet<u64> = world.truth.iter().filter(|t| t.interests.len() >= 3).map(|t| t.user).collect();
    let ctx = EvalContext::new(&world.pins, index, eval_config(7)).expect("context");
    let rows = diversity_relevance_sweep(&ctx, &[1, 2, 3, 4], &world.logs, Some(&users)).expect("sweep");
    let div_ok = rows[0].diversity <= rows[1].diversity && rows[1].diversity <= rows[2].diversity;
    let early = rows[1].relevance - rows[0].relevance;
    let late = rows[3].relevance - rows[2].relevance;
    let curve: Vec<String> = rows
        .iter()
        .map(|r| format!("e={} rel {:.3} div {:.3}", r.e, r.relevance, r.diversity))
        .collect();
    outcome(
        div_ok && late < early,
        format!(
            "{} users with ≥ 3 interests: {}; relevance gain e1→2 {early:.3} vs e3→4 {late:.3}",
            users.len(),
            curve.join(", ")
        ),
    )
}

fn ann_recall(store: &PinStore, queries: &[Vec<f32>], cfg: &IndexConfig, seed: u64) -> (f64, Duration, Duration) {
    let started = Instant::now();
    let index = AnnIndex::build(store, store.ids(), cfg, &mut Rng::new(seed)).expect("index");
    let build = started.elapsed();
    let started = Instant::now();
    let found: Vec<_> = queries.iter().map(|q| index.query(q, 10).expect("query")).collect();
    let per_query = started.elapsed() / queries.len() as u32;
    let total: f64 = queries
        .iter()
        .zip(&found)
        .map(|(q, f)| recall(f, &exact_knn(store, store.ids(), q, 10).expect("exact")))
        .sum();
    (total / queries.len() as f64, build, per_query)
}

fn c8_ann() -> Outcome {
    let cfg = IndexConfig::default();
    // 101k generator pins; 1000 random ones are held out as queries.
    let world = generate_world(&WorldConfig {
        pins_per_topic: 4050,
        background_pins: 20_000,
        n_users: 1,
        seed: 11,
        ..Default::default()
    })
    .expect("world");
    let mut rng = Rng::new(8);
    let mut ids: Vec<PinId> = world.pins.ids().to_vec();
    rng.shuffle(&mut ids);
    let held: HashSet<PinId> = ids[..1000].iter().copied().collect();
    let queries: Vec<Vec<f32>> = ids[..1000].iter().map(|&p| world.pins.embedding(p).unwrap().to_vec()).collect();
    let store = PinStore::from_entries(
        world.pins.dimension(),
        world
            .pins
            .iter()
            .filter(|(p, _, _)| !held.contains(p))
            .map(|(p, v, q)| (p, v.to_vec(), q)),
    )
    .expect("store");
    let (r, build, per_query) = ann_recall(&store, &queries, &cfg, 1);

    // Isotropic Gaussian vectors, reported for reference only.
    let mut rng = Rng::new(5);
    let iso = PinStore::from_entries(64, (0..100_000u64).map(|p| (p, random_points(&mut rng, 1, 64).remove(0), 1.0)))
        .expect("store");
    let iso_queries = random_points(&mut rng, 1000, 64);
    let (iso_r, _, _) = ann_recall(&iso, &iso_queries, &cfg, 1);

    outcome(
        r >= 0.9 && build < Duration::from_secs(180) && per_query < Duration::from_millis(2),
        format!(
            "{} generator pins, M=16, build beam 200, query beam 100: recall@10 {r:.4} (≥ 0.9), build {} (< 180s), mean query {:.3} ms (< 2 ms); isotropic Gaussian reference recall@10 {iso_r:.4}",
            store.len(),
            secs(build),
            per_query.as_secs_f64() * 1e3
        ),
    )
}

fn profile(user: u64, medoids: &[PinId]) -> UserProfile {
    let mut p = UserProfile::empty(
        user,
        ProfileVersion {
            date: NaiveDate::from_ymd_opt(2024, 1, 30).unwrap(),
            source: ProfileSource::Batch,
        },
    );
    for (i, &m) in medoids.iter().enumerate() {
        p.summaries.push(ClusterSummary {
            medoid: m,
            importance: 3.0 - i as f64,
            member_count: 1,
        });
    }
    p
}

fn c9_cache_refine(suite: &mut Suite) -> Outcome {
    let world = &suite.corpora[&7].world;
    let index = &suite.indexes[&7];
    let ids = world.pins.ids();
    let mut rng = Rng::new(9);
    let shared: Vec<PinId> = (0..30).map(|_| ids[rng.index(ids.len())]).collect();
    let profiles: Vec<UserProfile> = (0..1000u64)
        .map(|u| {
            let medoids: Vec<PinId> = if u % 2 == 0 {
                (0..3).map(|_| shared[rng.index(shared.len())]).collect::<HashSet<_>>().into_iter().collect()
            } else {
                (0..3).map(|_| ids[rng.index(ids.len())]).collect()
            };
            let mut medoids = medoids;
            medoids.sort_unstable();
            profile(u, &medoids)
        })
        .collect();
    let cfg = RetrievalConfig::default();
    let run = |cache: Option<&MedoidCache>| {
        let before = index.traversals();
        let sets: Vec<_> = profiles
            .iter()
            .map(|p| {
                recommend(p, index, cache, &world.pins, &cfg, &HashSet::new(), &mut Rng::stream(1, p.user)).expect("recommend")
            })
            .collect();
        (sets, index.traversals() - before)
    };
    let (plain, t_off) = run(None);
    let cache = MedoidCache::new(1 << 16).expect("cache");
    let (cached, t_on) = run(Some(&cache));
    let reduction = 1.0 - t_on as f64 / t_off as f64;

    // Plant exact copies of 500 pool pins under fresh ids.
    let base: Vec<(PinId, Vec<f32>, f32)> = world.pins.iter().take(10_000).map(|(p, v, q)| (p, v.to_vec(), q)).collect();
    let next_id = world.pins.ids().iter().max().unwrap() + 1;
    let mut planted = Vec::new();
    let mut entries = base.clone();
    for i in 0..500u64 {
        let (_, v, q) = &base[rng.index(base.len())];
        planted.push(next_id + i);
        entries.push((next_id + i, v.clone(), *q));
    }
    let store = PinStore::from_entries(world.pins.dimension(), entries).expect("store");
    let refined = refine_pool(&store, &IndexConfig::default()).expect("refine");
    let kept: HashSet<PinId> = refined.accepted.iter().copied().collect();
    let removed = planted.iter().filter(|p| !kept.contains(p)).count() as f64 / planted.len() as f64;

    outcome(
        reduction >= 0.4 && removed >= 0.95 && plain == cached,
        format!(
            "traversals {t_off} → {t_on} with cache ({:.1}% fewer, ≥ 40%); results identical: {}; dedup removed {:.1}% of planted duplicates (≥ 95%)",
            reduction * 100.0,
            plain == cached,
            removed * 100.0
        ),
    )
}

fn small_world_config() -> WorldConfig {
    WorldConfig {
        n_users: 60,
        pins_per_topic: 200,
        background_pins: 2000,
        seed: 3,
        ..Default::default()
    }
}

fn c10_convergence() -> Outcome {
    let world = generate_world(&small_world_config()).expect("world");
    let params = ProfileParams::default();
    let mut checked = 0;
    let mut mismatched = 0;
    let mut rng = Rng::new(10);
    for d in [10usize, 20, 29] {
        let day_start = world.config.day_start(d);
        let day = date_of(day_start);
        let history: Vec<ActionLog> = world
            .logs
            .iter()
            .map(|l| l.window(0, day_start))
            .collect();
        let day_logs: Vec<ActionLog> = world
            .logs
            .iter()
            .map(|l| {
                let recs: Vec<ActionRecord> = l
                    .engagements()
                    .filter(|r| r.timestamp >= day_start && r.timestamp < day_start + SECONDS_PER_DAY)
                    .take(20)
                    .copied()
                    .collect();
                ActionLog::new(l.user(), recs)
            })
            .collect();
        let (batch, _) = batch_infer(&history, &world.pins, &params, day.pred_opt().unwrap()).expect("batch");
        let (scratch, _) = batch_infer(&merge_logs(&history, &day_logs), &world.pins, &params, day).expect("scratch");
        let expected = scratch.encode();
        let events: Vec<(u64, ActionRecord)> = day_logs
            .iter()
            .flat_map(|l| l.records().iter().map(move |r| (l.user(), *r)))
            .collect();
        for _ in 0..20 {
            let mut order = events.clone();
            rng.shuffle(&mut order);
            let mut state = OnlineState::new();
            for (user, rec) in order {
                let _ = state.apply(&batch, user, rec, &world.pins, &params).expect("apply");
            }
            let (reconciled, _) =
                reconcile_daily(&mut state, &history, &day_logs, &world.pins, &params, day).expect("reconcile");
            checked += 1;
            if reconciled.encode() != expected || state.overlay_count() != 0 {
                mismatched += 1;
            }
        }
    }
    outcome(
        mismatched == 0,
        format!("{checked} random interleavings over 3 days (≤ 20 updates per user): {mismatched} differ from a from-scratch batch run"),
    )
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_multisage"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn smoke_run(dir: &Path) -> Result<(), String> {
    std::fs::write(
        dir.join("run.conf"),
        "seed = 5\nworld.n_users = 60\nworld.pins_per_topic = 200\nworld.background_pins = 2000\n\
         embeddings = embeddings.bin\nactions = actions.jsonl\ninterests = interests.jsonl\n\
         store = store.jsonl\nindex = index.bin\n",
    )
    .map_err(|e| e.to_string())?;
    let c = ["--config", "run.conf"];
    let steps: [&[&str]; 7] = [
        &["gen", "--out-dir", "."],
        &["batch"],
        &["index", "build"],
        &["retrieve", "--out", "recommendations.jsonl"],
        &["eval", "--suite", "next-action", "--out-dir", "next-action"],
        &["eval", "--suite", "retrieval", "--out-dir", "retrieval"],
        &["eval", "--suite", "diversity", "--out-dir", "diversity"],
    ];
    for step in steps {
        let args: Vec<&str> = c.iter().chain(step.iter()).copied().collect();
        cli(dir, &args)?;
    }
    Ok(())
}

fn artifacts(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn c11_determinism() -> Outcome {
    let started = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        if let Err(e) = smoke_run(dir) {
            return outcome(false, format!("smoke run failed: {e}"));
        }
    }
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let recs = fa.get(Path::new("recommendations.jsonl")).map_or(0, |r| r.len());
    outcome(
        differing.is_empty() && fa.len() >= 10 && recs > 0,
        format!(
            "gen → batch → index → retrieve → eval ×3, twice: {} artifacts, differing: [{}]; {}",
            fa.len(),
            differing.join(", "),
            secs(started.elapsed())
        ),
    )
}

fn main() {
    // `cargo test -- <filter>` passes arguments; run everything regardless,
    // but honour `--list` so test discovery stays quiet.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let started = Instant::now();
    let mut suite = Suite {
        lemmas: Lemmas::default(),
        corpora: BTreeMap::new(),
        indexes: BTreeMap::new(),
    };
    // Criterion 2 aggregates chain statistics from 1 and 3, so it runs after both.
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "ward oracle equivalence", c1_ward_oracle(&mut suite)));
    results.push((3, "medoid correctness", c3_medoids(&mut suite)));
    results.push((2, "lemma runtime assertions", c2_lemmas(&mut suite)));
    results.push((4, "importance identities", c4_importance()));
    results.push((5, "next-action ordering", c5_next_action(&mut suite)));
    results.push((6, "retrieval and ranking ordering", c6_retrieval_ranking(&mut suite)));
    results.push((7, "diversity/relevance sweep", c7_sweep(&mut suite)));
    results.push((8, "ANN quality", c8_ann()));
    results.push((9, "cache and refinement", c9_cache_refine(&mut suite)));
    results.push((10, "pipeline convergence", c10_convergence()));
    results.push((11, "end-to-end determinism", c11_determinism()));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, o) in &results {
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {n:>2} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!(
        "acceptance: {}/{} criteria passed in {}",
        results.len() - failed,
        results.len(),
        secs(started.elapsed())
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
