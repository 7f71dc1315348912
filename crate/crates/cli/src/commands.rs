use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;
use tracing::info;

use multisage_core::ann::{refine_pool, AnnIndex, MedoidCache};
use multisage_core::eval::{
    batch_tasks, diversity_relevance_sweep, next_action_task, EvalContext, EvalReport, ModelRow, Model, Summary,
};
use multisage_core::io::{read_actions, read_embeddings, read_events, write_actions, write_atomic, write_embeddings};
use multisage_core::pipeline::{batch_infer, OnlineState, ProfileStore};
use multisage_core::representation::date_of;
use multisage_core::retrieval::recommend;
use multisage_core::synth::{generate_world, Interest};
use multisage_core::ward::ward_cluster;
use multisage_core::{ActionLog, PinStore, Rng, UserId};

use crate::{require, CliError, Command, Config, IndexCommand, Suite};

/// Runs one subcommand; the returned text goes to stdout.
pub fn dispatch(command: Command, mut cfg: Config) -> Result<String, CliError> {
    match command {
        Command::Gen { out_dir, users } => {
            if let Some(n) = users {
                cfg.world.n_users = n;
            }
            let cfg = cfg.finish()?;
            let dir = require("out_dir", &out_dir, &cfg.paths.out_dir)?.to_path_buf();
            gen(&cfg, &dir)
        }
        Command::Batch {
            actions,
            embeddings,
            out,
            alpha,
            lambda,
            as_of,
        } => {
            if let Some(a) = alpha {
                cfg.profile.alpha = a;
            }
            if let Some(l) = lambda {
                cfg.profile.lambda = l;
            }
            let cfg = cfg.finish()?;
            let actions = require("actions", &actions, &cfg.paths.actions)?;
            let embeddings = require("embeddings", &embeddings, &cfg.paths.embeddings)?;
            let out = require("store", &out, &cfg.paths.store)?;
            batch(&cfg, actions, embeddings, out, as_of)
        }
        Command::Replay {
            events,
            store,
            embeddings,
            out,
            alpha,
        } => {
            if let Some(a) = alpha {
                cfg.profile.alpha = a;
            }
            let cfg = cfg.finish()?;
            let store = require("store", &store, &cfg.paths.store)?;
            let embeddings = require("embeddings", &embeddings, &cfg.paths.embeddings)?;
            replay(&cfg, &events, store, embeddings, out.as_deref())
        }
        Command::Index(sub) => index(sub, cfg),
        Command::Retrieve {
            store,
            index,
            embeddings,
            actions,
            user,
            e,
            budget,
            no_cache,
            out,
        } => {
            if let Some(e) = e {
                cfg.retrieval.sampled_medoids = e;
            }
            if let Some(b) = budget {
                cfg.retrieval.budget = b;
            }
            let cfg = cfg.finish()?;
            let inputs = RetrieveInputs {
                store: require("store", &store, &cfg.paths.store)?,
                index: require("index", &index, &cfg.paths.index)?,
                embeddings: require("embeddings", &embeddings, &cfg.paths.embeddings)?,
                actions: actions.as_deref().or(cfg.paths.actions.as_deref()),
                user,
                cache: !no_cache,
                out: out.as_deref(),
            };
            retrieve(&cfg, inputs)
        }
        Command::Eval {
            suite,
            embeddings,
            actions,
            interests,
            index,
            out_dir,
        } => {
            let cfg = cfg.finish()?;
            let inputs = EvalInputs {
                embeddings: require("embeddings", &embeddings, &cfg.paths.embeddings)?,
                actions: require("actions", &actions, &cfg.paths.actions)?,
                interests: interests.as_deref().or(cfg.paths.interests.as_deref()),
                index: index.as_deref().or(cfg.paths.index.as_deref()),
                out_dir: out_dir.as_deref().or(cfg.paths.out_dir.as_deref()),
            };
            eval(&cfg, suite, inputs)
        }
        Command::Bench(args) => {
            let cfg = cfg.finish()?;
            bench(&cfg, &args.sizes, args.dim, args.repeats)
        }
    }
}

fn to_line(value: &serde_json::Value) -> String {
    let mut s = value.to_string();
    s.push('\n');
    s
}

fn gen(cfg: &Config, dir: &Path) -> Result<String, CliError> {
    let started = Instant::now();
    let world = generate_world(&cfg.world)?;
    write_embeddings(&dir.join("embeddings.bin"), &world.pins)?;
    write_actions(&dir.join("actions.jsonl"), &world.logs)?;

    let mut labels = Vec::new();
    for line in world.label_lines() {
        serde_json::to_writer(&mut labels, &line).map_err(multisage_core::Error::from)?;
        labels.push(b'\n');
    }
    write_atomic(&dir.join("labels.jsonl"), &labels)?;

    let mut interests = Vec::new();
    for t in &world.truth {
        serde_json::to_writer(&mut interests, &json!({"user": t.user, "interests": t.interests}))
            .map_err(multisage_core::Error::from)?;
        interests.push(b'\n');
    }
    write_atomic(&dir.join("interests.jsonl"), &interests)?;

    let records: usize = world.logs.iter().map(ActionLog::len).sum();
    info!(pins = world.pins.len(), users = world.logs.len(), records, elapsed = ?started.elapsed(), "corpus written");
    Ok(to_line(&json!({
        "pins": world.pins.len(),
        "users": world.logs.len(),
        "records": records,
        "seed": cfg.world.seed,
        "out_dir": dir,
    })))
}

fn batch(cfg: &Config, actions: &Path, embeddings: &Path, out: &Path, as_of: Option<chrono::NaiveDate>) -> Result<String, CliError> {
    let pins = read_embeddings(embeddings)?;
    let logs = read_actions(actions)?;
    let as_of = match as_of {
        Some(d) => d,
        None => logs
            .iter()
            .filter_map(|l| l.records().last())
            .map(|r| r.timestamp)
            .max()
            .map(date_of)
            .ok_or_else(|| CliError::invalid("as_of", "no actions to infer a date from; pass --as-of"))?,
    };
    let (store, report) = batch_infer(&logs, &pins, &cfg.profile, as_of)?;
    store.save(out)?;
    let clusters: usize = store.iter().map(|p| p.summaries.len()).sum();
    info!(users = report.users, profiles = report.profiles, "batch inference done");
    Ok(to_line(&json!({
        "as_of": as_of.to_string(),
        "users": report.users,
        "profiles": report.profiles,
        "clusters": clusters,
        "unknown_pins": report.unknown_pins,
        "truncated": report.truncated,
    })))
}

fn replay(cfg: &Config, events: &Path, store: &Path, embeddings: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let pins = read_embeddings(embeddings)?;
    let batch = ProfileStore::load(store)?;
    let events = read_events(events)?;
    let mut state = OnlineState::new();
    state.replay(&batch, &events, &pins, &cfg.profile)?;
    if let Some(out) = out {
        state.served_store(&batch).save(out)?;
    }
    let c = state.counters();
    Ok(to_line(&json!({
        "events": events.len(),
        "applied": c.applied,
        "unknown_pins": c.unknown_pins,
        "not_engagement": c.not_engagement,
        "overlays": state.overlay_count(),
    })))
}

fn index(sub: IndexCommand, mut cfg: Config) -> Result<String, CliError> {
    match sub {
        IndexCommand::Build {
            embeddings,
            out,
            m,
            build_beam,
            query_beam,
        } => {
            if let Some(m) = m {
                cfg.index.max_neighbors = m;
            }
            if let Some(b) = build_beam {
                cfg.index.build_beam = b;
            }
            if let Some(b) = query_beam {
                cfg.index.query_beam = b;
            }
            let cfg = cfg.finish()?;
            let pins = read_embeddings(require("embeddings", &embeddings, &cfg.paths.embeddings)?)?;
            let out = require("index", &out, &cfg.paths.index)?;
            let started = Instant::now();
            let refined = refine_pool(&pins, &cfg.index)?;
            let index = AnnIndex::build(&pins, &refined.accepted, &cfg.index, &mut Rng::new(cfg.seed))?;
            index.save(out)?;
            info!(nodes = index.len(), elapsed = ?started.elapsed(), "index built");
            Ok(to_line(&json!({
                "pins": pins.len(),
                "indexed": index.len(),
                "duplicates": refined.duplicates,
                "low_quality": refined.low_quality,
                "max_level": index.max_level(),
                "version": format!("{:016x}", index.version()),
            })))
        }
        IndexCommand::Query {
            index,
            embeddings,
            pin,
            k,
            beam,
        } => {
            let cfg = cfg.finish()?;
            let index = AnnIndex::load(require("index", &index, &cfg.paths.index)?)?;
            let pins = read_embeddings(require("embeddings", &embeddings, &cfg.paths.embeddings)?)?;
            let q = pins.embedding(pin).ok_or(multisage_core::Error::UnknownPin(pin))?;
            let beam = beam.unwrap_or(index.config().query_beam);
            let found = index.query_with_beam(q, k, beam)?;
            let list: Vec<_> = found.iter().map(|&(p, d)| json!({"pin": p, "distance": d})).collect();
            Ok(to_line(&json!({"pin": pin, "neighbors": list})))
        }
        IndexCommand::Bench {
            index,
            embeddings,
            queries,
            beams,
            k,
        } => {
            let cfg = cfg.finish()?;
            let index = AnnIndex::load(require("index", &index, &cfg.paths.index)?)?;
            let pins = read_embeddings(require("embeddings", &embeddings, &cfg.paths.embeddings)?)?;
            index_bench(&cfg, &index, &pins, queries, &beams, k)
        }
    }
}

fn index_bench(cfg: &Config, index: &AnnIndex, pins: &PinStore, queries: usize, beams: &[usize], k: usize) -> Result<String, CliError> {
    if index.is_empty() {
        return Err(CliError::invalid("index", "is empty"));
    }
    if beams.contains(&0) || k == 0 {
        return Err(CliError::invalid("beams", "beams and k must be positive"));
    }
    let mut rng = Rng::new(cfg.seed);
    let picked: Vec<&[f32]> = (0..queries)
        .map(|_| pins.embedding(index.ids()[rng.index(index.len())]).expect("indexed pins have embeddings"))
        .collect();
    let truth = picked
        .par_iter()
        .map(|q| index.brute_force(q, k))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = format!("query_beam,recall@{k},mean_query_us\n");
    for &beam in beams {
        let started = Instant::now();
        let found = picked
            .iter()
            .map(|q| index.query_with_beam(q, k, beam))
            .collect::<Result<Vec<_>, _>>()?;
        let micros = started.elapsed().as_secs_f64() * 1e6 / queries.max(1) as f64;
        let recall = found
            .iter()
            .zip(&truth)
            .map(|(f, t)| multisage_core::ann::recall(f, t))
            .sum::<f64>()
            / queries.max(1) as f64;
        let _ = writeln!(out, "{beam},{recall:.4},{micros:.1}");
    }
    Ok(out)
}

struct RetrieveInputs<'a> {
    store: &'a Path,
    index: &'a Path,
    embeddings: &'a Path,
    actions: Option<&'a Path>,
    user: Option<UserId>,
    cache: bool,
    out: Option<&'a Path>,
}

fn retrieve(cfg: &Config, inputs: RetrieveInputs<'_>) -> Result<String, CliError> {
    let store = ProfileStore::load(inputs.store)?;
    let index = AnnIndex::load(inputs.index)?;
    let pins = read_embeddings(inputs.embeddings)?;
    let acted: std::collections::HashMap<UserId, HashSet<u64>> = match inputs.actions {
        Some(path) => read_actions(path)?
            .iter()
            .map(|l| (l.user(), l.engagements().map(|r| r.pin).collect()))
            .collect(),
        None => Default::default(),
    };
    let profiles: Vec<_> = match inputs.user {
        Some(u) => vec![store
            .get(u)
            .ok_or_else(|| CliError::invalid("user", format!("no profile for user {u}")))?],
        None => store.iter().collect(),
    };
    let cache = inputs.cache.then(|| MedoidCache::new(cfg.eval.cache_capacity)).transpose()?;
    let empty = HashSet::new();
    let sets = profiles
        .par_iter()
        .map(|p| {
            let mut rng = Rng::stream(cfg.seed, p.user);
            let acted = acted.get(&p.user).unwrap_or(&empty);
            recommend(p, &index, cache.as_ref(), &pins, &cfg.retrieval, acted, &mut rng).map(|set| (p.user, set))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut text = String::new();
    for (user, set) in &sets {
        text.push_str(&to_line(&json!({"user": user, "medoids": set.medoids, "pins": set.pins})));
    }
    if let Some(c) = &cache {
        info!(hits = c.hits(), misses = c.misses(), "medoid cache");
    }
    match inputs.out {
        Some(out) => {
            write_atomic(out, text.as_bytes())?;
            let total: usize = sets.iter().map(|(_, s)| s.len()).sum();
            Ok(to_line(&json!({"users": sets.len(), "recommendations": total, "out": out})))
        }
        None => Ok(text),
    }
}

struct EvalInputs<'a> {
    embeddings: &'a Path,
    actions: &'a Path,
    interests: Option<&'a Path>,
    index: Option<&'a Path>,
    out_dir: Option<&'a Path>,
}

#[derive(Deserialize)]
struct InterestLine {
    user: UserId,
    interests: Vec<Interest>,
}

fn read_interest_counts(path: &Path) -> Result<Vec<(UserId, usize)>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: InterestLine = serde_json::from_str(&line)
            .map_err(|e| CliError::invalid("interests", format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push((parsed.user, parsed.interests.len()));
    }
    Ok(out)
}

/// Models compared in the retrieval and ranking tables, baseline first.
pub fn retrieval_models(cfg: &Config) -> Vec<Model> {
    let (alpha, lambda, e) = (cfg.profile.alpha, cfg.profile.lambda, cfg.retrieval.sampled_medoids);
    let mut models = vec![
        Model::LastPin,
        Model::DecayAvg { lambda },
        Model::PinnerSage {
            alpha,
            lambda,
            sampled: 1,
            summary: Summary::Medoid,
        },
        Model::KMeans {
            k: cfg.kmeans_k,
            lambda,
            sampled: e,
        },
        Model::CompleteLinkage { alpha, lambda, sampled: e },
        Model::PinnerSage {
            alpha,
            lambda,
            sampled: e,
            summary: Summary::Centroid,
        },
        Model::PinnerSage {
            alpha,
            lambda,
            sampled: e,
            summary: Summary::Medoid,
        },
    ];
    if e == 1 {
        models.remove(2);
    }
    models
}

/// Models in the next-action table, baseline first.
pub fn next_action_models(cfg: &Config) -> Vec<Model> {
    vec![
        Model::LastPin,
        Model::DecayAvg {
            lambda: cfg.profile.lambda,
        },
        Model::KMeansLargest { k: 3 },
        Model::KMeansOracle { k: 3 },
        Model::Oracle,
    ]
}

fn eval(cfg: &Config, suite: Suite, inputs: EvalInputs<'_>) -> Result<String, CliError> {
    let pins = read_embeddings(inputs.embeddings)?;
    let logs = read_actions(inputs.actions)?;
    let started = Instant::now();
    let mut report = EvalReport::default();
    match suite {
        Suite::NextAction => {
            let models = next_action_models(cfg);
            let result = next_action_task(&models, &logs, &pins, &cfg.eval)?;
            check_chronology(result.chronology.violations)?;
            report.rows = models
                .iter()
                .zip(&result.accuracy)
                .map(|(m, &a)| ModelRow {
                    model: m.name(),
                    next_action: Some(a),
                    scores: None,
                })
                .collect();
        }
        Suite::Retrieval | Suite::Ranking | Suite::Diversity => {
            let index = match inputs.index {
                Some(path) => AnnIndex::load(path)?,
                None => {
                    let refined = refine_pool(&pins, &cfg.index)?;
                    AnnIndex::build(&pins, &refined.accepted, &cfg.index, &mut Rng::new(cfg.seed))?
                }
            };
            let ctx = EvalContext::new(&pins, &index, cfg.eval.clone())?;
            if suite == Suite::Diversity {
                let path = inputs.interests.ok_or(CliError::Missing("interests"))?;
                let users: HashSet<UserId> = read_interest_counts(path)?
                    .into_iter()
                    .filter(|&(_, n)| n >= cfg.sweep_min_interests)
                    .map(|(u, _)| u)
                    .collect();
                report.sweep = diversity_relevance_sweep(&ctx, &cfg.sweep, &logs, Some(&users))?;
            } else {
                let models = retrieval_models(cfg);
                let result = batch_tasks(&ctx, &models, &logs, None)?;
                check_chronology(result.chronology.violations)?;
                report.rows = models
                    .iter()
                    .zip(result.scores)
                    .map(|(m, s)| ModelRow {
                        model: m.name(),
                        next_action: None,
                        scores: Some(s),
                    })
                    .collect();
            }
        }
    }
    info!(suite = ?suite, elapsed = ?started.elapsed(), "evaluation done");
    let markdown = report.to_markdown();
    if let Some(dir) = inputs.out_dir {
        write_atomic(&dir.join("report.md"), markdown.as_bytes())?;
        let csv = if report.sweep.is_empty() {
            report.to_csv()
        } else {
            sweep_csv(&report)
        };
        write_atomic(&dir.join("report.csv"), csv.as_bytes())?;
    }
    Ok(markdown)
}

fn sweep_csv(report: &EvalReport) -> String {
    let mut out = String::from("e,relevance,recall,diversity,relevance_lift,diversity_lift\n");
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for s in &report.sweep {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.e,
            s.relevance,
            s.recall,
            s.diversity,
            opt(s.relevance_lift),
            opt(s.diversity_lift)
        );
    }
    out
}

fn check_chronology(violations: usize) -> Result<(), CliError> {
    if violations > 0 {
        return Err(CliError::invalid(
            "eval",
            format!("{violations} training records were not earlier than their test batch"),
        ));
    }
    Ok(())
}

fn bench(cfg: &Config, sizes: &[usize], dim: usize, repeats: usize) -> Result<String, CliError> {
    if dim < 2 || repeats == 0 || sizes.contains(&0) {
        return Err(CliError::invalid("bench", "sizes and repeats must be positive and dim at least 2"));
    }
    let mut out = String::from("m,mean_seconds,pushes,push_bound,merges,clusters\n");
    let distinct: BTreeSet<usize> = sizes.iter().copied().collect();
    for m in distinct {
        let mut rng = Rng::new(cfg.seed ^ m as u64);
        let mut seconds = 0.0;
        let mut last = None;
        for _ in 0..repeats {
            let points: Vec<Vec<f32>> = (0..m)
                .map(|_| {
                    let v: Vec<f32> = (0..dim).map(|_| rng.normal() as f32).collect();
                    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                    v.into_iter().map(|x| x / n).collect()
                })
                .collect();
            let started = Instant::now();
            let result = ward_cluster(&points, cfg.profile.alpha)?;
            seconds += started.elapsed().as_secs_f64();
            last = Some(result);
        }
        let r = last.expect("at least one repeat");
        let _ = writeln!(
            out,
            "{m},{:.6},{},{},{},{}",
            seconds / repeats as f64,
            r.stats.pushes,
            multisage_core::ward::ChainStats::push_bound(m),
            r.stats.merges,
            r.clusters.len()
        );
    }
    Ok(out)
}
