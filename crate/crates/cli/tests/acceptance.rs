//! Acceptance run: one PASS/FAIL line per headline criterion, tolerances
//! fixed below. Exits non-zero if any line fails.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use mafia_core::botsim::{simulate_game, BystanderVotes, SimConfig, TemplatePack};
use mafia_core::engine::Game;
use mafia_core::features::{distance_d, REFERENCE_CENTROIDS};
use mafia_core::inference::{infer_utt_class, posterior, rank_players, score_game, Method, Prior, Scorer};
use mafia_core::metrics::evaluate_ranking;
use mafia_core::pipeline::{evaluate, split_games, train_models, EvalSettings, TrainParams};
use mafia_core::scorers::{DiscriminativeScorer, ScoreError};
use mafia_core::transcript::{build_corpus_examples, split_rendered, ContextWindow, ExampleMode, RoleTag};
use mafia_core::{
    daytime_dialog, Dialog, GameConfig, GameId, GameRecord, Phase, Player, PlayerId, Role, Utterance, Winner,
};
use mafia_server::loopback::{audit, play_game};
use mafia_server::protocol::ServerMsg;
use mafia_server::session::Clock;
use mafia_server::{Hub, LoadedScorers, ServerConfig};
use num_bigint::BigInt;
use num_traits::{Float, One, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let mut o = f();
    let took = t.elapsed();
    if took > limit {
        o.pass = false;
        o.detail.push_str(&format!("; over the {:.0?} budget", limit));
    }
    println!(
        "{} {name}: {} ({:.2?})",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        took
    );
    o.pass
}

fn pid(i: usize) -> PlayerId {
    PlayerId::new(format!("p{i:02}"))
}

// Top-k metrics on 39 players with 10 mafiosi, `hits` of them in the top 10.
fn metric_identities() -> Outcome {
    let check = |hits: usize, want: [f64; 3]| -> (bool, String) {
        let ranking: Vec<usize> = (0..39).collect();
        let mafia: BTreeSet<usize> = (0..hits).chain(20..20 + (10 - hits)).collect();
        let truth = ranking
            .iter()
            .map(|&i| (i, if mafia.contains(&i) { Role::Mafioso } else { Role::Bystander }))
            .collect();
        let r = evaluate_ranking("fixture", &ranking, std::slice::from_ref(&ranking), &truth, 10, None).unwrap();
        let got = [r.accuracy, r.f1_mafia, r.f1_bystander];
        let ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-4);
        (ok, format!("{hits} hits -> {:.4}/{:.4}/{:.4}", got[0], got[1], got[2]))
    };
    let (a, da) = check(5, [0.7436, 0.5000, 0.8276]);
    let (b, db) = check(4, [0.6923, 0.4000, 0.7931]);
    Outcome {
        pass: a && b,
        detail: format!("{da}; {db} (tol 1e-4)"),
    }
}

fn reference_distances() -> Outcome {
    let rows: [([f64; 4], f64); 10] = [
        ([4., 0., 2., 0.], -5.9),
        ([2., 0., 2., 0.], -2.1),
        ([5., 0., 5., 0.], -11.7),
        ([2., 0., 2., 0.], -2.1),
        ([4., 2., 1., 1.], -4.1),
        ([3., 0., 2., 0.], -4.0),
        ([0., 0., 0., 0.], 4.2),
        ([1., 0., 1., 0.], 1.0),
        ([0., 0., 0., 0.], 4.2),
        ([0., 0., 0., 0.], 4.2),
    ];
    let worst = rows
        .iter()
        .map(|(u, d)| (distance_d(*u, &REFERENCE_CENTROIDS) - d).abs())
        .fold(0.0, f64::max);
    Outcome {
        pass: worst <= 0.05,
        detail: format!("10 rows, worst |error| {worst:.3} (tol 0.05)"),
    }
}

/// Fixed-point reals with `FRAC` fractional bits, enough for e^±700 with
/// well over 1000 significant bits to spare.
const FRAC: u64 = 3200;

fn fx_one() -> BigInt {
    BigInt::one() << FRAC
}

fn fx_from_f64(x: f64) -> BigInt {
    let (mant, exp, sign) = x.integer_decode();
    let shift = i64::from(exp) + FRAC as i64;
    assert!(shift >= 0, "value too small for the fixed-point grid");
    let v = BigInt::from(mant) << shift as u64;
    if sign < 0 {
        -v
    } else {
        v
    }
}

fn fx_mul(a: &BigInt, b: &BigInt) -> BigInt {
    (a * b) >> FRAC
}

fn fx_div(a: &BigInt, b: &BigInt) -> BigInt {
    (a << FRAC) / b
}

// Taylor series, 0 <= f <= 1.
fn fx_exp_unit(f: &BigInt) -> BigInt {
    let mut sum = fx_one();
    let mut term = fx_one();
    let mut k = 1u32;
    loop {
        term = fx_mul(&term, f) / k;
        if term.is_zero() {
            return sum;
        }
        sum += &term;
        k += 1;
    }
}

fn fx_exp(x: &BigInt) -> BigInt {
    let neg = x < &BigInt::zero();
    let a = if neg { -x } else { x.clone() };
    let n = (&a >> FRAC).to_u64().unwrap();
    let f = &a - (BigInt::from(n) << FRAC);
    let e = fx_exp_unit(&fx_one());
    let mut r = fx_exp_unit(&f);
    for _ in 0..n {
        r = fx_mul(&r, &e);
    }
    if neg {
        fx_div(&fx_one(), &r)
    } else {
        r
    }
}

fn fx_to_f64(v: &BigInt) -> f64 {
    let bits = v.bits();
    let shift = bits.saturating_sub(64);
    let top = (v >> shift).to_u64().unwrap() as f64;
    let e = shift as i64 - FRAC as i64;
    let half = (e / 2) as i32;
    top * 2f64.powi(half) * 2f64.powi(e as i32 - half)
}

fn exact_posterior(prior: f64, lm: f64, lb: f64) -> f64 {
    let p = fx_from_f64(prior);
    let d = fx_from_f64(lm) - fx_from_f64(lb);
    let e = fx_exp(&-d);
    let denom = &p + fx_mul(&(fx_one() - &p), &e);
    fx_to_f64(&fx_div(&p, &denom))
}

fn posterior_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut triples: Vec<(f64, f64, f64)> = vec![
        (0.2, -1000.0, -1700.0),
        (0.2, -1700.0, -1000.0),
        (0.5, -900.0, -900.0),
        (87.0 / 421.0, -2400.0, -1700.0),
    ];
    while triples.len() < 100 {
        let prior = rng.gen_range(0.01..0.99);
        let lb = rng.gen_range(-2000.0..-700.0);
        let d = rng.gen_range(-700.0..=700.0);
        triples.push((prior, lb + d, lb));
    }
    let mut worst = 0.0f64;
    let mut max_gap = 0.0f64;
    for &(p, lm, lb) in &triples {
        let want = exact_posterior(p, lm, lb);
        let got = posterior(Prior::new(p).unwrap(), lm, lb);
        worst = worst.max(((got - want) / want).abs());
        max_gap = max_gap.max((lm - lb).abs());
    }
    Outcome {
        pass: worst < 1e-12,
        detail: format!("100 triples, max |d| {max_gap:.0}, worst relative error {worst:.2e} (tol 1e-12)"),
    }
}

/// Probability fixed by speaker and message; flags any call whose current
/// line is not tagged as the mafioso hypothesis.
struct Stub {
    wrong_tag: AtomicBool,
}

fn stub_prob(speaker: &str, message: &str) -> f64 {
    let mut h = DefaultHasher::new();
    (speaker, message).hash(&mut h);
    ((h.finish() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

impl DiscriminativeScorer for Stub {
    fn prob_mafia(&self, _context: &[String], current: &str) -> Result<f64, ScoreError> {
        let parts = split_rendered(current);
        if parts.tag != Some(RoleTag::Mafioso) {
            self.wrong_tag.store(true, Ordering::Relaxed);
        }
        Ok(stub_prob(parts.speaker.unwrap_or(""), parts.message))
    }
}

fn random_sim(rng: &mut ChaCha8Rng, signal: f64) -> SimConfig {
    let n = rng.gen_range(4..=10u32);
    let m = if n >= 6 { rng.gen_range(1..=2) } else { 1 };
    SimConfig {
        game: GameConfig::new(n, m),
        signal_strength: signal,
        bystander_votes: if rng.gen_bool(0.5) {
            BystanderVotes::Heuristic
        } else {
            BystanderVotes::Random
        },
        seed: rng.gen(),
        ..Default::default()
    }
}

fn aggregation_oracle() -> Outcome {
    let pack = TemplatePack::default();
    let stub = Stub {
        wrong_tag: AtomicBool::new(false),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut players, mut mismatches) = (0usize, 0usize);
    for i in 0..1000u64 {
        let record = simulate_game(&random_sim(&mut rng, 0.6), &pack, i).unwrap();
        let dialog = record.dialog();
        for p in &record.players {
            let own: Vec<&Utterance> = daytime_dialog(&record).into_iter().filter(|u| u.author == p.id).collect();
            if own.is_empty() {
                continue;
            }
            let want = own.iter().map(|u| stub_prob(&p.fake_name, &u.text)).sum::<f64>() / own.len() as f64;
            let got = infer_utt_class(&dialog, &p.id, &stub, ContextWindow::default()).unwrap();
            players += 1;
            if got.p_mafia != want || got.n_utterances != own.len() {
                mismatches += 1;
            }
        }
    }
    let wrong_tag = stub.wrong_tag.load(Ordering::Relaxed);
    Outcome {
        pass: mismatches == 0 && !wrong_tag,
        detail: format!("1000 records, {players} speakers, {mismatches} inexact, mafioso-tagged inputs only: {}", !wrong_tag),
    }
}

fn random_rank_scale() -> Outcome {
    let players: Vec<Player> = (0..39)
        .map(|i| Player {
            id: pid(i),
            fake_name: format!("N{i}"),
            role: Role::Bystander,
            alive: true,
            connected: true,
        })
        .collect();
    let utterances: Vec<Utterance> = (0..39)
        .map(|i| Utterance {
            index: i as u32,
            author: pid(i),
            phase: Phase::Day,
            round: 1,
            timestamp_ms: i as i64,
            text: "hello".into(),
        })
        .collect();
    let game_id = GameId::new("pop");
    let dialog = Dialog {
        game_id: &game_id,
        players: &players,
        utterances: &utterances,
    };
    let prior = Prior::new(10.0 / 39.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let ids: Vec<PlayerId> = (0..39).map(pid).collect();
    let mut total = 0.0;
    let trials = 10_000;
    for t in 0..trials {
        let mafia: BTreeSet<&PlayerId> = ids.choose_multiple(&mut rng, 10).collect();
        let scores = score_game(&dialog, Scorer::Random { prior, seed: t }, ContextWindow::default()).unwrap();
        let ranked = rank_players(&scores);
        let sum: usize = ranked
            .iter()
            .enumerate()
            .filter(|(_, s)| mafia.contains(&s.player))
            .map(|(i, _)| i + 1)
            .sum();
        total += sum as f64 / 10.0;
    }
    let mean = total / trials as f64;
    Outcome {
        pass: (mean - 20.0).abs() <= 0.3,
        detail: format!("{trials} trials, mean mafia rank {mean:.3} (target 20.0 +/- 0.3)"),
    }
}

struct MethodRanks {
    pooled: BTreeMap<Method, f64>,
    per_game: BTreeMap<Method, f64>,
}

/// Trains on `n_train` games and evaluates on `n_val` others. Random is
/// averaged over `random_seeds` draws so the comparison is against its
/// expectation rather than one lucky or unlucky draw.
fn run_corpus(signal: f64, n_train: usize, n_val: usize, random_seeds: u64) -> MethodRanks {
    let cfg = SimConfig {
        game: GameConfig::new(10, 2),
        signal_strength: signal,
        seed: 2024,
        ..Default::default()
    };
    let pack = TemplatePack::default();
    let records: Vec<GameRecord> = (0..(n_train + n_val) as u64)
        .map(|i| simulate_game(&cfg, &pack, i).unwrap())
        .collect();
    let split = split_games(&records, n_val, 7).unwrap();
    let models = train_models(&split.train, &TrainParams::default()).unwrap();
    let set = models.scorers();
    let learned = evaluate(
        &split.validation,
        &set,
        &EvalSettings {
            methods: vec![Method::StdClass, Method::UttClass, Method::UttGen],
            ..Default::default()
        },
    )
    .unwrap();
    let mut pooled = BTreeMap::new();
    let mut per_game = BTreeMap::new();
    for r in &learned {
        let m: Method = r.report.method.parse().unwrap();
        pooled.insert(m, r.report.avg_rank_pooled);
        per_game.insert(m, r.report.avg_rank_per_game);
    }
    let (mut rp, mut rg) = (0.0, 0.0);
    for seed in 0..random_seeds {
        let r = evaluate(
            &split.validation,
            &set,
            &EvalSettings {
                methods: vec![Method::Random],
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        rp += r[0].report.avg_rank_pooled;
        rg += r[0].report.avg_rank_per_game;
    }
    pooled.insert(Method::Random, rp / random_seeds as f64);
    per_game.insert(Method::Random, rg / random_seeds as f64);
    MethodRanks { pooled, per_game }
}

fn fmt_ranks(m: &BTreeMap<Method, f64>) -> String {
    m.iter()
        .map(|(k, v)| format!("{} {v:.2}", k.label()))
        .collect::<Vec<_>>()
        .join(", ")
}

fn end_to_end() -> Outcome {
    let strong = run_corpus(0.6, 39, 5, 200);
    let random = strong.pooled[&Method::Random];
    let bar = 0.85 * random;
    let recovered = [Method::UttClass, Method::UttGen]
        .iter()
        .all(|m| strong.pooled[m] <= bar);

    let null = run_corpus(0.0, 39, 50, 200);
    let base = null.per_game[&Method::Random];
    let flat = null.per_game.values().all(|v| (v - base).abs() <= 1.0);
    Outcome {
        pass: recovered && flat,
        detail: format!(
            "signal 0.6, pooled: [{}], bar {bar:.2}; signal 0, per game over 50 games: [{}], band {base:.2} +/- 1",
            fmt_ranks(&strong.pooled),
            fmt_ranks(&null.per_game)
        ),
    }
}

fn living(record: &GameRecord) -> (usize, usize) {
    let alive = |r: Role| record.players.iter().filter(|p| p.alive && p.role == r).count();
    (alive(Role::Mafioso), alive(Role::Bystander))
}

// Three-way day tie among bystanders A, B, C: each gets exactly 3 votes.
fn tie_break_chi2(trials: u64) -> f64 {
    let ids: Vec<PlayerId> = (0..10).map(pid).collect();
    let mut counts = [0u64; 3];
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let (mut game, _) = Game::start(GameId::new("tie"), GameConfig::new(10, 2), &ids, 0, &mut rng).unwrap();
        let mafia: Vec<PlayerId> = game.players().iter().filter(|p| p.role == Role::Mafioso).map(|p| p.id.clone()).collect();
        let town: Vec<PlayerId> = game.players().iter().filter(|p| p.role == Role::Bystander).map(|p| p.id.clone()).collect();
        for m in &mafia {
            game.cast_vote(m, &town[0]).unwrap();
        }
        game.close_phase(1, &mut rng).unwrap();
        let (a, b, c) = (&town[1], &town[2], &town[3]);
        game.cast_vote(a, b).unwrap();
        game.cast_vote(b, c).unwrap();
        game.cast_vote(c, a).unwrap();
        let others: Vec<&PlayerId> = mafia.iter().chain(&town[4..]).collect();
        for (i, v) in others.iter().enumerate() {
            game.cast_vote(v, [a, b, c][i / 2]).unwrap();
        }
        let events = game.close_phase(2, &mut rng).unwrap();
        let out = events
            .iter()
            .find_map(|e| match e {
                mafia_core::engine::GameEvent::PlayerEliminated { player, .. } => Some(player.clone()),
                _ => None,
            })
            .unwrap();
        counts[[a, b, c].iter().position(|p| **p == out).unwrap()] += 1;
    }
    let expected = trials as f64 / 3.0;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

fn engine_safety() -> Outcome {
    let pack = TemplatePack::default();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut bad = Vec::new();
    let mut wins = [0usize; 2];
    for i in 0..10_000u64 {
        let signal = rng.gen_range(0.0..=1.0);
        let cfg = random_sim(&mut rng, signal);
        let record = match simulate_game(&cfg, &pack, i) {
            Ok(r) => r,
            Err(e) => {
                bad.push(format!("game {i}: {e}"));
                continue;
            }
        };
        if let Err(e) = record.validate() {
            bad.push(format!("{}: {e}", record.game_id));
        }
        let (m, b) = living(&record);
        let bystanders_won = m == 0;
        let mafia_won = m > 0 && m >= b;
        let consistent = match record.winner {
            Winner::BystanderWin => bystanders_won && !mafia_won,
            Winner::MafiaWin => mafia_won && !bystanders_won,
        };
        if !consistent {
            bad.push(format!("{}: winner {:?} with {m} mafia, {b} bystanders alive", record.game_id, record.winner));
        }
        wins[usize::from(record.winner == Winner::MafiaWin)] += 1;
    }
    // 2 degrees of freedom, p = 0.01.
    let chi2 = tie_break_chi2(30_000);
    let tie_ok = chi2 < 9.210;
    Outcome {
        pass: bad.is_empty() && tie_ok,
        detail: format!(
            "10000 games, {} bystander / {} mafia wins, {} faults{}; 3-way tie chi2 {chi2:.2} over 30000 closes (crit 9.21)",
            wins[0],
            wins[1],
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    }
}

/// Own check of delivery logs, separate from the server's audit helper.
fn secrecy_violations(played: &mafia_server::loopback::PlayedGame, record: &GameRecord) -> Vec<String> {
    let night: BTreeSet<&str> = record
        .utterances
        .iter()
        .filter(|u| u.phase == Phase::Night)
        .map(|u| u.text.as_str())
        .collect();
    let mut out = Vec::new();
    let sessions = played.bots.iter().chain(std::iter::once(&played.spectator));
    for bot in sessions {
        let me = bot.player.as_ref();
        let is_mafia = bot.role == Some(Role::Mafioso);
        let mut ended = false;
        for f in &bot.frames {
            match &f.body {
                ServerMsg::Ended(_) => ended = true,
                ServerMsg::Chat(c) if !is_mafia && (c.phase == Phase::Night || night.contains(c.text.as_str())) => {
                    out.push(format!("{me:?} saw night chat {}", c.index));
                }
                ServerMsg::Vote(v) if !is_mafia && v.phase == Phase::Night => {
                    out.push(format!("{me:?} saw a night vote"));
                }
                ServerMsg::Start(s) => {
                    if s.role.is_some() && s.player.as_ref() != me {
                        out.push(format!("{me:?} got a role card for {:?}", s.player));
                    }
                    if !s.teammates.is_empty() && !is_mafia {
                        out.push(format!("{me:?} was told the mafia"));
                    }
                }
                ServerMsg::Eliminated(e) if !ended && e.role.is_some() && e.phase == Phase::Night => {
                    out.push(format!("{me:?} learned the role of night victim {}", e.player));
                }
                _ => {}
            }
        }
    }
    out
}

fn secrecy_audit() -> Outcome {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .start_paused(true)
        .build()
        .unwrap();
    rt.block_on(async {
        let cfg = ServerConfig {
            seed: Some(51),
            ..Default::default()
        };
        let hub = Hub::with_clock(cfg, LoadedScorers::default(), None, Clock::new(0));
        let mut problems = Vec::new();
        let mut night_lines = 0usize;
        for i in 0..1000u64 {
            let (n, m) = [(4, 1), (5, 1), (6, 1), (7, 2), (8, 2), (10, 2)][i as usize % 6];
            let played = play_game(&hub, n, m, i).await;
            let record = hub.record(&played.game_id).unwrap().expect("game finished");
            night_lines += record.utterances.iter().filter(|u| u.phase == Phase::Night).count();
            problems.extend(secrecy_violations(&played, &record));
            if let Err(e) = audit(&played, &record) {
                problems.push(e);
            }
        }
        Outcome {
            pass: problems.is_empty(),
            detail: format!(
                "1000 served games, {night_lines} night lines, {} violations{}",
                problems.len(),
                problems.first().map(|p| format!(" (first: {p})")).unwrap_or_default()
            ),
        }
    })
}

fn pipeline_counts() -> Outcome {
    let pack = TemplatePack::default();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut faults = 0;
    let mut corpora = 0;
    let mut leaks = 0;
    for c in 0..12u64 {
        let cfg = random_sim(&mut rng, 0.6);
        let n_games = 5 + (c as usize % 4) * 10;
        let records: Vec<GameRecord> = (0..n_games as u64).map(|i| simulate_game(&cfg, &pack, i).unwrap()).collect();
        let day: usize = records.iter().map(|r| daytime_dialog(r).len()).sum();
        let window = ContextWindow::new([64, 256, 512][c as usize % 3]);
        let class = build_corpus_examples(&records, ExampleMode::Classification, window);
        let generation = build_corpus_examples(&records, ExampleMode::Generation, window);
        if class.len() != 2 * day || generation.len() != day {
            faults += 1;
        }
        let names: BTreeMap<(&GameId, &PlayerId), &str> = records
            .iter()
            .flat_map(|r| r.players.iter().map(move |p| ((&r.game_id, &p.id), p.fake_name.as_str())))
            .collect();
        for ex in class.iter().chain(&generation) {
            let own = names[&(&ex.game_id, &ex.player)];
            for line in &ex.context {
                let parts = split_rendered(line);
                if parts.speaker != Some(own) && matches!(parts.tag, Some(RoleTag::Mafioso | RoleTag::Bystander)) {
                    leaks += 1;
                }
            }
        }
        corpora += 1;
    }
    Outcome {
        pass: faults == 0 && leaks == 0,
        detail: format!("{corpora} corpora, {faults} count mismatches, {leaks} foreign role tags"),
    }
}

fn main() {
    // libtest flags (e.g. --nocapture, filters) are accepted and ignored.
    let secs = Duration::from_secs;
    let results = [
        report("metric identities", secs(1), metric_identities),
        report("reference D(u) values", secs(1), reference_distances),
        report("posterior against exact arithmetic", secs(60), posterior_oracle),
        report("utterance-mean aggregation", secs(60), aggregation_oracle),
        report("random baseline rank scale", secs(10), random_rank_scale),
        report("end-to-end signal recovery", secs(300), end_to_end),
        report("engine safety", secs(120), engine_safety),
        report("secrecy audit", secs(300), secrecy_audit),
        report("pipeline counts", secs(60), pipeline_counts),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
