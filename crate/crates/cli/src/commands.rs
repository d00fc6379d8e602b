use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mafia_core::botsim::{generate_corpus, sample_conditioned_utterance, SimConfig, TemplatePack};
use mafia_core::features::{
    annotate_auto, annotate_manual, compute_centroids, load_annotations, suspicion_feature_table, FeatureVector,
    Lexicons,
};
use mafia_core::inference::{rank_players, score_game, Method, Prior, Scorer};
use mafia_core::metrics::render_report_table;
use mafia_core::pipeline::{evaluate, split_games, train_models, EvalSettings, ScorerSet, TrainParams, TrainedModels};
use mafia_core::scorers::{
    train_discriminative, train_generative, DiscriminativeScorer, ExternalScorer, GenerativeScorer,
    NaiveBayesClassifier, NaiveBayesParams, NgramLm, NgramParams,
};
use mafia_core::transcript::{
    build_corpus_examples, corpus_stats, load_records, save_records, split_rendered, ContextWindow, ExampleMode,
    RoleTag, TrainingExample,
};
use mafia_core::{daytime_dialog, speaking_players, GameConfig, GameRecord, PlayerId, Role};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::exit::usage;
use crate::{
    Cli, Command, EvaluateArgs, FeaturesArgs, Kind, Mode, ProcessArgs, RankArgs, RoleArg, SampleArgs, ScorerArgs,
    SimulateArgs, TrainArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let Cli {
        config,
        seed,
        archive,
        command,
    } = cli;
    match command {
        Command::Serve { listen } => serve(config, archive, listen, seed),
        Command::Simulate(a) => simulate(&require(archive)?, seed, a),
        Command::Process(a) => process(&require(archive)?, a),
        Command::Train(a) => train(archive.as_deref(), a),
        Command::Evaluate(a) => evaluate_cmd(&require(archive)?, seed, a),
        Command::Rank(a) => rank(&require(archive)?, seed, a),
        Command::Features(a) => features(&require(archive)?, seed, a),
        Command::Sample(a) => sample(seed, a),
    }
}

fn require(archive: Option<PathBuf>) -> Result<PathBuf> {
    archive.ok_or_else(|| usage("--archive is required for this command"))
}

fn load(path: &Path) -> Result<Vec<GameRecord>> {
    load_records(path).with_context(|| format!("reading archive {}", path.display()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<Method>().map_err(usage))
        .collect()
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse::<Method>().map_err(usage)
}

fn serve(config: Option<PathBuf>, archive: Option<PathBuf>, listen: Option<String>, seed: u64) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let mut cfg = mafia_server::ServerConfig::load(config.as_deref())?;
    if let Some(a) = archive {
        cfg.archive_path = Some(a);
    }
    if let Some(l) = listen {
        cfg.listen = l;
    }
    if cfg.seed.is_none() && seed != 0 {
        cfg.seed = Some(seed);
    }
    cfg.validate()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let server = mafia_server::start(cfg).await?;
        println!("listening on http://{}", server.http_addr);
        if let Some(t) = server.tcp_addr {
            println!("line protocol on tcp://{t}");
        }
        tokio::signal::ctrl_c().await?;
        eprintln!("shutting down");
        server.shutdown().await;
        Ok(())
    })
}

fn simulate(archive: &Path, seed: u64, a: SimulateArgs) -> Result<()> {
    let pack = match &a.templates {
        Some(p) => TemplatePack::load(p)?,
        None => TemplatePack::default(),
    };
    let cfg = SimConfig {
        game: GameConfig::new(a.players, a.mafia),
        signal_strength: a.signal,
        seed,
        ..Default::default()
    };
    let records = generate_corpus(&cfg, &pack, a.games)?;
    save_records(&records, archive)?;
    let stats = corpus_stats(&records);
    println!("{stats}");
    let out = a.out.unwrap_or_else(|| sibling(archive, ".stats.json"));
    write_json(&out, &json!({ "settings": cfg, "stats": stats }))
}

/// Context lines about other players that carry a role tag other than
/// `[UNKNOWN]`. Always zero for well-formed examples.
pub fn foreign_role_tags(examples: &[TrainingExample], records: &[GameRecord]) -> usize {
    let names: BTreeMap<(&str, &PlayerId), &str> = records
        .iter()
        .flat_map(|r| r.players.iter().map(move |p| ((r.game_id.as_str(), &p.id), p.fake_name.as_str())))
        .collect();
    examples
        .iter()
        .map(|ex| {
            let me = names.get(&(ex.game_id.as_str(), &ex.player)).copied();
            ex.context
                .iter()
                .filter(|line| {
                    let parts = split_rendered(line);
                    parts.speaker != me && matches!(parts.tag, Some(RoleTag::Mafioso | RoleTag::Bystander))
                })
                .count()
        })
        .sum()
}

fn process(archive: &Path, a: ProcessArgs) -> Result<()> {
    let records = load(archive)?;
    let mode = match a.mode {
        Mode::Classification => ExampleMode::Classification,
        Mode::Generation => ExampleMode::Generation,
        Mode::Standard => ExampleMode::Standard,
    };
    let examples = build_corpus_examples(&records, mode, ContextWindow::new(a.window));
    let file = File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    for ex in &examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let utterances: usize = records.iter().map(|r| daytime_dialog(r).len()).sum();
    let speakers: usize = records.iter().map(|r| speaking_players(r).len()).sum();
    let leaks = foreign_role_tags(&examples, &records);
    println!("{:<28}{:>10}", "games", records.len());
    println!("{:<28}{:>10}", "daytime utterances", utterances);
    println!("{:<28}{:>10}", "speaking players", speakers);
    println!("{:<28}{:>10}", "examples", examples.len());
    println!("{:<28}{:>10}", "foreign role tags", leaks);
    write_json(
        &sibling(&a.out, ".summary.json"),
        &json!({
            "mode": mode,
            "window": a.window,
            "games": records.len(),
            "daytime_utterances": utterances,
            "speaking_players": speakers,
            "examples": examples.len(),
            "foreign_role_tags": leaks,
        }),
    )
}

fn read_examples(path: &Path) -> Result<Vec<TrainingExample>> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn train(archive: Option<&Path>, a: TrainArgs) -> Result<()> {
    let examples = match (&a.examples, archive) {
        (Some(p), _) => read_examples(p)?,
        (None, Some(arch)) => {
            let mode = match a.kind {
                Kind::StdClass => ExampleMode::Standard,
                Kind::UttClass => ExampleMode::Classification,
                Kind::UttGen => ExampleMode::Generation,
            };
            build_corpus_examples(&load(arch)?, mode, ContextWindow::new(a.window))
        }
        (None, None) => return Err(usage("give --examples or --archive")),
    };
    let summary = match a.kind {
        Kind::StdClass | Kind::UttClass => {
            let d = NaiveBayesParams::default();
            let params = NaiveBayesParams {
                k: a.smoothing.unwrap_or(d.k),
                context_weight: a.context_weight.unwrap_or(d.context_weight),
                ..d
            };
            let model = train_discriminative(&examples, params)?;
            model.save(&a.out)?;
            json!({ "kind": format!("{:?}", a.kind), "examples": examples.len(), "features": model.vocabulary_size(), "params": params })
        }
        Kind::UttGen => {
            let d = NgramParams::default();
            let params = NgramParams {
                k: a.smoothing.unwrap_or(d.k),
                order: a.order.unwrap_or(d.order),
                context_lambda: a.context_lambda.unwrap_or(d.context_lambda),
                ..d
            };
            let model = train_generative(&examples, params)?;
            model.save(&a.out)?;
            json!({ "kind": "UttGen", "examples": examples.len(), "vocabulary": model.vocabulary().len(), "params": params })
        }
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// Scorers resolved from flags, with anything missing trained on `train`.
struct Scorers {
    std_class: Option<Box<dyn DiscriminativeScorer>>,
    utt_class: Option<Box<dyn DiscriminativeScorer>>,
    utt_gen: Option<Box<dyn GenerativeScorer>>,
    prior: Prior,
}

impl Scorers {
    fn set(&self) -> ScorerSet<'_> {
        ScorerSet {
            std_class: self.std_class.as_deref(),
            utt_class: self.utt_class.as_deref(),
            utt_gen: self.utt_gen.as_deref(),
            prior: self.prior,
        }
    }

    fn scorer(&self, method: Method, seed: u64) -> Result<Scorer<'_>> {
        let missing = || usage(format!("no {} scorer available", method.label()));
        Ok(match method {
            Method::Random => Scorer::Random {
                prior: self.prior,
                seed,
            },
            Method::StdClass => Scorer::StdClass(self.std_class.as_deref().ok_or_else(missing)?),
            Method::UttClass => Scorer::UttClass(self.utt_class.as_deref().ok_or_else(missing)?),
            Method::UttGen => Scorer::UttGen(self.utt_gen.as_deref().ok_or_else(missing)?, self.prior),
        })
    }
}

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

fn resolve_scorers(args: &ScorerArgs, methods: &[Method], train: &[GameRecord]) -> Result<Scorers> {
    let mut sources: BTreeMap<Method, String> = BTreeMap::new();
    for spec in &args.scorers {
        let (m, src) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--scorer expects METHOD=SOURCE, got {spec:?}")))?;
        let m = parse_method(m)?;
        if m == Method::Random {
            return Err(usage("the random method takes no scorer"));
        }
        sources.insert(m, src.to_owned());
    }
    let window = ContextWindow::new(args.window);
    let needs_training = methods
        .iter()
        .any(|m| *m != Method::Random && !sources.contains_key(m));
    let trained: Option<TrainedModels> = if needs_training {
        if train.is_empty() {
            return Err(usage("no training games to fit the missing scorers"));
        }
        Some(train_models(
            train,
            &TrainParams {
                window,
                ..Default::default()
            },
        )?)
    } else {
        None
    };
    let (mut std_t, mut utt_t, mut gen_t, trained_prior) = match trained {
        Some(t) => (Some(t.std_class), Some(t.utt_class), Some(t.utt_gen), Some(t.prior)),
        None => (None, None, None, None),
    };

    let disc = |m: Method, fallback: &mut Option<NaiveBayesClassifier>| -> Result<Option<Box<dyn DiscriminativeScorer>>> {
        Ok(match sources.get(&m) {
            Some(s) if is_url(s) => Some(Box::new(ExternalScorer::new(s))),
            Some(s) => Some(Box::new(
                NaiveBayesClassifier::load(s).with_context(|| format!("loading {s}"))?,
            )),
            None => fallback.take().map(|c| Box::new(c) as Box<dyn DiscriminativeScorer>),
        })
    };
    let std_class = disc(Method::StdClass, &mut std_t)?;
    let utt_class = disc(Method::UttClass, &mut utt_t)?;
    let utt_gen: Option<Box<dyn GenerativeScorer>> = match sources.get(&Method::UttGen) {
        Some(s) if is_url(s) => Some(Box::new(ExternalScorer::new(s))),
        Some(s) => Some(Box::new(NgramLm::load(s).with_context(|| format!("loading {s}"))?)),
        None => gen_t.take().map(|g| Box::new(g) as Box<dyn GenerativeScorer>),
    };
    let prior = match args.prior {
        Some(p) => Prior::new(p)?,
        None => match trained_prior {
            Some(p) => p,
            None if !train.is_empty() => Prior::from_records(train)?,
            None => Prior::DEFAULT,
        },
    };
    Ok(Scorers {
        std_class,
        utt_class,
        utt_gen,
        prior,
    })
}

fn evaluate_cmd(archive: &Path, seed: u64, a: EvaluateArgs) -> Result<()> {
    let records = load(archive)?;
    let methods = parse_methods(&a.methods)?;
    let split = split_games(&records, a.validation, seed)?;
    let scorers = resolve_scorers(&a.scorers, &methods, &split.train)?;
    let settings = EvalSettings {
        methods,
        k: a.k,
        prior: a.scorers.prior.map(Prior::new).transpose()?,
        seed,
        window: ContextWindow::new(a.scorers.window),
    };
    let results = evaluate(&split.validation, &scorers.set(), &settings)?;
    let reports: Vec<_> = results.iter().map(|r| r.report.clone()).collect();
    println!("{}", render_report_table(&reports));
    println!(
        "train games: {}  validation games: {}  k: {}",
        split.train.len(),
        split.validation.len(),
        reports.first().map_or(0, |r| r.k)
    );
    write_json(
        &a.out,
        &json!({
            "seed": seed,
            "train_games": split.train.iter().map(|r| r.game_id.as_str()).collect::<Vec<_>>(),
            "validation_games": split.validation.iter().map(|r| r.game_id.as_str()).collect::<Vec<_>>(),
            "prior": scorers.prior.value(),
            "reports": reports,
        }),
    )
}

fn pick_game<'a>(records: &'a [GameRecord], game: Option<&str>) -> Result<&'a GameRecord> {
    match game {
        Some(id) => records
            .iter()
            .find(|r| r.game_id.as_str() == id)
            .ok_or_else(|| usage(format!("no game {id:?} in the archive"))),
        None => records.first().ok_or_else(|| usage("the archive is empty")),
    }
}

fn others(records: &[GameRecord], game: &GameRecord) -> Vec<GameRecord> {
    records.iter().filter(|r| r.game_id != game.game_id).cloned().collect()
}

#[derive(Serialize)]
struct RankRow {
    rank: usize,
    player: PlayerId,
    fake_name: String,
    p_mafia: f64,
    n_utterances: usize,
    truth: Role,
}

fn rank(archive: &Path, seed: u64, a: RankArgs) -> Result<()> {
    let records = load(archive)?;
    let game = pick_game(&records, a.game.as_deref())?;
    let method = parse_method(&a.method)?;
    let scorers = resolve_scorers(&a.scorers, &[method], &others(&records, game))?;
    let scores = score_game(
        &game.dialog(),
        scorers.scorer(method, seed)?,
        ContextWindow::new(a.scorers.window),
    )?;
    let rows: Vec<RankRow> = rank_players(&scores)
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let p = game.player(&s.player).expect("scored players come from the record");
            RankRow {
                rank: i + 1,
                fake_name: p.fake_name.clone(),
                truth: p.role,
                player: s.player,
                p_mafia: s.p_mafia,
                n_utterances: s.n_utterances,
            }
        })
        .collect();
    println!("{} ({})", game.game_id, method.label());
    println!("{:>4}  {:<10}{:<12}{:>8}{:>6}{:>7}", "Rank", "Player", "Name", "Pred", "#utt", "Truth");
    for r in &rows {
        let truth = if r.truth == Role::Mafioso { "M" } else { "B" };
        println!(
            "{:>4}  {:<10}{:<12}{:>8.3}{:>6}{:>7}",
            r.rank, r.player.to_string(), r.fake_name, r.p_mafia, r.n_utterances, truth
        );
    }
    write_json(
        &a.out,
        &json!({ "game_id": game.game_id, "method": method, "ranking": rows }),
    )
}

fn features(archive: &Path, seed: u64, a: FeaturesArgs) -> Result<()> {
    let records = load(archive)?;
    let game = pick_game(&records, a.game.as_deref())?;
    let method = parse_method(&a.method)?;
    let annotations = a.annotations.as_deref().map(load_annotations).transpose()?;
    let lexicons = match &a.lexicons {
        Some(p) => Lexicons::load(p)?,
        None => Lexicons::default(),
    };
    let vectors_for = |r: &GameRecord| -> Result<BTreeMap<PlayerId, FeatureVector>> {
        Ok(match &annotations {
            Some(ann) => annotate_manual(r, ann)?,
            None => annotate_auto(r, &lexicons),
        })
    };

    let mut labelled = Vec::new();
    for r in &records {
        for (id, v) in vectors_for(r)? {
            if let Some(role) = r.role_of(&id) {
                labelled.push((v.as_f64(), role));
            }
        }
    }
    let centroids = compute_centroids(&labelled)?;
    let scorers = resolve_scorers(&a.scorers, &[method], &others(&records, game))?;
    let scores = score_game(
        &game.dialog(),
        scorers.scorer(method, seed)?,
        ContextWindow::new(a.scorers.window),
    )?;
    let table = suspicion_feature_table(&scores, &vectors_for(game)?, &game.roles(), &centroids)?;
    let fmt = |v: [f64; 4]| v.iter().map(|x| format!("{x:>6.2}")).collect::<String>();
    println!("{:<4}{:>6}{:>6}{:>6}{:>6}", "", "F1", "F2", "F3", "F4");
    println!("{:<4}{}", "v1", fmt(centroids.v1));
    println!("{:<4}{}", "v2", fmt(centroids.v2));
    println!();
    println!("{} ({})", game.game_id, method.label());
    println!("{table}");
    write_json(
        &a.out,
        &json!({ "game_id": game.game_id, "method": method, "players_labelled": labelled.len(), "table": table }),
    )
}

fn sample(seed: u64, a: SampleArgs) -> Result<()> {
    let lm = NgramLm::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let role = match a.role {
        RoleArg::Mafioso => Role::Mafioso,
        RoleArg::Bystander => Role::Bystander,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(a.n);
    for _ in 0..a.n {
        samples.push(sample_conditioned_utterance(
            &lm,
            &a.prompt,
            role,
            &mut rng,
            a.max_tokens,
            a.temperature,
        )?);
    }
    for s in &samples {
        println!("[{}] {}{}", role.as_str(), a.prompt, s);
    }
    write_json(
        &a.out,
        &json!({ "role": role, "prompt": a.prompt, "seed": seed, "temperature": a.temperature, "samples": samples }),
    )
}
