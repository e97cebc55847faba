use normgame::agents::{
    seat_name, AgentContext, AgentId, AgentProfile, Backend, BackendError, BackendKind, ParametricBackend,
    Persona, Reprompt, ScriptedBackend, TraitScore,
};
use normgame::engine::{
    draw_test_score, play_round, settle_payoffs, DiscussionEvent, GameConfig, PunishApplied, RoundLedger,
    TestChoice, TestEntry, TestPhaseRecord,
};
use normgame::gateway::GatewayError;
use normgame::protocol::{Command, Phase};
use normgame::rng::{rng_from_seed, GameRng};
use normgame::runlog::{NullSink, RunLog};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct FnBackend<F>(F);

impl<F> Backend for FnBackend<F>
where
    F: FnMut(&AgentContext, Option<&Reprompt>) -> String + Send,
{
    fn respond(&mut self, c: &AgentContext, r: Option<&Reprompt>, _: &mut GameRng) -> Result<String, BackendError> {
        Ok((self.0)(c, r))
    }
}

fn profiles(n: usize) -> Vec<AgentProfile> {
    (0..n)
        .map(|i| AgentProfile {
            id: AgentId(i as u64),
            name: seat_name(i),
            persona: Persona::traits(4, 4).unwrap(),
            backend: BackendKind::Scripted,
        })
        .collect()
}

fn test_record(bases: &[f64], cheaters: &[usize]) -> TestPhaseRecord {
    TestPhaseRecord {
        entries: bases
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let cheated = cheaters.contains(&i);
                TestEntry {
                    agent: AgentId(i as u64),
                    name: seat_name(i),
                    choice: if cheated { TestChoice::Cheat } else { TestChoice::Test },
                    base_draw: b,
                    announced_score: if cheated { b + 30.0 } else { b },
                    cheated,
                }
            })
            .collect(),
    }
}

fn punish(turn: usize, actor: usize, target: usize) -> DiscussionEvent {
    DiscussionEvent {
        turn_index: turn,
        speaker: AgentId(actor as u64),
        utterance: String::new(),
        command: Command::Punish(seat_name(target)),
        punish_applied: Some(PunishApplied { target: AgentId(target as u64), damage: 90, cost: 20 }),
        next_speaker: None,
        reprompts: 0,
        fallback: false,
    }
}

fn next(turn: usize, actor: usize, target: usize) -> DiscussionEvent {
    DiscussionEvent {
        turn_index: turn,
        speaker: AgentId(actor as u64),
        utterance: String::new(),
        command: Command::Next(seat_name(target)),
        punish_applied: None,
        next_speaker: Some(AgentId(target as u64)),
        reprompts: 0,
        fallback: false,
    }
}

/// Scores recomputed from scratch by counting, with no shared code.
fn recount(test: &TestPhaseRecord, events: &[DiscussionEvent]) -> Vec<(f64, i64)> {
    test.entries
        .iter()
        .map(|e| {
            let punished = events.iter().filter(|ev| matches!(ev.punish_applied, Some(p) if p.target == e.agent)).count() as i64;
            let punishing = events.iter().filter(|ev| ev.speaker == e.agent && ev.punish_applied.is_some()).count() as i64;
            let fixed = if e.cheated { 30 } else { 0 } - 90 * punished - 20 * punishing;
            (e.base_draw + fixed as f64, fixed)
        })
        .collect()
}

fn assert_matches_recount(ledger: &RoundLedger, test: &TestPhaseRecord, events: &[DiscussionEvent]) {
    for (entry, (score, fixed)) in ledger.entries.iter().zip(recount(test, events)) {
        assert_eq!(entry.adjustment(), fixed);
        assert_eq!(entry.score, score);
    }
}

#[test]
fn cheater_punished_once_punishing_twice_scores_minus_fifty() {
    let config = GameConfig::default();
    let test = test_record(&[50.0, 51.0, 52.0, 53.0, 54.0, 55.0, 56.0], &[0, 3]);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let mut events = vec![punish(0, 0, 1), punish(0, 0, 2), punish(0, 4, 0)];
        for _ in 0..rng.random_range(0..6) {
            let a = rng.random_range(1..7);
            let mut b = rng.random_range(1..7);
            if b == a {
                b = if a == 6 { 1 } else { a + 1 };
            }
            events.push(next(0, a, b));
        }
        events.shuffle(&mut rng);
        for (i, e) in events.iter_mut().enumerate() {
            e.turn_index = i;
        }
        let ledger = settle_payoffs(&test, &events, &config);
        let alice = ledger.entry(AgentId(0)).unwrap();
        assert_eq!(alice.cheat_bonus_total, 30);
        assert_eq!(alice.punished_total, -90);
        assert_eq!(alice.punish_cost_total, -40);
        assert_eq!(alice.score, -50.0);
        assert_matches_recount(&ledger, &test, &events);
    }
}

#[test]
fn settlement_matches_recount_on_random_sequences() {
    let config = GameConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let bases: Vec<f64> = (0..7).map(|_| rng.random_range(30.0..70.0)).collect();
        let cheaters: Vec<usize> = (0..7).filter(|_| rng.random_bool(0.4)).collect();
        let test = test_record(&bases, &cheaters);
        let events: Vec<DiscussionEvent> = (0..rng.random_range(0..30))
            .map(|t| {
                let a = rng.random_range(0..7);
                let b = (a + rng.random_range(1..7)) % 7;
                if rng.random_bool(0.5) { punish(t, a, b) } else { next(t, a, b) }
            })
            .collect();
        assert_matches_recount(&settle_payoffs(&test, &events, &config), &test, &events);
    }
}

#[test]
fn hand_worked_five_event_round() {
    let test = test_record(&[50.0, 45.5, 60.0, 52.0, 48.0, 55.0, 41.0], &[0, 2]);
    let events = vec![punish(0, 1, 0), next(1, 0, 2), punish(2, 2, 1), punish(3, 3, 2), punish(4, 0, 3)];
    let ledger = settle_payoffs(&test, &events, &GameConfig::default());
    let scores: Vec<f64> = ledger.entries.iter().map(|e| e.score).collect();
    assert_eq!(scores, vec![-30.0, -64.5, -20.0, -58.0, 48.0, 55.0, 41.0]);
}

#[test]
fn single_punish_deltas() {
    let config = GameConfig::default();
    let test = test_record(&[50.0; 7], &[]);
    let mut ledger = RoundLedger::open(&test, &config);
    ledger.apply(&next(0, 0, 1));
    assert!(ledger.entries.iter().all(|e| e.score == 50.0));
    ledger.apply(&punish(1, 1, 5));
    assert_eq!(ledger.score(AgentId(1)), Some(30.0));
    assert_eq!(ledger.score(AgentId(5)), Some(-40.0));
}

fn parametric_round(config: &GameConfig, traits: &[(u8, u8)], metanorm: bool) -> (normgame::engine::RoundOutcome, Vec<u8>) {
    let profiles: Vec<AgentProfile> = traits
        .iter()
        .enumerate()
        .map(|(i, &(v, b))| AgentProfile {
            id: AgentId(i as u64),
            name: seat_name(i),
            persona: Persona::traits(v, b).unwrap(),
            backend: BackendKind::Parametric,
        })
        .collect();
    let mut backends: Vec<Box<dyn Backend>> = traits
        .iter()
        .map(|&(v, b)| {
            Box::new(ParametricBackend::new(TraitScore::new(v).unwrap(), TraitScore::new(b).unwrap(), metanorm))
                as Box<dyn Backend>
        })
        .collect();
    let mut log = RunLog::in_memory("t");
    let outcome = play_round(config, &profiles, &mut backends, &mut log).unwrap();
    (outcome, log.into_inner())
}

#[test]
fn played_rounds_conserve_points() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for seed in 0..200 {
        let traits: Vec<(u8, u8)> = (0..7).map(|_| (rng.random_range(1..=7), rng.random_range(1..=7))).collect();
        let config = GameConfig { rng_seed: seed, ..GameConfig::default() };
        let (o, _) = parametric_round(&config, &traits, seed % 2 == 0);
        let total: f64 = o.ledger.entries.iter().map(|e| e.score).sum();
        let base: f64 = o.test.entries.iter().map(|e| e.base_draw).sum();
        let expected = base + 30.0 * o.test.cheat_count() as f64 - 110.0 * o.punish_count() as f64;
        assert!((total - expected).abs() < 1e-9, "seed {seed}");
        assert!(o.events.len() <= 21);
        assert_matches_recount(&o.ledger, &o.test, &o.events);
    }
}

#[test]
fn zero_turns_means_no_discussion() {
    let config = GameConfig { max_discussion_turns: 0, rng_seed: 4, ..GameConfig::default() };
    let (o, _) = parametric_round(&config, &[(7, 7); 7], true);
    assert!(o.events.is_empty());
    assert_eq!(o.test.cheat_count(), 7);
    for (e, t) in o.ledger.entries.iter().zip(&o.test.entries) {
        assert_eq!(e.score, t.base_draw + 30.0);
    }
}

#[test]
fn rounds_are_deterministic_per_seed() {
    let traits = [(5, 6), (2, 3), (7, 7), (1, 1), (4, 4), (6, 2), (3, 5)];
    let config = GameConfig { rng_seed: 99, ..GameConfig::default() };
    let (a, log_a) = parametric_round(&config, &traits, false);
    let (b, log_b) = parametric_round(&config, &traits, false);
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    let (_, log_c) = parametric_round(&config.with_seed(100), &traits, false);
    assert_ne!(log_a, log_c);
}

#[test]
fn test_scores_do_not_depend_on_backends() {
    let config = GameConfig { rng_seed: 5, max_discussion_turns: 0, ..GameConfig::default() };
    let (a, _) = parametric_round(&config, &[(7, 1); 7], false);
    let (b, _) = parametric_round(&config, &[(2, 7); 7], false);
    let draws = |o: &normgame::engine::RoundOutcome| o.test.entries.iter().map(|e| e.base_draw).collect::<Vec<_>>();
    assert_eq!(draws(&a), draws(&b));
}

#[test]
fn score_distribution_matches_config() {
    let config = GameConfig::default();
    let mut rng = rng_from_seed(6);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| draw_test_score(&mut rng, &config)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((49.9..=50.1).contains(&mean), "{mean}");
    assert!((9.5..=10.5).contains(&var), "{var}");
}

#[test]
fn next_hands_over_and_punisher_never_speaks_next() {
    let n = 5;
    let config = GameConfig { n_agents: n, max_discussion_turns: 30, rng_seed: 8, ..GameConfig::default() };
    let ps = profiles(n);
    let mut backends: Vec<Box<dyn Backend>> = (0..n)
        .map(|i| {
            Box::new(FnBackend(move |c: &AgentContext, _: Option<&Reprompt>| match c.phase {
                Phase::Test => if i == 0 { "<cheat/>".into() } else { "<test/>".into() },
                Phase::Discussion if c.transcript.len() % 3 == 0 => "<punish>Alice</punish>".into(),
                Phase::Discussion => format!("I pass. <next>{}</next>", seat_name((i + 1) % n)),
            })) as Box<dyn Backend>
        })
        .collect();
    // Alice cannot punish herself; she falls back after the re-prompts.
    let o = play_round(&config, &ps, &mut backends, &mut NullSink).unwrap();
    assert_eq!(o.events.len(), 30);
    for w in o.events.windows(2) {
        let (e, f) = (&w[0], &w[1]);
        assert_eq!(e.next_speaker, Some(f.speaker));
        match &e.command {
            Command::Next(t) => assert_eq!(seat_name(f.speaker.0 as usize), *t),
            Command::Punish(_) => assert_ne!(f.speaker, e.speaker),
            _ => unreachable!(),
        }
    }
    for e in &o.events {
        if e.fallback {
            assert_eq!(e.speaker, AgentId(0));
            assert_eq!(e.reprompts, 3);
            assert!(matches!(e.command, Command::Next(_)));
        }
    }
}

#[test]
fn reprompts_and_fallbacks() {
    let n = 3;
    let config = GameConfig { n_agents: n, max_discussion_turns: 0, rng_seed: 9, ..GameConfig::default() };
    let ps = profiles(n);
    let mut backends: Vec<Box<dyn Backend>> = vec![
        // Recovers on the second attempt.
        Box::new(ScriptedBackend::new(["hmm", "<cheat/>"])),
        // Never produces a tag.
        Box::new(FnBackend(|_: &AgentContext, _: Option<&Reprompt>| "no idea".to_string())),
        // Runs dry immediately.
        Box::new(ScriptedBackend::new(Vec::<String>::new())),
    ];
    let mut log = RunLog::in_memory("r");
    let o = play_round(&config, &ps, &mut backends, &mut log).unwrap();
    let choices: Vec<_> = o.test.entries.iter().map(|e| e.choice).collect();
    assert_eq!(choices, vec![TestChoice::Cheat, TestChoice::Test, TestChoice::Test]);
    let text = String::from_utf8(log.into_inner()).unwrap();
    assert_eq!(text.matches("\"type\":\"parse_failure\"").count(), 1 + 4);
    assert_eq!(text.matches("\"type\":\"fallback\"").count(), 2);
    assert!(text.contains("\"reason\":\"backend_error\""));
}

#[test]
fn wrong_agent_count_is_a_config_error() {
    let config = GameConfig::default();
    let ps = profiles(3);
    let mut backends: Vec<Box<dyn Backend>> = (0..3).map(|_| Box::new(ScriptedBackend::default()) as Box<dyn Backend>).collect();
    assert!(play_round(&config, &ps, &mut backends, &mut NullSink).is_err());
}

struct Missing;

impl Backend for Missing {
    fn respond(&mut self, _: &AgentContext, _: Option<&Reprompt>, _: &mut GameRng) -> Result<String, BackendError> {
        Err(BackendError::FixtureMissing("abc".into()))
    }
}

#[test]
fn missing_fixture_stops_the_round() {
    let config = GameConfig { n_agents: 2, ..GameConfig::default() };
    let mut backends: Vec<Box<dyn Backend>> = vec![Box::new(ScriptedBackend::new(["<test/>"])), Box::new(Missing)];
    let err = play_round(&config, &profiles(2), &mut backends, &mut NullSink).unwrap_err();
    assert!(matches!(err, normgame::engine::EngineError::Backend { agent: AgentId(1), .. }));
}

struct Down;

impl Backend for Down {
    fn respond(&mut self, _: &AgentContext, _: Option<&Reprompt>, _: &mut GameRng) -> Result<String, BackendError> {
        Err(BackendError::Gateway(GatewayError::RetriesExhausted { attempts: 3, last: "HTTP 503".into() }))
    }
}

#[test]
fn service_outage_falls_back() {
    let config = GameConfig { n_agents: 3, max_discussion_turns: 4, ..GameConfig::default() };
    let mut backends: Vec<Box<dyn Backend>> = vec![
        Box::new(FnBackend(|c: &AgentContext, _: Option<&Reprompt>| match c.phase {
            Phase::Test => "<cheat/>".to_string(),
            Phase::Discussion => format!("<next>{}</next>", seat_name(2)),
        })),
        Box::new(Down),
        Box::new(Down),
    ];
    let mut log = RunLog::new(Vec::new(), "t");
    let outcome = play_round(&config, &profiles(3), &mut backends, &mut log).unwrap();
    let text = String::from_utf8(log.into_inner()).unwrap();
    let choices: Vec<_> = outcome.test.entries.iter().map(|e| e.choice).collect();
    assert_eq!(choices, [TestChoice::Cheat, TestChoice::Test, TestChoice::Test]);
    let fallbacks = text.lines().filter(|l| l.contains("\"type\":\"fallback\"")).count();
    let down_turns = outcome.events.iter().filter(|e| e.speaker != AgentId(0)).count();
    assert_eq!(fallbacks, 2 + down_turns);
    assert!(text.contains("\"reason\":\"backend_error\""));
    for e in outcome.events.iter().filter(|e| e.speaker != AgentId(0)) {
        assert!(e.fallback && matches!(e.command, Command::Next(_)));
    }
}

#[test]
fn default_game_constants() {
    let c = GameConfig::default();
    assert_eq!((c.n_agents, c.base_mean, c.base_variance), (7, 50.0, 10.0));
    assert_eq!((c.cheat_bonus, c.punish_damage, c.punish_cost), (30, 90, 20));
    use normgame::evolution::{DOUBLED, ELIMINATED, KEPT, POPULATION_SIZE};
    assert_eq!((POPULATION_SIZE, DOUBLED, KEPT, ELIMINATED), (7, 2, 3, 2));
}
