use rand::Rng;
use serde_json::json;

use super::{
    settle_payoffs, DiscussionEvent, EngineError, GameConfig, PunishApplied, RoundLedger,
    TestChoice, TestEntry, TestPhaseRecord, ENGINE_STREAM, SEAT_STREAM,
};
use crate::agents::{
    AgentContext, AgentId, AgentProfile, AnnouncedScore, Backend, PunishPair, Reprompt, SelfView,
    TranscriptLine,
};
use crate::protocol::{parse_utterance, reprompt_message, Command, Phase, Roster, MAX_REPROMPTS};
use crate::rng::{derive_seed, rng_cursor, rng_from_seed, standard_normal, GameRng};
use crate::runlog::{kinds, EventSink, LogPhase};

/// Test score for one agent. Consumes exactly one fixed-width normal draw
/// (two `u64` outputs) from `rng`.
pub fn draw_test_score(rng: &mut GameRng, config: &GameConfig) -> f64 {
    let z = standard_normal(rng);
    let sd = config.std_dev();
    if sd == 0.0 {
        config.base_mean
    } else {
        config.base_mean + sd * z
    }
}

/// Seated agents for one round.
pub struct Table<'a> {
    profiles: &'a [AgentProfile],
    backends: &'a mut [Box<dyn Backend>],
    roster: Roster,
    seat_rngs: Vec<GameRng>,
}

impl<'a> Table<'a> {
    pub fn new(
        profiles: &'a [AgentProfile],
        backends: &'a mut [Box<dyn Backend>],
        config: &GameConfig,
    ) -> Result<Self, EngineError> {
        if profiles.len() != config.n_agents || backends.len() != profiles.len() {
            return Err(EngineError::Config(format!(
                "expected {} agents, got {} profiles and {} backends",
                config.n_agents,
                profiles.len(),
                backends.len()
            )));
        }
        let roster = Roster::new(profiles.iter().map(|p| p.name.clone()))?;
        let seat_rngs = (0..profiles.len() as u64)
            .map(|i| rng_from_seed(derive_seed(config.rng_seed, &[SEAT_STREAM, i])))
            .collect();
        Ok(Self { profiles, backends, roster, seat_rngs })
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn profiles(&self) -> &[AgentProfile] {
        self.profiles
    }

    fn seat_of(&self, name: &str) -> usize {
        self.roster.position(name).expect("validated target")
    }

    fn name(&self, id: AgentId) -> &str {
        self.profiles
            .iter()
            .find(|p| p.id == id)
            .map_or("?", |p| p.name.as_str())
    }
}

/// What agent `seat` may see at this point of the round.
pub fn build_context(
    table: &Table<'_>,
    seat: usize,
    phase: Phase,
    test: Option<&TestPhaseRecord>,
    events: &[DiscussionEvent],
) -> AgentContext {
    let me = &table.profiles[seat];
    let announcement = test
        .map(|t| {
            t.entries
                .iter()
                .map(|e| AnnouncedScore {
                    name: e.name.clone(),
                    score: crate::agents::round_one_decimal(e.announced_score),
                    cheated: e.cheated,
                })
                .collect()
        })
        .unwrap_or_default();
    let transcript = events
        .iter()
        .map(|e| TranscriptLine {
            turn: e.turn_index,
            speaker: table.name(e.speaker).to_string(),
            utterance: e.utterance.clone(),
            command: e.command.clone(),
        })
        .collect();
    let punishments = events
        .iter()
        .filter_map(|e| {
            e.punish_applied.map(|p| PunishPair {
                actor: table.name(e.speaker).to_string(),
                target: table.name(p.target).to_string(),
            })
        })
        .collect();
    AgentContext {
        phase,
        me: SelfView { id: me.id, name: me.name.clone(), persona: me.persona.clone() },
        roster: table.roster.clone(),
        announcement,
        transcript,
        punishments,
    }
}

struct Decision {
    utterance: String,
    command: Command,
    reprompts: usize,
    fallback: bool,
}

/// Asks one seat for a command, re-prompting up to `MAX_REPROMPTS` times.
/// Returns `None` for the command when the engine must substitute one.
fn ask(
    table: &mut Table<'_>,
    seat: usize,
    context: &AgentContext,
    engine_rng: &GameRng,
    sink: &mut dyn EventSink,
) -> Result<(String, Option<Command>, usize), EngineError> {
    let phase = context.phase;
    let speaker = table.profiles[seat].name.clone();
    let log_phase = phase_of(phase);
    let mut reprompt: Option<Reprompt> = None;
    let mut last = String::new();
    for attempt in 0..=MAX_REPROMPTS {
        let reply = table.backends[seat].respond(context, reprompt.as_ref(), &mut table.seat_rngs[seat]);
        let text = match reply {
            Ok(text) => text,
            Err(e) if !e.is_recoverable() => {
                return Err(EngineError::Backend { agent: table.profiles[seat].id, source: e });
            }
            Err(e) => {
                sink.emit(
                    log_phase,
                    kinds::FALLBACK,
                    json!({"agent": table.profiles[seat].id, "reason": "backend_error", "detail": e.to_string()}),
                    rng_cursor(engine_rng),
                )?;
                return Ok((last, None, attempt));
            }
        };
        match parse_utterance(&text, &table.roster, phase, &speaker) {
            Ok(command) => return Ok((text, Some(command), attempt)),
            Err(error) => {
                sink.emit(
                    log_phase,
                    kinds::PARSE_FAILURE,
                    json!({"agent": table.profiles[seat].id, "attempt": attempt, "utterance": text, "error": error}),
                    rng_cursor(engine_rng),
                )?;
                reprompt = Some(Reprompt {
                    attempt: attempt + 1,
                    previous: text.clone(),
                    message: reprompt_message(&error, &table.roster, phase),
                });
                last = text;
            }
        }
    }
    sink.emit(
        log_phase,
        kinds::FALLBACK,
        json!({"agent": table.profiles[seat].id, "reason": "parse_failure"}),
        rng_cursor(engine_rng),
    )?;
    Ok((last, None, MAX_REPROMPTS))
}

fn phase_of(phase: Phase) -> LogPhase {
    match phase {
        Phase::Test => LogPhase::Test,
        Phase::Discussion => LogPhase::Discussion,
    }
}

/// Collects each seat's TEST/CHEAT choice, then draws base scores in seat
/// order and announces all scores and cheat flags.
pub fn run_test_phase(
    table: &mut Table<'_>,
    config: &GameConfig,
    rng: &mut GameRng,
    sink: &mut dyn EventSink,
) -> Result<TestPhaseRecord, EngineError> {
    let mut choices = Vec::with_capacity(table.profiles.len());
    for seat in 0..table.profiles.len() {
        let context = build_context(table, seat, Phase::Test, None, &[]);
        let (utterance, command, reprompts) = ask(table, seat, &context, rng, sink)?;
        let decision = Decision {
            fallback: command.is_none(),
            command: command.unwrap_or(Command::Test),
            utterance,
            reprompts,
        };
        sink.emit(
            LogPhase::Test,
            kinds::DECISION,
            json!({
                "agent": table.profiles[seat].id,
                "utterance": decision.utterance,
                "command": decision.command,
                "reprompts": decision.reprompts,
                "fallback": decision.fallback,
            }),
            rng_cursor(rng),
        )?;
        choices.push(if decision.command == Command::Cheat { TestChoice::Cheat } else { TestChoice::Test });
    }
    let entries = table
        .profiles
        .iter()
        .zip(choices)
        .map(|(profile, choice)| {
            let base_draw = draw_test_score(rng, config);
            let cheated = choice == TestChoice::Cheat;
            TestEntry {
                agent: profile.id,
                name: profile.name.clone(),
                choice,
                base_draw,
                announced_score: if cheated { base_draw + config.cheat_bonus as f64 } else { base_draw },
                cheated,
            }
        })
        .collect();
    let record = TestPhaseRecord { entries };
    sink.emit(LogPhase::Test, kinds::ANNOUNCEMENT, serde_json::to_value(&record).expect("serializable"), rng_cursor(rng))?;
    Ok(record)
}

fn uniform_other(rng: &mut GameRng, n: usize, excluded: usize) -> usize {
    let k = rng.random_range(0..n - 1);
    if k >= excluded {
        k + 1
    } else {
        k
    }
}

/// Turn-taking loop. The first speaker is uniform over all seats. `Next`
/// hands the floor to its target; `Punish` settles immediately and the
/// floor goes to a uniformly drawn seat other than the punisher.
pub fn run_discussion_phase(
    table: &mut Table<'_>,
    test: &TestPhaseRecord,
    config: &GameConfig,
    rng: &mut GameRng,
    sink: &mut dyn EventSink,
) -> Result<Vec<DiscussionEvent>, EngineError> {
    let n = table.profiles.len();
    let mut events: Vec<DiscussionEvent> = Vec::with_capacity(config.max_discussion_turns);
    if config.max_discussion_turns == 0 {
        return Ok(events);
    }
    let mut speaker = rng.random_range(0..n);
    for turn_index in 0..config.max_discussion_turns {
        let context = build_context(table, speaker, Phase::Discussion, Some(test), &events);
        let (utterance, command, reprompts) = ask(table, speaker, &context, rng, sink)?;
        let fallback = command.is_none();
        let command = command.unwrap_or_else(|| {
            let other = uniform_other(rng, n, speaker);
            Command::Next(table.profiles[other].name.clone())
        });
        let is_last = turn_index + 1 == config.max_discussion_turns;
        let (punish_applied, next_seat) = match &command {
            Command::Punish(target) => {
                let target_seat = table.seat_of(target);
                let applied = PunishApplied {
                    target: table.profiles[target_seat].id,
                    damage: config.punish_damage,
                    cost: config.punish_cost,
                };
                let next = (!is_last).then(|| uniform_other(rng, n, speaker));
                (Some(applied), next)
            }
            Command::Next(target) => (None, Some(table.seat_of(target))),
            Command::Test | Command::Cheat => unreachable!("phase-validated"),
        };
        let event = DiscussionEvent {
            turn_index,
            speaker: table.profiles[speaker].id,
            utterance,
            command,
            punish_applied,
            next_speaker: next_seat.map(|s| table.profiles[s].id),
            reprompts,
            fallback,
        };
        sink.emit(
            LogPhase::Discussion,
            kinds::TURN,
            serde_json::to_value(&event).expect("serializable"),
            rng_cursor(rng),
        )?;
        events.push(event);
        match next_seat {
            Some(s) => speaker = s,
            None => break,
        }
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub test: TestPhaseRecord,
    pub events: Vec<DiscussionEvent>,
    pub ledger: RoundLedger,
}

impl RoundOutcome {
    pub fn punish_count(&self) -> usize {
        self.events.iter().filter(|e| e.punish_applied.is_some()).count()
    }
}

/// Plays a full round and logs it.
pub fn play_round(
    config: &GameConfig,
    profiles: &[AgentProfile],
    backends: &mut [Box<dyn Backend>],
    sink: &mut dyn EventSink,
) -> Result<RoundOutcome, EngineError> {
    config.validate()?;
    let mut table = Table::new(profiles, backends, config)?;
    let mut rng = rng_from_seed(derive_seed(config.rng_seed, &[ENGINE_STREAM]));
    sink.emit(
        LogPhase::Round,
        kinds::ROUND_START,
        json!({"seed": config.rng_seed, "agents": profiles}),
        rng_cursor(&rng),
    )?;
    let test = run_test_phase(&mut table, config, &mut rng, sink)?;
    let events = run_discussion_phase(&mut table, &test, config, &mut rng, sink)?;
    let ledger = settle_payoffs(&test, &events, config);
    sink.emit(
        LogPhase::Settlement,
        kinds::SETTLEMENT,
        serde_json::to_value(&ledger).expect("serializable"),
        rng_cursor(&rng),
    )?;
    Ok(RoundOutcome { test, events, ledger })
}
