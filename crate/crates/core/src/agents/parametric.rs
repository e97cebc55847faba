//! Offline oracle agents whose choices depend only on their traits.
//!
//! * test phase: cheat with probability `boldness / 7`.
//! * discussion: with probability `vengefulness / 7` punish a known
//!   cheater this agent has not punished yet. When no such cheater is left
//!   and metanorm enforcement is on, the same probability applies to
//!   punishing a non-punisher. Otherwise name a uniformly random other
//!   agent as the next speaker.
//!
//! These rules give the harness a trait-driven dynamic to test against;
//! they are not a model of how language agents decide.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentContext, Backend, BackendError, Reprompt, TraitScore};
use crate::protocol::{render_command, Command, Phase};
use crate::rng::GameRng;

pub fn parametric_test_decision(boldness: TraitScore, rng: &mut GameRng) -> Command {
    if rng.random_bool(boldness.probability()) {
        Command::Cheat
    } else {
        Command::Test
    }
}

/// Agents eligible for second-order punishment by `context.me`.
///
/// An agent qualifies when it has spoken this round, has issued no punish
/// command this round, is not the deciding agent, and has not already been
/// punished by the deciding agent this round. Empty when nobody cheated.
pub fn metanorm_candidates(context: &AgentContext) -> Vec<String> {
    let me = context.me.name.as_str();
    if context.cheaters().next().is_none() {
        return Vec::new();
    }
    let punished_by_me = |name: &str| {
        context
            .punishments
            .iter()
            .any(|p| p.actor == me && p.target == name)
    };
    let punished_anyone = |name: &str| context.punishments.iter().any(|p| p.actor == name);
    let spoke = |name: &str| context.transcript.iter().any(|t| t.speaker == name);
    context
        .roster
        .names()
        .iter()
        .filter(|n| n.as_str() != me)
        .filter(|n| spoke(n) && !punished_anyone(n) && !punished_by_me(n))
        .cloned()
        .collect()
}

pub fn parametric_discussion_decision(
    vengefulness: TraitScore,
    context: &AgentContext,
    metanorm_enabled: bool,
    rng: &mut GameRng,
) -> Command {
    let me = context.me.name.as_str();
    let unpunished: Vec<&str> = context
        .cheaters()
        .filter(|c| *c != me)
        .filter(|c| {
            !context
                .punishments
                .iter()
                .any(|p| p.actor == me && p.target == *c)
        })
        .collect();
    let p = vengefulness.probability();
    if !unpunished.is_empty() {
        if rng.random_bool(p) {
            let target = unpunished.choose(rng).expect("non-empty");
            return Command::Punish((*target).to_string());
        }
    } else if metanorm_enabled {
        let candidates = metanorm_candidates(context);
        if !candidates.is_empty() && rng.random_bool(p) {
            let target = candidates.choose(rng).expect("non-empty");
            return Command::Punish(target.clone());
        }
    }
    let others = context.others();
    let target = others.choose(rng).expect("roster has another agent");
    Command::Next((*target).to_string())
}

/// Low traits are drawn uniformly from 1..=3, high traits from 5..=7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraitLevel {
    Low,
    High,
}

impl TraitLevel {
    pub fn range(self) -> std::ops::RangeInclusive<u8> {
        match self {
            TraitLevel::Low => 1..=3,
            TraitLevel::High => 5..=7,
        }
    }

    pub fn sample(self, rng: &mut GameRng) -> TraitScore {
        TraitScore::new(rng.random_range(self.range())).expect("range within 1..=7")
    }

    pub fn tag(self) -> &'static str {
        match self {
            TraitLevel::Low => "l",
            TraitLevel::High => "h",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParametricBackend {
    pub vengefulness: TraitScore,
    pub boldness: TraitScore,
    pub metanorm: bool,
}

impl ParametricBackend {
    pub fn new(vengefulness: TraitScore, boldness: TraitScore, metanorm: bool) -> Self {
        Self { vengefulness, boldness, metanorm }
    }
}

impl Backend for ParametricBackend {
    fn respond(
        &mut self,
        context: &AgentContext,
        _reprompt: Option<&Reprompt>,
        rng: &mut GameRng,
    ) -> Result<String, BackendError> {
        let command = match context.phase {
            Phase::Test => parametric_test_decision(self.boldness, rng),
            Phase::Discussion => {
                parametric_discussion_decision(self.vengefulness, context, self.metanorm, rng)
            }
        };
        Ok(render_command(&command))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentId, AnnouncedScore, Persona, PunishPair, SelfView, TranscriptLine};
    use crate::protocol::Roster;
    use crate::rng::rng_from_seed;

    fn ts(v: u8) -> TraitScore {
        TraitScore::new(v).unwrap()
    }

    fn context(me: &str, cheaters: &[&str]) -> AgentContext {
        let names = ["A", "B", "C", "D"];
        AgentContext {
            phase: Phase::Discussion,
            me: SelfView { id: AgentId(0), name: me.into(), persona: Persona::traits(7, 1).unwrap() },
            roster: Roster::new(names).unwrap(),
            announcement: names
                .iter()
                .map(|n| AnnouncedScore { name: (*n).into(), score: 50.0, cheated: cheaters.contains(n) })
                .collect(),
            transcript: vec![],
            punishments: vec![],
        }
    }

    fn say(ctx: &mut AgentContext, speaker: &str, command: Command) {
        if let Command::Punish(t) = &command {
            ctx.punishments.push(PunishPair { actor: speaker.into(), target: t.clone() });
        }
        let turn = ctx.transcript.len();
        ctx.transcript.push(TranscriptLine {
            turn,
            speaker: speaker.into(),
            utterance: render_command(&command),
            command,
        });
    }

    #[test]
    fn boldness_seven_always_cheats() {
        let mut rng = rng_from_seed(1);
        assert!((0..1000).all(|_| parametric_test_decision(ts(7), &mut rng) == Command::Cheat));
    }

    #[test]
    fn boldness_one_cheat_frequency() {
        // Binomial(10^4, 1/7): mean 1428.6, sd 35.0; [0.11, 0.17] is ~ +/-8 sd.
        let mut rng = rng_from_seed(2);
        let n = 10_000;
        let cheats = (0..n)
            .filter(|_| parametric_test_decision(ts(1), &mut rng) == Command::Cheat)
            .count();
        let f = cheats as f64 / n as f64;
        assert!((0.11..=0.17).contains(&f), "{f}");
    }

    #[test]
    fn equal_seeds_equal_decisions() {
        let run = |seed| {
            let mut rng = rng_from_seed(seed);
            (0..200).map(|_| parametric_test_decision(ts(4), &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn max_vengefulness_punishes_the_unpunished_cheater() {
        let ctx = context("A", &["B"]);
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            assert_eq!(
                parametric_discussion_decision(ts(7), &ctx, false, &mut rng),
                Command::Punish("B".into())
            );
        }
    }

    #[test]
    fn no_cheaters_means_next() {
        let ctx = context("A", &[]);
        let mut rng = rng_from_seed(4);
        for _ in 0..100 {
            match parametric_discussion_decision(ts(1), &ctx, false, &mut rng) {
                Command::Next(t) => assert_ne!(t, "A"),
                c => panic!("unexpected {c:?}"),
            }
        }
    }

    #[test]
    fn metanorm_targets_the_silent_non_punisher() {
        // Hand-built 4-agent transcript: B cheated. A punished B; C spoke and
        // named D; D punished B; B spoke. Non-punishers who spoke: C, and B
        // (the cheater, already punished by A so excluded). Candidate: {C}.
        let mut ctx = context("A", &["B"]);
        say(&mut ctx, "A", Command::Punish("B".into()));
        say(&mut ctx, "C", Command::Next("D".into()));
        say(&mut ctx, "D", Command::Punish("B".into()));
        say(&mut ctx, "B", Command::Next("A".into()));
        assert_eq!(metanorm_candidates(&ctx), vec!["C".to_string()]);
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            assert_eq!(
                parametric_discussion_decision(ts(7), &ctx, true, &mut rng),
                Command::Punish("C".into())
            );
        }
        // Metanorm off: no further punishment.
        assert!(matches!(parametric_discussion_decision(ts(7), &ctx, false, &mut rng), Command::Next(_)));
    }

    #[test]
    fn metanorm_needs_a_cheater() {
        let mut ctx = context("A", &[]);
        say(&mut ctx, "C", Command::Next("D".into()));
        assert!(metanorm_candidates(&ctx).is_empty());
    }

    #[test]
    fn backend_emits_canonical_tags() {
        let mut backend = ParametricBackend::new(ts(7), ts(7), true);
        let mut ctx = context("A", &["C"]);
        let mut rng = rng_from_seed(6);
        assert_eq!(backend.respond(&ctx, None, &mut rng).unwrap(), "<punish>C</punish>");
        ctx.phase = Phase::Test;
        assert_eq!(backend.respond(&ctx, None, &mut rng).unwrap(), "<cheat/>");
    }

    #[test]
    fn trait_level_frequencies_within_three_sigma() {
        // Each value has p = 1/3 over n = 10^4: sd = sqrt(n p (1-p)) = 47.1.
        let n = 10_000;
        let sd = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for level in [TraitLevel::Low, TraitLevel::High] {
            let mut rng = rng_from_seed(11);
            let mut counts = [0usize; 8];
            for _ in 0..n {
                counts[level.sample(&mut rng).value() as usize] += 1;
            }
            for v in level.range() {
                let dev = (counts[v as usize] as f64 - n as f64 / 3.0).abs();
                assert!(dev < 3.0 * sd, "{level:?} value {v}: {}", counts[v as usize]);
            }
            assert_eq!(level.range().map(|v| counts[v as usize]).sum::<usize>(), n);
        }
    }
}
