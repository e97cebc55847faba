use normgame::protocol::{
    legal_commands_line, parse_utterance, render_command, Command, ParseErrorKind, Phase, Roster, COMMANDS_PREFIX,
    COMMANDS_SEPARATOR,
};
use proptest::prelude::*;

const NAMES: [&str; 7] = ["Alice", "Bob", "Carol", "Dave", "Eve", "Frank", "Grace"];

fn roster() -> Roster {
    Roster::new(NAMES).unwrap()
}

fn kind(text: &str, phase: Phase, speaker: &str) -> Result<Command, ParseErrorKind> {
    parse_utterance(text, &roster(), phase, speaker).map_err(|e| e.kind)
}

fn prose() -> impl Strategy<Value = String> {
    "[^<]{0,40}"
}

fn command_for(phase: Phase, speaker: usize) -> impl Strategy<Value = Command> {
    let others: Vec<String> = NAMES.iter().enumerate().filter(|(i, _)| *i != speaker).map(|(_, n)| n.to_string()).collect();
    match phase {
        Phase::Test => prop_oneof![Just(Command::Test), Just(Command::Cheat)].boxed(),
        Phase::Discussion => (prop::sample::select(others), any::<bool>())
            .prop_map(|(n, p)| if p { Command::Punish(n) } else { Command::Next(n) })
            .boxed(),
    }
}

fn case() -> impl Strategy<Value = (Phase, usize, Command)> {
    (any::<bool>(), 0usize..7).prop_flat_map(|(discussion, speaker)| {
        let phase = if discussion { Phase::Discussion } else { Phase::Test };
        command_for(phase, speaker).prop_map(move |c| (phase, speaker, c))
    })
}

fn random_case(s: &str, mask: u64) -> String {
    s.chars()
        .enumerate()
        .map(|(i, c)| if mask >> (i % 64) & 1 == 1 { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn rendered_commands_round_trip(
        (phase, speaker, command) in case(),
        before in prose(),
        after in prose(),
    ) {
        let text = format!("{before}{}{after}", render_command(&command));
        prop_assert_eq!(parse_utterance(&text, &roster(), phase, NAMES[speaker]), Ok(command));
    }

    #[test]
    fn tags_and_names_ignore_case_and_padding(
        target in 1usize..7,
        mask in any::<u64>(),
        pad_l in " {0,3}",
        pad_r in " {0,3}",
        punish in any::<bool>(),
    ) {
        let tag = if punish { "punish" } else { "next" };
        let tag = random_case(tag, mask);
        let name = random_case(NAMES[target], mask.rotate_left(7));
        let text = format!("ok <{tag}>{pad_l}{name}{pad_r}</{tag}> done");
        let expected = if punish {
            Command::Punish(NAMES[target].to_string())
        } else {
            Command::Next(NAMES[target].to_string())
        };
        prop_assert_eq!(parse_utterance(&text, &roster(), Phase::Discussion, "Alice"), Ok(expected));
    }

    #[test]
    fn parser_is_total_on_arbitrary_text(text in ".{0,200}", discussion in any::<bool>()) {
        let phase = if discussion { Phase::Discussion } else { Phase::Test };
        if let Ok(c) = parse_utterance(&text, &roster(), phase, "Alice") {
            prop_assert_eq!(c.phase(), phase);
            prop_assert!(c.target().is_none_or(|t| NAMES.contains(&t) && t != "Alice"));
        }
    }

    #[test]
    fn parser_is_total_on_tag_soup(
        parts in prop::collection::vec(
            prop_oneof![
                Just("<".to_string()), Just(">".to_string()), Just("/".to_string()), Just("/>".to_string()),
                Just("<test/>".to_string()), Just("<cheat />".to_string()), Just("<punish>".to_string()),
                Just("</punish>".to_string()), Just("<next>".to_string()), Just("</next>".to_string()),
                Just("Bob".to_string()), Just("alice".to_string()), Just(" ".to_string()), Just("é".to_string()),
                "[a-zA-Z]{1,4}",
            ],
            0..20,
        ),
        discussion in any::<bool>(),
    ) {
        let text: String = parts.concat();
        let phase = if discussion { Phase::Discussion } else { Phase::Test };
        if let Ok(c) = parse_utterance(&text, &roster(), phase, "Alice") {
            prop_assert_eq!(c.phase(), phase);
        }
    }
}

#[test]
fn error_kinds() {
    use ParseErrorKind::*;
    let d = Phase::Discussion;
    let t = Phase::Test;
    assert_eq!(kind("I'd rather not say.", t, "Alice"), Err(NoCommand));
    assert_eq!(kind("<test/> and <cheat/>", t, "Alice"), Err(MultipleCommands));
    assert_eq!(kind("<test/><test/>", t, "Alice"), Err(MultipleCommands));
    assert_eq!(kind("<punish>Zed</punish>", d, "Alice"), Err(UnknownTarget));
    assert_eq!(kind("<next>alice</next>", d, "Alice"), Err(SelfTarget));
    assert_eq!(kind("<cheat/>", d, "Alice"), Err(PhaseViolation));
    assert_eq!(kind("<punish>Bob</punish>", t, "Alice"), Err(PhaseViolation));
    assert_eq!(kind("<punish>Bob", d, "Alice"), Err(MalformedTag));
    assert_eq!(kind("<punish></punish>", d, "Alice"), Err(MalformedTag));
    assert_eq!(kind("<next/>", d, "Alice"), Err(MalformedTag));
    assert_eq!(kind("<test>", t, "Alice"), Err(MalformedTag));
    assert_eq!(kind("</cheat>", t, "Alice"), Err(MalformedTag));
}

#[test]
fn accepted_spellings() {
    let t = Phase::Test;
    assert_eq!(kind("<TEST/>", t, "Alice"), Ok(Command::Test));
    assert_eq!(kind("<test />", t, "Alice"), Ok(Command::Test));
    assert_eq!(kind("<Cheat   />", t, "Alice"), Ok(Command::Cheat));
    assert_eq!(kind("<b>bold</b> <tests> <cheat/>", t, "Alice"), Ok(Command::Cheat));
    assert_eq!(kind("a < b, <next>  carol </next>", Phase::Discussion, "Alice"), Ok(Command::Next("Carol".into())));
}

#[test]
fn every_listed_command_parses() {
    for phase in [Phase::Test, Phase::Discussion] {
        for speaker in NAMES {
            let line = legal_commands_line(&roster(), phase, speaker);
            let tags: Vec<&str> = line.strip_prefix(COMMANDS_PREFIX).unwrap().split(COMMANDS_SEPARATOR).collect();
            let expected = if phase == Phase::Test { 2 } else { 12 };
            assert_eq!(tags.len(), expected);
            for tag in tags {
                let c = parse_utterance(tag, &roster(), phase, speaker).unwrap();
                assert_eq!(render_command(&c), tag);
            }
        }
    }
}

#[test]
fn rosters_reject_bad_names() {
    assert!(Roster::new(Vec::<String>::new()).is_err());
    assert!(Roster::new(["Ann", "ann"]).is_err());
    assert!(Roster::new(["Ann", "<b>"]).is_err());
    assert!(Roster::new([" Ann"]).is_err());
}
