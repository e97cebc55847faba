//! Tag-command protocol.
//!
//! Agents act by embedding exactly one tag in otherwise free text:
//!
//! | phase      | tags                                        |
//! |------------|---------------------------------------------|
//! | test       | `<test/>`, `<cheat/>`                       |
//! | discussion | `<punish>NAME</punish>`, `<next>NAME</next>` |
//!
//! Tag names are case-insensitive and `<test />` (whitespace before `/>`)
//! is accepted. Names are trimmed and matched case-insensitively against
//! the roster. Any other `<...>` text is prose and ignored.
//!
//! The scanner is a single left-to-right pass and never panics; every
//! input yields either a [`Command`] or a [`ParseError`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of re-prompts granted after a failed parse before the engine
/// substitutes a fallback command.
pub const MAX_REPROMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Test,
    Discussion,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Test => f.write_str("test"),
            Phase::Discussion => f.write_str("discussion"),
        }
    }
}

/// A validated game action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "snake_case")]
pub enum Command {
    Test,
    Cheat,
    Punish(String),
    Next(String),
}

impl Command {
    pub fn phase(&self) -> Phase {
        match self {
            Command::Test | Command::Cheat => Phase::Test,
            Command::Punish(_) | Command::Next(_) => Phase::Discussion,
        }
    }

    pub fn target(&self) -> Option<&str> {
        match self {
            Command::Punish(t) | Command::Next(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_command(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ParseErrorKind {
    NoCommand,
    MultipleCommands,
    UnknownTarget,
    SelfTarget,
    PhaseViolation,
    MalformedTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind:?}: {detail}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub detail: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RosterError {
    #[error("roster is empty")]
    Empty,
    #[error("invalid agent name {0:?}")]
    InvalidName(String),
    #[error("agent names {0:?} and {1:?} collide case-insensitively")]
    Duplicate(String, String),
}

fn fold(name: &str) -> String {
    name.to_lowercase()
}

/// Ordered list of agent names, unique under case folding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Roster(Vec<String>);

impl Roster {
    pub fn new<I, S>(names: I) -> Result<Self, RosterError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(RosterError::Empty);
        }
        for (i, name) in names.iter().enumerate() {
            if !valid_name(name) {
                return Err(RosterError::InvalidName(name.clone()));
            }
            if let Some(prev) = names[..i].iter().find(|p| fold(p) == fold(name)) {
                return Err(RosterError::Duplicate(prev.clone(), name.clone()));
            }
        }
        Ok(Self(names))
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Case-insensitive lookup returning the roster index.
    pub fn position(&self, name: &str) -> Option<usize> {
        let key = fold(name.trim());
        self.0.iter().position(|n| fold(n) == key)
    }

    pub fn resolve(&self, name: &str) -> Option<&str> {
        self.position(name).map(|i| self.0[i].as_str())
    }
}

impl<'de> Deserialize<'de> for Roster {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        Roster::new(names).map_err(serde::de::Error::custom)
    }
}

/// Names must be non-empty, already trimmed, and free of angle brackets so
/// they can sit inside a paired tag.
pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.trim() == name
        && !name.contains(['<', '>'])
        && !name.chars().any(char::is_control)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Keyword {
    Test,
    Cheat,
    Punish,
    Next,
}

impl Keyword {
    fn from_ascii(word: &[u8]) -> Option<Self> {
        const TABLE: [(&str, Keyword); 4] = [
            ("test", Keyword::Test),
            ("cheat", Keyword::Cheat),
            ("punish", Keyword::Punish),
            ("next", Keyword::Next),
        ];
        TABLE
            .iter()
            .find(|(s, _)| s.as_bytes().eq_ignore_ascii_case(word))
            .map(|&(_, k)| k)
    }

    fn as_str(self) -> &'static str {
        match self {
            Keyword::Test => "test",
            Keyword::Cheat => "cheat",
            Keyword::Punish => "punish",
            Keyword::Next => "next",
        }
    }

    fn takes_target(self) -> bool {
        matches!(self, Keyword::Punish | Keyword::Next)
    }
}

#[derive(Debug)]
enum Token {
    Tag(Keyword, String),
    Malformed(String),
}

fn skip_ws(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    i
}

fn read_word(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
        i += 1;
    }
    i
}

/// Tries to read `</kw\s*>` at `i`; returns the index after it.
fn closing_tag(bytes: &[u8], i: usize, kw: Keyword) -> Option<usize> {
    if bytes.get(i..i + 2) != Some(b"</") {
        return None;
    }
    let end = read_word(bytes, i + 2);
    if Keyword::from_ascii(&bytes[i + 2..end]) != Some(kw) {
        return None;
    }
    let j = skip_ws(bytes, end);
    (bytes.get(j) == Some(&b'>')).then_some(j + 1)
}

fn scan(text: &str) -> Vec<Token> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let closing = bytes.get(i + 1) == Some(&b'/');
        let word_start = i + 1 + usize::from(closing);
        let word_end = read_word(bytes, word_start);
        let Some(kw) = Keyword::from_ascii(&bytes[word_start..word_end]) else {
            i += 1;
            continue;
        };
        // A keyword glued to further letters/digits (`<tests>`, `<next2>`)
        // is prose, not a tag.
        if bytes
            .get(word_end)
            .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_' || *b == b'-')
        {
            i += 1;
            continue;
        }
        if closing {
            tokens.push(Token::Malformed(format!("stray closing tag </{}>", kw.as_str())));
            i = word_end;
            continue;
        }
        let after = skip_ws(bytes, word_end);
        if bytes.get(after..after + 2) == Some(b"/>") {
            if kw.takes_target() {
                tokens.push(Token::Malformed(format!(
                    "<{}/> needs a name: <{0}>NAME</{0}>",
                    kw.as_str()
                )));
            } else {
                tokens.push(Token::Tag(kw, String::new()));
            }
            i = after + 2;
            continue;
        }
        if bytes.get(after) != Some(&b'>') {
            tokens.push(Token::Malformed(format!("unterminated <{}", kw.as_str())));
            i = word_end;
            continue;
        }
        if !kw.takes_target() {
            tokens.push(Token::Malformed(format!(
                "<{0}> must be written as <{0}/>",
                kw.as_str()
            )));
            i = after + 1;
            continue;
        }
        let content_start = after + 1;
        let content_end = bytes[content_start..]
            .iter()
            .position(|&b| b == b'<')
            .map_or(bytes.len(), |p| content_start + p);
        match closing_tag(bytes, content_end, kw) {
            Some(next) => {
                // `<` and `>` are ASCII so these are char boundaries.
                let name = text[content_start..content_end].trim();
                if name.is_empty() {
                    tokens.push(Token::Malformed(format!("empty <{}> tag", kw.as_str())));
                } else {
                    tokens.push(Token::Tag(kw, name.to_string()));
                }
                i = next;
            }
            None => {
                tokens.push(Token::Malformed(format!(
                    "<{0}> is not closed by </{0}>",
                    kw.as_str()
                )));
                i = content_end;
            }
        }
    }
    tokens
}

/// Parses one utterance into a command valid for `phase`, spoken by
/// `speaker`.
pub fn parse_utterance(
    text: &str,
    roster: &Roster,
    phase: Phase,
    speaker: &str,
) -> Result<Command, ParseError> {
    let mut tokens = scan(text);
    if tokens.len() > 1 {
        return Err(ParseError::new(
            ParseErrorKind::MultipleCommands,
            format!("found {} command tags, expected exactly one", tokens.len()),
        ));
    }
    let (kw, name) = match tokens.pop() {
        None => {
            return Err(ParseError::new(
                ParseErrorKind::NoCommand,
                "no command tag found",
            ))
        }
        Some(Token::Malformed(detail)) => {
            return Err(ParseError::new(ParseErrorKind::MalformedTag, detail))
        }
        Some(Token::Tag(kw, name)) => (kw, name),
    };
    let command = match kw {
        Keyword::Test => Command::Test,
        Keyword::Cheat => Command::Cheat,
        Keyword::Punish | Keyword::Next => {
            let Some(resolved) = roster.resolve(&name) else {
                return Err(ParseError::new(ParseErrorKind::UnknownTarget, name));
            };
            if fold(resolved) == fold(speaker.trim()) {
                return Err(ParseError::new(ParseErrorKind::SelfTarget, resolved));
            }
            let resolved = resolved.to_string();
            if kw == Keyword::Punish {
                Command::Punish(resolved)
            } else {
                Command::Next(resolved)
            }
        }
    };
    if command.phase() != phase {
        return Err(ParseError::new(
            ParseErrorKind::PhaseViolation,
            format!("<{}> is not allowed in the {phase} phase", kw.as_str()),
        ));
    }
    Ok(command)
}

/// Canonical tag text for a command.
pub fn render_command(command: &Command) -> String {
    match command {
        Command::Test => "<test/>".to_string(),
        Command::Cheat => "<cheat/>".to_string(),
        Command::Punish(name) => format!("<punish>{name}</punish>"),
        Command::Next(name) => format!("<next>{name}</next>"),
    }
}

pub const COMMANDS_PREFIX: &str = "Commands available: ";
pub const COMMANDS_SEPARATOR: &str = " | ";

/// Machine-readable line listing the commands legal for `phase`.
///
/// Included verbatim in every prompt; the offline stub gateway keys on the
/// `Commands available:` prefix.
pub fn legal_commands_line(roster: &Roster, phase: Phase, speaker: &str) -> String {
    let tags: Vec<String> = match phase {
        Phase::Test => vec![render_command(&Command::Test), render_command(&Command::Cheat)],
        Phase::Discussion => {
            let others: Vec<&String> = roster
                .names()
                .iter()
                .filter(|n| fold(n) != fold(speaker))
                .collect();
            others
                .iter()
                .map(|n| render_command(&Command::Next((*n).clone())))
                .chain(
                    others
                        .iter()
                        .map(|n| render_command(&Command::Punish((*n).clone()))),
                )
                .collect()
        }
    };
    format!("{COMMANDS_PREFIX}{}", tags.join(COMMANDS_SEPARATOR))
}

/// Re-prompt text for a failed parse. Deterministic in its inputs.
pub fn reprompt_message(error: &ParseError, roster: &Roster, phase: Phase) -> String {
    let problem = match error.kind {
        ParseErrorKind::NoCommand => "Your reply did not contain a command tag.".to_string(),
        ParseErrorKind::MultipleCommands => {
            "Your reply contained more than one command tag. Use exactly one.".to_string()
        }
        ParseErrorKind::UnknownTarget => format!(
            "\"{}\" is not a player in this game.",
            error.detail
        ),
        ParseErrorKind::SelfTarget => "You cannot name yourself as the target.".to_string(),
        ParseErrorKind::PhaseViolation => format!(
            "That command cannot be used now; this is the {phase} phase."
        ),
        ParseErrorKind::MalformedTag => format!("A command tag was malformed ({}).", error.detail),
    };
    let legal = match phase {
        Phase::Test => "In the test phase reply with exactly one of <test/> or <cheat/>.".to_string(),
        Phase::Discussion => format!(
            "In the discussion phase reply with exactly one of <next>NAME</next> or <punish>NAME</punish>, \
             where NAME is another player. Players: {}.",
            roster.names().join(", ")
        ),
    };
    format!("{problem} {legal}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roster() -> Roster {
        Roster::new(["Alice", "Bob", "Carol"]).unwrap()
    }

    fn parse(text: &str, phase: Phase) -> Result<Command, ParseError> {
        parse_utterance(text, &roster(), phase, "Alice")
    }

    fn kind(text: &str, phase: Phase) -> ParseErrorKind {
        parse(text, phase).unwrap_err().kind
    }

    #[test]
    fn punish_inside_prose() {
        assert_eq!(
            parse("I think Bob lied. <punish>Bob</punish>", Phase::Discussion),
            Ok(Command::Punish("Bob".into()))
        );
    }

    #[test]
    fn two_tags_is_multiple() {
        assert_eq!(kind("<test/> <cheat/>", Phase::Test), ParseErrorKind::MultipleCommands);
    }

    #[test]
    fn case_and_whitespace_are_forgiven() {
        assert_eq!(parse("<TEST />", Phase::Test), Ok(Command::Test));
        assert_eq!(parse("ok <Cheat/>!", Phase::Test), Ok(Command::Cheat));
        assert_eq!(
            parse("<NEXT>  carol \n</next >", Phase::Discussion),
            Ok(Command::Next("Carol".into()))
        );
    }

    #[test]
    fn error_kinds() {
        assert_eq!(kind("I pass.", Phase::Test), ParseErrorKind::NoCommand);
        assert_eq!(kind("<punish>Dave</punish>", Phase::Discussion), ParseErrorKind::UnknownTarget);
        assert_eq!(kind("<next>alice</next>", Phase::Discussion), ParseErrorKind::SelfTarget);
        assert_eq!(kind("<cheat/>", Phase::Discussion), ParseErrorKind::PhaseViolation);
        assert_eq!(kind("<next>Bob</next>", Phase::Test), ParseErrorKind::PhaseViolation);
        assert_eq!(kind("<punish>Bob", Phase::Discussion), ParseErrorKind::MalformedTag);
        assert_eq!(kind("<punish></punish>", Phase::Discussion), ParseErrorKind::MalformedTag);
        assert_eq!(kind("<punish/>", Phase::Discussion), ParseErrorKind::MalformedTag);
        assert_eq!(kind("<test>", Phase::Test), ParseErrorKind::MalformedTag);
        assert_eq!(kind("</next>", Phase::Discussion), ParseErrorKind::MalformedTag);
        assert_eq!(kind("<next Bob>", Phase::Discussion), ParseErrorKind::MalformedTag);
    }

    #[test]
    fn malformed_plus_valid_counts_as_multiple() {
        assert_eq!(
            kind("<next>Bob</next> <punish>Carol", Phase::Discussion),
            ParseErrorKind::MultipleCommands
        );
    }

    #[test]
    fn unrelated_markup_is_prose() {
        assert_eq!(parse("<b>bold</b> a < b <tests> <testing/> <test/>", Phase::Test), Ok(Command::Test));
    }

    #[test]
    fn unknown_target_detail_names_the_target() {
        let err = parse("<punish> Dave </punish>", Phase::Discussion).unwrap_err();
        assert_eq!(err.detail, "Dave");
        let msg = reprompt_message(&err, &roster(), Phase::Discussion);
        assert!(msg.contains("\"Dave\""));
        assert!(msg.contains("Alice, Bob, Carol"));
    }

    #[test]
    fn test_phase_reprompt_mentions_only_test_tags() {
        let err = parse("hello", Phase::Test).unwrap_err();
        let msg = reprompt_message(&err, &roster(), Phase::Test);
        assert!(msg.contains("<test/>") && msg.contains("<cheat/>"));
        assert!(!msg.contains("punish") && !msg.contains("next"));
        assert_eq!(msg, reprompt_message(&err, &roster(), Phase::Test));
    }

    #[test]
    fn render_examples() {
        assert_eq!(render_command(&Command::Punish("Bob".into())), "<punish>Bob</punish>");
        assert_eq!(render_command(&Command::Test), "<test/>");
    }

    #[test]
    fn roster_rejects_case_duplicates() {
        assert!(matches!(Roster::new(["Bob", "bob"]), Err(RosterError::Duplicate(..))));
        assert!(matches!(Roster::new(Vec::<String>::new()), Err(RosterError::Empty)));
        assert!(matches!(Roster::new(["<x>"]), Err(RosterError::InvalidName(_))));
        assert!(matches!(Roster::new([" Bob"]), Err(RosterError::InvalidName(_))));
    }

    #[test]
    fn multibyte_text_does_not_panic() {
        let _ = parse("é<punish>Ωmega</punish>ü<", Phase::Discussion);
        let _ = parse("<next>\u{1F600}", Phase::Discussion);
    }

    #[test]
    fn legal_line_excludes_speaker() {
        let line = legal_commands_line(&roster(), Phase::Discussion, "Alice");
        assert!(line.starts_with("Commands available: "));
        assert!(!line.contains("Alice"));
        assert!(line.contains("<punish>Carol</punish>"));
    }

    #[test]
    fn command_json_shape() {
        let json = serde_json::to_string(&Command::Punish("Bob".into())).unwrap();
        assert_eq!(json, r#"{"kind":"punish","target":"Bob"}"#);
        assert_eq!(serde_json::to_string(&Command::Test).unwrap(), r#"{"kind":"test"}"#);
    }
}
