//! Recursive-descent parser for the rule language.
//!
//! ```text
//! rules     := { rule } ;
//! rule      := "IF" expr "THEN" "{" message "}" ;
//! expr      := term { "OR" term } ;
//! term      := factor { "AND" factor } ;
//! factor    := "NOT" factor | "(" expr ")" | predicate ;
//! predicate := NAME "(" [ arg { "," arg } ] ")" ;
//! arg       := STRING | INTEGER ;
//! message   := any text up to the matching unescaped "}" ;
//! ```
//!
//! Keywords are case-insensitive, predicate names case-sensitive. `#`
//! starts a line comment. Strings are single-quoted with `\'` and `\\`
//! escapes; inside a message `\}` and `\\` escape the delimiter and the
//! backslash. Every failure carries the 1-based line and column where
//! it was detected.

use std::fmt::Write as _;

use thiserror::Error;

use crate::fingerprint::Mac;
use crate::rules::ast::{ConditionNode, Predicate, TimeOfDay};
use crate::rules::{rule_id_from_source, Rule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: expected {}, found {found}", fmt_expected(.expected))]
    Syntax {
        line: u32,
        col: u32,
        expected: Vec<&'static str>,
        found: String,
    },
    #[error("{line}:{col}: unknown predicate `{name}`")]
    UnknownPredicate { line: u32, col: u32, name: String },
    #[error("{line}:{col}: predicate {name} takes {expected} argument(s), got {got}")]
    Arity {
        line: u32,
        col: u32,
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{line}:{col}: argument {index} of {name} must be {expected}")]
    Argument {
        line: u32,
        col: u32,
        name: &'static str,
        index: usize,
        expected: &'static str,
    },
    #[error("{line}:{col}: RSSI_IN interval is inverted: lo {lo} > hi {hi}")]
    RssiRange { line: u32, col: u32, lo: i32, hi: i32 },
    #[error("{line}:{col}: unterminated string literal")]
    UnterminatedString { line: u32, col: u32 },
    #[error("{line}:{col}: unterminated message (missing `}}`)")]
    UnterminatedMessage { line: u32, col: u32 },
    #[error("{line}:{col}: integer literal out of range")]
    IntegerOverflow { line: u32, col: u32 },
    #[error("{line}:{col}: unexpected character `{ch}`")]
    UnexpectedCharacter { line: u32, col: u32, ch: char },
}

fn fmt_expected(expected: &[&'static str]) -> String {
    let mut out = String::new();
    for (i, e) in expected.iter().enumerate() {
        if i > 0 {
            out.push_str(if i + 1 == expected.len() { " or " } else { ", " });
        }
        let _ = write!(out, "{e}");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Name(String),
    Str(String),
    Int(i64),
    LParen,
    RParen,
    Comma,
    LBrace,
    Eof,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Name(n) => format!("`{n}`"),
            Token::Str(_) => "string literal".to_string(),
            Token::Int(v) => format!("`{v}`"),
            Token::LParen => "`(`".to_string(),
            Token::RParen => "`)`".to_string(),
            Token::Comma => "`,`".to_string(),
            Token::LBrace => "`{`".to_string(),
            Token::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Token,
    line: u32,
    col: u32,
    start_byte: usize,
}

struct Scanner<'s> {
    src: &'s str,
    chars: Vec<(usize, char)>,
    pos: usize,
    line: u32,
    col: u32,
}

impl<'s> Scanner<'s> {
    fn new(src: &'s str) -> Self {
        Self {
            src,
            chars: src.char_indices().collect(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn byte_offset(&self) -> usize {
        self.chars
            .get(self.pos)
            .map_or(self.src.len(), |&(off, _)| off)
    }

    fn bump(&mut self) -> Option<char> {
        let &(_, c) = self.chars.get(self.pos)?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Result<Spanned, ParseError> {
        self.skip_trivia();
        let (line, col, start_byte) = (self.line, self.col, self.byte_offset());
        let spanned = |tok| Spanned {
            tok,
            line,
            col,
            start_byte,
        };
        let Some(c) = self.peek() else {
            return Ok(spanned(Token::Eof));
        };
        match c {
            '(' => {
                self.bump();
                Ok(spanned(Token::LParen))
            }
            ')' => {
                self.bump();
                Ok(spanned(Token::RParen))
            }
            ',' => {
                self.bump();
                Ok(spanned(Token::Comma))
            }
            '{' => {
                self.bump();
                Ok(spanned(Token::LBrace))
            }
            '\'' => {
                self.bump();
                let mut out = String::new();
                loop {
                    match self.bump() {
                        None => return Err(ParseError::UnterminatedString { line, col }),
                        Some('\'') => break,
                        Some('\\') => match self.bump() {
                            None => return Err(ParseError::UnterminatedString { line, col }),
                            Some(esc @ ('\'' | '\\')) => out.push(esc),
                            Some(other) => {
                                out.push('\\');
                                out.push(other);
                            }
                        },
                        Some(other) => out.push(other),
                    }
                }
                Ok(spanned(Token::Str(out)))
            }
            '-' | '0'..='9' => {
                let mut text = String::new();
                if c == '-' {
                    text.push(c);
                    self.bump();
                    if !matches!(self.peek(), Some('0'..='9')) {
                        return Err(ParseError::UnexpectedCharacter { line, col, ch: '-' });
                    }
                }
                while let Some(d @ '0'..='9') = self.peek() {
                    text.push(d);
                    self.bump();
                }
                let value: i64 = text
                    .parse()
                    .map_err(|_| ParseError::IntegerOverflow { line, col })?;
                Ok(spanned(Token::Int(value)))
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut name = String::new();
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        name.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                Ok(spanned(Token::Name(name)))
            }
            other => Err(ParseError::UnexpectedCharacter {
                line,
                col,
                ch: other,
            }),
        }
    }

    /// Raw message scan, entered immediately after the opening brace.
    /// `\}` and `\\` unescape; the result is trimmed.
    fn read_message(&mut self, brace_line: u32, brace_col: u32) -> Result<String, ParseError> {
        let mut out = String::new();
        loop {
            match self.bump() {
                None => {
                    return Err(ParseError::UnterminatedMessage {
                        line: brace_line,
                        col: brace_col,
                    })
                }
                Some('}') => break,
                Some('\\') => match self.bump() {
                    None => {
                        return Err(ParseError::UnterminatedMessage {
                            line: brace_line,
                            col: brace_col,
                        })
                    }
                    Some(esc @ ('}' | '\\')) => out.push(esc),
                    Some(other) => {
                        out.push('\\');
                        out.push(other);
                    }
                },
                Some(other) => out.push(other),
            }
        }
        Ok(out.trim().to_string())
    }
}

fn keyword(tok: &Token) -> Option<&'static str> {
    let Token::Name(n) = tok else { return None };
    for kw in ["IF", "THEN", "AND", "OR", "NOT"] {
        if n.eq_ignore_ascii_case(kw) {
            return Some(kw);
        }
    }
    None
}

struct Parser<'s> {
    scanner: Scanner<'s>,
    lookahead: Option<Spanned>,
}

impl<'s> Parser<'s> {
    fn new(src: &'s str) -> Self {
        Self {
            scanner: Scanner::new(src),
            lookahead: None,
        }
    }

    fn peek(&mut self) -> Result<&Spanned, ParseError> {
        if self.lookahead.is_none() {
            self.lookahead = Some(self.scanner.next_token()?);
        }
        Ok(self.lookahead.as_ref().expect("just filled"))
    }

    fn bump(&mut self) -> Result<Spanned, ParseError> {
        match self.lookahead.take() {
            Some(tok) => Ok(tok),
            None => self.scanner.next_token(),
        }
    }

    fn syntax_error(expected: Vec<&'static str>, found: &Spanned) -> ParseError {
        ParseError::Syntax {
            line: found.line,
            col: found.col,
            expected,
            found: found.tok.describe(),
        }
    }

    fn expect_keyword(&mut self, kw: &'static str, expected: Vec<&'static str>) -> Result<Spanned, ParseError> {
        let tok = self.bump()?;
        if keyword(&tok.tok) == Some(kw) {
            Ok(tok)
        } else {
            Err(Self::syntax_error(expected, &tok))
        }
    }

    fn parse_rules(&mut self) -> Result<Vec<Rule>, ParseError> {
        let mut rules = Vec::new();
        loop {
            let tok = self.bump()?;
            match &tok.tok {
                Token::Eof => break,
                _ if keyword(&tok.tok) == Some("IF") => rules.push(self.parse_rule(tok)?),
                _ => return Err(Self::syntax_error(vec!["`IF`"], &tok)),
            }
        }
        Ok(rules)
    }

    fn parse_rule(&mut self, if_tok: Spanned) -> Result<Rule, ParseError> {
        let condition = self.parse_expr()?;
        self.expect_keyword("THEN", vec!["`AND`", "`OR`", "`THEN`"])?;
        let brace = self.bump()?;
        if brace.tok != Token::LBrace {
            return Err(Self::syntax_error(vec!["`{`"], &brace));
        }
        debug_assert!(self.lookahead.is_none(), "message scan needs the raw cursor");
        let message = self.scanner.read_message(brace.line, brace.col)?;
        let end = self.scanner.byte_offset();
        let source = &self.scanner.src[if_tok.start_byte..end];
        Ok(Rule::from_parts(rule_id_from_source(source), condition, message))
    }

    fn parse_expr(&mut self) -> Result<ConditionNode, ParseError> {
        let mut node = self.parse_term()?;
        while keyword(&self.peek()?.tok) == Some("OR") {
            self.bump()?;
            node = ConditionNode::or(node, self.parse_term()?);
        }
        Ok(node)
    }

    fn parse_term(&mut self) -> Result<ConditionNode, ParseError> {
        let mut node = self.parse_factor()?;
        while keyword(&self.peek()?.tok) == Some("AND") {
            self.bump()?;
            node = ConditionNode::and(node, self.parse_factor()?);
        }
        Ok(node)
    }

    fn parse_factor(&mut self) -> Result<ConditionNode, ParseError> {
        let tok = self.bump()?;
        match &tok.tok {
            _ if keyword(&tok.tok) == Some("NOT") => {
                Ok(ConditionNode::not(self.parse_factor()?))
            }
            Token::LParen => {
                let inner = self.parse_expr()?;
                let close = self.bump()?;
                if close.tok != Token::RParen {
                    return Err(Self::syntax_error(vec!["`)`", "`AND`", "`OR`"], &close));
                }
                Ok(inner)
            }
            Token::Name(_) if keyword(&tok.tok).is_none() => self.parse_predicate(tok),
            _ => Err(Self::syntax_error(
                vec!["`NOT`", "`(`", "predicate name"],
                &tok,
            )),
        }
    }

    fn parse_predicate(&mut self, name_tok: Spanned) -> Result<ConditionNode, ParseError> {
        let Token::Name(name) = &name_tok.tok else {
            unreachable!("caller matched a name token")
        };
        let open = self.bump()?;
        if open.tok != Token::LParen {
            return Err(Self::syntax_error(vec!["`(`"], &open));
        }
        let mut args = Vec::new();
        if self.peek()?.tok != Token::RParen {
            loop {
                let arg = self.bump()?;
                match arg.tok {
                    Token::Str(_) | Token::Int(_) => args.push(arg),
                    _ => {
                        return Err(Self::syntax_error(
                            vec!["string literal", "integer"],
                            &arg,
                        ))
                    }
                }
                let sep = self.bump()?;
                match sep.tok {
                    Token::Comma => continue,
                    Token::RParen => break,
                    _ => return Err(Self::syntax_error(vec!["`,`", "`)`"], &sep)),
                }
            }
        } else {
            self.bump()?;
        }
        build_predicate(name, &name_tok, &args).map(ConditionNode::Predicate)
    }
}

struct ArgReader<'a> {
    name: &'static str,
    at: &'a Spanned,
    args: &'a [Spanned],
}

impl<'a> ArgReader<'a> {
    fn check_arity(&self, expected: usize) -> Result<(), ParseError> {
        if self.args.len() != expected {
            return Err(ParseError::Arity {
                line: self.at.line,
                col: self.at.col,
                name: self.name,
                expected,
                got: self.args.len(),
            });
        }
        Ok(())
    }

    fn bad_arg(&self, index: usize, expected: &'static str) -> ParseError {
        ParseError::Argument {
            line: self.at.line,
            col: self.at.col,
            name: self.name,
            index: index + 1,
            expected,
        }
    }

    fn string(&self, index: usize) -> Result<&'a str, ParseError> {
        match &self.args[index].tok {
            Token::Str(s) => Ok(s),
            _ => Err(self.bad_arg(index, "a string")),
        }
    }

    fn integer(&self, index: usize) -> Result<i64, ParseError> {
        match &self.args[index].tok {
            Token::Int(v) => Ok(*v),
            _ => Err(self.bad_arg(index, "an integer")),
        }
    }

    fn mac(&self, index: usize) -> Result<Mac, ParseError> {
        self.string(index)?
            .parse()
            .map_err(|_| self.bad_arg(index, "a mac address"))
    }

    fn time(&self, index: usize) -> Result<TimeOfDay, ParseError> {
        self.string(index)?
            .parse()
            .map_err(|_| self.bad_arg(index, "a time in HH:MM form"))
    }

    fn dbm(&self, index: usize) -> Result<i32, ParseError> {
        i32::try_from(self.integer(index)?).map_err(|_| self.bad_arg(index, "a dBm integer"))
    }
}

fn build_predicate(
    name: &str,
    at: &Spanned,
    args: &[Spanned],
) -> Result<Predicate, ParseError> {
    let known: &'static str = match name {
        "IS_VISIBLE" => "IS_VISIBLE",
        "IS_VISIBLE_MAC" => "IS_VISIBLE_MAC",
        "RSSI_IN" => "RSSI_IN",
        "TIME_BETWEEN" => "TIME_BETWEEN",
        "CLIENT_IS" => "CLIENT_IS",
        "FIRST_VISIT" => "FIRST_VISIT",
        "IN_GROUP_OF" => "IN_GROUP_OF",
        "ATTR_GE" => "ATTR_GE",
        _ => {
            return Err(ParseError::UnknownPredicate {
                line: at.line,
                col: at.col,
                name: name.to_string(),
            })
        }
    };
    let reader = ArgReader {
        name: known,
        at,
        args,
    };
    match known {
        "IS_VISIBLE" => {
            reader.check_arity(1)?;
            Ok(Predicate::IsVisible(reader.string(0)?.to_string()))
        }
        "IS_VISIBLE_MAC" => {
            reader.check_arity(1)?;
            Ok(Predicate::IsVisibleMac(reader.mac(0)?))
        }
        "RSSI_IN" => {
            reader.check_arity(3)?;
            let ssid = reader.string(0)?.to_string();
            let lo = reader.dbm(1)?;
            let hi = reader.dbm(2)?;
            if lo > hi {
                return Err(ParseError::RssiRange {
                    line: at.line,
                    col: at.col,
                    lo,
                    hi,
                });
            }
            Ok(Predicate::RssiIn { ssid, lo, hi })
        }
        "TIME_BETWEEN" => {
            reader.check_arity(2)?;
            Ok(Predicate::TimeBetween {
                from: reader.time(0)?,
                to: reader.time(1)?,
            })
        }
        "CLIENT_IS" => {
            reader.check_arity(1)?;
            Ok(Predicate::ClientIs(reader.mac(0)?))
        }
        "FIRST_VISIT" => {
            reader.check_arity(0)?;
            Ok(Predicate::FirstVisit)
        }
        "IN_GROUP_OF" => {
            reader.check_arity(2)?;
            let n = reader.integer(0)?;
            let t = reader.integer(1)?;
            let n = u32::try_from(n)
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| reader.bad_arg(0, "a positive group size"))?;
            let t_secs = u64::try_from(t)
                .ok()
                .filter(|&t| t >= 1)
                .ok_or_else(|| reader.bad_arg(1, "a positive duration in seconds"))?;
            Ok(Predicate::InGroupOf { n, t_secs })
        }
        "ATTR_GE" => {
            reader.check_arity(2)?;
            Ok(Predicate::AttrGe {
                key: reader.string(0)?.to_string(),
                min: reader.integer(1)?,
            })
        }
        _ => unreachable!("known predicate names handled above"),
    }
}

/// Parses a rules file: one [`Rule`] per `IF … THEN { … }` statement.
pub fn parse_rules(source: &str) -> Result<Vec<Rule>, ParseError> {
    Parser::new(source).parse_rules()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vis(s: &str) -> ConditionNode {
        Predicate::IsVisible(s.into()).into()
    }

    #[test]
    fn parses_the_coupon_rule() {
        let rules =
            parse_rules("IF IS_VISIBLE('mycafe') AND FIRST_VISIT() THEN { present the coupon info }")
                .unwrap();
        assert_eq!(rules.len(), 1);
        assert_eq!(
            *rules[0].condition(),
            ConditionNode::and(vis("mycafe"), Predicate::FirstVisit.into())
        );
        assert_eq!(rules[0].message(), "present the coupon info");
    }

    #[test]
    fn empty_input_is_an_empty_rule_set() {
        assert!(parse_rules("").unwrap().is_empty());
        assert!(parse_rules("   \n# only a comment\n").unwrap().is_empty());
    }

    #[test]
    fn and_binds_tighter_than_or() {
        let rules = parse_rules(
            "IF IS_VISIBLE('a') OR IS_VISIBLE('b') AND CLIENT_IS('aa:bb:cc:dd:ee:ff') THEN {x}",
        )
        .unwrap();
        let client: Mac = "aa:bb:cc:dd:ee:ff".parse().unwrap();
        let expected = ConditionNode::or(
            vis("a"),
            ConditionNode::and(vis("b"), Predicate::ClientIs(client).into()),
        );
        assert_eq!(*rules[0].condition(), expected);
    }

    #[test]
    fn or_chains_left_associative() {
        let rules = parse_rules("IF IS_VISIBLE('a') OR IS_VISIBLE('b') OR IS_VISIBLE('c') THEN {x}")
            .unwrap();
        let expected = ConditionNode::or(ConditionNode::or(vis("a"), vis("b")), vis("c"));
        assert_eq!(*rules[0].condition(), expected);
    }

    #[test]
    fn parentheses_and_not() {
        let rules =
            parse_rules("IF NOT (IS_VISIBLE('a') OR IS_VISIBLE('b')) AND NOT NOT FIRST_VISIT() THEN {x}")
                .unwrap();
        let expected = ConditionNode::and(
            ConditionNode::not(ConditionNode::or(vis("a"), vis("b"))),
            ConditionNode::not(ConditionNode::not(Predicate::FirstVisit.into())),
        );
        assert_eq!(*rules[0].condition(), expected);
    }

    #[test]
    fn keywords_are_case_insensitive() {
        let rules = parse_rules("if IS_VISIBLE('a') and not FIRST_VISIT() then {x}").unwrap();
        assert_eq!(rules.len(), 1);
    }

    #[test]
    fn predicate_names_are_case_sensitive() {
        let err = parse_rules("IF is_visible('a') THEN {x}").unwrap_err();
        assert!(matches!(err, ParseError::UnknownPredicate { ref name, .. } if name == "is_visible"));
    }

    #[test]
    fn unknown_predicate_is_named() {
        let err = parse_rules("IF NEARBY('a') THEN {x}").unwrap_err();
        match err {
            ParseError::UnknownPredicate { name, line, col } => {
                assert_eq!(name, "NEARBY");
                assert_eq!((line, col), (1, 4));
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn wrong_arity_is_reported() {
        let err = parse_rules("IF FIRST_VISIT('x') THEN {x}").unwrap_err();
        assert!(matches!(
            err,
            ParseError::Arity {
                name: "FIRST_VISIT",
                expected: 0,
                got: 1,
                ..
            }
        ));
    }

    #[test]
    fn inverted_rssi_interval_is_rejected() {
        let err = parse_rules("IF RSSI_IN('x', -40, -60) THEN {x}").unwrap_err();
        assert!(matches!(err, ParseError::RssiRange { lo: -40, hi: -60, .. }));
    }

    #[test]
    fn in_group_of_requires_positive_arguments() {
        assert!(parse_rules("IF IN_GROUP_OF(0, 60) THEN {x}").is_err());
        assert!(parse_rules("IF IN_GROUP_OF(2, 0) THEN {x}").is_err());
        assert!(parse_rules("IF IN_GROUP_OF(2, 60) THEN {x}").is_ok());
    }

    #[test]
    fn syntax_error_carries_position_and_expectations() {
        let err = parse_rules("IF IS_VISIBLE('a')\nTHEN present").unwrap_err();
        match err {
            ParseError::Syntax {
                line,
                col,
                expected,
                found,
            } => {
                assert_eq!((line, col), (2, 6));
                assert_eq!(expected, vec!["`{`"]);
                assert_eq!(found, "`present`");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn message_escapes_brace_and_backslash() {
        let rules = parse_rules(r"IF FIRST_VISIT() THEN { a \} b \\ c }").unwrap();
        assert_eq!(rules[0].message(), r"a } b \ c");
    }

    #[test]
    fn unterminated_message_points_at_the_brace() {
        let err = parse_rules("IF FIRST_VISIT() THEN { no closing brace").unwrap_err();
        assert!(matches!(err, ParseError::UnterminatedMessage { line: 1, col: 23 }));
    }

    #[test]
    fn string_escapes_quote_and_backslash() {
        let rules = parse_rules(r"IF IS_VISIBLE('caf\'e \\ bar') THEN {x}").unwrap();
        assert_eq!(
            *rules[0].condition(),
            ConditionNode::Predicate(Predicate::IsVisible(r"caf'e \ bar".into()))
        );
    }

    #[test]
    fn rule_ids_are_stable_and_distinct() {
        let src = "IF IS_VISIBLE('a') THEN {x}\nIF IS_VISIBLE('b') THEN {x}";
        let first = parse_rules(src).unwrap();
        let second = parse_rules(src).unwrap();
        assert_eq!(first[0].id(), second[0].id());
        assert_ne!(first[0].id(), first[1].id());
    }

    #[test]
    fn two_statements_parse_in_order() {
        let src = "# two rules\nIF IS_VISIBLE('a') THEN {first}\n\nIF IS_VISIBLE('b') THEN {second}\n";
        let rules = parse_rules(src).unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].message(), "first");
        assert_eq!(rules[1].message(), "second");
    }
}
