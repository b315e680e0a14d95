//! Recursive-descent parser for the PCTL text syntax.
//!
//! ```text
//! state  := and
//! and    := unary ( '&' unary )*
//! unary  := '!' unary | primary
//! primary:= 'true' | '"' label '"' | '(' state ')'
//!         | 'P' cmp number '[' path ']'
//! path   := 'X' unary | state 'U' [ '<=' int ] state
//! cmp    := '<=' | '>=' | '<' | '>'
//! ```

use thiserror::Error;

use super::{Comparison, PathFormula, StateFormula};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown operator `{operator}` at position {position}")]
    UnknownOperator { position: usize, operator: String },
}

pub fn parse_pctl(text: &str) -> Result<StateFormula, ParseError> {
    let mut parser = Parser { text, pos: 0 };
    let formula = parser.state()?;
    parser.skip_ws();
    if parser.pos < text.len() {
        return Err(parser.unexpected("end of formula"));
    }
    Ok(formula)
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest().chars().next()
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), ParseError> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{token}`")))
        }
    }

    fn syntax(&self, message: String) -> ParseError {
        ParseError::Syntax {
            position: self.pos,
            message,
        }
    }

    fn unexpected(&mut self, wanted: &str) -> ParseError {
        self.skip_ws();
        let found = match self.rest().chars().next() {
            Some(c) => format!("`{c}`"),
            None => "end of input".to_string(),
        };
        // operator-like characters outside the grammar get their own error kind
        if self.rest().starts_with(['|', '=', '-', '+', '*', '/', '~', '^', '%']) {
            let operator: String = self
                .rest()
                .chars()
                .take_while(|ch| "|=-+*/~^%<>&!".contains(*ch))
                .collect();
            return ParseError::UnknownOperator {
                position: self.pos,
                operator,
            };
        }
        self.syntax(format!("expected {wanted}, found {found}"))
    }

    fn keyword(&mut self, word: &str) -> bool {
        self.skip_ws();
        let rest = self.rest();
        if rest.starts_with(word) {
            let after = rest[word.len()..].chars().next();
            if !after.is_some_and(|c| c.is_alphanumeric() || c == '_') {
                self.pos += word.len();
                return true;
            }
        }
        false
    }

    fn state(&mut self) -> Result<StateFormula, ParseError> {
        let mut lhs = self.unary()?;
        while self.eat("&") {
            let rhs = self.unary()?;
            lhs = lhs.and(rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<StateFormula, ParseError> {
        if self.eat("!") {
            return Ok(self.unary()?.not());
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<StateFormula, ParseError> {
        match self.peek() {
            Some('"') => {
                self.pos += 1;
                let end = self
                    .rest()
                    .find('"')
                    .ok_or_else(|| self.syntax("unterminated label".into()))?;
                let label = &self.rest()[..end];
                if label.is_empty() {
                    return Err(self.syntax("empty label".into()));
                }
                let label = label.to_string();
                self.pos += end + 1;
                Ok(StateFormula::Atom(label))
            }
            Some('(') => {
                self.pos += 1;
                let inner = self.state()?;
                self.expect(")")?;
                Ok(inner)
            }
            _ if self.keyword("true") => Ok(StateFormula::True),
            Some('P') => {
                self.pos += 1;
                let comparison = self.comparison()?;
                let threshold = self.threshold()?;
                self.expect("[")?;
                let path = self.path()?;
                self.expect("]")?;
                Ok(StateFormula::Prob {
                    comparison,
                    threshold,
                    path: Box::new(path),
                })
            }
            _ => Err(self.unexpected("a state formula")),
        }
    }

    fn comparison(&mut self) -> Result<Comparison, ParseError> {
        for (token, cmp) in [
            ("<=", Comparison::Le),
            (">=", Comparison::Ge),
            ("<", Comparison::Lt),
            (">", Comparison::Gt),
        ] {
            if self.eat(token) {
                return Ok(cmp);
            }
        }
        let start = self.pos;
        let operator: String = self.rest().chars().take_while(|c| !c.is_ascii_digit() && !c.is_whitespace() && *c != '.').collect();
        if operator.is_empty() {
            return Err(self.syntax("expected comparison after `P`".into()));
        }
        Err(ParseError::UnknownOperator {
            position: start,
            operator,
        })
    }

    fn number(&mut self) -> Result<&'a str, ParseError> {
        self.skip_ws();
        let rest = self.rest();
        let bytes = rest.as_bytes();
        let mut end = 0;
        while end < bytes.len() {
            let c = bytes[end];
            let exp_sign = (c == b'-' || c == b'+') && end > 0 && matches!(bytes[end - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                end += 1;
            } else {
                break;
            }
        }
        if end == 0 {
            return Err(self.syntax("expected a number".into()));
        }
        self.pos += end;
        Ok(&rest[..end])
    }

    fn threshold(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        let text = self.number()?;
        let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
            position: start,
            message: format!("invalid probability `{text}`"),
        })?;
        if !(0.0..=1.0).contains(&value) {
            return Err(ParseError::Syntax {
                position: start,
                message: format!("probability bound {value} outside [0, 1]"),
            });
        }
        Ok(value)
    }

    fn path(&mut self) -> Result<PathFormula, ParseError> {
        if self.keyword("X") {
            return Ok(PathFormula::Next(self.unary()?));
        }
        let left = self.state()?;
        if !self.keyword("U") {
            return Err(self.unexpected("`U`"));
        }
        let bound = if self.eat("<=") {
            let start = self.pos;
            let text = self.number()?;
            let t: u32 = text.parse().map_err(|_| ParseError::Syntax {
                position: start,
                message: format!("invalid step bound `{text}`"),
            })?;
            if t == 0 {
                return Err(ParseError::Syntax {
                    position: start,
                    message: "step bound must be at least 1".into(),
                });
            }
            Some(t)
        } else {
            self.skip_ws();
            if self.rest().starts_with(['<', '>', '=']) {
                return Err(self.unexpected("`<=` or a state formula"));
            }
            None
        };
        let right = self.state()?;
        Ok(PathFormula::Until { left, right, bound })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bounded_safety_formula() {
        let phi = parse_pctl(r#"P<=0.2 [ true U<=64 "unsafe" ]"#).unwrap();
        assert_eq!(phi, StateFormula::bounded_reach(0.2, "unsafe", 64));
    }

    #[test]
    fn unbounded_until() {
        let phi = parse_pctl(r#"P<=1.0 [ true U "goal" ]"#).unwrap();
        assert_eq!(
            phi,
            StateFormula::prob_until(Comparison::Le, 1.0, StateFormula::True, StateFormula::atom("goal"), None)
        );
        assert_eq!(phi.to_string(), r#"P<=1 [ true U "goal" ]"#);
    }

    #[test]
    fn conjunction_binds_inside_right_operand() {
        let phi = parse_pctl(r#"P<0.5 [ "a" U<=3 "b" & "c" ]"#).unwrap();
        let expected = StateFormula::prob_until(
            Comparison::Lt,
            0.5,
            StateFormula::atom("a"),
            StateFormula::atom("b").and(StateFormula::atom("c")),
            Some(3),
        );
        assert_eq!(phi, expected);
        assert_eq!(parse_pctl(&phi.to_string()).unwrap(), phi);
    }

    #[test]
    fn negation_and_parentheses() {
        let phi = parse_pctl(r#"P>=0.1 [ !("a" & !"b") U "c" ]"#).unwrap();
        assert_eq!(phi.to_string(), r#"P>=0.1 [ !("a" & !"b") U "c" ]"#);
    }

    #[test]
    fn next_is_parsed() {
        let phi = parse_pctl(r#"P>0.3 [ X "a" ]"#).unwrap();
        assert!(matches!(phi, StateFormula::Prob { ref path, .. } if matches!(**path, PathFormula::Next(_))));
    }

    #[test]
    fn errors_carry_position() {
        match parse_pctl(r#"P<=0.2 [ true U<=64 "unsafe" "#) {
            Err(ParseError::Syntax { position, .. }) => assert_eq!(position, 29),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_pctl(r#"P==0.2 [ true U "a" ]"#),
            Err(ParseError::UnknownOperator { position: 1, .. })
        ));
        assert!(matches!(
            parse_pctl(r#"P<=0.2 [ "a" | "b" U "c" ]"#),
            Err(ParseError::UnknownOperator { .. })
        ));
        assert!(parse_pctl(r#"P<=1.5 [ true U "a" ]"#).is_err());
        assert!(parse_pctl(r#"P<=0.5 [ true U<=0 "a" ]"#).is_err());
        assert!(parse_pctl(r#"P<=0.5 [ true U "" ]"#).is_err());
        assert!(parse_pctl("").is_err());
    }

    fn arb_state(depth: u32) -> BoxedStrategy<StateFormula> {
        let leaf = prop_oneof![
            Just(StateFormula::True),
            "[a-z][a-z0-9_]{0,5}".prop_map(StateFormula::Atom),
        ];
        leaf.prop_recursive(depth, 16, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(StateFormula::not),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.and(b)),
                (0u32..=1000, inner.clone(), inner.clone(), proptest::option::of(1u32..100), 0usize..4).prop_map(
                    |(p, l, r, bound, c)| {
                        let cmp = [Comparison::Le, Comparison::Lt, Comparison::Ge, Comparison::Gt][c];
                        StateFormula::prob_until(cmp, p as f64 / 1000.0, l, r, bound)
                    }
                ),
            ]
        })
        .boxed()
    }

    proptest! {
        #[test]
        fn printer_round_trips(phi in arb_state(4)) {
            let text = phi.to_string();
            prop_assert_eq!(parse_pctl(&text).unwrap(), phi);
        }
    }
}
