//! Hand-rolled lexer and recursive-descent parser for the rule DSL.
//!
//! ```text
//! rule   := "RULE" STRING ":" "IF" clause {"AND" clause} "THEN" "ORDER" TEST {"," TEST}
//! clause := METRIC "(" FEATURE "," WINDOW ["," WINDOW] ")" [CMP NUMBER]
//! WINDOW := NUMBER "h"
//! ```
//! `#` starts a comment running to end of line.

use crate::data::{test_index, FeatureCatalog};

use super::{Clause, Cmp, Metric, Rule, RuleError, RuleSet};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Number(f64),
    Window(f64),
    Colon,
    LParen,
    RParen,
    Comma,
    Cmp(Cmp),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, RuleError> {
    let mut out = Vec::new();
    for (li, raw_line) in text.lines().enumerate() {
        let line = li + 1;
        let bytes: Vec<char> = raw_line.chars().collect();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            let col = i + 1;
            match c {
                '#' => break,
                c if c.is_whitespace() => i += 1,
                ':' => {
                    out.push(Spanned { tok: Tok::Colon, line, col });
                    i += 1;
                }
                '(' => {
                    out.push(Spanned { tok: Tok::LParen, line, col });
                    i += 1;
                }
                ')' => {
                    out.push(Spanned { tok: Tok::RParen, line, col });
                    i += 1;
                }
                ',' => {
                    out.push(Spanned { tok: Tok::Comma, line, col });
                    i += 1;
                }
                '<' | '>' => {
                    let cmp = if i + 1 < bytes.len() && bytes[i + 1] == '=' {
                        i += 2;
                        if c == '<' { Cmp::Le } else { Cmp::Ge }
                    } else {
                        i += 1;
                        if c == '<' { Cmp::Lt } else { Cmp::Gt }
                    };
                    out.push(Spanned { tok: Tok::Cmp(cmp), line, col });
                }
                '"' => {
                    let start = i + 1;
                    let mut j = start;
                    while j < bytes.len() && bytes[j] != '"' {
                        j += 1;
                    }
                    if j == bytes.len() {
                        return Err(RuleError::Syntax {
                            line,
                            col,
                            msg: "unterminated string".into(),
                        });
                    }
                    out.push(Spanned {
                        tok: Tok::Str(bytes[start..j].iter().collect()),
                        line,
                        col,
                    });
                    i = j + 1;
                }
                c if c.is_ascii_digit() || c == '-' || c == '.' => {
                    let start = i;
                    i += 1;
                    while i < bytes.len()
                        && (bytes[i].is_ascii_digit() || bytes[i] == '.' || bytes[i] == 'e'
                            || bytes[i] == 'E'
                            || ((bytes[i] == '-' || bytes[i] == '+')
                                && matches!(bytes[i - 1], 'e' | 'E')))
                    {
                        i += 1;
                    }
                    let text: String = bytes[start..i].iter().collect();
                    let value: f64 = text.parse().map_err(|_| RuleError::Syntax {
                        line,
                        col,
                        msg: format!("bad number \"{text}\""),
                    })?;
                    // a trailing bare `h` marks a window length
                    if i < bytes.len()
                        && bytes[i] == 'h'
                        && (i + 1 >= bytes.len() || !bytes[i + 1].is_alphanumeric())
                    {
                        i += 1;
                        out.push(Spanned { tok: Tok::Window(value), line, col });
                    } else {
                        out.push(Spanned { tok: Tok::Number(value), line, col });
                    }
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = i;
                    while i < bytes.len() && (bytes[i].is_alphanumeric() || bytes[i] == '_') {
                        i += 1;
                    }
                    out.push(Spanned {
                        tok: Tok::Ident(bytes[start..i].iter().collect()),
                        line,
                        col,
                    });
                }
                other => {
                    return Err(RuleError::Syntax {
                        line,
                        col,
                        msg: format!("unexpected character '{other}'"),
                    })
                }
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    catalog: &'a FeatureCatalog,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|s| (s.line, s.col))
            .unwrap_or((0, 0))
    }

    fn err(&self, msg: impl Into<String>) -> RuleError {
        let (line, col) = self.here();
        RuleError::Syntax { line, col, msg: msg.into() }
    }

    fn next(&mut self) -> Result<Spanned, RuleError> {
        let s = self.toks.get(self.pos).cloned().ok_or_else(|| self.err("unexpected end of input"))?;
        self.pos += 1;
        Ok(s)
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), RuleError> {
        match self.next()? {
            Spanned { tok: Tok::Ident(w), .. } if w == kw => Ok(()),
            Spanned { line, col, tok } => Err(RuleError::Syntax {
                line,
                col,
                msg: format!("expected {kw}, found {tok:?}"),
            }),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), RuleError> {
        let s = self.next()?;
        if s.tok == want {
            Ok(())
        } else {
            Err(RuleError::Syntax {
                line: s.line,
                col: s.col,
                msg: format!("expected {what}, found {:?}", s.tok),
            })
        }
    }

    fn metric(name: &str) -> Option<Metric> {
        Some(match name {
            "LAST" => Metric::Last,
            "MIN" => Metric::Min,
            "MAX" => Metric::Max,
            "DELTA" => Metric::Delta,
            "DROP" => Metric::Drop,
            "RISE" => Metric::Rise,
            "PCTDROP" => Metric::PctDrop,
            "PCTRISE" => Metric::PctRise,
            "SUM" => Metric::Sum,
            "EVENT" => Metric::Event,
            "NEWEVENT" => Metric::NewEvent,
            _ => return None,
        })
    }

    fn clause(&mut self) -> Result<Clause, RuleError> {
        let s = self.next()?;
        let (metric, mline) = match &s.tok {
            Tok::Ident(w) => match Self::metric(w) {
                Some(m) => (m, s.line),
                None => {
                    return Err(RuleError::Syntax {
                        line: s.line,
                        col: s.col,
                        msg: format!("unknown metric \"{w}\""),
                    })
                }
            },
            other => {
                return Err(RuleError::Syntax {
                    line: s.line,
                    col: s.col,
                    msg: format!("expected a metric, found {other:?}"),
                })
            }
        };
        self.expect(Tok::LParen, "(")?;
        let feat = self.next()?;
        let (feature, feature_name) = match &feat.tok {
            Tok::Ident(name) => match self.catalog.feature_id(name) {
                Some(id) => (id, name.clone()),
                None => return Err(RuleError::UnknownIdent { line: feat.line, name: name.clone() }),
            },
            other => {
                return Err(RuleError::Syntax {
                    line: feat.line,
                    col: feat.col,
                    msg: format!("expected a feature name, found {other:?}"),
                })
            }
        };
        self.expect(Tok::Comma, ",")?;
        let window_hours = self.window(mline)?;
        let prior_window_hours = if matches!(self.peek().map(|s| &s.tok), Some(Tok::Comma)) {
            self.next()?;
            Some(self.window(mline)?)
        } else {
            None
        };
        self.expect(Tok::RParen, ")")?;

        let cmp = if let Some(Spanned { tok: Tok::Cmp(c), .. }) = self.peek() {
            let c = *c;
            self.next()?;
            let n = self.next()?;
            match n.tok {
                Tok::Number(v) => Some((c, v)),
                other => {
                    return Err(RuleError::Syntax {
                        line: n.line,
                        col: n.col,
                        msg: format!("expected a threshold number, found {other:?}"),
                    })
                }
            }
        } else {
            None
        };

        // structural checks
        let total = window_hours + prior_window_hours.unwrap_or(0.0);
        if total > 48.0 {
            return Err(RuleError::WindowTooLong { line: mline, hours: total });
        }
        if window_hours <= 0.0 || prior_window_hours.is_some_and(|w| w <= 0.0) {
            return Err(RuleError::Syntax {
                line: mline,
                col: 0,
                msg: "windows must be positive".into(),
            });
        }
        if metric.is_event() && cmp.is_some() {
            return Err(RuleError::Syntax {
                line: mline,
                col: 0,
                msg: format!("{} takes no comparator", metric.name()),
            });
        }
        if !metric.is_event() && cmp.is_none() {
            return Err(RuleError::Syntax {
                line: mline,
                col: 0,
                msg: format!("{} needs a comparator and threshold", metric.name()),
            });
        }
        if metric == Metric::NewEvent && prior_window_hours.is_none() {
            return Err(RuleError::Syntax {
                line: mline,
                col: 0,
                msg: "NEWEVENT needs recent and prior windows".into(),
            });
        }
        if metric != Metric::NewEvent && prior_window_hours.is_some() {
            return Err(RuleError::Syntax {
                line: mline,
                col: 0,
                msg: format!("{} takes a single window", metric.name()),
            });
        }

        Ok(Clause { metric, feature, feature_name, window_hours, prior_window_hours, cmp })
    }

    fn window(&mut self, line: usize) -> Result<f64, RuleError> {
        match self.next()? {
            Spanned { tok: Tok::Window(w), .. } => Ok(w),
            Spanned { col, tok, .. } => Err(RuleError::Syntax {
                line,
                col,
                msg: format!("expected a window like 24h, found {tok:?}"),
            }),
        }
    }

    fn rule(&mut self) -> Result<Rule, RuleError> {
        self.expect_keyword("RULE")?;
        let s = self.next()?;
        let (name, line) = match s.tok {
            Tok::Str(n) => (n, s.line),
            other => {
                return Err(RuleError::Syntax {
                    line: s.line,
                    col: s.col,
                    msg: format!("expected a quoted rule name, found {other:?}"),
                })
            }
        };
        self.expect(Tok::Colon, ":")?;
        self.expect_keyword("IF")?;
        let mut clauses = vec![self.clause()?];
        while matches!(self.peek().map(|s| &s.tok), Some(Tok::Ident(w)) if w == "AND") {
            self.next()?;
            clauses.push(self.clause()?);
        }
        self.expect_keyword("THEN")?;
        self.expect_keyword("ORDER")?;
        let mut ordered_tests = vec![self.test(&name, line)?];
        while matches!(self.peek().map(|s| &s.tok), Some(Tok::Comma)) {
            self.next()?;
            ordered_tests.push(self.test(&name, line)?);
        }
        ordered_tests.dedup();
        if ordered_tests.is_empty() {
            return Err(RuleError::BadRule { line, name, why: "no ordered tests".into() });
        }
        Ok(Rule { name, clauses, ordered_tests })
    }

    fn test(&mut self, rule: &str, line: usize) -> Result<usize, RuleError> {
        match self.next()? {
            Spanned { tok: Tok::Ident(t), line: tl, .. } => test_index(&t)
                .ok_or(RuleError::UnknownIdent { line: tl, name: t }),
            Spanned { col, tok, .. } => Err(RuleError::Syntax {
                line,
                col,
                msg: format!("rule \"{rule}\": expected a test name, found {tok:?}"),
            }),
        }
    }
}

/// Parse a rule file. Rules keep source order; duplicate rule names are
/// rejected.
pub fn parse_rules(text: &str, catalog: &FeatureCatalog) -> Result<RuleSet, RuleError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, catalog };
    let mut rules = Vec::new();
    while !p.at_end() {
        let r = p.rule()?;
        if rules.iter().any(|x: &Rule| x.name == r.name) {
            return Err(RuleError::BadRule {
                line: 0,
                name: r.name,
                why: "duplicate rule name".into(),
            });
        }
        rules.push(r);
    }
    Ok(RuleSet { rules })
}
