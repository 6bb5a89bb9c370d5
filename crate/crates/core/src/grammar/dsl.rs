//! The line-oriented `.sg` grammar language.
//!
//! ```text
//! product "Drone"
//! shape-type "4-motor Drone"
//! axiom body
//!
//! unit body box center
//!   size sx mm [80, 120]
//!   port arm_mount at (0.5*sx, 0, 0) rot (0, 0, 0)
//! end
//!
//! rule arm_quad adds arm on body.arm_mount symmetry 4
//!   param length mm [60, 160]
//! end
//!
//! constraint quad_arms count-range arm [4, 4] when "4-motor Drone"
//! constraint prop_fit param-relation propeller.radius - 0.8*arm.length <= 0
//! ```
//!
//! `#` starts a comment. Identifiers may contain `-` between letters, so a
//! subtraction must be written with spaces around the minus sign.

use std::fmt::Write as _;

use super::{
    validate_grammar, Anchor, Constraint, ConstraintKind, Grammar, GrammarError, HostPort,
    LinearExpr, ParamKind, ParamSpec, Port, Primitive, RelOp, Rule, ShapeUnit,
};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    Dot,
    Star,
    Plus,
    Minus,
    Le,
    Ge,
    Newline,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Star => "`*`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, expected: &str, found: &str) -> GrammarError {
    GrammarError::Syntax {
        line,
        column,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

fn lex(src: &str) -> Result<Vec<Spanned>, GrammarError> {
    let mut out = Vec::new();
    for (line_idx, line) in src.lines().enumerate() {
        let line_no = line_idx + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            let push = |out: &mut Vec<Spanned>, tok| {
                out.push(Spanned {
                    tok,
                    line: line_no,
                    column,
                })
            };
            match c {
                '#' => break,
                c if c.is_whitespace() => i += 1,
                '[' => {
                    push(&mut out, Tok::LBracket);
                    i += 1
                }
                ']' => {
                    push(&mut out, Tok::RBracket);
                    i += 1
                }
                '(' => {
                    push(&mut out, Tok::LParen);
                    i += 1
                }
                ')' => {
                    push(&mut out, Tok::RParen);
                    i += 1
                }
                ',' => {
                    push(&mut out, Tok::Comma);
                    i += 1
                }
                '.' if !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => {
                    push(&mut out, Tok::Dot);
                    i += 1
                }
                '*' => {
                    push(&mut out, Tok::Star);
                    i += 1
                }
                '+' => {
                    push(&mut out, Tok::Plus);
                    i += 1
                }
                '-' => {
                    push(&mut out, Tok::Minus);
                    i += 1
                }
                '<' | '>' => {
                    if chars.get(i + 1) == Some(&'=') {
                        push(&mut out, if c == '<' { Tok::Le } else { Tok::Ge });
                        i += 2;
                    } else {
                        return Err(syntax(line_no, column, "`<=` or `>=`", &format!("`{c}`")));
                    }
                }
                '"' => {
                    let mut s = String::new();
                    let mut j = i + 1;
                    loop {
                        match chars.get(j) {
                            None => {
                                return Err(syntax(line_no, column, "closing `\"`", "end of line"))
                            }
                            Some('"') => break,
                            Some('\\') => {
                                match chars.get(j + 1) {
                                    Some(&e @ ('"' | '\\')) => s.push(e),
                                    Some('n') => s.push('\n'),
                                    other => {
                                        return Err(syntax(
                                            line_no,
                                            j + 1,
                                            "escape sequence",
                                            &format!("{other:?}"),
                                        ))
                                    }
                                }
                                j += 2;
                            }
                            Some(&ch) => {
                                s.push(ch);
                                j += 1;
                            }
                        }
                    }
                    push(&mut out, Tok::Str(s));
                    i = j + 1;
                }
                c if c.is_ascii_digit() || c == '.' => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                        i += 1;
                    }
                    if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                        let mut j = i + 1;
                        if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                            j += 1;
                        }
                        if j < chars.len() && chars[j].is_ascii_digit() {
                            i = j;
                            while i < chars.len() && chars[i].is_ascii_digit() {
                                i += 1;
                            }
                        }
                    }
                    let text: String = chars[start..i].iter().collect();
                    let value: f64 = text
                        .parse()
                        .map_err(|_| syntax(line_no, column, "number", &format!("`{text}`")))?;
                    push(&mut out, Tok::Number(value));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = i;
                    loop {
                        while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                        {
                            i += 1;
                        }
                        // `count-range`, `shape-type`: hyphen glued between letters.
                        if i + 1 < chars.len()
                            && chars[i] == '-'
                            && chars[i + 1].is_ascii_alphabetic()
                        {
                            i += 1;
                            continue;
                        }
                        break;
                    }
                    push(&mut out, Tok::Ident(chars[start..i].iter().collect()));
                }
                other => {
                    return Err(syntax(line_no, column, "token", &format!("`{other}`")));
                }
            }
        }
        out.push(Spanned {
            tok: Tok::Newline,
            line: line_no,
            column: chars.len() + 1,
        });
    }
    let last_line = src.lines().count().max(1);
    out.push(Spanned {
        tok: Tok::Eof,
        line: last_line,
        column: 1,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, expected: &str) -> GrammarError {
        let t = &self.toks[self.pos];
        syntax(t.line, t.column, expected, &t.tok.describe())
    }

    fn skip_newlines(&mut self) {
        while *self.peek() == Tok::Newline {
            self.next();
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), GrammarError> {
        if *self.peek() == tok {
            self.next();
            Ok(())
        } else {
            Err(self.err(&tok.describe()))
        }
    }

    fn end_of_line(&mut self) -> Result<(), GrammarError> {
        match self.peek() {
            Tok::Newline => {
                self.next();
                Ok(())
            }
            Tok::Eof => Ok(()),
            _ => Err(self.err("end of line")),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, GrammarError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            _ => Err(self.err(what)),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), GrammarError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.next();
                Ok(())
            }
            _ => Err(self.err(&format!("`{kw}`"))),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn string(&mut self, what: &str) -> Result<String, GrammarError> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.next();
                Ok(s)
            }
            _ => Err(self.err(what)),
        }
    }

    fn name_or_string(&mut self, what: &str) -> Result<String, GrammarError> {
        match self.peek().clone() {
            Tok::Str(s) | Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            _ => Err(self.err(what)),
        }
    }

    fn number(&mut self) -> Result<f64, GrammarError> {
        let negative = if *self.peek() == Tok::Minus {
            self.next();
            true
        } else {
            false
        };
        match self.peek().clone() {
            Tok::Number(n) => {
                self.next();
                Ok(if negative { -n } else { n })
            }
            _ => Err(self.err("number")),
        }
    }

    fn integer(&mut self) -> Result<u32, GrammarError> {
        let t = self.toks[self.pos].clone();
        let n = self.number()?;
        if n.fract() != 0.0 || n < 0.0 || n > u32::MAX as f64 {
            return Err(syntax(t.line, t.column, "non-negative integer", &format!("{n}")));
        }
        Ok(n as u32)
    }

    fn range(&mut self) -> Result<(f64, f64), GrammarError> {
        self.expect(Tok::LBracket)?;
        let lo = self.number()?;
        self.expect(Tok::Comma)?;
        let hi = self.number()?;
        self.expect(Tok::RBracket)?;
        Ok((lo, hi))
    }

    fn qualified_name(&mut self) -> Result<String, GrammarError> {
        let mut name = self.ident("name")?;
        if *self.peek() == Tok::Dot {
            self.next();
            name.push('.');
            name.push_str(&self.ident("name after `.`")?);
        }
        Ok(name)
    }

    /// term := [-] (number [* name] | name)
    fn linear_expr(&mut self) -> Result<LinearExpr, GrammarError> {
        let mut expr = LinearExpr::default();
        let mut constant: Option<f64> = None;
        let mut sign = 1.0;
        if *self.peek() == Tok::Minus {
            self.next();
            sign = -1.0;
        }
        loop {
            match self.peek().clone() {
                Tok::Number(n) => {
                    self.next();
                    let value = if sign < 0.0 { -n } else { n };
                    if *self.peek() == Tok::Star {
                        self.next();
                        let name = self.qualified_name()?;
                        expr.terms.push((value, name));
                    } else {
                        constant = Some(match constant {
                            Some(c) => c + value,
                            None => value,
                        });
                    }
                }
                Tok::Ident(_) => {
                    let name = self.qualified_name()?;
                    expr.terms.push((sign, name));
                }
                _ => return Err(self.err("number or parameter name")),
            }
            match self.peek() {
                Tok::Plus => {
                    self.next();
                    sign = 1.0;
                }
                Tok::Minus => {
                    self.next();
                    sign = -1.0;
                }
                _ => break,
            }
        }
        expr.constant = constant.unwrap_or(0.0);
        Ok(expr)
    }

    fn param_line(&mut self) -> Result<ParamSpec, GrammarError> {
        let name = self.ident("parameter name")?;
        let unit = self.name_or_string("unit label")?;
        let (min, max) = self.range()?;
        let kind = if self.at_keyword("integer") {
            self.next();
            ParamKind::Integer
        } else {
            ParamKind::Continuous
        };
        self.end_of_line()?;
        Ok(ParamSpec {
            name,
            unit,
            min,
            max,
            kind,
        })
    }

    fn unit_block(&mut self) -> Result<ShapeUnit, GrammarError> {
        let name = self.ident("unit name")?;
        let prim_name = self.ident("primitive (box, cylinder, sphere, extrusion-profile)")?;
        let primitive = match prim_name.as_str() {
            "box" => Primitive::Box,
            "cylinder" => Primitive::Cylinder,
            "sphere" => Primitive::Sphere,
            "extrusion-profile" => Primitive::ExtrusionProfile,
            _ => {
                self.pos -= 1;
                return Err(self.err("primitive (box, cylinder, sphere, extrusion-profile)"));
            }
        };
        let anchor = if self.at_keyword("center") {
            self.next();
            Anchor::Center
        } else if self.at_keyword("base") {
            self.next();
            Anchor::Base
        } else {
            Anchor::Base
        };
        self.end_of_line()?;
        let mut unit = ShapeUnit {
            name,
            primitive,
            anchor,
            size_params: Vec::new(),
            ports: Vec::new(),
        };
        loop {
            self.skip_newlines();
            if self.at_keyword("size") {
                self.next();
                unit.size_params.push(self.param_line()?);
            } else if self.at_keyword("port") {
                self.next();
                let name = self.ident("port name")?;
                self.keyword("at")?;
                self.expect(Tok::LParen)?;
                let x = self.linear_expr()?;
                self.expect(Tok::Comma)?;
                let y = self.linear_expr()?;
                self.expect(Tok::Comma)?;
                let z = self.linear_expr()?;
                self.expect(Tok::RParen)?;
                let mut rotation = [0.0; 3];
                if self.at_keyword("rot") {
                    self.next();
                    self.expect(Tok::LParen)?;
                    rotation[0] = self.number()?;
                    self.expect(Tok::Comma)?;
                    rotation[1] = self.number()?;
                    self.expect(Tok::Comma)?;
                    rotation[2] = self.number()?;
                    self.expect(Tok::RParen)?;
                }
                self.end_of_line()?;
                unit.ports.push(Port {
                    name,
                    position: [x, y, z],
                    rotation,
                });
            } else if self.at_keyword("end") {
                self.next();
                self.end_of_line()?;
                return Ok(unit);
            } else {
                return Err(self.err("`size`, `port` or `end`"));
            }
        }
    }

    fn rule_block(&mut self) -> Result<Rule, GrammarError> {
        let id = self.ident("rule id")?;
        self.keyword("adds")?;
        let adds_unit = self.ident("unit name")?;
        self.keyword("on")?;
        let host_unit = self.ident("host unit name")?;
        self.expect(Tok::Dot)?;
        let host_port = self.ident("host port name")?;
        let symmetry_count = if self.at_keyword("symmetry") {
            self.next();
            self.integer()?
        } else {
            1
        };
        self.end_of_line()?;
        let mut rule = Rule {
            id,
            adds_unit,
            host: HostPort {
                unit: host_unit,
                port: host_port,
            },
            params: Vec::new(),
            symmetry_count,
        };
        loop {
            self.skip_newlines();
            if self.at_keyword("param") {
                self.next();
                rule.params.push(self.param_line()?);
            } else if self.at_keyword("end") {
                self.next();
                self.end_of_line()?;
                return Ok(rule);
            } else {
                return Err(self.err("`param` or `end`"));
            }
        }
    }

    fn constraint_line(&mut self) -> Result<Constraint, GrammarError> {
        let id = self.ident("constraint id")?;
        let kind_name = self.ident(
            "constraint kind (count-range, requires, excludes, param-relation, no-collision)",
        )?;
        let kind = match kind_name.as_str() {
            "count-range" => {
                let unit = self.ident("unit name")?;
                self.expect(Tok::LBracket)?;
                let lo = self.integer()?;
                self.expect(Tok::Comma)?;
                let hi = self.integer()?;
                self.expect(Tok::RBracket)?;
                let shape_type = if self.at_keyword("when") {
                    self.next();
                    Some(self.string("shape type string")?)
                } else {
                    None
                };
                ConstraintKind::CountRange {
                    unit,
                    lo,
                    hi,
                    shape_type,
                }
            }
            "requires" => ConstraintKind::Requires {
                rule: self.ident("rule id")?,
                needs: self.ident("rule id")?,
            },
            "excludes" => ConstraintKind::Excludes {
                a: self.ident("rule id")?,
                b: self.ident("rule id")?,
            },
            "param-relation" => {
                let lhs = self.linear_expr()?;
                let op = match self.peek() {
                    Tok::Le => RelOp::Le,
                    Tok::Ge => RelOp::Ge,
                    _ => return Err(self.err("`<=` or `>=`")),
                };
                self.next();
                let rhs = self.number()?;
                ConstraintKind::ParamRelation { lhs, op, rhs }
            }
            "no-collision" => ConstraintKind::NoCollision,
            _ => {
                self.pos -= 1;
                return Err(self.err(
                    "constraint kind (count-range, requires, excludes, param-relation, no-collision)",
                ));
            }
        };
        self.end_of_line()?;
        Ok(Constraint { id, kind })
    }

    fn grammar(&mut self) -> Result<Grammar, GrammarError> {
        let mut g = Grammar {
            product_kind: String::new(),
            shape_types: Vec::new(),
            axiom: String::new(),
            units: Vec::new(),
            rules: Vec::new(),
            constraints: Vec::new(),
        };
        let mut seen_product = false;
        let mut seen_axiom = false;
        loop {
            self.skip_newlines();
            let keyword = match self.peek().clone() {
                Tok::Eof => break,
                Tok::Ident(s) => s,
                _ => {
                    return Err(
                        self.err("`product`, `shape-type`, `axiom`, `unit`, `rule` or `constraint`")
                    )
                }
            };
            match keyword.as_str() {
                "product" => {
                    self.next();
                    g.product_kind = self.name_or_string("product name")?;
                    seen_product = true;
                    self.end_of_line()?;
                }
                "shape-type" => {
                    self.next();
                    g.shape_types.push(self.string("shape type string")?);
                    self.end_of_line()?;
                }
                "axiom" => {
                    self.next();
                    g.axiom = self.ident("axiom unit name")?;
                    seen_axiom = true;
                    self.end_of_line()?;
                }
                "unit" => {
                    self.next();
                    g.units.push(self.unit_block()?);
                }
                "rule" => {
                    self.next();
                    g.rules.push(self.rule_block()?);
                }
                "constraint" => {
                    self.next();
                    g.constraints.push(self.constraint_line()?);
                }
                _ => {
                    return Err(
                        self.err("`product`, `shape-type`, `axiom`, `unit`, `rule` or `constraint`")
                    )
                }
            }
        }
        if !seen_product {
            return Err(self.err("`product` declaration"));
        }
        if !seen_axiom {
            return Err(self.err("`axiom` declaration"));
        }
        Ok(g)
    }
}

/// Parses source text without semantic validation.
pub fn parse_unchecked(src: &str) -> Result<Grammar, GrammarError> {
    let toks = lex(src)?;
    Parser { toks, pos: 0 }.grammar()
}

/// Parses and validates a grammar. Any validation issue is a semantic error.
pub fn parse_grammar(src: &str) -> Result<Grammar, GrammarError> {
    let g = parse_unchecked(src)?;
    let issues = validate_grammar(&g);
    if issues.is_empty() {
        Ok(g)
    } else {
        Err(GrammarError::Semantic { issues })
    }
}

/// Whether `s` lexes as a single identifier token.
pub(crate) fn is_identifier(s: &str) -> bool {
    let bytes: Vec<char> = s.chars().collect();
    match bytes.first() {
        Some(c) if c.is_ascii_alphabetic() || *c == '_' => {}
        _ => return false,
    }
    for (i, &c) in bytes.iter().enumerate().skip(1) {
        let ok = c.is_ascii_alphanumeric()
            || c == '_'
            || (c == '-'
                && bytes.get(i + 1).is_some_and(|n| n.is_ascii_alphabetic())
                && (bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == '_'));
        if !ok {
            return false;
        }
    }
    true
}

fn is_ident(s: &str) -> bool {
    is_identifier(s) && !matches!(s, "integer" | "center" | "base")
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn name_or_quoted(s: &str) -> String {
    if is_ident(s) {
        s.to_string()
    } else {
        quote(s)
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn write_expr(out: &mut String, e: &LinearExpr) {
    let mut first = true;
    for (coef, name) in &e.terms {
        let negative = coef.is_sign_negative();
        let mag = coef.abs();
        let body = if mag == 1.0 {
            name.clone()
        } else {
            format!("{}*{}", num(mag), name)
        };
        if first {
            if negative {
                out.push('-');
            }
            out.push_str(&body);
        } else {
            out.push_str(if negative { " - " } else { " + " });
            out.push_str(&body);
        }
        first = false;
    }
    let c = e.constant;
    if first {
        if c.is_sign_negative() {
            out.push('-');
        }
        out.push_str(&num(c.abs()));
    } else if c != 0.0 || c.is_sign_negative() {
        out.push_str(if c.is_sign_negative() { " - " } else { " + " });
        out.push_str(&num(c.abs()));
    }
}

fn write_param(out: &mut String, keyword: &str, p: &ParamSpec) {
    let _ = write!(
        out,
        "  {} {} {} [{}, {}]",
        keyword,
        p.name,
        name_or_quoted(&p.unit),
        num(p.min),
        num(p.max)
    );
    if p.kind == ParamKind::Integer {
        out.push_str(" integer");
    }
    out.push('\n');
}

/// Canonical text form; `parse_unchecked(serialize_grammar(g)) == g`.
pub fn serialize_grammar(g: &Grammar) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "product {}", quote(&g.product_kind));
    for st in &g.shape_types {
        let _ = writeln!(out, "shape-type {}", quote(st));
    }
    let _ = writeln!(out, "axiom {}", g.axiom);
    for u in &g.units {
        out.push('\n');
        let anchor = match u.anchor {
            Anchor::Base => "",
            Anchor::Center => " center",
        };
        let _ = writeln!(out, "unit {} {}{}", u.name, u.primitive.keyword(), anchor);
        for p in &u.size_params {
            write_param(&mut out, "size", p);
        }
        for port in &u.ports {
            let _ = write!(out, "  port {} at (", port.name);
            for (i, e) in port.position.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(&mut out, e);
            }
            let _ = writeln!(
                out,
                ") rot ({}, {}, {})",
                num(port.rotation[0]),
                num(port.rotation[1]),
                num(port.rotation[2])
            );
        }
        out.push_str("end\n");
    }
    for r in &g.rules {
        out.push('\n');
        let _ = write!(
            out,
            "rule {} adds {} on {}.{}",
            r.id, r.adds_unit, r.host.unit, r.host.port
        );
        if r.symmetry_count != 1 {
            let _ = write!(out, " symmetry {}", r.symmetry_count);
        }
        out.push('\n');
        for p in &r.params {
            write_param(&mut out, "param", p);
        }
        out.push_str("end\n");
    }
    if !g.constraints.is_empty() {
        out.push('\n');
    }
    for c in &g.constraints {
        let _ = write!(out, "constraint {} {}", c.id, c.kind.keyword());
        match &c.kind {
            ConstraintKind::CountRange {
                unit,
                lo,
                hi,
                shape_type,
            } => {
                let _ = write!(out, " {unit} [{lo}, {hi}]");
                if let Some(st) = shape_type {
                    let _ = write!(out, " when {}", quote(st));
                }
            }
            ConstraintKind::Requires { rule, needs } => {
                let _ = write!(out, " {rule} {needs}");
            }
            ConstraintKind::Excludes { a, b } => {
                let _ = write!(out, " {a} {b}");
            }
            ConstraintKind::ParamRelation { lhs, op, rhs } => {
                out.push(' ');
                write_expr(&mut out, lhs);
                let _ = write!(out, " {} ", op.symbol());
                if rhs.is_sign_negative() {
                    out.push('-');
                }
                out.push_str(&num(rhs.abs()));
            }
            ConstraintKind::NoCollision => {}
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_grammar() {
        let g = parse_grammar(
            "product Lamp\nshape-type \"desk\"\naxiom base\nunit base box center\n  size x mm [1, 2]\n  size y mm [1, 2]\n  size z mm [1, 2]\nend\n",
        )
        .unwrap();
        assert_eq!(g.units.len(), 1);
        assert!(g.rules.is_empty());
        assert_eq!(g.product_kind, "Lamp");
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_unchecked("product X\naxiom\n").unwrap_err();
        match err {
            GrammarError::Syntax {
                line,
                column,
                expected,
                ..
            } => {
                assert_eq!(line, 2);
                assert_eq!(column, 6);
                assert!(expected.contains("axiom unit name"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hyphenated_keywords_and_subtraction() {
        let toks = lex("count-range length - 8 a-b").unwrap();
        let kinds: Vec<_> = toks.iter().map(|t| t.tok.clone()).collect();
        assert_eq!(
            kinds,
            vec![
                Tok::Ident("count-range".into()),
                Tok::Ident("length".into()),
                Tok::Minus,
                Tok::Number(8.0),
                Tok::Ident("a-b".into()),
                Tok::Newline,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn expressions_round_trip() {
        for src in ["0", "-0", "length - 8", "-0.5*sx + 3", "2*a.b - c.d - 1e-7", "-x"] {
            let toks = lex(src).unwrap();
            let e = Parser { toks, pos: 0 }.linear_expr().unwrap();
            let mut out = String::new();
            write_expr(&mut out, &e);
            let toks = lex(&out).unwrap();
            let back = Parser { toks, pos: 0 }.linear_expr().unwrap();
            assert_eq!(e, back, "{src} -> {out}");
            assert_eq!(e.constant.is_sign_negative(), back.constant.is_sign_negative());
        }
    }

    #[test]
    fn unknown_constraint_kind() {
        let err = parse_unchecked("product X\naxiom a\nconstraint c sometimes\n").unwrap_err();
        assert!(matches!(err, GrammarError::Syntax { line: 3, column: 14, .. }), "{err:?}");
    }
}
