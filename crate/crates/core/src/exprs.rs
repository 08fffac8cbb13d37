//! A small smooth-expression language for speeds `λ_i(x, y)` and boundary maps.
//!
//! Grammar (usual precedence, `^` binds tighter than unary minus):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' exponent)?
//! exponent:= ['+' | '-'] number | '(' ['+' | '-'] number ')'
//! primary := number | ident | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers are `x` and `y1`, `y2`, ... restricted to a [`VarSpace`].
//! Functions are `sin`, `cos`, `exp` and `tanh`. Exponents must be numeric
//! constants, so every expression is smooth wherever it evaluates.

use std::fmt;

use thiserror::Error;

/// A variable name as written in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    /// `y<i>` with the 1-based state index `i`.
    Y(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X => write!(f, "x"),
            Var::Y(i) => write!(f, "y{i}"),
        }
    }
}

/// The admissible variables of an expression and their slots in a binding.
///
/// Slot 0 is `x` when present; the `y` variables follow in index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarSpace {
    with_x: bool,
    first_y: usize,
    count_y: usize,
}

impl VarSpace {
    pub fn new(with_x: bool, first_y: usize, count_y: usize) -> Self {
        Self {
            with_x,
            first_y,
            count_y,
        }
    }

    /// Variables of a speed `λ_i(x, y1..yn)`.
    pub fn speeds(n: usize) -> Self {
        Self::new(true, 1, n)
    }

    /// Variables of a boundary-map component `B_r(y_{k+1}..y_{k+m})`.
    pub fn boundary(k: usize, m: usize) -> Self {
        Self::new(false, k + 1, m)
    }

    pub fn arity(&self) -> usize {
        self.with_x as usize + self.count_y
    }

    pub fn slot(&self, var: Var) -> Option<usize> {
        match var {
            Var::X => self.with_x.then_some(0),
            Var::Y(i) if i >= self.first_y && i < self.first_y + self.count_y => {
                Some(self.with_x as usize + i - self.first_y)
            }
            Var::Y(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "tanh" => Some(Func::Tanh),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
        }
    }

    /// Value and first derivative at `u`.
    fn apply(self, u: f64) -> (f64, f64) {
        match self {
            Func::Sin => (u.sin(), u.cos()),
            Func::Cos => (u.cos(), -u.sin()),
            Func::Exp => {
                let e = u.exp();
                (e, e)
            }
            Func::Tanh => {
                let t = u.tanh();
                (t, 1.0 - t * t)
            }
        }
    }
}

/// Abstract syntax tree. Variables carry their binding slot.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(f64),
    Var { var: Var, slot: usize },
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    /// Power with a constant exponent.
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedEnd,
    UnexpectedChar(char),
    UnexpectedToken(String),
    UnknownIdentifier(String),
    ArityMismatch {
        func: String,
        expected: usize,
        found: usize,
    },
    NonConstantExponent,
    InvalidNumber(String),
    TrailingTokens,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnexpectedEnd => write!(f, "unexpected end of input"),
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character '{c}'"),
            ParseErrorKind::UnexpectedToken(t) => write!(f, "unexpected token '{t}'"),
            ParseErrorKind::UnknownIdentifier(id) => write!(f, "unknown identifier '{id}'"),
            ParseErrorKind::ArityMismatch {
                func,
                expected,
                found,
            } => write!(f, "{func} takes {expected} argument(s), found {found}"),
            ParseErrorKind::NonConstantExponent => {
                write!(f, "exponent must be a numeric constant")
            }
            ParseErrorKind::InvalidNumber(s) => write!(f, "invalid number '{s}'"),
            ParseErrorKind::TrailingTokens => write!(f, "trailing tokens after expression"),
        }
    }
}

/// Syntax error annotated with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("binding has {found} values, expression space needs {expected}")]
    Arity { expected: usize, found: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("domain error in {0}")]
    Domain(&'static str),
}

/// Value with its gradient with respect to every binding slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DualValue {
    pub value: f64,
    pub partials: Vec<f64>,
}

impl DualValue {
    fn constant(value: f64, arity: usize) -> Self {
        Self {
            value,
            partials: vec![0.0; arity],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str) -> Result<Vec<(usize, Token)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        while let Some(tok) = lx.next_token()? {
            out.push(tok);
        }
        Ok(out)
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn next_token(&mut self) -> Result<Option<(usize, Token)>, ParseError> {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok(None);
        };
        let tok = match c {
            '0'..='9' | '.' => self.number(start)?,
            'a'..='z' | 'A'..='Z' | '_' => {
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                    self.pos += 1;
                }
                Token::Ident(self.src[start..self.pos].to_string())
            }
            '+' | '-' | '*' | '/' | '^' => {
                self.pos += 1;
                Token::Op(c)
            }
            '(' => {
                self.pos += 1;
                Token::LParen
            }
            ')' => {
                self.pos += 1;
                Token::RParen
            }
            ',' => {
                self.pos += 1;
                Token::Comma
            }
            other => {
                return Err(ParseError {
                    offset: start,
                    kind: ParseErrorKind::UnexpectedChar(other),
                })
            }
        };
        Ok(Some((start, tok)))
    }

    fn number(&mut self, start: usize) -> Result<Token, ParseError> {
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        self.pos = i;
        let text = &self.src[start..i];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Token::Num(v)),
            _ => Err(ParseError {
                offset: start,
                kind: ParseErrorKind::InvalidNumber(text.to_string()),
            }),
        }
    }
}

struct Parser<'s> {
    tokens: Vec<(usize, Token)>,
    idx: usize,
    end: usize,
    space: &'s VarSpace,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.idx).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.idx).map_or(self.end, |(o, _)| *o)
    }

    fn err<T>(&self, kind: ParseErrorKind) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self.offset(),
            kind,
        })
    }

    fn unexpected<T>(&self) -> Result<T, ParseError> {
        match self.peek() {
            None => self.err(ParseErrorKind::UnexpectedEnd),
            Some(t) => self.err(ParseErrorKind::UnexpectedToken(render_token(t))),
        }
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.idx).map(|(_, t)| t.clone());
        self.idx += 1;
        t
    }

    fn expect(&mut self, want: Token) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.idx += 1;
            Ok(())
        } else {
            self.unexpected()
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.idx += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.idx += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.idx += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.idx += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek() != Some(&Token::Op('^')) {
            return Ok(base);
        }
        self.idx += 1;
        let exponent = self.exponent()?;
        Ok(Expr::Pow(Box::new(base), exponent))
    }

    fn exponent(&mut self) -> Result<f64, ParseError> {
        let parens = self.peek() == Some(&Token::LParen);
        if parens {
            self.idx += 1;
        }
        let sign = match self.peek() {
            Some(Token::Op('-')) => {
                self.idx += 1;
                -1.0
            }
            Some(Token::Op('+')) => {
                self.idx += 1;
                1.0
            }
            _ => 1.0,
        };
        let value = match self.peek() {
            Some(Token::Num(v)) => sign * *v,
            None => return self.err(ParseErrorKind::UnexpectedEnd),
            Some(_) => return self.err(ParseErrorKind::NonConstantExponent),
        };
        self.idx += 1;
        if parens {
            self.expect(Token::RParen)?;
        }
        Ok(value)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let start = self.offset();
        match self.bump() {
            Some(Token::Num(v)) => Ok(Expr::Lit(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                if let Some(func) = Func::from_name(&name) {
                    return self.call(func, start);
                }
                let var = parse_var(&name).ok_or_else(|| ParseError {
                    offset: start,
                    kind: ParseErrorKind::UnknownIdentifier(name.clone()),
                })?;
                let slot = self.space.slot(var).ok_or(ParseError {
                    offset: start,
                    kind: ParseErrorKind::UnknownIdentifier(name),
                })?;
                Ok(Expr::Var { var, slot })
            }
            None => Err(ParseError {
                offset: self.end,
                kind: ParseErrorKind::UnexpectedEnd,
            }),
            Some(t) => Err(ParseError {
                offset: start,
                kind: ParseErrorKind::UnexpectedToken(render_token(&t)),
            }),
        }
    }

    fn call(&mut self, func: Func, start: usize) -> Result<Expr, ParseError> {
        self.expect(Token::LParen)?;
        if self.peek() == Some(&Token::RParen) {
            return Err(ParseError {
                offset: start,
                kind: ParseErrorKind::ArityMismatch {
                    func: func.name().to_string(),
                    expected: 1,
                    found: 0,
                },
            });
        }
        let arg = self.expr()?;
        let mut found = 1;
        while self.peek() == Some(&Token::Comma) {
            self.idx += 1;
            self.expr()?;
            found += 1;
        }
        self.expect(Token::RParen)?;
        if found != 1 {
            return Err(ParseError {
                offset: start,
                kind: ParseErrorKind::ArityMismatch {
                    func: func.name().to_string(),
                    expected: 1,
                    found,
                },
            });
        }
        Ok(Expr::Call(func, Box::new(arg)))
    }
}

fn parse_var(name: &str) -> Option<Var> {
    if name == "x" {
        return Some(Var::X);
    }
    let digits = name.strip_prefix('y')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0')
    {
        return None;
    }
    digits.parse().ok().map(Var::Y)
}

fn render_token(t: &Token) -> String {
    match t {
        Token::Num(v) => format!("{v}"),
        Token::Ident(s) => s.clone(),
        Token::Op(c) => c.to_string(),
        Token::LParen => "(".into(),
        Token::RParen => ")".into(),
        Token::Comma => ",".into(),
    }
}

/// Parses `text` with identifiers restricted to `space`.
pub fn parse(text: &str, space: &VarSpace) -> Result<Expr, ParseError> {
    let tokens = Lexer::tokenize(text)?;
    let mut p = Parser {
        tokens,
        idx: 0,
        end: text.len(),
        space,
    };
    let e = p.expr()?;
    if p.idx < p.tokens.len() {
        return p.err(ParseErrorKind::TrailingTokens);
    }
    Ok(e)
}

fn check_arity(expected: usize, found: usize) -> Result<(), EvalError> {
    if found < expected {
        Err(EvalError::Arity { expected, found })
    } else {
        Ok(())
    }
}

fn finite(v: f64, what: &'static str) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::Domain(what))
    }
}

fn pow_value(u: f64, p: f64) -> Result<f64, EvalError> {
    if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
        if u == 0.0 && p < 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        finite(u.powi(p as i32), "pow")
    } else {
        if u <= 0.0 {
            return Err(EvalError::Domain("pow"));
        }
        finite(u.powf(p), "pow")
    }
}

impl Expr {
    /// Largest binding slot referenced plus one (0 for constants).
    pub fn min_arity(&self) -> usize {
        match self {
            Expr::Lit(_) => 0,
            Expr::Var { slot, .. } => slot + 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.min_arity(),
            Expr::Binary(_, a, b) => a.min_arity().max(b.min_arity()),
        }
    }

    /// Plain value, using the same floating-point operations as [`Expr::eval_dual`].
    pub fn eval(&self, binding: &[f64]) -> Result<f64, EvalError> {
        check_arity(self.min_arity(), binding.len())?;
        self.eval_unchecked(binding)
    }

    fn eval_unchecked(&self, b: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Lit(v) => *v,
            Expr::Var { slot, .. } => b[*slot],
            Expr::Neg(a) => -a.eval_unchecked(b)?,
            Expr::Binary(op, lhs, rhs) => {
                let (u, v) = (lhs.eval_unchecked(b)?, rhs.eval_unchecked(b)?);
                match op {
                    BinOp::Add => u + v,
                    BinOp::Sub => u - v,
                    BinOp::Mul => u * v,
                    BinOp::Div => {
                        if v == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        finite(u / v, "division")?
                    }
                }
            }
            Expr::Pow(a, p) => pow_value(a.eval_unchecked(b)?, *p)?,
            Expr::Call(f, a) => finite(f.apply(a.eval_unchecked(b)?).0, f.name())?,
        })
    }

    /// Value and exact gradient with respect to every slot of `binding`.
    pub fn eval_dual(&self, binding: &[f64]) -> Result<DualValue, EvalError> {
        check_arity(self.min_arity(), binding.len())?;
        self.dual(binding)
    }

    fn dual(&self, b: &[f64]) -> Result<DualValue, EvalError> {
        let n = b.len();
        Ok(match self {
            Expr::Lit(v) => DualValue::constant(*v, n),
            Expr::Var { slot, .. } => {
                let mut d = DualValue::constant(b[*slot], n);
                d.partials[*slot] = 1.0;
                d
            }
            Expr::Neg(a) => {
                let mut d = a.dual(b)?;
                d.value = -d.value;
                d.partials.iter_mut().for_each(|p| *p = -*p);
                d
            }
            Expr::Binary(op, lhs, rhs) => {
                let (mut u, v) = (lhs.dual(b)?, rhs.dual(b)?);
                match op {
                    BinOp::Add => {
                        u.value += v.value;
                        u.partials
                            .iter_mut()
                            .zip(&v.partials)
                            .for_each(|(p, q)| *p += q);
                    }
                    BinOp::Sub => {
                        u.value -= v.value;
                        u.partials
                            .iter_mut()
                            .zip(&v.partials)
                            .for_each(|(p, q)| *p -= q);
                    }
                    BinOp::Mul => {
                        let (uv, vv) = (u.value, v.value);
                        u.value = uv * vv;
                        u.partials
                            .iter_mut()
                            .zip(&v.partials)
                            .for_each(|(p, q)| *p = *p * vv + uv * q);
                    }
                    BinOp::Div => {
                        if v.value == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        let (uv, vv) = (u.value, v.value);
                        let value = finite(uv / vv, "division")?;
                        let inv2 = 1.0 / (vv * vv);
                        u.partials
                            .iter_mut()
                            .zip(&v.partials)
                            .for_each(|(p, q)| *p = (*p * vv - uv * q) * inv2);
                        u.value = value;
                    }
                }
                u
            }
            Expr::Pow(a, p) => {
                let mut d = a.dual(b)?;
                let u = d.value;
                d.value = pow_value(u, *p)?;
                let slope = if *p == 0.0 {
                    0.0
                } else {
                    p * pow_value(u, p - 1.0)?
                };
                d.partials.iter_mut().for_each(|q| *q *= slope);
                d
            }
            Expr::Call(f, a) => {
                let mut d = a.dual(b)?;
                let (value, slope) = f.apply(d.value);
                d.value = finite(value, f.name())?;
                d.partials.iter_mut().for_each(|q| *q *= slope);
                d
            }
        })
    }

    /// True when the expression contains no variables.
    pub fn is_constant(&self) -> bool {
        !self.has_var()
    }

    fn has_var(&self) -> bool {
        match self {
            Expr::Lit(_) => false,
            Expr::Var { .. } => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.has_var(),
            Expr::Binary(_, a, b) => a.has_var() || b.has_var(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Lit(f64),
    Load(usize),
    Neg,
    Bin(BinOp),
    Pow(f64),
    Call(Func),
}

const STACK: usize = 32;

/// Postfix form of an [`Expr`] for repeated evaluation in hot loops.
///
/// Performs the same floating-point operations in the same order as
/// [`Expr::eval`], so results are bitwise identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    arity: usize,
    depth: usize,
    tree: Expr,
}

impl Program {
    pub fn new(expr: &Expr) -> Self {
        fn emit(e: &Expr, ops: &mut Vec<Op>, height: usize, depth: &mut usize) {
            *depth = (*depth).max(height + 1);
            match e {
                Expr::Lit(v) => ops.push(Op::Lit(*v)),
                Expr::Var { slot, .. } => ops.push(Op::Load(*slot)),
                Expr::Neg(a) => {
                    emit(a, ops, height, depth);
                    ops.push(Op::Neg);
                }
                Expr::Pow(a, p) => {
                    emit(a, ops, height, depth);
                    ops.push(Op::Pow(*p));
                }
                Expr::Call(f, a) => {
                    emit(a, ops, height, depth);
                    ops.push(Op::Call(*f));
                }
                Expr::Binary(op, a, b) => {
                    emit(a, ops, height, depth);
                    emit(b, ops, height + 1, depth);
                    ops.push(Op::Bin(*op));
                }
            }
        }
        let mut ops = Vec::new();
        let mut depth = 0;
        emit(expr, &mut ops, 0, &mut depth);
        Self {
            ops,
            arity: expr.min_arity(),
            depth,
            tree: expr.clone(),
        }
    }

    pub fn expr(&self) -> &Expr {
        &self.tree
    }

    pub fn min_arity(&self) -> usize {
        self.arity
    }

    pub fn eval(&self, binding: &[f64]) -> Result<f64, EvalError> {
        check_arity(self.arity, binding.len())?;
        match self.depth {
            0..=4 => self.run::<4>(binding),
            5..=STACK => self.run::<STACK>(binding),
            _ => self.tree.eval_unchecked(binding),
        }
    }

    fn run<const N: usize>(&self, binding: &[f64]) -> Result<f64, EvalError> {
        let mut stack = [0.0f64; N];
        let mut top = 0usize;
        for op in &self.ops {
            match *op {
                Op::Lit(v) => {
                    stack[top] = v;
                    top += 1;
                }
                Op::Load(slot) => {
                    stack[top] = binding[slot];
                    top += 1;
                }
                Op::Neg => stack[top - 1] = -stack[top - 1],
                Op::Pow(p) => stack[top - 1] = pow_value(stack[top - 1], p)?,
                Op::Call(f) => stack[top - 1] = finite(f.apply(stack[top - 1]).0, f.name())?,
                Op::Bin(op) => {
                    top -= 1;
                    let (u, v) = (stack[top - 1], stack[top]);
                    stack[top - 1] = match op {
                        BinOp::Add => u + v,
                        BinOp::Sub => u - v,
                        BinOp::Mul => u * v,
                        BinOp::Div => {
                            if v == 0.0 {
                                return Err(EvalError::DivisionByZero);
                            }
                            finite(u / v, "division")?
                        }
                    };
                }
            }
        }
        Ok(stack[0])
    }
}

/// Fully parenthesised rendering; `parse(render(e))` evaluates identically to `e`.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) if v.is_sign_negative() => write!(f, "(-{:?})", -v),
            Expr::Lit(v) => write!(f, "{v:?}"),
            Expr::Var { var, .. } => write!(f, "{var}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Pow(a, p) if p.is_sign_negative() => write!(f, "({a}^(-{:?}))", -p),
            Expr::Pow(a, p) => write!(f, "({a}^{p:?})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
