use super::{BinOp, ExprError, Func, Node};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Token, usize)>, ExprError> {
        let mut lexer = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lexer.next()?;
            let end = tok == Token::End;
            out.push((tok, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn peek_char(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn next(&mut self) -> Result<(Token, usize), ExprError> {
        while let Some(c) = self.peek_char() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        let start = self.pos;
        let Some(c) = self.peek_char() else {
            return Ok((Token::End, start));
        };
        let tok = match c {
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
            c if c.is_ascii_digit() || c == '.' => self.number(start)?,
            c if c.is_ascii_alphabetic() || c == '_' => {
                while matches!(self.peek_char(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                    self.pos += 1;
                }
                Token::Ident(self.src[start..self.pos].to_string())
            }
            other => {
                return Err(ExprError::Syntax {
                    pos: start,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        Ok((tok, start))
    }

    fn number(&mut self, start: usize) -> Result<Token, ExprError> {
        let bytes = self.src.as_bytes();
        let digits = |pos: &mut usize| {
            let from = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            *pos - from
        };
        let mut pos = self.pos;
        let mut count = digits(&mut pos);
        if pos < bytes.len() && bytes[pos] == b'.' {
            pos += 1;
            count += digits(&mut pos);
        }
        if count == 0 {
            return Err(ExprError::Syntax {
                pos: start,
                message: "malformed number".into(),
            });
        }
        if pos < bytes.len() && (bytes[pos] == b'e' || bytes[pos] == b'E') {
            let mut exp = pos + 1;
            if exp < bytes.len() && (bytes[exp] == b'+' || bytes[exp] == b'-') {
                exp += 1;
            }
            if digits(&mut exp) > 0 {
                pos = exp;
            }
        }
        self.pos = pos;
        let text = &self.src[start..pos];
        text.parse::<f64>()
            .map(Token::Number)
            .map_err(|_| ExprError::Syntax {
                pos: start,
                message: format!("malformed number `{text}`"),
            })
    }
}

// Binding powers (left, right). Unary minus binds its operand at PREFIX_BP.
const PREFIX_BP: u8 = 5;

fn infix_binding(op: char) -> Option<(BinOp, u8, u8)> {
    Some(match op {
        '+' => (BinOp::Add, 1, 2),
        '-' => (BinOp::Sub, 1, 2),
        '*' => (BinOp::Mul, 3, 4),
        '/' => (BinOp::Div, 3, 4),
        '^' => (BinOp::Pow, 8, 7),
        _ => return None,
    })
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    cursor: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.cursor].0
    }

    fn peek_at(&self, offset: usize) -> &Token {
        let i = (self.cursor + offset).min(self.tokens.len() - 1);
        &self.tokens[i].0
    }

    fn pos(&self) -> usize {
        self.tokens[self.cursor].1
    }

    fn bump(&mut self) -> (Token, usize) {
        let t = self.tokens[self.cursor].clone();
        if self.cursor + 1 < self.tokens.len() {
            self.cursor += 1;
        }
        t
    }

    fn expr(&mut self, min_bp: u8) -> Result<Node, ExprError> {
        let mut lhs = self.prefix()?;
        loop {
            let op = match self.peek() {
                Token::Op(c) => *c,
                Token::End | Token::RParen => break,
                _ => {
                    return Err(ExprError::Syntax {
                        pos: self.pos(),
                        message: "expected an operator".into(),
                    })
                }
            };
            let (bin, l_bp, r_bp) = infix_binding(op).expect("lexer only emits known operators");
            if l_bp < min_bp {
                break;
            }
            self.bump();
            let rhs = self.expr(r_bp)?;
            lhs = Node::Binary(bin, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Node, ExprError> {
        let (tok, at) = self.bump();
        match tok {
            Token::Number(v) => Ok(Node::Num(v)),
            Token::Op('-') => {
                // A minus directly on a literal is a negative literal, unless
                // the literal is the base of a power.
                if let (Token::Number(v), next) = (self.peek().clone(), self.peek_at(1)) {
                    if *next != Token::Op('^') {
                        self.bump();
                        return Ok(Node::Num(-v));
                    }
                }
                Ok(Node::Neg(Box::new(self.expr(PREFIX_BP)?)))
            }
            Token::LParen => {
                let inner = self.expr(0)?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Token::Ident(name) => self.identifier(name, at),
            Token::End => Err(ExprError::Syntax {
                pos: at,
                message: "unexpected end of input".into(),
            }),
            other => Err(ExprError::Syntax {
                pos: at,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.bump() {
            (Token::RParen, _) => Ok(()),
            (_, at) => Err(ExprError::Syntax {
                pos: at,
                message: "expected `)`".into(),
            }),
        }
    }

    fn identifier(&mut self, name: String, at: usize) -> Result<Node, ExprError> {
        if *self.peek() == Token::LParen {
            let func = Func::from_name(&name)
                .ok_or(ExprError::UnknownIdentifier { name, pos: at })?;
            self.bump();
            let arg = self.expr(0)?;
            self.expect_rparen()?;
            return Ok(Node::Call(func, Box::new(arg)));
        }
        if name == "t" {
            return Ok(Node::Time);
        }
        if let Some(index) = name
            .strip_prefix('x')
            .filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse::<usize>().ok())
        {
            if index == 0 || index > self.dim {
                return Err(ExprError::VariableOutOfRange {
                    index,
                    dim: self.dim,
                });
            }
            return Ok(Node::Var(index - 1));
        }
        Err(ExprError::UnknownIdentifier { name, pos: at })
    }
}

pub(super) fn parse(source: &str, dim: usize) -> Result<Node, ExprError> {
    let tokens = Lexer::tokens(source)?;
    let mut parser = Parser {
        tokens,
        cursor: 0,
        dim,
    };
    let node = parser.expr(0)?;
    match parser.peek() {
        Token::End => Ok(node),
        _ => Err(ExprError::Syntax {
            pos: parser.pos(),
            message: "unexpected trailing input".into(),
        }),
    }
}
