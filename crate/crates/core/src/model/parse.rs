use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::packet::{Field, IfaceId};

use super::{
    Attr, BinOp, CmpOp, Cond, Expr, Interchangeable, Interface, KeyAtom, NfModel, ObjKind, OpKind,
    StateDecl, StateOp, Stmt,
};

const DEFAULT_SKETCH_ROWS: usize = 5;

#[derive(Debug, Clone, Copy)]
struct Line<'a> {
    no: usize,
    indent: usize,
    text: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(u64),
    Sym(&'static str),
}

const SYMBOLS: [&str; 18] = [
    "==", "!=", "<=", ">=", "<", ">", "=", "+", "-", "*", "(", ")", "[", "]", "{", "}", ":", ",",
];

fn parse_number(s: &str) -> Option<u64> {
    let s = s.replace('_', "");
    if let Some(hex) = s.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).ok()
    } else {
        s.parse().ok()
    }
}

fn tokenize(s: &str) -> std::result::Result<Vec<Tok>, String> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.') {
                i += 1;
            }
            out.push(Tok::Ident(s[start..i].to_string()));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let text = &s[start..i];
            out.push(Tok::Num(
                parse_number(text).ok_or_else(|| format!("bad number `{text}`"))?,
            ));
            continue;
        }
        for sym in SYMBOLS {
            if s[i..].starts_with(sym) {
                out.push(Tok::Sym(sym));
                i += sym.len();
                continue 'outer;
            }
        }
        return Err(format!("unexpected character `{c}`"));
    }
    Ok(out)
}

struct Cursor<'t> {
    toks: &'t [Tok],
    pos: usize,
}

type PResult<T> = std::result::Result<T, String>;

impl<'t> Cursor<'t> {
    fn new(toks: &'t [Tok]) -> Self {
        Cursor { toks, pos: 0 }
    }

    fn peek(&self) -> Option<&'t Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<&'t Tok> {
        let t = self.toks.get(self.pos);
        self.pos += 1;
        t
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, sym: &str) -> PResult<()> {
        if self.eat(sym) {
            Ok(())
        } else {
            Err(format!("expected `{sym}`"))
        }
    }

    fn ident(&mut self) -> PResult<&'t str> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => Err("expected a name".into()),
        }
    }

    fn number(&mut self) -> PResult<u64> {
        match self.next() {
            Some(Tok::Num(n)) => Ok(*n),
            _ => Err("expected a number".into()),
        }
    }

    fn finish(&self) -> PResult<()> {
        if self.at_end() {
            Ok(())
        } else {
            Err(format!("trailing input {:?}", &self.toks[self.pos..]))
        }
    }
}

struct Parser {
    model: NfModel,
    block_ids: HashMap<String, usize>,
    errors: Vec<String>,
}

/// Parses and validates a model; all violations found are reported together.
pub fn parse_model(text: &str) -> Result<NfModel> {
    let mut errors = Vec::new();
    let mut lines = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let no = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim_end();
        if body.trim().is_empty() {
            continue;
        }
        let lead = &body[..body.len() - body.trim_start().len()];
        if lead.contains('\t') {
            errors.push(format!("line {no}: tabs are not allowed in indentation"));
            continue;
        }
        lines.push(Line {
            no,
            indent: lead.len(),
            text: body.trim(),
        });
    }
    match lines.first() {
        Some(l) if l.indent == 0 && l.text.split_whitespace().eq(["nf-model", "1"]) => {}
        Some(l) if l.text.starts_with("nf-model") => {
            return Err(Error::Schema(vec![format!(
                "line {}: unsupported model version `{}`",
                l.no, l.text
            )]))
        }
        _ => return Err(Error::Schema(vec!["missing `nf-model 1` header".into()])),
    }

    let mut p = Parser {
        model: NfModel {
            name: String::new(),
            interfaces: Vec::new(),
            objects: Vec::new(),
            vars: Vec::new(),
            blocks: Vec::new(),
            pipelines: BTreeMap::new(),
            abstractions: Vec::new(),
            interchangeable: Vec::new(),
        },
        block_ids: HashMap::new(),
        errors,
    };

    // Top-level items and the extent of their indented bodies.
    let mut items = Vec::new();
    let mut i = 1;
    while i < lines.len() {
        let head = lines[i];
        if head.indent != 0 {
            p.errors
                .push(format!("line {}: unexpected indentation", head.no));
            i += 1;
            continue;
        }
        let start = i + 1;
        let mut end = start;
        while end < lines.len() && lines[end].indent > 0 {
            end += 1;
        }
        items.push((head, &lines[start..end]));
        i = end;
    }

    // First pass: declarations that later lines refer to by name.
    let mut expire_names = Vec::new();
    for (head, body) in &items {
        let words: Vec<&str> = head.text.split_whitespace().collect();
        let r = match words[0] {
            "interface" => p.interface(&words),
            "state" => p.state(&words).map(|e| {
                if let Some(name) = e {
                    expire_names.push((p.model.objects.len() - 1, head.no, name));
                }
            }),
            "block" => match words.get(1) {
                Some(name) if words.len() == 2 => {
                    if p.block_ids.contains_key(*name) {
                        Err(format!("block `{name}` defined twice"))
                    } else {
                        p.block_ids.insert(name.to_string(), p.model.blocks.len());
                        p.model.blocks.push((name.to_string(), Vec::new()));
                        Ok(())
                    }
                }
                _ => Err("expected `block NAME`".into()),
            },
            _ => Ok(()),
        };
        if let Err(e) = r {
            p.errors.push(format!("line {}: {e}", head.no));
        }
        if !matches!(words[0], "block" | "pipeline") && !body.is_empty() {
            p.errors
                .push(format!("line {}: unexpected indented lines", body[0].no));
        }
    }
    for (obj, no, name) in expire_names {
        match p.model.object(&name) {
            Some(c) if p.model.objects[c].kind == ObjKind::Dchain => {
                p.model.objects[obj].expire = Some(c)
            }
            _ => p
                .errors
                .push(format!("line {no}: `expire={name}` must name a dchain")),
        }
    }

    // Second pass: everything else.
    for (head, body) in &items {
        let words: Vec<&str> = head.text.split_whitespace().collect();
        let r = match words[0] {
            "interface" | "state" => Ok(()),
            "name" if words.len() == 2 => {
                p.model.name = words[1].to_string();
                Ok(())
            }
            "init" => p.init(head.text),
            "abstraction" => p.abstraction(&words),
            "interchangeable" => p.interchangeable(head.text),
            "block" => {
                if let (Some(&id), false) = (words.get(1).and_then(|n| p.block_ids.get(*n)), body.is_empty()) {
                    let stmts = p.body(body);
                    p.model.blocks[id].1 = stmts;
                    Ok(())
                } else {
                    Err("block without body".into())
                }
            }
            "pipeline" => match words.get(1).map(|n| p.model.iface(n)) {
                Some(Some(id)) if words.len() == 2 => {
                    if body.is_empty() {
                        Err("pipeline without body".into())
                    } else if p.model.pipelines.contains_key(&id) {
                        Err(format!("second pipeline for interface `{}`", words[1]))
                    } else {
                        let stmts = p.body(body);
                        p.model.pipelines.insert(id, stmts);
                        Ok(())
                    }
                }
                _ => Err("expected `pipeline IFACE` naming a declared interface".into()),
            },
            "nf-model" => Err("repeated header".into()),
            other => Err(format!("unknown declaration `{other}`")),
        };
        if let Err(e) = r {
            p.errors.push(format!("line {}: {e}", head.no));
        }
    }

    let mut errors = p.errors;
    super::validate::validate(&p.model, &mut errors);
    if errors.is_empty() {
        Ok(p.model)
    } else {
        Err(Error::Schema(errors))
    }
}

impl Parser {
    fn interface(&mut self, words: &[&str]) -> PResult<()> {
        let [_, name, id] = words else {
            return Err("expected `interface NAME ID`".into());
        };
        let id: IfaceId = id.parse().map_err(|_| format!("bad interface id `{id}`"))?;
        if self.model.iface(name).is_some() || self.model.interfaces.iter().any(|i| i.id == id) {
            return Err(format!("interface `{name}` ({id}) declared twice"));
        }
        self.model.interfaces.push(Interface {
            name: name.to_string(),
            id,
        });
        Ok(())
    }

    /// Returns the unresolved `expire=` target, if any.
    fn state(&mut self, words: &[&str]) -> PResult<Option<String>> {
        if words.len() < 3 {
            return Err("expected `state NAME KIND OPTIONS...`".into());
        }
        let name = words[1];
        if self.model.object(name).is_some() {
            return Err(format!("state object `{name}` declared twice"));
        }
        let kind = match words[2] {
            "map" => ObjKind::Map,
            "vector" => ObjKind::Vector,
            "dchain" => ObjKind::Dchain,
            "sketch" => ObjKind::Sketch,
            other => return Err(format!("unknown state kind `{other}`")),
        };
        let mut decl = StateDecl {
            name: name.to_string(),
            kind,
            capacity: 0,
            key_width: None,
            expire: None,
            expiry: u64::MAX,
            rows: DEFAULT_SKETCH_ROWS,
            read_only: false,
            init: Vec::new(),
        };
        let mut expire = None;
        let mut saw_capacity = false;
        for w in &words[3..] {
            if *w == "read-only" {
                decl.read_only = true;
                continue;
            }
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| format!("bad state option `{w}`"))?;
            let num = || parse_number(v).ok_or_else(|| format!("bad value in `{w}`"));
            match (k, kind) {
                ("capacity", _) => {
                    decl.capacity = num()? as usize;
                    saw_capacity = true;
                }
                ("key-width", ObjKind::Map | ObjKind::Sketch) => decl.key_width = Some(num()? as u32),
                ("expire", ObjKind::Map) => expire = Some(v.to_string()),
                ("expiry", ObjKind::Dchain) => decl.expiry = num()?,
                ("rows", ObjKind::Sketch) => decl.rows = num()? as usize,
                _ => return Err(format!("option `{k}` does not apply to a {}", kind.name())),
            }
        }
        if !saw_capacity {
            return Err(format!("state object `{name}` needs a capacity"));
        }
        self.model.objects.push(decl);
        Ok(expire)
    }

    /// `init OBJ v1 v2 ... = VALUE`
    fn init(&mut self, text: &str) -> PResult<()> {
        let toks = tokenize(text)?;
        let mut c = Cursor::new(&toks[1..]);
        let name = c.ident()?;
        let obj = self
            .model
            .object(name)
            .ok_or_else(|| format!("unknown state object `{name}`"))?;
        let mut key = Vec::new();
        while !c.eat("=") {
            key.push(c.number()?);
        }
        let value = c.number()?;
        c.finish()?;
        let decl = &mut self.model.objects[obj];
        match decl.kind {
            ObjKind::Map if !key.is_empty() => {}
            ObjKind::Vector if key.len() == 1 => {}
            _ => return Err(format!("bad initial entry for {} `{name}`", decl.kind.name())),
        }
        decl.init.push((key, value));
        Ok(())
    }

    fn abstraction(&mut self, words: &[&str]) -> PResult<()> {
        let [_, iface, field] = words else {
            return Err("expected `abstraction IFACE FIELD`".into());
        };
        let id = self
            .model
            .iface(iface)
            .ok_or_else(|| format!("unknown interface `{iface}`"))?;
        let field: Field = field.parse().map_err(|e: Error| e.to_string())?;
        self.model.abstractions.push((id, field));
        Ok(())
    }

    /// `interchangeable OBJ IFACE(fields...) IFACE(fields...)`
    fn interchangeable(&mut self, text: &str) -> PResult<()> {
        let toks = tokenize(text)?;
        let mut c = Cursor::new(&toks[1..]);
        let name = c.ident()?;
        let obj = self
            .model
            .object(name)
            .ok_or_else(|| format!("unknown state object `{name}`"))?;
        let side = |c: &mut Cursor| -> PResult<(IfaceId, Vec<Field>)> {
            let iface = c.ident()?;
            let id = self
                .model
                .iface(iface)
                .ok_or_else(|| format!("unknown interface `{iface}`"))?;
            c.expect("(")?;
            let mut fields = Vec::new();
            while !c.eat(")") {
                fields.push(c.ident()?.parse().map_err(|e: Error| e.to_string())?);
            }
            Ok((id, fields))
        };
        let left = side(&mut c)?;
        let right = side(&mut c)?;
        c.finish()?;
        if left.1.len() != right.1.len() || left.1.is_empty() {
            return Err("interchangeable sides need the same, nonzero number of fields".into());
        }
        self.model.interchangeable.push(Interchangeable { obj, left, right });
        Ok(())
    }

    fn body(&mut self, lines: &[Line]) -> Vec<Stmt> {
        let mut pos = 0;
        let indent = lines[0].indent;
        let out = self.stmts(lines, &mut pos, indent);
        if pos < lines.len() {
            self.errors
                .push(format!("line {}: unexpected indentation", lines[pos].no));
        }
        out
    }

    fn stmts(&mut self, lines: &[Line], pos: &mut usize, indent: usize) -> Vec<Stmt> {
        let mut out = Vec::new();
        while *pos < lines.len() {
            let line = lines[*pos];
            if line.indent < indent {
                break;
            }
            if line.indent > indent {
                self.errors
                    .push(format!("line {}: unexpected indentation", line.no));
                *pos += 1;
                continue;
            }
            *pos += 1;
            if line.text == "else" {
                self.errors
                    .push(format!("line {}: `else` without `if`", line.no));
                continue;
            }
            if let Some(rest) = line.text.strip_prefix("if ") {
                let cond = tokenize(rest).and_then(|t| {
                    let mut c = Cursor::new(&t);
                    let cond = self.cond(&mut c)?;
                    c.finish()?;
                    Ok(cond)
                });
                let then = self.nested(lines, pos, indent, line.no);
                let mut otherwise = Vec::new();
                if *pos < lines.len() && lines[*pos].indent == indent && lines[*pos].text == "else" {
                    let else_no = lines[*pos].no;
                    *pos += 1;
                    otherwise = self.nested(lines, pos, indent, else_no);
                }
                match cond {
                    Ok(cond) => out.push(Stmt::If {
                        cond,
                        then,
                        otherwise,
                    }),
                    Err(e) => self.errors.push(format!("line {}: {e}", line.no)),
                }
                continue;
            }
            match self.simple(line.text) {
                Ok(s) => out.push(s),
                Err(e) => self.errors.push(format!("line {}: {e}", line.no)),
            }
        }
        out
    }

    fn nested(&mut self, lines: &[Line], pos: &mut usize, indent: usize, no: usize) -> Vec<Stmt> {
        match lines.get(*pos) {
            Some(l) if l.indent > indent => {
                let inner = l.indent;
                self.stmts(lines, pos, inner)
            }
            _ => {
                self.errors.push(format!("line {no}: empty branch"));
                Vec::new()
            }
        }
    }

    fn var_slot(&mut self, name: &str) -> usize {
        if let Some(i) = self.model.vars.iter().position(|v| v == name) {
            return i;
        }
        self.model.vars.push(name.to_string());
        self.model.vars.len() - 1
    }

    fn object_of(&self, name: &str, op: OpKind) -> PResult<usize> {
        let obj = self
            .model
            .object(name)
            .ok_or_else(|| format!("unknown state object `{name}`"))?;
        let kind = self.model.objects[obj].kind;
        if kind != op.object_kind() {
            return Err(format!("`{}` applied to {} `{name}`", op.name(), kind.name()));
        }
        Ok(obj)
    }

    fn simple(&mut self, text: &str) -> PResult<Stmt> {
        let toks = tokenize(text)?;
        let mut c = Cursor::new(&toks);
        let mut var = None;
        if matches!(toks.get(1), Some(Tok::Sym("="))) {
            let name = c.ident()?;
            if name.contains('.') {
                return Err(format!("cannot bind to `{name}`"));
            }
            c.expect("=")?;
            var = Some(self.var_slot(name));
        }
        let word = c.ident()?;
        let op = match word {
            "map_get" => OpKind::MapGet,
            "map_put" => OpKind::MapPut,
            "vector_get" => OpKind::VectorGet,
            "vector_put" => OpKind::VectorPut,
            "dchain_allocate" => OpKind::DchainAllocate,
            "dchain_rejuvenate" => OpKind::DchainRejuvenate,
            "sketch_query" => OpKind::SketchQuery,
            "sketch_touch" => OpKind::SketchTouch,
            _ => {
                if var.is_some() {
                    return Err(format!("`{word}` produces no result"));
                }
                let stmt = match word {
                    "rewrite" => {
                        let field: Field = c.ident()?.parse().map_err(|e: Error| e.to_string())?;
                        c.expect("=")?;
                        let value = self.expr(&mut c)?;
                        Stmt::Rewrite { field, value }
                    }
                    "forward" => {
                        let name = c.ident()?;
                        Stmt::Forward(
                            self.model
                                .iface(name)
                                .ok_or_else(|| format!("unknown interface `{name}`"))?,
                        )
                    }
                    "drop" => Stmt::Drop,
                    "goto" => {
                        let name = c.ident()?;
                        Stmt::Goto(
                            *self
                                .block_ids
                                .get(name)
                                .ok_or_else(|| format!("unknown block `{name}`"))?,
                        )
                    }
                    other => return Err(format!("unknown statement `{other}`")),
                };
                c.finish()?;
                return Ok(stmt);
            }
        };
        let obj = self.object_of(c.ident()?, op)?;
        let mut st = StateOp {
            kind: op,
            obj,
            var,
            key: Vec::new(),
            index: None,
            value: None,
        };
        match op {
            OpKind::MapGet | OpKind::MapPut | OpKind::SketchQuery | OpKind::SketchTouch => {
                st.key = self.key(&mut c)?;
            }
            OpKind::VectorGet | OpKind::VectorPut | OpKind::DchainRejuvenate => {
                c.expect("[")?;
                st.index = Some(self.expr(&mut c)?);
                c.expect("]")?;
            }
            OpKind::DchainAllocate => {}
        }
        if matches!(op, OpKind::MapPut | OpKind::VectorPut) {
            c.expect("=")?;
            st.value = Some(self.expr(&mut c)?);
        }
        c.finish()?;
        let needs_var = matches!(
            op,
            OpKind::MapGet | OpKind::VectorGet | OpKind::DchainAllocate | OpKind::SketchQuery
        );
        if needs_var && st.var.is_none() {
            return Err(format!("result of `{}` must be bound to a name", op.name()));
        }
        if op.attrs().is_empty() && st.var.is_some() {
            return Err(format!("`{}` produces no result", op.name()));
        }
        Ok(Stmt::Op(st))
    }

    fn key(&mut self, c: &mut Cursor) -> PResult<Vec<KeyAtom>> {
        c.expect("(")?;
        let mut atoms = Vec::new();
        while !c.eat(")") {
            let atom = match c.peek() {
                Some(Tok::Sym("{")) => {
                    c.next();
                    let expr = self.expr(c)?;
                    c.expect("}")?;
                    c.expect(":")?;
                    KeyAtom {
                        expr,
                        width: width(c.number()?)?,
                    }
                }
                Some(Tok::Num(_)) => {
                    let v = c.number()?;
                    c.expect(":")?;
                    KeyAtom {
                        expr: Expr::Const(v),
                        width: width(c.number()?)?,
                    }
                }
                Some(Tok::Ident(_)) => {
                    let expr = self.primary(c)?;
                    let width = match expr {
                        Expr::Field(f) => f.width(),
                        Expr::Slice { len, .. } => len,
                        _ => {
                            c.expect(":")?;
                            width(c.number()?)?
                        }
                    };
                    KeyAtom { expr, width }
                }
                _ => return Err("expected a key atom or `)`".into()),
            };
            atoms.push(atom);
        }
        if atoms.is_empty() {
            return Err("empty key".into());
        }
        Ok(atoms)
    }

    fn cond(&mut self, c: &mut Cursor) -> PResult<Cond> {
        if matches!(c.peek(), Some(Tok::Ident(w)) if w == "not") {
            c.next();
            return Ok(Cond::Not(Box::new(self.cond(c)?)));
        }
        let lhs = self.expr(c)?;
        let op = match c.peek() {
            Some(Tok::Sym("==")) => CmpOp::Eq,
            Some(Tok::Sym("!=")) => CmpOp::Ne,
            Some(Tok::Sym("<")) => CmpOp::Lt,
            Some(Tok::Sym("<=")) => CmpOp::Le,
            Some(Tok::Sym(">")) => CmpOp::Gt,
            Some(Tok::Sym(">=")) => CmpOp::Ge,
            _ => return Ok(Cond::Truth(lhs)),
        };
        c.next();
        let rhs = self.expr(c)?;
        Ok(Cond::Cmp(op, lhs, rhs))
    }

    fn expr(&mut self, c: &mut Cursor) -> PResult<Expr> {
        let mut lhs = self.term(c)?;
        loop {
            let op = if c.eat("+") {
                BinOp::Add
            } else if c.eat("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term(c)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self, c: &mut Cursor) -> PResult<Expr> {
        let mut lhs = self.primary(c)?;
        while c.eat("*") {
            let rhs = self.primary(c)?;
            lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn primary(&mut self, c: &mut Cursor) -> PResult<Expr> {
        match c.next() {
            Some(Tok::Num(n)) => Ok(Expr::Const(*n)),
            Some(Tok::Sym("(")) => {
                let e = self.expr(c)?;
                c.expect(")")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "time" => Ok(Expr::Time),
                "size" => Ok(Expr::Size),
                "min" | "max" => {
                    let op = if name == "min" { BinOp::Min } else { BinOp::Max };
                    c.expect("(")?;
                    let a = self.expr(c)?;
                    c.expect(",")?;
                    let b = self.expr(c)?;
                    c.expect(")")?;
                    Ok(Expr::Bin(op, Box::new(a), Box::new(b)))
                }
                _ => {
                    if let Some((var, attr)) = name.split_once('.') {
                        let attr = match attr {
                            "found" => Attr::Found,
                            "value" => Attr::Value,
                            "ok" => Attr::Ok,
                            "index" => Attr::Index,
                            other => return Err(format!("unknown result attribute `{other}`")),
                        };
                        return Ok(Expr::Res {
                            var: self.var_slot(var),
                            attr,
                        });
                    }
                    let field: Field = name
                        .parse()
                        .map_err(|_| format!("unknown name `{name}`"))?;
                    if c.eat("[") {
                        let off = c.number()? as u32;
                        c.expect(":")?;
                        let len = c.number()? as u32;
                        c.expect("]")?;
                        if len == 0 || off + len > field.width() {
                            return Err(format!("slice [{off}:{len}] out of range for `{field}`"));
                        }
                        return Ok(Expr::Slice { field, off, len });
                    }
                    Ok(Expr::Field(field))
                }
            },
            other => Err(format!("expected an expression, found {other:?}")),
        }
    }
}

fn width(n: u64) -> PResult<u32> {
    if (1..=64).contains(&n) {
        Ok(n as u32)
    } else {
        Err(format!("atom width {n} outside 1..=64"))
    }
}
