use std::collections::HashMap;

use super::{Cond, Expr, KeyAtom, NfModel, ObjKind, OpKind, Stmt};

/// Schema checks that need the whole model.
pub(super) fn validate(model: &NfModel, errors: &mut Vec<String>) {
    if model.interfaces.is_empty() {
        errors.push("model declares no interface".into());
    }
    for o in &model.objects {
        if o.capacity == 0 {
            errors.push(format!("state object `{}` has capacity 0", o.name));
        }
        if o.kind == ObjKind::Sketch && o.rows == 0 {
            errors.push(format!("sketch `{}` has no rows", o.name));
        }
        if o.kind == ObjKind::Dchain && o.expiry == 0 {
            errors.push(format!("dchain `{}` has expiry 0", o.name));
        }
        if o.kind == ObjKind::Vector {
            for (idx, _) in &o.init {
                if idx[0] as usize >= o.capacity.max(1) {
                    errors.push(format!("initial index {} outside vector `{}`", idx[0], o.name));
                }
            }
        }
    }
    for i in &model.interfaces {
        if !model.pipelines.contains_key(&i.id) {
            errors.push(format!("interface `{}` has no pipeline", i.name));
        }
    }

    let mut v = Validator {
        model,
        errors,
        widths: HashMap::new(),
        key_lens: HashMap::new(),
        stack: Vec::new(),
    };
    for (&iface, stmts) in &model.pipelines {
        let ctx = format!("pipeline `{}`", model.iface_name(iface));
        let mut env = vec![None; model.vars.len()];
        if !v.stmts(stmts, &mut env, &ctx) {
            v.errors.push(format!("{ctx}: unterminated path"));
        }
    }
    for (obj, keylen) in v.key_lens {
        for (key, _) in &model.objects[obj].init {
            if model.objects[obj].kind == ObjKind::Map && key.len() != keylen {
                v.errors.push(format!(
                    "initial entry of `{}` has {} key components, accesses use {keylen}",
                    model.objects[obj].name,
                    key.len()
                ));
            }
        }
    }
}

struct Validator<'m, 'e> {
    model: &'m NfModel,
    errors: &'e mut Vec<String>,
    widths: HashMap<usize, u32>,
    key_lens: HashMap<usize, usize>,
    stack: Vec<usize>,
}

type Env = Vec<Option<OpKind>>;

impl Validator<'_, '_> {
    /// Returns whether every path through `stmts` ends in a terminal action.
    fn stmts(&mut self, stmts: &[Stmt], env: &mut Env, ctx: &str) -> bool {
        let mut done = false;
        for s in stmts {
            if done {
                self.errors
                    .push(format!("{ctx}: unreachable statement after a terminal action"));
                break;
            }
            match s {
                Stmt::Op(op) => {
                    let decl = &self.model.objects[op.obj];
                    if decl.read_only && op.kind.is_write() {
                        self.errors.push(format!(
                            "{ctx}: `{}` writes read-only object `{}`",
                            op.kind.name(),
                            decl.name
                        ));
                    }
                    if matches!(op.kind, OpKind::MapGet | OpKind::MapPut | OpKind::SketchQuery | OpKind::SketchTouch) {
                        self.key(op.obj, &op.key, env, ctx);
                    }
                    for e in op.index.iter().chain(op.value.iter()) {
                        self.expr(e, env, ctx);
                    }
                    if let Some(var) = op.var {
                        env[var] = Some(op.kind);
                    }
                }
                Stmt::Rewrite { value, .. } => self.expr(value, env, ctx),
                Stmt::If {
                    cond,
                    then,
                    otherwise,
                } => {
                    self.cond(cond, env, ctx);
                    let mut a = env.clone();
                    let mut b = env.clone();
                    let ta = self.stmts(then, &mut a, ctx);
                    let tb = self.stmts(otherwise, &mut b, ctx);
                    done = ta && tb;
                    // names bound on every path that falls through stay usable
                    for (slot, e) in env.iter_mut().enumerate() {
                        *e = match (ta, tb) {
                            (true, false) => b[slot],
                            (false, true) => a[slot],
                            _ => if a[slot] == b[slot] { a[slot] } else { None },
                        };
                    }
                }
                Stmt::Goto(block) => {
                    let (name, body) = &self.model.blocks[*block];
                    if self.stack.contains(block) {
                        self.errors
                            .push(format!("{ctx}: loop detected through block `{name}`"));
                    } else {
                        self.stack.push(*block);
                        let inner = format!("{ctx} via block `{name}`");
                        let mut e = env.clone();
                        if !self.stmts(body, &mut e, &inner) {
                            self.errors.push(format!("{inner}: unterminated path"));
                        }
                        self.stack.pop();
                    }
                    done = true;
                }
                Stmt::Forward(_) | Stmt::Drop => done = true,
            }
        }
        done
    }

    fn key(&mut self, obj: usize, key: &[KeyAtom], env: &Env, ctx: &str) {
        let decl = &self.model.objects[obj];
        let total: u32 = key.iter().map(|a| a.width).sum();
        for a in key {
            self.expr(&a.expr, env, ctx);
        }
        let expected = decl.key_width.or_else(|| self.widths.get(&obj).copied());
        match expected {
            Some(w) if w != total => self.errors.push(format!(
                "{ctx}: key of `{}` is {total} bits wide, expected {w}",
                decl.name
            )),
            _ => {
                self.widths.insert(obj, total);
            }
        }
        match self.key_lens.get(&obj) {
            Some(&n) if n != key.len() => self.errors.push(format!(
                "{ctx}: key of `{}` has {} components, other accesses use {n}",
                decl.name,
                key.len()
            )),
            _ => {
                self.key_lens.insert(obj, key.len());
            }
        }
    }

    fn cond(&mut self, c: &Cond, env: &Env, ctx: &str) {
        match c {
            Cond::Cmp(_, a, b) => {
                self.expr(a, env, ctx);
                self.expr(b, env, ctx);
            }
            Cond::Truth(e) => self.expr(e, env, ctx),
            Cond::Not(c) => self.cond(c, env, ctx),
        }
    }

    fn expr(&mut self, e: &Expr, env: &Env, ctx: &str) {
        match e {
            Expr::Res { var, attr } => {
                let name = &self.model.vars[*var];
                match env[*var] {
                    None => self.errors.push(format!(
                        "{ctx}: `{name}` is not bound on every path reaching its use"
                    )),
                    Some(kind) if !kind.attrs().contains(attr) => self.errors.push(format!(
                        "{ctx}: result of `{}` has no attribute `{}`",
                        kind.name(),
                        attr.name()
                    )),
                    Some(_) => {}
                }
            }
            Expr::Bin(_, a, b) => {
                self.expr(a, env, ctx);
                self.expr(b, env, ctx);
            }
            Expr::Field(_) | Expr::Slice { .. } | Expr::Const(_) | Expr::Time | Expr::Size => {}
        }
    }
}
